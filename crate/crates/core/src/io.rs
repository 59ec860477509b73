//! MOTChallenge text files, embedding sidecars and the JSON run configuration.
//!
//! MOT line: `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.
//! Boxes are converted to centroid form on read and back on write.
//! Numbers are written with at most 6 decimals, trailing zeros trimmed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::association::TrackerConfig;
use crate::error::{Error, Result};
use crate::forecaster::{ForecasterConfig, TrainingConfig};
use crate::geometry::{normalized, BoundingBox, FrameObservations};
use crate::motion::KalmanConfig;
use crate::simdata::SceneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotRecord {
    pub frame: u32,
    /// −1 for raw detections.
    pub id: i64,
    /// Centroid form.
    pub bbox: BoundingBox,
    pub conf: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MotRecord {
    pub fn new(frame: u32, id: i64, bbox: BoundingBox, conf: f64) -> Self {
        Self {
            frame,
            id,
            bbox,
            conf,
            x: -1.0,
            y: -1.0,
            z: -1.0,
        }
    }
}

/// Records grouped by frame (ascending). Within a frame, file order is kept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MotSequence {
    frames: BTreeMap<u32, Vec<MotRecord>>,
}

impl MotSequence {
    pub fn from_records(records: impl IntoIterator<Item = MotRecord>) -> Self {
        let mut frames: BTreeMap<u32, Vec<MotRecord>> = BTreeMap::new();
        for r in records {
            frames.entry(r.frame).or_default().push(r);
        }
        Self { frames }
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn frames(&self) -> &BTreeMap<u32, Vec<MotRecord>> {
        &self.frames
    }

    pub fn frame(&self, f: u32) -> &[MotRecord] {
        self.frames.get(&f).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn first_frame(&self) -> Option<u32> {
        self.frames.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.frames.keys().next_back().copied()
    }

    pub fn records(&self) -> impl Iterator<Item = &MotRecord> {
        self.frames.values().flatten()
    }

    /// Per-id boxes in frame order.
    pub fn tracks(&self) -> BTreeMap<i64, Vec<(u32, BoundingBox)>> {
        let mut out: BTreeMap<i64, Vec<(u32, BoundingBox)>> = BTreeMap::new();
        for r in self.records() {
            out.entry(r.id).or_default().push((r.frame, r.bbox));
        }
        out
    }

    /// Records sorted by `(frame, id)`.
    pub fn sorted_records(&self) -> Vec<MotRecord> {
        let mut v: Vec<MotRecord> = self.records().copied().collect();
        v.sort_by_key(|r| (r.frame, r.id));
        v
    }
}

/// Fixed-point with up to 6 decimals and no trailing zeros.
pub fn format_number(v: f64) -> String {
    let mut s = format!("{v:.6}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(field: &str, what: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_error(path, line, format!("{what}: cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("{what}: non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_int(field: &str, what: &str, path: &Path, line: usize) -> Result<i64> {
    let v = parse_f64(field, what, path, line)?;
    if v.fract() != 0.0 || v.abs() > 1e15 {
        return Err(parse_error(path, line, format!("{what}: {field:?} is not an integer")));
    }
    Ok(v as i64)
}

/// Parses MOT text. `path` only labels errors.
pub fn parse_mot(text: &str, path: &Path) -> Result<MotSequence> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 10 comma-separated fields, found {}", fields.len()),
            ));
        }
        let frame = parse_int(fields[0], "frame", path, line_no)?;
        if frame < 1 || frame > u32::MAX as i64 {
            return Err(parse_error(path, line_no, format!("frame must be >= 1, got {frame}")));
        }
        let id = parse_int(fields[1], "id", path, line_no)?;
        let mut nums = [0.0; 8];
        let names = ["bb_left", "bb_top", "bb_width", "bb_height", "conf", "x", "y", "z"];
        for k in 0..8 {
            nums[k] = parse_f64(fields[k + 2], names[k], path, line_no)?;
        }
        let [left, top, w, h, conf, x, y, z] = nums;
        if w <= 0.0 || h <= 0.0 {
            log::warn!(
                "{}:{line_no}: skipping box with non-positive size {w}x{h}",
                path.display()
            );
            continue;
        }
        records.push(MotRecord {
            frame: frame as u32,
            id,
            bbox: BoundingBox::from_top_left(left, top, w, h),
            conf,
            x,
            y,
            z,
        });
    }
    Ok(MotSequence::from_records(records))
}

pub fn read_mot(path: &Path) -> Result<MotSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mot(&text, path)
}

/// One line per record, sorted by `(frame, id)`.
pub fn format_mot<'a>(records: impl IntoIterator<Item = &'a MotRecord>) -> String {
    let mut v: Vec<&MotRecord> = records.into_iter().collect();
    v.sort_by_key(|r| (r.frame, r.id));
    let mut out = String::new();
    for r in v {
        let (l, t, w, h) = r.bbox.to_top_left();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.frame,
            r.id,
            format_number(l),
            format_number(t),
            format_number(w),
            format_number(h),
            format_number(r.conf),
            format_number(r.x),
            format_number(r.y),
            format_number(r.z)
        );
    }
    out
}

pub fn write_mot<'a>(records: impl IntoIterator<Item = &'a MotRecord>, path: &Path) -> Result<()> {
    fs::write(path, format_mot(records)).map_err(|e| Error::io(path, e))
}

/// Per-detection appearance vectors keyed by `(frame, det_index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<(u32, usize), Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, frame: u32, det_index: usize, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "embedding width",
                expected: self.dim,
                actual: v.len(),
            });
        }
        self.vectors.insert((frame, det_index), normalized(v)?);
        Ok(())
    }

    pub fn get(&self, frame: u32, det_index: usize) -> Option<&[f64]> {
        self.vectors.get(&(frame, det_index)).map(Vec::as_slice)
    }

    /// The stored vector, or the uniform unit vector with a warning.
    pub fn get_or_fallback(&self, frame: u32, det_index: usize) -> Vec<f64> {
        match self.get(frame, det_index) {
            Some(v) => v.to_vec(),
            None => {
                log::warn!("no embedding for frame {frame} detection {det_index}; using the uniform vector");
                uniform_unit(self.dim)
            }
        }
    }
}

pub fn uniform_unit(dim: usize) -> Vec<f64> {
    let d = dim.max(1);
    vec![1.0 / (d as f64).sqrt(); d]
}

pub fn parse_embeddings(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing header row"))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "frame" || cols[1] != "det_index" {
        return Err(parse_error(path, 1, "header must be frame,det_index,e0,..."));
    }
    for (k, c) in cols[2..].iter().enumerate() {
        if *c != format!("e{k}") {
            return Err(parse_error(path, 1, format!("header column {} should be e{k}, found {c:?}", k + 2)));
        }
    }
    let mut table = EmbeddingTable::new(cols.len() - 2);
    for (i, raw) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = raw.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_error(
                path,
                line_no,
                format!(
                    "row has {} values, header declares E = {}",
                    fields.len().saturating_sub(2),
                    table.dim
                ),
            ));
        }
        let frame = parse_int(fields[0], "frame", path, line_no)?;
        let idx = parse_int(fields[1], "det_index", path, line_no)?;
        if frame < 1 || idx < 0 {
            return Err(parse_error(path, line_no, "frame must be >= 1 and det_index >= 0"));
        }
        let v = fields[2..]
            .iter()
            .map(|f| parse_f64(f, "embedding value", path, line_no))
            .collect::<Result<Vec<_>>>()?;
        table
            .insert(frame as u32, idx as usize, v)
            .map_err(|e| parse_error(path, line_no, e.to_string()))?;
    }
    Ok(table)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut out = String::from("frame,det_index");
    for k in 0..table.dim {
        let _ = write!(out, ",e{k}");
    }
    out.push('\n');
    for ((f, i), v) in &table.vectors {
        let _ = write!(out, "{f},{i}");
        for x in v {
            let _ = write!(out, ",{}", format_number(*x));
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    fs::write(path, format_embeddings(table)).map_err(|e| Error::io(path, e))
}

/// One observation per frame from the first detection frame (or 1) through
/// `last_frame`, empty frames included. Missing embeddings fall back to the
/// uniform vector; with no table every detection gets a 1-wide constant.
pub fn frames_from_detections(
    dets: &MotSequence,
    embeddings: Option<&EmbeddingTable>,
    last_frame: Option<u32>,
    context: &dyn Fn(u32) -> Option<Vec<f64>>,
) -> Result<Vec<FrameObservations>> {
    let end = match (dets.last_frame(), last_frame) {
        (Some(a), Some(b)) => a.max(b),
        (a, b) => a.or(b).unwrap_or(0),
    };
    let mut out = Vec::with_capacity(end as usize);
    for f in 1..=end {
        let recs = dets.frame(f);
        let boxes = recs.iter().map(|r| r.bbox).collect();
        let confs = recs.iter().map(|r| r.conf).collect();
        let embs = (0..recs.len())
            .map(|i| match embeddings {
                Some(t) => t.get_or_fallback(f, i),
                None => uniform_unit(1),
            })
            .collect();
        out.push(FrameObservations::new(f, boxes, confs, embs, context(f))?);
    }
    Ok(out)
}

/// Whole-run configuration; every section and field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub forecaster: ForecasterConfig,
    pub kalman: KalmanConfig,
    pub training: TrainingConfig,
    /// Custom scene for `simulate` when no suite is named.
    pub scene: Option<SceneSpec>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.tracker.validate(&mut errors);
        self.forecaster.validate(&mut errors);
        self.kalman.validate(&mut errors);
        self.training.validate(&mut errors);
        if let Some(scene) = &self.scene {
            scene.validate(&mut errors);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Validation(vec![format!("config: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.txt")
    }

    #[test]
    fn reads_example_line() {
        let s = parse_mot("1,2,100,150,20,40,1,-1,-1,-1\n", p()).unwrap();
        let r = s.frame(1)[0];
        assert_eq!(r.id, 2);
        assert_eq!(r.bbox, BoundingBox::new(110.0, 170.0, 20.0, 40.0));
        assert_eq!(r.conf, 1.0);
    }

    #[test]
    fn writes_example_line() {
        let r = MotRecord::new(1, 2, BoundingBox::new(110.0, 170.0, 20.0, 40.0), 1.0);
        assert_eq!(format_mot([&r]), "1,2,100,150,20,40,1,-1,-1,-1\n");
        assert_eq!(format_mot(std::iter::empty::<&MotRecord>()), "");
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let err = parse_mot("1,2,100,150,20,40,1,-1,-1,-1\n1,2,3,4,5,6,7,8,9\n", p()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_mot("0,1,1,1,1,1,1,1,1,1", p()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_mot("1,x,1,1,1,1,1,1,1,1", p()), Err(Error::Parse { .. })));
        assert!(parse_mot("", p()).unwrap().is_empty());
        // zero-size boxes are skipped, not fatal
        assert!(parse_mot("1,1,0,0,0,5,1,-1,-1,-1", p()).unwrap().is_empty());
    }

    #[test]
    fn ordering_is_frame_then_id() {
        let recs = [
            MotRecord::new(2, 1, BoundingBox::new(5.0, 5.0, 2.0, 2.0), 1.0),
            MotRecord::new(1, 3, BoundingBox::new(5.0, 5.0, 2.0, 2.0), 1.0),
            MotRecord::new(1, 2, BoundingBox::new(5.0, 5.0, 2.0, 2.0), 1.0),
        ];
        let text = format_mot(&recs);
        let ids: Vec<&str> = text.lines().map(|l| &l[..3]).collect();
        assert_eq!(ids, vec!["1,2", "1,3", "2,1"]);
    }

    #[test]
    fn number_format() {
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(-1.0), "-1");
        assert_eq!(format_number(0.1234567), "0.123457");
        assert_eq!(format_number(2.5), "2.5");
        assert_eq!(format_number(-0.0000001), "0");
    }

    #[test]
    fn embedding_examples() {
        let t = parse_embeddings("frame,det_index,e0,e1,e2,e3\n1,0,1,0,0,0\n1,1,2,0,0,0\n", p()).unwrap();
        assert_eq!(t.dim, 4);
        assert_eq!(t.get(1, 0).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.get(1, 1).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.get_or_fallback(2, 0), vec![0.5; 4]);
        assert!(matches!(
            parse_embeddings("frame,det_index,e0,e1,e2,e3\n1,0,1,0,0\n", p()),
            Err(Error::Parse { line: 2, .. })
        ));
        let back = parse_embeddings(&format_embeddings(&t), p()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.forecaster.p, 10);
        assert_eq!(cfg.forecaster.q, 60);
        assert_eq!(cfg.tracker.lambda_fuse, 0.75);
        assert_eq!(cfg.tracker.l_fuse, 10);
        assert_eq!(cfg.tracker.max_time_occ, 20);
        assert_eq!(cfg.tracker.thresh_occ, 0.55);
        assert_eq!(cfg.training.learning_rate, 1e-4);
        assert_eq!(RunConfig::from_json(r#"{"tracker": {"max_lost": 30}}"#).unwrap(), cfg);
        match RunConfig::from_json(r#"{"tracker": {"lambda_fuse": 1.5, "l_fuse": 70}}"#) {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 2, "{v:?}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            RunConfig::from_json(r#"{"tracker": {"bogus": 1}}"#),
            Err(Error::Validation(_))
        ));
        let echoed = RunConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(echoed, cfg);
    }

    fn arb_record() -> impl Strategy<Value = MotRecord> {
        (1u32..50, -1i64..20, 0i64..2_000_000, 0i64..2_000_000, 1i64..400_000, 1i64..400_000, 0i64..1_000_000)
            .prop_map(|(f, id, l, t, w, h, c)| {
                // values on the 6-decimal grid survive the text round trip
                let s = 1e-3;
                MotRecord::new(f, id, BoundingBox::from_top_left(l as f64 * s, t as f64 * s, w as f64 * s, h as f64 * s), c as f64 * 1e-6)
            })
    }

    proptest! {
        #[test]
        fn round_trip(recs in prop::collection::vec(arb_record(), 0..30)) {
            let text = format_mot(&recs);
            let back = parse_mot(&text, p()).unwrap();
            let again = format_mot(back.records());
            prop_assert_eq!(&text, &again);
            prop_assert_eq!(back.len(), recs.len());
            for (a, b) in MotSequence::from_records(recs.clone()).sorted_records().iter().zip(back.sorted_records()) {
                prop_assert_eq!(a.frame, b.frame);
                prop_assert_eq!(a.id, b.id);
                for (x, y) in a.bbox.to_array().iter().zip(b.bbox.to_array()) {
                    prop_assert!((x - y).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_mot(&text, p());
            let _ = parse_embeddings(&text, p());
        }
    }
}
