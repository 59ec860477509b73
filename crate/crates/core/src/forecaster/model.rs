use serde::{Deserialize, Serialize};

use super::nn::{relu, relu_backward, Gru, GruStep, Linear};
use super::{ConcatMode, ForecasterConfig, PastSequence, TrainingSample};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, BoxWithVelocity, Velocity};
use crate::motion::ForecastHorizon;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterParams {
    pub config: ForecasterConfig,
    pub past_encoder: Gru,
    /// `h → φ_B`
    pub enc_fc: Linear,
    /// `context → φ_E`
    pub embed_fc: Linear,
    pub past_decoder: Gru,
    pub past_head: Linear,
    /// `φ_C → u`, the per-step future decoder input
    pub fuse_fc: Linear,
    pub future_decoder: Gru,
    pub future_head: Linear,
    /// `[s_det, s_id, s_for]`
    pub uncertainty: Vec<f64>,
}

impl ForecasterParams {
    pub fn zeros(config: ForecasterConfig) -> Self {
        let (h, f, c) = (config.hidden, config.feature_dim, config.embed_dim);
        Self {
            past_encoder: Gru::zeros(8, h),
            enc_fc: Linear::zeros(h, f),
            embed_fc: Linear::zeros(c, f),
            past_decoder: Gru::zeros(f, h),
            past_head: Linear::zeros(h, 8),
            fuse_fc: Linear::zeros(2 * f, h),
            future_decoder: Gru::zeros(h, h),
            future_head: Linear::zeros(h, 4),
            uncertainty: vec![0.0; 3],
            config,
        }
    }

    /// Uniform `±1/√fan` initialisation from a seeded stream, tensors in [`Self::layout`] order.
    pub fn random(config: ForecasterConfig, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let (h, f, c) = (config.hidden, config.feature_dim, config.embed_dim);
        Self {
            past_encoder: Gru::random(8, h, &mut rng),
            enc_fc: Linear::random(h, f, &mut rng),
            embed_fc: Linear::random(c, f, &mut rng),
            past_decoder: Gru::random(f, h, &mut rng),
            past_head: Linear::random(h, 8, &mut rng),
            fuse_fc: Linear::random(2 * f, h, &mut rng),
            future_decoder: Gru::random(h, h, &mut rng),
            future_head: Linear::random(h, 4, &mut rng),
            uncertainty: vec![0.0; 3],
            config,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone())
    }

    /// Tensor names and shapes, in a fixed order shared by every visitor.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let gru = |out: &mut Vec<(String, Vec<usize>)>, name: &str, g: &Gru| {
            let (i, h) = (g.input_dim(), g.hidden_dim());
            out.push((format!("{name}.w_ih"), vec![3 * h, i]));
            out.push((format!("{name}.w_hh"), vec![3 * h, h]));
            out.push((format!("{name}.b_ih"), vec![3 * h]));
            out.push((format!("{name}.b_hh"), vec![3 * h]));
        };
        let lin = |out: &mut Vec<(String, Vec<usize>)>, name: &str, l: &Linear| {
            out.push((format!("{name}.weight"), vec![l.output_dim(), l.input_dim()]));
            out.push((format!("{name}.bias"), vec![l.output_dim()]));
        };
        gru(&mut out, "past_encoder", &self.past_encoder);
        lin(&mut out, "enc_fc", &self.enc_fc);
        lin(&mut out, "embed_fc", &self.embed_fc);
        gru(&mut out, "past_decoder", &self.past_decoder);
        lin(&mut out, "past_head", &self.past_head);
        lin(&mut out, "fuse_fc", &self.fuse_fc);
        gru(&mut out, "future_decoder", &self.future_decoder);
        lin(&mut out, "future_head", &self.future_head);
        out.push(("uncertainty".into(), vec![3]));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.past_encoder.tensors());
        out.extend(self.enc_fc.tensors());
        out.extend(self.embed_fc.tensors());
        out.extend(self.past_decoder.tensors());
        out.extend(self.past_head.tensors());
        out.extend(self.fuse_fc.tensors());
        out.extend(self.future_decoder.tensors());
        out.extend(self.future_head.tensors());
        out.push(&self.uncertainty);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.past_encoder.tensors_mut());
        out.extend(self.enc_fc.tensors_mut());
        out.extend(self.embed_fc.tensors_mut());
        out.extend(self.past_decoder.tensors_mut());
        out.extend(self.past_head.tensors_mut());
        out.extend(self.fuse_fc.tensors_mut());
        out.extend(self.future_decoder.tensors_mut());
        out.extend(self.future_head.tensors_mut());
        out.push(&mut self.uncertainty);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn scale8(&self) -> [f64; 8] {
        let (ps, vs) = (self.config.pos_scale, self.config.vel_scale);
        [ps, ps, ps, ps, vs, vs, vs, vs]
    }

    fn encoder_input(&self, s: &BoxWithVelocity) -> Vec<f64> {
        let scale = self.scale8();
        s.to_array().iter().zip(scale).map(|(v, k)| v / k).collect()
    }
}

/// Activations of one sample's forward pass.
pub(crate) struct Tape {
    enc_x: Vec<Vec<f64>>,
    enc: Vec<GruStep>,
    h_enc: Vec<f64>,
    phi_b: Vec<f64>,
    phi_e: Vec<f64>,
    context: Vec<f64>,
    past_dec: Vec<GruStep>,
    /// Reconstruction, oldest first, in input units.
    pub past_pred: Vec<[f64; 8]>,
    phi_c: Vec<f64>,
    u: Vec<f64>,
    future_dec: Vec<GruStep>,
    /// Future boxes before flooring.
    pub future_pred: Vec<[f64; 4]>,
}

fn zero_context(params: &ForecasterParams, context: &[f64]) -> Result<Vec<f64>> {
    let c = params.config.embed_dim;
    if context.is_empty() {
        return Ok(vec![0.0; c]);
    }
    if context.len() != c {
        return Err(Error::DimensionMismatch {
            context: "forecaster context width",
            expected: c,
            actual: context.len(),
        });
    }
    Ok(context.to_vec())
}

fn run_encoder(past: &PastSequence, params: &ForecasterParams) -> (Vec<Vec<f64>>, Vec<GruStep>, Vec<f64>) {
    let mut h = vec![0.0; params.config.hidden];
    let mut xs = Vec::with_capacity(past.valid_len);
    let mut steps = Vec::with_capacity(past.valid_len);
    // padding steps are skipped so the state stays at its zero start
    for s in past.valid_steps() {
        let x = params.encoder_input(s);
        let st = params.past_encoder.step(&x, &h);
        h = st.h.clone();
        xs.push(x);
        steps.push(st);
    }
    (xs, steps, h)
}

fn run_decoder(gru: &Gru, head: &Linear, h0: &[f64], input: &[f64], n: usize) -> (Vec<GruStep>, Vec<Vec<f64>>) {
    let gi = gru.input_projection(input);
    let mut h = h0.to_vec();
    let mut steps = Vec::with_capacity(n);
    let mut outs = Vec::with_capacity(n);
    for _ in 0..n {
        let st = gru.step_projected(&gi, &h);
        outs.push(head.forward(&st.h));
        h = st.h.clone();
        steps.push(st);
    }
    (steps, outs)
}

pub fn encode_past(past: &PastSequence, params: &ForecasterParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if past.valid_len < 2 {
        return Err(Error::NotReady(format!(
            "forecaster needs two past boxes, have {}",
            past.valid_len
        )));
    }
    let (_, _, h) = run_encoder(past, params);
    let phi_b = relu(params.enc_fc.forward(&h));
    Ok((h, phi_b))
}

/// `φ_E`; an empty slice stands for the all-zero context.
pub fn encode_embedding(context: &[f64], params: &ForecasterParams) -> Result<Vec<f64>> {
    let ctx = zero_context(params, context)?;
    Ok(relu(params.embed_fc.forward(&ctx)))
}

/// Reconstruction of the `p` past steps, oldest first. The decoder emits the
/// most recent step first, so front padding never shifts a real step.
pub fn decode_past(h_final: &[f64], phi_b: &[f64], params: &ForecasterParams) -> Vec<BoxWithVelocity> {
    let p = params.config.p;
    let scale = params.scale8();
    let (_, outs) = run_decoder(&params.past_decoder, &params.past_head, h_final, phi_b, p);
    outs.iter()
        .rev()
        .map(|o| {
            let mut a = [0.0; 8];
            for k in 0..8 {
                a[k] = o[k] * scale[k];
            }
            BoxWithVelocity::from_array(a)
        })
        .collect()
}

fn fuse(params: &ForecasterParams, phi_b: &[f64], phi_e: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut phi_c = phi_b.to_vec();
    phi_c.extend_from_slice(phi_e);
    let u = relu(params.fuse_fc.forward(&phi_c));
    (phi_c, u)
}

pub fn decode_future(h_final: &[f64], phi_b: &[f64], phi_e: &[f64], params: &ForecasterParams) -> Vec<Velocity> {
    let (_, u) = fuse(params, phi_b, phi_e);
    let vs = params.config.vel_scale;
    let (_, outs) = run_decoder(&params.future_decoder, &params.future_head, h_final, &u, params.config.q);
    outs.iter()
        .map(|o| Velocity::new(o[0] * vs, o[1] * vs, o[2] * vs, o[3] * vs))
        .collect()
}

fn concat_raw(last: [f64; 4], velocities: &[[f64; 4]], mode: ConcatMode) -> Vec<[f64; 4]> {
    let mut z = [0.0; 4];
    velocities
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let factor = match mode {
                ConcatMode::Corrected => 1.0,
                ConcatMode::Literal => (i + 1) as f64,
            };
            let mut b = [0.0; 4];
            for k in 0..4 {
                z[k] += v[k];
                b[k] = last[k] + factor * z[k];
            }
            b
        })
        .collect()
}

/// Anchors the running velocity sum at `last_box`. The horizon's origin is
/// left at 0 for the caller to set.
pub fn trajectory_concat(last_box: BoundingBox, velocities: &[Velocity], mode: ConcatMode) -> ForecastHorizon {
    let vels: Vec<[f64; 4]> = velocities.iter().map(Velocity::to_array).collect();
    let boxes = concat_raw(last_box.to_array(), &vels, mode)
        .into_iter()
        .map(|b| BoundingBox::from_array(b).floored())
        .collect();
    ForecastHorizon::new(boxes, 0)
}

pub fn forecast(past: &PastSequence, context: &[f64], params: &ForecasterParams) -> Result<ForecastHorizon> {
    let (h, phi_b) = encode_past(past, params)?;
    let phi_e = encode_embedding(context, params)?;
    let vels = decode_future(&h, &phi_b, &phi_e, params);
    let last = past.last_box().ok_or(Error::Empty("past sequence"))?;
    Ok(trajectory_concat(last, &vels, params.config.concat_mode))
}

impl Tape {
    pub(crate) fn forward(params: &ForecasterParams, sample: &TrainingSample) -> Result<Tape> {
        let cfg = &params.config;
        if sample.past.valid_len < 1 {
            return Err(Error::Empty("training sample past"));
        }
        if sample.future_boxes.len() != cfg.q {
            return Err(Error::DimensionMismatch {
                context: "training sample future length",
                expected: cfg.q,
                actual: sample.future_boxes.len(),
            });
        }
        if sample.past.valid_len > cfg.p {
            return Err(Error::DimensionMismatch {
                context: "training sample past length",
                expected: cfg.p,
                actual: sample.past.valid_len,
            });
        }
        let context = zero_context(params, &sample.context)?;
        let (enc_x, enc, h_enc) = run_encoder(&sample.past, params);
        let phi_b = relu(params.enc_fc.forward(&h_enc));
        let phi_e = relu(params.embed_fc.forward(&context));

        let scale = params.scale8();
        let (past_dec, outs) = run_decoder(&params.past_decoder, &params.past_head, &h_enc, &phi_b, cfg.p);
        let past_pred = outs
            .iter()
            .rev()
            .map(|o| {
                let mut a = [0.0; 8];
                for k in 0..8 {
                    a[k] = o[k] * scale[k];
                }
                a
            })
            .collect();

        let (phi_c, u) = fuse(params, &phi_b, &phi_e);
        let (future_dec, outs) = run_decoder(&params.future_decoder, &params.future_head, &h_enc, &u, cfg.q);
        let vs = cfg.vel_scale;
        let vels: Vec<[f64; 4]> = outs
            .iter()
            .map(|o| [o[0] * vs, o[1] * vs, o[2] * vs, o[3] * vs])
            .collect();
        let future_pred = concat_raw(sample.last_box.to_array(), &vels, cfg.concat_mode);

        Ok(Tape {
            enc_x,
            enc,
            h_enc,
            phi_b,
            phi_e,
            context,
            past_dec,
            past_pred,
            phi_c,
            u,
            future_dec,
            future_pred,
        })
    }

    /// Accumulates parameter gradients given `∂L/∂past_pred` (oldest first)
    /// and `∂L/∂future_pred`.
    pub(crate) fn backward(
        &self,
        params: &ForecasterParams,
        d_past: &[[f64; 8]],
        d_future: &[[f64; 4]],
        grad: &mut ForecasterParams,
    ) {
        let cfg = &params.config;
        let (p, q) = (cfg.p, cfg.q);
        let vs = cfg.vel_scale;
        let scale = params.scale8();
        let mut dh_enc = vec![0.0; cfg.hidden];

        // concatenation: dZ_i = factor_i · db_i, dv_j = Σ_{i ≥ j} dZ_i
        let mut d_head_future = vec![[0.0; 4]; q];
        let mut acc = [0.0; 4];
        for i in (0..q).rev() {
            let factor = match cfg.concat_mode {
                ConcatMode::Corrected => 1.0,
                ConcatMode::Literal => (i + 1) as f64,
            };
            for k in 0..4 {
                acc[k] += factor * d_future[i][k];
                d_head_future[i][k] = acc[k] * vs;
            }
        }

        let du = decoder_backward(
            &params.future_decoder,
            &params.future_head,
            &mut grad.future_decoder,
            &mut grad.future_head,
            &self.future_dec,
            &self.u,
            |t| d_head_future[t].to_vec(),
            &mut dh_enc,
        );

        let mut du = du;
        relu_backward(&self.u, &mut du);
        let mut dphi_c = vec![0.0; self.phi_c.len()];
        params
            .fuse_fc
            .backward(&self.phi_c, &du, &mut grad.fuse_fc, Some(&mut dphi_c));
        let f = cfg.feature_dim;
        let mut dphi_b = dphi_c[..f].to_vec();
        let mut dphi_e = dphi_c[f..].to_vec();

        relu_backward(&self.phi_e, &mut dphi_e);
        params
            .embed_fc
            .backward(&self.context, &dphi_e, &mut grad.embed_fc, None);

        // decoder step t reconstructs position p − 1 − t
        let dphi_b_dec = decoder_backward(
            &params.past_decoder,
            &params.past_head,
            &mut grad.past_decoder,
            &mut grad.past_head,
            &self.past_dec,
            &self.phi_b,
            |t| (0..8).map(|k| d_past[p - 1 - t][k] * scale[k]).collect(),
            &mut dh_enc,
        );
        dphi_b.iter_mut().zip(&dphi_b_dec).for_each(|(a, b)| *a += b);

        relu_backward(&self.phi_b, &mut dphi_b);
        params
            .enc_fc
            .backward(&self.h_enc, &dphi_b, &mut grad.enc_fc, Some(&mut dh_enc));

        let mut dh = dh_enc;
        for (st, x) in self.enc.iter().zip(&self.enc_x).rev() {
            let mut dgi = vec![0.0; 3 * cfg.hidden];
            dh = params
                .past_encoder
                .step_backward(st, &dh, &mut grad.past_encoder, &mut dgi);
            params
                .past_encoder
                .input_backward(x, &dgi, &mut grad.past_encoder, None);
        }
    }
}

/// Backward through a decoder fed the same input every step. Adds the
/// initial-state gradient into `dh0` and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn decoder_backward(
    gru: &Gru,
    head: &Linear,
    g_gru: &mut Gru,
    g_head: &mut Linear,
    steps: &[GruStep],
    input: &[f64],
    d_out: impl Fn(usize) -> Vec<f64>,
    dh0: &mut [f64],
) -> Vec<f64> {
    let hd = gru.hidden_dim();
    let mut dgi = vec![0.0; 3 * hd];
    let mut dh = vec![0.0; hd];
    for t in (0..steps.len()).rev() {
        head.backward(&steps[t].h, &d_out(t), g_head, Some(&mut dh));
        dh = gru.step_backward(&steps[t], &dh, g_gru, &mut dgi);
    }
    dh0.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
    let mut dx = vec![0.0; input.len()];
    gru.input_backward(input, &dgi, g_gru, Some(&mut dx));
    dx
}
