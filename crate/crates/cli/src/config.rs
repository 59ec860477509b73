use std::fs;
use std::path::Path;

use clap::ValueEnum;
use motf_core::forecaster::{ForecasterConfig, TrainingConfig};
use motf_core::io::RunConfig;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full model sizes and the long training schedule.
    Full,
    /// Small model and short schedule for a single CPU core.
    Desk,
}

pub fn preset_config(preset: Preset) -> RunConfig {
    match preset {
        Preset::Full => RunConfig::default(),
        Preset::Desk => RunConfig {
            forecaster: ForecasterConfig::desk(),
            training: TrainingConfig::desk(),
            ..RunConfig::default()
        },
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// The preset, overridden key by key by the JSON file, then validated.
pub fn load_run_config(path: Option<&Path>, preset: Preset) -> motf_core::Result<RunConfig> {
    let base = preset_config(preset);
    let Some(path) = path else {
        base.validate()?;
        return Ok(base);
    };
    let text = fs::read_to_string(path).map_err(|e| {
        motf_core::Error::Validation(vec![format!("cannot read config {}: {e}", path.display())])
    })?;
    let overlay: Value = serde_json::from_str(&text)
        .map_err(|e| motf_core::Error::Validation(vec![format!("config {}: {e}", path.display())]))?;
    if !overlay.is_object() {
        return Err(motf_core::Error::Validation(vec![format!(
            "config {}: top level must be an object",
            path.display()
        )]));
    }
    let mut merged = serde_json::to_value(&base)?;
    merge(&mut merged, overlay);
    RunConfig::from_json(&merged.to_string())
}
