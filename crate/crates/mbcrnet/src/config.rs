//! Run configuration: a flat JSON file merged with command-line overrides.
//! Every field has a default; overrides win over file values; the resolved
//! config is echoed into reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::CANONICAL_LEADS;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Variant};
use crate::nn::UnitOrder;
use crate::synth::{Abnormality, SynthConfig};
use crate::train::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: String,
    pub profile: String,
    pub lead: Option<String>,
    pub folds: usize,
    pub out: String,
    pub manifest: Option<String>,
    pub cache: Option<String>,
    pub checkpoint: Option<String>,

    // Synthetic generation.
    pub n_records: usize,
    pub n_leads: usize,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub class_balance: f64,
    pub noise_std: f64,
    pub abnormality: String,

    // Preprocessing.
    pub target_hz: u32,

    // Training.
    pub optimizer: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub unit_order: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: "L".into(),
            profile: "mini".into(),
            lead: None,
            folds: 10,
            out: "out".into(),
            manifest: None,
            cache: None,
            checkpoint: None,
            n_records: 40,
            n_leads: 8,
            sample_rate_hz: 500,
            duration_s: 10.0,
            class_balance: 0.5,
            noise_std: 0.05,
            abnormality: "both".into(),
            target_hz: 250,
            optimizer: "adam".into(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 30,
            dropout_rate: 0.5,
            unit_order: "conv-bn-relu".into(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config json: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn parsed_variant(&self) -> Result<Variant> {
        Variant::parse(&self.variant)
    }

    /// Model spec for the configured profile/variant, with dropout and unit
    /// order applied.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let variant = self.parsed_variant()?;
        let mut spec = match self.profile.as_str() {
            "paper" => ModelSpec::paper(variant),
            "mini" => ModelSpec::mini(variant),
            other => {
                return Err(Error::Config(format!(
                    "unknown profile {other:?} (expected paper or mini)"
                )))
            }
        };
        spec.dropout_rate = self.dropout_rate;
        spec.unit_order = UnitOrder::parse(&self.unit_order)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            optimizer: OptimizerKind::parse(&self.optimizer)?,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            seed: self.seed,
            n_records: self.n_records,
            n_leads: self.n_leads,
            sample_rate_hz: self.sample_rate_hz,
            duration_s: self.duration_s,
            class_balance: self.class_balance,
            noise_std: self.noise_std,
            abnormality: Abnormality::parse(&self.abnormality)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Index of the configured lead in canonical order, when one is set.
    pub fn lead_index(&self) -> Result<Option<usize>> {
        match &self.lead {
            None => Ok(None),
            Some(name) => CANONICAL_LEADS
                .iter()
                .position(|l| l.eq_ignore_ascii_case(name))
                .map(Some)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown lead {name:?} (expected one of {CANONICAL_LEADS:?})"
                    ))
                }),
        }
    }

    /// Flat `config.*` echo for reports, sorted by key.
    pub fn kv(&self) -> Vec<(String, String)> {
        let value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object().expect("config is an object");
        let mut kv: Vec<(String, String)> = obj
            .iter()
            .map(|(k, v)| {
                let rendered = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Null => String::new(),
                    other => other.to_string(),
                };
                (format!("config.{k}"), rendered)
            })
            .collect();
        kv.sort();
        kv
    }
}
