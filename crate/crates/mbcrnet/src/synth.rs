//! Seeded synthetic multi-lead ECG-like records, so training and tests run
//! without any proprietary data.
//!
//! Normal records are quasi-periodic trains of Gaussian bumps (QRS
//! surrogates) with a per-lead amplitude profile plus Gaussian noise.
//! Abnormal records additionally carry rhythm irregularity (a faster, heavily
//! jittered beat sequence), inverted bumps on leads V1-V3, or both. Placing
//! the inversion on a lead subset is what makes multi-lead fusion measurably
//! better than the best single lead at desk scale.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{EcgRecord, CANONICAL_LEADS, CLINICAL_LEADS};
use crate::error::{Error, Result};
use crate::seeds::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Abnormality {
    IrregularRhythm,
    LeadLocalizedInversion,
    Both,
}

impl Abnormality {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::IrregularRhythm => "irregular_rhythm",
            Self::LeadLocalizedInversion => "lead_localized_inversion",
            Self::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "irregular_rhythm" => Ok(Self::IrregularRhythm),
            "lead_localized_inversion" => Ok(Self::LeadLocalizedInversion),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown abnormality {other:?}"))),
        }
    }

    fn rhythm(self) -> bool {
        matches!(self, Self::IrregularRhythm | Self::Both)
    }

    fn inversion(self) -> bool {
        matches!(self, Self::LeadLocalizedInversion | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_records: usize,
    pub n_leads: usize,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    /// Fraction of records labeled normal (class 0).
    pub class_balance: f64,
    pub noise_std: f64,
    pub abnormality: Abnormality,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_records: 40,
            n_leads: 8,
            sample_rate_hz: 500,
            duration_s: 10.0,
            class_balance: 0.5,
            noise_std: 0.05,
            abnormality: Abnormality::Both,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 {
            return Err(Error::Config("n_records must be positive".into()));
        }
        if !(1..=12).contains(&self.n_leads) {
            return Err(Error::Config("n_leads must be in 1..=12".into()));
        }
        if self.sample_rate_hz == 0 || self.duration_s <= 0.0 {
            return Err(Error::Config("rate and duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.class_balance) || self.noise_std < 0.0 {
            return Err(Error::Config("bad class_balance or noise_std".into()));
        }
        Ok(())
    }

    fn lead_names(&self) -> Vec<String> {
        if self.n_leads == 8 {
            CANONICAL_LEADS.iter().map(|s| s.to_string()).collect()
        } else {
            CLINICAL_LEADS.iter().take(self.n_leads).map(|s| s.to_string()).collect()
        }
    }
}

fn lead_amplitude(name: &str) -> f64 {
    match name {
        "II" => 1.1,
        "III" => 0.8,
        "V1" => 0.6,
        "V2" => 0.9,
        "V3" => 1.0,
        "V4" => 1.2,
        "V5" => 1.3,
        "V6" => 1.0,
        "I" => 0.7,
        "aVR" => 0.5,
        "aVL" => 0.55,
        "aVF" => 0.75,
        _ => 0.7,
    }
}

/// Generate the configured records; a pure function of the config.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<EcgRecord>> {
    cfg.validate()?;
    let n_normal = (cfg.n_records as f64 * cfg.class_balance).round() as usize;
    let names = cfg.lead_names();
    let mut records = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        let class = u8::from(i >= n_normal);
        records.push(generate_one(cfg, i, class, &names));
    }
    Ok(records)
}

fn generate_one(cfg: &SynthConfig, index: usize, class: u8, names: &[String]) -> EcgRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, index as u64));
    let n_samples = (cfg.duration_s * cfg.sample_rate_hz as f64).round() as usize;
    let dt = 1.0 / cfg.sample_rate_hz as f64;
    let rhythm_abnormal = class == 1 && cfg.abnormality.rhythm();
    let inverted = class == 1 && cfg.abnormality.inversion();

    let bpm = if rhythm_abnormal {
        rng.random_range(95.0..130.0)
    } else {
        rng.random_range(60.0..90.0)
    };
    let rr = 60.0 / bpm;
    let scale: f64 = rng.random_range(0.85..1.15);

    // Beat centers. Irregular rhythm jitters every interval by at least 25%.
    let mut beats = Vec::new();
    let mut t = rng.random_range(0.25..0.55);
    while t < cfg.duration_s + 0.5 {
        beats.push(t);
        let jitter = if rhythm_abnormal {
            let magnitude = rng.random_range(0.25..0.40);
            if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        } else {
            rng.random_range(-0.03..0.03)
        };
        t += rr * (1.0 + jitter);
    }

    let sigma = 0.02_f64;
    let support = (4.0 * sigma / dt).ceil() as isize;
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("noise std");

    let mut samples = Vec::with_capacity(names.len());
    for name in names {
        let mut amp = lead_amplitude(name) * scale;
        if inverted && matches!(name.as_str(), "V1" | "V2" | "V3") {
            amp = -amp;
        }
        let mut lead = vec![0.0; n_samples];
        for &beat in &beats {
            let center = (beat / dt).round() as isize;
            let lo = (center - support).max(0) as usize;
            let hi = ((center + support) as usize).min(n_samples.saturating_sub(1));
            for (idx, slot) in lead.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let dt_beat = idx as f64 * dt - beat;
                *slot += amp * (-dt_beat * dt_beat / (2.0 * sigma * sigma)).exp();
            }
        }
        if cfg.noise_std > 0.0 {
            for slot in lead.iter_mut() {
                *slot += noise.sample(&mut rng);
            }
        }
        samples.push(lead);
    }

    let label_text = if class == 0 {
        if index % 2 == 0 {
            "normal electrocardiogram"
        } else {
            "normal sinus rhythm"
        }
    } else {
        match cfg.abnormality {
            Abnormality::IrregularRhythm => "irregular rhythm",
            Abnormality::LeadLocalizedInversion => "precordial lead inversion",
            Abnormality::Both => "irregular rhythm with lead inversion",
        }
    };

    EcgRecord {
        id: format!("synth-{index:04}"),
        sample_rate_hz: cfg.sample_rate_hz,
        lead_names: names.to_vec(),
        samples,
        label_text: label_text.to_string(),
        label: Some(class),
    }
}

/// Write records as one file per record plus a manifest listing them
/// (paths relative to the manifest). Returns the manifest path.
pub fn write_dataset(dir: &Path, records: &[EcgRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for rec in records {
        let file = format!("{}.ecg", rec.id);
        crate::data::write_record_file(&dir.join(&file), rec)?;
        manifest.push_str(&file);
        manifest.push('\n');
    }
    let manifest_path = dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}
