//! Declarative run configuration: one TOML file describes the dataset, the noise
//! to inject, the training setup and optional sweep grids. Parsing is strict
//! (unknown keys rejected) and a short content hash of the canonical form tags
//! every output file for provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, NormalizationStats};
use crate::error::{BivError, Result};
use crate::harness::{Experiment, OptimizerKind, TrainConfig};
use crate::losses::WeightingScheme;
use crate::noise::{NoiseSpec, VarianceDisturbance, DEFAULT_MU_L};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// default output root; `--out` and BIVLAB_OUT take precedence
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub dataset: DatasetConfig,
    pub noise: NoiseConfig,
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// "bike" or "synthetic"
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    /// seed of the synthetic generator, separate from run seeds
    #[serde(default)]
    pub data_seed: u64,
}

/// Noise parameters in raw label units; they are rescaled to normalized units
/// once the label standard deviation is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// "none", "constant", "uniform", "binary_uniform" or "gamma"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// variance-disturbance strength; 0 reports the true variances
    #[serde(default)]
    pub d_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// "l2", "iv", "biv", "cutoff" or "gt" (trains L2 on clean labels)
    pub scheme: String,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// cutoff threshold in raw label-variance units, like mu_p
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_c: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// "adam" or "sgd"
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_hat")]
    pub eps_hat: f64,
    /// batches between evaluations; absent evaluates once per epoch
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// scheme names; "gt" compares against training on clean labels
    #[serde(default)]
    pub schemes: Vec<String>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// cutoff thresholds in raw label-variance units
    #[serde(default)]
    pub cutoffs: Vec<f64>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub ps: Vec<f64>,
    #[serde(default)]
    pub vs: Vec<f64>,
    #[serde(default)]
    pub d_vs: Vec<f64>,
    #[serde(default)]
    pub batch_sizes: Vec<usize>,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    256
}
fn default_optimizer() -> String {
    "adam".into()
}
fn default_lr() -> f64 {
    0.001
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_hat() -> f64 {
    1e-8
}
fn default_window() -> usize {
    35
}
fn default_hidden() -> Vec<usize> {
    vec![100, 50, 20, 10]
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| BivError::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BivError::config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// First 12 hex characters of the SHA-256 of the canonical serialized form, so
/// formatting differences do not change the hash but any field does.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = toml::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(12);
    for b in digest.iter().take(6) {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// The comment line embedded at the top of every output file.
pub fn provenance(hash: &str, seed: u64) -> String {
    format!("config={hash} seed={seed}")
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match self.dataset.source.as_str() {
            "bike" => {
                if self.dataset.path.is_none() {
                    return Err(BivError::config(
                        "dataset.path is required for the bike source",
                    ));
                }
            }
            "synthetic" => {
                let n = self
                    .dataset
                    .n
                    .ok_or_else(|| BivError::config("dataset.n is required for synthetic data"))?;
                let d = self
                    .dataset
                    .d
                    .ok_or_else(|| BivError::config("dataset.d is required for synthetic data"))?;
                if d < 5 {
                    return Err(BivError::config(format!(
                        "synthetic data needs d >= 5, got {d}"
                    )));
                }
                if self.dataset.n_train + self.dataset.n_test > n {
                    return Err(BivError::config(format!(
                        "{} train + {} test rows exceed n = {n}",
                        self.dataset.n_train, self.dataset.n_test
                    )));
                }
            }
            other => {
                return Err(BivError::config(format!(
                    "unknown dataset source {other:?}; expected \"bike\" or \"synthetic\""
                )));
            }
        }
        if self.dataset.n_train == 0 || self.dataset.n_test == 0 {
            return Err(BivError::config("n_train and n_test must be positive"));
        }
        self.noise.validate_fields()?;
        self.train.validate_fields()?;
        if let Some(sweep) = &self.sweep {
            sweep.validate_fields(&self.noise)?;
        }
        Ok(())
    }

    /// Loads or generates the clean dataset and normalizes it.
    pub fn load_clean(&self) -> Result<(Dataset, NormalizationStats)> {
        let raw = match self.dataset.source.as_str() {
            "bike" => {
                let path = self.dataset.path.as_ref().expect("validated");
                let records = data::load_bike_csv(Path::new(path))?;
                data::preprocess_bike(&records)?
            }
            _ => data::synthetic_dataset(
                self.dataset.n.expect("validated"),
                self.dataset.d.expect("validated"),
                self.dataset.data_seed,
            )?,
        };
        if self.dataset.n_train + self.dataset.n_test > raw.n {
            return Err(BivError::config(format!(
                "{} train + {} test rows exceed the {} available",
                self.dataset.n_train, self.dataset.n_test, raw.n
            )));
        }
        data::normalize(&raw)
    }

    /// Builds the in-memory experiment: clean normalized data, noise in
    /// normalized units, and the training configuration.
    pub fn experiment(&self) -> Result<(Experiment, NormalizationStats)> {
        self.validate()?;
        let (clean, stats) = self.load_clean()?;
        let force_clean = self.train.scheme == "gt";
        let (noise, disturbance) = self.noise.to_spec(stats.label_std, force_clean)?;
        let train = self.train.to_train_config(stats.label_std)?;
        let exp = Experiment {
            clean,
            n_train: self.dataset.n_train,
            n_test: self.dataset.n_test,
            noise,
            disturbance,
            train,
        };
        exp.validate()?;
        Ok((exp, stats))
    }
}

impl NoiseConfig {
    fn validate_fields(&self) -> Result<()> {
        let need = |field: Option<f64>, name: &str| {
            field.ok_or_else(|| {
                BivError::config(format!("noise.{name} is required for kind {:?}", self.kind))
            })
        };
        match self.kind.as_str() {
            "none" => {}
            "constant" => {
                let s2 = need(self.sigma2, "sigma2")?;
                if s2 < 0.0 {
                    return Err(BivError::config(format!(
                        "noise.sigma2 must be >= 0, got {s2}"
                    )));
                }
            }
            "uniform" => {
                need(self.mu_p, "mu_p")?;
                need(self.v, "v")?;
            }
            "binary_uniform" => {
                need(self.mu_p, "mu_p")?;
                need(self.p, "p")?;
                need(self.v_h, "v_h")?;
            }
            "gamma" => {
                need(self.mu_p, "mu_p")?;
                need(self.alpha, "alpha")?;
            }
            other => {
                return Err(BivError::config(format!(
                    "unknown noise kind {other:?}; expected none, constant, uniform, binary_uniform or gamma"
                )));
            }
        }
        if self.d_v < 0.0 {
            return Err(BivError::config(format!(
                "noise.d_v must be >= 0, got {}",
                self.d_v
            )));
        }
        Ok(())
    }

    /// Raw-unit spec scaled into normalized label units. `force_clean` overrides
    /// everything with zero noise (the ground-truth scheme).
    pub fn to_spec(
        &self,
        label_std: f64,
        force_clean: bool,
    ) -> Result<(NoiseSpec, Option<VarianceDisturbance>)> {
        if !(label_std > 0.0) {
            return Err(BivError::config(format!(
                "label std must be positive, got {label_std}"
            )));
        }
        if force_clean || self.kind == "none" {
            return Ok((NoiseSpec::Constant { sigma2: 0.0 }, None));
        }
        let raw = match self.kind.as_str() {
            "constant" => NoiseSpec::Constant {
                sigma2: self.sigma2.expect("validated"),
            },
            "uniform" => NoiseSpec::Uniform {
                mu_p: self.mu_p.expect("validated"),
                v: self.v.expect("validated"),
            },
            "binary_uniform" => NoiseSpec::BinaryUniform {
                mu_p: self.mu_p.expect("validated"),
                p: self.p.expect("validated"),
                v_h: self.v_h.expect("validated"),
                mu_l: self.mu_l.unwrap_or(DEFAULT_MU_L),
            },
            "gamma" => NoiseSpec::Gamma {
                alpha: self.alpha.expect("validated"),
                mu_p: self.mu_p.expect("validated"),
            },
            _ => unreachable!("validated"),
        };
        let spec = raw.scaled(1.0 / (label_std * label_std));
        spec.validate()?;
        let disturbance = if self.d_v > 0.0 {
            Some(VarianceDisturbance::new(self.d_v)?)
        } else {
            None
        };
        Ok((spec, disturbance))
    }
}

impl TrainSection {
    fn validate_fields(&self) -> Result<()> {
        match self.scheme.as_str() {
            "l2" | "iv" | "gt" => {}
            "biv" => {
                if self.epsilon < 0.0 {
                    return Err(BivError::config(format!(
                        "train.epsilon must be >= 0, got {}",
                        self.epsilon
                    )));
                }
                if !(0.001..=1.0).contains(&self.epsilon) {
                    log::warn!(
                        "epsilon {} is outside the usual [0.001, 1] range; proceeding",
                        self.epsilon
                    );
                }
            }
            "cutoff" => {
                let c = self.cutoff_c.ok_or_else(|| {
                    BivError::config("train.cutoff_c is required for the cutoff scheme")
                })?;
                if !(c > 0.0) {
                    return Err(BivError::config(format!(
                        "train.cutoff_c must be > 0, got {c}"
                    )));
                }
            }
            other => {
                return Err(BivError::config(format!(
                    "unknown scheme {other:?}; expected l2, iv, biv, cutoff or gt"
                )));
            }
        }
        match self.optimizer.as_str() {
            "adam" | "sgd" => {}
            other => {
                return Err(BivError::config(format!(
                    "unknown optimizer {other:?}; expected adam or sgd"
                )));
            }
        }
        Ok(())
    }

    /// Scheme in normalized units: the cutoff threshold scales with the label
    /// variance, epsilon is already normalized.
    pub fn to_scheme(&self, label_std: f64) -> Result<WeightingScheme> {
        Ok(match self.scheme.as_str() {
            "l2" | "gt" => WeightingScheme::L2,
            "iv" => WeightingScheme::Iv,
            "biv" => WeightingScheme::Biv {
                epsilon: self.epsilon,
            },
            "cutoff" => {
                let c = self.cutoff_c.expect("validated");
                WeightingScheme::Cutoff {
                    c: c / (label_std * label_std),
                }
            }
            other => return Err(BivError::config(format!("unknown scheme {other:?}"))),
        })
    }

    pub fn to_train_config(&self, label_std: f64) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "sgd" => OptimizerKind::Sgd { lr: self.lr },
            _ => OptimizerKind::Adam(AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps_hat: self.eps_hat,
            }),
        };
        let cfg = TrainConfig {
            scheme: self.to_scheme(label_std)?,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer,
            eval_every: self.eval_every,
            window: self.window,
            hidden: self.hidden.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SweepSection {
    fn validate_fields(&self, noise: &NoiseConfig) -> Result<()> {
        for name in &self.schemes {
            match name.as_str() {
                "l2" | "iv" | "biv" | "cutoff" | "gt" => {}
                other => {
                    return Err(BivError::config(format!("unknown sweep scheme {other:?}")));
                }
            }
        }
        if !self.alphas.is_empty() && noise.kind != "gamma" {
            return Err(BivError::config("sweep.alphas requires gamma noise"));
        }
        if !self.ps.is_empty() && noise.kind != "binary_uniform" {
            return Err(BivError::config("sweep.ps requires binary_uniform noise"));
        }
        if !self.vs.is_empty() && noise.kind != "uniform" {
            return Err(BivError::config("sweep.vs requires uniform noise"));
        }
        if self.d_vs.iter().any(|&d| d < 0.0) {
            return Err(BivError::config("sweep.d_vs entries must be >= 0"));
        }
        if self.batch_sizes.iter().any(|&b| b == 0) {
            return Err(BivError::config(
                "sweep.batch_sizes entries must be positive",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[dataset]
source = "synthetic"
n = 300
d = 6
n_train = 200
n_test = 100

[noise]
kind = "gamma"
mu_p = 0.6
alpha = 1.0

[train]
scheme = "biv"
"#;

    #[test]
    fn parse_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epsilon, 0.05);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.train.optimizer, "adam");
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.window, 35);
        assert_eq!(cfg.train.hidden, vec![100, 50, 20, 10]);
        assert_eq!(cfg.train.eval_every, None);
        assert_eq!(cfg.noise.d_v, 0.0);
        assert!(cfg.sweep.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("seed = 7", "seed = 7\nbogus = 1");
        assert!(parse_config(&bad).is_err());
        let bad = MINIMAL.replace("scheme = \"biv\"", "scheme = \"biv\"\nmystery = true");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = parse_config(MINIMAL).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let again = parse_config(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn hash_ignores_formatting_but_not_content() {
        let a = parse_config(MINIMAL).unwrap();
        let reformatted = MINIMAL.replace("seed = 7", "seed   =   7   # spacing");
        let b = parse_config(&reformatted).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let changed = MINIMAL.replace("mu_p = 0.6", "mu_p = 0.7");
        let c = parse_config(&changed).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 12);
    }

    #[test]
    fn validation_catches_bad_configs() {
        assert!(parse_config(&MINIMAL.replace("\"synthetic\"", "\"parquet\"")).is_err());
        assert!(parse_config(&MINIMAL.replace("\"gamma\"", "\"weird\"")).is_err());
        assert!(parse_config(&MINIMAL.replace("\"biv\"", "\"l3\"")).is_err());
        assert!(parse_config(&MINIMAL.replace("d = 6", "d = 3")).is_err());
        assert!(parse_config(&MINIMAL.replace("n = 300", "n = 250")).is_err());
        // cutoff scheme without a threshold
        assert!(parse_config(&MINIMAL.replace("scheme = \"biv\"", "scheme = \"cutoff\"")).is_err());
        // gamma noise without alpha
        assert!(parse_config(&MINIMAL.replace("alpha = 1.0", "")).is_err());
        // bike without a path
        assert!(
            parse_config(&MINIMAL.replace("source = \"synthetic\"", "source = \"bike\"")).is_err()
        );
    }

    #[test]
    fn experiment_scales_noise_into_normalized_units() {
        let cfg = parse_config(MINIMAL).unwrap();
        let (exp, stats) = cfg.experiment().unwrap();
        let mean = exp.noise.mean_variance();
        assert!((mean - 0.6 / (stats.label_std * stats.label_std)).abs() < 1e-12);
        assert_eq!(exp.n_train, 200);
        assert_eq!(exp.n_test, 100);
        assert!(exp.disturbance.is_none());
    }

    #[test]
    fn gt_scheme_forces_clean_labels() {
        let text = MINIMAL.replace("scheme = \"biv\"", "scheme = \"gt\"");
        let cfg = parse_config(&text).unwrap();
        let (exp, _) = cfg.experiment().unwrap();
        assert_eq!(exp.noise, NoiseSpec::Constant { sigma2: 0.0 });
        assert_eq!(exp.train.scheme, WeightingScheme::L2);
    }

    #[test]
    fn cutoff_threshold_scales_like_a_variance() {
        let text = MINIMAL.replace("scheme = \"biv\"", "scheme = \"cutoff\"\ncutoff_c = 0.6");
        let cfg = parse_config(&text).unwrap();
        let (exp, stats) = cfg.experiment().unwrap();
        match exp.train.scheme {
            WeightingScheme::Cutoff { c } => {
                assert!((c - 0.6 / (stats.label_std * stats.label_std)).abs() < 1e-15);
            }
            other => panic!("unexpected scheme {other:?}"),
        }
    }

    #[test]
    fn sweep_section_parses_and_validates() {
        let text = format!(
            "{MINIMAL}\n[sweep]\nseeds = [0, 1, 2]\nschemes = [\"l2\", \"biv\", \"gt\"]\nepsilons = [0.01, 0.05]\nalphas = [1.0, 0.5]\n"
        );
        let cfg = parse_config(&text).unwrap();
        let sweep = cfg.sweep.unwrap();
        assert_eq!(sweep.seeds, vec![0, 1, 2]);
        assert_eq!(sweep.epsilons, vec![0.01, 0.05]);

        let bad = format!("{MINIMAL}\n[sweep]\nps = [0.5]\n");
        assert!(parse_config(&bad).is_err());
        let bad = format!("{MINIMAL}\n[sweep]\nschemes = [\"zap\"]\n");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn disturbance_comes_from_d_v() {
        let text = MINIMAL.replace("kind = \"gamma\"", "kind = \"gamma\"\nd_v = 1.5");
        let cfg = parse_config(&text).unwrap();
        let (exp, _) = cfg.experiment().unwrap();
        assert!(exp.disturbance.is_some());
    }
}
