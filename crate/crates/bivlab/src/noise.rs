//! Label-noise model: per-sample noise variances drawn from a distribution over
//! variances, Gaussian label corruption, and an optional disturbance that models
//! error in the variance estimates themselves.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{BivError, Result};
use crate::rng;

/// Distribution over per-sample noise variances.
///
/// All parameters are in squared label units; `scaled` converts between raw and
/// normalized label spaces.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// Every sample gets the same variance. `Constant { sigma2: 0.0 }` reproduces
    /// clean labels and is the ground-truth baseline.
    Constant { sigma2: f64 },
    /// Uniform on bounds derived from the mean `mu_p` and variance-of-variances `v`.
    Uniform { mu_p: f64, v: f64 },
    /// Two-regime mixture: with probability `p` a low-noise variance uniform on
    /// [0, 2*mu_l], otherwise a high-noise variance uniform around the mean that
    /// keeps the mixture mean at `mu_p`.
    BinaryUniform {
        mu_p: f64,
        p: f64,
        v_h: f64,
        mu_l: f64,
    },
    /// Gamma with shape `alpha` and rate `alpha / mu_p`, so the mean is `mu_p`.
    Gamma { alpha: f64, mu_p: f64 },
}

/// Default mean of the low-noise regime: uniform on [0, 1].
pub const DEFAULT_MU_L: f64 = 0.5;

/// Bounds (a, b) of the uniform variance distribution with mean `mu_p` and
/// variance `v`. Requires v <= mu_p^2 / 3 so that a >= 0.
pub fn uniform_bounds(mu_p: f64, v: f64) -> Result<(f64, f64)> {
    if !(mu_p > 0.0) {
        return Err(BivError::config(format!(
            "uniform noise: mu_p must be > 0, got {mu_p}"
        )));
    }
    if !(0.0..=mu_p * mu_p / 3.0).contains(&v) {
        return Err(BivError::config(format!(
            "uniform noise: v must lie in [0, mu_p^2/3] = [0, {}], got {v}",
            mu_p * mu_p / 3.0
        )));
    }
    let half_width = (3.0 * v).sqrt();
    Ok((mu_p - half_width, mu_p + half_width))
}

/// High-regime bounds (a_h, b_h) of the binary-uniform mixture. The high-regime
/// mean mu_h is chosen so that p*mu_l + (1-p)*mu_h = mu_p.
pub fn binary_high_regime(mu_p: f64, p: f64, mu_l: f64, v_h: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&p) {
        return Err(BivError::config(format!(
            "binary noise: p must lie in [0, 1), got {p}"
        )));
    }
    if mu_l < 0.0 || v_h < 0.0 {
        return Err(BivError::config(
            "binary noise: mu_l and v_h must be nonnegative".to_string(),
        ));
    }
    if mu_p <= p * mu_l {
        return Err(BivError::config(format!(
            "binary noise: mu_p must exceed p*mu_l = {}, got {mu_p}",
            p * mu_l
        )));
    }
    let mu_h = (mu_p - p * mu_l) / (1.0 - p);
    let half_width = (3.0 * v_h).sqrt();
    if mu_h - half_width < 0.0 {
        return Err(BivError::config(format!(
            "binary noise: v_h {v_h} pushes the high regime below zero (mu_h = {mu_h})"
        )));
    }
    Ok((mu_h - half_width, mu_h + half_width))
}

impl NoiseSpec {
    /// Checks the parameter ranges; every sampled variance is then guaranteed >= 0.
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Constant { sigma2 } => {
                if sigma2 < 0.0 {
                    return Err(BivError::config(format!(
                        "constant noise: sigma2 must be >= 0, got {sigma2}"
                    )));
                }
            }
            NoiseSpec::Uniform { mu_p, v } => {
                uniform_bounds(mu_p, v)?;
            }
            NoiseSpec::BinaryUniform { mu_p, p, v_h, mu_l } => {
                binary_high_regime(mu_p, p, mu_l, v_h)?;
            }
            NoiseSpec::Gamma { alpha, mu_p } => {
                if !(alpha > 0.0) || !(mu_p > 0.0) {
                    return Err(BivError::config(format!(
                        "gamma noise: alpha and mu_p must be > 0, got alpha={alpha} mu_p={mu_p}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean of the variance distribution.
    pub fn mean_variance(&self) -> f64 {
        match *self {
            NoiseSpec::Constant { sigma2 } => sigma2,
            NoiseSpec::Uniform { mu_p, .. } => mu_p,
            NoiseSpec::BinaryUniform { mu_p, .. } => mu_p,
            NoiseSpec::Gamma { mu_p, .. } => mu_p,
        }
    }

    /// The same distribution with every variance multiplied by `factor`.
    ///
    /// Scaling a variance by c scales a variance-of-variances by c^2. Used to move
    /// raw-label-unit specs into normalized label space with factor = 1 / std^2.
    pub fn scaled(&self, factor: f64) -> NoiseSpec {
        match *self {
            NoiseSpec::Constant { sigma2 } => NoiseSpec::Constant {
                sigma2: sigma2 * factor,
            },
            NoiseSpec::Uniform { mu_p, v } => NoiseSpec::Uniform {
                mu_p: mu_p * factor,
                v: v * factor * factor,
            },
            NoiseSpec::BinaryUniform { mu_p, p, v_h, mu_l } => NoiseSpec::BinaryUniform {
                mu_p: mu_p * factor,
                p,
                v_h: v_h * factor * factor,
                mu_l: mu_l * factor,
            },
            NoiseSpec::Gamma { alpha, mu_p } => NoiseSpec::Gamma {
                alpha,
                mu_p: mu_p * factor,
            },
        }
    }

    /// One draw from the variance distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Constant { sigma2 } => sigma2,
            NoiseSpec::Uniform { mu_p, v } => {
                let (a, b) = uniform_bounds(mu_p, v).expect("validated spec");
                a + (b - a) * rng::uniform01(rng)
            }
            NoiseSpec::BinaryUniform { mu_p, p, v_h, mu_l } => {
                let (a_h, b_h) = binary_high_regime(mu_p, p, mu_l, v_h).expect("validated spec");
                if rng::uniform01(rng) < p {
                    2.0 * mu_l * rng::uniform01(rng)
                } else {
                    a_h + (b_h - a_h) * rng::uniform01(rng)
                }
            }
            NoiseSpec::Gamma { alpha, mu_p } => gamma_sample(alpha, mu_p / alpha, rng),
        }
    }
}

/// Gamma(shape, scale) draw via Marsaglia-Tsang rejection.
///
/// For shape >= 1 the candidate d*v^3 with v = (1 + c*x)^... is accepted on the
/// log test alone (no squeeze step). Shapes below 1 are boosted: draw at
/// shape + 1, multiply by U^(1/shape).
pub fn gamma_sample<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    assert!(
        shape > 0.0 && scale > 0.0,
        "gamma_sample requires positive shape and scale"
    );
    if shape < 1.0 {
        let boost = rng::uniform01(rng).powf(1.0 / shape);
        return gamma_sample(shape + 1.0, scale, rng) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng::standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u = rng::uniform01(rng);
        // ln(0) = -inf accepts unconditionally; the event has probability 2^-53 and
        // the acceptance region covers it in the limit.
        if u.ln() < 0.5 * x * x + d * (1.0 - v3 + v3.ln()) {
            return d * v3 * scale;
        }
    }
}

/// Draws y + delta with delta ~ N(0, sigma2).
pub fn corrupt_label<R: Rng + ?Sized>(y: f64, sigma2: f64, rng: &mut R) -> f64 {
    debug_assert!(sigma2 >= 0.0);
    y + sigma2.sqrt() * rng::standard_normal(rng)
}

/// Noise applied to the variance estimates themselves.
///
/// The disturbed estimate is |sigma2 + delta| with delta ~ N(0, (d_v * sigma2 / 3)^2),
/// so d_v = 1 places -sigma2 at three standard deviations and the fold to positive
/// values is a 0.13% event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDisturbance {
    pub d_v: f64,
}

impl VarianceDisturbance {
    pub fn new(d_v: f64) -> Result<Self> {
        if d_v < 0.0 {
            return Err(BivError::config(format!(
                "variance disturbance: d_v must be >= 0, got {d_v}"
            )));
        }
        Ok(VarianceDisturbance { d_v })
    }
}

/// |sigma2 + delta| with std(delta) = d_v * sigma2 / 3. Identity at d_v = 0.
pub fn disturb_variance<R: Rng + ?Sized>(sigma2: f64, d: VarianceDisturbance, rng: &mut R) -> f64 {
    if d.d_v == 0.0 {
        return sigma2;
    }
    let std = d.d_v * sigma2 / 3.0;
    (sigma2 + std * rng::standard_normal(rng)).abs()
}

/// One training triplet plus the retained clean label.
///
/// `sigma2` is the variance reported to the trainer (the disturbed estimate when a
/// disturbance is active); corruption always uses the true sampled variance.
/// `true_label` exists for ground-truth evaluation only and must never feed a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub features: Vec<f64>,
    pub sigma2: f64,
    pub noisy_label: f64,
    pub true_label: f64,
}

/// Corrupts every sample of `clean`. Sample k draws from its own stream under
/// `seed`, so the result is independent of generation order.
pub fn build_noisy_dataset(
    clean: &Dataset,
    spec: &NoiseSpec,
    disturbance: Option<VarianceDisturbance>,
    seed: u64,
) -> Result<Vec<NoisySample>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(clean.n);
    for k in 0..clean.n {
        let mut rng = rng::stream(seed, k as u64);
        let sigma2 = spec.sample(&mut rng);
        debug_assert!(sigma2 >= 0.0);
        let y = clean.labels[k];
        if !y.is_finite() {
            return Err(BivError::data(format!("non-finite label at row {k}")));
        }
        let noisy_label = corrupt_label(y, sigma2, &mut rng);
        let stored = match disturbance {
            Some(d) => disturb_variance(sigma2, d, &mut rng),
            None => sigma2,
        };
        out.push(NoisySample {
            features: clean.row(k).to_vec(),
            sigma2: stored,
            noisy_label,
            true_label: y,
        });
    }
    Ok(out)
}

/// Writes `feature_0..feature_{d-1},sigma2,noisy_label,true_label` rows. An optional
/// provenance string becomes a leading `#` comment line.
pub fn write_noisy_csv(
    samples: &[NoisySample],
    path: &Path,
    provenance: Option<&str>,
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(p) = provenance {
        writeln!(file, "# {p}")?;
    }
    let d = samples.first().map_or(0, |s| s.features.len());
    let mut header: Vec<String> = (0..d).map(|i| format!("feature_{i}")).collect();
    header.extend(["sigma2".into(), "noisy_label".into(), "true_label".into()]);
    writeln!(file, "{}", header.join(","))?;
    for s in samples {
        let mut row: Vec<String> = s.features.iter().map(|v| format!("{v:.17e}")).collect();
        row.push(format!("{:.17e}", s.sigma2));
        row.push(format!("{:.17e}", s.noisy_label));
        row.push(format!("{:.17e}", s.true_label));
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_noisy_csv(path: &Path) -> Result<Vec<NoisySample>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?
        .clone();
    let d = headers.len().checked_sub(3).ok_or_else(|| {
        BivError::data(format!("{}: expected at least 4 columns", path.display()))
    })?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| BivError::data(format!("{} row {i}: {e}", path.display())))?;
        let parse = |field: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| {
                BivError::data(format!("{} row {i}: bad number {field:?}", path.display()))
            })
        };
        let mut features = Vec::with_capacity(d);
        for j in 0..d {
            features.push(parse(&record[j])?);
        }
        out.push(NoisySample {
            features,
            sigma2: parse(&record[d])?,
            noisy_label: parse(&record[d + 1])?,
            true_label: parse(&record[d + 2])?,
        });
    }
    Ok(out)
}
