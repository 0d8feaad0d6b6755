//! Experiment engine: mini-batch training of the MLP under a weighting scheme,
//! ground-truth test tracking with trailing smoothing, divergence flagging, and
//! multi-seed aggregation with paired noise across schemes.

use std::io::Write;
use std::path::Path;

use crate::data::{self, Dataset};
use crate::error::{BivError, Result};
use crate::losses::{batch_loss, WeightingScheme};
use crate::nn::Mlp;
use crate::noise::{build_noisy_dataset, NoiseSpec, NoisySample, VarianceDisturbance};
use crate::optim::{Adam, AdamConfig, Sgd};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam(AdamConfig),
}

impl OptimizerKind {
    fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::Sgd { lr } => {
                Sgd::new(lr)?;
                Ok(())
            }
            OptimizerKind::Adam(cfg) => cfg.validate(),
        }
    }
}

enum Stepper {
    Sgd(Sgd),
    Adam(Adam),
}

impl Stepper {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self {
            Stepper::Sgd(s) => s.step(params, grads),
            Stepper::Adam(a) => a.step(params, grads),
        }
    }
}

/// Hyperparameters of one training run. Defaults mirror the reference setup:
/// batch 256, Adam at 0.001, 100 epochs, hidden widths 100-50-20-10, smoothing
/// window 35, one test evaluation per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scheme: WeightingScheme,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// batches between test evaluations; None evaluates once per epoch
    pub eval_every: Option<usize>,
    pub window: usize,
    /// hidden layer widths; input and output sizes come from the data
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scheme: WeightingScheme::L2,
            epochs: 100,
            batch_size: 256,
            optimizer: OptimizerKind::Adam(AdamConfig::default()),
            eval_every: None,
            window: 35,
            hidden: vec![100, 50, 20, 10],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(BivError::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(BivError::config("batch_size must be at least 1"));
        }
        if self.window == 0 {
            return Err(BivError::config("smoothing window must be at least 1"));
        }
        if self.eval_every == Some(0) {
            return Err(BivError::config("eval_every must be at least 1 when set"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(BivError::config("hidden layer widths must be positive"));
        }
        self.scheme.validate()?;
        self.optimizer.validate()
    }
}

/// One test-loss measurement; the row layout of the per-run metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub samples_seen: u64,
    pub raw_test_mse: f64,
    pub smoothed_test_mse: f64,
    /// mean Kish effective batch size over the interval since the previous
    /// evaluation; 0 when every batch in the interval was skipped
    pub ebs_mean: f64,
    /// cumulative count of cutoff batches skipped for being empty
    pub skipped_batches: u64,
}

/// Everything a run produces. Minima are over the smoothed series against
/// ground-truth labels; a diverged run keeps whatever it measured before the
/// first non-finite training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub eval_points: Vec<EvalPoint>,
    pub min_test_loss: Option<f64>,
    pub min_raw_test_loss: Option<f64>,
    pub skipped_batches: u64,
    pub diverged: bool,
    pub ebs_trace: Vec<f64>,
}

/// Trailing moving average: entry i is the mean of the last min(window, i+1)
/// raw values, so early entries average partial windows.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(BivError::config("moving average window must be at least 1"));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for i in 0..series.len() {
        acc += series[i];
        if i >= window {
            acc -= series[i - window];
        }
        let span = (i + 1).min(window);
        out.push(acc / span as f64);
    }
    Ok(out)
}

fn test_mse(model: &Mlp, test: &Dataset) -> Result<f64> {
    let preds = model.predict(&test.features, test.n)?;
    let mut acc = 0.0;
    for (p, y) in preds.iter().zip(&test.labels) {
        let r = p - y;
        acc += r * r;
    }
    Ok(acc / test.n as f64)
}

/// Trains on corrupted samples and tracks ground-truth test error. The model is
/// seeded from the run seed; each epoch reshuffles the sample order; a cutoff
/// batch with no surviving sample is skipped and counted; a non-finite training
/// loss stops the run with the diverged flag set.
pub fn train(
    cfg: &TrainConfig,
    samples: &[NoisySample],
    test: &Dataset,
    seed: u64,
) -> Result<RunMetrics> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(BivError::data("no training samples"));
    }
    let d = test.d;
    if samples.iter().any(|s| s.features.len() != d) {
        return Err(BivError::Shape(
            "train and test feature widths differ".into(),
        ));
    }
    let mut sizes = Vec::with_capacity(cfg.hidden.len() + 2);
    sizes.push(d);
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut model = Mlp::new(&sizes)?;
    model.init_he(&mut rng::stream(seed, tag::INIT));
    let mut opt = match cfg.optimizer {
        OptimizerKind::Sgd { lr } => Stepper::Sgd(Sgd::new(lr)?),
        OptimizerKind::Adam(acfg) => Stepper::Adam(Adam::new(model.param_count(), acfg)?),
    };

    let n = samples.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let eval_every = cfg.eval_every.unwrap_or(batches_per_epoch);

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(seed, tag::SHUFFLE);

    let mut samples_seen = 0u64;
    let mut skipped = 0u64;
    let mut since_eval = 0usize;
    let mut interval_ebs: Vec<f64> = Vec::new();
    let mut ebs_trace: Vec<f64> = Vec::new();
    let mut raw_series: Vec<f64> = Vec::new();
    let mut points: Vec<EvalPoint> = Vec::new();
    let mut diverged = false;

    let mut x_buf: Vec<f64> = Vec::with_capacity(cfg.batch_size * d);
    let mut y_buf: Vec<f64> = Vec::with_capacity(cfg.batch_size);
    let mut s2_buf: Vec<f64> = Vec::with_capacity(cfg.batch_size);

    'epochs: for _ in 0..cfg.epochs {
        rng::shuffle(&mut order, &mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            x_buf.clear();
            y_buf.clear();
            s2_buf.clear();
            for &k in chunk {
                let s = &samples[k];
                x_buf.extend_from_slice(&s.features);
                y_buf.push(s.noisy_label);
                s2_buf.push(s.sigma2);
            }
            samples_seen += chunk.len() as u64;
            since_eval += 1;

            let fwd = model.forward(&x_buf, chunk.len())?;
            match batch_loss(cfg.scheme, fwd.predictions(), &y_buf, &s2_buf) {
                Ok(res) => {
                    if !res.loss.is_finite() {
                        diverged = true;
                    } else {
                        interval_ebs.push(res.effective_batch_size);
                        ebs_trace.push(res.effective_batch_size);
                        let grads = model.backward(&fwd, &res.grad)?;
                        opt.step(model.params_mut(), &grads)?;
                    }
                }
                Err(BivError::EmptyCutoffBatch) => skipped += 1,
                Err(e) => return Err(e),
            }
            if diverged {
                break 'epochs;
            }

            if since_eval == eval_every {
                since_eval = 0;
                let raw = test_mse(&model, test)?;
                raw_series.push(raw);
                let ebs_mean = if interval_ebs.is_empty() {
                    0.0
                } else {
                    interval_ebs.iter().sum::<f64>() / interval_ebs.len() as f64
                };
                interval_ebs.clear();
                points.push(EvalPoint {
                    samples_seen,
                    raw_test_mse: raw,
                    smoothed_test_mse: 0.0,
                    ebs_mean,
                    skipped_batches: skipped,
                });
            }
        }
    }

    let smoothed = moving_average(&raw_series, cfg.window)?;
    for (p, &s) in points.iter_mut().zip(&smoothed) {
        p.smoothed_test_mse = s;
    }
    let min_test_loss = smoothed
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(None, min_fold);
    let min_raw_test_loss = raw_series
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(None, min_fold);

    Ok(RunMetrics {
        eval_points: points,
        min_test_loss,
        min_raw_test_loss,
        skipped_batches: skipped,
        diverged,
        ebs_trace,
    })
}

fn min_fold(acc: Option<f64>, v: f64) -> Option<f64> {
    Some(match acc {
        Some(a) if a <= v => a,
        _ => v,
    })
}

/// A full experiment: a clean normalized dataset, the split sizes, the noise to
/// inject (in normalized label units), and the training hyperparameters. A run
/// seed determines the split, the corruption, the model init and the shuffles.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub clean: Dataset,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: NoiseSpec,
    pub disturbance: Option<VarianceDisturbance>,
    pub train: TrainConfig,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        if self.n_train + self.n_test > self.clean.n {
            return Err(BivError::config(format!(
                "{} train + {} test rows exceed the {} available",
                self.n_train, self.n_test, self.clean.n
            )));
        }
        self.noise.validate()?;
        self.train.validate()
    }

    /// Train/test split for one seed, before any corruption. Rows not covered by
    /// n_train + n_test are dropped from the shuffled tail.
    pub fn clean_split(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.n_train + self.n_test == self.clean.n {
            data::split(&self.clean, self.n_train, seed)
        } else {
            data::split_subset(&self.clean, self.n_train, self.n_test, seed)
        }
    }

    /// Split and corruption for one seed. Every scheme trained at this seed sees
    /// the bit-identical noisy training set because the noise stream is derived
    /// from the seed alone, never from the scheme.
    pub fn corrupted_split(&self, seed: u64) -> Result<(Vec<NoisySample>, Dataset)> {
        let (train_clean, test) = self.clean_split(seed)?;
        let noisy = build_noisy_dataset(
            &train_clean,
            &self.noise,
            self.disturbance,
            rng::derive(seed, tag::NOISE),
        )?;
        Ok((noisy, test))
    }

    pub fn run_one(&self, seed: u64) -> Result<RunMetrics> {
        self.validate()?;
        let (noisy, test) = self.corrupted_split(seed)?;
        train(&self.train, &noisy, &test, seed)
    }
}

/// Mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Multi-seed outcome. Diverged runs are excluded from the aggregate; when every
/// seed diverges the mean and std are absent and the table renders N.A.
#[derive(Debug, Clone)]
pub struct MultiSeedResult {
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub completed_mins: Vec<f64>,
    pub mean_min_loss: Option<f64>,
    pub std_min_loss: Option<f64>,
    pub diverged_runs: usize,
}

pub fn multi_seed(exp: &Experiment, seeds: &[u64]) -> Result<MultiSeedResult> {
    if seeds.len() < 2 {
        return Err(BivError::config(
            "multi-seed aggregation needs at least 2 seeds",
        ));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        runs.push(exp.run_one(seed)?);
    }
    Ok(summarize(seeds.to_vec(), runs))
}

fn summarize(seeds: Vec<u64>, runs: Vec<RunMetrics>) -> MultiSeedResult {
    let mut mins = Vec::new();
    let mut diverged = 0usize;
    for r in &runs {
        if r.diverged {
            diverged += 1;
        } else if let Some(m) = r.min_test_loss {
            mins.push(m);
        }
    }
    let (mean, std) = if mins.is_empty() {
        (None, None)
    } else {
        let (m, s) = aggregate(&mins);
        (Some(m), Some(s))
    };
    MultiSeedResult {
        seeds,
        runs,
        completed_mins: mins,
        mean_min_loss: mean,
        std_min_loss: std,
        diverged_runs: diverged,
    }
}

/// Runs every scheme over the same seeds. The paired-noise discipline comes for
/// free: the corruption depends on the seed but not on the scheme.
pub fn compare_schemes(
    base: &Experiment,
    schemes: &[WeightingScheme],
    seeds: &[u64],
) -> Result<Vec<(WeightingScheme, MultiSeedResult)>> {
    let mut out = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let mut exp = base.clone();
        exp.train.scheme = scheme;
        out.push((scheme, multi_seed(&exp, seeds)?));
    }
    Ok(out)
}

/// One row of the comparison summary CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: String,
    pub param: String,
    pub mean_min_loss: Option<f64>,
    pub std_min_loss: Option<f64>,
    pub diverged_runs: usize,
}

pub fn summary_rows(results: &[(WeightingScheme, MultiSeedResult)]) -> Vec<SummaryRow> {
    results
        .iter()
        .map(|(scheme, agg)| {
            let (scheme, param) = scheme.label();
            SummaryRow {
                scheme,
                param,
                mean_min_loss: agg.mean_min_loss,
                std_min_loss: agg.std_min_loss,
                diverged_runs: agg.diverged_runs,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.17e}"),
        None => "N.A.".into(),
    }
}

/// Per-run metrics CSV: `samples_seen,raw_test_mse,smoothed_test_mse,ebs_mean,skipped_batches`.
pub fn write_metrics_csv(
    path: &Path,
    metrics: &RunMetrics,
    provenance: Option<&str>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(p) = provenance {
        writeln!(file, "# {p}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "samples_seen",
        "raw_test_mse",
        "smoothed_test_mse",
        "ebs_mean",
        "skipped_batches",
    ])
    .map_err(|e| BivError::data(e.to_string()))?;
    for p in &metrics.eval_points {
        w.write_record([
            p.samples_seen.to_string(),
            format!("{:.17e}", p.raw_test_mse),
            format!("{:.17e}", p.smoothed_test_mse),
            format!("{:.17e}", p.ebs_mean),
            p.skipped_batches.to_string(),
        ])
        .map_err(|e| BivError::data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EvalPoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| BivError::data(format!("row {}: {e}", i + 1)))?;
        if row.len() != 5 {
            return Err(BivError::data(format!("row {}: expected 5 fields", i + 1)));
        }
        let parse_f = |j: usize| -> Result<f64> {
            row[j]
                .parse()
                .map_err(|_| BivError::data(format!("row {}: bad number {:?}", i + 1, &row[j])))
        };
        let parse_u = |j: usize| -> Result<u64> {
            row[j]
                .parse()
                .map_err(|_| BivError::data(format!("row {}: bad count {:?}", i + 1, &row[j])))
        };
        out.push(EvalPoint {
            samples_seen: parse_u(0)?,
            raw_test_mse: parse_f(1)?,
            smoothed_test_mse: parse_f(2)?,
            ebs_mean: parse_f(3)?,
            skipped_batches: parse_u(4)?,
        });
    }
    Ok(out)
}

/// Comparison summary CSV: `scheme,param,mean_min_loss,std_min_loss,diverged_runs`.
/// Fully diverged rows carry N.A. in the loss columns.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow], provenance: Option<&str>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(p) = provenance {
        writeln!(file, "# {p}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "scheme",
        "param",
        "mean_min_loss",
        "std_min_loss",
        "diverged_runs",
    ])
    .map_err(|e| BivError::data(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.param.clone(),
            fmt_opt(r.mean_min_loss),
            fmt_opt(r.std_min_loss),
            r.diverged_runs.to_string(),
        ])
        .map_err(|e| BivError::data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| BivError::data(format!("row {}: {e}", i + 1)))?;
        if row.len() != 5 {
            return Err(BivError::data(format!("row {}: expected 5 fields", i + 1)));
        }
        let parse_opt = |j: usize| -> Result<Option<f64>> {
            if &row[j] == "N.A." {
                return Ok(None);
            }
            row[j]
                .parse()
                .map(Some)
                .map_err(|_| BivError::data(format!("row {}: bad number {:?}", i + 1, &row[j])))
        };
        out.push(SummaryRow {
            scheme: row[0].to_string(),
            param: row[1].to_string(),
            mean_min_loss: parse_opt(2)?,
            std_min_loss: parse_opt(3)?,
            diverged_runs: row[4]
                .parse()
                .map_err(|_| BivError::data(format!("row {}: bad count {:?}", i + 1, &row[4])))?,
        });
    }
    Ok(out)
}
