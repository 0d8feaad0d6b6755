//! Dataset ingestion and preprocessing: the hourly bike-rental pipeline, whole-set
//! z-normalization with matching rescales for noise quantities, deterministic
//! splits, and a fast synthetic regression generator for pipeline tests.

use std::io::Write;
use std::path::Path;

use crate::error::{BivError, Result};
use crate::rng::{self, tag};

/// Dense regression dataset. `features` is row-major `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub d: usize,
    pub n: usize,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        d: usize,
        labels: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 || d == 0 {
            return Err(BivError::data(
                "dataset needs at least one row and one feature",
            ));
        }
        if features.len() != n * d {
            return Err(BivError::data(format!(
                "{} feature values do not tile {n} rows of width {d}",
                features.len()
            )));
        }
        if feature_names.len() != d {
            return Err(BivError::data(format!(
                "{} names for {d} features",
                feature_names.len()
            )));
        }
        if features.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(BivError::data("dataset contains non-finite values"));
        }
        Ok(Dataset {
            features,
            d,
            n,
            labels,
            feature_names,
        })
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.d..(k + 1) * self.d]
    }

    fn take_rows(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.d);
        let mut labels = Vec::with_capacity(rows.len());
        for &k in rows {
            features.extend_from_slice(self.row(k));
            labels.push(self.labels[k]);
        }
        Dataset {
            features,
            d: self.d,
            n: rows.len(),
            labels,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Mean and population standard deviation of every kept column plus the label,
/// recorded so normalized quantities can be mapped back.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub feature_names: Vec<String>,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
    pub dropped: Vec<String>,
}

fn mean_and_pop_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Centers and scales every feature column and the label to mean 0, population
/// std 1 over the whole dataset. Constant feature columns are dropped with a
/// warning; a constant label is an error.
pub fn normalize(ds: &Dataset) -> Result<(Dataset, NormalizationStats)> {
    let (label_mean, label_std) = mean_and_pop_std(ds.labels.iter().copied(), ds.n);
    if label_std <= 1e-12 * label_mean.abs().max(1.0) {
        return Err(BivError::data("label column is constant"));
    }
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..ds.d {
        let col = (0..ds.n).map(|k| ds.features[k * ds.d + j]);
        let (m, s) = mean_and_pop_std(col, ds.n);
        if s <= 1e-12 * m.abs().max(1.0) {
            log::warn!("dropping constant feature column {:?}", ds.feature_names[j]);
            dropped.push(ds.feature_names[j].clone());
        } else {
            kept.push(j);
            means.push(m);
            stds.push(s);
        }
    }
    if kept.is_empty() {
        return Err(BivError::data("every feature column is constant"));
    }
    let d = kept.len();
    let mut features = Vec::with_capacity(ds.n * d);
    for k in 0..ds.n {
        let row = ds.row(k);
        for (slot, &j) in kept.iter().enumerate() {
            features.push((row[j] - means[slot]) / stds[slot]);
        }
    }
    let labels: Vec<f64> = ds
        .labels
        .iter()
        .map(|&y| (y - label_mean) / label_std)
        .collect();
    let feature_names: Vec<String> = kept.iter().map(|&j| ds.feature_names[j].clone()).collect();
    let stats = NormalizationStats {
        feature_names: feature_names.clone(),
        feature_means: means,
        feature_stds: stds,
        label_mean,
        label_std,
        dropped,
    };
    let out = Dataset {
        features,
        d,
        n: ds.n,
        labels,
        feature_names,
    };
    Ok((out, stats))
}

/// Inverse of `normalize` over the kept columns.
pub fn denormalize(ds: &Dataset, stats: &NormalizationStats) -> Result<Dataset> {
    if ds.d != stats.feature_means.len() {
        return Err(BivError::Shape(format!(
            "dataset has {} columns, stats describe {}",
            ds.d,
            stats.feature_means.len()
        )));
    }
    let mut features = Vec::with_capacity(ds.features.len());
    for k in 0..ds.n {
        let row = ds.row(k);
        for j in 0..ds.d {
            features.push(row[j] * stats.feature_stds[j] + stats.feature_means[j]);
        }
    }
    let labels = ds
        .labels
        .iter()
        .map(|&y| y * stats.label_std + stats.label_mean)
        .collect();
    Dataset::new(features, ds.d, labels, ds.feature_names.clone())
}

/// Rescales noise quantities into normalized-label units: variances and the
/// cutoff threshold divide by label_std^2, epsilon is already given in
/// normalized units and passes through.
pub fn scale_noise_quantities(
    sigma2s: &[f64],
    cutoff_c: f64,
    epsilon_normalized: f64,
    label_std: f64,
) -> Result<(Vec<f64>, f64, f64)> {
    if !(label_std > 0.0) {
        return Err(BivError::config(format!(
            "label std must be positive, got {label_std}"
        )));
    }
    let s2 = label_std * label_std;
    let scaled = sigma2s.iter().map(|&v| v / s2).collect();
    Ok((scaled, cutoff_c / s2, epsilon_normalized))
}

/// Random partition into `n_train` and `n - n_train` rows, deterministic per seed.
pub fn split(ds: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_train >= ds.n {
        return Err(BivError::config(format!(
            "split: n_train {n_train} must lie strictly between 0 and {}",
            ds.n
        )));
    }
    let order = shuffled_indices(ds.n, seed);
    Ok((
        ds.take_rows(&order[..n_train]),
        ds.take_rows(&order[n_train..]),
    ))
}

/// Shuffles once, then takes the first `n_train` rows for training and the last
/// `n_test` for testing. With n_train + n_test = n this is exactly `split`; with
/// fewer it leaves a gap of unused rows, matching setups that subsample a corpus.
pub fn split_subset(
    ds: &Dataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 || n_train + n_test > ds.n {
        return Err(BivError::config(format!(
            "split_subset: {n_train} train + {n_test} test rows from {}",
            ds.n
        )));
    }
    let order = shuffled_indices(ds.n, seed);
    Ok((
        ds.take_rows(&order[..n_train]),
        ds.take_rows(&order[ds.n - n_test..]),
    ))
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, tag::SPLIT);
    rng::shuffle(&mut order, &mut r);
    order
}

// ---- hourly bike-rental pipeline ----

/// One parsed row of the UCI hourly file; only the columns the feature pipeline
/// consumes are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct BikeRecord {
    pub day_index: u32,
    pub yr: u8,
    pub hr: u8,
    pub holiday: u8,
    pub weekday: u8,
    pub workingday: u8,
    pub weathersit: f64,
    pub temp: f64,
    pub atemp: f64,
    pub hum: f64,
    pub windspeed: f64,
    pub cnt: f64,
}

// days since 1970-01-01 for a proleptic Gregorian date
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn parse_day_index(dteday: &str) -> Result<u32> {
    let parts: Vec<&str> = dteday.split('-').collect();
    if parts.len() != 3 {
        return Err(BivError::data(format!("date {dteday:?} is not YYYY-MM-DD")));
    }
    let y: i64 = parts[0]
        .parse()
        .map_err(|_| BivError::data(format!("bad year in {dteday:?}")))?;
    let m: i64 = parts[1]
        .parse()
        .map_err(|_| BivError::data(format!("bad month in {dteday:?}")))?;
    let d: i64 = parts[2]
        .parse()
        .map_err(|_| BivError::data(format!("bad day in {dteday:?}")))?;
    if !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return Err(BivError::data(format!("date {dteday:?} out of range")));
    }
    let idx = days_from_civil(y, m, d) - days_from_civil(2011, 1, 1) + 1;
    if idx < 1 {
        return Err(BivError::data(format!(
            "date {dteday:?} precedes the corpus start"
        )));
    }
    Ok(idx as u32)
}

/// Parses the UCI hourly CSV. Every row must carry the full hourly schema;
/// a malformed row reports its (1-based) data row index.
pub fn load_bike_csv(path: &Path) -> Result<Vec<BikeRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| BivError::data(format!("{}: missing column {name:?}", path.display())))
    };
    let c_dteday = col("dteday")?;
    let c_yr = col("yr")?;
    let c_hr = col("hr")?;
    let c_holiday = col("holiday")?;
    let c_weekday = col("weekday")?;
    let c_workingday = col("workingday")?;
    let c_weathersit = col("weathersit")?;
    let c_temp = col("temp")?;
    let c_atemp = col("atemp")?;
    let c_hum = col("hum")?;
    let c_windspeed = col("windspeed")?;
    let c_cnt = col("cnt")?;

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let rownum = i + 1;
        let row = row.map_err(|e| BivError::data(format!("row {rownum}: {e}")))?;
        let field = |c: usize| -> Result<&str> {
            row.get(c)
                .ok_or_else(|| BivError::data(format!("row {rownum}: short record")))
        };
        let num = |c: usize| -> Result<f64> {
            let t = field(c)?;
            t.parse()
                .map_err(|_| BivError::data(format!("row {rownum}: bad number {t:?}")))
        };
        let small = |c: usize, hi: u8| -> Result<u8> {
            let t = field(c)?;
            let v: u8 = t
                .parse()
                .map_err(|_| BivError::data(format!("row {rownum}: bad value {t:?}")))?;
            if v > hi {
                return Err(BivError::data(format!(
                    "row {rownum}: value {v} above {hi}"
                )));
            }
            Ok(v)
        };
        records.push(BikeRecord {
            day_index: parse_day_index(field(c_dteday)?)
                .map_err(|e| BivError::data(format!("row {rownum}: {e}")))?,
            yr: small(c_yr, 1)?,
            hr: small(c_hr, 23)?,
            holiday: small(c_holiday, 1)?,
            weekday: small(c_weekday, 6)?,
            workingday: small(c_workingday, 1)?,
            weathersit: num(c_weathersit)?,
            temp: num(c_temp)?,
            atemp: num(c_atemp)?,
            hum: num(c_hum)?,
            windspeed: num(c_windspeed)?,
            cnt: num(c_cnt)?,
        });
    }
    if records.is_empty() {
        return Err(BivError::data(format!("{}: no data rows", path.display())));
    }
    Ok(records)
}

/// Date and hour become points on circles: the day index runs over two years at
/// one revolution per year, the hour over one day. Weekday expands to a one-hot
/// vector; season and month are redundant with the date encoding and stay out.
pub fn preprocess_bike(records: &[BikeRecord]) -> Result<Dataset> {
    if records.is_empty() {
        return Err(BivError::data("no records to preprocess"));
    }
    let d = 19;
    let mut names: Vec<String> = vec![
        "yr".into(),
        "date_cos".into(),
        "date_sin".into(),
        "hr_cos".into(),
        "hr_sin".into(),
    ];
    for i in 0..7 {
        names.push(format!("weekday_{i}"));
    }
    for extra in [
        "holiday",
        "workingday",
        "weathersit",
        "temp",
        "atemp",
        "hum",
        "windspeed",
    ] {
        names.push(extra.into());
    }
    let mut features = Vec::with_capacity(records.len() * d);
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let date_angle = (r.day_index as f64 - 1.0) / 730.0 * 4.0 * std::f64::consts::PI;
        let hr_angle = r.hr as f64 / 24.0 * 2.0 * std::f64::consts::PI;
        features.push(r.yr as f64);
        features.push(date_angle.cos());
        features.push(date_angle.sin());
        features.push(hr_angle.cos());
        features.push(hr_angle.sin());
        for i in 0..7u8 {
            features.push(if r.weekday == i { 1.0 } else { 0.0 });
        }
        features.push(r.holiday as f64);
        features.push(r.workingday as f64);
        features.push(r.weathersit);
        features.push(r.temp);
        features.push(r.atemp);
        features.push(r.hum);
        features.push(r.windspeed);
        labels.push(r.cnt);
    }
    Dataset::new(features, d, labels, names)
}

// ---- synthetic generator ----

/// Nonlinear regression target used by the synthetic generator. Defined for
/// d >= 5; extra coordinates do not enter the label.
pub fn friedman_label(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5) * (x[2] - 0.5)
        + 10.0 * x[3]
        + 5.0 * x[4]
}

/// Uniform features on [0,1]^d with the Friedman label, deterministic per seed.
pub fn synthetic_dataset(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d < 5 {
        return Err(BivError::config(format!(
            "synthetic data needs n > 0 and d >= 5, got n={n} d={d}"
        )));
    }
    let mut r = rng::stream(seed, tag::SYNTH);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        for _ in 0..d {
            features.push(rng::uniform01(&mut r));
        }
        labels.push(friedman_label(&features[start..]));
    }
    let names = (0..d).map(|j| format!("x{j}")).collect();
    Dataset::new(features, d, labels, names)
}

// ---- dataset and stats serialization ----

/// Writes `feature_names...,label` rows. `provenance` becomes a leading comment
/// line so every artifact records where it came from.
pub fn write_dataset_csv(path: &Path, ds: &Dataset, provenance: Option<&str>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(p) = provenance {
        writeln!(file, "# {p}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = ds.feature_names.iter().map(|s| s.as_str()).collect();
    header.push("label");
    w.write_record(&header)
        .map_err(|e| BivError::data(e.to_string()))?;
    for k in 0..ds.n {
        let mut rec: Vec<String> = ds.row(k).iter().map(|v| format!("{v:.17e}")).collect();
        rec.push(format!("{:.17e}", ds.labels[k]));
        w.write_record(&rec)
            .map_err(|e| BivError::data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || headers.iter().last() != Some("label") {
        return Err(BivError::data(format!(
            "{}: expected feature columns then a label column",
            path.display()
        )));
    }
    let d = headers.len() - 1;
    let names: Vec<String> = headers.iter().take(d).map(|s| s.to_string()).collect();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| BivError::data(format!("row {}: {e}", i + 1)))?;
        if row.len() != d + 1 {
            return Err(BivError::data(format!(
                "row {}: {} fields, expected {}",
                i + 1,
                row.len(),
                d + 1
            )));
        }
        for (j, t) in row.iter().enumerate() {
            let v: f64 = t
                .parse()
                .map_err(|_| BivError::data(format!("row {}: bad number {t:?}", i + 1)))?;
            if j < d {
                features.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    Dataset::new(features, d, labels, names)
}

/// Stats file schema: `column,mean,std` with one row per kept feature and a
/// final `__label__` row.
pub fn write_stats_csv(
    path: &Path,
    stats: &NormalizationStats,
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
    w.write_record(["column", "mean", "std"])
        .map_err(|e| BivError::data(e.to_string()))?;
    for j in 0..stats.feature_names.len() {
        w.write_record([
            stats.feature_names[j].as_str(),
            &format!("{:.17e}", stats.feature_means[j]),
            &format!("{:.17e}", stats.feature_stds[j]),
        ])
        .map_err(|e| BivError::data(e.to_string()))?;
    }
    w.write_record([
        "__label__",
        &format!("{:.17e}", stats.label_mean),
        &format!("{:.17e}", stats.label_std),
    ])
    .map_err(|e| BivError::data(e.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv(path: &Path) -> Result<NormalizationStats> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| BivError::data(format!("{}: {e}", path.display())))?;
    let mut names = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut label: Option<(f64, f64)> = None;
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| BivError::data(format!("row {}: {e}", i + 1)))?;
        if row.len() != 3 {
            return Err(BivError::data(format!(
                "row {}: expected column,mean,std",
                i + 1
            )));
        }
        let mean: f64 = row[1]
            .parse()
            .map_err(|_| BivError::data(format!("row {}: bad mean {:?}", i + 1, &row[1])))?;
        let std: f64 = row[2]
            .parse()
            .map_err(|_| BivError::data(format!("row {}: bad std {:?}", i + 1, &row[2])))?;
        if &row[0] == "__label__" {
            label = Some((mean, std));
        } else {
            names.push(row[0].to_string());
            means.push(mean);
            stds.push(std);
        }
    }
    let (label_mean, label_std) = label
        .ok_or_else(|| BivError::data(format!("{}: missing __label__ row", path.display())))?;
    Ok(NormalizationStats {
        feature_names: names,
        feature_means: means,
        feature_stds: stds,
        label_mean,
        label_std,
        dropped: Vec::new(),
    })
}
