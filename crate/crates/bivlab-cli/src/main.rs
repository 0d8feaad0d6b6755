//! Command line driver: `prepare` writes the normalized split, `corrupt` injects
//! label noise, `train` runs one model, `sweep` runs a grid across seeds, and
//! `report` renders a sweep summary. Every command reads the same declarative
//! config file; outputs land under `<out>/<config-hash>/` with per-seed file
//! names, and every file starts with a `# config=<hash> seed=<seed>` line.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 diverged run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use bivlab::config::{config_hash, load_config, provenance, NoiseConfig, RunConfig, SweepSection};
use bivlab::data::{read_dataset_csv, write_dataset_csv, write_stats_csv};
use bivlab::error::{BivError, Result};
use bivlab::harness::{
    multi_seed, train, write_metrics_csv, write_summary_csv, Experiment, SummaryRow, TrainConfig,
};
use bivlab::losses::WeightingScheme;
use bivlab::noise::{
    build_noisy_dataset, read_noisy_csv, write_noisy_csv, NoiseSpec, VarianceDisturbance,
};
use bivlab::rng::{self, tag};

#[derive(Parser)]
#[command(
    name = "bivlab",
    version,
    about = "Inverse-variance weighted training for noisy-label regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate the clean dataset, normalize it, write the split
    Prepare(CommonArgs),
    /// Draw per-sample noise variances and corrupt the training labels
    Corrupt(CommonArgs),
    /// Train one model on the corrupted split and write its metrics series
    Train(CommonArgs),
    /// Run the sweep grid across seeds and write a summary table
    Sweep(CommonArgs),
    /// Render the sweep summary of this config as a text table
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run-config TOML file
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; default is BIVLAB_OUT, then the config `out`, then ./runs
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent sweep cells; other commands ignore it
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Corrupt(args) => cmd_corrupt(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    };
    match run {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                BivError::Config(_) => 2,
                _ => 3,
            })
        }
    }
}

/// Everything the commands derive from the arguments once: the validated
/// config, the effective seed, the hash and the run directory.
struct Invocation {
    cfg: RunConfig,
    config_path: PathBuf,
    seed: u64,
    hash: String,
    dir: PathBuf,
}

impl Invocation {
    fn new(args: &CommonArgs) -> Result<Self> {
        let cfg = load_config(&args.config)?;
        let seed = args.seed.unwrap_or(cfg.seed);
        let hash = config_hash(&cfg);
        let root = args
            .out
            .clone()
            .or_else(|| {
                std::env::var("BIVLAB_OUT")
                    .ok()
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
            })
            .or_else(|| cfg.out.clone().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        let dir = root.join(&hash);
        Ok(Invocation {
            cfg,
            config_path: args.config.clone(),
            seed,
            hash,
            dir,
        })
    }

    fn provenance(&self) -> String {
        provenance(&self.hash, self.seed)
    }

    fn train_file(&self) -> PathBuf {
        self.dir.join(format!("train_s{}.csv", self.seed))
    }

    fn test_file(&self) -> PathBuf {
        self.dir.join(format!("test_s{}.csv", self.seed))
    }

    fn noisy_file(&self) -> PathBuf {
        self.dir.join(format!("noisy_s{}.csv", self.seed))
    }

    fn metrics_file(&self) -> PathBuf {
        self.dir.join(format!("metrics_s{}.csv", self.seed))
    }

    fn summary_file(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }

    fn require(&self, path: &Path, produced_by: &str) -> Result<()> {
        if !path.exists() {
            return Err(BivError::data(format!(
                "{} not found; run `bivlab {produced_by} --config {}` first",
                path.display(),
                self.config_path.display()
            )));
        }
        Ok(())
    }
}

fn cmd_prepare(args: &CommonArgs) -> Result<u8> {
    let inv = Invocation::new(args)?;
    let (exp, stats) = inv.cfg.experiment()?;
    let (train_ds, test_ds) = exp.clean_split(inv.seed)?;
    std::fs::create_dir_all(&inv.dir)?;
    let tag_line = inv.provenance();
    write_dataset_csv(&inv.train_file(), &train_ds, Some(&tag_line))?;
    write_dataset_csv(&inv.test_file(), &test_ds, Some(&tag_line))?;
    write_stats_csv(&inv.dir.join("stats.csv"), &stats, Some(&tag_line))?;
    println!(
        "wrote {} ({} rows), {} ({} rows), {}",
        inv.train_file().display(),
        train_ds.n,
        inv.test_file().display(),
        test_ds.n,
        inv.dir.join("stats.csv").display()
    );
    Ok(0)
}

fn cmd_corrupt(args: &CommonArgs) -> Result<u8> {
    let inv = Invocation::new(args)?;
    let (exp, _) = inv.cfg.experiment()?;
    inv.require(&inv.train_file(), "prepare")?;
    let train_ds = read_dataset_csv(&inv.train_file())?;
    let noisy = build_noisy_dataset(
        &train_ds,
        &exp.noise,
        exp.disturbance,
        rng::derive(inv.seed, tag::NOISE),
    )?;
    write_noisy_csv(&noisy, &inv.noisy_file(), Some(&inv.provenance()))?;
    let mean_sigma2 = noisy.iter().map(|s| s.sigma2).sum::<f64>() / noisy.len() as f64;
    println!(
        "wrote {} ({} rows, mean sigma2 {:.4})",
        inv.noisy_file().display(),
        noisy.len(),
        mean_sigma2
    );
    Ok(0)
}

fn cmd_train(args: &CommonArgs) -> Result<u8> {
    let inv = Invocation::new(args)?;
    let (exp, _) = inv.cfg.experiment()?;
    inv.require(&inv.noisy_file(), "corrupt")?;
    inv.require(&inv.test_file(), "prepare")?;
    let samples = read_noisy_csv(&inv.noisy_file())?;
    let test_ds = read_dataset_csv(&inv.test_file())?;
    let metrics = train(&exp.train, &samples, &test_ds, inv.seed)?;
    write_metrics_csv(&inv.metrics_file(), &metrics, Some(&inv.provenance()))?;
    match metrics.min_test_loss {
        Some(min) => println!(
            "wrote {} ({} evaluations); min smoothed test mse {:.6}",
            inv.metrics_file().display(),
            metrics.eval_points.len(),
            min
        ),
        None => println!(
            "wrote {} ({} evaluations)",
            inv.metrics_file().display(),
            metrics.eval_points.len()
        ),
    }
    if metrics.diverged {
        log::warn!("run diverged (non-finite loss); metrics cover the steps before the blowup");
        return Ok(4);
    }
    Ok(0)
}

/// One grid cell: a scheme at one point of the swept axes. `param` is the
/// human-readable key=value list that distinguishes the row in the summary.
struct Cell {
    scheme_name: String,
    param: String,
    scheme: WeightingScheme,
    noise: NoiseSpec,
    disturbance: Option<VarianceDisturbance>,
    batch_size: usize,
}

fn cmd_sweep(args: &CommonArgs) -> Result<u8> {
    let inv = Invocation::new(args)?;
    let sweep = inv
        .cfg
        .sweep
        .clone()
        .ok_or_else(|| BivError::config("sweep requires a [sweep] section in the config"))?;

    let empty = sweep.schemes.is_empty()
        && sweep.epsilons.is_empty()
        && sweep.cutoffs.is_empty()
        && sweep.alphas.is_empty()
        && sweep.ps.is_empty()
        && sweep.vs.is_empty()
        && sweep.d_vs.is_empty()
        && sweep.batch_sizes.is_empty();
    if empty {
        log::warn!("sweep grid is empty, nothing to run");
        return Ok(0);
    }
    let seeds = if sweep.seeds.is_empty() {
        vec![inv.cfg.seed]
    } else {
        sweep.seeds.clone()
    };
    if seeds.len() < 2 {
        return Err(BivError::config(format!(
            "sweeps aggregate across seeds; give at least 2 in sweep.seeds (got {})",
            seeds.len()
        )));
    }

    let (base, stats) = inv.cfg.experiment()?;
    let label_std = stats.label_std;
    let cells = build_cells(&inv.cfg, &sweep, label_std)?;
    log::info!(
        "sweep: {} cells x {} seeds, {} jobs",
        cells.len(),
        seeds.len(),
        args.jobs.max(1)
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| BivError::config(format!("jobs: {e}")))?;
    let rows: Vec<Option<SummaryRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let exp = Experiment {
                    clean: base.clean.clone(),
                    n_train: base.n_train,
                    n_test: base.n_test,
                    noise: cell.noise.clone(),
                    disturbance: cell.disturbance,
                    train: TrainConfig {
                        scheme: cell.scheme,
                        batch_size: cell.batch_size,
                        ..base.train.clone()
                    },
                };
                match multi_seed(&exp, &seeds) {
                    Ok(res) => {
                        log::info!(
                            "cell {} {}: mean {}, {} diverged",
                            cell.scheme_name,
                            cell.param,
                            res.mean_min_loss
                                .map_or("n.a.".into(), |m| format!("{m:.4}")),
                            res.diverged_runs
                        );
                        Some(SummaryRow {
                            scheme: cell.scheme_name.clone(),
                            param: cell.param.clone(),
                            mean_min_loss: res.mean_min_loss,
                            std_min_loss: res.std_min_loss,
                            diverged_runs: res.diverged_runs,
                        })
                    }
                    Err(e) => {
                        log::warn!("cell {} {} failed: {e}", cell.scheme_name, cell.param);
                        None
                    }
                }
            })
            .collect()
    });
    let rows: Vec<SummaryRow> = rows.into_iter().flatten().collect();

    std::fs::create_dir_all(&inv.dir)?;
    let seeds_text = seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let tag_line = format!("config={} seeds={seeds_text}", inv.hash);
    write_summary_csv(&inv.summary_file(), &rows, Some(&tag_line))?;
    println!(
        "wrote {} ({} rows)",
        inv.summary_file().display(),
        rows.len()
    );
    print!("{}", render_table(&rows));
    Ok(0)
}

/// Expands the sweep lists into the Cartesian grid. Axes that are not swept
/// fall back to the single value from the base config; axis tags only appear
/// in `param` for axes that were actually listed.
fn build_cells(cfg: &RunConfig, sweep: &SweepSection, label_std: f64) -> Result<Vec<Cell>> {
    let inv_std2 = 1.0 / (label_std * label_std);
    let schemes = if sweep.schemes.is_empty() {
        vec![cfg.train.scheme.clone()]
    } else {
        sweep.schemes.clone()
    };
    let epsilons = if sweep.epsilons.is_empty() {
        vec![cfg.train.epsilon]
    } else {
        sweep.epsilons.clone()
    };
    let cutoffs = if sweep.cutoffs.is_empty() {
        cfg.train.cutoff_c.map(|c| vec![c]).unwrap_or_default()
    } else {
        sweep.cutoffs.clone()
    };

    // one (tag, noise config) pair per point of the swept distribution axis
    let mut noise_variants: Vec<(String, NoiseConfig)> = Vec::new();
    if !sweep.alphas.is_empty() {
        for &a in &sweep.alphas {
            let mut n = cfg.noise.clone();
            n.alpha = Some(a);
            noise_variants.push((format!("alpha={a}"), n));
        }
    } else if !sweep.ps.is_empty() {
        for &p in &sweep.ps {
            let mut n = cfg.noise.clone();
            n.p = Some(p);
            noise_variants.push((format!("p={p}"), n));
        }
    } else if !sweep.vs.is_empty() {
        for &v in &sweep.vs {
            let mut n = cfg.noise.clone();
            n.v = Some(v);
            noise_variants.push((format!("v={v}"), n));
        }
    } else {
        noise_variants.push((String::new(), cfg.noise.clone()));
    }
    let d_vs = if sweep.d_vs.is_empty() {
        vec![cfg.noise.d_v]
    } else {
        sweep.d_vs.clone()
    };
    let batches = if sweep.batch_sizes.is_empty() {
        vec![cfg.train.batch_size]
    } else {
        sweep.batch_sizes.clone()
    };

    let join_tags = |parts: &[String]| -> String {
        parts
            .iter()
            .filter(|p| !p.is_empty())
            .cloned()
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut cells = Vec::new();
    for scheme_name in &schemes {
        // scheme-level points: biv sweeps epsilon, cutoff sweeps the threshold
        let scheme_points: Vec<(String, WeightingScheme)> = match scheme_name.as_str() {
            "l2" | "gt" => vec![(String::new(), WeightingScheme::L2)],
            "iv" => vec![(String::new(), WeightingScheme::Iv)],
            "biv" => epsilons
                .iter()
                .map(|&epsilon| (format!("eps={epsilon}"), WeightingScheme::Biv { epsilon }))
                .collect(),
            "cutoff" => {
                if cutoffs.is_empty() {
                    return Err(BivError::config(
                        "cutoff in the sweep needs sweep.cutoffs or train.cutoff_c",
                    ));
                }
                cutoffs
                    .iter()
                    .map(|&c| {
                        (
                            format!("c={c}"),
                            WeightingScheme::Cutoff { c: c * inv_std2 },
                        )
                    })
                    .collect()
            }
            other => return Err(BivError::config(format!("unknown sweep scheme {other:?}"))),
        };
        for (scheme_tag, scheme) in &scheme_points {
            if scheme_name == "gt" {
                // gt trains on clean labels, so the noise axes do not apply;
                // emit one cell per batch size only
                for &batch_size in &batches {
                    let batch_tag = if sweep.batch_sizes.is_empty() {
                        String::new()
                    } else {
                        format!("batch={batch_size}")
                    };
                    cells.push(Cell {
                        scheme_name: scheme_name.clone(),
                        param: join_tags(&[scheme_tag.clone(), batch_tag]),
                        scheme: *scheme,
                        noise: NoiseSpec::Constant { sigma2: 0.0 },
                        disturbance: None,
                        batch_size,
                    });
                }
                continue;
            }
            for (noise_tag, noise_cfg) in &noise_variants {
                for &d_v in &d_vs {
                    for &batch_size in &batches {
                        let mut noise_cfg = noise_cfg.clone();
                        noise_cfg.d_v = d_v;
                        let (noise, disturbance) = noise_cfg.to_spec(label_std, false)?;
                        let d_v_tag = if sweep.d_vs.is_empty() {
                            String::new()
                        } else {
                            format!("dv={d_v}")
                        };
                        let batch_tag = if sweep.batch_sizes.is_empty() {
                            String::new()
                        } else {
                            format!("batch={batch_size}")
                        };
                        cells.push(Cell {
                            scheme_name: scheme_name.clone(),
                            param: join_tags(&[
                                scheme_tag.clone(),
                                noise_tag.clone(),
                                d_v_tag,
                                batch_tag,
                            ]),
                            scheme: *scheme,
                            noise,
                            disturbance,
                            batch_size,
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

fn cmd_report(args: &CommonArgs) -> Result<u8> {
    let inv = Invocation::new(args)?;
    let path = inv.summary_file();
    if !path.exists() {
        return Err(BivError::data(format!(
            "{} not found; run `bivlab sweep` with this config first",
            path.display()
        )));
    }
    let rows = bivlab::harness::read_summary_csv(&path)?;
    let first_line = std::fs::read_to_string(&path)?
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();
    let mut text = String::new();
    if let Some(prov) = first_line.strip_prefix("# ") {
        text.push_str(&format!("{prov}\n"));
    }
    text.push_str(&render_table(&rows));
    print!("{text}");
    let report_path = inv.dir.join("report.txt");
    std::fs::write(&report_path, &text)?;
    println!("wrote {}", report_path.display());
    Ok(0)
}

fn render_table(rows: &[SummaryRow]) -> String {
    let fmt_opt = |v: Option<f64>| v.map_or("n.a.".to_string(), |x| format!("{x:.4}"));
    let mut body: Vec<[String; 5]> = vec![[
        "scheme".into(),
        "param".into(),
        "mean_min_loss".into(),
        "std_min_loss".into(),
        "diverged".into(),
    ]];
    for r in rows {
        body.push([
            r.scheme.clone(),
            r.param.clone(),
            fmt_opt(r.mean_min_loss),
            fmt_opt(r.std_min_loss),
            r.diverged_runs.to_string(),
        ]);
    }
    let mut widths = [0usize; 5];
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &body {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &width)| format!("{cell:<width$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
