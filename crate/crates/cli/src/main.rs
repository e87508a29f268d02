//! `eigfree`: runs the plane, PnP and two-view experiments and writes CSV
//! traces, SVG plots and a JSON echo of the resolved configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use eigfree_core::harness::epipolar::{make_problems, EpipolarConfig};
use eigfree_core::harness::plane::{default_grid, PlaneOutcome};
use eigfree_core::harness::pnp::PnpProblem;
use eigfree_core::harness::report::{emit_sweep, emit_trace, write_config_echo, write_file};
use eigfree_core::harness::{
    derive_seed, run_epipolar_experiment, run_plane_grid, run_pnp_sweep, weight_auc, Method,
    PlaneConfig, PnpSweepConfig,
};
use eigfree_core::loss::LossConfig;
use eigfree_core::net::{train, Instance, TrainConfig, TrainLoss, WeightNet};
use eigfree_core::optim::OptimizerKind;
use eigfree_core::synth::gen_pnp;
use eigfree_core::{RowForm, SplitMix64};

#[derive(Parser, Debug)]
#[command(name = "eigfree", version, about = "Eigendecomposition-free loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-point weight optimization on the plane-fitting scene.
    Plane(Common),
    /// PnP robustness sweep against plain DLT and RANSAC+DLT.
    PnpSweep(Common),
    /// Train the weight network on two-view scenes and score poses by mAP.
    Epipolar(EpipolarArgs),
    /// Train the weight network on one problem and save a checkpoint.
    Train(TrainArgs),
}

/// Flags shared by every subcommand. Unset values fall back to each
/// experiment's defaults.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Loss: eigfree or eig_svd_baseline.
    #[arg(long, default_value = "eigfree")]
    method: Method,
    /// gd or adam.
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// Learning rate. The plane experiment sweeps its grid when unset.
    #[arg(long)]
    lr: Option<f64>,
    /// Optimization steps per instance; epochs for network training.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight of the anti-collapse term.
    #[arg(long)]
    alpha: Option<f64>,
    /// Rate inside the anti-collapse exponential.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Trials per outlier count (PnP); held-out instances (networks).
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated outlier counts. For training, a `min,max` range.
    #[arg(long, value_delimiter = ',')]
    outliers: Option<Vec<usize>>,
    /// Essential-matrix row layout: paper or classical.
    #[arg(long)]
    row_form: Option<RowForm>,
}

impl Common {
    fn loss(&self, default: LossConfig) -> Result<LossConfig> {
        Ok(LossConfig::new(
            self.alpha.unwrap_or(default.alpha),
            self.beta.unwrap_or(default.beta),
        )?)
    }

    fn outlier_range(&self, default: (usize, usize)) -> Result<(usize, usize)> {
        match self.outliers.as_deref() {
            None => Ok(default),
            Some([n]) => Ok((*n, *n)),
            Some([lo, hi]) if lo <= hi => Ok((*lo, *hi)),
            Some(other) => bail!("--outliers expects one count or a min,max range, got {other:?}"),
        }
    }
}

#[derive(Args, Debug, Clone)]
struct EpipolarArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 500)]
    train_size: usize,
    /// Outliers per instance of the contaminated test set.
    #[arg(long)]
    test_outliers: Option<usize>,
    /// Skip training the eigendecomposition-based comparison network.
    #[arg(long)]
    no_baseline: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Problem {
    Pnp,
    Essential,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "essential")]
    problem: Problem,
    /// Training instances.
    #[arg(long, default_value_t = 500)]
    instances: usize,
    /// Correspondences per instance.
    #[arg(long)]
    points: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plane(c) => plane(c),
        Command::PnpSweep(c) => pnp_sweep(c),
        Command::Epipolar(a) => epipolar(a),
        Command::Train(a) => train_cmd(a),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("{failed} run(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn echo(out: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    write_config_echo(&out.join(name), value).with_context(|| format!("writing {name}"))
}

/// Returns the number of failed runs.
fn plane(c: &Common) -> Result<usize> {
    let iters = c.iters.unwrap_or(5000);
    let base = PlaneConfig {
        method: c.method,
        optimizer: c.optimizer.unwrap_or(OptimizerKind::Adam),
        iters,
        seed: c.seed,
        loss: c.loss(LossConfig::PLANE)?,
        // Long runs keep about ten thousand records.
        record_every: (iters / 10_000).max(1),
        ..PlaneConfig::default()
    };
    let grid: Vec<f64> = c.lr.map_or_else(|| default_grid().to_vec(), |lr| vec![lr]);
    let outlier_counts = c.outliers.clone().unwrap_or_else(|| vec![1]);
    echo(
        &c.out,
        "config.json",
        &json!({ "command": "plane", "base": base, "lr_grid": grid, "outliers": outlier_counts }),
    )?;
    let mut failed = 0;
    let mut summary = Vec::new();
    for &n_out in &outlier_counts {
        let cfg = PlaneConfig {
            n_outliers: n_out,
            ..base
        };
        let (outcomes, best) = match run_plane_grid(&cfg, &grid) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("plane with {n_out} outliers: {e}");
                failed += 1;
                continue;
            }
        };
        for (i, o) in outcomes.iter().enumerate() {
            let stem = format!("plane_{}_out{n_out}_lr{}", c.method, o.trace.header.lr);
            emit_trace(&o.trace, &c.out, &stem)?;
            summary.push(plane_summary(o, n_out, i == best));
            println!(
                "{stem}: normal error {:.4} deg, misclassified {}, switching events {}{}",
                o.normal_error_deg,
                o.misclassified,
                o.trace.switching_events.len(),
                if i == best { " (best)" } else { "" }
            );
        }
    }
    echo(&c.out, "summary.json", &json!(summary))?;
    Ok(failed)
}

fn plane_summary(o: &PlaneOutcome, n_out: usize, best: bool) -> serde_json::Value {
    json!({
        "outliers": n_out,
        "lr": o.trace.header.lr,
        "best": best,
        "final_loss": o.trace.final_loss(),
        "normal_error_deg": o.normal_error_deg,
        "misclassified": o.misclassified,
        "min_inlier_weight": o.min_inlier_weight(),
        "max_outlier_weight": o.max_outlier_weight(),
        "rank_changes": o.trace.rank_changes,
        "switching_events": o.trace.switching_events,
        "degenerate_skips": o.trace.degenerate_skips,
    })
}

fn pnp_sweep(c: &Common) -> Result<usize> {
    let d = PnpSweepConfig::default();
    let cfg = PnpSweepConfig {
        method: c.method,
        optimizer: c.optimizer.unwrap_or(d.optimizer),
        lr: c.lr.unwrap_or(d.lr),
        iters: c.iters.unwrap_or(d.iters),
        outliers: c.outliers.clone().unwrap_or(d.outliers.clone()),
        trials: c.trials.unwrap_or(d.trials),
        loss: c.loss(d.loss)?,
        seed: c.seed,
        ..d
    };
    echo(&c.out, "config.json", &json!({ "command": "pnp-sweep", "config": cfg }))?;
    let results = run_pnp_sweep(&cfg)?;
    emit_sweep(&results, &c.out, "pnp_sweep")?;
    for r in &results {
        for row in &r.rows {
            println!(
                "{:>16} outliers {:>4}: rotation {:.3} deg, translation {:.4}, failures {}",
                r.method,
                row.outlier_count,
                row.rotation_error_deg,
                row.translation_error_norm,
                row.failures
            );
        }
    }
    Ok(0)
}

fn epipolar(a: &EpipolarArgs) -> Result<usize> {
    let c = &a.common;
    let d = EpipolarConfig::default();
    let cfg = EpipolarConfig {
        train_size: a.train_size,
        test_size: c.trials.unwrap_or(d.test_size),
        train_outliers: c.outlier_range(d.train_outliers)?,
        test_outliers: a.test_outliers.unwrap_or(d.test_outliers),
        row_form: c.row_form.unwrap_or(d.row_form),
        loss: c.loss(d.loss)?,
        train: TrainConfig {
            lr: c.lr.unwrap_or(d.train.lr),
            epochs: c.iters.unwrap_or(d.train.epochs),
            seed: c.seed,
            ..d.train
        },
        baseline: !a.no_baseline,
        seed: c.seed,
        ..d
    };
    echo(&c.out, "config.json", &json!({ "command": "epipolar", "config": cfg }))?;
    let report = run_epipolar_experiment(&cfg)?;
    write_file(&c.out.join("eigfree_train.csv"), &report.eigfree.trace.to_csv())?;
    if let Some(b) = &report.baseline {
        write_file(&c.out.join("eig_svd_baseline_train.csv"), &b.trace.to_csv())?;
    }
    if let Some(net) = &report.eigfree_net {
        net.save(&c.out.join("eigfree_net.txt"))?;
    }
    let mut table = String::from("network,test_set,threshold_deg,map\n");
    let mut rows = vec![("untrained", "contaminated", &report.untrained)];
    rows.push(("eigfree", "contaminated", &report.eigfree.contaminated));
    rows.push(("eigfree", "clean", &report.eigfree.clean));
    if let Some(b) = &report.baseline {
        rows.push(("eig_svd_baseline", "contaminated", &b.contaminated));
        rows.push(("eig_svd_baseline", "clean", &b.clean));
    }
    for (net, set, eval) in rows {
        for (t, m) in &eval.map {
            table.push_str(&format!("{net},{set},{t},{m}\n"));
        }
        println!(
            "{net:>16} {set:>12}: AUC {} {}",
            eval.auc.map_or("n/a".into(), |v| format!("{v:.3}")),
            eval.map
                .iter()
                .map(|(t, m)| format!("mAP@{t} {m:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    write_file(&c.out.join("map.csv"), &table)?;
    echo(&c.out, "report.json", &serde_json::to_value(&report)?)?;
    Ok(0)
}

fn pnp_instances(
    count: usize,
    points: usize,
    outliers: (usize, usize),
    seed: u64,
    stream: u64,
) -> Result<Vec<Instance>> {
    let mut rng = SplitMix64::new(derive_seed(seed, stream, 0));
    (0..count)
        .map(|i| {
            let n_out = rng.range_inclusive(outliers.0, outliers.1);
            let scene = gen_pnp(points, n_out, 5.0, derive_seed(seed, stream, i as u64 + 1))?;
            let p = PnpProblem::new(scene)?;
            Ok(Instance {
                features: p.features(),
                x: p.rows.clone(),
                target: p.target.clone(),
                inlier_mask: p.scene.inlier_mask.clone(),
            })
        })
        .collect()
}

fn train_cmd(a: &TrainArgs) -> Result<usize> {
    let c = &a.common;
    let held_out = c.trials.unwrap_or(50);
    let (dim, default_loss, train_set, test_set) = match a.problem {
        Problem::Pnp => {
            let points = a.points.unwrap_or(200);
            let range = c.outlier_range((points / 10, points / 2))?;
            let train_set = pnp_instances(a.instances, points, range, c.seed, 1)?;
            let test_set = pnp_instances(held_out, points, range, c.seed, 2)?;
            (5, LossConfig::PNP, train_set, test_set)
        }
        Problem::Essential => {
            let d = EpipolarConfig::default();
            let cfg = EpipolarConfig {
                n_points: a.points.unwrap_or(d.n_points),
                row_form: c.row_form.unwrap_or(d.row_form),
                seed: c.seed,
                ..d
            };
            let range = c.outlier_range(cfg.train_outliers)?;
            let take = |n, stream| -> Result<Vec<Instance>> {
                Ok(make_problems(n, range, &cfg, stream)?
                    .into_iter()
                    .map(|p| p.instance)
                    .collect())
            };
            (4, LossConfig::ESSENTIAL, take(a.instances, 1)?, take(held_out, 2)?)
        }
    };
    let loss = match c.method {
        Method::Eigfree => TrainLoss::Eigfree(c.loss(default_loss)?),
        Method::EigSvdBaseline => TrainLoss::EigBaseline,
    };
    let defaults = EpipolarConfig::default().train;
    let cfg = TrainConfig {
        lr: c.lr.unwrap_or(defaults.lr),
        epochs: c.iters.unwrap_or(defaults.epochs),
        seed: c.seed,
        ..defaults
    };
    echo(
        &c.out,
        "config.json",
        &json!({
            "command": "train",
            "problem": format!("{:?}", a.problem).to_lowercase(),
            "instances": a.instances,
            "held_out": held_out,
            "loss": loss,
            "train": cfg,
        }),
    )?;
    let net = WeightNet::new(dim, derive_seed(c.seed, 4, 0))?;
    let (net, trace) = train(net, &train_set, &cfg, &loss)?;
    write_file(&c.out.join("train.csv"), &trace.to_csv())?;
    net.save(&c.out.join("net.txt"))?;
    let aucs: Vec<f64> = test_set
        .iter()
        .map(|i| Ok(weight_auc(&net.forward(&i.features)?.0, &i.inlier_mask)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    let last = trace.records.last();
    echo(
        &c.out,
        "summary.json",
        &json!({
            "diverged": trace.diverged,
            "final_mean_loss": last.map(|r| r.mean_loss),
            "held_out_auc": auc,
        }),
    )?;
    println!(
        "final mean loss {}, held-out AUC {}{}",
        last.map_or("n/a".into(), |r| format!("{:.6}", r.mean_loss)),
        auc.map_or("n/a".into(), |v| format!("{v:.3}")),
        if trace.diverged { ", diverged" } else { "" }
    );
    Ok(usize::from(trace.diverged))
}
