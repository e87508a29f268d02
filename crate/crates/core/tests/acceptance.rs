//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::oracles;
use eigfree_core::geometry::{
    build_essential_matrix_rows, essential_to_vector, normalize_pairs, relative_pose_error,
    rotation_error, solve_essential, solve_pnp_dlt, transform_gt_essential, decompose_essential,
    RowForm,
};
use eigfree_core::harness::epipolar::{run_epipolar_experiment, EpipolarConfig, EpipolarReport};
use eigfree_core::harness::plane::{default_grid, plane_target, run_plane_grid, PlaneOutcome};
use eigfree_core::harness::{run_pnp_sweep, Method, PlaneConfig, PnpSweepConfig, SweepResult};
use eigfree_core::loss::{centered_points, spectrum};
use eigfree_core::optim::OptimizerKind;
use eigfree_core::synth::{gen_epipolar, gen_plane, gen_pnp};

const ROW_FORM: RowForm = RowForm::Classical;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn plane_cfg(method: Method, optimizer: OptimizerKind, iters: usize, outliers: usize) -> PlaneConfig {
    PlaneConfig {
        method,
        optimizer,
        iters,
        n_outliers: outliers,
        record_every: 100,
        ..PlaneConfig::default()
    }
}

fn plane_grid(cfg: &PlaneConfig) -> (Vec<PlaneOutcome>, usize) {
    run_plane_grid(cfg, default_grid()).expect("plane grid")
}

/// Every run whose CSV output must be reproducible, by name.
struct Runs {
    plane_eigfree: (Vec<PlaneOutcome>, usize),
    plane_baseline_gd: (Vec<PlaneOutcome>, usize),
    plane10_eigfree: (Vec<PlaneOutcome>, usize),
    plane10_baseline: (Vec<PlaneOutcome>, usize),
    pnp: Vec<SweepResult>,
    epipolar: EpipolarReport,
}

impl Runs {
    fn execute() -> Self {
        Self {
            plane_eigfree: plane_grid(&plane_cfg(Method::Eigfree, OptimizerKind::Adam, 5000, 1)),
            plane_baseline_gd: plane_grid(&plane_cfg(
                Method::EigSvdBaseline,
                OptimizerKind::Gd,
                100_000,
                1,
            )),
            plane10_eigfree: plane_grid(&plane_cfg(Method::Eigfree, OptimizerKind::Adam, 5000, 10)),
            plane10_baseline: plane_grid(&plane_cfg(
                Method::EigSvdBaseline,
                OptimizerKind::Adam,
                5000,
                10,
            )),
            pnp: run_pnp_sweep(&PnpSweepConfig::default()).expect("pnp sweep"),
            epipolar: run_epipolar_experiment(&EpipolarConfig::default()).expect("epipolar"),
        }
    }

    fn csvs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (name, (outcomes, _)) in [
            ("plane_eigfree", &self.plane_eigfree),
            ("plane_baseline_gd", &self.plane_baseline_gd),
            ("plane10_eigfree", &self.plane10_eigfree),
            ("plane10_baseline", &self.plane10_baseline),
        ] {
            for o in outcomes {
                out.push((format!("{name}_lr{}", o.trace.header.lr), o.trace.to_csv()));
            }
        }
        for r in &self.pnp {
            out.push((format!("pnp_{}", r.method), r.to_csv()));
        }
        let e = &self.epipolar;
        out.push(("epipolar_eigfree".into(), e.eigfree.trace.to_csv()));
        if let Some(b) = &e.baseline {
            out.push(("epipolar_baseline".into(), b.trace.to_csv()));
        }
        out.push((
            "epipolar_summary".into(),
            serde_json::to_string(&(&e.untrained, &e.eigfree.clean, &e.eigfree.contaminated))
                .expect("json"),
        ));
        out
    }
}

fn criterion_1() -> Verdict {
    let checks: [(&str, oracles::Outcome); 8] = [
        ("eigfree d=3", oracles::eigfree_logits(3, 1, 50)),
        ("eigfree d=9", oracles::eigfree_logits(9, 1, 50)),
        ("eigfree d=12", oracles::eigfree_logits(12, 2, 50)),
        ("plane", oracles::plane_logits(50)),
        ("eig backward", oracles::eig_backward_directional(60)),
        ("baseline", oracles::baseline_weights(80)),
        ("net backward", oracles::net_backward(50)),
        ("tiny net end to end", oracles::tiny_net_end_to_end(50)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, outcome) in checks {
        match outcome {
            Ok(n) if n >= 50 => parts.push(format!("{name} {n}")),
            Ok(n) => {
                pass = false;
                parts.push(format!("{name} only {n} instances"));
            }
            Err(msg) => {
                pass = false;
                parts.push(format!("{name} FAILED {msg}"));
            }
        }
    }
    Verdict::new(pass, format!("instances checked: {}", parts.join(", ")))
}

fn criterion_2(runs: &Runs) -> Verdict {
    let (outcomes, best) = &runs.plane_eigfree;
    let b = &outcomes[*best];
    let eigfree_ok = b.normal_error_deg < 0.5
        && b.max_outlier_weight() < 0.1
        && b.min_inlier_weight() > 0.5
        && b.trace.switching_events.is_empty()
        // Once aligned with the smallest eigenvector it never leaves.
        && b.trace.rank_changes.len() <= 1
        && b.trace.records.last().map(|r| r.smallest_index_of_gt) == Some(2);
    let gd = &runs.plane_baseline_gd.0;
    let worst_gd = gd.iter().map(|o| o.normal_error_deg).fold(f64::INFINITY, f64::min);
    let gd_fails = gd.iter().all(|o| o.normal_error_deg > 5.0);
    Verdict::new(
        eigfree_ok && gd_fails,
        format!(
            "eigfree+adam best lr {}: error {:.2e} deg, outlier weight {:.2e}, min inlier weight {:.4}, \
             switching events {}, rank changes {}; eig baseline+gd 1e5 iters: smallest error over grid {:.2} deg",
            b.trace.header.lr,
            b.normal_error_deg,
            b.max_outlier_weight(),
            b.min_inlier_weight(),
            b.trace.switching_events.len(),
            b.trace.rank_changes.len(),
            worst_gd
        ),
    )
}

fn criterion_3(runs: &Runs) -> Verdict {
    let (outcomes, best) = &runs.plane10_eigfree;
    let b = &outcomes[*best];
    let eigfree_ok = b.misclassified == 0 && b.trace.final_weights.len() == 110;
    let baseline = &runs.plane10_baseline.0;
    let baseline_fails = baseline
        .iter()
        .all(|o| o.misclassified >= 1 || o.normal_error_deg > 5.0);
    let errs: Vec<String> = baseline
        .iter()
        .map(|o| format!("lr {}: {} wrong", o.trace.header.lr, o.misclassified))
        .collect();
    Verdict::new(
        eigfree_ok && baseline_fails,
        format!(
            "eigfree misclassified {} of 110; eig baseline+adam {}",
            b.misclassified,
            errs.join(", ")
        ),
    )
}

fn criterion_4() -> Verdict {
    let scene = gen_plane(100, 1, PlaneConfig::default().seed).expect("scene");
    let e = plane_target();
    let rank = |w: &[f64]| {
        let x = centered_points(&scene.points, w).expect("points");
        spectrum(&x, w, &e).expect("spectrum").smallest_index_of_gt
    };
    let uniform = rank(&[1.0; 101]);
    let indicator: Vec<f64> = scene.inlier_mask.iter().map(|&m| f64::from(u8::from(m))).collect();
    let indicator = rank(&indicator);
    Verdict::new(
        uniform != 2 && indicator == 2,
        format!("aligned eigenvector rank: uniform weights {uniform}, indicator weights {indicator} (smallest is 2)"),
    )
}

fn criterion_5(runs: &Runs) -> Verdict {
    let find = |m: &str| runs.pnp.iter().find(|r| r.method == m).expect("method");
    let eig = find("eigfree");
    let dlt = find("dlt");
    let eig_ok = eig
        .rows
        .iter()
        .all(|r| r.failures == 0 && r.rotation_error_deg < 1.0 && r.translation_error_norm < 0.01);
    let dlt_bad = dlt
        .rows
        .iter()
        .filter(|r| r.outlier_count >= 70)
        .all(|r| r.rotation_error_deg > 1.0 && r.translation_error_norm > 0.01);
    let table: Vec<String> = eig
        .rows
        .iter()
        .zip(&dlt.rows)
        .map(|(a, b)| {
            format!(
                "{}: eigfree {:.3} deg/{:.4}, dlt {:.2} deg/{:.3}",
                a.outlier_count,
                a.rotation_error_deg,
                a.translation_error_norm,
                b.rotation_error_deg,
                b.translation_error_norm
            )
        })
        .collect();
    Verdict::new(eig_ok && dlt_bad, table.join("; "))
}

fn criterion_6() -> Verdict {
    let mut worst_dlt: f64 = 0.0;
    let mut worst_essential: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    let mut errors = Vec::new();
    for seed in 0..10 {
        let pnp = gen_pnp(200, 0, 0.0, seed).expect("pnp scene");
        let corrs = pnp.correspondences();
        match solve_pnp_dlt(&corrs, &vec![1.0; corrs.len()]) {
            Ok(p) => worst_dlt = worst_dlt.max(rotation_error(&p.rotation, &pnp.pose_gt.rotation)),
            Err(e) => errors.push(e.to_string()),
        }
        let two = gen_epipolar(100, 0, 0.0, seed).expect("two-view scene");
        let c = &two.correspondences;
        match solve_essential(c, &vec![1.0; c.len()], ROW_FORM)
            .and_then(|e| decompose_essential(&e, c))
            .and_then(|p| relative_pose_error(&p, &two.pose))
        {
            Ok(err) => worst_essential = worst_essential.max(err),
            Err(e) => errors.push(e.to_string()),
        }
        let x = build_essential_matrix_rows(c, ROW_FORM).expect("rows");
        let v = essential_to_vector(&two.essential);
        let (norm, t1, t2) = normalize_pairs(c).expect("normalize");
        let xn = build_essential_matrix_rows(&norm, ROW_FORM).expect("rows");
        let target = transform_gt_essential(&two.essential, &t1, &t2).expect("target");
        for r in x.mul_vec(&v).iter().chain(&xn.mul_vec(target.as_slice())) {
            worst_residual = worst_residual.max(r.abs());
        }
    }
    Verdict::new(
        errors.is_empty() && worst_dlt < 1e-6 && worst_essential < 1e-6 && worst_residual < 1e-8,
        format!(
            "dlt {worst_dlt:.1e} rad, essential {worst_essential:.1e} rad, annihilation residual {worst_residual:.1e} (row form {ROW_FORM}){}",
            if errors.is_empty() { String::new() } else { format!(", errors: {}", errors.join("; ")) }
        ),
    )
}

fn criterion_7(runs: &Runs) -> Verdict {
    let r = &runs.epipolar;
    let e = &r.eigfree;
    let auc = e.contaminated.auc.unwrap_or(0.0);
    let map20 = e.clean.map_at(20.0).unwrap_or(0.0);
    let eig_ok = auc > 0.9 && map20 > 0.9 && !e.trace.diverged;
    let (base_ok, base_detail) = match &r.baseline {
        Some(b) => (
            b.trace.diverged || b.eigfree_loss > e.eigfree_loss,
            format!(
                "eig-baseline net: diverged {}, eigfree loss on the training set {:.4} vs {:.4}; \
                 eigenvector error {:.3} vs {:.3}; clean mAP@20 {:.3}",
                b.trace.diverged,
                b.eigfree_loss,
                e.eigfree_loss,
                b.eigvec_error,
                e.eigvec_error,
                b.clean.map_at(20.0).unwrap_or(0.0)
            ),
        ),
        None => (false, "baseline not trained".to_string()),
    };
    Verdict::new(
        eig_ok && base_ok,
        format!(
            "eigfree net: held-out AUC {auc:.3}, mAP@20 {map20:.3} (clean, noise-matched), \
             mAP@20 {:.3} with {} outliers, untrained mAP@20 {:.3}; {base_detail}",
            e.contaminated.map_at(20.0).unwrap_or(0.0),
            r.config.test_outliers,
            r.untrained.map_at(20.0).unwrap_or(0.0)
        ),
    )
}

fn criterion_8(first: &Runs) -> Verdict {
    let second = Runs::execute();
    let a = first.csvs();
    let b = second.csvs();
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Verdict::new(
        a.len() == b.len() && differing.is_empty(),
        format!(
            "{} outputs compared, {} differ{}",
            a.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    )
}

fn report(n: usize, elapsed: Duration, v: &Verdict) -> bool {
    println!(
        "criterion {n}: {} ({:.1} s) {}",
        if v.pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        v.detail
    );
    v.pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn main() -> ExitCode {
    let mut all = true;
    let (v, t) = timed(criterion_1);
    all &= report(1, t, &v);

    let (runs, run_time) = timed(Runs::execute);
    println!("experiment runs finished in {:.1} s", run_time.as_secs_f64());
    for (n, f) in [
        (2, criterion_2 as fn(&Runs) -> Verdict),
        (3, criterion_3),
    ] {
        let (v, t) = timed(|| f(&runs));
        all &= report(n, t, &v);
    }
    let (v, t) = timed(criterion_4);
    all &= report(4, t, &v);
    let (v, t) = timed(|| criterion_5(&runs));
    all &= report(5, t, &v);
    let (v, t) = timed(criterion_6);
    all &= report(6, t, &v);
    let (v, t) = timed(|| criterion_7(&runs));
    all &= report(7, t, &v);
    let (v, t) = timed(|| criterion_8(&runs));
    all &= report(8, t, &v);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
