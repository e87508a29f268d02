mod common;

use common::dot;
use eigfree_core::geometry::{
    build_essential_matrix_rows, build_pnp_rows, decompose_essential, essential_to_vector,
    hartley_normalize, normalize_pairs, procrustes_project, ransac_dlt, relative_pose_error,
    rotation_error, solve_essential, solve_pnp_dlt, transform_gt_essential, translation_error,
    weighted_null_vector, Correspondence3D2D, PnpNormalization, RowForm,
};
use eigfree_core::linalg::sym_eig;
use eigfree_core::synth::{gen_epipolar, gen_pnp};
use eigfree_core::SplitMix64;
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

fn max_residual(x: &eigfree_core::DataMatrix, v: &[f64]) -> f64 {
    x.mul_vec(v).iter().fold(0.0f64, |m, r| m.max(r.abs()))
}

#[test]
fn classical_rows_annihilate_the_essential_vector() {
    for seed in 0..20 {
        let scene = gen_epipolar(60, 0, 0.0, seed).unwrap();
        let x = build_essential_matrix_rows(&scene.correspondences, RowForm::Classical).unwrap();
        let v = essential_to_vector(&scene.essential);
        assert!(max_residual(&x, &v) < 1e-8, "seed {seed}");

        let (norm, t1, t2) = normalize_pairs(&scene.correspondences).unwrap();
        let xn = build_essential_matrix_rows(&norm, RowForm::Classical).unwrap();
        let target = transform_gt_essential(&scene.essential, &t1, &t2).unwrap();
        assert!(max_residual(&xn, target.as_slice()) < 1e-8, "seed {seed}");
    }
}

#[test]
fn paper_row_form_does_not_annihilate() {
    let scene = gen_epipolar(60, 0, 0.0, 7).unwrap();
    let x = build_essential_matrix_rows(&scene.correspondences, RowForm::Paper).unwrap();
    let v = essential_to_vector(&scene.essential);
    assert!(max_residual(&x, &v) > 1e-6);
}

#[test]
fn pnp_rows_annihilate_the_normalized_target() {
    for seed in 0..20 {
        let scene = gen_pnp(50, 0, 0.0, seed).unwrap();
        let corrs = scene.correspondences();
        let norm = PnpNormalization::from_correspondences(&corrs).unwrap();
        let x = build_pnp_rows(&norm.apply(&corrs)).unwrap();
        let target = norm.target(&scene.pose_gt).unwrap();
        assert!(max_residual(&x, target.as_slice()) < 1e-8, "seed {seed}");
    }
}

#[test]
fn clean_dlt_recovers_pose() {
    for seed in 0..20 {
        let scene = gen_pnp(50, 0, 0.0, seed).unwrap();
        let corrs = scene.correspondences();
        let pose = solve_pnp_dlt(&corrs, &vec![1.0; corrs.len()]).unwrap();
        assert!(rotation_error(&pose.rotation, &scene.pose_gt.rotation) < 1e-6);
        assert!(translation_error(&pose.translation, &scene.pose_gt.translation).unwrap() < 1e-6);
    }
}

#[test]
fn clean_essential_pipeline_recovers_pose() {
    for seed in 0..20 {
        let scene = gen_epipolar(60, 0, 0.0, seed).unwrap();
        let n = scene.correspondences.len();
        let e = solve_essential(&scene.correspondences, &vec![1.0; n], RowForm::Classical).unwrap();
        let pose = decompose_essential(&e, &scene.correspondences).unwrap();
        assert!(relative_pose_error(&pose, &scene.pose).unwrap() < 1e-6, "seed {seed}");
    }
}

#[test]
fn decomposition_ignores_the_sign_of_e() {
    let scene = gen_epipolar(40, 0, 0.0, 3).unwrap();
    let a = decompose_essential(&scene.essential, &scene.correspondences).unwrap();
    let b = decompose_essential(&(-scene.essential), &scene.correspondences).unwrap();
    assert!(rotation_error(&a.rotation, &b.rotation) < 1e-9);
    assert!((a.translation - b.translation).norm() < 1e-9);
    assert!((a.translation.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn hartley_normalization_centers_and_conditions() {
    let scene = gen_epipolar(80, 0, 0.5, 11).unwrap();
    let px: Vec<[f64; 2]> = scene
        .correspondences
        .iter()
        .map(|c| [800.0 * c.u + 320.0, 800.0 * c.v + 240.0])
        .collect();
    let (norm, _) = hartley_normalize(&px).unwrap();
    let n = norm.len() as f64;
    let mean = norm.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
    let rms = (norm.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / n).sqrt();
    assert!(mean[0].abs() < 1e-12 && mean[1].abs() < 1e-12);
    assert!((rms - 2f64.sqrt()).abs() < 1e-12);

    // Rows in pixel units are badly conditioned; normalized rows are not.
    let cond = |c: &[eigfree_core::Correspondence2D2D]| {
        let x = build_essential_matrix_rows(c, RowForm::Classical).unwrap();
        let es = sym_eig(&x.weighted_gram(&vec![1.0; c.len()]).unwrap()).unwrap();
        es.values[0] / es.values[7]
    };
    let pixel: Vec<_> = scene
        .correspondences
        .iter()
        .map(|c| {
            eigfree_core::Correspondence2D2D::new(
                800.0 * c.u + 320.0,
                800.0 * c.v + 240.0,
                800.0 * c.u2 + 320.0,
                800.0 * c.v2 + 240.0,
            )
        })
        .collect();
    let (normalized, _, _) = normalize_pairs(&pixel).unwrap();
    assert!(cond(&pixel) > 1e3 * cond(&normalized));
}

#[test]
fn null_vector_is_invariant_to_weight_scale() {
    let scene = gen_pnp(40, 5, 1.0, 5).unwrap();
    let corrs = scene.correspondences();
    let norm = PnpNormalization::from_correspondences(&corrs).unwrap();
    let x = build_pnp_rows(&norm.apply(&corrs)).unwrap();
    let mut rng = SplitMix64::new(1);
    let w: Vec<f64> = (0..corrs.len()).map(|_| rng.uniform(0.1, 1.0)).collect();
    let a = weighted_null_vector(&x, &w).unwrap();
    let scaled: Vec<f64> = w.iter().map(|v| v * 37.0).collect();
    let b = weighted_null_vector(&x, &scaled).unwrap();
    assert!((dot(&a, &b).abs() - 1.0).abs() < 1e-10);
}

#[test]
fn pnp_is_invariant_to_world_scale() {
    let scene = gen_pnp(40, 0, 1.0, 9).unwrap();
    let corrs = scene.correspondences();
    let base = solve_pnp_dlt(&corrs, &vec![1.0; corrs.len()]).unwrap();
    let k = 4.5;
    let scaled: Vec<Correspondence3D2D> = corrs
        .iter()
        .map(|c| Correspondence3D2D::new(k * c.x, k * c.y, k * c.z, c.u, c.v))
        .collect();
    let pose = solve_pnp_dlt(&scaled, &vec![1.0; corrs.len()]).unwrap();
    assert!(rotation_error(&pose.rotation, &base.rotation) < 1e-9);
    assert!((pose.translation - k * base.translation).norm() < 1e-8 * k);
}

#[test]
fn procrustes_returns_nearest_rotation_under_perturbation() {
    let mut rng = SplitMix64::new(21);
    for _ in 0..50 {
        let r = rng.rotation();
        let noise = Matrix3::from_fn(|_, _| rng.normal(0.0, 1e-3));
        let p = procrustes_project(&(r * 2.0 + noise)).unwrap_or_else(|e| panic!("{e}"));
        let p_unit = procrustes_project(&(r + noise)).unwrap();
        assert!((p.transpose() * p - Matrix3::identity()).norm() < 1e-12);
        assert!((p.determinant() - 1.0).abs() < 1e-12);
        assert!(rotation_error(&p_unit, &r) < 5e-3);
    }
    let axis = Unit::new_normalize(Vector3::new(1.0, 2.0, 3.0));
    let r = *Rotation3::from_axis_angle(&axis, 0.3).matrix();
    assert!((procrustes_project(&r).unwrap() - r).norm() < 1e-12);
}

#[test]
fn ransac_survives_heavy_contamination() {
    let scene = gen_pnp(200, 100, 1.0, 13).unwrap();
    let corrs = scene.correspondences();
    let mut rng = SplitMix64::new(2);
    let out = ransac_dlt(&corrs, 5.0 / 800.0, 500, &mut rng).unwrap();
    assert!(rotation_error(&out.pose.rotation, &scene.pose_gt.rotation).to_degrees() < 1.0);
    let agree = out
        .inliers
        .iter()
        .zip(&scene.inlier_mask)
        .filter(|(a, b)| a == b)
        .count();
    assert!(agree > 190, "{agree} of 200 labels agree");
}

fn normalized_rows(scene: &eigfree_core::synth::EpipolarScene) -> (eigfree_core::DataMatrix, Vec<f64>) {
    let (norm, t1, t2) = normalize_pairs(&scene.correspondences).unwrap();
    let x = build_essential_matrix_rows(&norm, RowForm::Classical).unwrap();
    let target = transform_gt_essential(&scene.essential, &t1, &t2).unwrap();
    (x, target.as_slice().to_vec())
}

#[test]
fn clean_two_view_null_vector_is_the_essential_matrix() {
    let scene = gen_epipolar(100, 0, 0.0, 17).unwrap();
    let (x, target) = normalized_rows(&scene);
    let v = weighted_null_vector(&x, &vec![1.0; 100]).unwrap();
    assert!(dot(&v, &target).abs() > 1.0 - 1e-9);
}

#[test]
fn half_outliers_spoil_the_uniform_estimate() {
    let scene = gen_epipolar(100, 50, 0.5, 17).unwrap();
    let (x, target) = normalized_rows(&scene);
    let v = weighted_null_vector(&x, &vec![1.0; 100]).unwrap();
    assert!(dot(&v, &target).abs() < 0.99);
}

#[test]
fn clean_pnp_dlt_at_full_size() {
    let scene = gen_pnp(200, 0, 0.0, 23).unwrap();
    let corrs = scene.correspondences();
    let pose = solve_pnp_dlt(&corrs, &vec![1.0; 200]).unwrap();
    assert!(rotation_error(&pose.rotation, &scene.pose_gt.rotation) < 1e-8);
}

#[test]
fn clean_plane_covariance_has_the_plane_normal() {
    let scene = eigfree_core::synth::gen_plane(100, 0, 4).unwrap();
    let x = eigfree_core::loss::centered_points(&scene.points, &vec![1.0; 100]).unwrap();
    let es = sym_eig(&x.weighted_gram(&vec![1.0; 100]).unwrap()).unwrap();
    let cos = es.smallest()[2].abs().min(1.0);
    assert!(cos.acos().to_degrees() < 0.1);
}
