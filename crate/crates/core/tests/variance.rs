mod common;

use ergoband::simulate::{
    derive_seed, rng_from_seed, simulate_ar1, simulate_ou_exact, Ar1Chain, Trajectory,
};
use ergoband::variance::{
    contraction_bound, estimate_rho, geyer_variance, sigma_sup, zeta_gaussian_bound,
    zeta_mc_quantile, Center, Construction, CovarianceModel, CriticalValue,
};
use ergoband::wavelet::{
    analyze_samples, sup_norm_on_interval, ScalingWeight, WaveletBasis, WeightSequence,
};
use ergoband::Error;
use rand::Rng;
use rand_distr::StandardNormal;

fn iid_normal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn trajectory(samples: Vec<f64>) -> Trajectory {
    Trajectory {
        model: "test".into(),
        delta: 1.0,
        seed: 0,
        burn_in: 0,
        samples,
    }
}

#[test]
fn geyer_on_iid_normal() {
    let v = geyer_variance(&iid_normal(1_000_000, 3), Center::EmpiricalMean).unwrap();
    assert!((0.95..=1.10).contains(&v.value), "{}", v.value);
    let v0 = geyer_variance(&iid_normal(1_000_000, 3), Center::Supplied(0.0)).unwrap();
    assert!((v0.value - v.value).abs() < 0.01);
}

#[test]
fn geyer_on_ar1() {
    let chain = Ar1Chain {
        coefficient: 0.5,
        innovation_sd: 1.0,
    };
    assert!((chain.asymptotic_variance() - 4.0).abs() < 1e-12);
    let traj = simulate_ar1(&chain, 1_000_000, 11, 0.0).unwrap();
    let v = geyer_variance(&traj.samples, Center::EmpiricalMean).unwrap();
    assert!((3.8..=4.5).contains(&v.value), "{}", v.value);
    assert!(v.lag >= 1);
}

#[test]
fn geyer_over_estimates_on_ar1_replications() {
    let chain = Ar1Chain {
        coefficient: 0.5,
        innovation_sd: 1.0,
    };
    let truth = chain.asymptotic_variance();
    let reps = 200;
    let n = 100_000;
    let estimates: Vec<f64> = (0..reps)
        .map(|i| {
            let traj = simulate_ar1(&chain, n, derive_seed(77, i), 0.0).unwrap();
            geyer_variance(&traj.samples, Center::EmpiricalMean)
                .unwrap()
                .value
        })
        .collect();
    let (mean, var) = common::mean_var(&estimates);
    let se = var.sqrt();
    assert!(mean >= 0.97 * truth, "mean {mean}");
    let above = estimates.iter().filter(|&&v| v >= truth - 2.0 * se).count();
    assert!(above as f64 >= 0.9 * reps as f64, "{above}");
}

#[test]
fn geyer_is_deterministic() {
    let xs = iid_normal(5000, 9);
    let a = geyer_variance(&xs, Center::EmpiricalMean).unwrap();
    let b = geyer_variance(&xs, Center::EmpiricalMean).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sigma_sup_haar_uniform() {
    let mut rng = rng_from_seed(5);
    let traj = trajectory((0..100_000).map(|_| rng.random::<f64>()).collect());
    let basis = WaveletBasis::new(1, 1).unwrap();
    let s = sigma_sup(&traj, &basis, 3, 0.0, 1.0).unwrap();
    assert!((0.9..=1.15).contains(&s.value), "{}", s.value);
    assert!(s.level >= 1);
    let finer = sigma_sup(&traj, &basis, 4, 0.0, 1.0).unwrap();
    assert!(finer.value >= s.value);
}

#[test]
fn sigma_sup_small_sample_is_finite() {
    let traj = trajectory((0..10).map(|i| i as f64 / 10.0).collect());
    let basis = WaveletBasis::new(8, 3).unwrap();
    let s = sigma_sup(&traj, &basis, 4, 0.0, 1.0).unwrap();
    assert!(s.value.is_finite());
    assert!(s.degenerate > 0);
}

#[test]
fn sigma_sup_monotone_in_level() {
    let traj = simulate_ou_exact(1.0, 1.0, 20_000, 1.0, 4, None).unwrap();
    let basis = WaveletBasis::new(8, 3).unwrap();
    let mut prev = 0.0;
    for j in 3..=6 {
        let s = sigma_sup(&traj, &basis, j, -1.0, 1.0).unwrap().value;
        assert!(s >= prev);
        prev = s;
    }
}

#[test]
fn contraction_bound_is_monotone() {
    let mut prev = 0.0;
    for i in 0..100 {
        let rho = i as f64 / 100.0;
        let v = contraction_bound(rho, 0.5).unwrap();
        assert!(v > prev);
        prev = v;
    }
}

#[test]
fn rho_for_iid_samples() {
    let traj = trajectory(
        iid_normal(100_000, 21)
            .into_iter()
            .map(|x| x / 2f64.sqrt())
            .collect(),
    );
    let basis = WaveletBasis::new(8, 3).unwrap();
    let rho = estimate_rho(&traj, &basis, 4, -1.0, 1.0).unwrap();
    assert!(rho <= 0.1, "{rho}");
}

#[test]
fn rho_for_ou() {
    let traj = simulate_ou_exact(1.0, 1.0, 100_000, 0.5, 8, None).unwrap();
    let basis = WaveletBasis::new(8, 3).unwrap();
    let rho = estimate_rho(&traj, &basis, 4, -1.0, 1.0).unwrap();
    let truth = (-0.5f64).exp();
    assert!((rho - truth).abs() <= 0.08, "{rho} vs {truth}");
    assert_eq!(rho, estimate_rho(&traj, &basis, 4, -1.0, 1.0).unwrap());
}

#[test]
fn rho_rejects_short_trajectories() {
    let traj = simulate_ou_exact(1.0, 1.0, 1000, 0.5, 8, None).unwrap();
    let basis = WaveletBasis::new(8, 3).unwrap();
    assert!(matches!(
        estimate_rho(&traj, &basis, 4, -1.0, 1.0),
        Err(Error::Domain(_))
    ));
}

#[test]
fn contraction_dominates_sigma_sup_on_ou() {
    let basis = WaveletBasis::new(8, 3).unwrap();
    let reps = 20;
    let mut dominated = 0;
    for i in 0..reps {
        let traj = simulate_ou_exact(1.0, 1.0, 50_000, 1.0, derive_seed(13, i), None).unwrap();
        let rho = estimate_rho(&traj, &basis, 4, -1.0, 1.0).unwrap();
        let est = analyze_samples(&basis, &traj.samples, 3, -1.0, 1.0).unwrap();
        let sup_mu = sup_norm_on_interval(&basis, &est, -1.0, 1.0, 1025).unwrap();
        let bound = contraction_bound(rho, sup_mu).unwrap();
        let sigma = sigma_sup(&traj, &basis, 3, -1.0, 1.0).unwrap().value;
        dominated += (bound >= sigma) as usize;
    }
    assert!(dominated as f64 >= 0.95 * reps as f64, "{dominated}/{reps}");
}

/// `C^2` for `[-1, 1]`, where `|K_j| = 2^{j+1} + 2N` exactly.
fn closed_form_c(order: usize, j0: i32) -> f64 {
    (j0..400)
        .map(|j| {
            let count = 2f64.powi(j + 1) + 2.0 * order as f64;
            (4.0 * count.ln() + 2.0 * 2f64.ln()) / j as f64
        })
        .fold(f64::NEG_INFINITY, f64::max)
        .sqrt()
}

#[test]
fn gaussian_bound_matches_formula() {
    let basis = WaveletBasis::new(8, 1).unwrap();
    let w = WeightSequence::density(1).with_scaling(ScalingWeight::CriticalValue);
    let cv = zeta_gaussian_bound(0.05, 1.0, &basis, &w, 6, -1.0, 1.0).unwrap();
    let c = closed_form_c(8, 1);
    assert!((cv.c.unwrap() - c).abs() < 1e-12);
    let expected = (2.0 * 20f64.ln()).sqrt() + 2.0 * c + 32.0 / (3.0 * c) / 4.0;
    assert!((cv.zeta - expected).abs() < 1e-12);
    assert_eq!(cv.construction, Construction::GaussianBound);

    let b3 = WaveletBasis::new(8, 3).unwrap();
    let w3 = WeightSequence::density(3).with_scaling(ScalingWeight::CriticalValue);
    let cv3 = zeta_gaussian_bound(0.1, 1.0, &b3, &w3, 6, -1.0, 1.0).unwrap();
    assert!((cv3.c.unwrap() - closed_form_c(8, 3)).abs() < 1e-12);
}

#[test]
fn gaussian_bound_is_homogeneous() {
    let basis = WaveletBasis::new(8, 3).unwrap();
    let w = WeightSequence::density(3).with_scaling(ScalingWeight::CriticalValue);
    let one = zeta_gaussian_bound(0.1, 1.0, &basis, &w, 5, -1.0, 1.0)
        .unwrap()
        .zeta;
    for sigma in [0.01, 0.7, 2.0, 123.0] {
        let z = zeta_gaussian_bound(0.1, sigma, &basis, &w, 5, -1.0, 1.0)
            .unwrap()
            .zeta;
        assert!((z - sigma.sqrt() * one).abs() <= 1e-12 * z);
    }
}

#[test]
fn gaussian_bound_validates_inputs() {
    let basis = WaveletBasis::new(8, 3).unwrap();
    let unit = WeightSequence::density(3);
    assert!(matches!(
        zeta_gaussian_bound(0.1, 1.0, &basis, &unit, 5, -1.0, 1.0),
        Err(Error::Config(_))
    ));
    let w = unit.with_scaling(ScalingWeight::CriticalValue);
    assert!(zeta_gaussian_bound(1.0, 1.0, &basis, &w, 5, -1.0, 1.0).is_err());
    assert!(zeta_gaussian_bound(0.0, 1.0, &basis, &w, 5, -1.0, 1.0).is_err());
    let drift = WeightSequence::drift(3).with_scaling(ScalingWeight::CriticalValue);
    assert!(zeta_gaussian_bound(0.1, 1.0, &basis, &drift, 5, -1.0, 1.0).is_ok());
    let b0 = WaveletBasis::new(8, 0).unwrap();
    let w0 = WeightSequence::density(0).with_scaling(ScalingWeight::CriticalValue);
    assert!(zeta_gaussian_bound(0.1, 1.0, &b0, &w0, 5, -1.0, 1.0).is_err());
}

#[test]
fn mc_quantile_single_coordinate() {
    let cv = zeta_mc_quantile(
        0.05,
        &CovarianceModel::Diagonal(vec![1.0]),
        &[1.0],
        100_000,
        3,
    )
    .unwrap();
    assert!((cv.zeta - 1.959964).abs() < 0.02, "{}", cv.zeta);
    let again = zeta_mc_quantile(
        0.05,
        &CovarianceModel::Diagonal(vec![1.0]),
        &[1.0],
        100_000,
        3,
    )
    .unwrap();
    assert_eq!(cv, again);
}

#[test]
fn mc_full_model_matches_diagonal_for_diagonal_matrix() {
    let vars = vec![1.0, 0.5, 2.0];
    let full = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vars.clone()));
    let d = zeta_mc_quantile(0.1, &CovarianceModel::Diagonal(vars), &[1.0; 3], 50_000, 8).unwrap();
    let f = zeta_mc_quantile(0.1, &CovarianceModel::Full(full), &[1.0; 3], 50_000, 8).unwrap();
    assert!((d.zeta - f.zeta).abs() < 0.05);
    assert!(f.warning.is_none());
}

#[test]
fn mc_quantile_below_gaussian_bound() {
    let mut rng = rng_from_seed(99);
    let basis = WaveletBasis::new(8, 3).unwrap();
    let weights = WeightSequence::density(3).with_scaling(ScalingWeight::CriticalValue);
    let template = ergoband::wavelet::MultiScaleCoeffs::zeros(&basis, 5, -1.0, 1.0).unwrap();
    let w = ergoband::variance::coefficient_weights(&template, &weights);
    let configs = 100;
    let mut below = 0;
    for i in 0..configs {
        let sigma: f64 = 0.2 + 3.0 * rng.random::<f64>();
        let vars: Vec<f64> = (0..template.len())
            .map(|_| sigma * rng.random::<f64>())
            .collect();
        let alpha = [0.05, 0.1, 0.32][i % 3];
        let mc =
            zeta_mc_quantile(alpha, &CovarianceModel::Diagonal(vars), &w, 2000, i as u64).unwrap();
        let bound = zeta_gaussian_bound(alpha, sigma, &basis, &weights, 5, -1.0, 1.0).unwrap();
        below += (mc.zeta <= bound.zeta) as usize;
    }
    assert!(below as f64 >= 0.99 * configs as f64);
}

#[test]
fn critical_value_json_fields() {
    let basis = WaveletBasis::new(8, 3).unwrap();
    let w = WeightSequence::density(3).with_scaling(ScalingWeight::CriticalValue);
    let cv = zeta_gaussian_bound(0.1, 2.0, &basis, &w, 5, -1.0, 1.0).unwrap();
    let v: serde_json::Value = serde_json::to_value(&cv).unwrap();
    for key in ["alpha", "zeta", "construction", "Sigma", "C"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["construction"], "gaussian-bound");
    let back: CriticalValue = serde_json::from_value(v).unwrap();
    assert_eq!(back, cv);
}
