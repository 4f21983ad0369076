//! Data-driven resolution level (Lepski), smoothness estimate and the
//! adaptive drift band.

use serde::{Deserialize, Serialize};

use crate::density::{estimate_density, SmoothnessCap};
use crate::drift::{
    band_with_cap, drift_coefficient_variances, drift_from_density, support_margin, AdaptiveRecord,
    DriftBand, DriftBandMode, DriftEstimate, DriftMethod,
};
use crate::error::{Error, Result};
use crate::simulate::Trajectory;
use crate::variance::{
    coefficient_weights, zeta_gaussian_bound, zeta_mc_quantile, CovarianceModel, CriticalValue,
};
use crate::wavelet::{
    analyze_function, synthesize, uniform_grid, Quadrature, ScalingWeight, WaveletBasis,
    WeightSequence,
};

/// `2^{J_max} = J_MAX_SCALE * n^{1/4} / (log n)^2`. Without the constant the
/// right side stays below 1 for every practical `n`.
pub const J_MAX_SCALE: f64 = 32.0;

/// `K` from [`calibrate_threshold`] at the 95% quantile on Ornstein-Uhlenbeck
/// paths (N = 4, j0 = 1, [-1, 1], n = 2e4 and 1e5).
pub const DEFAULT_THRESHOLD: f64 = 13.0;

pub const DEFAULT_WINDOW: u32 = 3;

pub const DEFAULT_R_MAX: f64 = 3.0;

/// Points of the grid on which sup-norm differences are taken.
pub const LEPSKI_GRID: usize = 1025;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LepskiConfig {
    /// Largest regularity the grid is built for.
    pub r_max: f64,
    /// Threshold constant `K`.
    #[serde(rename = "K")]
    pub k: f64,
    pub j_min: i32,
    pub j_max: i32,
    /// Density offset `U`.
    pub offset: u32,
    /// Width `M` of the oracle window; the band uses `beta = alpha / (M + 1)`.
    #[serde(rename = "M")]
    pub m: u32,
}

/// `U = floor(log2 ceil(log n))`, so that `2^U <= log n`.
pub fn adaptive_offset(n: usize) -> u32 {
    let l = (n.max(3) as f64).ln().ceil().log2().floor();
    l.max(1.0) as u32
}

/// `v_n = log(2 + log n)`.
pub fn tuning_sequence(n: usize) -> f64 {
    (2.0 + (n.max(2) as f64).ln()).ln()
}

impl LepskiConfig {
    /// Grid `2^{J_min} ~ (n / log n)^{1/(2 r + 3)}` (at least `j0`) and
    /// `2^{J_max} ~ J_MAX_SCALE n^{1/4} / (log n)^2`.
    pub fn for_sample_size(n: usize, j0: u32, r_max: f64, k: f64, m: u32) -> Result<Self> {
        if n < 3 {
            return Err(Error::Domain(format!("Lepski grid needs n >= 3, got {n}")));
        }
        let nf = n as f64;
        let j_min = ((nf / nf.ln()).log2() / (2.0 * r_max + 3.0)).round() as i32;
        let j_max = (J_MAX_SCALE * nf.powf(0.25) / nf.ln().powi(2))
            .log2()
            .round() as i32;
        let cfg = LepskiConfig {
            r_max,
            k,
            j_min: j_min.max(j0 as i32),
            j_max,
            offset: adaptive_offset(n),
            m,
        };
        cfg.validate(j0)?;
        Ok(cfg)
    }

    pub fn validate(&self, j0: u32) -> Result<()> {
        if !(self.r_max > 1.0) || !self.r_max.is_finite() {
            return Err(Error::Config(format!(
                "r_max must exceed 1, got {}",
                self.r_max
            )));
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::Config(format!("K must be positive, got {}", self.k)));
        }
        if self.offset < 1 {
            return Err(Error::Config("the offset U must be at least 1".into()));
        }
        if self.j_min < j0 as i32 {
            return Err(Error::Config(format!(
                "J_min = {} lies below the base level {j0}",
                self.j_min
            )));
        }
        if self.j_min >= self.j_max {
            return Err(Error::Config(format!(
                "empty level grid: J_min = {} is not below J_max = {} (n too small for r_max = {})",
                self.j_min, self.j_max, self.r_max
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<i32> {
        self.j_min..=self.j_max
    }

    /// `K sqrt(2^{3j} j / n)`.
    pub fn threshold(&self, n: usize, j: i32) -> f64 {
        self.k * scale_term(n, j)
    }
}

/// `V(n, j) = sqrt(2^{3j} j / n)`.
pub fn scale_term(n: usize, j: i32) -> f64 {
    (2f64.powi(3 * j) * j as f64 / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LepskiTest {
    pub level: i32,
    pub finer: i32,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSelection {
    pub j_hat: i32,
    pub s_hat: f64,
    pub v_n: f64,
    /// No level passed; `j_hat` is `J_max`.
    pub saturated: bool,
    pub tests: Vec<LepskiTest>,
}

/// Direct estimates `b_hat_{J,U}` for every `J` in the grid, all from one
/// density estimate at `J_max + U`.
pub fn lepski_estimates(
    traj: &Trajectory,
    basis: &WaveletBasis,
    cfg: &LepskiConfig,
    a: f64,
    b: f64,
) -> Result<Vec<DriftEstimate>> {
    cfg.validate(basis.base_level())?;
    let u = cfg.offset as i32;
    let m = support_margin(basis);
    let density = estimate_density(traj, basis, cfg.j_max + u, a - m, b + m)?;
    cfg.levels()
        .map(|j| {
            drift_from_density(
                basis,
                &density.coeffs.truncate(j + u),
                j,
                DriftMethod::Direct,
                density.n,
                a,
                b,
            )
        })
        .collect()
}

/// Lepski selection from precomputed estimates (one per grid level).
pub fn lepski_from_estimates(
    basis: &WaveletBasis,
    estimates: &[DriftEstimate],
    cfg: &LepskiConfig,
    n: usize,
) -> Result<AdaptiveSelection> {
    let levels: Vec<i32> = cfg.levels().collect();
    if estimates.len() != levels.len() {
        return Err(Error::Config(format!(
            "expected {} estimates for the level grid, got {}",
            levels.len(),
            estimates.len()
        )));
    }
    let [a, b] = estimates[0].coeffs.interval;
    let grid = uniform_grid(a, b, LEPSKI_GRID);
    let values: Vec<Vec<f64>> = estimates
        .iter()
        .map(|e| {
            grid.iter()
                .map(|&x| synthesize(basis, &e.coeffs, x))
                .collect()
        })
        .collect();
    let mut tests = Vec::new();
    let mut admissible = vec![true; levels.len()];
    for (i, &level) in levels.iter().enumerate() {
        for (l, &finer) in levels.iter().enumerate().skip(i + 1) {
            let statistic = values[i]
                .iter()
                .zip(&values[l])
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
            let threshold = cfg.threshold(n, finer);
            let passed = statistic <= threshold;
            admissible[i] &= passed;
            tests.push(LepskiTest {
                level,
                finer,
                statistic,
                threshold,
                passed,
            });
        }
    }
    // The finest level has no competitors and is always admissible; only
    // reaching it counts as saturation.
    let first = admissible.iter().position(|&ok| ok).unwrap();
    let j_hat = levels[first];
    let saturated = first + 1 == levels.len();
    let v_n = tuning_sequence(n);
    Ok(AdaptiveSelection {
        j_hat,
        s_hat: estimate_smoothness(j_hat, n, v_n)?,
        v_n,
        saturated,
        tests,
    })
}

/// `J_hat = min{J : |b_J - b_j|_inf <= K V(n, j) for all finer j}`.
pub fn lepski_select(
    traj: &Trajectory,
    basis: &WaveletBasis,
    cfg: &LepskiConfig,
    a: f64,
    b: f64,
) -> Result<AdaptiveSelection> {
    let estimates = lepski_estimates(traj, basis, cfg, a, b)?;
    lepski_from_estimates(basis, &estimates, cfg, traj.samples.len())
}

/// `s_hat = max(1, (log n - log log n) / (2 log 2 (J + v)) - 3/2 (1 + v / J))`.
pub fn estimate_smoothness(level: i32, n: usize, v_n: f64) -> Result<f64> {
    if level < 1 {
        return Err(Error::Domain(format!(
            "smoothness estimate needs a level >= 1, got {level}"
        )));
    }
    if !(v_n > 0.0) || !v_n.is_finite() {
        return Err(Error::Domain(format!("v_n must be positive, got {v_n}")));
    }
    let nf = (n.max(3)) as f64;
    let j = level as f64;
    let raw = (nf.ln() - nf.ln().ln()) / (2.0 * std::f64::consts::LN_2 * (j + v_n))
        - 1.5 * (1.0 + v_n / j);
    Ok(raw.max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleLevel {
    pub level: i32,
    /// The balance inequality failed on the whole grid.
    pub saturated: bool,
}

/// `J* = min{J : (d2 + 1) 2^{-J s} <= (K / 4) V(n, J)}` over the grid.
pub fn lepski_oracle(n: usize, s: f64, cfg: &LepskiConfig, d2: f64) -> Result<OracleLevel> {
    if !(1.0..=cfg.r_max).contains(&s) {
        return Err(Error::Domain(format!(
            "oracle regularity must lie in [1, {}], got {s}",
            cfg.r_max
        )));
    }
    for j in cfg.levels() {
        if (d2 + 1.0) * 2f64.powf(-(j as f64) * s) <= cfg.k / 4.0 * scale_term(n, j) {
            return Ok(OracleLevel {
                level: j,
                saturated: false,
            });
        }
    }
    Ok(OracleLevel {
        level: cfg.j_max,
        saturated: true,
    })
}

/// `|pi_J f - f|_inf` on `[a, b]`, on a grid of `2^{J+6}` points per unit.
pub fn projection_bias<F: Fn(f64) -> f64>(
    basis: &WaveletBasis,
    f: F,
    level: i32,
    a: f64,
    b: f64,
) -> Result<f64> {
    let coeffs = analyze_function(
        basis,
        &f,
        level,
        a,
        b,
        Quadrature::for_integrand(basis, level),
    )?;
    let grid = uniform_grid(a, b, (1usize << (level + 6).min(20)) + 1);
    Ok(grid
        .into_iter()
        .map(|x| (synthesize(basis, &coeffs, x) - f(x)).abs())
        .fold(0.0, f64::max))
}

/// Bias constants `(d1, d2)`: the extremes of `|pi_J b - b|_inf 2^{J s}` on
/// `[a, b]` over `levels`.
pub fn bias_constants<F: Fn(f64) -> f64>(
    basis: &WaveletBasis,
    drift: F,
    s: f64,
    levels: std::ops::RangeInclusive<i32>,
    a: f64,
    b: f64,
) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for j in levels {
        let scaled = projection_bias(basis, &drift, j, a, b)? * 2f64.powf(j as f64 * s);
        lo = lo.min(scaled);
        hi = hi.max(scaled);
    }
    if !lo.is_finite() {
        return Err(Error::Domain("empty level range for bias constants".into()));
    }
    Ok((lo, hi))
}

/// Calibrates `K` on paths whose drift is reproduced exactly by the basis
/// (bias zero): the `quantile` of `max_j |b_{J_min} - b_j|_inf / V(n, j)`.
pub fn calibrate_threshold(
    trajectories: &[Trajectory],
    basis: &WaveletBasis,
    cfg: &LepskiConfig,
    quantile: f64,
    a: f64,
    b: f64,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Domain("calibration needs at least one path".into()));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::Domain(format!(
            "quantile must lie in (0, 1), got {quantile}"
        )));
    }
    let mut ratios = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        let sel = lepski_select(traj, basis, cfg, a, b)?;
        let n = traj.samples.len();
        let worst = sel
            .tests
            .iter()
            .filter(|t| t.level == cfg.j_min)
            .map(|t| t.statistic / scale_term(n, t.finer))
            .fold(0.0, f64::max);
        ratios.push(worst);
    }
    ratios.sort_by(f64::total_cmp);
    let idx = ((quantile * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
    Ok(ratios[idx])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ZetaRule {
    GaussianBound,
    McQuantile { replications: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOptions {
    pub alpha: f64,
    pub zeta: ZetaRule,
    /// Multiplier on `t_n = sqrt(u_hat)`.
    pub cap_scale: f64,
}

impl AdaptiveOptions {
    pub fn new(alpha: f64) -> Self {
        AdaptiveOptions {
            alpha,
            zeta: ZetaRule::GaussianBound,
            cap_scale: 1.0,
        }
    }
}

/// Band around `b_hat_{J_hat, U}` with radius `zeta_beta / sqrt(n)`,
/// `beta = alpha / (M + 1)`, and cap `|f|_{C^{s_hat}} <= t_n`,
/// `t_n = sqrt(w_J 2^{-J} / sqrt(J))` at `J = J_hat`.
pub fn adaptive_band(
    traj: &Trajectory,
    basis: &WaveletBasis,
    cfg: &LepskiConfig,
    opts: &AdaptiveOptions,
    a: f64,
    b: f64,
) -> Result<(DriftBand, AdaptiveSelection)> {
    let estimates = lepski_estimates(traj, basis, cfg, a, b)?;
    let n = traj.samples.len();
    let sel = lepski_from_estimates(basis, &estimates, cfg, n)?;
    let est = &estimates[(sel.j_hat - cfg.j_min) as usize];
    let band = band_for_selection(basis, traj, est, &sel, cfg, opts)?;
    Ok((band, sel))
}

/// Adaptive band for a selection already made.
pub fn band_for_selection(
    basis: &WaveletBasis,
    traj: &Trajectory,
    est: &DriftEstimate,
    sel: &AdaptiveSelection,
    cfg: &LepskiConfig,
    opts: &AdaptiveOptions,
) -> Result<DriftBand> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    if !(opts.cap_scale > 0.0) {
        return Err(Error::Domain(format!(
            "cap scale must be positive, got {}",
            opts.cap_scale
        )));
    }
    let beta = opts.alpha / (cfg.m as f64 + 1.0);
    let weights =
        WeightSequence::drift(basis.base_level()).with_scaling(ScalingWeight::CriticalValue);
    let variances = drift_coefficient_variances(basis, traj, est)?;
    let [a, b] = est.coeffs.interval;
    let cv: CriticalValue = match opts.zeta {
        ZetaRule::GaussianBound => {
            let sigma = variances.sup().normalised(&weights);
            zeta_gaussian_bound(beta, sigma, basis, &weights, est.level, a, b)?
        }
        ZetaRule::McQuantile { replications, seed } => {
            let model = CovarianceModel::Diagonal(variances.values.clone());
            let w = coefficient_weights(&est.coeffs, &weights);
            zeta_mc_quantile(beta, &model, &w, replications, seed)?
        }
    };
    let level = sel.j_hat;
    let u_hat = weights.weight(level) * 2f64.powi(-level) / (level as f64).sqrt();
    let t_n = u_hat.sqrt();
    let cap = SmoothnessCap {
        s: sel.s_hat,
        u_n: t_n,
        scale: opts.cap_scale,
    };
    let mut band = band_with_cap(
        basis,
        est,
        cv.zeta,
        weights,
        Some(cap),
        DriftBandMode::Adaptive,
        None,
    );
    band.adaptive = Some(AdaptiveRecord {
        j_hat: sel.j_hat,
        s_hat: sel.s_hat,
        v_n: sel.v_n,
        t_n,
        beta,
        zeta_beta: cv.zeta,
        saturated: sel.saturated,
    });
    Ok(band)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothness_formula_example() {
        // log n - log log n = 54 log 2.
        let target = 54.0 * std::f64::consts::LN_2;
        let mut ln_n = target;
        for _ in 0..100 {
            ln_n = target + ln_n.ln();
        }
        let n = ln_n.exp();
        let s = estimate_smoothness(5, n as usize, 1.0).unwrap();
        assert!((s - 2.7).abs() < 1e-6, "{s}");
        assert_eq!(estimate_smoothness(1, 1000, 3.0).unwrap(), 1.0);
        assert!(estimate_smoothness(0, 1000, 1.0).is_err());
        assert!(estimate_smoothness(2, 1000, 0.0).is_err());
    }

    #[test]
    fn offsets_keep_two_to_u_below_log_n() {
        for n in [100usize, 20_000, 100_000, 10_000_000] {
            let u = adaptive_offset(n);
            assert!(2f64.powi(u as i32) <= (n as f64).ln().ceil());
        }
        assert_eq!(adaptive_offset(20_000), 3);
        assert_eq!(adaptive_offset(100_000), 3);
    }

    #[test]
    fn grid_for_moderate_samples() {
        let cfg = LepskiConfig::for_sample_size(100_000, 1, 3.0, 10.0, 3).unwrap();
        assert_eq!((cfg.j_min, cfg.j_max), (1, 2));
        assert!(matches!(
            LepskiConfig::for_sample_size(100_000, 3, 3.0, 10.0, 3),
            Err(Error::Config(_))
        ));
    }
}
