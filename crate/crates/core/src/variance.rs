//! Asymptotic variances and critical values of the multi-scale norm.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::{derive_seed, rng_from_seed, Trajectory};
use crate::wavelet::{
    index_set, sparse_features, MultiScaleCoeffs, ScalingWeight, WaveletBasis, WeightSequence,
    SCALING,
};

/// Ridge added to the Gram matrix before whitening.
pub const GRAM_RIDGE: f64 = 1e-8;

/// Largest dimension for which the full covariance model is simulated.
pub const MAX_FULL_DIM: usize = 512;

/// Levels scanned beyond `J_cap` when taking the supremum defining `C`.
const C_SCAN_EXTRA: i32 = 40;

/// Centering used for autocovariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Center {
    EmpiricalMean,
    Supplied(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    GeyerMonotone,
    ContractionBound,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticVariance {
    pub value: f64,
    pub descriptor: String,
    /// Last autocovariance lag entering the estimate.
    pub lag: usize,
    pub kind: VarianceKind,
    /// Set when the sequence has (numerically) zero variance.
    pub degenerate: bool,
}

/// Initial monotone sequence estimate from autocovariances `gamma(h)`.
///
/// Pair sums `G_m = gamma(2m) + gamma(2m+1)` are kept up to the first
/// non-positive one, made nonincreasing, and combined as
/// `-gamma(0) + 2 sum_m G_m`. Returns the estimate and the last lag used.
fn initial_monotone(n: usize, mut gamma: impl FnMut(usize) -> f64) -> (f64, usize) {
    let g0 = gamma(0);
    let mut total = -g0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let even = if m == 0 { g0 } else { gamma(2 * m) };
        let pair = even + gamma(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        prev = prev.min(pair);
        total += 2.0 * prev;
        lag = 2 * m + 1;
        m += 1;
    }
    (total.max(0.0), lag)
}

/// Geyer's initial monotone sequence estimator of `lim Var(sum_i Z_i) / n`.
pub fn geyer_variance(samples: &[f64], center: Center) -> Result<AsymptoticVariance> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::Domain(format!(
            "autocovariance estimation needs at least 10 samples, got {n}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("samples contain non-finite values".into()));
    }
    let mean = match center {
        Center::EmpiricalMean => samples.iter().sum::<f64>() / n as f64,
        Center::Supplied(m) => m,
    };
    let centred: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    let gamma = |h: usize| -> f64 {
        centred[..n - h]
            .iter()
            .zip(&centred[h..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let g0 = gamma(0);
    let scale = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if g0 <= (f64::EPSILON * scale).powi(2) * 16.0 {
        return Ok(AsymptoticVariance {
            value: 0.0,
            descriptor: "identity".into(),
            lag: 0,
            kind: VarianceKind::GeyerMonotone,
            degenerate: true,
        });
    }
    let (value, lag) = initial_monotone(n, gamma);
    Ok(AsymptoticVariance {
        value,
        descriptor: "identity".into(),
        lag,
        kind: VarianceKind::GeyerMonotone,
        degenerate: false,
    })
}

/// Geyer estimate for a sequence given by its nonzero entries. `dense` is a
/// zeroed scratch buffer of length `n`, restored to zero on return.
fn geyer_sparse(entries: &[(u32, f64)], dense: &mut [f64]) -> (f64, usize, bool) {
    let n = dense.len();
    if entries.is_empty() {
        return (0.0, 0, true);
    }
    let mut total = 0.0;
    let mut sq = 0.0;
    for &(i, v) in entries {
        dense[i as usize] = v;
        total += v;
        sq += v * v;
    }
    let nf = n as f64;
    let mean = total / nf;
    let g0 = sq / nf - mean * mean;
    let degenerate = g0 <= 1e-14 * sq / nf;
    let result = if degenerate {
        (0.0, 0, true)
    } else {
        // Running sums of x_i over i < n - h and over i >= h.
        let mut head = total;
        let mut tail = total;
        let mut next_lag = 0usize;
        let gamma = |h: usize| -> f64 {
            while next_lag < h {
                next_lag += 1;
                head -= dense[n - next_lag];
                tail -= dense[next_lag - 1];
            }
            let mut cross = 0.0;
            for &(i, v) in entries {
                let t = i as usize + h;
                if t < n {
                    cross += v * dense[t];
                }
            }
            (cross - mean * (head + tail) + (n - h) as f64 * mean * mean) / nf
        };
        let (value, lag) = initial_monotone(n, gamma);
        (value, lag, false)
    };
    for &(i, _) in entries {
        dense[i as usize] = 0.0;
    }
    result
}

/// Column-wise sparse values `c_i * psi_{j,k}(Z_i)` (or with `psi'`) of all
/// coefficients in `template`.
pub(crate) fn feature_columns(
    basis: &WaveletBasis,
    template: &MultiScaleCoeffs,
    samples: &[f64],
    derivative: bool,
    factor: Option<&[f64]>,
) -> Result<Vec<Vec<(u32, f64)>>> {
    let mut columns = vec![Vec::new(); template.len()];
    let mut row = Vec::new();
    for (i, &x) in samples.iter().enumerate() {
        row.clear();
        sparse_features(basis, template, x, derivative, &mut row)?;
        let c = factor.map_or(1.0, |f| f[i]);
        for &(idx, v) in &row {
            if v != 0.0 {
                columns[idx].push((i as u32, c * v));
            }
        }
    }
    Ok(columns)
}

/// Per-coefficient Geyer estimates, flat in [`MultiScaleCoeffs::iter`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVariances {
    pub template: MultiScaleCoeffs,
    pub values: Vec<f64>,
    pub lags: Vec<usize>,
    pub degenerate: usize,
}

impl CoefficientVariances {
    /// Largest estimate and its `(level, translate)`.
    pub fn sup(&self) -> SigmaSup {
        let mut best = (0.0, SCALING, 0i64);
        for ((j, k, _), &v) in self.template.iter().zip(&self.values) {
            if v > best.0 {
                best = (v, j, k);
            }
        }
        let per_level = self
            .template
            .levels
            .iter()
            .scan(0usize, |offset, l| {
                let range = *offset..*offset + l.values.len();
                *offset = range.end;
                let m = self.values[range].iter().fold(0.0f64, |a, &b| a.max(b));
                Some((l.j, m))
            })
            .collect();
        SigmaSup {
            value: best.0,
            level: best.1,
            k: best.2,
            degenerate: self.degenerate,
            per_level,
        }
    }

    /// Variances as a coefficient vector.
    pub fn as_coeffs(&self) -> MultiScaleCoeffs {
        let mut out = self.template.clone();
        let mut it = self.values.iter();
        for level in out.levels.iter_mut() {
            for v in level.values.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        out
    }
}

/// Geyer estimates of `Sigma_{c psi_{j,k}}` for every stored coefficient.
pub(crate) fn coefficient_variances(
    basis: &WaveletBasis,
    samples: &[f64],
    template: &MultiScaleCoeffs,
    derivative: bool,
    factor: Option<&[f64]>,
) -> Result<CoefficientVariances> {
    if samples.len() < 10 {
        return Err(Error::Domain(format!(
            "autocovariance estimation needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    let columns = feature_columns(basis, template, samples, derivative, factor)?;
    let mut dense = vec![0.0; samples.len()];
    let mut values = Vec::with_capacity(columns.len());
    let mut lags = Vec::with_capacity(columns.len());
    let mut degenerate = 0;
    for col in &columns {
        let (v, lag, deg) = geyer_sparse(col, &mut dense);
        values.push(v);
        lags.push(lag);
        degenerate += deg as usize;
    }
    Ok(CoefficientVariances {
        template: template.clone(),
        values,
        lags,
        degenerate,
    })
}

/// `max_{j <= J, k} Sigma_{psi_{j,k}}` with its location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSup {
    pub value: f64,
    pub level: i32,
    pub k: i64,
    /// Number of coefficients whose sequence had zero variance.
    pub degenerate: usize,
    /// Largest estimate at each level.
    pub per_level: Vec<(i32, f64)>,
}

impl SigmaSup {
    /// `max_j (max_k Sigma_{j,k}) / s_j^2` with `s_j` the level scale of
    /// `weights` (`2^j` for drift weights, `1` otherwise).
    pub fn normalised(&self, weights: &WeightSequence) -> f64 {
        self.per_level
            .iter()
            .map(|&(j, v)| v / weights.level_scale(j).powi(2))
            .fold(0.0, f64::max)
    }
}

/// Largest Geyer estimate over `psi_{j,k}(Z_i)`, `j <= J`, `k in K_j`.
pub fn sigma_sup(
    traj: &Trajectory,
    basis: &WaveletBasis,
    max_level: i32,
    a: f64,
    b: f64,
) -> Result<SigmaSup> {
    let template = MultiScaleCoeffs::zeros(basis, max_level, a, b)?;
    Ok(coefficient_variances(basis, &traj.samples, &template, false, None)?.sup())
}

/// `(1 + rho) / (1 - rho) * sup_mu`, the contraction bound on `Sigma`.
pub fn contraction_bound(rho: f64, sup_mu: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!(
            "contraction rate must lie in [0, 1), got {rho}"
        )));
    }
    if !(sup_mu > 0.0) || !sup_mu.is_finite() {
        return Err(Error::Domain(format!(
            "sup of the density must be positive, got {sup_mu}"
        )));
    }
    Ok((1.0 + rho) / (1.0 - rho) * sup_mu)
}

/// Second largest eigenvalue modulus of the empirical transition matrix on
/// `V_J = span{phi_{j0,l}, psi_{j,k} : j < J}` restricted to `[a, b]`.
pub fn estimate_rho(
    traj: &Trajectory,
    basis: &WaveletBasis,
    level: i32,
    a: f64,
    b: f64,
) -> Result<f64> {
    let j0 = basis.base_level() as i32;
    if level < j0 {
        return Err(Error::Domain(format!(
            "level {level} lies below the base level {j0}"
        )));
    }
    let mut template = MultiScaleCoeffs::zeros(basis, level.max(j0), a, b)?;
    template.levels.retain(|l| l.j < level);
    let dim = template.len();
    let n = traj.samples.len();
    if n < 10 * dim * dim {
        return Err(Error::Domain(format!(
            "transition matrix of dimension {dim} needs at least {} samples, got {n}",
            10 * dim * dim
        )));
    }
    let rows = traj
        .samples
        .iter()
        .map(|&x| {
            let mut row = Vec::new();
            sparse_features(basis, &template, x, false, &mut row)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut trans = DMatrix::<f64>::zeros(dim, dim);
    for (i, row) in rows.iter().enumerate() {
        for &(p, u) in row {
            for &(q, v) in row {
                gram[(p, q)] += u * v;
            }
            if let Some(next) = rows.get(i + 1) {
                for &(q, v) in next {
                    trans[(p, q)] += u * v;
                }
            }
        }
    }
    gram /= n as f64;
    trans /= (n - 1) as f64;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let low = eig.eigenvalues.min();
    if !(top > 0.0) || low < 1e-12 * top {
        return Err(Error::Conditioning(format!(
            "empirical Gram matrix is singular (eigenvalues in [{low:.3e}, {top:.3e}]); \
             use more observations or a coarser level"
        )));
    }
    let inv_sqrt = DVector::from_iterator(
        dim,
        eig.eigenvalues
            .iter()
            .map(|&l| 1.0 / (l.max(0.0) + GRAM_RIDGE).sqrt()),
    );
    let whitening =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let whitened = &whitening * trans * &whitening;
    let mut moduli: Vec<f64> = whitened
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    if moduli.iter().any(|m| !m.is_finite()) {
        return Err(Error::Conditioning(
            "transition eigenvalues are not finite".into(),
        ));
    }
    moduli.sort_by(|x, y| y.total_cmp(x));
    let second = moduli.get(1).copied().unwrap_or(0.0);
    Ok(second.clamp(0.0, 1.0 - 1e-6))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    GaussianBound,
    McQuantile,
    /// Supplied directly by the caller.
    Fixed,
}

/// Radius multiplier `zeta` of a multi-scale band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub alpha: f64,
    pub zeta: f64,
    pub construction: Construction,
    #[serde(rename = "Sigma")]
    pub sigma: f64,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// `log |K_j|` evaluated in floating point so that very fine levels do not
/// overflow translate indices.
fn log_index_count(basis: &WaveletBasis, level: i32, a: f64, b: f64) -> f64 {
    if level < 50 {
        if let Ok(set) = index_set(basis, level, a, b) {
            return (set.len() as f64).ln();
        }
    }
    let n = basis.order() as f64;
    let s = 2f64.powi(level);
    ((s * b + n - 1.0).floor() - (s * a - n).ceil() + 1.0).ln()
}

/// `C = (sup_{j >= j0} (4 log|K_j| + 2 log 2) / j)^{1/2}`, scanning
/// `j0 ..= j_cap + 40` and extending while the summand still increases
/// somewhere in the last ten levels.
pub fn sup_constant(basis: &WaveletBasis, j_cap: i32, a: f64, b: f64) -> Result<f64> {
    let j0 = basis.base_level() as i32;
    if j0 < 1 {
        return Err(Error::Config(
            "the critical-value bound needs j0 >= 1".into(),
        ));
    }
    index_set(basis, j0, a, b)?;
    let term = |j: i32| (4.0 * log_index_count(basis, j, a, b) + 2.0 * 2f64.ln()) / j as f64;
    let mut end = j_cap.max(j0) + C_SCAN_EXTRA;
    loop {
        let tail: Vec<f64> = (end - 10..=end).map(term).collect();
        if tail.windows(2).all(|w| w[1] < w[0]) {
            break;
        }
        end += C_SCAN_EXTRA;
        if end > 1000 {
            return Err(Error::Conditioning(
                "index-count summand is not eventually decreasing".into(),
            ));
        }
    }
    let sup = (j0..=end).map(term).fold(f64::NEG_INFINITY, f64::max);
    Ok(sup.sqrt())
}

/// Checks `w_{-1} = sqrt(j0)` and `w_j / sqrt(j) >= 1` after removing the
/// level scale of `weights`.
pub fn check_bound_normalisation(weights: &WeightSequence, up_to: i32) -> Result<()> {
    let j0 = weights.base_level as i32;
    let scaled = |j: i32| weights.weight(j) / weights.level_scale(j);
    let w_scaling = scaled(SCALING);
    if (w_scaling - (j0 as f64).sqrt()).abs() > 1e-12 * w_scaling.max(1.0) {
        return Err(Error::Config(format!(
            "the critical-value bound needs a scaling weight of sqrt(j0) = {:.6}, got {w_scaling:.6}",
            (j0 as f64).sqrt()
        )));
    }
    for j in j0..=up_to {
        let r = scaled(j) / (j as f64).sqrt();
        if r < 1.0 - 1e-12 {
            return Err(Error::Config(format!(
                "the critical-value bound needs w_j >= sqrt(j); level {j} has ratio {r:.6}"
            )));
        }
    }
    Ok(())
}

/// Closed-form over-estimate of the `(1 - alpha)`-quantile of the limiting
/// multi-scale norm:
/// `(sqrt(2 log(1/alpha)) + 2C + 32/(3C) 2^{-2 j0}) sqrt(Sigma)`.
///
/// For drift weights `sigma` must already be the normalised supremum
/// `sup Sigma_{j,k} / 4^j`.
pub fn zeta_gaussian_bound(
    alpha: f64,
    sigma: f64,
    basis: &WaveletBasis,
    weights: &WeightSequence,
    j_cap: i32,
    a: f64,
    b: f64,
) -> Result<CriticalValue> {
    check_alpha(alpha)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!(
            "Sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if weights.base_level != basis.base_level() {
        return Err(Error::Config(format!(
            "weights are built for j0 = {}, the basis uses j0 = {}",
            weights.base_level,
            basis.base_level()
        )));
    }
    let c = sup_constant(basis, j_cap, a, b)?;
    check_bound_normalisation(weights, j_cap.max(basis.base_level() as i32) + C_SCAN_EXTRA)?;
    let j0 = basis.base_level() as i32;
    let factor =
        (2.0 * (1.0 / alpha).ln()).sqrt() + 2.0 * c + 32.0 / (3.0 * c) * 2f64.powi(-2 * j0);
    Ok(CriticalValue {
        alpha,
        zeta: factor * sigma.sqrt(),
        construction: Construction::GaussianBound,
        sigma,
        c: Some(c),
        seed: None,
        warning: None,
    })
}

/// Covariance of the limiting Gaussian coefficient field.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceModel {
    /// Independent coordinates with the given variances.
    Diagonal(Vec<f64>),
    /// Full covariance matrix, projected to the nearest PSD matrix.
    Full(DMatrix<f64>),
}

impl CovarianceModel {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::Diagonal(v) => v.len(),
            CovarianceModel::Full(m) => m.nrows(),
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        match self {
            CovarianceModel::Diagonal(v) => v.clone(),
            CovarianceModel::Full(m) => m.diagonal().iter().copied().collect(),
        }
    }
}

/// Weight `w_j` of every coefficient of `template`, flat.
pub fn coefficient_weights(template: &MultiScaleCoeffs, weights: &WeightSequence) -> Vec<f64> {
    template.iter().map(|(j, _, _)| weights.weight(j)).collect()
}

/// Symmetric square-root factor of the nearest PSD matrix.
fn psd_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return None;
    }
    let roots = DVector::from_iterator(
        m.nrows(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    factor.iter().all(|v| v.is_finite()).then_some(factor)
}

const MC_CHUNK: usize = 1024;

/// Empirical `(1 - alpha)`-quantile of `max_i |G_i| / w_i` for a centred
/// Gaussian vector `G` with the given covariance.
pub fn zeta_mc_quantile(
    alpha: f64,
    model: &CovarianceModel,
    weights: &[f64],
    replications: usize,
    seed: u64,
) -> Result<CriticalValue> {
    check_alpha(alpha)?;
    if replications < 1000 {
        return Err(Error::Config(format!(
            "Monte Carlo quantiles need at least 1000 replications, got {replications}"
        )));
    }
    let dim = model.dim();
    if weights.len() != dim {
        return Err(Error::Config(format!(
            "{} weights for a covariance of dimension {dim}",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Config("weights must be positive".into()));
    }
    let diag = model.diagonal();
    if diag.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("variances must be finite and >= 0".into()));
    }
    let mut warning = None;
    let factor = match model {
        CovarianceModel::Full(m) if dim <= MAX_FULL_DIM => {
            let f = psd_factor(m);
            if f.is_none() {
                warning =
                    Some("full covariance is not PSD after projection; used its diagonal".into());
            }
            f
        }
        CovarianceModel::Full(_) => {
            warning = Some(format!(
                "dimension {dim} exceeds {MAX_FULL_DIM}; used the diagonal model"
            ));
            None
        }
        CovarianceModel::Diagonal(_) => None,
    };
    let sd: Vec<f64> = diag.iter().map(|v| v.sqrt()).collect();
    let chunks = replications.div_ceil(MC_CHUNK);
    let mut norms: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, c as u64));
            let count = MC_CHUNK.min(replications - c * MC_CHUNK);
            let mut z = DVector::<f64>::zeros(dim);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let norm = match &factor {
                    Some(f) => {
                        for v in z.iter_mut() {
                            *v = rng.sample(StandardNormal);
                        }
                        let g = f * &z;
                        g.iter()
                            .zip(weights)
                            .map(|(x, w)| x.abs() / w)
                            .fold(0.0, f64::max)
                    }
                    None => sd
                        .iter()
                        .zip(weights)
                        .map(|(s, w)| {
                            let x: f64 = rng.sample(StandardNormal);
                            (s * x).abs() / w
                        })
                        .fold(0.0, f64::max),
                };
                out.push(norm);
            }
            out
        })
        .collect();
    norms.sort_by(f64::total_cmp);
    let rank = ((1.0 - alpha) * replications as f64).ceil() as usize;
    let zeta = norms[rank.clamp(1, replications) - 1];
    Ok(CriticalValue {
        alpha,
        zeta,
        construction: Construction::McQuantile,
        sigma: diag.iter().copied().fold(0.0, f64::max),
        c: None,
        seed: Some(seed),
        warning,
    })
}

/// Long-run covariance matrix of `(psi_{j,k}(Z_i))` over the coefficients
/// of `template`, summing cross-covariances up to the largest diagonal
/// Geyer lag.
pub fn estimate_covariance(
    basis: &WaveletBasis,
    samples: &[f64],
    template: &MultiScaleCoeffs,
) -> Result<DMatrix<f64>> {
    let dim = template.len();
    if dim > MAX_FULL_DIM {
        return Err(Error::Config(format!(
            "full covariance limited to dimension {MAX_FULL_DIM}, got {dim}"
        )));
    }
    let diag = coefficient_variances(basis, samples, template, false, None)?;
    let max_lag = diag.lags.iter().copied().max().unwrap_or(0);
    let n = samples.len();
    let rows = samples
        .iter()
        .map(|&x| {
            let mut row = Vec::new();
            sparse_features(basis, template, x, false, &mut row)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; dim];
    for row in &rows {
        for &(p, v) in row {
            mean[p] += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for h in 0..=max_lag.min(n - 1) {
        let mut raw = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n - h {
            for &(p, u) in &rows[i] {
                for &(q, v) in &rows[i + h] {
                    raw[(p, q)] += u * v;
                }
            }
        }
        let mut head = vec![0.0; dim];
        let mut tail = vec![0.0; dim];
        for row in &rows[..n - h] {
            for &(p, v) in row {
                head[p] += v;
            }
        }
        for row in &rows[h..] {
            for &(p, v) in row {
                tail[p] += v;
            }
        }
        let mut gamma = raw;
        for p in 0..dim {
            for q in 0..dim {
                gamma[(p, q)] = (gamma[(p, q)] - mean[p] * tail[q] - head[p] * mean[q]
                    + (n - h) as f64 * mean[p] * mean[q])
                    / n as f64;
            }
        }
        if h == 0 {
            cov += &gamma;
        } else {
            cov += &gamma + gamma.transpose();
        }
    }
    Ok(cov)
}

/// Weights normalised for [`zeta_gaussian_bound`].
pub fn bound_weights(weights: &WeightSequence) -> WeightSequence {
    weights.with_scaling(ScalingWeight::CriticalValue)
}
