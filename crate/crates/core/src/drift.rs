//! Drift estimation through `b = (log mu)' / 2` and drift bands.

use serde::{Deserialize, Serialize};

use crate::density::{estimate_density, linf_radius, DensityBand, SmoothnessCap, BAND_FORMAT};
use crate::error::{Error, Result};
use crate::simulate::Trajectory;
use crate::variance::{coefficient_variances, CoefficientVariances, SigmaSup};
use crate::wavelet::{
    analyze_nodes, analyze_nodes_derivative, multiscale_norm, sample_on_nodes,
    sup_norm_on_interval, synthesize, synthesize_derivative, MultiScaleCoeffs, NodeGrid,
    Quadrature, WaveletBasis, WeightSequence, DEFAULT_SUP_GRID,
};

/// Positivity floor as a fraction of the estimated `sup mu`.
pub const POSITIVITY_FRACTION: f64 = 1e-4;

/// The map `xi(f) = f' / (2f)` guarded by a positivity floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiMap {
    pub eps_pos: f64,
}

impl XiMap {
    pub fn new(eps_pos: f64) -> Result<Self> {
        if !(eps_pos > 0.0) || !eps_pos.is_finite() {
            return Err(Error::Domain(format!(
                "positivity floor must be positive, got {eps_pos}"
            )));
        }
        Ok(XiMap { eps_pos })
    }

    /// Floor `1e-4 * sup mu_hat` on `[a, b]`.
    pub fn for_density(
        basis: &WaveletBasis,
        density: &MultiScaleCoeffs,
        a: f64,
        b: f64,
    ) -> Result<Self> {
        let sup = sup_norm_on_interval(basis, density, a, b, DEFAULT_SUP_GRID)?;
        XiMap::new(POSITIVITY_FRACTION * sup)
    }

    fn check(&self, value: f64, x: f64) -> Result<()> {
        if value >= self.eps_pos {
            Ok(())
        } else {
            Err(Error::PositivityFloor {
                floor: self.eps_pos,
                x_min: x,
                x_max: x,
                points: 1,
            })
        }
    }

    /// `f'(x) / (2 f(x))` from the value and derivative of `f` at `x`.
    pub fn forward(&self, value: f64, derivative: f64, x: f64) -> Result<f64> {
        self.check(value, x)?;
        Ok(derivative / (2.0 * value))
    }

    /// Hadamard derivative `xi'_mu(h) = (h / mu)' / 2` at `x`.
    pub fn derivative(&self, mu: f64, dmu: f64, h: f64, dh: f64, x: f64) -> Result<f64> {
        self.check(mu, x)?;
        Ok(0.5 * (dh * mu - h * dmu) / (mu * mu))
    }
}

/// `x -> exp(2 int_a^x g - c_g)` normalised to unit mass on `[a, b]`.
///
/// The primitive is tabulated by Simpson's rule and interpolated by cubic
/// Hermite polynomials, so the log-derivative of the result reproduces `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiInverse {
    a: f64,
    step: f64,
    primitive: Vec<f64>,
    slope: Vec<f64>,
    log_mass: f64,
}

pub fn xi_inverse<G: Fn(f64) -> f64>(g: G, a: f64, b: f64, step: f64) -> Result<XiInverse> {
    if !(a < b) || !(step > 0.0) {
        return Err(Error::Domain(format!(
            "inverse map needs a < b and a positive step, got [{a}, {b}] and {step}"
        )));
    }
    let cells = ((b - a) / step).ceil().max(1.0) as usize;
    let h = (b - a) / cells as f64;
    let slope: Vec<f64> = (0..=cells).map(|i| g(a + i as f64 * h)).collect();
    let mut primitive = Vec::with_capacity(cells + 1);
    primitive.push(0.0);
    for i in 0..cells {
        let mid = g(a + (i as f64 + 0.5) * h);
        let next = primitive[i] + h / 6.0 * (slope[i] + 4.0 * mid + slope[i + 1]);
        primitive.push(next);
    }
    if primitive.iter().chain(&slope).any(|v| !v.is_finite()) {
        return Err(Error::Domain("primitive of the drift is not finite".into()));
    }
    let mut inv = XiInverse {
        a,
        step: h,
        primitive,
        slope,
        log_mass: 0.0,
    };
    // Simpson on the Hermite interpolant at cell midpoints.
    let shift = inv
        .primitive
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut mass = 0.0;
    for i in 0..cells {
        let x0 = a + i as f64 * h;
        let e0 = (2.0 * (inv.primitive[i] - shift)).exp();
        let e1 = (2.0 * (inv.primitive[i + 1] - shift)).exp();
        let em = (2.0 * (inv.log_primitive(x0 + 0.5 * h) - shift)).exp();
        mass += h / 6.0 * (e0 + 4.0 * em + e1);
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Domain("inverse map has no finite mass".into()));
    }
    inv.log_mass = 2.0 * shift + mass.ln();
    Ok(inv)
}

impl XiInverse {
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let cells = self.primitive.len() - 1;
        let t = (x - self.a) / self.step;
        if !(t >= 0.0) || t > cells as f64 {
            return None;
        }
        let i = (t.floor() as usize).min(cells - 1);
        Some((i, t - i as f64))
    }

    /// Hermite interpolant of `int_a^x g`.
    fn log_primitive(&self, x: f64) -> f64 {
        let Some((i, t)) = self.locate(x) else {
            return f64::NEG_INFINITY;
        };
        let h = self.step;
        let (p0, p1) = (self.primitive[i], self.primitive[i + 1]);
        let (m0, m1) = (self.slope[i] * h, self.slope[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1
    }

    /// Derivative of the interpolated primitive.
    fn interpolated_slope(&self, x: f64) -> f64 {
        let Some((i, t)) = self.locate(x) else {
            return 0.0;
        };
        let h = self.step;
        let (p0, p1) = (self.primitive[i], self.primitive[i + 1]);
        let (m0, m1) = (self.slope[i] * h, self.slope[i + 1] * h);
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * p0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h
    }

    /// Density value; zero outside the tabulated interval.
    pub fn eval(&self, x: f64) -> f64 {
        let p = self.log_primitive(x);
        if p == f64::NEG_INFINITY {
            0.0
        } else {
            (2.0 * p - self.log_mass).exp()
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        2.0 * self.interpolated_slope(x) * self.eval(x)
    }

    pub fn interval(&self) -> (f64, f64) {
        (
            self.a,
            self.a + self.step * (self.primitive.len() - 1) as f64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMethod {
    /// `xi(mu_hat_J)` evaluated pointwise.
    Plugin,
    /// `pi_J((log mu_hat_{J+U})' / 2)`.
    Direct,
}

/// Drift estimate with the density estimate it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    /// Coefficients of the projection to `level`.
    pub coeffs: MultiScaleCoeffs,
    pub level: i32,
    /// The density estimate lives at `level + offset`.
    pub offset: u32,
    pub n: usize,
    pub method: DriftMethod,
    pub density: MultiScaleCoeffs,
    pub xi: XiMap,
    /// Quadrature nodes outside `[a, b]` where the density fell below the
    /// floor and the log-derivative was set to zero.
    pub clipped: usize,
    /// `sigma^2` rescaling applied to the estimate.
    #[serde(default = "unit")]
    pub sigma2: f64,
}

fn unit() -> f64 {
    1.0
}

impl DriftEstimate {
    /// Density estimate level `J + U`.
    pub fn density_level(&self) -> i32 {
        self.level + self.offset as i32
    }

    /// Estimated drift at `x`: the projection for the direct method,
    /// `xi(mu_hat)` for the plug-in.
    pub fn eval(&self, basis: &WaveletBasis, x: f64) -> Result<f64> {
        match self.method {
            DriftMethod::Direct => Ok(synthesize(basis, &self.coeffs, x)),
            DriftMethod::Plugin => {
                let m = synthesize(basis, &self.density, x);
                let d = synthesize_derivative(basis, &self.density, x)?;
                Ok(self.sigma2 * self.xi.forward(m, d, x)?)
            }
        }
    }

    /// Multiplies the estimate by `sigma^2` (the drift of `dX = b dt + sigma dW`
    /// when the density was estimated from such a path).
    pub fn with_volatility(mut self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        let s2 = sigma * sigma;
        self.coeffs = self.coeffs.scale(s2 / self.sigma2);
        self.sigma2 = s2;
        Ok(self)
    }
}

fn positivity_error(floor: f64, bad: &[f64]) -> Error {
    let x_min = bad.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = bad.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Error::PositivityFloor {
        floor,
        x_min,
        x_max,
        points: bad.len(),
    }
}

/// `(log f)' / 2` on the quadrature nodes of `template`; values below the
/// floor are an error inside `[a, b]` and set to zero outside.
fn log_derivative_nodes(
    basis: &WaveletBasis,
    density: &MultiScaleCoeffs,
    xi: &XiMap,
    template: &MultiScaleCoeffs,
    quad: Quadrature,
) -> Result<(NodeGrid, usize)> {
    let [a, b] = template.interval;
    let mut bad = Vec::new();
    let mut clipped = 0;
    let mut grid = sample_on_nodes(basis, template, quad, |_| 0.0);
    let first = grid.first;
    let step = grid.step;
    for (i, v) in grid.values.iter_mut().enumerate() {
        let x = (first + i as i64) as f64 * step + 0.5 * step;
        let m = synthesize(basis, density, x);
        if m >= xi.eps_pos {
            *v = synthesize_derivative(basis, density, x)? / (2.0 * m);
        } else if x >= a && x <= b {
            bad.push(x);
        } else {
            clipped += 1;
        }
    }
    if !bad.is_empty() {
        return Err(positivity_error(xi.eps_pos, &bad));
    }
    Ok((grid, clipped))
}

fn check_positive_on_grid(
    basis: &WaveletBasis,
    density: &MultiScaleCoeffs,
    xi: &XiMap,
    a: f64,
    b: f64,
) -> Result<()> {
    let bad: Vec<f64> = crate::wavelet::uniform_grid(a, b, DEFAULT_SUP_GRID)
        .into_iter()
        .filter(|&x| synthesize(basis, density, x) < xi.eps_pos)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(positivity_error(xi.eps_pos, &bad))
    }
}

/// Distance `(2N - 1) 2^{-j0}` by which basis functions meeting `[a, b]`
/// reach outside it.
pub fn support_margin(basis: &WaveletBasis) -> f64 {
    (2 * basis.order() - 1) as f64 * 2f64.powi(-(basis.base_level() as i32))
}

/// Projection of `(log f)' / 2` on `[a, b]` to `level`, where `f` is given by
/// `density` (coefficients at level `level + offset`). The density should be
/// stored on `[a, b]` widened by [`support_margin`]; below the positivity
/// floor the log-derivative is an error on `[a, b]` and zero outside.
pub fn drift_from_density(
    basis: &WaveletBasis,
    density: &MultiScaleCoeffs,
    level: i32,
    method: DriftMethod,
    n: usize,
    a: f64,
    b: f64,
) -> Result<DriftEstimate> {
    if !basis.has_derivative() {
        return Err(Error::Config(format!(
            "drift estimation needs a differentiable basis (order >= 3), got order {}",
            basis.order()
        )));
    }
    let density_level = density.max_level();
    if level > density_level {
        return Err(Error::Domain(format!(
            "drift level {level} exceeds the density level {density_level}"
        )));
    }
    let [da, db] = density.interval;
    if !(da <= a && b <= db) {
        return Err(Error::Domain(format!(
            "density on [{da}, {db}] does not cover the drift interval [{a}, {b}]"
        )));
    }
    let xi = XiMap::for_density(basis, density, a, b)?;
    check_positive_on_grid(basis, density, &xi, a, b)?;
    let template = MultiScaleCoeffs::zeros(basis, level, a, b)?;
    let quad = Quadrature::for_integrand(basis, density_level);
    let (grid, clipped) = log_derivative_nodes(basis, density, &xi, &template, quad)?;
    let coeffs = analyze_nodes(basis, &grid, &template)?;
    Ok(DriftEstimate {
        coeffs,
        level,
        offset: (density_level - level) as u32,
        n,
        method,
        density: density.clone(),
        xi,
        clipped,
        sigma2: 1.0,
    })
}

/// `U = ceil(log2 log n)`, at least 1.
pub fn default_offset(n: usize) -> u32 {
    let l = (n.max(3) as f64).ln().log2().ceil();
    l.max(1.0) as u32
}

/// Plug-in estimate `xi(mu_hat_J)`.
pub fn estimate_drift_plugin(
    traj: &Trajectory,
    basis: &WaveletBasis,
    level: i32,
    a: f64,
    b: f64,
) -> Result<DriftEstimate> {
    let m = support_margin(basis);
    let est = estimate_density(traj, basis, level, a - m, b + m)?;
    drift_from_density(basis, &est.coeffs, level, DriftMethod::Plugin, est.n, a, b)
}

/// Two-level estimate `pi_J((log mu_hat_{J+U})' / 2)`; `offset` defaults to
/// [`default_offset`].
pub fn estimate_drift_direct(
    traj: &Trajectory,
    basis: &WaveletBasis,
    level: i32,
    offset: Option<u32>,
    a: f64,
    b: f64,
) -> Result<DriftEstimate> {
    if !basis.has_derivative() {
        return Err(Error::Config(format!(
            "drift estimation needs a differentiable basis (order >= 3), got order {}",
            basis.order()
        )));
    }
    let offset = offset.unwrap_or_else(|| default_offset(traj.samples.len()));
    if offset < 1 {
        return Err(Error::Domain(
            "the direct estimator needs an offset U >= 1".into(),
        ));
    }
    let m = support_margin(basis);
    let est = estimate_density(traj, basis, level + offset as i32, a - m, b + m)?;
    drift_from_density(basis, &est.coeffs, level, DriftMethod::Direct, est.n, a, b)
}

/// Geyer estimates of the asymptotic variances of `psi'_{j,k} / (2 mu_hat)`
/// along the path, for `j <= J` of the estimate.
pub fn drift_coefficient_variances(
    basis: &WaveletBasis,
    traj: &Trajectory,
    est: &DriftEstimate,
) -> Result<CoefficientVariances> {
    let factor: Vec<f64> = traj
        .samples
        .iter()
        .map(|&x| {
            let m = synthesize(basis, &est.density, x);
            if m >= est.xi.eps_pos {
                est.sigma2 / (2.0 * m)
            } else {
                0.0
            }
        })
        .collect();
    coefficient_variances(basis, &traj.samples, &est.coeffs, true, Some(&factor))
}

/// Largest of [`drift_coefficient_variances`].
pub fn drift_sigma_sup(
    basis: &WaveletBasis,
    traj: &Trajectory,
    est: &DriftEstimate,
) -> Result<SigmaSup> {
    Ok(drift_coefficient_variances(basis, traj, est)?.sup())
}

/// Terms of `<b_hat - b, psi> = -<mu_hat - mu, psi' / (2 mu)> + <R, psi>`
/// for a known density `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearisation {
    pub error: MultiScaleCoeffs,
    pub linear: MultiScaleCoeffs,
    pub remainder: MultiScaleCoeffs,
}

/// Evaluates all three terms with the same quadrature. `mu` and `dmu` give
/// the true density and its derivative; `est` holds `mu_hat`.
pub fn linearisation<M: Fn(f64) -> f64, D: Fn(f64) -> f64>(
    basis: &WaveletBasis,
    est: &DriftEstimate,
    mu: M,
    dmu: D,
) -> Result<Linearisation> {
    let template = est.coeffs.scale(0.0);
    let quad = Quadrature::for_integrand(basis, est.density_level());
    let density = &est.density;
    let pointwise = |x: f64| -> Result<(f64, f64, f64, f64)> {
        let m = mu(x);
        let dm = dmu(x);
        let mh = synthesize(basis, density, x);
        let dmh = synthesize_derivative(basis, density, x)?;
        Ok((m, dm, mh, dmh))
    };
    let mut err_grid = sample_on_nodes(basis, &template, quad, |_| 0.0);
    let first = err_grid.first;
    let step = err_grid.step;
    let mut rem_grid = NodeGrid {
        step,
        first,
        values: vec![0.0; err_grid.values.len()],
    };
    let mut lin_grid = NodeGrid {
        step,
        first,
        values: vec![0.0; err_grid.values.len()],
    };
    for i in 0..err_grid.values.len() {
        let x = (first + i as i64) as f64 * step + 0.5 * step;
        let (m, dm, mh, dmh) = pointwise(x)?;
        if m < est.xi.eps_pos || mh < est.xi.eps_pos {
            return Err(Error::PositivityFloor {
                floor: est.xi.eps_pos,
                x_min: x,
                x_max: x,
                points: 1,
            });
        }
        let delta = mh - m;
        let ddelta = dmh - dm;
        // (delta / mu)'
        let ratio_slope = (ddelta * m - delta * dm) / (m * m);
        err_grid.values[i] = dmh / (2.0 * mh) - dm / (2.0 * m);
        lin_grid.values[i] = delta / (2.0 * m);
        rem_grid.values[i] = -delta / (2.0 * mh) * ratio_slope;
    }
    let error = analyze_nodes(basis, &err_grid, &template)?;
    let remainder = analyze_nodes(basis, &rem_grid, &template)?;
    // -<delta, psi' / (2 mu)> = -<delta / (2 mu), psi'>.
    let linear = analyze_nodes_derivative(basis, &lin_grid, &template)?.scale(-1.0);
    Ok(Linearisation {
        error,
        linear,
        remainder,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftBandMode {
    /// Image `xi(C)` of a capped density band.
    DensityImage,
    /// Multi-scale ball around the direct estimate with a Hoelder cap.
    Multiscale,
    /// Data-driven level and smoothness with a Bonferroni-corrected radius.
    Adaptive,
}

/// Quantities chosen by the data-driven construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRecord {
    pub j_hat: i32,
    pub s_hat: f64,
    pub v_n: f64,
    pub t_n: f64,
    pub beta: f64,
    pub zeta_beta: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftBand {
    pub center: DriftEstimate,
    pub zeta: f64,
    pub n: usize,
    pub weights: WeightSequence,
    pub cap: Option<SmoothnessCap>,
    pub mode: DriftBandMode,
    pub density_band: Option<DensityBand>,
    pub adaptive: Option<AdaptiveRecord>,
    /// Sup-norm half-width implied by the multi-scale ball and the cap.
    pub linf_radius: Option<f64>,
}

/// Builds a drift band. For [`DriftBandMode::Multiscale`] the cap is
/// `cap_scale * w_J 2^{-J} / sqrt(J)`; [`DriftBandMode::DensityImage`] needs
/// the density band whose image it is.
#[allow(clippy::too_many_arguments)]
pub fn band_drift(
    basis: &WaveletBasis,
    est: &DriftEstimate,
    zeta: f64,
    weights: WeightSequence,
    s: f64,
    mode: DriftBandMode,
    density_band: Option<DensityBand>,
    cap_scale: f64,
) -> Result<DriftBand> {
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(Error::Domain(format!("zeta must be positive, got {zeta}")));
    }
    if !(cap_scale > 0.0) {
        return Err(Error::Domain(format!(
            "cap scale must be positive, got {cap_scale}"
        )));
    }
    if mode == DriftBandMode::DensityImage && density_band.is_none() {
        return Err(Error::Config(
            "the image band needs the underlying density band".into(),
        ));
    }
    let level = est.level;
    let u_n = weights.weight(level) * 2f64.powi(-level) / (level.max(1) as f64).sqrt();
    let cap = match mode {
        DriftBandMode::DensityImage => None,
        DriftBandMode::Multiscale | DriftBandMode::Adaptive => Some(SmoothnessCap {
            s,
            u_n,
            scale: cap_scale,
        }),
    };
    Ok(band_with_cap(
        basis,
        est,
        zeta,
        weights,
        cap,
        mode,
        density_band,
    ))
}

pub(crate) fn band_with_cap(
    basis: &WaveletBasis,
    est: &DriftEstimate,
    zeta: f64,
    weights: WeightSequence,
    cap: Option<SmoothnessCap>,
    mode: DriftBandMode,
    density_band: Option<DensityBand>,
) -> DriftBand {
    let linf = cap
        .as_ref()
        .map(|c| linf_radius(basis, est.level, zeta, est.n, &weights, c));
    DriftBand {
        center: est.clone(),
        zeta,
        n: est.n,
        weights,
        cap,
        mode,
        density_band,
        adaptive: None,
        linf_radius: linf,
    }
}

impl DriftBand {
    pub fn radius(&self) -> f64 {
        self.zeta / (self.n as f64).sqrt()
    }

    pub fn statistic(&self, coeffs: &MultiScaleCoeffs) -> Result<f64> {
        let diff = coeffs
            .truncate(self.center.level)
            .axpy(-1.0, &self.center.coeffs)?;
        Ok(multiscale_norm(&diff, &self.weights))
    }

    /// Membership from coefficients `<f, psi_{j,k}>`, `j <= J`, and a Hoelder
    /// norm bound (multi-scale and adaptive bands).
    pub fn contains_coeffs(&self, coeffs: &MultiScaleCoeffs, holder: Option<f64>) -> Result<bool> {
        if self.mode == DriftBandMode::DensityImage {
            return Err(Error::Config(
                "image bands test membership through the inverse map".into(),
            ));
        }
        let inside = self.statistic(coeffs)? < self.radius();
        let capped = match (&self.cap, holder) {
            (None, _) => true,
            (Some(cap), Some(h)) => h <= cap.bound(),
            (Some(_), None) => {
                return Err(Error::Config(
                    "a capped band needs a Hoelder norm bound for membership".into(),
                ))
            }
        };
        Ok(inside && capped)
    }

    /// Membership of `g` in the image band: `xi^{-1}(g)`, normalised on
    /// `support`, must lie in the density band. `holder` bounds the Hoelder
    /// norm of that density.
    pub fn contains_via_density<G: Fn(f64) -> f64>(
        &self,
        basis: &WaveletBasis,
        g: G,
        support: (f64, f64),
        holder: Option<f64>,
    ) -> Result<bool> {
        let band = self.density_band.as_ref().ok_or_else(|| {
            Error::Config("membership through the inverse map needs a density band".into())
        })?;
        let f = xi_inverse(g, support.0, support.1, 1e-3)?;
        let coeffs = crate::density::band_coefficients(basis, band, |x| f.eval(x))?;
        band.contains_coeffs(&coeffs, holder)
    }

    pub fn export(&self) -> DriftBandExport {
        DriftBandExport {
            format: BAND_FORMAT.into(),
            method: self.mode,
            estimator: self.center.method,
            center_coeffs: self.center.coeffs.clone(),
            zeta: self.zeta,
            n: self.n,
            weights: self.weights,
            level: self.center.level,
            offset: self.center.offset,
            cap: self.cap,
            linf: self.linf_radius,
            adaptive: self.adaptive,
        }
    }

    /// `x, center, lower, upper` over `[a, b]`.
    pub fn plot_csv(&self, basis: &WaveletBasis, points: usize) -> Result<String> {
        use std::fmt::Write as _;
        let radius = self
            .linf_radius
            .ok_or_else(|| Error::Config("plot data needs a capped band".into()))?;
        let [a, b] = self.center.coeffs.interval;
        let mut out = String::from("x,center,lower,upper\n");
        for x in crate::wavelet::uniform_grid(a, b, points) {
            let c = self.center.eval(basis, x)?;
            writeln!(out, "{x:?},{c:?},{:?},{:?}", c - radius, c + radius).unwrap();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBandExport {
    pub format: String,
    pub method: DriftBandMode,
    pub estimator: DriftMethod,
    pub center_coeffs: MultiScaleCoeffs,
    pub zeta: f64,
    pub n: usize,
    pub weights: WeightSequence,
    pub level: i32,
    pub offset: u32,
    pub cap: Option<SmoothnessCap>,
    pub linf: Option<f64>,
    pub adaptive: Option<AdaptiveRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_of_gaussians() {
        let xi = XiMap::new(1e-12).unwrap();
        for &x in &[-1.5f64, -0.3, 0.0, 0.7, 2.0] {
            let f = (-x * x).exp();
            let df = -2.0 * x * f;
            assert!((xi.forward(f, df, x).unwrap() + x).abs() < 1e-14);
            let g = (-x * x / 2.0_f64).exp();
            assert!((xi.forward(g, -x * g, x).unwrap() + x / 2.0).abs() < 1e-14);
        }
        assert!(matches!(
            xi.forward(0.0, 1.0, 0.5),
            Err(Error::PositivityFloor { .. })
        ));
    }

    #[test]
    fn inverse_of_constant_is_uniform() {
        let f = xi_inverse(|_| 0.0, -1.0, 3.0, 1e-2).unwrap();
        for &x in &[-1.0, 0.0, 2.5, 3.0] {
            assert!((f.eval(x) - 0.25).abs() < 1e-12);
        }
        assert_eq!(f.eval(3.5), 0.0);
    }

    #[test]
    fn default_offset_values() {
        assert_eq!(default_offset(100_000), 4);
        assert_eq!(default_offset(20_000), 4);
        assert_eq!(default_offset(10), 2);
    }
}
