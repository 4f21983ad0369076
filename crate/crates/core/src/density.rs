//! Projection estimator of the invariant density and its confidence bands.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::simulate::Trajectory;
use crate::wavelet::{
    analyze_function, analyze_samples, sup_norm_on_interval, synthesize, uniform_grid,
    MultiScaleCoeffs, Quadrature, WaveletBasis, WeightSequence, DEFAULT_SUP_GRID, SCALING,
};

/// Which rate exponent sets the resolution level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// `2^J = (n / log n)^{1/(2s+1)}`.
    Chain,
    /// `2^J = (n / log n)^{1/(2s+3)}`.
    Diffusion,
}

impl Schedule {
    fn denominator(self, s: f64) -> f64 {
        match self {
            Schedule::Chain => 2.0 * s + 1.0,
            Schedule::Diffusion => 2.0 * s + 3.0,
        }
    }
}

/// `J_n = round(log2((n / log n)^{1/(2s+c)}))`, clamped to at least `j0`.
pub fn resolution_schedule_density(n: usize, s: f64, schedule: Schedule, j0: u32) -> Result<i32> {
    if n < 3 {
        return Err(Error::Domain(format!(
            "resolution schedule needs n >= 3, got {n}"
        )));
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "regularity must be positive, got {s}"
        )));
    }
    let nf = n as f64;
    let level = ((nf / nf.ln()).log2() / schedule.denominator(s)).round() as i32;
    Ok(level.max(j0 as i32))
}

/// Projection estimate `(1/n) sum_i psi_{j,k}(Z_i)` up to level `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub coeffs: MultiScaleCoeffs,
    pub n: usize,
    pub interval: [f64; 2],
    /// How the resolution level was chosen.
    pub rule: String,
}

impl DensityEstimate {
    pub fn level(&self) -> i32 {
        self.coeffs.max_level()
    }

    pub fn eval(&self, basis: &WaveletBasis, x: f64) -> f64 {
        synthesize(basis, &self.coeffs, x)
    }
}

pub fn estimate_density(
    traj: &Trajectory,
    basis: &WaveletBasis,
    level: i32,
    a: f64,
    b: f64,
) -> Result<DensityEstimate> {
    if traj.samples.is_empty() {
        return Err(Error::Domain(
            "density estimation needs a non-empty trajectory".into(),
        ));
    }
    let coeffs = analyze_samples(basis, &traj.samples, level, a, b)?;
    Ok(DensityEstimate {
        coeffs,
        n: traj.samples.len(),
        interval: [a, b],
        rule: format!("fixed(J={level})"),
    })
}

/// Sup norm of the synthesised estimate on an equispaced grid of `[a, b]`.
pub fn estimate_sup_mu(basis: &WaveletBasis, est: &DensityEstimate) -> Result<f64> {
    let [a, b] = est.interval;
    sup_norm_on_interval(basis, &est.coeffs, a, b, DEFAULT_SUP_GRID)
}

/// Hoelder norm on `[a, b]` from the derivatives `f, f', .., f^{(m)}` with
/// `m = ceil(s) - 1`:
/// `max(max_{i < m} |f^{(i)}|_inf, |f^{(m)}|_inf, [f^{(m)}]_{s - m})`,
/// the seminorm taken over pairs of grid points.
pub fn holder_norm(
    derivatives: &[&dyn Fn(f64) -> f64],
    s: f64,
    a: f64,
    b: f64,
    points: usize,
) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "regularity must be positive, got {s}"
        )));
    }
    let order = s.ceil() as usize - 1;
    if derivatives.len() != order + 1 {
        return Err(Error::Domain(format!(
            "Hoelder norm of order {s} needs {} derivative functions, got {}",
            order + 1,
            derivatives.len()
        )));
    }
    let exponent = s - order as f64;
    let grid = uniform_grid(a, b, points);
    let mut norm = 0.0f64;
    for d in derivatives {
        for &x in &grid {
            norm = norm.max(d(x).abs());
        }
    }
    let top: Vec<f64> = grid.iter().map(|&x| derivatives[order](x)).collect();
    let semi = if exponent >= 1.0 {
        top.windows(2)
            .zip(grid.windows(2))
            .map(|(v, x)| (v[1] - v[0]).abs() / (x[1] - x[0]))
            .fold(0.0, f64::max)
    } else {
        let mut m = 0.0f64;
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                m = m.max((top[j] - top[i]).abs() / (grid[j] - grid[i]).powf(exponent));
            }
        }
        m
    };
    let norm = norm.max(semi);
    if norm.is_finite() {
        Ok(norm)
    } else {
        Err(Error::Domain("Hoelder norm is not finite".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandMode {
    /// Multi-scale ball only.
    Multiscale,
    /// Multi-scale ball intersected with a Hoelder ball.
    SmoothnessCap,
    /// Sup-norm band containing the capped band.
    Linf,
}

/// Hoelder-ball constraint `|f|_{C^s} <= scale * u_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessCap {
    pub s: f64,
    pub u_n: f64,
    /// Constant multiplying `u_n`; `1` gives the plain sequence.
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl SmoothnessCap {
    pub fn bound(&self) -> f64 {
        self.scale * self.u_n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinfRadius {
    pub radius: f64,
    /// `radius / rho_n`.
    #[serde(rename = "D")]
    pub d: f64,
    pub rho_n: f64,
    pub grid: usize,
}

/// Band `{f : |f - center|_M < zeta / sqrt(n)}`, optionally capped and
/// widened to a sup-norm band.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityBand {
    pub center: DensityEstimate,
    pub zeta: f64,
    pub n: usize,
    pub weights: WeightSequence,
    pub cap: Option<SmoothnessCap>,
    pub linf: Option<LinfRadius>,
}

/// `sup_x sum_k |g(x - k)|` for a mother function `g` with integer support.
fn overlap_constant(g: impl Fn(f64) -> f64, support: (f64, f64)) -> f64 {
    let (lo, hi) = (support.0.floor() as i64, support.1.ceil() as i64);
    (0..1024)
        .map(|i| {
            let x = i as f64 / 1024.0;
            (lo - 1..=hi + 1)
                .map(|k| g(x - k as f64).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// `int |u|^s |psi(u)| du / Gamma(ceil(s))`, the constant in
/// `|<f, psi_{j,k}>| <= m_s 2^{-j(s+1/2)} |f|_{C^s}`.
fn moment_constant(basis: &WaveletBasis, s: f64) -> f64 {
    let (lo, hi) = basis.wavelet_support();
    let steps = 1usize << 14;
    let h = (hi - lo) / steps as f64;
    let integral: f64 = (0..steps)
        .map(|i| {
            let u = lo + (i as f64 + 0.5) * h;
            u.abs().powf(s) * basis.psi(u).abs()
        })
        .sum::<f64>()
        * h;
    integral / gamma(s.ceil())
}

/// Sup-norm bound on `f - center` for `f` in the capped band:
/// `(zeta/sqrt n) (c_phi 2^{j0/2} w_{-1} + c_psi sum_{j0<=j<=J} 2^{j/2} w_j)
///  + c_psi m_s cap sum_{j>J} 2^{-js}`.
pub fn linf_radius(
    basis: &WaveletBasis,
    level: i32,
    zeta: f64,
    n: usize,
    weights: &WeightSequence,
    cap: &SmoothnessCap,
) -> f64 {
    let c_phi = overlap_constant(|x| basis.phi(x), basis.scaling_support());
    let c_psi = overlap_constant(|x| basis.psi(x), basis.wavelet_support());
    let j0 = basis.base_level() as i32;
    let mut head = c_phi * 2f64.powf(j0 as f64 / 2.0) * weights.weight(SCALING);
    for j in j0..=level {
        head += c_psi * 2f64.powf(j as f64 / 2.0) * weights.weight(j);
    }
    let s = cap.s;
    let tail = 2f64.powf(-(level + 1) as f64 * s) / (1.0 - 2f64.powf(-s));
    zeta / (n as f64).sqrt() * head + c_psi * moment_constant(basis, s) * cap.bound() * tail
}

/// Builds a density band. `s` fixes the cap `u_n = w_J / sqrt(J)` and, in
/// [`BandMode::Linf`], the rate `rho_n = (n / log n)^{-s/(2s+1)} u_n`.
pub fn band_density(
    basis: &WaveletBasis,
    est: &DensityEstimate,
    zeta: f64,
    weights: WeightSequence,
    s: f64,
    mode: BandMode,
) -> Result<DensityBand> {
    band_density_scaled(basis, est, zeta, weights, s, mode, 1.0)
}

/// [`band_density`] with the cap multiplied by `cap_scale`.
pub fn band_density_scaled(
    basis: &WaveletBasis,
    est: &DensityEstimate,
    zeta: f64,
    weights: WeightSequence,
    s: f64,
    mode: BandMode,
    cap_scale: f64,
) -> Result<DensityBand> {
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(Error::Domain(format!("zeta must be positive, got {zeta}")));
    }
    if !(cap_scale > 0.0) {
        return Err(Error::Domain(format!(
            "cap scale must be positive, got {cap_scale}"
        )));
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "regularity must be positive, got {s}"
        )));
    }
    let level = est.level();
    let cap = match mode {
        BandMode::Multiscale => None,
        BandMode::SmoothnessCap | BandMode::Linf => Some(SmoothnessCap {
            s,
            u_n: weights.weight(level) / (level.max(1) as f64).sqrt(),
            scale: cap_scale,
        }),
    };
    let linf = match (mode, &cap) {
        (BandMode::Linf, Some(cap)) => {
            let radius = linf_radius(basis, level, zeta, est.n, &weights, cap);
            let nf = (est.n as f64).max(3.0);
            let rho_n = (nf / nf.ln()).powf(-s / (2.0 * s + 1.0)) * cap.u_n;
            Some(LinfRadius {
                radius,
                d: radius / rho_n,
                rho_n,
                grid: DEFAULT_SUP_GRID,
            })
        }
        _ => None,
    };
    Ok(DensityBand {
        center: est.clone(),
        zeta,
        n: est.n,
        weights,
        cap,
        linf,
    })
}

impl DensityBand {
    /// Multi-scale radius `zeta / sqrt(n)`.
    pub fn radius(&self) -> f64 {
        self.zeta / (self.n as f64).sqrt()
    }

    /// `sup_{j <= J, k} |coeffs_{j,k} - center_{j,k}| / w_j`.
    pub fn statistic(&self, coeffs: &MultiScaleCoeffs) -> Result<f64> {
        let diff = coeffs
            .truncate(self.center.level())
            .axpy(-1.0, &self.center.coeffs)?;
        Ok(crate::wavelet::multiscale_norm(&diff, &self.weights))
    }

    /// Membership of a function given by its coefficients up to the band
    /// level and, when the band is capped, a bound on its Hoelder norm.
    pub fn contains_coeffs(&self, coeffs: &MultiScaleCoeffs, holder: Option<f64>) -> Result<bool> {
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

    /// Sup-norm half-width, if built in [`BandMode::Linf`].
    pub fn linf_radius(&self) -> Option<f64> {
        self.linf.map(|l| l.radius)
    }

    pub fn export(&self) -> BandExport {
        BandExport {
            format: BAND_FORMAT.into(),
            center_coeffs: self.center.coeffs.clone(),
            zeta: self.zeta,
            n: self.n,
            weights: self.weights,
            cap: self.cap,
            linf: self.linf,
        }
    }

    /// `x, center, lower, upper` over the sup-norm grid of `[a, b]`.
    pub fn plot_csv(&self, basis: &WaveletBasis, points: usize) -> Result<String> {
        let radius = self
            .linf_radius()
            .ok_or_else(|| Error::Config("plot data needs a band built in linf mode".into()))?;
        let [a, b] = self.center.interval;
        let mut out = String::from("x,center,lower,upper\n");
        for x in uniform_grid(a, b, points) {
            let c = self.center.eval(basis, x);
            writeln!(out, "{x:?},{c:?},{:?},{:?}", c - radius, c + radius).unwrap();
        }
        Ok(out)
    }
}

/// Coefficients `<f, psi_{j,k}>` matching the layout of `band`.
pub fn band_coefficients<F: Fn(f64) -> f64>(
    basis: &WaveletBasis,
    band: &DensityBand,
    f: F,
) -> Result<MultiScaleCoeffs> {
    let [a, b] = band.center.interval;
    let level = band.center.level();
    analyze_function(basis, f, level, a, b, Quadrature::for_basis(basis))
}

/// Membership of `f` in the band; `holder` bounds `|f|_{C^s}` on `[a, b]`.
pub fn band_contains<F: Fn(f64) -> f64>(
    basis: &WaveletBasis,
    band: &DensityBand,
    f: F,
    holder: Option<f64>,
) -> Result<bool> {
    let coeffs = band_coefficients(basis, band, f)?;
    band.contains_coeffs(&coeffs, holder)
}

pub const BAND_FORMAT: &str = "ergoband-band/1";

/// Serialised form of a band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandExport {
    pub format: String,
    pub center_coeffs: MultiScaleCoeffs,
    pub zeta: f64,
    pub n: usize,
    pub weights: WeightSequence,
    pub cap: Option<SmoothnessCap>,
    pub linf: Option<LinfRadius>,
}
