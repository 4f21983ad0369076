use serde::{Deserialize, Serialize};

use super::basis::{WaveletBasis, SCALING};
use super::index::{index_set, LevelIndexSet, WeightSequence};
use crate::error::{Error, Result};

/// Default number of grid points for sup norms on `[a, b]`.
pub const DEFAULT_SUP_GRID: usize = 4096;

/// Basis identification stored alongside coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisTag {
    #[serde(rename = "N")]
    pub order: usize,
    pub j0: u32,
}

/// Coefficients of one level on a contiguous translate range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCoeffs {
    pub j: i32,
    pub k_min: i64,
    pub values: Vec<f64>,
}

impl LevelCoeffs {
    pub fn k_max(&self) -> i64 {
        self.k_min + self.values.len() as i64 - 1
    }

    pub fn get(&self, k: i64) -> Option<f64> {
        let idx = k - self.k_min;
        if idx < 0 {
            return None;
        }
        self.values.get(idx as usize).copied()
    }
}

/// Coefficients `x_{j,k}` for `j in {-1, j0, .., J}` and `k` in the index
/// set of each level on `[a, b]`. The first entry of `levels` is always the
/// scaling level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiScaleCoeffs {
    pub basis: BasisTag,
    pub interval: [f64; 2],
    pub levels: Vec<LevelCoeffs>,
}

impl MultiScaleCoeffs {
    /// All-zero coefficients up to `max_level`.
    pub fn zeros(basis: &WaveletBasis, max_level: i32, a: f64, b: f64) -> Result<Self> {
        let j0 = basis.base_level() as i32;
        if max_level < j0 {
            return Err(Error::Domain(format!(
                "maximal level {max_level} lies below the base level {j0}"
            )));
        }
        let levels = std::iter::once(SCALING)
            .chain(j0..=max_level)
            .map(|j| {
                let set = index_set(basis, j, a, b)?;
                Ok(LevelCoeffs {
                    j,
                    k_min: set.k_min,
                    values: vec![0.0; set.len()],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiScaleCoeffs {
            basis: BasisTag {
                order: basis.order(),
                j0: basis.base_level(),
            },
            interval: [a, b],
            levels,
        })
    }

    pub fn max_level(&self) -> i32 {
        self.levels.last().map(|l| l.j).unwrap_or(SCALING)
    }

    pub fn level(&self, j: i32) -> Option<&LevelCoeffs> {
        self.levels.iter().find(|l| l.j == j)
    }

    pub fn level_mut(&mut self, j: i32) -> Option<&mut LevelCoeffs> {
        self.levels.iter_mut().find(|l| l.j == j)
    }

    pub fn get(&self, j: i32, k: i64) -> Option<f64> {
        self.level(j).and_then(|l| l.get(k))
    }

    /// Sets `x_{j,k}`; fails when `(j, k)` is not stored.
    pub fn set(&mut self, j: i32, k: i64, value: f64) -> Result<()> {
        let level = self
            .level_mut(j)
            .ok_or_else(|| Error::Domain(format!("level {j} is not stored")))?;
        let idx = k - level.k_min;
        if idx < 0 || idx as usize >= level.values.len() {
            return Err(Error::Domain(format!("translate {k} is outside level {j}")));
        }
        level.values[idx as usize] = value;
        Ok(())
    }

    /// Iterator over `(j, k, x_{j,k})`.
    pub fn iter(&self) -> impl Iterator<Item = (i32, i64, f64)> + '_ {
        self.levels.iter().flat_map(|l| {
            l.values
                .iter()
                .enumerate()
                .map(move |(i, &v)| (l.j, l.k_min + i as i64, v))
        })
    }

    /// Number of stored coefficients.
    pub fn len(&self) -> usize {
        self.levels.iter().map(|l| l.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Projection to a coarser level by dropping finer levels.
    pub fn truncate(&self, max_level: i32) -> Self {
        let mut out = self.clone();
        out.levels.retain(|l| l.j <= max_level);
        out
    }

    /// `self + factor * other`, level by level on matching index sets.
    pub fn axpy(&self, factor: f64, other: &Self) -> Result<Self> {
        if self.levels.len() != other.levels.len() {
            return Err(Error::Domain(
                "coefficient sets have different depths".into(),
            ));
        }
        let mut out = self.clone();
        for (l, o) in out.levels.iter_mut().zip(other.levels.iter()) {
            if l.j != o.j || l.k_min != o.k_min || l.values.len() != o.values.len() {
                return Err(Error::Domain(format!(
                    "coefficient sets differ at level {}",
                    l.j
                )));
            }
            for (v, w) in l.values.iter_mut().zip(o.values.iter()) {
                *v += factor * w;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for l in out.levels.iter_mut() {
            l.values.iter_mut().for_each(|v| *v *= factor);
        }
        out
    }

    /// Checks the stored layout against the index sets and finiteness.
    pub fn validate(&self, basis: &WaveletBasis) -> Result<()> {
        if self.basis.order != basis.order() || self.basis.j0 != basis.base_level() {
            return Err(Error::Config(format!(
                "coefficients were built for N={}, j0={} but the basis has N={}, j0={}",
                self.basis.order,
                self.basis.j0,
                basis.order(),
                basis.base_level()
            )));
        }
        let [a, b] = self.interval;
        for l in &self.levels {
            let set = index_set(basis, l.j, a, b)?;
            if l.k_min < set.k_min || l.k_max() > set.k_max {
                return Err(Error::Domain(format!(
                    "level {} stores translates outside its index set",
                    l.j
                )));
            }
            if l.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "level {} holds non-finite values",
                    l.j
                )));
            }
        }
        Ok(())
    }
}

/// Translates `k` with `2^j x - k` inside the support of the mother function
/// at `level`, clipped to `set`.
#[inline]
pub(crate) fn active_translates(
    basis: &WaveletBasis,
    level: i32,
    x: f64,
    set_min: i64,
    set_max: i64,
) -> (i64, i64) {
    let (lo, hi) = basis.support_at(level);
    let u = 2f64.powi(basis.dilation(level)) * x;
    let k_lo = (u - hi).ceil() as i64;
    let k_hi = (u - lo).floor() as i64;
    (k_lo.max(set_min), k_hi.min(set_max))
}

/// Nonzero values `psi_{j,k}(x)` (or `psi'_{j,k}(x)`) of all coefficients
/// stored in `template`, as `(flat index, value)` in [`MultiScaleCoeffs::iter`]
/// order. Appends to `out`.
pub(crate) fn sparse_features(
    basis: &WaveletBasis,
    template: &MultiScaleCoeffs,
    x: f64,
    derivative: bool,
    out: &mut Vec<(usize, f64)>,
) -> Result<()> {
    let mut offset = 0;
    for level in &template.levels {
        let scale = 2f64.powi(basis.dilation(level.j));
        let amp = if derivative {
            scale * scale.sqrt()
        } else {
            scale.sqrt()
        };
        let (lo, hi) = active_translates(basis, level.j, x, level.k_min, level.k_max());
        let u = scale * x;
        if derivative {
            let mother = basis.mother_derivative(level.j)?;
            for k in lo..=hi {
                out.push((
                    offset + (k - level.k_min) as usize,
                    amp * mother(u - k as f64),
                ));
            }
        } else {
            let mother = basis.mother(level.j);
            for k in lo..=hi {
                out.push((
                    offset + (k - level.k_min) as usize,
                    amp * mother(u - k as f64),
                ));
            }
        }
        offset += level.values.len();
    }
    Ok(())
}

/// Empirical coefficients `(1/n) sum_i psi_{j,k}(Z_i)` up to `max_level`.
pub fn analyze_samples(
    basis: &WaveletBasis,
    samples: &[f64],
    max_level: i32,
    a: f64,
    b: f64,
) -> Result<MultiScaleCoeffs> {
    if samples.is_empty() {
        return Err(Error::Domain(
            "empirical coefficients need at least one sample".into(),
        ));
    }
    let mut coeffs = MultiScaleCoeffs::zeros(basis, max_level, a, b)?;
    let inv_n = 1.0 / samples.len() as f64;
    for level in coeffs.levels.iter_mut() {
        let j = basis.dilation(level.j);
        let scale = 2f64.powi(j);
        let amp = scale.sqrt();
        let mother = basis.mother(level.j);
        let k_min = level.k_min;
        let k_max = level.k_max();
        let mut acc = vec![0.0; level.values.len()];
        for &x in samples {
            let (lo, hi) = active_translates(basis, level.j, x, k_min, k_max);
            let u = scale * x;
            for k in lo..=hi {
                acc[(k - k_min) as usize] += mother(u - k as f64);
            }
        }
        for (v, s) in level.values.iter_mut().zip(acc) {
            *v = amp * s * inv_n;
        }
    }
    Ok(coeffs)
}

/// Midpoint rule used for inner products `<f, psi_{j,k}>`.
///
/// Nodes sit at `(i + 1/2) 2^{-q}`. With `q = R + j0 - 1` every node maps
/// onto an exact table value at all levels `>= j0`; `q` is raised to
/// `J_f + 6` when the integrand itself has detail up to level `J_f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadrature {
    pub exponent: u32,
}

impl Quadrature {
    pub fn for_basis(basis: &WaveletBasis) -> Self {
        Quadrature {
            exponent: basis.grid_depth() + basis.base_level() - 1,
        }
    }

    /// Grid fine enough for an integrand with detail up to `level`.
    pub fn for_integrand(basis: &WaveletBasis, level: i32) -> Self {
        let base = Self::for_basis(basis).exponent;
        Quadrature {
            exponent: base.max((level.max(0) + 6) as u32),
        }
    }

    pub fn step(&self) -> f64 {
        2f64.powi(-(self.exponent as i32))
    }
}

/// Node index range `[i_lo, i_hi]` of the midpoint rule covering the
/// support of `psi_{level,k}`.
fn node_range(basis: &WaveletBasis, level: i32, k: i64, h: f64) -> (i64, i64) {
    let (lo, hi) = basis.support_at(level);
    let s = 2f64.powi(-basis.dilation(level));
    let x_lo = s * (k as f64 + lo);
    let x_hi = s * (k as f64 + hi);
    (
        (x_lo / h - 0.5).ceil() as i64,
        (x_hi / h - 0.5).floor() as i64,
    )
}

/// Samples of an integrand on the midpoint nodes that cover every basis
/// function stored in `template`.
pub struct NodeGrid {
    pub step: f64,
    pub first: i64,
    pub values: Vec<f64>,
}

impl NodeGrid {
    pub fn node(&self, i: i64) -> f64 {
        (i as f64 + 0.5) * self.step
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| self.node(self.first + i as i64))
    }

    pub fn x_range(&self) -> (f64, f64) {
        (
            self.node(self.first),
            self.node(self.first + self.values.len() as i64 - 1),
        )
    }
}

/// Node range of the midpoint rule covering all basis functions of
/// `template`.
pub fn covering_nodes(
    basis: &WaveletBasis,
    template: &MultiScaleCoeffs,
    quad: Quadrature,
) -> (i64, i64) {
    let h = quad.step();
    let mut first = i64::MAX;
    let mut last = i64::MIN;
    for l in &template.levels {
        if l.values.is_empty() {
            continue;
        }
        first = first.min(node_range(basis, l.j, l.k_min, h).0);
        last = last.max(node_range(basis, l.j, l.k_max(), h).1);
    }
    (first, last)
}

/// Tabulates `f` on the nodes covering the basis functions of `template`.
pub fn sample_on_nodes<F: Fn(f64) -> f64>(
    basis: &WaveletBasis,
    template: &MultiScaleCoeffs,
    quad: Quadrature,
    f: F,
) -> NodeGrid {
    let (first, last) = covering_nodes(basis, template, quad);
    let step = quad.step();
    let values = (first..=last).map(|i| f((i as f64 + 0.5) * step)).collect();
    NodeGrid {
        step,
        first,
        values,
    }
}

/// Inner products of tabulated integrand values with every basis function
/// of `template`'s layout.
pub fn analyze_nodes(
    basis: &WaveletBasis,
    grid: &NodeGrid,
    template: &MultiScaleCoeffs,
) -> Result<MultiScaleCoeffs> {
    analyze_nodes_with(basis, grid, template, false)
}

/// Inner products `<g, psi'_{j,k}>` of tabulated values with derivatives of
/// the basis functions.
pub fn analyze_nodes_derivative(
    basis: &WaveletBasis,
    grid: &NodeGrid,
    template: &MultiScaleCoeffs,
) -> Result<MultiScaleCoeffs> {
    analyze_nodes_with(basis, grid, template, true)
}

fn analyze_nodes_with(
    basis: &WaveletBasis,
    grid: &NodeGrid,
    template: &MultiScaleCoeffs,
    derivative: bool,
) -> Result<MultiScaleCoeffs> {
    if derivative {
        basis.mother_derivative(SCALING).map(drop)?;
    }
    let mut out = template.clone();
    let h = grid.step;
    for level in out.levels.iter_mut() {
        let j = basis.dilation(level.j);
        let scale = 2f64.powi(j);
        let amp = if derivative {
            scale * scale.sqrt()
        } else {
            scale.sqrt()
        };
        let plain = basis.mother(level.j);
        let slope = basis.mother_derivative(level.j).ok();
        let mother = |u: f64| match &slope {
            Some(d) if derivative => d(u),
            _ => plain(u),
        };
        for (idx, v) in level.values.iter_mut().enumerate() {
            let k = level.k_min + idx as i64;
            let (i_lo, i_hi) = node_range(basis, level.j, k, h);
            let mut acc = 0.0;
            for i in i_lo..=i_hi {
                let pos = i - grid.first;
                if pos < 0 || pos as usize >= grid.values.len() {
                    return Err(Error::Domain(
                        "integrand grid does not cover the basis support".into(),
                    ));
                }
                let x = (i as f64 + 0.5) * h;
                acc += grid.values[pos as usize] * mother(scale * x - k as f64);
            }
            *v = amp * acc * h;
        }
    }
    if out
        .levels
        .iter()
        .flat_map(|l| l.values.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Domain("non-finite inner product".into()));
    }
    Ok(out)
}

/// Inner products `<f, psi_{j,k}>` up to `max_level` by the midpoint rule.
pub fn analyze_function<F: Fn(f64) -> f64>(
    basis: &WaveletBasis,
    f: F,
    max_level: i32,
    a: f64,
    b: f64,
    quad: Quadrature,
) -> Result<MultiScaleCoeffs> {
    let template = MultiScaleCoeffs::zeros(basis, max_level, a, b)?;
    let grid = sample_on_nodes(basis, &template, quad, f);
    analyze_nodes(basis, &grid, &template)
}

/// `sum_{j,k} x_{j,k} psi_{j,k}(x)`.
pub fn synthesize(basis: &WaveletBasis, coeffs: &MultiScaleCoeffs, x: f64) -> f64 {
    let mut total = 0.0;
    for level in &coeffs.levels {
        if level.values.is_empty() {
            continue;
        }
        let scale = 2f64.powi(basis.dilation(level.j));
        let mother = basis.mother(level.j);
        let (lo, hi) = active_translates(basis, level.j, x, level.k_min, level.k_max());
        let u = scale * x;
        let mut acc = 0.0;
        for k in lo..=hi {
            acc += level.values[(k - level.k_min) as usize] * mother(u - k as f64);
        }
        total += scale.sqrt() * acc;
    }
    total
}

/// Derivative of the synthesised function at `x`.
pub fn synthesize_derivative(
    basis: &WaveletBasis,
    coeffs: &MultiScaleCoeffs,
    x: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for level in &coeffs.levels {
        if level.values.is_empty() {
            continue;
        }
        let scale = 2f64.powi(basis.dilation(level.j));
        let mother = basis.mother_derivative(level.j)?;
        let (lo, hi) = active_translates(basis, level.j, x, level.k_min, level.k_max());
        let u = scale * x;
        let mut acc = 0.0;
        for k in lo..=hi {
            acc += level.values[(k - level.k_min) as usize] * mother(u - k as f64);
        }
        total += scale * scale.sqrt() * acc;
    }
    Ok(total)
}

/// `sup_j max_k |x_{j,k}| / w_j` over the stored levels.
pub fn multiscale_norm(coeffs: &MultiScaleCoeffs, weights: &WeightSequence) -> f64 {
    coeffs
        .levels
        .iter()
        .map(|l| {
            let w = weights.weight(l.j);
            l.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / w
        })
        .fold(0.0, f64::max)
}

/// `n` equispaced points covering `[a, b]` including both ends.
pub fn uniform_grid(a: f64, b: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let step = (b - a) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i + 1 == points {
                b
            } else {
                a + i as f64 * step
            }
        })
        .collect()
}

/// Max of `|synthesize|` over an equispaced grid of `points` on `[a, b]`.
/// This is a lower bound for the true sup norm.
pub fn sup_norm_on_interval(
    basis: &WaveletBasis,
    coeffs: &MultiScaleCoeffs,
    a: f64,
    b: f64,
    points: usize,
) -> Result<f64> {
    if points < 2 {
        return Err(Error::Domain(format!(
            "sup-norm grid needs at least 2 points, got {points}"
        )));
    }
    Ok(uniform_grid(a, b, points)
        .into_iter()
        .map(|x| synthesize(basis, coeffs, x).abs())
        .fold(0.0, f64::max))
}

/// Index sets of every stored level.
pub fn index_sets(coeffs: &MultiScaleCoeffs) -> Vec<LevelIndexSet> {
    coeffs
        .levels
        .iter()
        .map(|l| LevelIndexSet {
            level: l.j,
            k_min: l.k_min,
            k_max: l.k_max(),
        })
        .collect()
}
