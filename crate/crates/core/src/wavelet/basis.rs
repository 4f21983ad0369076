use nalgebra::{DMatrix, DVector};

use super::filter::{daubechies_lowpass, quadrature_mirror};
use crate::error::{Error, Result};

/// Level tag for the scaling functions `phi_{j0,k}`.
pub const SCALING: i32 = -1;

/// Default dyadic refinement depth of the cascade tables.
pub const DEFAULT_GRID_DEPTH: u32 = 12;

/// Samples of a compactly supported function on the grid
/// `start + m 2^{-depth}`, `m = 0..values.len()`.
#[derive(Debug, Clone)]
struct Table {
    start: f64,
    end: f64,
    scale: f64,
    values: Vec<f64>,
    step_function: bool,
}

impl Table {
    fn new(start: i64, values: Vec<f64>, depth: u32, step_function: bool) -> Self {
        let scale = (1u64 << depth) as f64;
        let end = start as f64 + (values.len() - 1) as f64 / scale;
        Table {
            start: start as f64,
            end,
            scale,
            values,
            step_function,
        }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        if !(x >= self.start && x < self.end) {
            return 0.0;
        }
        let t = (x - self.start) * self.scale;
        let i = t as usize;
        if self.step_function {
            return self.values[i];
        }
        let frac = t - i as f64;
        let lo = self.values[i];
        if frac == 0.0 {
            return lo;
        }
        lo + frac * (self.values[i + 1] - lo)
    }

    fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Daubechies scaling function and wavelet tabulated on a dyadic grid.
///
/// Values between grid points are linearly interpolated; the Haar case is
/// evaluated as a step function.
#[derive(Debug, Clone)]
pub struct WaveletBasis {
    order: usize,
    base_level: u32,
    grid_depth: u32,
    lowpass: Vec<f64>,
    phi: Table,
    psi: Table,
    dphi: Option<Table>,
    dpsi: Option<Table>,
}

impl WaveletBasis {
    /// Basis of the given order and base level with the default grid depth.
    pub fn new(order: usize, base_level: u32) -> Result<Self> {
        Self::with_grid_depth(order, base_level, DEFAULT_GRID_DEPTH)
    }

    pub fn with_grid_depth(order: usize, base_level: u32, grid_depth: u32) -> Result<Self> {
        if !(2..=20).contains(&grid_depth) {
            return Err(Error::Config(format!(
                "grid depth must lie in 2..=20, got {grid_depth}"
            )));
        }
        if base_level > 20 {
            return Err(Error::Config(format!(
                "base level must be at most 20, got {base_level}"
            )));
        }
        let lowpass = daubechies_lowpass(order)?;
        let (phi, psi, dphi, dpsi) = if order == 1 {
            haar_tables(grid_depth)
        } else {
            cascade_tables(&lowpass, grid_depth)?
        };
        Ok(WaveletBasis {
            order,
            base_level,
            grid_depth,
            lowpass,
            phi,
            psi,
            dphi,
            dpsi,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn base_level(&self) -> u32 {
        self.base_level
    }

    pub fn grid_depth(&self) -> u32 {
        self.grid_depth
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    /// Support `[0, 2N-1]` of the scaling function.
    pub fn scaling_support(&self) -> (f64, f64) {
        (0.0, (2 * self.order - 1) as f64)
    }

    /// Support `[1-N, N]` of the wavelet.
    pub fn wavelet_support(&self) -> (f64, f64) {
        (1.0 - self.order as f64, self.order as f64)
    }

    /// Whether first derivatives are tabulated (orders 3 and above).
    pub fn has_derivative(&self) -> bool {
        self.dpsi.is_some()
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.phi.eval(x)
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.psi.eval(x)
    }

    pub fn phi_derivative(&self, x: f64) -> Result<f64> {
        Ok(self.derivative_table(SCALING)?.eval(x))
    }

    pub fn psi_derivative(&self, x: f64) -> Result<f64> {
        Ok(self.derivative_table(0)?.eval(x))
    }

    /// `max |psi|` over the table.
    pub fn psi_sup(&self) -> f64 {
        self.psi.max_abs()
    }

    /// `max |phi|` over the table.
    pub fn phi_sup(&self) -> f64 {
        self.phi.max_abs()
    }

    /// Dilation level actually used by the basis function at `level`:
    /// `j0` for the scaling level, `level` otherwise.
    #[inline]
    pub fn dilation(&self, level: i32) -> i32 {
        if level == SCALING {
            self.base_level as i32
        } else {
            level
        }
    }

    /// Support of the mother function used at `level`.
    #[inline]
    pub fn support_at(&self, level: i32) -> (f64, f64) {
        if level == SCALING {
            self.scaling_support()
        } else {
            self.wavelet_support()
        }
    }

    fn check_level(&self, level: i32) -> Result<()> {
        if level == SCALING || level >= self.base_level as i32 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "level {level} is neither the scaling level nor at least the base level {}",
                self.base_level
            )))
        }
    }

    fn derivative_table(&self, level: i32) -> Result<&Table> {
        let table = if level == SCALING {
            &self.dphi
        } else {
            &self.dpsi
        };
        table.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "derivatives need a continuously differentiable basis (order >= 3), got order {}",
                self.order
            ))
        })
    }

    /// `psi_{j,k}(x) = 2^{j/2} psi(2^j x - k)`; level `-1` gives
    /// `phi_{j0,k}`.
    pub fn evaluate(&self, level: i32, k: i64, x: f64) -> Result<f64> {
        self.check_level(level)?;
        Ok(self.eval_unchecked(level, k, x))
    }

    /// First derivative of the basis function at `(level, k)`.
    pub fn evaluate_derivative(&self, level: i32, k: i64, x: f64) -> Result<f64> {
        self.check_level(level)?;
        let table = self.derivative_table(level)?;
        let j = self.dilation(level);
        let scale = 2f64.powi(j);
        Ok(scale * scale.sqrt() * table.eval(scale * x - k as f64))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, level: i32, k: i64, x: f64) -> f64 {
        let j = self.dilation(level);
        let scale = 2f64.powi(j);
        let table = if level == SCALING {
            &self.phi
        } else {
            &self.psi
        };
        scale.sqrt() * table.eval(scale * x - k as f64)
    }

    /// Mother-function value and derivative tables for fast inner loops.
    #[inline]
    pub(crate) fn mother(&self, level: i32) -> impl Fn(f64) -> f64 + '_ {
        let table = if level == SCALING {
            &self.phi
        } else {
            &self.psi
        };
        move |u| table.eval(u)
    }

    #[inline]
    pub(crate) fn mother_derivative(&self, level: i32) -> Result<impl Fn(f64) -> f64 + '_> {
        let table = self.derivative_table(level)?;
        Ok(move |u| table.eval(u))
    }
}

/// `psi_{j,k}` with the cascade-table evaluation of [`WaveletBasis`].
pub fn evaluate_psi(basis: &WaveletBasis, level: i32, k: i64, x: f64) -> Result<f64> {
    basis.evaluate(level, k, x)
}

type Tables = (Table, Table, Option<Table>, Option<Table>);

fn haar_tables(depth: u32) -> Tables {
    let n = 1usize << depth;
    let mut phi = vec![1.0; n + 1];
    phi[n] = 0.0;
    let mut psi = vec![1.0; n + 1];
    psi[n / 2..n].iter_mut().for_each(|v| *v = -1.0);
    psi[n] = 0.0;
    (
        Table::new(0, phi, depth, true),
        Table::new(0, psi, depth, true),
        None,
        None,
    )
}

/// Refinement matrix `A_{n,m} = sqrt(2) h_{2n-m}` on the integers
/// `0..2N-1`.
fn refinement_matrix(h: &[f64]) -> DMatrix<f64> {
    let size = h.len();
    DMatrix::from_fn(size, size, |n, m| {
        let idx = 2 * n as i64 - m as i64;
        if idx >= 0 && (idx as usize) < h.len() {
            std::f64::consts::SQRT_2 * h[idx as usize]
        } else {
            0.0
        }
    })
}

/// Solves `(A - lambda I) v = 0` subject to `weights . v = target`.
fn constrained_eigenvector(
    a: &DMatrix<f64>,
    lambda: f64,
    weights: &[f64],
    target: f64,
) -> Result<Vec<f64>> {
    let size = a.nrows();
    // Least squares on the stacked system keeps the solve well posed even
    // though the eigenproblem alone is singular.
    let mut m = DMatrix::zeros(size + 1, size);
    let mut rhs = DVector::zeros(size + 1);
    for r in 0..size {
        for c in 0..size {
            m[(r, c)] = a[(r, c)] - if r == c { lambda } else { 0.0 };
        }
    }
    for c in 0..size {
        m[(size, c)] = weights[c];
    }
    rhs[size] = target;
    let normal = m.transpose() * &m;
    let rhs = m.transpose() * rhs;
    let solution = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Conditioning("cascade eigenvector system is singular".into()))?;
    Ok(solution.iter().copied().collect())
}

/// Values on `[0, 2N-1]` at spacing `2^{-depth}` from integer values, via
/// `f(x) = factor * sum_k h_k f(2x - k)`.
fn refine(h: &[f64], integer_values: &[f64], depth: u32, factor: f64) -> Vec<f64> {
    let span = h.len() - 1;
    let scale = 1usize << depth;
    let mut values = vec![0.0; span * scale + 1];
    for (n, &v) in integer_values.iter().enumerate() {
        values[n * scale] = v;
    }
    for r in 1..=depth {
        let stride = scale >> r;
        let mut m = stride;
        while m < values.len() {
            // 2x - k in units of the table: 2m - k * scale.
            let mut acc = 0.0;
            for (k, &hk) in h.iter().enumerate() {
                let idx = 2 * m as i64 - (k * scale) as i64;
                if idx >= 0 && (idx as usize) < values.len() {
                    acc += hk * values[idx as usize];
                }
            }
            values[m] = factor * acc;
            m += 2 * stride;
        }
    }
    values
}

/// `psi(x) = factor * sum_k g_k phi(2x - k)` on `[1-N, N]`.
fn wavelet_from_scaling(h: &[f64], phi: &[f64], depth: u32, factor: f64) -> Vec<f64> {
    let (first, g) = quadrature_mirror(h);
    let order = h.len() / 2;
    let scale = 1usize << depth;
    let len = (2 * order - 1) * scale + 1;
    let start = 1 - order as i64;
    (0..len)
        .map(|m| {
            let mut acc = 0.0;
            for (i, &gk) in g.iter().enumerate() {
                let k = first + i as i64;
                // 2x - k with x = start + m / scale, in table units.
                let idx = 2 * start * scale as i64 + 2 * m as i64 - k * scale as i64;
                if idx >= 0 && (idx as usize) < phi.len() {
                    acc += gk * phi[idx as usize];
                }
            }
            factor * acc
        })
        .collect()
}

fn cascade_tables(h: &[f64], depth: u32) -> Result<Tables> {
    let order = h.len() / 2;
    let a = refinement_matrix(h);
    let size = h.len();
    let ones = vec![1.0; size];
    let phi_int = constrained_eigenvector(&a, 1.0, &ones, 1.0)?;
    let phi = refine(h, &phi_int, depth, std::f64::consts::SQRT_2);
    let psi = wavelet_from_scaling(h, &phi, depth, std::f64::consts::SQRT_2);
    let start = 1 - order as i64;

    let (dphi, dpsi) = if order >= 3 {
        let moments: Vec<f64> = (0..size).map(|n| n as f64).collect();
        let dphi_int = constrained_eigenvector(&a, 0.5, &moments, -1.0)?;
        let dphi = refine(h, &dphi_int, depth, 2.0 * std::f64::consts::SQRT_2);
        let dpsi = wavelet_from_scaling(h, &dphi, depth, 2.0 * std::f64::consts::SQRT_2);
        (
            Some(Table::new(0, dphi, depth, false)),
            Some(Table::new(start, dpsi, depth, false)),
        )
    } else {
        (None, None)
    };
    Ok((
        Table::new(0, phi, depth, false),
        Table::new(start, psi, depth, false),
        dphi,
        dpsi,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_values() {
        let b = WaveletBasis::new(1, 0).unwrap();
        assert_eq!(b.psi(0.25), 1.0);
        assert_eq!(b.psi(0.75), -1.0);
        assert_eq!(b.psi(1.0), 0.0);
        assert_eq!(b.psi(-0.1), 0.0);
        assert_eq!(b.phi(0.0), 1.0);
        assert_eq!(b.evaluate(0, 0, 0.25).unwrap(), 1.0);
        assert!(!b.has_derivative());
    }

    #[test]
    fn scaling_partition_of_unity() {
        let b = WaveletBasis::new(4, 0).unwrap();
        for &x in &[0.0, 0.1, 0.37, 0.5, 0.9] {
            let s: f64 = (-8..8).map(|k| b.phi(x - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-10, "x={x}: {s}");
        }
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let b = WaveletBasis::new(8, 0).unwrap();
        let h = 2f64.powi(-12);
        for m in [1000, 9000, 20000, 40000] {
            let x = -7.0 + m as f64 * h;
            let fd = (b.psi(x + h) - b.psi(x - h)) / (2.0 * h);
            let d = b.psi_derivative(x).unwrap();
            assert!(
                (fd - d).abs() < 1e-3 * (1.0 + d.abs()),
                "x={x}: {fd} vs {d}"
            );
        }
    }

    #[test]
    fn zero_outside_support() {
        let b = WaveletBasis::new(8, 3).unwrap();
        assert_eq!(b.evaluate(5, 2, (2.0 - 7.0) / 32.0 - 1e-9).unwrap(), 0.0);
        assert_eq!(b.evaluate(5, 2, (2.0 + 8.0) / 32.0).unwrap(), 0.0);
        assert!(b.evaluate(5, 2, 2.5 / 32.0).unwrap() != 0.0);
        assert!(b.evaluate(2, 0, 0.0).is_err());
    }
}
