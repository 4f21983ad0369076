//! Daubechies low-pass filters by spectral factorisation.
//!
//! The squared modulus of the order-`N` filter is
//! `cos^{2N}(w/2) P(sin^2(w/2))` with `P(y) = sum_{k<N} C(N-1+k, k) y^k`.
//! Each root `y` of `P` yields a pair `z, 1/z` on the unit-circle map
//! `y = (2 - z - 1/z) / 4`; keeping the roots inside the unit disk gives the
//! extremal-phase filter.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest supported order. Spectral factorisation in double precision
/// loses accuracy well beyond this.
pub const MAX_ORDER: usize = 24;

/// Low-pass filter `h_0..h_{2N-1}` of the Daubechies wavelet with `N`
/// vanishing moments, normalised so that `sum h = sqrt(2)`.
pub fn daubechies_lowpass(order: usize) -> Result<Vec<f64>> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::Config(format!(
            "Daubechies order must lie in 1..={MAX_ORDER}, got {order}"
        )));
    }
    if order == 1 {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        return Ok(vec![c, c]);
    }

    // P(y) coefficients, lowest degree first.
    let mut p = Vec::with_capacity(order);
    let mut binom = 1.0_f64;
    for k in 0..order {
        if k > 0 {
            binom = binom * (order - 1 + k) as f64 / k as f64;
        }
        p.push(binom);
    }
    let y_roots = polynomial_roots(&p)?;

    // Q(z) = prod (z - z_i) with |z_i| < 1.
    let mut q = vec![Complex64::new(1.0, 0.0)];
    for y in y_roots {
        let c = Complex64::new(2.0, 0.0) - 4.0 * y;
        let disc = (c * c - 4.0).sqrt();
        let mut z = (c + disc) / 2.0;
        if z.norm() > 1.0 {
            z = 1.0 / z;
        }
        let mut next = vec![Complex64::new(0.0, 0.0); q.len() + 1];
        for (i, &qi) in q.iter().enumerate() {
            next[i + 1] += qi;
            next[i] -= qi * z;
        }
        q = next;
    }

    // Multiply by (1 + z)^N.
    let mut h: Vec<f64> = q.iter().map(|c| c.re).collect();
    for _ in 0..order {
        let mut next = vec![0.0; h.len() + 1];
        for (i, &hi) in h.iter().enumerate() {
            next[i] += hi;
            next[i + 1] += hi;
        }
        h = next;
    }

    let sum: f64 = h.iter().sum();
    let scale = std::f64::consts::SQRT_2 / sum;
    h.iter_mut().for_each(|v| *v *= scale);
    // Extremal phase with the energy at the start of the filter.
    if h[0].abs() < h[h.len() - 1].abs() {
        h.reverse();
    }
    Ok(h)
}

/// High-pass filter `g_k = (-1)^k h_{1-k}` for `k = 2-2N ..= 1`, returned
/// together with its first index.
pub fn quadrature_mirror(lowpass: &[f64]) -> (i64, Vec<f64>) {
    let len = lowpass.len() as i64;
    let first = 2 - len;
    let g = (first..=1)
        .map(|k| {
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            sign * lowpass[(1 - k) as usize]
        })
        .collect();
    (first, g)
}

/// All complex roots of a real polynomial given lowest degree first, via
/// Aberth-Ehrlich iteration followed by Newton polishing.
fn polynomial_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let degree = coeffs.len() - 1;
    if degree == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[degree];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();

    // Cauchy bound for the initial circle.
    let radius = 1.0 + monic[..degree].iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let mut roots: Vec<Complex64> = (0..degree)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * (i as f64 + 0.25) / degree as f64 + 0.4;
            Complex64::from_polar(0.5 * radius, angle)
        })
        .collect();

    let eval = |z: Complex64| -> (Complex64, Complex64) {
        let mut p = Complex64::new(monic[degree], 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &c in monic[..degree].iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    };

    let mut last_step = f64::INFINITY;
    for _ in 0..500 {
        let mut max_step = 0.0_f64;
        for i in 0..degree {
            let (p, dp) = eval(roots[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..degree)
                .filter(|&m| m != i)
                .map(|m| 1.0 / (roots[i] - roots[m]))
                .sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            roots[i] -= step;
            max_step = max_step.max(step.norm() / roots[i].norm().max(1.0));
        }
        last_step = max_step;
        if max_step < 1e-15 {
            break;
        }
    }
    // Rounding stalls the iteration near 1e-15 for higher degrees.
    if !(last_step < 1e-9) {
        return Err(Error::Conditioning(
            "polynomial root iteration did not converge".into(),
        ));
    }
    for root in roots.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = eval(*root);
            if dp.norm() == 0.0 {
                break;
            }
            *root -= p / dp;
        }
    }
    Ok(roots)
}
