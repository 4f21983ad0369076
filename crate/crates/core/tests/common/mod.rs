//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ergoband::wavelet::{daubechies_lowpass, WaveletBasis};

/// Classic subdivision cascade run from a delta, extrapolated once to
/// cancel the leading `2^{-i}` error term. Returns `psi(1-N + m/2^r)` for
/// `m = 0..=(2N-1)2^r`.
pub fn cascade_psi(order: usize, r: u32, iterations: u32) -> Vec<f64> {
    let h = daubechies_lowpass(order).unwrap();
    let len = h.len();
    let g: Vec<f64> = (0..len)
        .map(|i| {
            // g_k for k = 2-2N+i equals (-1)^k h_{1-k}.
            let k = 2 - len as i64 + i as i64;
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            sign * h[(1 - k) as usize]
        })
        .collect();
    let s2 = std::f64::consts::SQRT_2;
    let step = |c: &[f64], filt: &[f64]| {
        let mut out = vec![0.0; 2 * c.len() - 1 + filt.len() - 1];
        for (i, u) in c.iter().enumerate() {
            for (k, f) in filt.iter().enumerate() {
                out[2 * i + k] += s2 * f * u;
            }
        }
        out
    };
    // The first step uses g; afterwards h. Index 0 corresponds to x = 1-N.
    let mut c = step(&[1.0], &g);
    let mut prev = Vec::new();
    for it in 2..=iterations {
        c = step(&c, &h);
        if it == iterations - 1 {
            prev = sample(&c, it, r, order);
        }
    }
    let last = sample(&c, iterations, r, order);
    last.iter()
        .zip(prev.iter())
        .map(|(a, b)| 2.0 * a - b)
        .collect()
}

fn sample(c: &[f64], it: u32, r: u32, order: usize) -> Vec<f64> {
    let pts = (2 * order - 1) << r;
    (0..=pts)
        .map(|m| c.get(m << (it - r)).copied().unwrap_or(0.0))
        .collect()
}

/// `<f, g>` by a Riemann sum on the dyadic grid of spacing `2^{-depth}`.
pub fn dyadic_inner<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(
    f: F,
    g: G,
    lo: f64,
    hi: f64,
    depth: u32,
) -> f64 {
    let h = 2f64.powi(-(depth as i32));
    let start = (lo / h).floor() as i64;
    let end = (hi / h).ceil() as i64;
    (start..=end)
        .map(|i| {
            let x = i as f64 * h;
            let a = f(x);
            if a == 0.0 {
                0.0
            } else {
                a * g(x)
            }
        })
        .sum::<f64>()
        * h
}

/// Support of `psi_{level,k}` in `x`.
pub fn support(basis: &WaveletBasis, level: i32, k: i64) -> (f64, f64) {
    let (lo, hi) = if level == -1 {
        basis.scaling_support()
    } else {
        basis.wavelet_support()
    };
    let j = if level == -1 {
        basis.base_level() as i32
    } else {
        level
    };
    let s = 2f64.powi(-j);
    (s * (k as f64 + lo), s * (k as f64 + hi))
}

/// Worst deviation from orthonormality over a spread of pairs with levels
/// in `levels`. Each product is integrated on the table grid of the finer
/// function (`2^{-R}` in its own argument).
pub fn orthonormality_defect(basis: &WaveletBasis, levels: &[i32]) -> f64 {
    let r = basis.grid_depth();
    let mut worst: f64 = 0.0;
    for (ai, &j) in levels.iter().enumerate() {
        for &l in &levels[ai..] {
            let dil_j = if j == -1 {
                basis.base_level() as i32
            } else {
                j
            };
            let dil_l = if l == -1 {
                basis.base_level() as i32
            } else {
                l
            };
            let depth = r + dil_j.max(dil_l) as u32;
            for k in [-1i64, 0, 2] {
                let (slo, shi) = support(basis, j, k);
                // Translates at level l whose support meets the first one.
                let (llo, lhi) = if l == -1 {
                    basis.scaling_support()
                } else {
                    basis.wavelet_support()
                };
                let scale = 2f64.powi(dil_l);
                let m_lo = (scale * slo - lhi).floor() as i64;
                let m_hi = (scale * shi - llo).ceil() as i64;
                let span = (m_hi - m_lo).max(1);
                let picks: Vec<i64> = if span <= 12 {
                    (m_lo..=m_hi).collect()
                } else {
                    (0..=12).map(|t| m_lo + t * span / 12).collect()
                };
                for m in picks {
                    let (tlo, thi) = support(basis, l, m);
                    let lo = slo.max(tlo);
                    let hi = shi.min(thi);
                    if lo >= hi {
                        continue;
                    }
                    let ip = dyadic_inner(
                        |x| basis.evaluate(j, k, x).unwrap(),
                        |x| basis.evaluate(l, m, x).unwrap(),
                        lo,
                        hi,
                        depth,
                    );
                    let target = if j == l && k == m { 1.0 } else { 0.0 };
                    worst = worst.max((ip - target).abs());
                }
            }
        }
    }
    worst
}

/// `max_p |int x^p psi(x) dx|` for `p < N` on the table grid.
pub fn moment_defects(basis: &WaveletBasis) -> Vec<f64> {
    let (lo, hi) = basis.wavelet_support();
    (0..basis.order())
        .map(|p| {
            dyadic_inner(
                |x| basis.psi(x),
                |x| x.powi(p as i32),
                lo,
                hi,
                basis.grid_depth(),
            )
            .abs()
        })
        .collect()
}

/// Density of `N(0, var)`.
pub fn normal_pdf(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// One-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic 1% critical value of the Kolmogorov distribution.
pub const KS_CRIT_1PCT: f64 = 1.628;

pub fn normal_cdf(x: f64, var: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / (2.0 * var).sqrt()))
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}
