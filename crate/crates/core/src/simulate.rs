//! Trajectories of scalar diffusions and auxiliary test chains.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// Paths beyond this magnitude count as exploded.
pub const EXPLOSION_BOUND: f64 = 1e10;

/// Default number of observation steps discarded before recording.
pub const DEFAULT_BURN_IN: usize = 1000;

/// Default Euler-Maruyama substeps per observation interval.
pub fn default_substeps(delta: f64) -> usize {
    16usize.max((delta / 0.01).ceil() as usize)
}

/// Generator for a single seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent seed for replication `index` under `master`, taken from
/// stream `index` of the master generator.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Drift families with closed-form potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DriftFamily {
    /// `b = 0`; no invariant law.
    Zero,
    /// `b(x) = -theta x`.
    OrnsteinUhlenbeck { theta: f64 },
    /// `b(x) = -theta x + A (x - x0)_+^s exp(-(x - x0)^2)`: smooth apart from
    /// a jump of size `A s!` in `b^{(s)}` at `x0`.
    SelfSimilar {
        theta: f64,
        smoothness: u32,
        jump_at: f64,
        amplitude: f64,
    },
}

/// `int_0^y u^s exp(-u^2) du` for `y >= 0`.
fn truncated_gaussian_moment(s: u32, y: f64) -> f64 {
    let e = (-y * y).exp();
    let mut even = std::f64::consts::PI.sqrt() / 2.0 * erf(y);
    let mut odd = (1.0 - e) / 2.0;
    if s == 0 {
        return even;
    }
    if s == 1 {
        return odd;
    }
    let mut p = 2;
    loop {
        // I_p = (p-1)/2 I_{p-2} - y^{p-1} e^{-y^2} / 2.
        let next = |prev: f64, p: u32| (p - 1) as f64 / 2.0 * prev - y.powi(p as i32 - 1) * e / 2.0;
        if p % 2 == 0 {
            even = next(even, p);
            if p == s {
                return even;
            }
        } else {
            odd = next(odd, p);
            if p == s {
                return odd;
            }
        }
        p += 1;
    }
}

impl DriftFamily {
    pub fn drift(&self, x: f64) -> f64 {
        match *self {
            DriftFamily::Zero => 0.0,
            DriftFamily::OrnsteinUhlenbeck { theta } => -theta * x,
            DriftFamily::SelfSimilar {
                theta,
                smoothness,
                jump_at,
                amplitude,
            } => {
                let u = x - jump_at;
                let bump = if u > 0.0 {
                    amplitude * u.powi(smoothness as i32) * (-u * u).exp()
                } else {
                    0.0
                };
                -theta * x + bump
            }
        }
    }

    /// `int_0^x b`.
    pub fn potential(&self, x: f64) -> f64 {
        match *self {
            DriftFamily::Zero => 0.0,
            DriftFamily::OrnsteinUhlenbeck { theta } => -theta * x * x / 2.0,
            DriftFamily::SelfSimilar {
                theta,
                smoothness,
                jump_at,
                amplitude,
            } => {
                let upper = (x - jump_at).max(0.0);
                let lower = (-jump_at).max(0.0);
                -theta * x * x / 2.0
                    + amplitude
                        * (truncated_gaussian_moment(smoothness, upper)
                            - truncated_gaussian_moment(smoothness, lower))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DriftFamily::Zero => Ok(()),
            DriftFamily::OrnsteinUhlenbeck { theta } => positive("theta", theta),
            DriftFamily::SelfSimilar {
                theta,
                smoothness,
                jump_at,
                amplitude,
            } => {
                positive("theta", theta)?;
                if smoothness == 0 {
                    return Err(Error::Config("smoothness must be at least 1".into()));
                }
                finite("jump_at", jump_at)?;
                finite("amplitude", amplitude)
            }
        }
    }

    fn descriptor(&self) -> String {
        match *self {
            DriftFamily::Zero => "zero".to_string(),
            DriftFamily::OrnsteinUhlenbeck { theta } => format!("ou(theta={theta})"),
            DriftFamily::SelfSimilar {
                theta,
                smoothness,
                jump_at,
                amplitude,
            } => format!("selfsim(theta={theta};s={smoothness};x0={jump_at};A={amplitude})"),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite, got {v}")))
    }
}

/// `dX = b(X) dt + sigma dW` with the invariant density
/// `C sigma^{-2} exp(2 sigma^{-2} int_0^x b)` when it exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec")]
pub struct DiffusionModel {
    #[serde(flatten)]
    pub family: DriftFamily,
    pub sigma: f64,
    #[serde(skip)]
    log_normaliser: Option<f64>,
}

#[derive(Deserialize)]
struct ModelSpec {
    #[serde(flatten)]
    family: DriftFamily,
    sigma: f64,
}

impl TryFrom<ModelSpec> for DiffusionModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        DiffusionModel::new(spec.family, spec.sigma)
    }
}

impl DiffusionModel {
    pub fn new(family: DriftFamily, sigma: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        family.validate()?;
        let mut model = DiffusionModel {
            family,
            sigma,
            log_normaliser: None,
        };
        model.log_normaliser = model.compute_log_normaliser();
        Ok(model)
    }

    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Result<Self> {
        Self::new(DriftFamily::OrnsteinUhlenbeck { theta }, sigma)
    }

    pub fn drift(&self, x: f64) -> f64 {
        self.family.drift(x)
    }

    /// Short provenance string such as `ou(theta=1);sigma=1`.
    pub fn descriptor(&self) -> String {
        format!("{};sigma={}", self.family.descriptor(), self.sigma)
    }

    fn stationary_sd(&self) -> Option<f64> {
        match self.family {
            DriftFamily::Zero => None,
            DriftFamily::OrnsteinUhlenbeck { theta } | DriftFamily::SelfSimilar { theta, .. } => {
                Some(self.sigma / (2.0 * theta).sqrt())
            }
        }
    }

    /// Interval outside which the invariant density is negligible.
    pub fn effective_support(&self) -> Option<(f64, f64)> {
        let sd = self.stationary_sd()?;
        let shift = match self.family {
            DriftFamily::SelfSimilar {
                jump_at, amplitude, ..
            } => jump_at.abs() + amplitude.abs(),
            _ => 0.0,
        };
        let half = 12.0 * sd + shift;
        Some((-half, half))
    }

    fn log_unnormalised(&self, x: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        2.0 * self.family.potential(x) / s2 - s2.ln()
    }

    fn compute_log_normaliser(&self) -> Option<f64> {
        match self.family {
            DriftFamily::Zero => None,
            DriftFamily::OrnsteinUhlenbeck { theta } => {
                // N(0, sigma^2 / (2 theta)) in closed form.
                let var = self.sigma * self.sigma / (2.0 * theta);
                let s2 = self.sigma * self.sigma;
                Some(-(2.0 * std::f64::consts::PI * var).sqrt().ln() + s2.ln())
            }
            DriftFamily::SelfSimilar { .. } => {
                let (lo, hi) = self.effective_support()?;
                let mass = simpson(|x| self.log_unnormalised(x).exp(), lo, hi, 40_000);
                Some(-mass.ln())
            }
        }
    }

    /// Invariant density, when the model has one.
    pub fn invariant_density(&self, x: f64) -> Option<f64> {
        let c = self.log_normaliser?;
        Some((self.log_unnormalised(x) + c).exp())
    }

    /// Derivative `2 b mu / sigma^2` of the invariant density.
    pub fn invariant_density_derivative(&self, x: f64) -> Option<f64> {
        let mu = self.invariant_density(x)?;
        Some(2.0 * self.drift(x) * mu / (self.sigma * self.sigma))
    }

    pub fn has_invariant_density(&self) -> bool {
        self.log_normaliser.is_some()
    }
}

/// Composite Simpson rule with `panels` (even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(2) + panels % 2;
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Seeded, regularly observed path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub model: String,
    pub delta: f64,
    pub seed: u64,
    #[serde(default)]
    pub burn_in: usize,
    pub samples: Vec<f64>,
}

const FORMAT_TAG: &str = "ergoband-trajectory/1";

#[derive(Serialize, Deserialize)]
struct TrajectoryEnvelope {
    format: String,
    #[serde(flatten)]
    trajectory: Trajectory,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Domain("trajectory has no samples".into()));
        }
        positive("delta", self.delta)?;
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("sample {i} is not finite")));
        }
        Ok(())
    }

    /// Concatenation of two paths; provenance is taken from `self`.
    pub fn concat(&self, other: &Trajectory) -> Trajectory {
        let mut out = self.clone();
        out.samples.extend_from_slice(&other.samples);
        out
    }

    /// CSV text: one header line, then one sample per line.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# model={}, delta={}, seed={}, n={}, burn_in={}\n",
            self.model,
            self.delta,
            self.seed,
            self.samples.len(),
            self.burn_in
        );
        for v in &self.samples {
            let _ = writeln!(out, "{v:?}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| Error::Parse("trajectory CSV must start with a '#' header".into()))?;
        let mut model = None;
        let mut delta = None;
        let mut seed = None;
        let mut n = None;
        let mut burn_in = 0usize;
        for field in header.split(", ") {
            let (key, value) = field
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed header field '{field}'")))?;
            let bad = |_| Error::Parse(format!("bad value for {key}: '{value}'"));
            match key {
                "model" => model = Some(value.to_string()),
                "delta" => delta = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "n" => n = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "burn_in" => burn_in = value.parse::<usize>().map_err(|e| bad(e.to_string()))?,
                _ => {}
            }
        }
        let missing = |k: &str| Error::Parse(format!("trajectory header lacks '{k}'"));
        let samples = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: '{}' is not a number", i + 2, l)))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = n.ok_or_else(|| missing("n"))?;
        if n != samples.len() {
            return Err(Error::Parse(format!(
                "header announces {n} samples but the file holds {}",
                samples.len()
            )));
        }
        Ok(Trajectory {
            model: model.ok_or_else(|| missing("model"))?,
            delta: delta.ok_or_else(|| missing("delta"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            burn_in,
            samples,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TrajectoryEnvelope {
            format: FORMAT_TAG.to_string(),
            trajectory: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: TrajectoryEnvelope = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("trajectory JSON: {e}")))?;
        if env.format != FORMAT_TAG {
            return Err(Error::Parse(format!(
                "unknown trajectory format '{}'",
                env.format
            )));
        }
        Ok(env.trajectory)
    }

    /// Reads either format, chosen by the first non-blank character.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim_start().chars().next() {
            Some('{') => Self::from_json(text),
            Some('#') => Self::from_csv(text),
            _ => Err(Error::Parse("trajectory is neither CSV nor JSON".into())),
        }
    }
}

/// Euler-Maruyama path of `model` observed every `delta`, after discarding
/// `burn_in` observation intervals.
pub fn simulate_diffusion(
    model: &DiffusionModel,
    n: usize,
    delta: f64,
    substeps: usize,
    seed: u64,
    x0: f64,
    burn_in: usize,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    positive("delta", delta)?;
    finite("x0", x0)?;
    let mut rng = rng_from_seed(seed);
    let dt = delta / substeps as f64;
    let noise = model.sigma * dt.sqrt();
    let mut x = x0;
    let mut samples = Vec::with_capacity(n);
    let total = burn_in + n;
    for step in 0..total {
        if step >= burn_in {
            samples.push(x);
        }
        if step + 1 == total {
            break;
        }
        for _ in 0..substeps {
            let z: f64 = rng.sample(StandardNormal);
            x += model.drift(x) * dt + noise * z;
        }
        if !(x.abs() <= EXPLOSION_BOUND) {
            return Err(Error::Simulation {
                step: step + 1,
                value: x,
            });
        }
    }
    Ok(Trajectory {
        model: model.descriptor(),
        delta,
        seed,
        burn_in,
        samples,
    })
}

/// Exact Gaussian transitions of `dX = -theta X dt + sigma dW`. With
/// `x0 = None` the start is drawn from the stationary law.
pub fn simulate_ou_exact(
    theta: f64,
    sigma: f64,
    n: usize,
    delta: f64,
    seed: u64,
    x0: Option<f64>,
) -> Result<Trajectory> {
    positive("theta", theta)?;
    positive("sigma", sigma)?;
    positive("delta", delta)?;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let stationary_sd = sigma / (2.0 * theta).sqrt();
    let decay = (-theta * delta).exp();
    let step_sd = ((1.0 - (-2.0 * theta * delta).exp()) * sigma * sigma / (2.0 * theta)).sqrt();
    let mut x = match x0 {
        Some(v) => {
            finite("x0", v)?;
            v
        }
        None => stationary_sd * rng.sample::<f64, _>(StandardNormal),
    };
    let mut samples = Vec::with_capacity(n);
    samples.push(x);
    for _ in 1..n {
        let z: f64 = rng.sample(StandardNormal);
        x = decay * x + step_sd * z;
        samples.push(x);
    }
    let model = DiffusionModel::ornstein_uhlenbeck(theta, sigma)?;
    Ok(Trajectory {
        model: format!("{};exact", model.descriptor()),
        delta,
        seed,
        burn_in: 0,
        samples,
    })
}

/// `Z_{k+1} = rho Z_k + eps_k` with centred Gaussian innovations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Chain {
    pub coefficient: f64,
    /// Innovation standard deviation; zero gives a deterministic path.
    pub innovation_sd: f64,
}

impl Ar1Chain {
    pub fn validate(&self) -> Result<()> {
        if !(self.coefficient.abs() < 1.0) {
            return Err(Error::Config(format!(
                "AR(1) coefficient must lie in (-1, 1), got {}",
                self.coefficient
            )));
        }
        if !(self.innovation_sd >= 0.0 && self.innovation_sd.is_finite()) {
            return Err(Error::Config(format!(
                "innovation sd must be non-negative, got {}",
                self.innovation_sd
            )));
        }
        Ok(())
    }

    pub fn stationary_variance(&self) -> f64 {
        self.innovation_sd.powi(2) / (1.0 - self.coefficient.powi(2))
    }

    /// Asymptotic variance of the sample mean, `gamma_0 (1 + rho) / (1 - rho)`.
    pub fn asymptotic_variance(&self) -> f64 {
        self.stationary_variance() * (1.0 + self.coefficient) / (1.0 - self.coefficient)
    }
}

pub fn simulate_ar1(chain: &Ar1Chain, n: usize, seed: u64, x0: f64) -> Result<Trajectory> {
    chain.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut x = x0;
    let mut samples = Vec::with_capacity(n);
    samples.push(x);
    for _ in 1..n {
        let z: f64 = rng.sample(StandardNormal);
        x = chain.coefficient * x + chain.innovation_sd * z;
        samples.push(x);
    }
    Ok(Trajectory {
        model: format!("ar1(rho={};sd={})", chain.coefficient, chain.innovation_sd),
        delta: 1.0,
        seed,
        burn_in: 0,
        samples,
    })
}

/// Unit-volatility diffusion with drift `-x + A (x - x0)_+^s exp(-(x - x0)^2)`.
pub fn make_selfsimilar_drift(s: f64, x_jump: f64, amplitude: f64) -> Result<DiffusionModel> {
    if s < 1.0 || s.fract() != 0.0 || s > 32.0 {
        return Err(Error::Config(format!(
            "self-similar drifts need an integer regularity in 1..=32, got {s}"
        )));
    }
    DiffusionModel::new(
        DriftFamily::SelfSimilar {
            theta: 1.0,
            smoothness: s as u32,
            jump_at: x_jump,
            amplitude,
        },
        1.0,
    )
}
