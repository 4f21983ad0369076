//! Experiment configuration and the seeded Monte Carlo coverage harness.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    adaptive_band, AdaptiveOptions, AdaptiveSelection, LepskiConfig, ZetaRule, DEFAULT_R_MAX,
    DEFAULT_THRESHOLD, DEFAULT_WINDOW,
};
use crate::density::{
    band_coefficients, band_density_scaled, estimate_density, holder_norm,
    resolution_schedule_density, BandMode, DensityBand, DensityEstimate, Schedule,
};
use crate::drift::{
    band_drift, default_offset, drift_coefficient_variances, estimate_drift_direct,
    estimate_drift_plugin, DriftBand, DriftBandMode, DriftEstimate,
};
use crate::error::{Error, Result};
use crate::simulate::{
    default_substeps, derive_seed, make_selfsimilar_drift, simulate_ar1, simulate_diffusion,
    simulate_ou_exact, Ar1Chain, DiffusionModel, Trajectory, DEFAULT_BURN_IN,
};
use crate::variance::{
    coefficient_variances, coefficient_weights, sigma_sup, zeta_gaussian_bound, zeta_mc_quantile,
    Construction, CovarianceModel, CriticalValue,
};
use crate::wavelet::{
    analyze_function, MultiScaleCoeffs, Quadrature, ScalingWeight, WaveletBasis, WeightSequence,
    DEFAULT_GRID_DEPTH,
};

/// Smallest replication count accepted by [`run_coverage`].
pub const MIN_REPLICATIONS: usize = 10;

/// Grid used for Hoelder norms of the true functions.
const HOLDER_GRID: usize = 2001;

fn one() -> f64 {
    1.0
}

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `dX = -theta X dt + sigma dW`, sampled exactly.
    OrnsteinUhlenbeck {
        theta: f64,
        #[serde(default = "one")]
        sigma: f64,
    },
    /// Unit-volatility drift with a jump in its `smoothness`-th derivative,
    /// simulated by Euler-Maruyama.
    SelfSimilar {
        smoothness: u32,
        #[serde(default)]
        jump_at: f64,
        amplitude: f64,
    },
    /// Gaussian AR(1) chain (density targets only).
    Ar1 {
        coefficient: f64,
        #[serde(default = "one")]
        innovation_sd: f64,
    },
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelConfig::OrnsteinUhlenbeck { theta, sigma } => {
                positive("model.theta", theta)?;
                positive("model.sigma", sigma)
            }
            ModelConfig::SelfSimilar {
                smoothness,
                jump_at,
                amplitude,
            } => {
                if !(1..=32).contains(&smoothness) {
                    return Err(Error::Config(format!(
                        "model.smoothness must lie in 1..=32, got {smoothness}"
                    )));
                }
                finite("model.jump_at", jump_at)?;
                finite("model.amplitude", amplitude)
            }
            ModelConfig::Ar1 {
                coefficient,
                innovation_sd,
            } => {
                if !(coefficient.abs() < 1.0) {
                    return Err(Error::Config(format!(
                        "model.coefficient must lie in (-1, 1), got {coefficient}"
                    )));
                }
                positive("model.innovation_sd", innovation_sd)
            }
        }
    }

    /// The diffusion behind the model, if it is one.
    pub fn diffusion(&self) -> Result<Option<DiffusionModel>> {
        match *self {
            ModelConfig::OrnsteinUhlenbeck { theta, sigma } => {
                DiffusionModel::ornstein_uhlenbeck(theta, sigma).map(Some)
            }
            ModelConfig::SelfSimilar {
                smoothness,
                jump_at,
                amplitude,
            } => make_selfsimilar_drift(smoothness as f64, jump_at, amplitude).map(Some),
            ModelConfig::Ar1 { .. } => Ok(None),
        }
    }

    pub fn simulate(&self, sim: &SimulationConfig, seed: u64) -> Result<Trajectory> {
        match *self {
            ModelConfig::OrnsteinUhlenbeck { theta, sigma } => {
                simulate_ou_exact(theta, sigma, sim.n, sim.delta, seed, sim.x0)
            }
            ModelConfig::SelfSimilar { .. } => {
                let model = self
                    .diffusion()?
                    .expect("self-similar models are diffusions");
                simulate_diffusion(
                    &model,
                    sim.n,
                    sim.delta,
                    sim.substeps.unwrap_or_else(|| default_substeps(sim.delta)),
                    seed,
                    sim.x0.unwrap_or(0.0),
                    sim.burn_in.unwrap_or(DEFAULT_BURN_IN),
                )
            }
            ModelConfig::Ar1 {
                coefficient,
                innovation_sd,
            } => {
                let chain = Ar1Chain {
                    coefficient,
                    innovation_sd,
                };
                simulate_ar1(&chain, sim.n, seed, sim.x0.unwrap_or(0.0))
            }
        }
    }

    /// Invariant density, normalised.
    pub fn density(&self) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        match *self {
            ModelConfig::Ar1 {
                coefficient,
                innovation_sd,
            } => {
                let var = innovation_sd.powi(2) / (1.0 - coefficient.powi(2));
                let c = (2.0 * std::f64::consts::PI * var).sqrt();
                Ok(Box::new(move |x| (-x * x / (2.0 * var)).exp() / c))
            }
            _ => {
                let model = self.diffusion()?.expect("diffusion model");
                if !model.has_invariant_density() {
                    return Err(Error::Config("model has no invariant density".into()));
                }
                Ok(Box::new(move |x| model.invariant_density(x).unwrap_or(0.0)))
            }
        }
    }

    /// Drift scaled to unit volatility, `b / sigma^2`.
    pub fn drift(&self) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        let model = self.diffusion()?.ok_or_else(|| {
            Error::Config("drift targets need a diffusion model, not an AR(1) chain".into())
        })?;
        let s2 = model.sigma * model.sigma;
        Ok(Box::new(move |x| model.drift(x) / s2))
    }

    /// Interval carrying all but a negligible part of the invariant law.
    pub fn support(&self) -> Result<(f64, f64)> {
        match *self {
            ModelConfig::Ar1 {
                coefficient,
                innovation_sd,
            } => {
                let half = 12.0 * innovation_sd / (1.0 - coefficient.powi(2)).sqrt();
                Ok((-half, half))
            }
            _ => self
                .diffusion()?
                .and_then(|m| m.effective_support())
                .ok_or_else(|| Error::Config("model has no invariant law".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    #[serde(default = "one")]
    pub delta: f64,
    /// Euler-Maruyama substeps; defaults to `max(16, ceil(delta / 0.01))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Start value; the exact OU sampler draws it from the stationary law
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub order: usize,
    pub j0: u32,
    #[serde(default = "default_depth")]
    pub grid_depth: u32,
}

fn default_depth() -> u32 {
    DEFAULT_GRID_DEPTH
}

impl BasisConfig {
    pub fn build(&self) -> Result<WaveletBasis> {
        WaveletBasis::with_grid_depth(self.order, self.j0, self.grid_depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Density,
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Image of a density band under `f -> (log f)' / 2`.
    Plugin,
    /// Multi-scale band around the two-level estimate.
    #[default]
    Direct,
    /// Lepski-selected level with a Bonferroni radius.
    Adaptive,
}

/// How the radius multiplier is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ZetaConfig {
    #[default]
    GaussianBound,
    /// Quantile of the diagonal Gaussian model; the seed is derived from the
    /// replication seed.
    McQuantile {
        replications: usize,
    },
    Fixed {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LepskiSettings {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: u32,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_window() -> u32 {
    DEFAULT_WINDOW
}

fn default_r_max() -> f64 {
    DEFAULT_R_MAX
}

impl Default for LepskiSettings {
    fn default() -> Self {
        LepskiSettings {
            threshold: DEFAULT_THRESHOLD,
            window: DEFAULT_WINDOW,
            r_max: DEFAULT_R_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub target: Target,
    #[serde(default)]
    pub method: Method,
    pub alpha: f64,
    pub interval: [f64; 2],
    /// Regularity used by the level schedule and the cap.
    #[serde(default = "one")]
    pub smoothness: f64,
    /// Defaults to the chain schedule for density bands and plug-in drift
    /// bands, the diffusion schedule for the direct estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<i32>,
    /// Offset `U` of the direct estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u32>,
    #[serde(default)]
    pub zeta: ZetaConfig,
    /// Density band shape; drift bands ignore it.
    #[serde(default = "default_mode")]
    pub mode: BandMode,
    #[serde(default = "one")]
    pub cap_scale: f64,
    #[serde(default)]
    pub lepski: LepskiSettings,
}

fn default_mode() -> BandMode {
    BandMode::Linf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub seed: u64,
    pub basis: BasisConfig,
    pub band: BandConfig,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn default_replications() -> usize {
    100
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} must be positive, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field} must be finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Checks every field before anything runs.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let sim = &self.simulation;
        if sim.n < 3 {
            return Err(Error::Config(format!(
                "simulation.n must be at least 3, got {}",
                sim.n
            )));
        }
        positive("simulation.delta", sim.delta)?;
        if sim.substeps == Some(0) {
            return Err(Error::Config(
                "simulation.substeps must be at least 1".into(),
            ));
        }
        if let Some(x0) = sim.x0 {
            finite("simulation.x0", x0)?;
        }
        if self.basis.order == 0 {
            return Err(Error::Config("basis.order must be at least 1".into()));
        }
        let band = &self.band;
        if !(band.alpha > 0.0 && band.alpha < 1.0) {
            return Err(Error::Config(format!(
                "band.alpha must lie in (0, 1), got {}",
                band.alpha
            )));
        }
        let [a, b] = band.interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!(
                "band.interval must satisfy a < b, got [{a}, {b}]"
            )));
        }
        positive("band.smoothness", band.smoothness)?;
        positive("band.cap_scale", band.cap_scale)?;
        if let Some(level) = band.level {
            if level < self.basis.j0 as i32 {
                return Err(Error::Config(format!(
                    "band.level {level} lies below basis.j0 = {}",
                    self.basis.j0
                )));
            }
        }
        if band.offset == Some(0) {
            return Err(Error::Config("band.offset must be at least 1".into()));
        }
        match band.zeta {
            ZetaConfig::Fixed { value } => positive("band.zeta.value", value)?,
            ZetaConfig::McQuantile { replications } if replications < 1000 => {
                return Err(Error::Config(format!(
                    "band.zeta.replications must be at least 1000, got {replications}"
                )))
            }
            _ => {}
        }
        if matches!(band.zeta, ZetaConfig::GaussianBound) && self.basis.j0 < 1 {
            return Err(Error::Config(
                "the gaussian-bound critical value needs basis.j0 >= 1".into(),
            ));
        }
        if band.target == Target::Drift {
            if self.basis.order < 3 {
                return Err(Error::Config(format!(
                    "drift bands need basis.order >= 3, got {}",
                    self.basis.order
                )));
            }
            if matches!(self.model, ModelConfig::Ar1 { .. }) {
                return Err(Error::Config(
                    "drift targets need a diffusion model, not an AR(1) chain".into(),
                ));
            }
            if band.method == Method::Adaptive {
                if matches!(band.zeta, ZetaConfig::Fixed { .. }) {
                    return Err(Error::Config(
                        "adaptive bands derive zeta from the Bonferroni level".into(),
                    ));
                }
                self.lepski_config()?;
            }
        }
        Ok(())
    }

    pub fn lepski_config(&self) -> Result<LepskiConfig> {
        let l = &self.band.lepski;
        LepskiConfig::for_sample_size(
            self.simulation.n,
            self.basis.j0,
            l.r_max,
            l.threshold,
            l.window,
        )
    }

    /// Resolution level of fixed-level bands.
    pub fn level(&self) -> Result<i32> {
        if let Some(level) = self.band.level {
            return Ok(level);
        }
        let schedule = self
            .band
            .schedule
            .unwrap_or(match (self.band.target, self.band.method) {
                (Target::Drift, Method::Direct) => Schedule::Diffusion,
                _ => Schedule::Chain,
            });
        resolution_schedule_density(
            self.simulation.n,
            self.band.smoothness,
            schedule,
            self.basis.j0,
        )
    }

    pub fn offset(&self) -> u32 {
        self.band
            .offset
            .unwrap_or_else(|| default_offset(self.simulation.n))
    }

    /// Seed of replication `index`.
    pub fn replication_seed(&self, index: u64) -> u64 {
        derive_seed(self.seed, index)
    }
}

/// A band fitted to one trajectory.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum FittedBand {
    Density(DensityBand),
    Drift {
        band: DriftBand,
        selection: Option<AdaptiveSelection>,
    },
}

impl FittedBand {
    /// `2 x` the sup-norm half-width, when the band has one.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            FittedBand::Density(b) => b.linf_radius().map(|r| 2.0 * r),
            FittedBand::Drift { band, .. } => band.linf_radius.map(|r| 2.0 * r),
        }
    }

    pub fn zeta(&self) -> f64 {
        match self {
            FittedBand::Density(b) => b.zeta,
            FittedBand::Drift { band, .. } => band.zeta,
        }
    }

    pub fn export_json(&self) -> Result<String> {
        let text = match self {
            FittedBand::Density(b) => serde_json::to_string_pretty(&b.export())?,
            FittedBand::Drift { band, selection } => {
                let mut value = serde_json::to_value(band.export())?;
                if let Some(sel) = selection {
                    value["selection"] = serde_json::to_value(sel)?;
                }
                serde_json::to_string_pretty(&value)?
            }
        };
        Ok(text)
    }

    pub fn plot_csv(&self, basis: &WaveletBasis, points: usize) -> Result<String> {
        match self {
            FittedBand::Density(b) => b.plot_csv(basis, points),
            FittedBand::Drift { band, .. } => band.plot_csv(basis, points),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn critical_value(
    cfg: &ExperimentConfig,
    basis: &WaveletBasis,
    weights: &WeightSequence,
    level: i32,
    sigma: impl FnOnce() -> Result<f64>,
    diagonal: impl FnOnce() -> Result<Vec<f64>>,
    template: &MultiScaleCoeffs,
    seed: u64,
) -> Result<CriticalValue> {
    let [a, b] = cfg.band.interval;
    let alpha = cfg.band.alpha;
    match cfg.band.zeta {
        ZetaConfig::GaussianBound => {
            zeta_gaussian_bound(alpha, sigma()?, basis, weights, level, a, b)
        }
        ZetaConfig::McQuantile { replications } => zeta_mc_quantile(
            alpha,
            &CovarianceModel::Diagonal(diagonal()?),
            &coefficient_weights(template, weights),
            replications,
            seed,
        ),
        ZetaConfig::Fixed { value } => Ok(CriticalValue {
            alpha,
            zeta: value,
            construction: Construction::Fixed,
            sigma: f64::NAN,
            c: None,
            seed: None,
            warning: None,
        }),
    }
}

/// Weights of the configured target, normalised for the critical value.
pub fn band_weights(cfg: &ExperimentConfig) -> WeightSequence {
    let j0 = cfg.basis.j0;
    let w = match cfg.band.target {
        Target::Density => WeightSequence::density(j0),
        Target::Drift if cfg.band.method == Method::Plugin => WeightSequence::density(j0),
        Target::Drift => WeightSequence::drift(j0),
    };
    w.with_scaling(ScalingWeight::CriticalValue)
}

/// Critical value of a density band around `est`.
pub fn density_critical_value(
    cfg: &ExperimentConfig,
    basis: &WaveletBasis,
    traj: &Trajectory,
    est: &DensityEstimate,
    seed: u64,
) -> Result<CriticalValue> {
    let [a, b] = est.interval;
    let level = est.level();
    let weights = density_weights(basis);
    critical_value(
        cfg,
        basis,
        &weights,
        level,
        || Ok(sigma_sup(traj, basis, level, a, b)?.value),
        || Ok(coefficient_variances(basis, &traj.samples, &est.coeffs, false, None)?.values),
        &est.coeffs,
        seed,
    )
}

/// Critical value of a multi-scale band around the direct estimate `est`.
pub fn drift_critical_value(
    cfg: &ExperimentConfig,
    basis: &WaveletBasis,
    traj: &Trajectory,
    est: &DriftEstimate,
    seed: u64,
) -> Result<CriticalValue> {
    let weights =
        WeightSequence::drift(basis.base_level()).with_scaling(ScalingWeight::CriticalValue);
    critical_value(
        cfg,
        basis,
        &weights,
        est.level,
        || {
            Ok(drift_coefficient_variances(basis, traj, est)?
                .sup()
                .normalised(&weights))
        },
        || Ok(drift_coefficient_variances(basis, traj, est)?.values),
        &est.coeffs,
        seed,
    )
}

fn density_band(
    cfg: &ExperimentConfig,
    basis: &WaveletBasis,
    traj: &Trajectory,
    mode: BandMode,
    seed: u64,
) -> Result<DensityBand> {
    let [a, b] = cfg.band.interval;
    let est = estimate_density(traj, basis, cfg.level()?, a, b)?;
    let cv = density_critical_value(cfg, basis, traj, &est, seed)?;
    band_density_scaled(
        basis,
        &est,
        cv.zeta,
        density_weights(basis),
        cfg.band.smoothness,
        mode,
        cfg.band.cap_scale,
    )
}

fn density_weights(basis: &WaveletBasis) -> WeightSequence {
    WeightSequence::density(basis.base_level()).with_scaling(ScalingWeight::CriticalValue)
}

/// Builds the configured band from a trajectory. `seed` feeds Monte Carlo
/// critical values.
pub fn fit_band(
    cfg: &ExperimentConfig,
    basis: &WaveletBasis,
    traj: &Trajectory,
    seed: u64,
) -> Result<FittedBand> {
    let [a, b] = cfg.band.interval;
    match (cfg.band.target, cfg.band.method) {
        (Target::Density, _) => Ok(FittedBand::Density(density_band(
            cfg,
            basis,
            traj,
            cfg.band.mode,
            seed,
        )?)),
        (Target::Drift, Method::Plugin) => {
            let dband = density_band(cfg, basis, traj, BandMode::SmoothnessCap, seed)?;
            let est = estimate_drift_plugin(traj, basis, dband.center.level(), a, b)?;
            let band = band_drift(
                basis,
                &est,
                dband.zeta,
                dband.weights,
                cfg.band.smoothness,
                DriftBandMode::DensityImage,
                Some(dband),
                cfg.band.cap_scale,
            )?;
            Ok(FittedBand::Drift {
                band,
                selection: None,
            })
        }
        (Target::Drift, Method::Direct) => {
            let est = estimate_drift_direct(traj, basis, cfg.level()?, Some(cfg.offset()), a, b)?;
            let cv = drift_critical_value(cfg, basis, traj, &est, seed)?;
            let band = band_drift(
                basis,
                &est,
                cv.zeta,
                band_weights(cfg),
                cfg.band.smoothness,
                DriftBandMode::Multiscale,
                None,
                cfg.band.cap_scale,
            )?;
            Ok(FittedBand::Drift {
                band,
                selection: None,
            })
        }
        (Target::Drift, Method::Adaptive) => {
            let lepski = cfg.lepski_config()?;
            let zeta = match cfg.band.zeta {
                ZetaConfig::McQuantile { replications } => {
                    ZetaRule::McQuantile { replications, seed }
                }
                _ => ZetaRule::GaussianBound,
            };
            let opts = AdaptiveOptions {
                alpha: cfg.band.alpha,
                zeta,
                cap_scale: cfg.band.cap_scale,
            };
            let (band, sel) = adaptive_band(traj, basis, &lepski, &opts, a, b)?;
            Ok(FittedBand::Drift {
                band,
                selection: Some(sel),
            })
        }
    }
}

/// Hoelder norm of `f` of order `s <= 3` on `[a, b]`, with derivatives by
/// central differences.
pub fn holder_bound<F: Fn(f64) -> f64>(f: &F, s: f64, a: f64, b: f64) -> Result<f64> {
    let d1 = |x: f64| {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    };
    let d2 = |x: f64| {
        let h = 1e-3;
        (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
    };
    let f0 = |x: f64| f(x);
    match s.ceil() as usize {
        1 => holder_norm(&[&f0], s, a, b, HOLDER_GRID),
        2 => holder_norm(&[&f0, &d1], s, a, b, HOLDER_GRID),
        3 => holder_norm(&[&f0, &d1, &d2], s, a, b, HOLDER_GRID),
        _ => Err(Error::Config(format!(
            "Hoelder norms are supported for s <= 3, got {s}"
        ))),
    }
}

/// Outcome of checking a band against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub covered: bool,
    /// Multi-scale statistic of the truth over the band radius.
    pub ratio: Option<f64>,
}

/// Membership of the configured model's true density or drift.
pub fn check_truth(
    cfg: &ExperimentConfig,
    basis: &WaveletBasis,
    band: &FittedBand,
) -> Result<Verdict> {
    let [a, b] = cfg.band.interval;
    match band {
        FittedBand::Density(band) => {
            let mu = cfg.model.density()?;
            let coeffs = band_coefficients(basis, band, &mu)?;
            let holder = match band.cap {
                Some(cap) => Some(holder_bound(&mu, cap.s, a, b)?),
                None => None,
            };
            Ok(Verdict {
                covered: band.contains_coeffs(&coeffs, holder)?,
                ratio: Some(band.statistic(&coeffs)? / band.radius()),
            })
        }
        FittedBand::Drift { band, .. } if band.mode == DriftBandMode::DensityImage => {
            let drift = cfg.model.drift()?;
            let mu = cfg.model.density()?;
            let s = band.density_band.as_ref().and_then(|d| d.cap).map(|c| c.s);
            let holder = match s {
                Some(s) => Some(holder_bound(&mu, s, a, b)?),
                None => None,
            };
            let covered = band.contains_via_density(basis, &drift, cfg.model.support()?, holder)?;
            Ok(Verdict {
                covered,
                ratio: None,
            })
        }
        FittedBand::Drift { band, .. } => {
            let drift = cfg.model.drift()?;
            let level = band.center.level;
            let coeffs = analyze_function(
                basis,
                &drift,
                level,
                a,
                b,
                Quadrature::for_integrand(basis, level + 6),
            )?;
            let holder = match band.cap {
                Some(cap) => Some(holder_bound(&drift, cap.s, a, b)?),
                None => None,
            };
            Ok(Verdict {
                covered: band.contains_coeffs(&coeffs, holder)?,
                ratio: Some(band.statistic(&coeffs)? / band.radius()),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: u64,
    pub seed: u64,
    /// `None` when the replication failed.
    pub covered: Option<bool>,
    pub diameter: Option<f64>,
    pub ratio: Option<f64>,
    pub zeta: Option<f64>,
    pub j_hat: Option<i32>,
    pub s_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
}

/// One full replication: simulate, fit, check.
pub fn run_replication(
    cfg: &ExperimentConfig,
    basis: &WaveletBasis,
    index: u64,
) -> ReplicationRecord {
    let seed = cfg.replication_seed(index);
    let mut record = ReplicationRecord {
        index,
        seed,
        covered: None,
        diameter: None,
        ratio: None,
        zeta: None,
        j_hat: None,
        s_hat: None,
        error: None,
        error_kind: None,
    };
    let outcome = cfg
        .model
        .simulate(&cfg.simulation, seed)
        .and_then(|traj| fit_band(cfg, basis, &traj, derive_seed(seed, 1)))
        .and_then(|band| check_truth(cfg, basis, &band).map(|v| (band, v)));
    match outcome {
        Ok((band, verdict)) => {
            record.covered = Some(verdict.covered);
            record.ratio = verdict.ratio;
            record.diameter = band.diameter();
            record.zeta = Some(band.zeta());
            if let FittedBand::Drift {
                selection: Some(sel),
                ..
            } = &band
            {
                record.j_hat = Some(sel.j_hat);
                record.s_hat = Some(sel.s_hat);
            }
        }
        Err(e) => {
            record.error_kind = Some(e.kind().into());
            record.error = Some(e.to_string());
        }
    }
    record
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub replications: usize,
    pub completed: usize,
    pub failures: usize,
    pub covered: usize,
    /// Covered fraction of the completed replications.
    pub coverage: f64,
    /// Binomial standard error of `coverage`.
    pub standard_error: f64,
    pub mean_diameter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub format: String,
    pub config: ExperimentConfig,
    pub summary: CoverageSummary,
    pub records: Vec<ReplicationRecord>,
    /// Wall-clock time; kept out of the serialised report so that reruns
    /// are byte-identical.
    #[serde(skip)]
    pub runtime: Duration,
}

pub const REPORT_FORMAT: &str = "ergoband-coverage/1";

/// Aggregates records in index order.
pub fn summarise(records: &[ReplicationRecord]) -> CoverageSummary {
    let completed = records.iter().filter(|r| r.covered.is_some()).count();
    let covered = records.iter().filter(|r| r.covered == Some(true)).count();
    let coverage = if completed > 0 {
        covered as f64 / completed as f64
    } else {
        0.0
    };
    let diameters: Vec<f64> = records.iter().filter_map(|r| r.diameter).collect();
    CoverageSummary {
        replications: records.len(),
        completed,
        failures: records.len() - completed,
        covered,
        coverage,
        standard_error: if completed > 0 {
            (coverage * (1.0 - coverage) / completed as f64).sqrt()
        } else {
            0.0
        },
        mean_diameter: (!diameters.is_empty())
            .then(|| diameters.iter().sum::<f64>() / diameters.len() as f64),
    }
}

/// Runs `cfg.replications` independent replications on `workers` threads
/// (all cores when `None`), calling `on_record` as each one finishes.
pub fn run_coverage<F>(
    cfg: &ExperimentConfig,
    workers: Option<usize>,
    on_record: F,
) -> Result<CoverageReport>
where
    F: Fn(&ReplicationRecord) + Sync,
{
    cfg.validate()?;
    if cfg.replications < MIN_REPLICATIONS {
        return Err(Error::Config(format!(
            "coverage runs need at least {MIN_REPLICATIONS} replications, got {}",
            cfg.replications
        )));
    }
    let basis = cfg.basis.build()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let mut records: Vec<ReplicationRecord> = pool.install(|| {
        (0..cfg.replications as u64)
            .into_par_iter()
            .map(|i| {
                let r = run_replication(cfg, &basis, i);
                on_record(&r);
                r
            })
            .collect()
    });
    records.sort_by_key(|r| r.index);
    Ok(CoverageReport {
        format: REPORT_FORMAT.into(),
        config: cfg.clone(),
        summary: summarise(&records),
        records,
        runtime: start.elapsed(),
    })
}
