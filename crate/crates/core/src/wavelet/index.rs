use serde::{Deserialize, Serialize};

use super::basis::{WaveletBasis, SCALING};
use crate::error::{Error, Result};

/// Translates at one level whose basis functions meet `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelIndexSet {
    pub level: i32,
    pub k_min: i64,
    pub k_max: i64,
}

impl LevelIndexSet {
    pub fn len(&self) -> usize {
        (self.k_max - self.k_min + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, k: i64) -> bool {
        (self.k_min..=self.k_max).contains(&k)
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<i64> {
        self.k_min..=self.k_max
    }
}

/// `K_j = {ceil(2^j a - N) ..= floor(2^j b + N - 1)}` for `j >= j0` and
/// `L = {ceil(2^{j0} a - 2N + 1) ..= floor(2^{j0} b)}` for the scaling level.
pub fn index_set(basis: &WaveletBasis, level: i32, a: f64, b: f64) -> Result<LevelIndexSet> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "interval needs a < b, got [{a}, {b}]"
        )));
    }
    let n = basis.order() as f64;
    let (lo, hi) = if level == SCALING {
        let s = 2f64.powi(basis.base_level() as i32);
        (s * a - 2.0 * n + 1.0, s * b)
    } else if level >= basis.base_level() as i32 {
        let s = 2f64.powi(level);
        (s * a - n, s * b + n - 1.0)
    } else {
        return Err(Error::Domain(format!(
            "level {level} lies below the base level {}",
            basis.base_level()
        )));
    };
    Ok(LevelIndexSet {
        level,
        k_min: lo.ceil() as i64,
        k_max: hi.floor() as i64,
    })
}

/// Which closed-form weight rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    /// `w_j = sqrt(j log(2 + j))`.
    Density,
    /// `w_j = 2^j sqrt(j) log(2 + j)`.
    DriftAdmissible,
}

/// How the scaling-level weight `w_{-1}` is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingWeight {
    /// `w_{-1} = 1`.
    Unit,
    /// `w_{-1} = sqrt(j0)` (times `2^{j0}` for drift weights), the
    /// normalisation required by the Gaussian critical-value bound.
    CriticalValue,
}

/// Level weights `j -> w_j` of a multi-scale norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSequence {
    pub kind: WeightKind,
    pub scaling: ScalingWeight,
    pub base_level: u32,
}

impl WeightSequence {
    pub fn density(base_level: u32) -> Self {
        WeightSequence {
            kind: WeightKind::Density,
            scaling: ScalingWeight::Unit,
            base_level,
        }
    }

    pub fn drift(base_level: u32) -> Self {
        WeightSequence {
            kind: WeightKind::DriftAdmissible,
            scaling: ScalingWeight::Unit,
            base_level,
        }
    }

    pub fn with_scaling(mut self, scaling: ScalingWeight) -> Self {
        self.scaling = scaling;
        self
    }

    /// Closed-form rule for `j >= 1`.
    fn rule(&self, j: f64) -> f64 {
        match self.kind {
            WeightKind::Density => (j * (2.0 + j).ln()).sqrt(),
            WeightKind::DriftAdmissible => 2f64.powf(j) * j.sqrt() * (2.0 + j).ln(),
        }
    }

    /// Weight at `level`; level `-1` is the scaling level.
    pub fn weight(&self, level: i32) -> f64 {
        if level == SCALING {
            let j0 = self.base_level as f64;
            return match (self.scaling, self.kind) {
                (ScalingWeight::Unit, _) => 1.0,
                (ScalingWeight::CriticalValue, WeightKind::Density) => j0.sqrt(),
                (ScalingWeight::CriticalValue, WeightKind::DriftAdmissible) => {
                    j0.sqrt() * 2f64.powf(j0)
                }
            };
        }
        // Levels 0 would give a zero weight; the rule is floored at 1.
        self.rule(level.max(1) as f64).max(1.0)
    }

    /// Growth factor `2^j` removed when drift weights are reduced to the
    /// density normalisation (`1` for density weights).
    pub fn level_scale(&self, level: i32) -> f64 {
        match self.kind {
            WeightKind::Density => 1.0,
            WeightKind::DriftAdmissible => 2f64.powi(if level == SCALING {
                self.base_level as i32
            } else {
                level
            }),
        }
    }
}
