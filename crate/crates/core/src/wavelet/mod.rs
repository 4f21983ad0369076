//! Daubechies wavelet bases, coefficient extraction and multi-scale norms.

mod basis;
mod coeffs;
mod filter;
mod index;

pub use basis::{evaluate_psi, WaveletBasis, DEFAULT_GRID_DEPTH, SCALING};
pub(crate) use coeffs::sparse_features;
pub use coeffs::{
    analyze_function, analyze_nodes, analyze_nodes_derivative, analyze_samples, covering_nodes,
    index_sets, multiscale_norm, sample_on_nodes, sup_norm_on_interval, synthesize,
    synthesize_derivative, uniform_grid, BasisTag, LevelCoeffs, MultiScaleCoeffs, NodeGrid,
    Quadrature, DEFAULT_SUP_GRID,
};
pub use filter::{daubechies_lowpass, quadrature_mirror, MAX_ORDER};
pub use index::{index_set, LevelIndexSet, ScalingWeight, WeightKind, WeightSequence};
