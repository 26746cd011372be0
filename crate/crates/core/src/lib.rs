//! Signal-to-noise analysis of transformer checkpoints.
//!
//! Every 2-D weight matrix is reduced to its singular values, split into
//! signal and noise by a Marchenko-Pastur edge derived from a robust noise
//! scale, and scored by the ratio of the two sums normalized by the largest
//! singular value. Matrices are ranked within their module group (the same
//! projection across layers) and the top fraction of each group is written
//! out as a list of parameters to unfreeze for fine-tuning.
//!
//! * [`checkpoint`]: container and shard-index reading, fixture writing
//! * [`spectral`]: singular values, noise scale, thresholds, SNR
//! * [`scan`]: grouping, batched whole-model scans, JSON reports
//! * [`selection`]: top-p% selection and the YAML plan
//! * [`synth`]: seeded synthetic matrices, mini checkpoints, oracles

pub mod checkpoint;
pub mod error;
pub mod linalg;
pub mod scan;
pub mod selection;
pub mod spectral;
pub mod synth;

pub use checkpoint::{open_checkpoint, write_fixture, CheckpointManifest, Dtype, TensorRecord};
pub use error::{CheckpointError, ScanError, SelectionError, SpectralError, SynthError};
pub use scan::{discover_groups, read_report, scan, write_report, ScanConfig, ScanReport};
pub use selection::{coverage_stats, emit_plan, select, SelectionPlan};
pub use spectral::{
    analyze_matrix, estimate_sigma, mp_bounds, singular_values, snr, Matrix, MpBounds,
    SigmaEstimator, SnrResult, SvdResult,
};
