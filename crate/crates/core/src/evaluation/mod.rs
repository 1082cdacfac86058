//! Forecast metrics, reports and generalization bound diagnostics.

pub mod bound;
pub mod metrics;
pub mod radar;
pub mod report;

pub use bound::{bound_diagnostics, bound_inputs, BoundDiagnostics, BoundInputs, BoundSettings, LayerBound};
pub use metrics::{mae, mse, ssim, ssim_framewise, Framewise, Ssim};
pub use radar::{confusion_counts, csi, dbz, dbz_normalized, hss, ConfusionCounts, Score};
pub use report::{config_hash, evaluate, render_frames, skill_per_frame, MetricsReport, Skill};
