//! Training losses and evaluation metrics.

pub mod losses;
pub mod metrics;
pub mod protocol;

pub use losses::{
    consistency_graph, default_level_weights, multiscale_photometric, penalty_graph, photometric_graph,
    symmetric_penalty, total_graph, total_loss, transformation_consistency, LossComponents, LossConfig, LossWeights,
};
pub use metrics::{psnr, ssim, PSNR_CAP_DB};
pub use protocol::{order_invariant_eval, Direction, MetricReport};
