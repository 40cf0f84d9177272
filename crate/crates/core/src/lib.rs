//! Descriptor distillation and keypoint-detection numerics.
//!
//! * [`descriptor`]: unit-norm descriptor sets, Gram matrices, mutual
//!   nearest-neighbour matching.
//! * [`distill`]: low-rank teacher compression, closed-form orthogonal
//!   Procrustes alignment, Procrustes and similarity losses with gradients.
//! * [`detection`]: UnfoldSoftmax loss (reference and two-convolution forms),
//!   NMS, flip-merged keypoint caches, keypoint extraction, bilinear
//!   descriptor sampling.
//! * [`harness`]: a linear toy student trained by gradient descent on the
//!   combined descriptor loss.
//! * [`archcalc`]: parameter/FLOP/receptive-field calculator for the network
//!   family.
//! * [`formats`]: binary matrix/raster files and keypoint CSV.

pub mod archcalc;
pub mod descriptor;
pub mod detection;
pub mod distill;
pub mod error;
pub mod formats;
pub mod harness;
mod linalg;

pub use descriptor::{gram, gram_gap, l2_normalize_rows, mnn_match, DescriptorSet, MatchList};
pub use detection::{BinaryHeatmap, Keypoint, KeypointList, Raster};
pub use distill::{
    lra_compress, op_loss, op_loss_grad, pca_compress, procrustes_solve, sim_loss, sim_loss_grad, total_loss,
    CompressedTeacher, LossWeights, OrthogonalMap,
};
pub use error::{Error, Result};
pub use harness::{train, Compression, DistillConfig, StepRecord, ToyStudent, TrainReport};
pub use linalg::{pairwise_mean, pairwise_sum};

pub use nalgebra::DMatrix;
