//! Training objectives in f64, each with an analytic gradient.

mod baselines;
mod correlation;
mod distill;
mod output;
mod representation;
mod sckd;
mod taps;

pub use baselines::{at_loss, at_loss_grad, sp_loss, sp_loss_grad, sp_map};
pub use correlation::{
    paired_channel_indices, rbf_correlation_map, rbf_correlation_map_backward,
    select_channel_indices, selected_correlation_maps, selective_correlation_loss,
    selective_correlation_loss_grad, KernelMode,
};
pub use distill::{distillation_loss_grad, DistillParams, Distiller};
pub use output::{
    ground_truth_loss, ground_truth_loss_grad, inter_intra_kd_loss, inter_intra_kd_loss_grad,
    output_kd_loss, output_kd_loss_grad, pearson, pearson_grad, temporal_softmax,
    temporal_softmax_backward, vanilla_kd_loss, vanilla_kd_loss_grad, BaselineKdParams,
    PEARSON_EPS,
};
pub use representation::{
    bce_with_logits, pool_codes, pool_codes_backward, representation_loss, vae_kl, vae_kl_grad,
    AdversarialLogits, RepresentationLoss, RepresentationMode,
};
pub use sckd::{total_sckd_loss, total_sckd_loss_grad, KernelChoice, LossBreakdown, SckdParams};
pub use taps::{output_feature, tap_feature, tap_flat, FeatureGrads, TapId};
