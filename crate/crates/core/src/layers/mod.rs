//! Layer mechanisms (kernel banks, attention generators, conv units) and
//! the model presets assembled from them.

pub mod attention;
pub mod bank;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod units;

pub use attention::{
    apply_channel_gate, apply_channel_gate_vjp, channel_attention, hard_select, kernel_attention, masked_softmax,
    update_kernel_representation, AttentionVector, ChannelAttention, GateMask, KernelRepresentation,
};
pub use bank::{aggregate_kernels, aggregate_kernels_vjp, orient_bank, orient_bank_vjp, rotate90_ccw, KernelBank};
pub use model::{
    argmax_predictions, build_model, is_supported, AttentionKind, AttentionRecord, ForwardPass, Mode, Model, ModelSpec,
    Preset, Targets, Task, SUPPORTED_MATRIX,
};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use units::{ConvUnit, DynamicConfig, Mixing};
