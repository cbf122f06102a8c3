//! Recurrent cells: the ARMA cell, its multi-unit and stacked forms, and
//! ConvARMA. Each comes as a direct forward pass and as an autodiff graph
//! builder used for training.

pub mod arma;
pub mod batchnorm;
pub mod conv;
pub mod network;
pub mod unroll;

pub use arma::{
    arma_layer_forecast, arma_layer_forward, arma_step, ArmaLayerParams, ArmaLayerSpec, CellState,
};
pub use batchnorm::{batch_norm_forward, BatchNormParams, BnMode};
pub use conv::{conv_arma_layer_forward, conv_arma_step, ConvArmaParams, ConvArmaSpec};
pub use network::{
    init_params, parameter_count, predict_next_frame, predict_next_frames, stack_forward,
    trainable_shapes, HeadParams, HeadSpec, LayerParams, LayerSpec, NetworkParams, NetworkSpec,
};
pub use unroll::{build_frames, build_series, FrameGraph};
