//! Stacked-LSTM language model with hand-written BPTT.

mod checkpoint;
mod dropout;
mod eval;
mod grads;
mod lstm;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT};
pub use dropout::{sample_masks, DropoutMasks, KeepProbs, MaskShape};
pub use eval::{evaluate, Evaluation};
pub use grads::{GradGroup, GradTensor, GradientSet};
pub use lstm::{backward, forward, lstm_layer_forward, ForwardTrace, LayerTrace, LstmState};
pub use optim::{sgd_step, ParamAverage};
pub use params::{
    group_of, layer_group, LstmLayerParams, ModelSizes, NetworkParams, TensorRef,
    DEFAULT_INIT_SCALE, EMBEDDING_GROUP, SOFTMAX_GROUP,
};

pub(crate) use params::{check_scale, uniform_matrix};
