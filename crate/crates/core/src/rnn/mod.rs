//! LSTM and bidirectional LSTM sequence classifiers trained by
//! backpropagation through time on a sum-of-squared-error objective.

mod lstm;
mod model;
mod train;

pub use lstm::{blstm_forward, lstm_backward, lstm_forward, lstm_forward_trace, LstmLayerParams, LstmTrace};
pub use model::{
    bptt_gradients, init_model, model_forward, one_hot, sse_loss, ForwardTrace, NetworkSpec, RnnModel,
    RnnParams, INIT_RANGE, MODEL_FORMAT_VERSION,
};
pub use train::{
    decide, evaluate_sequences, predict_frames, train, EpochStats, FramePredictions, SequenceRef,
    TrainHistory,
};
