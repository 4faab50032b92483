mod hessian;
mod loss;
mod mlp;
mod objective;
mod time_embedding;

pub use hessian::{hessian_input, hutchinson_trace, SquareMatrix, HESSIAN_DIM_CAP};
pub use loss::{argmax, log_sum_exp, softmax, LossSpec};
pub use mlp::{param_count, Activation, MlpCheckpoint, MlpModel};
pub use objective::{InputObjective, ModelLoss, Quadratic};
pub(crate) use objective::{dot, norm};
pub use time_embedding::TimeEmbedding;
