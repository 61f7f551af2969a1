//! Neural prediction of beamformer components: autodiff tape, networks,
//! optimizers, the differentiable pipeline and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod pipeline;
pub mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use mlp::{Mlp, PredictorParams, DEFAULT_HIDDEN};
pub use optim::{adam_step, sgd_step, AdamState};
pub use pipeline::{
    evaluate, loss_and_grad, reconstruct_and_loss, NeuralPredictor, PipelineOptions, Reduction,
    VInit,
};
pub use tape::{Tape, Tensor, Var};
