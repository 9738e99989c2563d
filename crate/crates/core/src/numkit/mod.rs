//! Dense matrices, feed-forward networks with hand-written backpropagation,
//! losses and optimizers. Every model in the simulator is built from these.

mod loss;
mod mat;
mod net;
mod optim;

pub use loss::{mse_loss, softmax_rows, softmax_xent};
pub use mat::Mat;
pub use net::{Activation, Activations, DenseNet, GradBundle, Layer, LayerGrad};
pub use optim::{adam_step, AdamState};
