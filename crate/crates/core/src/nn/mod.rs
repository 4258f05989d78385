//! Small dense networks with hand-written backpropagation.

mod mlp;
mod optim;

pub use mlp::{softmax, Arch, Mlp, Trace};
pub use optim::{cosine_lr, linear_decay, Adam};
