//! Dense `f64` tensors, a tape-based reverse-mode autodiff graph, parameter
//! storage, and the optimizers used to train the summarization models.
//!
//! ```
//! use hiersumm_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::row_vector(vec![1.0, -2.0, 3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

mod error;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{sigmoid, Gradients, Graph, Mask, Var};
pub use optim::{Adagrad, Adam, AdamConfig, NoamSchedule};
pub use params::{GradBuffer, ParamId, ParamStore};
pub use tensor::Tensor;
