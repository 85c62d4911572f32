//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! as borrowed leaves ([`Graph::param`]) so a forward pass never copies the
//! weights; calling [`Graph::backward`] on a scalar returns [`Gradients`]
//! keyed by [`Var`].
//!
//! ```
//! use brag_augment::autodiff::{Graph, Tensor};
//!
//! let x = Tensor::row_vector(&[1.0, 2.0]);
//! let mut g = Graph::new();
//! let xv = g.param(&x);
//! let sq = g.mul(xv, xv).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(xv).unwrap().data(), &[2.0, 4.0]);
//! ```

mod finite_diff;
mod graph;
mod tensor;

pub use finite_diff::{central_difference, relative_error};
pub use graph::{log_sigmoid, log_sum_exp, sigmoid, softmax_in_place, Fault, Gradients, Graph, Var};
pub use tensor::Tensor;
