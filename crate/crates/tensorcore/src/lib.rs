//! Dense `f64` arrays and a replayable reverse-mode differentiation graph.
//!
//! A [`Graph`] records primitive applications in topological order and
//! evaluates them eagerly. Replaying it with new leaf bindings recomputes the
//! same program, which is what [`finite_difference_check`] uses as an oracle
//! for the adjoints.
//!
//! ```
//! use tensorcore::{Array, Graph};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Array::scalar(3.0)).unwrap();
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(g.value(y).item().unwrap(), 9.0);
//! assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
//! ```

mod array;
mod check;
mod error;
mod graph;
mod ops;

pub use array::Array;
pub use check::finite_difference_check;
pub use error::{Result, TensorError};
pub use graph::{evaluate, gradients, GradMap, Graph, NodeId};
