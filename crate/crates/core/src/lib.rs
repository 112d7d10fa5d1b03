//! Occupation-conditioned adversarial face aging.
//!
//! A generator `G` ages a young face under an occupation condition, a decoder
//! `F` maps the aged face back to the input, and a conditional patch
//! discriminator `D` scores realism. Training alternates least-squares
//! updates of `D` with joint updates of `G` and `F` under a cycle
//! reconstruction loss, the adversarial loss and a triplet rank loss.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Activation, Graph, Padding, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
