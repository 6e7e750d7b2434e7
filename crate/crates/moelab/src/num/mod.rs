//! Deterministic numeric foundation: dense tensors, softmax/cross-entropy,
//! Adam, a seeded RNG, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use gradcheck::{finite_diff_check, FD_STEP};
pub use ops::{cross_entropy, entropy, softmax};
pub use optim::{OptimSettings, OptimState};
pub use rng::Rng;
pub use tensor::Tensor2;
