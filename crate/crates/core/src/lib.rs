pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};

// Tapes allocate and free large buffers every step; the system allocator
// returns them to the kernel and pays page faults on each step.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
