//! Guided proposals and their likelihood ratio.

mod forward;
mod timechange;

pub use forward::{fill_noise, guided_forward, log_g_increment, noise_len, simulate_into, GuidedPath, Workspace};
pub use timechange::TimeChange;
