//! Frequency-domain forgery features.

mod head;
mod spectrum;

pub use head::{ForgeryConfig, ForgeryHead, ForgeryTrace};
pub use spectrum::{center_shift, crop_low_frequency, dft2_amplitude, log_compress, SpectrumFeature, CROP_SIZE};
