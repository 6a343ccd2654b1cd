//! Image handling and quality metrics.
//!
//! [`Image`] keeps pixels as interleaved `f64` in `[0,1]`; PNG load/save
//! maps 8- and 16-bit files linearly. Resampling is separable bicubic
//! with the Catmull-Rom kernel (a = -0.5) and edge clamping. Quality is
//! measured with PSNR, windowed SSIM (11x11 Gaussian, sigma 1.5), and
//! MPS = 0.5(SSIM + (1 - LPIPS)) where LPIPS values come from outside.

mod error;
mod image_io;
mod quality;
mod report;
mod resize;

pub use error::MetricsError;
pub use image_io::{load_png, save_png, Image};
pub use quality::{luminance, mps, psnr, psnr_with, ssim, ssim_with, ChannelMode};
pub use report::{EvalReport, EvalRow};
pub use resize::{bicubic_resize, bicubic_scale, catmull_rom};

pub type Result<T> = std::result::Result<T, MetricsError>;
