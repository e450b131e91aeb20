//! Baseline restoration and the evaluation stack: Richardson-Lucy
//! deconvolution, global thresholding, hole filling, the Euclidean distance
//! transform, distance watershed, SEG scoring and PSNR tables.

pub mod edt;
pub mod mask;
pub mod rl;
pub mod seg;
pub mod table;
pub mod threshold;
pub mod watershed;

pub use edt::{edt, edt_squared};
pub use mask::{fill_holes, gaussian_smooth, Connectivity, Mask};
pub use rl::{richardson_lucy, richardson_lucy_observed, DEFAULT_RL_ITERATIONS, RL_EPS};
pub use seg::{seg_score, segment, SegReport, SegmentConfig};
pub use table::{psnr_table, volume_psnr, PsnrRow, PsnrTable};
pub use threshold::{
    intermodes_bins, intermodes_threshold, otsu_threshold, threshold, ThresholdMethod,
};
pub use watershed::{watershed_edt, WatershedConfig};
