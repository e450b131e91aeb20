//! Self-supervised isotropic restoration of anisotropic 3D fluorescence
//! microscopy volumes.
//!
//! The crate covers the whole workflow: volume I/O and resampling
//! ([`volume`], [`resample`], [`io`]), PSF construction and factoring
//! ([`psf`]), phantom generation and acquisition simulation ([`phantom`]),
//! a small CPU neural-network engine ([`nn`]), the restoration networks and
//! their self-supervised training ([`isonet`]), and the evaluation stack
//! ([`eval`]).

pub mod conv;
pub mod error;
pub mod eval;
pub mod io;
pub mod isonet;
pub mod labels;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod psf;
pub mod resample;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
pub use labels::LabelVolume;
pub use rng::Rng;
pub use volume::{Axis, Image2D, Plane, Volume};
