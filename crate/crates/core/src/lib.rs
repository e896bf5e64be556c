//! Doppler spectrogram envelope segmentation and measurement toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: a small deterministic reverse-mode engine
//!   with the layer vocabulary of the segmentation network, including the
//!   anti-aliased (blur-then-subsample) downsampling operator.
//! * [`net`]: the encoder-decoder with its shape-embedding block and
//!   flow-type head, the joint loss, training with early stopping,
//!   checkpoints and mask prediction.
//! * [`synth`]: seeded synthetic spectrograms with analytic ground truth.
//! * [`measure`]: beats, Vmax, VTI and end-diastole events from a mask.
//! * [`metrics`]: overlap metrics, beat matching, correlation, detection
//!   rates and Monte Carlo splits.
//! * [`formats`]: PGM images and JSON sidecars.

pub mod autodiff;
pub mod error;
pub mod flow;
pub mod formats;
pub mod image;
pub mod measure;
pub mod metrics;
pub mod net;
pub mod par;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
