//! Learning a generalizable face landmarker inside a conditional face warper.
//!
//! Given labeled "real" faces and unlabeled "stylized" faces, the landmarker
//! is trained as the module that predicts the ending points of a thin-plate
//! spline warping field from real to stylized images. Alternating between a
//! face-warper objective (image-gradient discrepancy + landmark warping
//! error) and a proximal landmarker objective (source supervision + frozen
//! pseudo-landmarks) yields a predictor that transfers to the stylized
//! domain without stylized labels.
//!
//! The crate is self-contained: reverse-mode autodiff, TPS solver, image
//! codecs, and the training loop are all implemented here. Start with the
//! runnable demos in `examples/` or the `warpmark` binary (`synth`, `train`,
//! `predict`, `warp`, `eval`, `overlay` subcommands).
//!
//! Module map:
//! - [`autodiff`] — tape-based reverse-mode differentiation over tensors
//! - [`imageops`] — grayscale, Sobel/Laplacian fields, bilinear sampling
//! - [`warpfield`] — TPS warping field: evaluation, image warping, exact fit
//! - [`landmarker`] — the coordinate-regression network and checkpoints
//! - [`optim`] — loss terms and Adam
//! - [`trainer`] — pretraining, alternating/joint optimization, NME
//! - [`data_io`] — PNG/PNM/`.pts` codecs, synthetic benchmark, dataset layout
//! - [`cli`] — the command-line surface used by the `warpmark` binary

pub mod autodiff;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod imageops;
pub mod landmarker;
pub mod optim;
pub mod trainer;
pub mod warpfield;

pub use error::{Error, Result};
