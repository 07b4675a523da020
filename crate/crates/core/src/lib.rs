//! Tools for measuring how well saliency explanations of image detectors
//! line up with where people look.
//!
//! The crate is organized bottom-up:
//!
//! * [`mask`]: the mask type, normalization ops, cosine similarity and file formats.
//! * [`explain`]: perturbation explainers (occlusion, LIME, KernelSHAP) over a
//!   pluggable [`explain::Classifier`], plus import of externally computed masks.
//! * [`human`]: attention masks synthesized from survey clicks.
//! * [`corpus`]: images, labels, annotation responses and their persistence.
//! * [`analysis`]: method similarity and clustering, best-method selection,
//!   per-category reports, parameter sweeps and text-category scores.
//! * [`synthetic`]: a seeded toy corpus for exercising the whole pipeline.

pub mod mask;
pub mod explain;
pub mod human;
pub mod corpus;
pub mod analysis;
pub mod synthetic;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
