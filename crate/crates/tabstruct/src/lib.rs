//! Table structure toolkit.
//!
//! The crate covers the network-independent parts of a table structure
//! recognition pipeline:
//!
//! * [`geometry`]: axis-aligned boxes, anchor shapes, and IoU arithmetic.
//! * [`ingest`]: annotation and detection parsing (JSONL, VOC-style XML),
//!   grayscale page bitmaps (PNG, binary PGM), and the input resize policy.
//! * [`anchors`]: traditional anchor generation and IoU-metric k-means
//!   anchor optimization.
//! * [`refine`]: layout-based row box refinement against binarized page
//!   bitmaps.
//! * [`eval`]: per-document detection evaluation with count-based and
//!   area-based metrics.
//! * [`synth`]: deterministic synthetic table page generation and
//!   detection perturbation.
//! * [`render`]: SVG anchor galleries and PNG box overlays.
//!
//! Every operation is deterministic: identical inputs, parameters, and seeds
//! produce bit-identical outputs regardless of worker count.

pub mod anchors;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod refine;
pub mod render;
pub mod synth;
