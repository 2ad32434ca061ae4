//! Target-centric monocular depth benchmarking.
//!
//! The crate covers two halves:
//!
//! * benchmark tooling: decoding RGB-D sources, building image–target–depth
//!   triplet manifests, and scoring predictions with δ1 / AbsRel over the
//!   foreground, boundary, and global regions of each target after a
//!   whole-image scale-shift fit ([`bench`], [`regions`], [`metrics`]);
//! * numeric reference kernels: the prompt–geometry fusion block with
//!   hand-written reverse-mode derivatives ([`fusion`]) and the region-aware
//!   training objective ([`loss`]), both checked against finite differences.

// `!(x > y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod depth;
pub mod error;
pub mod fusion;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod numeric;
pub mod regions;
pub mod verify;

pub use depth::{compute_valid, tight_bbox, BBox, BinaryMask, DepthMap, DepthUnit, ValidityBounds};
pub use error::{Error, Result};
pub use io::{decode_depth, decode_mask, DepthFormat, InstanceMap};
pub use regions::{
    boundary_band, exact_edt, region_partition, BandShape, DistanceField, RegionSet, DEFAULT_BAND_RADIUS,
};

/// Version string embedded in every output file.
pub const TOOL_VERSION: &str = concat!("fde ", env!("CARGO_PKG_VERSION"));
