//! Whole-image scale-shift alignment, per-region δ1 / AbsRel, per-target
//! aggregation, and table rendering.

pub mod aggregate;
pub mod align;
pub mod region;
pub mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, quantile_sorted, AggregateStats, StatMode};
pub use align::{apply_alignment, fit_scale_shift, AlignmentFlags, AlignmentParams};
pub use region::{absrel, delta1, region_metrics, RegionMetrics, DEFAULT_DELTA_THRESHOLD};
pub use report::{format_3dp, format_cell, render_report, Metric, Region, ReportFormat, StatsTable};

use crate::depth::{check_dims, BinaryMask, DepthMap, DepthUnit};
use crate::error::{Error, Result};
use crate::regions::{region_partition, BandShape, DEFAULT_BAND_RADIUS};

/// Lower clamp applied to aligned disparity before inversion to depth.
pub const DISPARITY_CLAMP: f64 = 1e-6;

/// Space the raw prediction lives in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredSpace {
    #[default]
    Depth,
    Disparity,
}

impl FromStr for PredSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(Self::Depth),
            "disparity" => Ok(Self::Disparity),
            other => Err(Error::invalid(format!("unknown prediction space `{other}`"))),
        }
    }
}

impl fmt::Display for PredSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Depth => "depth",
            Self::Disparity => "disparity",
        })
    }
}

/// `affine` fits scale and shift over the valid pixels; `none` scores raw
/// predictions (metric models).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    #[default]
    Affine,
    None,
}

impl FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(Self::Affine),
            "none" => Ok(Self::None),
            other => Err(Error::invalid(format!("unknown alignment mode `{other}`"))),
        }
    }
}

impl fmt::Display for AlignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Affine => "affine",
            Self::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub radius: usize,
    pub band_shape: BandShape,
    pub delta_threshold: f64,
    pub pred_space: PredSpace,
    pub alignment: AlignmentMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_BAND_RADIUS,
            band_shape: BandShape::Disk,
            delta_threshold: DEFAULT_DELTA_THRESHOLD,
            pred_space: PredSpace::Depth,
            alignment: AlignmentMode::Affine,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionResults {
    pub foreground: RegionMetrics,
    pub boundary: RegionMetrics,
    pub global: RegionMetrics,
}

impl RegionResults {
    pub fn get(&self, region: Region) -> &RegionMetrics {
        match region {
            Region::Foreground => &self.foreground,
            Region::Boundary => &self.boundary,
            Region::Global => &self.global,
        }
    }
}

/// Scores for one image–target pair, before identifiers are attached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletMetrics {
    pub alignment: AlignmentParams,
    pub regions: RegionResults,
}

/// One line of a results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletResult {
    pub triplet_id: String,
    pub dataset: String,
    pub prompt_type: String,
    pub alignment: AlignmentParams,
    pub regions: RegionResults,
}

impl TripletMetrics {
    pub fn into_result(
        self,
        triplet_id: impl Into<String>,
        dataset: impl Into<String>,
        prompt_type: impl Into<String>,
    ) -> TripletResult {
        TripletResult {
            triplet_id: triplet_id.into(),
            dataset: dataset.into(),
            prompt_type: prompt_type.into(),
            alignment: self.alignment,
            regions: self.regions,
        }
    }
}

/// Score one triplet: align over the whole valid image, then measure the
/// foreground, boundary, and global regions.
pub fn evaluate_triplet(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: &BinaryMask,
    valid: &BinaryMask,
    config: &EvalConfig,
) -> Result<TripletMetrics> {
    let dims = gt.dims();
    check_dims("prediction", pred.dims(), dims)?;
    check_dims("target mask", mask.dims(), dims)?;
    check_dims("valid mask", valid.dims(), dims)?;
    if valid.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let bad = valid
        .bits()
        .iter()
        .zip(pred.values())
        .filter(|&(&v, p)| v && !p.is_finite())
        .count();
    if bad > 0 {
        return Err(Error::invalid(format!(
            "prediction is non-finite on {bad} valid pixels"
        )));
    }

    let (aligned, alignment) = match config.pred_space {
        PredSpace::Depth => match config.alignment {
            AlignmentMode::Affine => {
                let params = fit_scale_shift(pred, gt, valid)?;
                (apply_alignment(pred, &params), params)
            }
            AlignmentMode::None => (pred.clone(), AlignmentParams::IDENTITY),
        },
        PredSpace::Disparity => {
            let params = match config.alignment {
                AlignmentMode::Affine => {
                    let gt_disp = DepthMap::from_fn(dims.0, dims.1, DepthUnit::Disparity, |x, y| {
                        if valid.get(x, y) {
                            1.0 / gt.get(x, y)
                        } else {
                            f64::NAN
                        }
                    });
                    fit_scale_shift(pred, &gt_disp, valid)?
                }
                AlignmentMode::None => AlignmentParams::IDENTITY,
            };
            let depth = pred.map(gt.unit(), |p| 1.0 / params.apply(p).max(DISPARITY_CLAMP));
            (depth, params)
        }
    };

    let regions = region_partition(mask, valid, config.radius, config.band_shape)?;
    let t = config.delta_threshold;
    Ok(TripletMetrics {
        alignment,
        regions: RegionResults {
            foreground: region_metrics(&aligned, gt, &regions.fg, t)?,
            boundary: region_metrics(&aligned, gt, &regions.bd, t)?,
            global: region_metrics(&aligned, gt, &regions.glb, t)?,
        },
    })
}
