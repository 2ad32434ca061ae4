use serde::{Deserialize, Serialize};

use crate::depth::{check_dims, BinaryMask, DepthMap};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Ratio threshold for δ1.
pub const DEFAULT_DELTA_THRESHOLD: f64 = 1.25;

/// δ1 and AbsRel over one region. Both are `None` when the region is empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub delta1: Option<f64>,
    pub absrel: Option<f64>,
    pub n_pixels: usize,
}

impl RegionMetrics {
    pub const EMPTY: Self = Self {
        delta1: None,
        absrel: None,
        n_pixels: 0,
    };
}

fn region_pairs<'a>(pred: &'a DepthMap, gt: &'a DepthMap, region: &'a BinaryMask) -> Result<Vec<(f64, f64)>> {
    check_dims("prediction", pred.dims(), gt.dims())?;
    check_dims("region", region.dims(), gt.dims())?;
    let mut pairs = Vec::new();
    for ((&inside, &p), &g) in region.bits().iter().zip(pred.values()).zip(gt.values()) {
        if !inside {
            continue;
        }
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::invalid(format!(
                "region contains a non-positive or non-finite ground-truth value ({g})"
            )));
        }
        pairs.push((p, g));
    }
    Ok(pairs)
}

fn delta1_of(pairs: &[(f64, f64)], threshold: f64) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let hits = pairs
        .iter()
        .filter(|&&(p, g)| p > 0.0 && p.is_finite() && (p / g).max(g / p) < threshold)
        .count();
    Some(hits as f64 / pairs.len() as f64)
}

fn absrel_of(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let terms: Vec<f64> = pairs.iter().map(|&(p, g)| (p - g).abs() / g).collect();
    Some(pairwise_sum(&terms) / pairs.len() as f64)
}

/// Fraction of region pixels with `max(p/g, g/p) < threshold`. Nonpositive
/// predictions count as misses.
pub fn delta1(pred_aligned: &DepthMap, gt: &DepthMap, region: &BinaryMask, threshold: f64) -> Result<Option<f64>> {
    Ok(delta1_of(&region_pairs(pred_aligned, gt, region)?, threshold))
}

/// Mean of `|p − g| / g` over the region.
pub fn absrel(pred_aligned: &DepthMap, gt: &DepthMap, region: &BinaryMask) -> Result<Option<f64>> {
    Ok(absrel_of(&region_pairs(pred_aligned, gt, region)?))
}

pub fn region_metrics(
    pred_aligned: &DepthMap,
    gt: &DepthMap,
    region: &BinaryMask,
    threshold: f64,
) -> Result<RegionMetrics> {
    let pairs = region_pairs(pred_aligned, gt, region)?;
    Ok(RegionMetrics {
        delta1: delta1_of(&pairs, threshold),
        absrel: absrel_of(&pairs),
        n_pixels: pairs.len(),
    })
}
