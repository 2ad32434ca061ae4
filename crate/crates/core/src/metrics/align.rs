//! Least-squares scale-shift alignment of a relative prediction to ground truth.

use serde::{Deserialize, Serialize};

use crate::depth::{check_dims, BinaryMask, DepthMap};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Predictions whose variance over the fit pixels is below this are treated
/// as constant.
pub const MIN_PRED_VARIANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentFlags {
    /// Too few pixels or a constant prediction: `a = 1`, `b` matches means.
    pub degenerate_fallback: bool,
    pub negative_scale: bool,
}

/// `aligned = a * pred + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    pub a: f64,
    pub b: f64,
    pub flags: AlignmentFlags,
}

impl AlignmentParams {
    pub const IDENTITY: Self = Self {
        a: 1.0,
        b: 0.0,
        flags: AlignmentFlags {
            degenerate_fallback: false,
            negative_scale: false,
        },
    };

    pub fn apply(&self, value: f64) -> f64 {
        self.a * value + self.b
    }
}

/// Closed-form minimizer of `Σ_valid (a·pred + b − gt)²`.
///
/// Pixels where the prediction is non-finite are left out of the fit.
pub fn fit_scale_shift(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<AlignmentParams> {
    check_dims("prediction", pred.dims(), gt.dims())?;
    check_dims("valid mask", valid.dims(), gt.dims())?;

    let (p, g): (Vec<f64>, Vec<f64>) = valid
        .bits()
        .iter()
        .zip(pred.values().iter().zip(gt.values()))
        .filter(|&(&v, (p, g))| v && p.is_finite() && g.is_finite())
        .map(|(_, (&p, &g))| (p, g))
        .unzip();
    let n = p.len();
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let nf = n as f64;
    let mean_p = pairwise_sum(&p) / nf;
    let mean_g = pairwise_sum(&g) / nf;

    let dp: Vec<f64> = p.iter().map(|&v| v - mean_p).collect();
    let sxx = pairwise_sum(&dp.iter().map(|d| d * d).collect::<Vec<_>>());
    let sxy = pairwise_sum(&dp.iter().zip(&g).map(|(d, &gv)| d * (gv - mean_g)).collect::<Vec<_>>());

    if n < 2 || sxx / nf < MIN_PRED_VARIANCE {
        return Ok(AlignmentParams {
            a: 1.0,
            b: mean_g - mean_p,
            flags: AlignmentFlags {
                degenerate_fallback: true,
                negative_scale: false,
            },
        });
    }

    let a = sxy / sxx;
    Ok(AlignmentParams {
        a,
        b: mean_g - a * mean_p,
        flags: AlignmentFlags {
            degenerate_fallback: false,
            negative_scale: a < 0.0,
        },
    })
}

/// Elementwise `a·pred + b`; NaN stays NaN.
pub fn apply_alignment(pred: &DepthMap, params: &AlignmentParams) -> DepthMap {
    pred.map(pred.unit(), |v| params.apply(v))
}
