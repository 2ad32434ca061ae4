//! Region-aware training objective with analytic gradients.
//!
//! `L = L_glb + L_fg + L_bd + L_seg`, where each depth term is a masked MSE
//! plus a weighted first-difference (gradient) loss over its region, computed
//! on the scale-shift aligned prediction, and `L_seg = BCE + Dice`. The
//! alignment `(a, b)` is fitted over the valid pixels and then held constant
//! for differentiation.

mod check;

use serde::{Deserialize, Serialize};

use crate::depth::{check_dims, BinaryMask, DepthMap, DepthUnit};
use crate::error::{Error, Result};
use crate::metrics::{fit_scale_shift, AlignmentParams};
use crate::regions::{region_partition, BandShape, DEFAULT_BAND_RADIUS};

pub use check::{loss_grad_check, LossCheckReport};

pub const DEFAULT_GRAD_WEIGHT: f64 = 0.5;
pub const DEFAULT_DISPARITY_FLOOR: f64 = 1e-3;
pub const DEFAULT_PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_DICE_EPS: f64 = 1.0;

/// Which terms enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub fg: bool,
    pub bd: bool,
    pub glb: bool,
    pub seg: bool,
}

impl LossTerms {
    pub const ALL: Self = Self {
        fg: true,
        bd: true,
        glb: true,
        seg: true,
    };
    pub const GLOBAL_ONLY: Self = Self {
        fg: false,
        bd: false,
        glb: true,
        seg: false,
    };
}

impl Default for LossTerms {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the gradient loss inside each depth term.
    pub grad_weight: f64,
    pub disparity_space: bool,
    pub disparity_floor: f64,
    /// BCE probability clamp `ε`.
    pub prob_clamp: f64,
    pub dice_eps: f64,
    pub radius: usize,
    pub band_shape: BandShape,
    pub terms: LossTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            grad_weight: DEFAULT_GRAD_WEIGHT,
            disparity_space: false,
            disparity_floor: DEFAULT_DISPARITY_FLOOR,
            prob_clamp: DEFAULT_PROB_CLAMP,
            dice_eps: DEFAULT_DICE_EPS,
            radius: DEFAULT_BAND_RADIUS,
            band_shape: BandShape::Disk,
            terms: LossTerms::ALL,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_weight >= 0.0 && self.grad_weight.is_finite()) {
            return Err(Error::invalid(format!(
                "grad_weight must be >= 0, got {}",
                self.grad_weight
            )));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(Error::invalid(format!(
                "prob_clamp must lie in (0, 0.5), got {}",
                self.prob_clamp
            )));
        }
        if !(self.dice_eps >= 0.0 && self.disparity_floor > 0.0) {
            return Err(Error::invalid("dice_eps must be >= 0 and disparity_floor > 0"));
        }
        Ok(())
    }
}

/// Term values and the pixel counts they were normalized by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_fg: f64,
    pub l_bd: f64,
    pub l_glb: f64,
    pub l_seg: f64,
    pub total: f64,
    pub n_fg: usize,
    pub n_bd: usize,
    pub n_glb: usize,
    pub n_seg: usize,
}

/// Elementwise `1 / max(d, floor)`; non-finite values stay NaN.
pub fn to_disparity(depth: &DepthMap, floor: f64) -> Result<DepthMap> {
    if !(floor > 0.0) {
        return Err(Error::invalid(format!("disparity floor must be positive, got {floor}")));
    }
    Ok(depth.map(DepthUnit::Disparity, |d| {
        if d.is_finite() {
            1.0 / d.max(floor)
        } else {
            f64::NAN
        }
    }))
}

/// Masked MSE plus `grad_weight` times the mean absolute forward difference
/// of the residual, over pairs whose two pixels are both in `region`.
/// Returns the value and its gradient with respect to `pred_aligned`.
pub fn depth_region_loss(
    pred_aligned: &DepthMap,
    gt: &DepthMap,
    region: &BinaryMask,
    config: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    check_dims("prediction", pred_aligned.dims(), gt.dims())?;
    check_dims("region", region.dims(), gt.dims())?;
    let (h, w) = gt.dims();
    let mut grad = vec![0.0; h * w];
    let n = region.count();
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inside = region.bits();
    let mut resid = vec![0.0; h * w];
    for i in 0..h * w {
        if inside[i] {
            let (p, g) = (pred_aligned.values()[i], gt.values()[i]);
            if !(p.is_finite() && g.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite depth at pixel {i} inside the loss region"
                )));
            }
            resid[i] = p - g;
        }
    }

    let nf = n as f64;
    let mut sq = Vec::with_capacity(n);
    for i in 0..h * w {
        if inside[i] {
            sq.push(resid[i] * resid[i]);
            grad[i] = 2.0 * resid[i] / nf;
        }
    }
    let mut value = crate::numeric::pairwise_sum(&sq) / nf;

    if config.grad_weight > 0.0 {
        let mut pairs = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !inside[i] {
                    continue;
                }
                if x + 1 < w && inside[i + 1] {
                    pairs.push((i, i + 1));
                }
                if y + 1 < h && inside[i + w] {
                    pairs.push((i, i + w));
                }
            }
        }
        if !pairs.is_empty() {
            let scale = config.grad_weight / pairs.len() as f64;
            let abs: Vec<f64> = pairs.iter().map(|&(i, j)| (resid[j] - resid[i]).abs()).collect();
            value += scale * crate::numeric::pairwise_sum(&abs);
            for &(i, j) in &pairs {
                let s = sign(resid[j] - resid[i]) * scale;
                grad[j] += s;
                grad[i] -= s;
            }
        }
    }
    Ok((value, grad))
}

/// Subgradient choice `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean clamped BCE over all pixels plus soft Dice loss. Returns the value and
/// its gradient with respect to the probabilities. Clamped pixels get zero BCE
/// gradient.
pub fn seg_loss(pred_mask: &[f64], gt_mask: &BinaryMask, config: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let n = gt_mask.bits().len();
    if pred_mask.len() != n {
        return Err(Error::invalid(format!(
            "probability grid has {} values, mask has {n}",
            pred_mask.len()
        )));
    }
    if let Some(bad) = pred_mask.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {bad} outside [0, 1]")));
    }
    let eps = config.prob_clamp;
    let nf = n as f64;
    let mut grad = vec![0.0; n];
    let mut bce_terms = Vec::with_capacity(n);
    for (i, (&p, &m)) in pred_mask.iter().zip(gt_mask.bits()).enumerate() {
        let pc = p.clamp(eps, 1.0 - eps);
        bce_terms.push(if m { -pc.ln() } else { -(1.0 - pc).ln() });
        if (eps..=1.0 - eps).contains(&p) {
            grad[i] = if m { -1.0 / p } else { 1.0 / (1.0 - p) } / nf;
        }
    }
    let bce = crate::numeric::pairwise_sum(&bce_terms) / nf;

    let inter: Vec<f64> = pred_mask
        .iter()
        .zip(gt_mask.bits())
        .map(|(&p, &m)| if m { p } else { 0.0 })
        .collect();
    let i_sum = crate::numeric::pairwise_sum(&inter);
    let p_sum = crate::numeric::pairwise_sum(pred_mask);
    let m_sum = gt_mask.count() as f64;
    let denom = p_sum + m_sum + config.dice_eps;
    let numer = 2.0 * i_sum + config.dice_eps;
    let dice = 1.0 - numer / denom;
    for (g, &m) in grad.iter_mut().zip(gt_mask.bits()) {
        let dm = if m { 2.0 } else { 0.0 };
        *g -= (dm * denom - numer) / (denom * denom);
    }
    Ok((bce + dice, grad))
}

/// Per-term gradients. Depth terms are with respect to the raw prediction,
/// the segmentation term with respect to the probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct TermGrads {
    pub fg: Vec<f64>,
    pub bd: Vec<f64>,
    pub glb: Vec<f64>,
    pub seg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub breakdown: LossBreakdown,
    pub alignment: AlignmentParams,
    /// `∂L/∂pred_depth`
    pub grad_depth: Vec<f64>,
    /// `∂L/∂pred_mask`
    pub grad_mask: Vec<f64>,
    pub terms: TermGrads,
}

/// Evaluate the full objective. When `alignment` is `None` it is fitted over
/// `valid`; passing it fixes `(a, b)`, which is how the gradient check
/// honours the stop-gradient.
pub fn total_objective(
    pred_depth: &DepthMap,
    pred_mask: &[f64],
    gt_depth: &DepthMap,
    gt_mask: &BinaryMask,
    valid: &BinaryMask,
    config: &LossConfig,
    alignment: Option<AlignmentParams>,
) -> Result<Objective> {
    config.validate()?;
    check_dims("prediction", pred_depth.dims(), gt_depth.dims())?;
    check_dims("target mask", gt_mask.dims(), gt_depth.dims())?;
    check_dims("valid mask", valid.dims(), gt_depth.dims())?;
    if valid.is_empty() {
        return Err(Error::NoValidPixels);
    }
    if let Some(i) = (0..valid.bits().len()).find(|&i| valid.bits()[i] && !pred_depth.values()[i].is_finite()) {
        return Err(Error::invalid(format!("non-finite prediction at valid pixel {i}")));
    }

    let (pred_space, gt_space) = if config.disparity_space {
        (
            to_disparity(pred_depth, config.disparity_floor)?,
            to_disparity(gt_depth, config.disparity_floor)?,
        )
    } else {
        (pred_depth.clone(), gt_depth.clone())
    };
    let alignment = match alignment {
        Some(a) => a,
        None => fit_scale_shift(&pred_space, &gt_space, valid)?,
    };
    let aligned = pred_space.map(gt_space.unit(), |v| alignment.apply(v));
    let regions = region_partition(gt_mask, valid, config.radius, config.band_shape)?;

    // d(aligned)/d(raw prediction), per pixel.
    let chain: Vec<f64> = pred_depth
        .values()
        .iter()
        .map(|&p| {
            if !config.disparity_space {
                alignment.a
            } else if p > config.disparity_floor {
                -alignment.a / (p * p)
            } else {
                0.0
            }
        })
        .collect();
    let to_raw = |g: Vec<f64>| -> Vec<f64> { g.iter().zip(&chain).map(|(g, c)| g * c).collect() };

    let n_px = valid.bits().len();
    let depth_term = |enabled: bool, region: &BinaryMask| -> Result<(f64, Vec<f64>, usize)> {
        if !enabled {
            return Ok((0.0, vec![0.0; n_px], region.count()));
        }
        let (v, g) = depth_region_loss(&aligned, &gt_space, region, config)?;
        Ok((v, to_raw(g), region.count()))
    };
    let (l_fg, g_fg, n_fg) = depth_term(config.terms.fg, &regions.fg)?;
    let (l_bd, g_bd, n_bd) = depth_term(config.terms.bd, &regions.bd)?;
    let (l_glb, g_glb, n_glb) = depth_term(config.terms.glb, &regions.glb)?;
    let (l_seg, g_seg) = if config.terms.seg {
        seg_loss(pred_mask, gt_mask, config)?
    } else {
        if pred_mask.len() != n_px {
            return Err(Error::invalid("probability grid size mismatch"));
        }
        (0.0, vec![0.0; n_px])
    };

    let total = l_glb + l_fg + l_bd + l_seg;
    let grad_depth = (0..n_px).map(|i| g_glb[i] + g_fg[i] + g_bd[i]).collect();
    Ok(Objective {
        breakdown: LossBreakdown {
            l_fg,
            l_bd,
            l_glb,
            l_seg,
            total,
            n_fg,
            n_bd,
            n_glb,
            n_seg: n_px,
        },
        alignment,
        grad_depth,
        grad_mask: g_seg.clone(),
        terms: TermGrads {
            fg: g_fg,
            bd: g_bd,
            glb: g_glb,
            seg: g_seg,
        },
    })
}
