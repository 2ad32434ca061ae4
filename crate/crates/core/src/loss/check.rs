use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{total_objective, LossBreakdown, LossConfig};
use crate::depth::{BinaryMask, DepthMap, DepthUnit};
use crate::error::{Error, Result};
use crate::numeric::sigmoid;

/// Largest fixture side accepted by [`loss_grad_check`].
pub const MAX_CHECK_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCheckReport {
    pub height: usize,
    pub width: usize,
    pub step: f64,
    pub tolerance: f64,
    pub config: LossConfig,
    pub breakdown: LossBreakdown,
    /// Worst relative error for `fg`, `bd`, `glb`, `seg`, and `total`.
    pub max_rel_err: BTreeMap<String, f64>,
    pub worst: f64,
    pub pass: bool,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

struct Fixture {
    pred: DepthMap,
    probs: Vec<f64>,
    gt: DepthMap,
    mask: BinaryMask,
    valid: BinaryMask,
}

/// Smooth ground truth with a few holes, an elliptical target, a
/// non-affine noisy prediction, and probabilities kept off the clamp.
fn fixture(seed: u64, h: usize, w: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mask = BinaryMask::from_fn(h, w, |x, y| {
        let dx = (x as f64 - cx) / (w as f64 / 4.0);
        let dy = (y as f64 - cy) / (h as f64 / 3.0);
        dx * dx + dy * dy <= 1.0
    });
    let mut gt_vals = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let base = 2.0 + 0.05 * x as f64 - 0.03 * y as f64;
            let bump = if mask.get(x, y) { -0.6 } else { 0.0 };
            gt_vals.push(if rng.random::<f64>() < 0.05 {
                f64::NAN
            } else {
                base + bump
            });
        }
    }
    let gt = DepthMap::new(h, w, gt_vals, DepthUnit::Metric).expect("dims");
    let valid = crate::depth::compute_valid(&gt, crate::depth::ValidityBounds::METRIC);
    let pred_vals = (0..h * w)
        .map(|i| {
            let g = gt.values()[i];
            let g = if g.is_finite() { g } else { 2.0 };
            let sigma = if mask.bits()[i] { 0.15 } else { 0.05 };
            0.8 * g + 0.3 + 0.05 * g * g + sigma * noise.sample(&mut rng)
        })
        .collect();
    let pred = DepthMap::new(h, w, pred_vals, DepthUnit::Relative).expect("dims");
    let probs = mask
        .bits()
        .iter()
        .map(|&m| {
            let logit = if m { 1.5 } else { -1.5 } + noise.sample(&mut rng);
            sigmoid(logit).clamp(0.02, 0.98)
        })
        .collect();
    Fixture {
        pred,
        probs,
        gt,
        mask,
        valid,
    }
}

/// Central-difference check of every loss term and the total on a seeded
/// `h × w` fixture. The alignment fitted on the unperturbed prediction is held
/// fixed, matching the stop-gradient in [`total_objective`].
pub fn loss_grad_check(
    seed: u64,
    dims: (usize, usize),
    step: f64,
    tolerance: f64,
    config: &LossConfig,
) -> Result<LossCheckReport> {
    let (h, w) = dims;
    if h < 2 || w < 2 || h > MAX_CHECK_SIDE || w > MAX_CHECK_SIDE {
        return Err(Error::invalid(format!(
            "fixture must be between 2x2 and {MAX_CHECK_SIDE}x{MAX_CHECK_SIDE}, got {h}x{w}"
        )));
    }
    let f = fixture(seed, h, w);
    let base = total_objective(&f.pred, &f.probs, &f.gt, &f.mask, &f.valid, config, None)?;
    let fixed = Some(base.alignment);

    let mut errs: BTreeMap<String, f64> = ["fg", "bd", "glb", "seg", "total"]
        .into_iter()
        .map(|k| (k.to_string(), 0.0))
        .collect();
    let mut note = |k: &str, e: f64| {
        let slot = errs.get_mut(k).expect("known term");
        *slot = slot.max(e);
    };

    for i in 0..h * w {
        let eval = |d: f64| -> Result<LossBreakdown> {
            let mut vals = f.pred.values().to_vec();
            vals[i] += d;
            let p = DepthMap::new(h, w, vals, f.pred.unit())?;
            Ok(total_objective(&p, &f.probs, &f.gt, &f.mask, &f.valid, config, fixed)?.breakdown)
        };
        let (plus, minus) = (eval(step)?, eval(-step)?);
        let fd = |a: f64, b: f64| (a - b) / (2.0 * step);
        note("fg", rel_err(base.terms.fg[i], fd(plus.l_fg, minus.l_fg)));
        note("bd", rel_err(base.terms.bd[i], fd(plus.l_bd, minus.l_bd)));
        note("glb", rel_err(base.terms.glb[i], fd(plus.l_glb, minus.l_glb)));
        note("total", rel_err(base.grad_depth[i], fd(plus.total, minus.total)));
    }
    for i in 0..h * w {
        let eval = |d: f64| -> Result<LossBreakdown> {
            let mut probs = f.probs.clone();
            probs[i] += d;
            Ok(total_objective(&f.pred, &probs, &f.gt, &f.mask, &f.valid, config, fixed)?.breakdown)
        };
        let (plus, minus) = (eval(step)?, eval(-step)?);
        note(
            "seg",
            rel_err(base.terms.seg[i], (plus.l_seg - minus.l_seg) / (2.0 * step)),
        );
        note(
            "total",
            rel_err(base.grad_mask[i], (plus.total - minus.total) / (2.0 * step)),
        );
    }

    let worst = errs.values().copied().fold(0.0, f64::max);
    Ok(LossCheckReport {
        height: h,
        width: w,
        step,
        tolerance,
        config: *config,
        breakdown: base.breakdown,
        max_rel_err: errs,
        worst,
        pass: worst < tolerance,
    })
}
