//! Seeded fixtures shared by the benchmarks.

use fde_core::fusion::{init_params, MssaConfig, MssaParams, TokenGrid};
use fde_core::{BinaryMask, DepthMap, DepthUnit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A `h × w` scene: tilted plane, an elliptical target in front of it, and a
/// prediction that is an affine copy of the ground truth with noise.
pub struct Scene {
    pub gt: DepthMap,
    pub pred: DepthMap,
    pub mask: BinaryMask,
    pub valid: BinaryMask,
}

pub fn scene(h: usize, w: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mask = BinaryMask::from_fn(h, w, |x, y| {
        let dx = (x as f64 - cx) / (w as f64 / 5.0);
        let dy = (y as f64 - cy) / (h as f64 / 4.0);
        dx * dx + dy * dy <= 1.0
    });
    let gt = DepthMap::from_fn(h, w, DepthUnit::Metric, |x, y| {
        2.0 + 0.002 * x as f64 + 0.004 * y as f64 - if mask.get(x, y) { 0.8 } else { 0.0 }
    });
    let noise: Vec<f64> = (0..h * w).map(|_| rng.random_range(-0.05..0.05)).collect();
    let pred = DepthMap::new(
        h,
        w,
        gt.values().iter().zip(&noise).map(|(g, n)| 0.5 * g + 0.1 + n).collect(),
        DepthUnit::Relative,
    )
    .expect("dims");
    let valid = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(0.97));
    Scene { gt, pred, mask, valid }
}

/// Token grids and parameters for a fusion forward pass.
pub fn fusion_inputs(config: &MssaConfig, seed: u64) -> (Vec<TokenGrid>, TokenGrid, MssaParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.dims;
    let xg = (0..config.n_scales)
        .map(|_| TokenGrid::random(d.grid_h, d.grid_w, d.c_g, &mut rng))
        .collect();
    let xp = TokenGrid::random(d.grid_h, d.grid_w, d.c_p, &mut rng);
    let params = init_params(config, seed).expect("valid config");
    (xg, xp, params)
}
