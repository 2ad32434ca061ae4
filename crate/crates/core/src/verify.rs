//! Self-check suites behind `fde kernel-check`: every fast path compared with
//! a slow reference on seeded random inputs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{BinaryMask, DepthMap, DepthUnit};
use crate::fusion::{self, init_params, mssa_forward, MssaConfig, TokenGrid, Variant};
use crate::loss::{loss_grad_check, LossConfig};
use crate::metrics::{aggregate, fit_scale_shift, format_cell, region_metrics, AggregateStats, Metric, StatMode};
use crate::regions::{boundary_band, exact_edt, BandShape};

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub pass: bool,
    pub cases: usize,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> (bool, usize, String)) -> SuiteReport {
    let t = Instant::now();
    let (pass, cases, detail) = f();
    SuiteReport {
        name: name.to_string(),
        pass,
        cases,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    let density = rng.random_range(0.05..0.6);
    BinaryMask::from_fn(h, w, |_, _| rng.random_bool(density))
}

fn brute_band(mask: &BinaryMask, r: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    let r2 = (r * r) as i64;
    BinaryMask::from_fn(h, w, |x, y| {
        let mut near_fg = false;
        let mut near_bg = !mask.get(x, y);
        for qy in 0..h {
            for qx in 0..w {
                let d2 = (qx as i64 - x as i64).pow(2) + (qy as i64 - y as i64).pow(2);
                if d2 <= r2 {
                    if mask.get(qx, qy) {
                        near_fg = true;
                    } else {
                        near_bg = true;
                    }
                }
            }
        }
        near_fg && near_bg
    })
}

fn morphology(seed: u64) -> (bool, usize, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    for _ in 0..30 {
        let (h, w) = (rng.random_range(1..=24), rng.random_range(1..=24));
        let m = random_mask(&mut rng, h, w);
        for r in [1, 3, 10] {
            cases += 1;
            let band = boundary_band(&m, r, BandShape::Disk).expect("radius >= 1");
            if band != brute_band(&m, r) {
                return (false, cases, format!("band mismatch on {h}x{w} mask at r={r}"));
            }
        }
        cases += 1;
        let edt = exact_edt(&m);
        for y in 0..h {
            for x in 0..w {
                let mut best: Option<u64> = None;
                for qy in 0..h {
                    for qx in 0..w {
                        if m.get(qx, qy) {
                            let d = ((qx as i64 - x as i64).pow(2) + (qy as i64 - y as i64).pow(2)) as u64;
                            best = Some(best.map_or(d, |b| b.min(d)));
                        }
                    }
                }
                if edt.get(x, y) != best {
                    return (false, cases, format!("distance mismatch at ({x}, {y})"));
                }
            }
        }
    }
    (true, cases, "band and distance transform match brute force".into())
}

fn alignment(seed: u64) -> (bool, usize, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    for _ in 0..20 {
        cases += 1;
        let n = rng.random_range(4..40);
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        let gt: Vec<f64> = pred
            .iter()
            .map(|p| 1.3 * p + 0.4 + rng.random_range(-0.3..0.3))
            .collect();
        let p = DepthMap::new(1, n, pred.clone(), DepthUnit::Relative).expect("dims");
        let g = DepthMap::new(1, n, gt.clone(), DepthUnit::Metric).expect("dims");
        let fit = fit_scale_shift(&p, &g, &BinaryMask::filled(1, n, true)).expect("non-empty");
        let sse = |a: f64, b: f64| pred.iter().zip(&gt).map(|(p, g)| (a * p + b - g).powi(2)).sum::<f64>();
        let best = sse(fit.a, fit.b);
        for i in -5..=5 {
            for j in -5..=5 {
                let cand = sse(fit.a + i as f64 * 1e-3, fit.b + j as f64 * 1e-3);
                if cand < best * (1.0 - 1e-9) {
                    return (false, cases, format!("grid point beats fit: {cand} < {best}"));
                }
            }
        }
    }
    (true, cases, "closed-form fit is a local grid minimum".into())
}

fn metric_loop(seed: u64) -> (bool, usize, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    for _ in 0..20 {
        cases += 1;
        let (h, w) = (16, 16);
        let gt: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.5..4.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g * rng.random_range(0.7..1.4)).collect();
        let region = random_mask(&mut rng, h, w);
        let m = region_metrics(
            &DepthMap::new(h, w, pred.clone(), DepthUnit::Metric).expect("dims"),
            &DepthMap::new(h, w, gt.clone(), DepthUnit::Metric).expect("dims"),
            &region,
            1.25,
        )
        .expect("positive gt");
        let (mut hit, mut rel, mut n) = (0usize, 0.0, 0usize);
        for i in 0..h * w {
            if region.bits()[i] {
                n += 1;
                if (pred[i] / gt[i]).max(gt[i] / pred[i]) < 1.25 {
                    hit += 1;
                }
                rel += (pred[i] - gt[i]).abs() / gt[i];
            }
        }
        if n == 0 {
            continue;
        }
        let ok = (m.delta1.unwrap() - hit as f64 / n as f64).abs() < 1e-12
            && (m.absrel.unwrap() - rel / n as f64).abs() < 1e-12;
        if !ok {
            return (false, cases, "region metrics disagree with scalar loop".into());
        }
    }
    (true, cases, "δ1 and AbsRel match a per-pixel loop".into())
}

fn aggregation(seed: u64) -> (bool, usize, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0;
    for _ in 0..100 {
        cases += 1;
        let n = rng.random_range(1..60);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = aggregate(&v, StatMode::MedianQuartiles);
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            v[lo] + (h - lo as f64) * (v[(lo + 1).min(n - 1)] - v[lo])
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let close = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        if !(close(s.median, q(0.5)) && close(s.q25, q(0.25)) && close(s.q75, q(0.75)) && close(s.mean, mean)) {
            return (false, cases, format!("statistics disagree on a list of {n}"));
        }
    }
    let cell = AggregateStats {
        median: Some(0.996),
        q25: Some(0.96),
        q75: Some(1.0),
        mean: None,
        count: 3,
        statistic_mode: StatMode::MedianQuartiles,
    };
    let text = format_cell(Some(&cell), Metric::Delta1);
    if text != "0.996 (0.960, 1.000)" {
        return (false, cases, format!("cell rendered as `{text}`"));
    }
    (true, cases + 1, "quantiles, mean and cell format match".into())
}

fn mssa_gradients(seed: u64) -> (bool, usize, String) {
    let mut cases = 0;
    let mut worst = 0.0f64;
    for v in Variant::ALL {
        let cfg = MssaConfig::small().with_variant(v);
        match fusion::grad_check(&cfg, seed, 1e-5, 1e-4) {
            Ok(r) => {
                cases += r.n_checked;
                worst = worst.max(r.worst);
                if !r.pass {
                    return (false, cases, format!("{v}: worst relative error {:.3e}", r.worst));
                }
            }
            Err(e) => return (false, cases, format!("{v}: {e}")),
        }
    }
    (true, cases, format!("all variants, worst relative error {worst:.3e}"))
}

fn mssa_structure(seed: u64) -> (bool, usize, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MssaConfig::small();
    let d = cfg.dims;
    let params = init_params(&cfg, seed).expect("valid config");
    let xg: Vec<TokenGrid> = (0..cfg.n_scales)
        .map(|_| TokenGrid::random(d.grid_h, d.grid_w, d.c_g, &mut rng))
        .collect();
    let xp = TokenGrid::random(d.grid_h, d.grid_w, d.c_p, &mut rng);
    let (ys, trace) = mssa_forward(&xg, &xp, &params, &cfg).expect("shapes agree");
    for (s, t) in trace.scales.iter().enumerate() {
        let r = t.router_weights().expect("routed variant");
        if r.rows().into_iter().any(|row| (row.sum() - 1.0).abs() >= 1e-12) {
            return (false, 1, "router weights do not sum to one".into());
        }
        let g = t.gate().expect("gated variant");
        if g.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return (false, 2, "gate outside (0, 1)".into());
        }
        for ((y, f), x) in ys[s].values.iter().zip(t.fused()).zip(&xg[s].values) {
            if *y < f.min(*x) - 1e-12 || *y > f.max(*x) + 1e-12 {
                return (false, 3, "blend leaves the [F, X_g] interval".into());
            }
        }
    }
    let constant = TokenGrid::new(
        d.grid_h,
        d.grid_w,
        ndarray::Array2::from_shape_fn((d.n_tokens(), d.c_p), |(_, c)| c as f64 * 0.3 - 0.5),
    )
    .expect("dims");
    let shuffled = cfg.clone().with_variant(Variant::ShuffledTokens);
    let (a, _) = mssa_forward(&xg, &constant, &params, &cfg).expect("forward");
    let (b, _) = mssa_forward(&xg, &constant, &params, &shuffled).expect("forward");
    if a != b {
        return (false, 4, "shuffling constant prompt tokens changed the output".into());
    }
    let (c, _) = mssa_forward(&xg, &xp, &params, &shuffled).expect("forward");
    if c == ys {
        return (false, 5, "shuffling distinct prompt tokens had no effect".into());
    }
    let shared_cfg = cfg.clone().with_variant(Variant::SharedScale);
    let shared = init_params(&shared_cfg, seed).expect("valid config");
    let same: Vec<TokenGrid> = vec![xg[0].clone(); cfg.n_scales];
    let (sy, _) = mssa_forward(&same, &xp, &shared, &shared_cfg).expect("forward");
    if sy.windows(2).any(|w| w[0] != w[1]) {
        return (false, 6, "shared scales disagree on identical inputs".into());
    }
    (true, 6, "routing, gating, shuffle and sharing properties hold".into())
}

fn loss_gradients(seed: u64) -> (bool, usize, String) {
    let mut cases = 0;
    let mut worst = 0.0f64;
    for disparity_space in [false, true] {
        let cfg = LossConfig {
            radius: 3,
            disparity_space,
            ..Default::default()
        };
        match loss_grad_check(seed, (16, 16), 1e-6, 1e-4, &cfg) {
            Ok(r) => {
                cases += 1;
                worst = worst.max(r.worst);
                if !r.pass {
                    return (
                        false,
                        cases,
                        format!("disparity_space={disparity_space}: {:?}", r.max_rel_err),
                    );
                }
            }
            Err(e) => return (false, cases, e.to_string()),
        }
    }
    (true, cases, format!("all terms, worst relative error {worst:.3e}"))
}

/// Run every suite with one seed.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        timed("morphology", || morphology(seed)),
        timed("alignment", || alignment(seed)),
        timed("region_metrics", || metric_loop(seed)),
        timed("aggregation", || aggregation(seed)),
        timed("mssa_gradients", || mssa_gradients(seed)),
        timed("mssa_structure", || mssa_structure(seed)),
        timed("loss_gradients", || loss_gradients(seed)),
    ]
}
