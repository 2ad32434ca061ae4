//! Acceptance suite. Each criterion runs against a slow reference written
//! here, independent of the library internals, and prints one PASS/FAIL line.
//!
//! Run with `cargo test -p fde-core --test acceptance`.

// `ensure!(x < y)` negates the comparison so NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fde_core::bench::{build_manifest, write_manifest, BuildConfig, SourceRecord, Split};
use fde_core::fusion::{grad_check, init_params, mssa_forward, mssa_forward_scale, MssaConfig, TokenGrid, Variant};
use fde_core::io::{write_depth_png16, write_instance_png, write_mask_png};
use fde_core::loss::{total_objective, LossConfig, LossTerms};
use fde_core::metrics::{
    aggregate, evaluate_triplet, fit_scale_shift, region_metrics, render_report, AggregateStats, EvalConfig, Metric,
    PredSpace, Region, ReportFormat, StatMode, StatsTable,
};
use fde_core::{
    boundary_band, compute_valid, decode_depth, decode_mask, exact_edt, BandShape, BinaryMask, DepthFormat, DepthMap,
    DepthUnit, InstanceMap,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn depth(h: usize, w: usize, v: Vec<f64>) -> DepthMap {
    DepthMap::new(h, w, v, DepthUnit::Metric).expect("dims")
}

// ---------------------------------------------------------------- 1

/// Random disks plus salt noise, so bands see both blobs and speckle.
fn blob_mask(r: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    let blobs: Vec<(f64, f64, f64)> = (0..r.random_range(0..4))
        .map(|_| {
            (
                r.random_range(0.0..w as f64),
                r.random_range(0.0..h as f64),
                r.random_range(1.0..(h.max(w) as f64 / 2.0).max(1.5)),
            )
        })
        .collect();
    let salt = r.random_range(0.0..0.15);
    BinaryMask::from_fn(h, w, |x, y| {
        blobs
            .iter()
            .any(|&(cx, cy, rad)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= rad * rad)
            || r.random_bool(salt)
    })
}

/// Dilation and erosion by scanning every disk offset. Off-image pixels never
/// count as background, so the frame does not erode the mask.
fn brute_disk_band(m: &BinaryMask, radius: usize) -> BinaryMask {
    let (h, w) = m.dims();
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    BinaryMask::from_fn(h, w, |x, y| {
        let (mut fg, mut bg) = (false, false);
        for &(dx, dy) in &offsets {
            let (qx, qy) = (x as i64 + dx, y as i64 + dy);
            if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                continue;
            }
            if m.get(qx as usize, qy as usize) {
                fg = true;
            } else {
                bg = true;
            }
        }
        fg && bg
    })
}

fn brute_edt(m: &BinaryMask) -> Vec<Option<u64>> {
    let (h, w) = m.dims();
    let src: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| m.get(x, y))
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    (0..h * w)
        .map(|i| {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            src.iter()
                .map(|&(sx, sy)| ((sx - x).pow(2) + (sy - y).pow(2)) as u64)
                .min()
        })
        .collect()
}

fn edt_matches(m: &BinaryMask) -> bool {
    let (h, w) = m.dims();
    let fast = exact_edt(m);
    let slow = brute_edt(m);
    (0..h * w).all(|i| fast.get(i % w, i / w) == slow[i])
}

fn mask_from_bits(h: usize, w: usize, bits: u64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |x, y| bits >> (y * w + x) & 1 == 1)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut r = rng(1);
    for case in 0..200 {
        let (h, w) = (r.random_range(1..=64), r.random_range(1..=64));
        let m = blob_mask(&mut r, h, w);
        for radius in [1, 3, 10] {
            let band = boundary_band(&m, radius, BandShape::Disk).map_err(|e| e.to_string())?;
            ensure!(
                band == brute_disk_band(&m, radius),
                "case {case}: band differs on {h}x{w} at r={radius}"
            );
        }
    }

    // All 2^64 8x8 masks are out of reach. Instead: every 8x8 mask with at
    // most two set or at most two unset pixels, every 4x4 mask, and random
    // 8x8 masks across densities.
    let mut n_edt = 0usize;
    let cells = 64u32;
    let mut sparse = vec![0u64];
    for i in 0..cells {
        sparse.push(1 << i);
        for j in i + 1..cells {
            sparse.push(1 << i | 1 << j);
        }
    }
    for &bits in &sparse {
        for b in [bits, !bits] {
            ensure!(edt_matches(&mask_from_bits(8, 8, b)), "8x8 mask {b:#018x}");
            n_edt += 1;
        }
    }
    for bits in 0..1u64 << 16 {
        ensure!(edt_matches(&mask_from_bits(4, 4, bits)), "4x4 mask {bits:#06x}");
        n_edt += 1;
    }
    for _ in 0..5000 {
        let p = r.random_range(0.02..0.98);
        let m = BinaryMask::from_fn(8, 8, |_, _| r.random_bool(p));
        ensure!(edt_matches(&m), "random 8x8 mask");
        n_edt += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!("600 band cases, {n_edt} distance transforms, {secs:.1}s"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let sse = |p: &[f64], g: &[f64], a: f64, b: f64| p.iter().zip(g).map(|(p, g)| (a * p + b - g).powi(2)).sum::<f64>();
    let mut worst_affine = 0.0f64;
    let mut case = 0;
    while case < 100 {
        let (h, w) = (r.random_range(2..24), r.random_range(2..24));
        let n = h * w;
        let pred: Vec<f64> = (0..n).map(|_| r.random_range(0.05..10.0)).collect();
        let (a0, b0) = (r.random_range(-3.0..3.0), r.random_range(-5.0..5.0));
        let noise = r.random_range(0.0..1.0);
        let gt: Vec<f64> = pred
            .iter()
            .map(|p| a0 * p + b0 + noise * r.random_range(-1.0..1.0))
            .collect();
        let valid = BinaryMask::from_fn(h, w, |_, _| r.random_bool(0.8));
        if valid.count() < 3 {
            continue;
        }
        let fit =
            fit_scale_shift(&depth(h, w, pred.clone()), &depth(h, w, gt.clone()), &valid).map_err(|e| e.to_string())?;
        let (p, g): (Vec<f64>, Vec<f64>) = (0..n).filter(|&i| valid.bits()[i]).map(|i| (pred[i], gt[i])).unzip();
        let best = sse(&p, &g, fit.a, fit.b);
        let (da, db) = (0.02 * fit.a.abs().max(0.1), 0.02 * fit.b.abs().max(0.1));
        for i in -50..=50 {
            for j in -50..=50 {
                let cand = sse(&p, &g, fit.a + i as f64 * da / 50.0, fit.b + j as f64 * db / 50.0);
                ensure!(
                    best <= cand * (1.0 + 1e-9) + 1e-300,
                    "case {case}: grid ({i}, {j}) gives {cand} < {best}"
                );
            }
        }

        let exact: Vec<f64> = pred.iter().map(|p| a0 * p + b0).collect();
        let fit =
            fit_scale_shift(&depth(h, w, pred.clone()), &depth(h, w, exact), &valid).map_err(|e| e.to_string())?;
        let err = (fit.a - a0).abs().max((fit.b - b0).abs());
        worst_affine = worst_affine.max(err);
        ensure!(err <= 1e-10, "case {case}: exact affine recovered with error {err:.2e}");
        case += 1;
    }
    Ok(format!(
        "100 instances vs 101x101 grid; exact affine error {worst_affine:.1e}"
    ))
}

// ---------------------------------------------------------------- 3

fn loop_metrics(pred: &[f64], gt: &[f64], region: &BinaryMask) -> Option<(f64, f64)> {
    let (mut n, mut hit, mut rel) = (0usize, 0usize, 0.0f64);
    for i in 0..gt.len() {
        if !region.bits()[i] {
            continue;
        }
        n += 1;
        let (p, g) = (pred[i], gt[i]);
        if p > 0.0 && (p / g).max(g / p) < 1.25 {
            hit += 1;
        }
        rel += (p - g).abs() / g;
    }
    (n > 0).then(|| (hit as f64 / n as f64, rel / n as f64))
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let (h, w) = (64, 64);
    for case in 0..100 {
        let gt: Vec<f64> = (0..h * w).map(|_| r.random_range(0.2..8.0)).collect();
        let pred: Vec<f64> = gt
            .iter()
            .map(|g| {
                if r.random_bool(0.01) {
                    -g
                } else {
                    g * r.random_range(0.6..1.6)
                }
            })
            .collect();
        let region = blob_mask(&mut r, h, w);
        let m = region_metrics(&depth(h, w, pred.clone()), &depth(h, w, gt.clone()), &region, 1.25)
            .map_err(|e| e.to_string())?;
        match loop_metrics(&pred, &gt, &region) {
            None => ensure!(
                m.delta1.is_none() && m.absrel.is_none(),
                "case {case}: empty region scored"
            ),
            Some((d, a)) => {
                let (md, ma) = (m.delta1.unwrap_or(f64::NAN), m.absrel.unwrap_or(f64::NAN));
                ensure!((md - d).abs() <= 1e-12, "case {case}: δ1 {md} vs loop {d}");
                ensure!((ma - a).abs() <= 1e-12, "case {case}: AbsRel {ma} vs loop {a}");
            }
        }
    }

    let mut regions_checked = 0;
    for case in 0..40 {
        let gt: Vec<f64> = (0..h * w)
            .map(|i| 1.0 + 0.03 * (i % w) as f64 + 0.02 * (i / w) as f64 + r.random_range(0.0..0.5))
            .collect();
        let (a, b) = (r.random_range(0.1..5.0), r.random_range(-1.0..1.0));
        let disparity = case % 2 == 1;
        let raw: Vec<f64> = gt
            .iter()
            .map(|g| if disparity { a / g + b } else { a * g + b })
            .collect();
        let gt_map = depth(h, w, gt);
        let valid = BinaryMask::from_fn(h, w, |_, _| r.random_bool(0.9));
        let mask = blob_mask(&mut r, h, w);
        let cfg = EvalConfig {
            pred_space: if disparity {
                PredSpace::Disparity
            } else {
                PredSpace::Depth
            },
            ..EvalConfig::default()
        };
        let res = evaluate_triplet(&depth(h, w, raw), &gt_map, &mask, &valid, &cfg).map_err(|e| e.to_string())?;
        for region in Region::ALL {
            let m = res.regions.get(region);
            if m.n_pixels == 0 {
                continue;
            }
            regions_checked += 1;
            ensure!(m.delta1 == Some(1.0), "case {case} {region:?}: δ1 {:?}", m.delta1);
            let ar = m.absrel.unwrap_or(f64::NAN);
            ensure!(ar.abs() <= 1e-12, "case {case} {region:?}: AbsRel {ar:e}");
        }
    }
    Ok(format!(
        "100 triplets match the loop at 1e-12; affine invariance in {regions_checked} regions"
    ))
}

// ---------------------------------------------------------------- 4

fn sorted_quantile(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    for case in 0..1000 {
        let n = r.random_range(1..200);
        let mut v: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        if r.random_bool(0.2) {
            // Ties.
            v.iter_mut().for_each(|x| *x = (*x * 4.0).round() / 4.0);
        }
        let s = aggregate(&v, StatMode::MedianQuartiles);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = v.iter().sum::<f64>() / n as f64;
        for (name, got, want) in [
            ("median", s.median, sorted_quantile(&v, 0.5)),
            ("q25", s.q25, sorted_quantile(&v, 0.25)),
            ("q75", s.q75, sorted_quantile(&v, 0.75)),
            ("mean", s.mean, mean),
        ] {
            let got = got.unwrap_or(f64::NAN);
            ensure!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "case {case}: {name} {got} vs {want}"
            );
        }
        ensure!(s.count == n, "case {case}: count");
    }

    // Quartiles at positions 1, 2, 3 of five sorted values.
    let stats = aggregate(&[1.0, 0.96, 0.996, 0.96, 1.0], StatMode::MedianQuartiles);
    let mut metrics = BTreeMap::new();
    metrics.insert(Metric::Delta1, stats);
    metrics.insert(Metric::Absrel, aggregate(&[0.0123], StatMode::MedianQuartiles));
    let regions: BTreeMap<Region, BTreeMap<Metric, AggregateStats>> =
        Region::ALL.into_iter().map(|reg| (reg, metrics.clone())).collect();
    let mut table = StatsTable::new();
    table
        .entry("fixture".into())
        .or_default()
        .insert("method/box".into(), regions);
    let md = render_report(&table, ReportFormat::Markdown).map_err(|e| e.to_string())?;
    let row = md.lines().find(|l| l.contains("fixture")).ok_or("no data row")?;
    ensure!(
        row.matches("| 0.996 (0.960, 1.000) |").count() == 3,
        "row rendered as `{row}`"
    );
    ensure!(row.matches("| 0.012 ").count() == 3, "AbsRel rendered as `{row}`");
    Ok("1000 lists match the sort oracle; cell `0.996 (0.960, 1.000)`".into())
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let mut summary = Vec::new();
    for v in Variant::ALL {
        let cfg = MssaConfig::small().with_variant(v);
        let d = cfg.dims;
        ensure!(
            d.n_tokens() == 9 && d.c_g == 8 && d.c_p == 4 && cfg.n_experts == 4 && cfg.n_scales == 2,
            "unexpected check dims {d:?}"
        );
        let params = init_params(&cfg, 5).map_err(|e| e.to_string())?;
        let n_params: usize = params
            .records()
            .iter()
            .flat_map(|rec| rec.tensors())
            .map(|(_, _, t)| t.len())
            .sum();
        let rep = grad_check(&cfg, 5, 1e-5, 1e-4).map_err(|e| e.to_string())?;
        ensure!(
            rep.n_checked >= n_params,
            "{v}: only {} of {n_params} parameters checked",
            rep.n_checked
        );
        ensure!(
            rep.pass && rep.worst < 1e-4,
            "{v}: worst relative error {:.3e} in {:?}",
            rep.worst,
            rep.max_rel_err
        );
        summary.push(format!("{v} {:.1e}", rep.worst));
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("{} ({secs:.1}s)", summary.join(", ")))
}

// ---------------------------------------------------------------- 6

fn grids(cfg: &MssaConfig, r: &mut ChaCha8Rng) -> (Vec<TokenGrid>, TokenGrid) {
    let d = cfg.dims;
    let xg = (0..cfg.n_scales)
        .map(|_| TokenGrid::random(d.grid_h, d.grid_w, d.c_g, r))
        .collect();
    (xg, TokenGrid::random(d.grid_h, d.grid_w, d.c_p, r))
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let cfg = MssaConfig::new(5, 7, 12, 6);
    for trial in 0..10 {
        let params = init_params(&cfg, trial).map_err(|e| e.to_string())?;
        let (xg, xp) = grids(&cfg, &mut r);
        let (ys, trace) = mssa_forward(&xg, &xp, &params, &cfg).map_err(|e| e.to_string())?;
        for (s, t) in trace.scales.iter().enumerate() {
            let rw = t.router_weights().ok_or("full variant has no router weights")?;
            for row in rw.rows() {
                ensure!((row.sum() - 1.0).abs() <= 1e-12, "router row sums to {}", row.sum());
                ensure!(row.iter().all(|&p| p >= 0.0), "negative router weight");
            }
            let f = t.fused();
            for ((y, f), x) in ys[s].values.iter().zip(f.iter()).zip(xg[s].values.iter()) {
                ensure!(
                    *y >= f.min(*x) - 1e-12 && *y <= f.max(*x) + 1e-12,
                    "output {y} outside [{}, {}]",
                    f.min(*x),
                    f.max(*x)
                );
            }
        }

        let d = cfg.dims;
        let row: Vec<f64> = (0..d.c_p).map(|_| r.random_range(-1.0..1.0)).collect();
        let constant = TokenGrid::new(
            d.grid_h,
            d.grid_w,
            Array2::from_shape_fn((d.n_tokens(), d.c_p), |(_, c)| row[c]),
        )
        .map_err(|e| e.to_string())?;
        let shuffled = cfg.clone().with_variant(Variant::ShuffledTokens);
        let (a, _) = mssa_forward(&xg, &constant, &params, &cfg).map_err(|e| e.to_string())?;
        let (b, _) = mssa_forward(&xg, &constant, &params, &shuffled).map_err(|e| e.to_string())?;
        ensure!(a == b, "shuffle changed the output for constant prompt tokens");
        let (c, _) = mssa_forward(&xg, &xp, &params, &shuffled).map_err(|e| e.to_string())?;
        let diff = ys
            .iter()
            .zip(&c)
            .flat_map(|(u, v)| u.values.iter().zip(v.values.iter()).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        ensure!(diff > 0.0, "shuffle had no effect on distinct prompt tokens");

        let shared_cfg = cfg.clone().with_variant(Variant::SharedScale);
        let shared = init_params(&shared_cfg, trial).map_err(|e| e.to_string())?;
        let same = vec![xg[0].clone(); cfg.n_scales];
        let (sy, _) = mssa_forward(&same, &xp, &shared, &shared_cfg).map_err(|e| e.to_string())?;
        ensure!(sy.windows(2).all(|p| p[0] == p[1]), "shared scales disagree");
    }

    // 1008 px input with 14 px patches; C_g = C_p = C_h = 256.
    let big = MssaConfig::new(1008 / 14, 1008 / 14, 256, 256);
    ensure!(big.dims.n_tokens() == 5184 && big.n_experts == 4, "perf dims");
    let params = init_params(&big, 0).map_err(|e| e.to_string())?;
    let (xg, xp) = grids(&big, &mut r);
    let mut slowest = Duration::ZERO;
    for (s, x) in xg.iter().enumerate() {
        let t = Instant::now();
        mssa_forward_scale(x, &xp, params.scale(s), &big).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
    }
    let secs = slowest.as_secs_f64();
    ensure!(secs < 5.0, "slowest scale took {secs:.2}s");
    Ok(format!("structure holds on 10 trials; N=5184 forward {secs:.2}s/scale"))
}

// ---------------------------------------------------------------- 7

struct LossFixture {
    gt: DepthMap,
    mask: BinaryMask,
    valid: BinaryMask,
    pred: Vec<f64>,
    probs: Vec<f64>,
}

fn loss_fixture(r: &mut ChaCha8Rng, n: usize) -> LossFixture {
    let c = n as f64 / 2.0;
    let gt: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            if r.random_bool(0.05) {
                f64::NAN
            } else {
                2.0 + 0.1 * x - 0.05 * y + 0.3 * (0.4 * x).sin() * (0.3 * y).cos()
            }
        })
        .collect();
    let mask = BinaryMask::from_fn(n, n, |x, y| {
        ((x as f64 - c) / 5.0).powi(2) + ((y as f64 - c + 1.0) / 4.0).powi(2) <= 1.0
    });
    let gt = depth(n, n, gt);
    let valid = compute_valid(&gt, fde_core::ValidityBounds::METRIC);
    let pred = (0..n * n)
        .map(|i| {
            let g = gt.values()[i];
            let base = if g.is_finite() { g } else { 2.0 };
            0.7 * base + 0.2 * base * base * 0.1 + r.random_range(-0.3..0.3)
        })
        .collect();
    let probs = (0..n * n).map(|_| r.random_range(0.03..0.97)).collect();
    LossFixture {
        gt,
        mask,
        valid,
        pred,
        probs,
    }
}

fn term_value(b: &fde_core::loss::LossBreakdown, term: &str) -> f64 {
    match term {
        "fg" => b.l_fg,
        "bd" => b.l_bd,
        "glb" => b.l_glb,
        "seg" => b.l_seg,
        _ => b.total,
    }
}

fn only(term: &str) -> LossTerms {
    LossTerms {
        fg: term == "fg" || term == "total",
        bd: term == "bd" || term == "total",
        glb: term == "glb" || term == "total",
        seg: term == "seg" || term == "total",
    }
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let n = 16;
    let h = 1e-6;
    let mut worst = BTreeMap::<String, f64>::new();
    for disparity_space in [false, true] {
        let fx = loss_fixture(&mut r, n);
        let base = LossConfig {
            radius: 3,
            disparity_space,
            ..LossConfig::default()
        };
        let fitted = total_objective(
            &depth(n, n, fx.pred.clone()),
            &fx.probs,
            &fx.gt,
            &fx.mask,
            &fx.valid,
            &base,
            None,
        )
        .map_err(|e| e.to_string())?;
        let alignment = Some(fitted.alignment);
        let b = fitted.breakdown;
        ensure!(b.n_fg > 0 && b.n_bd > 0, "fixture leaves a region empty");
        let sum = b.l_fg + b.l_bd + b.l_glb + b.l_seg;
        ensure!(
            (b.total - sum).abs() <= 1e-15 * sum.abs(),
            "total {} vs sum {sum}",
            b.total
        );

        for term in ["fg", "bd", "glb", "seg", "total"] {
            let cfg = LossConfig {
                terms: only(term),
                ..base
            };
            let eval = |pred: &[f64], probs: &[f64]| -> Result<f64, String> {
                total_objective(
                    &depth(n, n, pred.to_vec()),
                    probs,
                    &fx.gt,
                    &fx.mask,
                    &fx.valid,
                    &cfg,
                    alignment,
                )
                .map(|o| term_value(&o.breakdown, term))
                .map_err(|e| e.to_string())
            };
            let obj = total_objective(
                &depth(n, n, fx.pred.clone()),
                &fx.probs,
                &fx.gt,
                &fx.mask,
                &fx.valid,
                &cfg,
                alignment,
            )
            .map_err(|e| e.to_string())?;
            // Equal weights: the single-term objective is the term itself.
            ensure!(
                obj.breakdown.total == term_value(&b, term),
                "{term}: weighted differently in the total"
            );
            let mut w = 0.0f64;
            for i in 0..n * n {
                let (mut up, mut dn) = (fx.pred.clone(), fx.pred.clone());
                up[i] += h;
                dn[i] -= h;
                let num = (eval(&up, &fx.probs)? - eval(&dn, &fx.probs)?) / (2.0 * h);
                w = w.max(rel(obj.grad_depth[i], num));

                let (mut up, mut dn) = (fx.probs.clone(), fx.probs.clone());
                up[i] += h;
                dn[i] -= h;
                let num = (eval(&fx.pred, &up)? - eval(&fx.pred, &dn)?) / (2.0 * h);
                w = w.max(rel(obj.grad_mask[i], num));
            }
            let key = format!("{}{term}", if disparity_space { "disp." } else { "" });
            ensure!(w < 1e-4, "{key}: relative error {w:.3e}");
            worst.insert(key, w);
        }
    }

    let fx = loss_fixture(&mut r, n);
    let perfect: Vec<f64> = fx
        .gt
        .values()
        .iter()
        .map(|g| if g.is_finite() { 1.7 * g + 0.4 } else { 1.0 })
        .collect();
    let probs: Vec<f64> = fx.mask.bits().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let o = total_objective(
        &depth(n, n, perfect),
        &probs,
        &fx.gt,
        &fx.mask,
        &fx.valid,
        &LossConfig::default(),
        None,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        o.breakdown.total < 1e-4,
        "perfect prediction total {:e}",
        o.breakdown.total
    );
    let max = worst.values().copied().fold(0.0, f64::max);
    Ok(format!(
        "4 terms and total, depth and disparity: worst {max:.1e}; perfect total {:.1e}",
        o.breakdown.total
    ))
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

// ---------------------------------------------------------------- 8

const IMG_H: usize = 48;
const IMG_W: usize = 64;

/// Instances per image, by construction (48x64 = 3072 px; 1% is 30.72 px):
/// id 1 is 6x6 = 36 (kept), id 2 is 5x6 = 30 (dropped), id 3 is 31 px
/// (kept), id 4 is a single pixel (dropped), id 5 is 10x12 = 120 (kept).
/// Every tenth image holds only ids 2 and 4.
fn corpus_instances(index: usize) -> InstanceMap {
    let mut ids = vec![0u16; IMG_H * IMG_W];
    let mut paint = |id: u16, x0: usize, y0: usize, w: usize, h: usize| {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                ids[y * IMG_W + x] = id;
            }
        }
    };
    let small_only = index % 10 == 9;
    if !small_only {
        paint(1, 2, 2, 6, 6);
        paint(3, 20, 2, 6, 5);
        paint(3, 26, 2, 1, 1);
        paint(5, 40, 20, 10, 12);
    }
    paint(2, 2, 30, 5, 6);
    paint(4, 60, 45, 1, 1);
    InstanceMap::new(IMG_H, IMG_W, ids).expect("dims")
}

fn write_corpus(root: &Path, n_images: usize) -> Vec<SourceRecord> {
    let mut out = Vec::new();
    for i in 0..n_images {
        let seq = format!("seq{:02}", i / 5);
        for d in ["rgb", "depth", "inst"] {
            std::fs::create_dir_all(root.join(d).join(&seq)).unwrap();
        }
        let stem = format!("{seq}/frame{i:03}");
        let map = corpus_instances(i);
        let gt = DepthMap::from_fn(IMG_H, IMG_W, DepthUnit::Metric, |x, y| {
            let near = map.ids[y * IMG_W + x] != 0;
            1.5 + 0.01 * x as f64 + 0.02 * y as f64 + 0.05 * i as f64 - if near { 0.4 } else { 0.0 }
        });
        let (img, dep, ins) = (
            root.join(format!("rgb/{stem}.png")),
            root.join(format!("depth/{stem}.png")),
            root.join(format!("inst/{stem}.png")),
        );
        write_mask_png(&img, &BinaryMask::filled(IMG_H, IMG_W, false)).unwrap();
        write_depth_png16(&dep, &gt, 0.001).unwrap();
        write_instance_png(&ins, &map).unwrap();
        out.push(SourceRecord {
            source_id: stem,
            image_path: img,
            depth_path: dep,
            instance_map_path: ins,
            group_key: seq,
            class_names: Some([(1, "cup".to_string()), (5, "box".to_string())].into()),
            pseudo_mask: false,
        });
    }
    out
}

fn corpus_config(root: &Path) -> BuildConfig {
    BuildConfig {
        min_area_frac: 0.01,
        val_ratio: 0.3,
        seed: 11,
        base_dir: Some(root.to_path_buf()),
        ..BuildConfig::new("synth")
    }
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sources = write_corpus(tmp.path(), 50);
    let cfg = corpus_config(tmp.path());
    let mut bytes = Vec::new();
    for jobs in [1, 1, 4, 0] {
        let out = build_manifest(&sources, &cfg, jobs).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_manifest(&mut buf, &out.header, &out.entries).map_err(|e| e.to_string())?;
        buf.extend(serde_json::to_vec(&out.report).map_err(|e| e.to_string())?);
        bytes.push((jobs, buf, out));
    }
    for (jobs, buf, _) in &bytes[1..] {
        ensure!(*buf == bytes[0].1, "output with jobs={jobs} differs from the first run");
    }
    let out = &bytes[0].2;

    let mut group_split: BTreeMap<&str, Split> = BTreeMap::new();
    for e in &out.entries {
        if let Some(prev) = group_split.insert(&e.group_key, e.split) {
            ensure!(prev == e.split, "group {} spans both splits", e.group_key);
        }
    }
    let rep = &out.report;
    ensure!(
        rep.sources == 50 && rep.images == 45,
        "images {} of {}",
        rep.images,
        rep.sources
    );
    ensure!(
        rep.triplets == 135 && out.entries.len() == 135,
        "triplets {}",
        rep.triplets
    );
    ensure!(rep.rejected_masks == 100, "rejected {}", rep.rejected_masks);
    ensure!(rep.skipped.len() == 5, "skipped {}", rep.skipped.len());
    for e in &out.entries {
        ensure!(matches!(e.instance_id, Some(1 | 3 | 5)), "{} kept", e.triplet_id);
    }
    Ok(format!(
        "4 builds byte-identical; {} groups, none split; 135 kept / 100 rejected",
        group_split.len()
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sources = write_corpus(tmp.path(), 30);
    let cfg = corpus_config(tmp.path());
    let built = build_manifest(&sources, &cfg, 0).map_err(|e| e.to_string())?;
    let mut r = rng(9);
    let mut preds: BTreeMap<String, DepthMap> = BTreeMap::new();
    let mut samples: BTreeMap<Region, Vec<f64>> = BTreeMap::new();
    for e in &built.entries {
        let gt_path = fde_core::bench::ManifestEntry::resolve(tmp.path(), &e.depth_path);
        let gt = decode_depth(&gt_path, DepthFormat::Png16, e.depth_scale).map_err(|e| e.to_string())?;
        let mask_path = fde_core::bench::ManifestEntry::resolve(tmp.path(), &e.mask_path);
        let mask = decode_mask(&mask_path, e.instance_id).map_err(|e| e.to_string())?;
        let image = e
            .triplet_id
            .rsplit_once('#')
            .map(|(img, _)| img.to_string())
            .unwrap_or_default();
        let inst = fde_core::io::decode_instance_map(&mask_path).map_err(|e| e.to_string())?;
        // One prediction per image: 1% noise on background, 15% on objects,
        // then an arbitrary affine map the evaluator has to undo.
        let pred = preds
            .entry(image)
            .or_insert_with(|| {
                let v = gt
                    .values()
                    .iter()
                    .zip(&inst.ids)
                    .map(|(g, &id)| {
                        let s = if id != 0 { 0.15 } else { 0.01 };
                        0.5 * g * (1.0 + r.random_range(-s..s)) + 0.2
                    })
                    .collect();
                DepthMap::new(IMG_H, IMG_W, v, DepthUnit::Relative).expect("dims")
            })
            .clone();
        let valid = compute_valid(&gt, e.bounds().map_err(|e| e.to_string())?);
        let m = evaluate_triplet(&pred, &gt, &mask, &valid, &EvalConfig::default()).map_err(|e| e.to_string())?;
        for region in Region::ALL {
            if let Some(a) = m.regions.get(region).absrel {
                samples.entry(region).or_default().push(a);
            }
        }
    }
    let stats: BTreeMap<Region, AggregateStats> = samples
        .iter()
        .map(|(&reg, v)| (reg, aggregate(v, StatMode::MedianQuartiles)))
        .collect();
    let fg = stats[&Region::Foreground].median.unwrap_or(f64::NAN);
    let glb = stats[&Region::Global].median.unwrap_or(f64::NAN);
    let regions = stats
        .iter()
        .map(|(&reg, s)| (reg, [(Metric::Absrel, *s)].into_iter().collect::<BTreeMap<_, _>>()))
        .collect();
    let mut table = StatsTable::new();
    table
        .entry("synth".into())
        .or_default()
        .insert("noisy/box/text".into(), regions);
    let md = render_report(&table, ReportFormat::Markdown).map_err(|e| e.to_string())?;
    ensure!(md.contains("synth"), "report lacks the dataset row");
    ensure!(fg > glb, "foreground AbsRel {fg:.4} not above global {glb:.4}");
    Ok(format!(
        "{} triplets: foreground AbsRel {fg:.4} > global {glb:.4}",
        built.entries.len()
    ))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("morphology oracle", criterion_1),
        ("alignment oracle", criterion_2),
        ("metric oracle", criterion_3),
        ("aggregation and report", criterion_4),
        ("fusion gradient check", criterion_5),
        ("fusion structure and speed", criterion_6),
        ("loss gradient check", criterion_7),
        ("benchmark determinism", criterion_8),
        ("end-to-end protocol", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("{} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {label} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {label} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!(
        "acceptance: {failed} failed, {:.1}s total",
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
