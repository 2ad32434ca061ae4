use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{init_params, mssa_backward, mssa_forward, mssa_forward_scale, MssaConfig, MssaParams, TokenGrid, Variant};
use crate::error::Result;
use crate::numeric::sigmoid;

/// Input entries checked per input tensor; larger tensors are sampled.
const MAX_INPUT_SAMPLES: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub step: f64,
    pub tolerance: f64,
    pub n_checked: usize,
    /// Worst relative error per parameter group and per input.
    pub max_rel_err: BTreeMap<String, f64>,
    pub worst: f64,
    pub pass: bool,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

struct Probe<'a> {
    config: &'a MssaConfig,
    x_g: Vec<TokenGrid>,
    x_p: TokenGrid,
    upstream: Vec<Array2<f64>>,
}

impl Probe<'_> {
    /// `Σ u ⊙ (Y⁺ − Y⁻)` over `scales`.
    ///
    /// `Y` carries the O(1) geometry tokens through the blend, so subtracting
    /// two evaluated outputs loses digits that matter for tiny gradients.
    /// The difference is instead assembled from small quantities:
    /// `ΔY = ΔG (F⁺ − X⁺) + G⁻ ΔF + (1 − G⁻) ΔX`, with
    /// `ΔG = σ(s⁺)(1 − σ(s⁻))(1 − e^{s⁻ − s⁺})`.
    fn delta(
        &self,
        scales: &[usize],
        plus: (&MssaParams, &[TokenGrid], &TokenGrid),
        minus: (&MssaParams, &[TokenGrid], &TokenGrid),
    ) -> Result<f64> {
        let mut total = 0.0;
        for &s in scales {
            let (pp, pm) = (plus.0.scale(s), minus.0.scale(s));
            let (xp, xm) = (&plus.1[s].values, &minus.1[s].values);
            let (_, tp) = mssa_forward_scale(&plus.1[s], plus.2, pp, self.config)?;
            let (_, tm) = mssa_forward_scale(&minus.1[s], minus.2, pm, self.config)?;
            let (fp, fm) = (tp.fused(), tm.fused());
            let u = &self.upstream[s];
            if self.config.variant == Variant::NoGate {
                for ((a, b), w) in fp.iter().zip(fm).zip(u) {
                    total += w * (a - b);
                }
                continue;
            }
            let sp = fp.dot(&pp.w_gate) + pp.gate_bias;
            let sm = fm.dot(&pm.w_gate) + pm.gate_bias;
            for n in 0..fp.nrows() {
                let g_minus = sigmoid(sm[n]);
                let dg = sigmoid(sp[n]) * (1.0 - g_minus) * -(sm[n] - sp[n]).exp_m1();
                for c in 0..fp.ncols() {
                    let dy = dg * (fp[[n, c]] - xp[[n, c]])
                        + g_minus * (fp[[n, c]] - fm[[n, c]])
                        + (1.0 - g_minus) * (xp[[n, c]] - xm[[n, c]]);
                    total += u[[n, c]] * dy;
                }
            }
        }
        Ok(total)
    }
}

/// Compare the hand-written backward pass against central differences for
/// every parameter scalar and for (sampled) input entries. The scalar loss is
/// `Σ_s Σ u_s ⊙ Y_s` with fixed random `u_s`.
pub fn grad_check(config: &MssaConfig, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let params = init_params(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let d = config.dims;
    let x_g: Vec<TokenGrid> = (0..config.n_scales)
        .map(|_| TokenGrid::random(d.grid_h, d.grid_w, d.c_g, &mut rng))
        .collect();
    let x_p = TokenGrid::random(d.grid_h, d.grid_w, d.c_p, &mut rng);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let upstream: Vec<Array2<f64>> = (0..config.n_scales)
        .map(|_| Array2::from_shape_simple_fn((d.n_tokens(), d.c_g), || normal.sample(&mut rng)))
        .collect();

    let (_, trace) = mssa_forward(&x_g, &x_p, &params, config)?;
    let grads = mssa_backward(&trace, &params, &upstream)?;
    let probe = Probe {
        config,
        x_g,
        x_p,
        upstream,
    };

    let mut groups: BTreeMap<String, f64> = BTreeMap::new();
    let mut n_checked = 0;
    let mut record = |group: &str, err: f64| {
        let slot = groups.entry(group.to_string()).or_insert(0.0);
        *slot = slot.max(err);
    };

    for r in 0..params.records().len() {
        let scales: Vec<usize> = (0..config.n_scales).filter(|&s| params.record_of(s) == r).collect();
        let analytic = grads.params.records()[r].tensors();
        for (k, (_, group, a_vals)) in analytic.iter().enumerate() {
            for i in 0..a_vals.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.records_mut()[r].tensors_mut()[k][i] += step;
                minus.records_mut()[r].tensors_mut()[k][i] -= step;
                let fd = probe.delta(
                    &scales,
                    (&plus, &probe.x_g, &probe.x_p),
                    (&minus, &probe.x_g, &probe.x_p),
                )? / (2.0 * step);
                record(group, rel_err(a_vals[i], fd));
                n_checked += 1;
            }
        }
    }

    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if len <= MAX_INPUT_SAMPLES {
            (0..len).collect()
        } else {
            let mut idx = sample(rng, len, MAX_INPUT_SAMPLES).into_vec();
            idx.sort_unstable();
            idx
        }
    };

    for s in 0..config.n_scales {
        let len = probe.x_g[s].values.len();
        for i in pick(len, &mut rng) {
            let mut plus = probe.x_g.clone();
            let mut minus = probe.x_g.clone();
            plus[s].values.as_slice_mut().expect("contiguous")[i] += step;
            minus[s].values.as_slice_mut().expect("contiguous")[i] -= step;
            let fd = probe.delta(&[s], (&params, &plus, &probe.x_p), (&params, &minus, &probe.x_p))? / (2.0 * step);
            let a = grads.x_g[s].as_slice().expect("contiguous")[i];
            record("input.x_g", rel_err(a, fd));
            n_checked += 1;
        }
    }

    let all_scales: Vec<usize> = (0..config.n_scales).collect();
    for i in pick(probe.x_p.values.len(), &mut rng) {
        let mut plus = probe.x_p.clone();
        let mut minus = probe.x_p.clone();
        plus.values.as_slice_mut().expect("contiguous")[i] += step;
        minus.values.as_slice_mut().expect("contiguous")[i] -= step;
        let fd = probe.delta(&all_scales, (&params, &probe.x_g, &plus), (&params, &probe.x_g, &minus))? / (2.0 * step);
        let a = grads.x_p.as_slice().expect("contiguous")[i];
        record("input.x_p", rel_err(a, fd));
        n_checked += 1;
    }

    let worst = groups.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        variant: config.variant,
        step,
        tolerance,
        n_checked,
        max_rel_err: groups,
        worst,
        pass: worst < tolerance,
    })
}
