use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

use super::{MssaConfig, MssaParams, ScaleParams, TokenGrid, Variant};
use crate::error::{Error, Result};
use crate::numeric::{normal_cdf, normal_pdf, sigmoid};

fn act(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn act_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn permute_rows(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    x.select(Axis(0), perm)
}

fn unpermute_rows(dx: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(dx.raw_dim());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).assign(&dx.row(i));
    }
    out
}

/// Intermediates of one forward pass, consumed by [`mssa_backward_scale`].
#[derive(Clone, Debug)]
pub struct ScaleTrace {
    variant: Variant,
    perm: Option<Vec<usize>>,
    x_g: Array2<f64>,
    x_p_perm: Array2<f64>,
    z: Array2<f64>,
    /// `N × E`; absent under `single_mlp`.
    router: Option<Array2<f64>>,
    hidden_pre: Vec<Array2<f64>>,
    hidden: Vec<Array2<f64>>,
    expert_out: Vec<Array2<f64>>,
    fused: Array2<f64>,
    /// Absent under `no_gate`.
    gate: Option<Array1<f64>>,
}

impl ScaleTrace {
    pub fn router_weights(&self) -> Option<&Array2<f64>> {
        self.router.as_ref()
    }

    pub fn gate(&self) -> Option<&Array1<f64>> {
        self.gate.as_ref()
    }

    /// MoE output `F`.
    pub fn fused(&self) -> &Array2<f64> {
        &self.fused
    }
}

fn check_inputs(x_g: &TokenGrid, x_p: &TokenGrid, params: &ScaleParams) -> Result<()> {
    let (c_p, c_g) = params.w_proj.dim();
    if x_g.n_tokens() != x_p.n_tokens() {
        return Err(Error::invalid(format!(
            "geometry has {} tokens, prompt has {}",
            x_g.n_tokens(),
            x_p.n_tokens()
        )));
    }
    if x_g.channels() != c_g || x_p.channels() != c_p {
        return Err(Error::invalid(format!(
            "channels ({}, {}) do not match projection {c_p}x{c_g}",
            x_g.channels(),
            x_p.channels()
        )));
    }
    if params.router_w.nrows() != 2 * c_g || params.experts.is_empty() {
        return Err(Error::invalid("router or expert shapes inconsistent"));
    }
    Ok(())
}

fn forward_with_perm(
    x_g: &TokenGrid,
    x_p: &TokenGrid,
    params: &ScaleParams,
    variant: Variant,
    perm: Option<&[usize]>,
) -> Result<(TokenGrid, ScaleTrace)> {
    check_inputs(x_g, x_p, params)?;
    let x_p_perm = match perm {
        Some(p) => permute_rows(&x_p.values, p),
        None => x_p.values.clone(),
    };
    let projected = x_p_perm.dot(&params.w_proj);
    let z = concatenate(Axis(1), &[x_g.values.view(), projected.view()]).expect("row counts checked");

    let n_active = if variant == Variant::SingleMlp {
        1
    } else {
        params.n_experts()
    };
    let mut hidden_pre = Vec::with_capacity(n_active);
    let mut hidden = Vec::with_capacity(n_active);
    let mut expert_out = Vec::with_capacity(n_active);
    for ex in &params.experts[..n_active] {
        let h = z.dot(&ex.w1) + &ex.b1;
        let a = h.mapv(act);
        let o = a.dot(&ex.w2) + &ex.b2;
        hidden_pre.push(h);
        hidden.push(a);
        expert_out.push(o);
    }

    let (router, fused) = if variant == Variant::SingleMlp {
        (None, expert_out[0].clone())
    } else {
        let r = softmax_rows(&z.dot(&params.router_w));
        let mut f = Array2::zeros(x_g.values.raw_dim());
        for (e, o) in expert_out.iter().enumerate() {
            let w = r.column(e).insert_axis(Axis(1));
            f += &(o * &w);
        }
        (Some(r), f)
    };

    let (y, gate) = if variant == Variant::NoGate {
        (fused.clone(), None)
    } else {
        let g = fused.dot(&params.w_gate).mapv(|v| sigmoid(v + params.gate_bias));
        let mut y = Array2::zeros(fused.raw_dim());
        Zip::from(y.rows_mut())
            .and(fused.rows())
            .and(x_g.values.rows())
            .and(&g)
            .for_each(|mut yr, fr, xr, &gi| {
                Zip::from(&mut yr)
                    .and(&fr)
                    .and(&xr)
                    .for_each(|y, &f, &x| *y = gi * f + (1.0 - gi) * x);
            });
        (y, Some(g))
    };

    let trace = ScaleTrace {
        variant,
        perm: perm.map(<[usize]>::to_vec),
        x_g: x_g.values.clone(),
        x_p_perm,
        z,
        router,
        hidden_pre,
        hidden,
        expert_out,
        fused,
        gate,
    };
    Ok((TokenGrid::new(x_g.grid_h, x_g.grid_w, y)?, trace))
}

/// Forward pass of a single scale under `config.variant`.
pub fn mssa_forward_scale(
    x_g: &TokenGrid,
    x_p: &TokenGrid,
    params: &ScaleParams,
    config: &MssaConfig,
) -> Result<(TokenGrid, ScaleTrace)> {
    let perm = config.permutation();
    forward_with_perm(x_g, x_p, params, config.variant, perm.as_deref())
}

#[derive(Clone, Debug)]
pub struct MssaTrace {
    pub scales: Vec<ScaleTrace>,
}

/// Apply the block independently to each geometry scale.
pub fn mssa_forward(
    x_g_scales: &[TokenGrid],
    x_p: &TokenGrid,
    params: &MssaParams,
    config: &MssaConfig,
) -> Result<(Vec<TokenGrid>, MssaTrace)> {
    if x_g_scales.len() != config.n_scales || params.n_scales() != config.n_scales {
        return Err(Error::invalid(format!(
            "expected {} scales, got {} inputs and {} parameter scales",
            config.n_scales,
            x_g_scales.len(),
            params.n_scales()
        )));
    }
    let perm = config.permutation();
    let mut ys = Vec::with_capacity(config.n_scales);
    let mut traces = Vec::with_capacity(config.n_scales);
    for (s, x_g) in x_g_scales.iter().enumerate() {
        let (y, t) = forward_with_perm(x_g, x_p, params.scale(s), config.variant, perm.as_deref())?;
        ys.push(y);
        traces.push(t);
    }
    Ok((ys, MssaTrace { scales: traces }))
}

/// Gradients of one scale.
#[derive(Clone, Debug)]
pub struct ScaleGrads {
    pub params: ScaleParams,
    pub x_g: Array2<f64>,
    pub x_p: Array2<f64>,
}

/// Reverse-mode pass for one scale given `dL/dY`.
pub fn mssa_backward_scale(trace: &ScaleTrace, params: &ScaleParams, upstream: ArrayView2<f64>) -> Result<ScaleGrads> {
    if upstream.dim() != trace.x_g.dim() {
        return Err(Error::invalid(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.dim(),
            trace.x_g.dim()
        )));
    }
    let c_g = trace.x_g.ncols();
    let mut grads = ScaleParams {
        w_proj: Array2::zeros(params.w_proj.raw_dim()),
        router_w: Array2::zeros(params.router_w.raw_dim()),
        experts: params
            .experts
            .iter()
            .map(|ex| super::Expert {
                w1: Array2::zeros(ex.w1.raw_dim()),
                b1: Array1::zeros(ex.b1.raw_dim()),
                w2: Array2::zeros(ex.w2.raw_dim()),
                b2: Array1::zeros(ex.b2.raw_dim()),
            })
            .collect(),
        w_gate: Array1::zeros(params.w_gate.raw_dim()),
        gate_bias: 0.0,
    };

    // Gate blend.
    let (d_fused, mut d_xg) = match &trace.gate {
        None => (upstream.to_owned(), Array2::zeros(trace.x_g.raw_dim())),
        Some(g) => {
            let gcol = g.view().insert_axis(Axis(1));
            let mut d_fused = &upstream * &gcol;
            let d_xg = &upstream * &gcol.mapv(|v| 1.0 - v);
            let d_gate = (&upstream * &(&trace.fused - &trace.x_g)).sum_axis(Axis(1));
            let d_logit = &d_gate * &g.mapv(|v| v * (1.0 - v));
            grads.w_gate = trace.fused.t().dot(&d_logit);
            grads.gate_bias = d_logit.sum();
            d_fused += &d_logit
                .view()
                .insert_axis(Axis(1))
                .dot(&params.w_gate.view().insert_axis(Axis(0)));
            (d_fused, d_xg)
        }
    };

    // Mixture and router.
    let mut d_z = Array2::zeros(trace.z.raw_dim());
    let d_outs: Vec<Array2<f64>> = match &trace.router {
        None => vec![d_fused.clone()],
        Some(r) => {
            let n_e = r.ncols();
            let mut d_r = Array2::zeros(r.raw_dim());
            let mut d_outs = Vec::with_capacity(n_e);
            for (e, o) in trace.expert_out.iter().enumerate() {
                d_r.column_mut(e).assign(&(&d_fused * o).sum_axis(Axis(1)));
                d_outs.push(&d_fused * &r.column(e).insert_axis(Axis(1)));
            }
            let dot = (&d_r * r).sum_axis(Axis(1)).insert_axis(Axis(1));
            let d_logits = r * &(&d_r - &dot);
            grads.router_w = trace.z.t().dot(&d_logits);
            d_z = d_z + d_logits.dot(&params.router_w.t());
            d_outs
        }
    };

    for (e, d_o) in d_outs.iter().enumerate() {
        let ex = &params.experts[e];
        let g = &mut grads.experts[e];
        g.w2 = trace.hidden[e].t().dot(d_o);
        g.b2 = d_o.sum_axis(Axis(0));
        let mut d_h = d_o.dot(&ex.w2.t());
        Zip::from(&mut d_h)
            .and(&trace.hidden_pre[e])
            .for_each(|d, &h| *d *= act_grad(h));
        g.w1 = trace.z.t().dot(&d_h);
        g.b1 = d_h.sum_axis(Axis(0));
        d_z = d_z + d_h.dot(&ex.w1.t());
    }

    // Concatenation and projection.
    d_xg += &d_z.slice(s![.., ..c_g]);
    let d_proj = d_z.slice(s![.., c_g..]).to_owned();
    grads.w_proj = trace.x_p_perm.t().dot(&d_proj);
    let d_xp_perm = d_proj.dot(&params.w_proj.t());
    let d_xp = match &trace.perm {
        Some(p) => unpermute_rows(&d_xp_perm, p),
        None => d_xp_perm,
    };
    debug_assert!(trace.variant != Variant::NoGate || trace.gate.is_none());
    Ok(ScaleGrads {
        params: grads,
        x_g: d_xg,
        x_p: d_xp,
    })
}

/// Gradients for all scales. Shared parameters accumulate over scales;
/// the prompt gradient sums over scales.
#[derive(Clone, Debug)]
pub struct MssaGrads {
    pub params: MssaParams,
    pub x_g: Vec<Array2<f64>>,
    pub x_p: Array2<f64>,
}

pub fn mssa_backward(trace: &MssaTrace, params: &MssaParams, upstream: &[Array2<f64>]) -> Result<MssaGrads> {
    if upstream.len() != trace.scales.len() {
        return Err(Error::invalid(format!(
            "{} upstream gradients for {} scales",
            upstream.len(),
            trace.scales.len()
        )));
    }
    let mut records: Vec<Option<ScaleParams>> = vec![None; params.records().len()];
    let mut x_g = Vec::with_capacity(upstream.len());
    let mut x_p: Option<Array2<f64>> = None;
    for (s, (t, dy)) in trace.scales.iter().zip(upstream).enumerate() {
        let g = mssa_backward_scale(t, params.scale(s), dy.view())?;
        match &mut records[params.record_of(s)] {
            Some(acc) => acc.add_assign(&g.params),
            slot => *slot = Some(g.params),
        }
        x_p = Some(match x_p {
            Some(acc) => acc + &g.x_p,
            None => g.x_p,
        });
        x_g.push(g.x_g);
    }
    let records: Vec<ScaleParams> = records.into_iter().map(|r| r.expect("every record used")).collect();
    let params = if params.is_shared() {
        MssaParams::shared(records.into_iter().next().expect("one record"), params.n_scales())
    } else {
        MssaParams::independent(records)
    };
    Ok(MssaGrads {
        params,
        x_g,
        x_p: x_p.expect("at least one scale"),
    })
}
