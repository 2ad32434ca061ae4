//! Prompt–geometry fusion block.
//!
//! Per scale `s`, prompt tokens are projected into the geometry channel space,
//! concatenated token-wise with the geometry tokens, passed through a dense
//! softmax-routed mixture of two-layer perceptrons, and blended back into the
//! geometry tokens through a per-token sigmoid gate:
//!
//! ```text
//! Xt = P(Xp) Wp          Z = [Xg | Xt]
//! R  = softmax(Z Wr)     F = Σ_e R[:, e] ⊙ expert_e(Z)
//! G  = σ(F wg + bg)      Y = G ⊙ F + (1 − G) ⊙ Xg
//! ```
//!
//! Everything runs in f64 with hand-written reverse-mode derivatives; see
//! [`grad_check`] for the finite-difference verification.

mod check;
mod kernel;
mod snapshot;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use check::{grad_check, GradCheckReport};
pub use kernel::{
    mssa_backward, mssa_backward_scale, mssa_forward, mssa_forward_scale, MssaGrads, MssaTrace, ScaleGrads, ScaleTrace,
};
pub use snapshot::{load_params, save_params, SnapshotManifest, TensorRecord};

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.02;

/// `N × C` token matrix laid out on a `grid_h × grid_w` patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub values: Array2<f64>,
}

impl TokenGrid {
    pub fn new(grid_h: usize, grid_w: usize, values: Array2<f64>) -> Result<Self> {
        if grid_h * grid_w != values.nrows() {
            return Err(Error::invalid(format!(
                "token grid {grid_h}x{grid_w} does not match {} rows",
                values.nrows()
            )));
        }
        Ok(Self { grid_h, grid_w, values })
    }

    pub fn n_tokens(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    /// i.i.d. standard normal entries.
    pub fn random(grid_h: usize, grid_w: usize, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let values = Array2::from_shape_simple_fn((grid_h * grid_w, channels), || normal.sample(rng));
        Self { grid_h, grid_w, values }
    }
}

/// Architectural ablations of the fusion block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Prompt token rows are permuted before projection.
    ShuffledTokens,
    /// One parameter record serves every scale.
    SharedScale,
    /// The router is bypassed and a single expert applied.
    SingleMlp,
    /// `Y = F`.
    NoGate,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::ShuffledTokens,
        Variant::SharedScale,
        Variant::SingleMlp,
        Variant::NoGate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::ShuffledTokens => "shuffled_tokens",
            Self::SharedScale => "shared_scale",
            Self::SingleMlp => "single_mlp",
            Self::NoGate => "no_gate",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MssaDims {
    pub grid_h: usize,
    pub grid_w: usize,
    pub c_g: usize,
    pub c_p: usize,
    pub c_h: usize,
}

impl MssaDims {
    pub fn n_tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MssaConfig {
    pub n_scales: usize,
    pub n_experts: usize,
    pub variant: Variant,
    pub shuffle_seed: u64,
    pub gate_bias: f64,
    pub dims: MssaDims,
}

impl MssaConfig {
    /// Four scales, four experts, hidden width equal to `c_g`.
    pub fn new(grid_h: usize, grid_w: usize, c_g: usize, c_p: usize) -> Self {
        Self {
            n_scales: 4,
            n_experts: 4,
            variant: Variant::Full,
            shuffle_seed: 0,
            gate_bias: 0.0,
            dims: MssaDims {
                grid_h,
                grid_w,
                c_g,
                c_p,
                c_h: c_g,
            },
        }
    }

    /// Small dimensions for finite-difference checks: 3×3 tokens,
    /// `C_g = C_h = 8`, `C_p = 4`, four experts, two scales.
    pub fn small() -> Self {
        Self {
            n_scales: 2,
            ..Self::new(3, 3, 8, 4)
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Experts actually allocated per scale.
    pub fn experts_allocated(&self) -> usize {
        match self.variant {
            Variant::SingleMlp => 1,
            _ => self.n_experts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if self.n_scales == 0 || self.n_experts == 0 {
            return Err(Error::invalid("n_scales and n_experts must be positive"));
        }
        if d.n_tokens() == 0 || d.c_g == 0 || d.c_p == 0 || d.c_h == 0 {
            return Err(Error::invalid(format!("all dims must be positive, got {d:?}")));
        }
        if !self.gate_bias.is_finite() {
            return Err(Error::invalid("gate_bias must be finite"));
        }
        Ok(())
    }

    /// Row permutation applied to prompt tokens, or `None` when the variant
    /// keeps tokens aligned. Never the identity for `N ≥ 2`.
    pub fn permutation(&self) -> Option<Vec<usize>> {
        if self.variant != Variant::ShuffledTokens {
            return None;
        }
        let n = self.dims.n_tokens();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(self.shuffle_seed));
        if n >= 2 && perm.iter().enumerate().all(|(i, &p)| i == p) {
            perm.swap(0, 1);
        }
        Some(perm)
    }
}

/// One two-layer perceptron expert, `2C_g → C_h → C_g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Expert {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Expert {
    fn zeros(c_g: usize, c_h: usize) -> Self {
        Self {
            w1: Array2::zeros((2 * c_g, c_h)),
            b1: Array1::zeros(c_h),
            w2: Array2::zeros((c_h, c_g)),
            b2: Array1::zeros(c_g),
        }
    }
}

/// Weights of one scale. Gradients reuse this type.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleParams {
    /// `C_p × C_g`
    pub w_proj: Array2<f64>,
    /// `2C_g × E`
    pub router_w: Array2<f64>,
    pub experts: Vec<Expert>,
    /// `C_g`
    pub w_gate: Array1<f64>,
    pub gate_bias: f64,
}

impl ScaleParams {
    pub fn zeros(dims: &MssaDims, n_experts: usize) -> Self {
        Self {
            w_proj: Array2::zeros((dims.c_p, dims.c_g)),
            router_w: Array2::zeros((2 * dims.c_g, n_experts)),
            experts: (0..n_experts).map(|_| Expert::zeros(dims.c_g, dims.c_h)).collect(),
            w_gate: Array1::zeros(dims.c_g),
            gate_bias: 0.0,
        }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    /// Every tensor as a named flat slice, in a fixed order. The group name
    /// drops the expert index.
    pub fn tensors(&self) -> Vec<(String, &'static str, &[f64])> {
        let mut out: Vec<(String, &'static str, &[f64])> = vec![
            ("w_proj".into(), "w_proj", self.w_proj.as_slice().unwrap()),
            ("router_w".into(), "router_w", self.router_w.as_slice().unwrap()),
        ];
        for (e, ex) in self.experts.iter().enumerate() {
            out.push((format!("expert{e}.w1"), "expert.w1", ex.w1.as_slice().unwrap()));
            out.push((format!("expert{e}.b1"), "expert.b1", ex.b1.as_slice().unwrap()));
            out.push((format!("expert{e}.w2"), "expert.w2", ex.w2.as_slice().unwrap()));
            out.push((format!("expert{e}.b2"), "expert.b2", ex.b2.as_slice().unwrap()));
        }
        out.push(("w_gate".into(), "w_gate", self.w_gate.as_slice().unwrap()));
        out.push(("gate_bias".into(), "gate_bias", std::slice::from_ref(&self.gate_bias)));
        out
    }

    /// Mutable counterpart of [`ScaleParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.w_proj.as_slice_mut().unwrap(),
            self.router_w.as_slice_mut().unwrap(),
        ];
        for ex in &mut self.experts {
            out.push(ex.w1.as_slice_mut().unwrap());
            out.push(ex.b1.as_slice_mut().unwrap());
            out.push(ex.w2.as_slice_mut().unwrap());
            out.push(ex.b2.as_slice_mut().unwrap());
        }
        out.push(self.w_gate.as_slice_mut().unwrap());
        out.push(std::slice::from_mut(&mut self.gate_bias));
        out
    }

    fn add_assign(&mut self, other: &ScaleParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.2) {
                *d += s;
            }
        }
    }
}

/// Parameters for all scales. Under `shared`, one record backs every scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MssaParams {
    records: Vec<ScaleParams>,
    n_scales: usize,
}

impl MssaParams {
    pub fn independent(records: Vec<ScaleParams>) -> Self {
        let n_scales = records.len();
        Self { records, n_scales }
    }

    pub fn shared(record: ScaleParams, n_scales: usize) -> Self {
        Self {
            records: vec![record],
            n_scales,
        }
    }

    pub fn is_shared(&self) -> bool {
        self.records.len() == 1 && self.n_scales > 1
    }

    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    pub fn scale(&self, s: usize) -> &ScaleParams {
        &self.records[if self.is_shared() { 0 } else { s }]
    }

    /// Distinct parameter records (one when shared).
    pub fn records(&self) -> &[ScaleParams] {
        &self.records
    }

    pub fn records_mut(&mut self) -> &mut [ScaleParams] {
        &mut self.records
    }

    /// Record index backing scale `s`.
    pub fn record_of(&self, s: usize) -> usize {
        if self.is_shared() {
            0
        } else {
            s
        }
    }
}

/// Draw all weight matrices i.i.d. from `N(0, 0.02²)`; biases start at zero
/// and the gate bias at `config.gate_bias`.
pub fn init_params(config: &MssaConfig, seed: u64) -> Result<MssaParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let mut draw = |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng));
    let d = config.dims;
    let e = config.experts_allocated();
    let mut make = || ScaleParams {
        w_proj: draw((d.c_p, d.c_g)),
        router_w: draw((2 * d.c_g, e)),
        experts: (0..e)
            .map(|_| Expert {
                w1: draw((2 * d.c_g, d.c_h)),
                b1: Array1::zeros(d.c_h),
                w2: draw((d.c_h, d.c_g)),
                b2: Array1::zeros(d.c_g),
            })
            .collect(),
        w_gate: draw((d.c_g, 1)).into_shape_with_order(d.c_g).expect("column"),
        gate_bias: config.gate_bias,
    };
    Ok(if config.variant == Variant::SharedScale {
        MssaParams::shared(make(), config.n_scales)
    } else {
        MssaParams::independent((0..config.n_scales).map(|_| make()).collect())
    })
}
