//! Parameter containers for the patch-attention classifier.
//!
//! Every container stores its tensors as flat `Vec<f64>` in a fixed
//! declaration order; the same order drives the optimizer state, gradient
//! buffers and the checkpoint layout.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{CONTEXT_PATCHES, PATCH_LEN};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::scene::PredicateKind;

/// Number of tokens fed to the encoder: the context patches plus subject,
/// reference and query views.
pub const TOKENS: usize = CONTEXT_PATCHES + 3;
/// Rows of the position table: one shared by all canonical views, then one
/// per context patch.
pub const POSITIONS: usize = 1 + CONTEXT_PATCHES;

const INIT_TRUNK: u64 = 0x7472_756e_6b;
const INIT_HEAD: u64 = 0x6865_6164;
const POS_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub d_model: usize,
    pub blocks: usize,
    pub ff_dim: usize,
    pub head_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_model: 64,
            blocks: 2,
            ff_dim: 256,
            head_hidden: 512,
        }
    }
}

impl ModelDims {
    pub fn with_width(d_model: usize) -> Self {
        ModelDims {
            d_model,
            ff_dim: 4 * d_model,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.blocks == 0 || self.ff_dim == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidArgument(format!("degenerate model dims {self:?}")));
        }
        Ok(())
    }
}

/// Parameter groups used when reporting or checking gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    PatchProj,
    PosTable,
    Attention,
    FeedForward,
    LayerNorm,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::PatchProj,
        ParamGroup::PosTable,
        ParamGroup::Attention,
        ParamGroup::FeedForward,
        ParamGroup::LayerNorm,
        ParamGroup::Head,
    ];
}

/// Affine map stored input-major: `y = x W + b`, `W` is `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            fan_in,
            fan_out,
            w: vec![0.0; fan_in * fan_out],
            b: vec![0.0; fan_out],
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut lin = Linear::zeros(fan_in, fan_out);
        for w in lin.w.iter_mut() {
            *w = rng.random_range(-bound..bound);
        }
        lin
    }

    /// `out[r] = x[r] W + b` for every row of `x` (`rows × fan_in`).
    /// Zero inputs are skipped, which matters for the mostly-black image
    /// patches.
    pub fn forward(&self, x: &[f64], rows: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), rows * self.fan_in);
        debug_assert_eq!(out.len(), rows * self.fan_out);
        let (n_in, n_out) = (self.fan_in, self.fan_out);
        for r in 0..rows {
            out[r * n_out..(r + 1) * n_out].copy_from_slice(&self.b);
        }
        // weight-row outer loop: each row of W is read once for all inputs
        for i in 0..n_in {
            let w = &self.w[i * n_out..(i + 1) * n_out];
            for r in 0..rows {
                let xi = x[r * n_in + i];
                if xi != 0.0 {
                    axpy(xi, w, &mut out[r * n_out..(r + 1) * n_out]);
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, when given, writes
    /// the input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear, dx: Option<&mut [f64]>) {
        let (n_in, n_out) = (self.fan_in, self.fan_out);
        for r in 0..rows {
            axpy(1.0, &dy[r * n_out..(r + 1) * n_out], &mut grad.b);
        }
        for i in 0..n_in {
            let gw = &mut grad.w[i * n_out..(i + 1) * n_out];
            for r in 0..rows {
                let xi = x[r * n_in + i];
                if xi != 0.0 {
                    axpy(xi, &dy[r * n_out..(r + 1) * n_out], gw);
                }
            }
        }
        if let Some(dx) = dx {
            for i in 0..n_in {
                let w = &self.w[i * n_out..(i + 1) * n_out];
                for r in 0..rows {
                    dx[r * n_in + i] = dot(w, &dy[r * n_out..(r + 1) * n_out]);
                }
            }
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 2] {
        [&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.w, &mut self.b]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(d: usize) -> Self {
        LayerNorm {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    fn zeros(d: usize) -> Self {
        LayerNorm {
            gamma: vec![0.0; d],
            beta: vec![0.0; d],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Everything shared across predicates.
#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub patch_proj: Linear,
    /// `POSITIONS × D`, row-major.
    pub pos_table: Vec<f64>,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
}

/// One predicate extractor: `3D → H → H → 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub seed: u64,
    pub trunk: Trunk,
    pub heads: BTreeMap<PredicateKind, Head>,
}

impl Trunk {
    pub fn init(dims: &ModelDims, seed: u64) -> Self {
        let d = dims.d_model;
        let mut rng = rng_from(derive_seed(seed, &[INIT_TRUNK]));
        let patch_proj = Linear::uniform(PATCH_LEN, d, &mut rng);
        let normal = Normal::new(0.0, POS_STD).expect("valid std");
        let pos_table = (0..POSITIONS * d).map(|_| normal.sample(&mut rng)).collect();
        let blocks = (0..dims.blocks)
            .map(|_| Block {
                ln1: LayerNorm::identity(d),
                wq: Linear::uniform(d, d, &mut rng),
                wk: Linear::uniform(d, d, &mut rng),
                wv: Linear::uniform(d, d, &mut rng),
                wo: Linear::uniform(d, d, &mut rng),
                ln2: LayerNorm::identity(d),
                ff1: Linear::uniform(d, dims.ff_dim, &mut rng),
                ff2: Linear::uniform(dims.ff_dim, d, &mut rng),
            })
            .collect();
        Trunk {
            patch_proj,
            pos_table,
            blocks,
            ln_final: LayerNorm::identity(d),
        }
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        let d = dims.d_model;
        Trunk {
            patch_proj: Linear::zeros(PATCH_LEN, d),
            pos_table: vec![0.0; POSITIONS * d],
            blocks: (0..dims.blocks)
                .map(|_| Block {
                    ln1: LayerNorm::zeros(d),
                    wq: Linear::zeros(d, d),
                    wk: Linear::zeros(d, d),
                    wv: Linear::zeros(d, d),
                    wo: Linear::zeros(d, d),
                    ln2: LayerNorm::zeros(d),
                    ff1: Linear::zeros(d, dims.ff_dim),
                    ff2: Linear::zeros(dims.ff_dim, d),
                })
                .collect(),
            ln_final: LayerNorm::zeros(d),
        }
    }

    /// Tensors in declaration order, tagged with their group.
    pub fn tensors(&self) -> Vec<(ParamGroup, &Vec<f64>)> {
        use ParamGroup::*;
        let mut out = vec![
            (PatchProj, &self.patch_proj.w),
            (PatchProj, &self.patch_proj.b),
            (PosTable, &self.pos_table),
        ];
        for b in &self.blocks {
            out.push((LayerNorm, &b.ln1.gamma));
            out.push((LayerNorm, &b.ln1.beta));
            for lin in [&b.wq, &b.wk, &b.wv, &b.wo] {
                out.extend(lin.tensors().map(|t| (Attention, t)));
            }
            out.push((LayerNorm, &b.ln2.gamma));
            out.push((LayerNorm, &b.ln2.beta));
            for lin in [&b.ff1, &b.ff2] {
                out.extend(lin.tensors().map(|t| (FeedForward, t)));
            }
        }
        out.push((LayerNorm, &self.ln_final.gamma));
        out.push((LayerNorm, &self.ln_final.beta));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        out.extend(self.patch_proj.tensors_mut());
        out.push(&mut self.pos_table);
        for b in &mut self.blocks {
            out.push(&mut b.ln1.gamma);
            out.push(&mut b.ln1.beta);
            for lin in [&mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo] {
                out.extend(lin.tensors_mut());
            }
            out.push(&mut b.ln2.gamma);
            out.push(&mut b.ln2.beta);
            for lin in [&mut b.ff1, &mut b.ff2] {
                out.extend(lin.tensors_mut());
            }
        }
        out.push(&mut self.ln_final.gamma);
        out.push(&mut self.ln_final.beta);
        out
    }
}

impl Head {
    pub fn init(dims: &ModelDims, seed: u64, kind: PredicateKind) -> Self {
        let mut rng = rng_from(derive_seed(seed, &[INIT_HEAD, kind.code() as u64]));
        let h = dims.head_hidden;
        Head {
            l1: Linear::uniform(3 * dims.d_model, h, &mut rng),
            l2: Linear::uniform(h, h, &mut rng),
            out: Linear::uniform(h, 1, &mut rng),
        }
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        let h = dims.head_hidden;
        Head {
            l1: Linear::zeros(3 * dims.d_model, h),
            l2: Linear::zeros(h, h),
            out: Linear::zeros(h, 1),
        }
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::with_capacity(6);
        for lin in [&self.l1, &self.l2, &self.out] {
            out.extend(lin.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(6);
        for lin in [&mut self.l1, &mut self.l2, &mut self.out] {
            out.extend(lin.tensors_mut());
        }
        out
    }
}

impl ModelParams {
    /// Fresh model with one head per requested predicate. A head's
    /// initialization depends only on the seed and its predicate.
    pub fn init(dims: ModelDims, kinds: &[PredicateKind], seed: u64) -> Result<Self> {
        dims.validate()?;
        if kinds.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one predicate head".into()));
        }
        Ok(ModelParams {
            dims,
            seed,
            trunk: Trunk::init(&dims, seed),
            heads: kinds.iter().map(|&k| (k, Head::init(&dims, seed, k))).collect(),
        })
    }

    pub fn head(&self, kind: PredicateKind) -> Result<&Head> {
        self.heads.get(&kind).ok_or(Error::ModelPredicateMissing(kind))
    }

    pub fn kinds(&self) -> Vec<PredicateKind> {
        self.heads.keys().copied().collect()
    }

    /// All tensors in checkpoint order: trunk, then heads by predicate code.
    pub fn tensors(&self) -> Vec<(ParamGroup, &Vec<f64>)> {
        let mut out = self.trunk.tensors();
        for head in self.heads.values() {
            out.extend(head.tensors().into_iter().map(|t| (ParamGroup::Head, t)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = self.trunk.tensors_mut();
        for head in self.heads.values_mut() {
            out.extend(head.tensors_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Inner product with eight independent accumulators so the loop
/// vectorizes; the summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
