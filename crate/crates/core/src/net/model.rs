//! Forward and reverse passes of the classifier.
//!
//! Tokens are `[context×9, subject, reference, query]`. The encoder is a
//! stack of pre-norm single-head attention blocks; the outputs at the three
//! view slots go through a final layer norm, are concatenated and handed to
//! the predicate's head.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::labeler::Sample;
use crate::raster::{CanonicalView, SceneImage, CONTEXT_PATCHES, IMAGE_LEN, PATCH_LEN, VIEW_BACKGROUND};
use crate::scene::PredicateKind;

use super::params::{axpy, dot, Block, Head, LayerNorm, Linear, ModelDims, ModelParams, Trunk, TOKENS};

const LN_EPS: f64 = 1e-5;
/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Index of the first canonical-view token.
pub const VIEW_SLOT: usize = CONTEXT_PATCHES;

/// Encoder input, `TOKENS × D` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokens {
    pub d: usize,
    pub data: Vec<f64>,
}

impl Tokens {
    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Stacks the nine context patches and the three views into one
/// `TOKENS × PATCH_LEN` input matrix. Views are shifted so their background
/// is zero like the image's; the projection bias absorbs the offset.
pub fn gather_patches(
    image: &SceneImage,
    goal_views: [&CanonicalView; 2],
    query_view: &CanonicalView,
) -> Result<Vec<f64>> {
    if image.grid.len() != IMAGE_LEN {
        return Err(Error::ShapeMismatch {
            expected: IMAGE_LEN,
            got: image.grid.len(),
        });
    }
    let mut out = Vec::with_capacity(TOKENS * PATCH_LEN);
    for p in 0..CONTEXT_PATCHES {
        out.extend(image.patch(p).into_iter().map(f64::from));
    }
    for view in [goal_views[0], goal_views[1], query_view] {
        if view.patch.len() != PATCH_LEN {
            return Err(Error::ShapeMismatch {
                expected: PATCH_LEN,
                got: view.patch.len(),
            });
        }
        out.extend(view.patch.iter().map(|&v| f64::from(v - VIEW_BACKGROUND)));
    }
    Ok(out)
}

/// Position-table row for token `i`.
fn position_row(i: usize) -> usize {
    if i < CONTEXT_PATCHES {
        i + 1
    } else {
        0
    }
}

fn embed_patches(patches: &[f64], trunk: &Trunk, d: usize) -> Vec<f64> {
    let mut x = vec![0.0; TOKENS * d];
    trunk.patch_proj.forward(patches, TOKENS, &mut x);
    for i in 0..TOKENS {
        let r = position_row(i);
        axpy(1.0, &trunk.pos_table[r * d..(r + 1) * d], &mut x[i * d..(i + 1) * d]);
    }
    x
}

pub fn embed_inputs(
    image: &SceneImage,
    goal_views: [&CanonicalView; 2],
    query_view: &CanonicalView,
    params: &ModelParams,
) -> Result<Tokens> {
    let patches = gather_patches(image, goal_views, query_view)?;
    let d = params.dims.d_model;
    Ok(Tokens {
        d,
        data: embed_patches(&patches, &params.trunk, d),
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// Negative weighted log-likelihood; `eta` scales the positive term only.
pub fn weighted_bce_loss(prob: f64, label: u8, eta: f64) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = f64::from(label);
    -(eta * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`weighted_bce_loss`] with respect to the logit. Zero
/// where the clamp is active, matching the flat clamped loss.
pub fn loss_grad_logit(prob: f64, label: u8, eta: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&prob) {
        return 0.0;
    }
    let y = f64::from(label);
    -eta * y * (1.0 - prob) + (1.0 - y) * prob
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn ln_forward(x: &[f64], rows: usize, ln: &LayerNorm, out: &mut [f64]) -> LnCache {
    let d = ln.gamma.len();
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for i in 0..d {
            let h = (xr[i] - mean) * is;
            xhat[r * d + i] = h;
            out[r * d + i] = ln.gamma[i] * h + ln.beta[i];
        }
    }
    LnCache { xhat, inv_std }
}

/// Adds the input gradient into `dx`.
fn ln_backward(cache: &LnCache, dy: &[f64], rows: usize, ln: &LayerNorm, grad: &mut LayerNorm, dx: &mut [f64]) {
    let d = ln.gamma.len();
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        for i in 0..d {
            grad.gamma[i] += g[i] * xh[i];
            grad.beta[i] += g[i];
            dxhat[i] = g[i] * ln.gamma[i];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dot(&dxhat, xh) / d as f64;
        for i in 0..d {
            dx[r * d + i] += cache.inv_std[r] * (dxhat[i] - m1 - xh[i] * m2);
        }
    }
}

struct BlockCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

fn block_forward(x: &mut [f64], b: &Block, dims: &ModelDims) -> BlockCache {
    let (t, d, f) = (TOKENS, dims.d_model, dims.ff_dim);
    let mut h1 = vec![0.0; t * d];
    let ln1 = ln_forward(x, t, &b.ln1, &mut h1);
    let mut q = vec![0.0; t * d];
    let mut k = vec![0.0; t * d];
    let mut v = vec![0.0; t * d];
    b.wq.forward(&h1, t, &mut q);
    b.wk.forward(&h1, t, &mut k);
    b.wv.forward(&h1, t, &mut v);
    let scale = 1.0 / (d as f64).sqrt();
    let mut attn = vec![0.0; t * t];
    for i in 0..t {
        let row = &mut attn[i * t..(i + 1) * t];
        for j in 0..t {
            row[j] = scale * dot(&q[i * d..(i + 1) * d], &k[j * d..(j + 1) * d]);
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for a in row.iter_mut() {
            *a = (*a - m).exp();
            s += *a;
        }
        for a in row.iter_mut() {
            *a /= s;
        }
    }
    let mut ctx = vec![0.0; t * d];
    for i in 0..t {
        for j in 0..t {
            let a = attn[i * t + j];
            axpy(a, &v[j * d..(j + 1) * d], &mut ctx[i * d..(i + 1) * d]);
        }
    }
    let mut a = vec![0.0; t * d];
    b.wo.forward(&ctx, t, &mut a);
    axpy(1.0, &a, x);

    let mut h2 = vec![0.0; t * d];
    let ln2 = ln_forward(x, t, &b.ln2, &mut h2);
    let mut u = vec![0.0; t * f];
    b.ff1.forward(&h2, t, &mut u);
    let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
    let mut out = vec![0.0; t * d];
    b.ff2.forward(&g, t, &mut out);
    axpy(1.0, &out, x);
    BlockCache {
        ln1,
        h1,
        q,
        k,
        v,
        attn,
        ctx,
        ln2,
        h2,
        u,
        g,
    }
}

/// Backpropagates `dx` (gradient at the block output) in place to the block
/// input.
fn block_backward(dx: &mut [f64], c: &BlockCache, b: &Block, gb: &mut Block, dims: &ModelDims) {
    let (t, d, f) = (TOKENS, dims.d_model, dims.ff_dim);
    // feed-forward branch
    let mut dg = vec![0.0; t * f];
    b.ff2.backward(&c.g, dx, t, &mut gb.ff2, Some(&mut dg));
    for (dgi, &ui) in dg.iter_mut().zip(&c.u) {
        *dgi *= gelu_grad(ui);
    }
    let mut dh2 = vec![0.0; t * d];
    b.ff1.backward(&c.h2, &dg, t, &mut gb.ff1, Some(&mut dh2));
    ln_backward(&c.ln2, &dh2, t, &b.ln2, &mut gb.ln2, dx);

    // attention branch
    let mut dctx = vec![0.0; t * d];
    b.wo.backward(&c.ctx, dx, t, &mut gb.wo, Some(&mut dctx));
    let scale = 1.0 / (d as f64).sqrt();
    let mut dv = vec![0.0; t * d];
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut ds = vec![0.0; t];
    for i in 0..t {
        let dci = &dctx[i * d..(i + 1) * d];
        let arow = &c.attn[i * t..(i + 1) * t];
        for j in 0..t {
            ds[j] = dot(dci, &c.v[j * d..(j + 1) * d]);
            axpy(arow[j], dci, &mut dv[j * d..(j + 1) * d]);
        }
        let weighted = dot(arow, &ds);
        for j in 0..t {
            let s = arow[j] * (ds[j] - weighted) * scale;
            if s != 0.0 {
                axpy(s, &c.k[j * d..(j + 1) * d], &mut dq[i * d..(i + 1) * d]);
                axpy(s, &c.q[i * d..(i + 1) * d], &mut dk[j * d..(j + 1) * d]);
            }
        }
    }
    let mut dh1 = vec![0.0; t * d];
    let mut tmp = vec![0.0; t * d];
    for (lin, glin, dy) in [(&b.wq, &mut gb.wq, &dq), (&b.wk, &mut gb.wk, &dk), (&b.wv, &mut gb.wv, &dv)] {
        lin.backward(&c.h1, dy, t, glin, Some(&mut tmp));
        axpy(1.0, &tmp, &mut dh1);
    }
    ln_backward(&c.ln1, &dh1, t, &b.ln1, &mut gb.ln1, dx);
}

struct HeadCache {
    u1: Vec<f64>,
    a1: Vec<f64>,
    u2: Vec<f64>,
    a2: Vec<f64>,
}

fn head_forward(z: &[f64], head: &Head) -> (f64, HeadCache) {
    let h = head.l1.fan_out;
    let mut u1 = vec![0.0; h];
    head.l1.forward(z, 1, &mut u1);
    let a1: Vec<f64> = u1.iter().map(|&v| gelu(v)).collect();
    let mut u2 = vec![0.0; h];
    head.l2.forward(&a1, 1, &mut u2);
    let a2: Vec<f64> = u2.iter().map(|&v| gelu(v)).collect();
    let mut logit = [0.0];
    head.out.forward(&a2, 1, &mut logit);
    (logit[0], HeadCache { u1, a1, u2, a2 })
}

fn head_backward(z: &[f64], c: &HeadCache, dlogit: f64, head: &Head, g: &mut Head) -> Vec<f64> {
    let h = head.l1.fan_out;
    let mut da2 = vec![0.0; h];
    head.out.backward(&c.a2, &[dlogit], 1, &mut g.out, Some(&mut da2));
    for (v, &u) in da2.iter_mut().zip(&c.u2) {
        *v *= gelu_grad(u);
    }
    let mut da1 = vec![0.0; h];
    head.l2.backward(&c.a1, &da2, 1, &mut g.l2, Some(&mut da1));
    for (v, &u) in da1.iter_mut().zip(&c.u1) {
        *v *= gelu_grad(u);
    }
    let mut dz = vec![0.0; z.len()];
    head.l1.backward(z, &da1, 1, &mut g.l1, Some(&mut dz));
    dz
}

/// Everything the reverse pass needs from one forward evaluation.
pub struct Trace {
    kind: PredicateKind,
    patches: Vec<f64>,
    blocks: Vec<BlockCache>,
    ln_final: LnCache,
    z: Vec<f64>,
    head: HeadCache,
    pub logit: f64,
    pub prob: f64,
}

fn encode(x: &mut [f64], trunk: &Trunk, dims: &ModelDims) -> (Vec<BlockCache>, LnCache, Vec<f64>) {
    let blocks = trunk.blocks.iter().map(|b| block_forward(x, b, dims)).collect();
    let d = dims.d_model;
    let mut z = vec![0.0; 3 * d];
    let ln = ln_forward(&x[VIEW_SLOT * d..], 3, &trunk.ln_final, &mut z);
    (blocks, ln, z)
}

fn check_finite(v: f64, stage: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteActivation(stage))
    }
}

/// Runs the encoder on already-embedded tokens and returns the probability
/// that the query object is relevant.
pub fn forward(tokens: &Tokens, params: &ModelParams, kind: PredicateKind) -> Result<f64> {
    let head = params.head(kind)?;
    if tokens.d != params.dims.d_model || tokens.data.len() != TOKENS * tokens.d {
        return Err(Error::ShapeMismatch {
            expected: TOKENS * params.dims.d_model,
            got: tokens.data.len(),
        });
    }
    let mut x = tokens.data.clone();
    let (_, _, z) = encode(&mut x, &params.trunk, &params.dims);
    let (logit, _) = head_forward(&z, head);
    check_finite(logit, "logit")?;
    Ok(sigmoid(logit))
}

/// Forward pass from raw patches, keeping the intermediates.
pub fn forward_trace(patches: Vec<f64>, params: &ModelParams, kind: PredicateKind) -> Result<Trace> {
    let head = params.head(kind)?;
    if patches.len() != TOKENS * PATCH_LEN {
        return Err(Error::ShapeMismatch {
            expected: TOKENS * PATCH_LEN,
            got: patches.len(),
        });
    }
    let mut x = embed_patches(&patches, &params.trunk, params.dims.d_model);
    let (blocks, ln_final, z) = encode(&mut x, &params.trunk, &params.dims);
    let (logit, head_cache) = head_forward(&z, head);
    check_finite(logit, "logit")?;
    Ok(Trace {
        kind,
        patches,
        blocks,
        ln_final,
        z,
        head: head_cache,
        logit,
        prob: sigmoid(logit),
    })
}

pub fn sample_patches(sample: &Sample) -> Result<Vec<f64>> {
    gather_patches(
        &sample.image,
        [&sample.goal_views[0], &sample.goal_views[1]],
        &sample.query_view,
    )
}

pub fn predict_sample(params: &ModelParams, sample: &Sample) -> Result<f64> {
    Ok(forward_trace(sample_patches(sample)?, params, sample.predicate)?.prob)
}

/// Parameter gradients. Only heads that received gradient are present.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub trunk: Trunk,
    pub heads: BTreeMap<PredicateKind, Head>,
    /// Zeroed head buffers kept for reuse after [`Gradients::clear`].
    spare: Vec<Head>,
}

impl PartialEq for Gradients {
    fn eq(&self, other: &Self) -> bool {
        self.trunk == other.trunk && self.heads == other.heads
    }
}

impl Gradients {
    pub fn zeros(dims: &ModelDims) -> Self {
        Gradients {
            trunk: Trunk::zeros(dims),
            heads: BTreeMap::new(),
            spare: Vec::new(),
        }
    }

    /// Resets to zero while keeping the allocations.
    pub fn clear(&mut self) {
        for t in self.trunk.tensors_mut() {
            t.fill(0.0);
        }
        for (_, mut h) in std::mem::take(&mut self.heads) {
            for t in h.tensors_mut() {
                t.fill(0.0);
            }
            self.spare.push(h);
        }
    }

    /// Zeroed head buffer for `kind`, created on first use.
    pub fn head_mut(&mut self, kind: PredicateKind, dims: &ModelDims) -> &mut Head {
        let spare = &mut self.spare;
        self.heads
            .entry(kind)
            .or_insert_with(|| spare.pop().unwrap_or_else(|| Head::zeros(dims)))
    }

    pub fn add(&mut self, other: &Gradients, dims: &ModelDims) {
        add_tensors(self.trunk.tensors_mut(), other.trunk.tensors().into_iter().map(|(_, t)| t).collect());
        for (k, h) in &other.heads {
            add_tensors(self.head_mut(*k, dims).tensors_mut(), h.tensors());
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.trunk.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
        for h in self.heads.values_mut() {
            for t in h.tensors_mut() {
                t.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
            && self
                .heads
                .values()
                .all(|h| h.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())))
    }

    /// Gradient laid out like `params`, with zeros for every head that
    /// received nothing.
    pub fn dense(&self, params: &ModelParams) -> ModelParams {
        let mut out = params.clone();
        out.trunk = self.trunk.clone();
        for (k, h) in out.heads.iter_mut() {
            *h = self.heads.get(k).cloned().unwrap_or_else(|| Head::zeros(&params.dims));
        }
        out
    }
}

fn add_tensors(dst: Vec<&mut Vec<f64>>, src: Vec<&Vec<f64>>) {
    for (d, s) in dst.into_iter().zip(src) {
        axpy(1.0, s, d);
    }
}

/// Accumulates the gradient of `dlogit · logit` into `grads`.
pub fn backward_trace(trace: &Trace, dlogit: f64, params: &ModelParams, grads: &mut Gradients) -> Result<()> {
    let dims = &params.dims;
    let d = dims.d_model;
    let head = params.head(trace.kind)?;
    let gh = grads.head_mut(trace.kind, dims);
    let dz = head_backward(&trace.z, &trace.head, dlogit, head, gh);

    let mut dx = vec![0.0; TOKENS * d];
    ln_backward(
        &trace.ln_final,
        &dz,
        3,
        &params.trunk.ln_final,
        &mut grads.trunk.ln_final,
        &mut dx[VIEW_SLOT * d..],
    );
    for (bi, block) in params.trunk.blocks.iter().enumerate().rev() {
        block_backward(&mut dx, &trace.blocks[bi], block, &mut grads.trunk.blocks[bi], dims);
    }
    for i in 0..TOKENS {
        let r = position_row(i);
        axpy(1.0, &dx[i * d..(i + 1) * d], &mut grads.trunk.pos_table[r * d..(r + 1) * d]);
    }
    let proj: &Linear = &params.trunk.patch_proj;
    proj.backward(&trace.patches, &dx, TOKENS, &mut grads.trunk.patch_proj, None);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::ModelDims;
    use crate::raster::{render_canonical_view, PATCH_SIZE};
    use crate::scene::ObjectSpec;

    fn view(id: u32, color: [f64; 3], idx: u8) -> CanonicalView {
        render_canonical_view(
            &ObjectSpec {
                id,
                half_extents: [0.08, 0.05],
                color,
                height_class: 0,
            },
            idx,
        )
    }

    fn small() -> ModelParams {
        ModelParams::init(ModelDims::with_width(16), &[PredicateKind::OnLeft], 0).unwrap()
    }

    fn striped_image() -> SceneImage {
        let mut img = SceneImage::zeros();
        for (i, v) in img.grid.iter_mut().enumerate() {
            *v = ((i * 7919) % 13) as f32 / 13.0;
        }
        img
    }

    #[test]
    fn blank_inputs_embed_to_positions() {
        let mut m = small();
        m.trunk.patch_proj.b.iter_mut().for_each(|b| *b = 0.0);
        let blank = CanonicalView {
            patch: vec![VIEW_BACKGROUND; PATCH_LEN],
            object_id: 0,
        };
        let t = embed_inputs(&SceneImage::zeros(), [&blank, &blank], &blank, &m).unwrap();
        let d = m.dims.d_model;
        for i in 0..TOKENS {
            let r = position_row(i);
            assert_eq!(t.token(i), &m.trunk.pos_table[r * d..(r + 1) * d]);
        }
    }

    #[test]
    fn query_change_touches_only_last_token() {
        let m = small();
        let img = striped_image();
        let (a, b, c) = (view(0, [0.9, 0.1, 0.1], 0), view(1, [0.1, 0.9, 0.1], 0), view(2, [0.1, 0.1, 0.9], 1));
        let t1 = embed_inputs(&img, [&a, &b], &a, &m).unwrap();
        let t2 = embed_inputs(&img, [&a, &b], &c, &m).unwrap();
        for i in 0..TOKENS - 1 {
            assert_eq!(t1.token(i), t2.token(i));
        }
        assert_ne!(t1.token(TOKENS - 1), t2.token(TOKENS - 1));
    }

    #[test]
    fn output_is_a_probability_and_deterministic() {
        let m = small();
        let img = striped_image();
        let (a, b) = (view(0, [0.9, 0.1, 0.1], 0), view(1, [0.1, 0.9, 0.1], 2));
        let t = embed_inputs(&img, [&a, &b], &b, &m).unwrap();
        let p = forward(&t, &m, PredicateKind::OnLeft).unwrap();
        assert!(p > 0.0 && p < 1.0);
        let m2 = small();
        let t2 = embed_inputs(&img, [&a, &b], &b, &m2).unwrap();
        assert_eq!(p.to_bits(), forward(&t2, &m2, PredicateKind::OnLeft).unwrap().to_bits());
        assert!(matches!(
            forward(&t, &m, PredicateKind::OnTop),
            Err(Error::ModelPredicateMissing(PredicateKind::OnTop))
        ));
    }

    #[test]
    fn context_permutation_with_and_without_positions() {
        let m = small();
        let d = m.dims.d_model;
        let img = striped_image();
        let (a, b) = (view(0, [0.9, 0.1, 0.1], 0), view(1, [0.1, 0.9, 0.1], 0));
        let t = embed_inputs(&img, [&a, &b], &a, &m).unwrap();
        let p = forward(&t, &m, PredicateKind::OnLeft).unwrap();

        // swap the raw patches 0 and 4 but keep position rows in place
        let mut patches = gather_patches(&img, [&a, &b], &a).unwrap();
        let (lo, hi) = patches.split_at_mut(4 * PATCH_LEN);
        lo[..PATCH_LEN].swap_with_slice(&mut hi[..PATCH_LEN]);
        let moved = Tokens {
            d,
            data: embed_patches(&patches, &m.trunk, d),
        };
        let p_moved = forward(&moved, &m, PredicateKind::OnLeft).unwrap();
        assert!((p - p_moved).abs() > 1e-12);

        // swap whole tokens, positions travel along
        let mut carried = t.clone();
        let (lo, hi) = carried.data.split_at_mut(4 * d);
        lo[..d].swap_with_slice(&mut hi[..d]);
        let p_carried = forward(&carried, &m, PredicateKind::OnLeft).unwrap();
        assert!((p - p_carried).abs() < 1e-12);
        assert_eq!(PATCH_SIZE, 32);
    }

    #[test]
    fn loss_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((weighted_bce_loss(0.5, 1, 1.0) - ln2).abs() < 1e-12);
        assert!((weighted_bce_loss(0.5, 0, 0.3) - ln2).abs() < 1e-12);
        assert!((weighted_bce_loss(0.5, 1, 0.86) - 0.86 * ln2).abs() < 1e-12);
        assert!(weighted_bce_loss(0.0, 1, 1.0).is_finite());
        assert_eq!(loss_grad_logit(1e-9, 1, 1.0), 0.0);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &u in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }
}
