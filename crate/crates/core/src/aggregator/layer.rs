//! One aggregation layer for one entity: input construction, per-type
//! multi-head neighbor attention, self-attention across the head outputs,
//! and the fully connected fusion. Backward recomputes nothing; it consumes
//! the cache produced by the matching forward call.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::LayerParams;
use crate::numerics::{
    concat, elu, elu_grad, leaky_relu, leaky_relu_grad, softmax, DropoutMask, Real, Tensor, LEAKY_SLOPE,
};
use crate::{Error, Result};

/// The vectors one layer consumes for one entity: the entity itself, and
/// per neighbor its relation and entity vectors (plus the masked reliability
/// scalars for transformed neighbors).
pub struct LayerInput<'a, F> {
    pub entity: &'a [F],
    pub original: Vec<(&'a [F], &'a [F])>,
    pub transformed: Vec<(&'a [F], &'a [F], Vec<F>)>,
}

/// Gradients with respect to every vector in a [`LayerInput`].
#[derive(Debug)]
pub struct InputGrads<F> {
    pub entity: Vec<F>,
    pub original: Vec<(Vec<F>, Vec<F>)>,
    pub transformed: Vec<(Vec<F>, Vec<F>)>,
}

#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub p: f64,
    pub seed: u64,
}

struct TypeCache<F> {
    inputs: Vec<Vec<F>>,
    c: Vec<Vec<F>>,
    masks: Vec<DropoutMask<F>>,
    /// Per head: attention logits before the LeakyReLU.
    u: Vec<Vec<F>>,
    alpha: Vec<Vec<F>>,
    /// Per head: weighted sum before the ELU (empty when there are no neighbors).
    pre: Vec<Vec<F>>,
    hidden: Vec<Vec<F>>,
}

struct SelfAttentionHead<F> {
    q: Tensor<F>,
    k: Tensor<F>,
    v: Tensor<F>,
    a: Tensor<F>,
}

pub struct LayerCache<F> {
    original: TypeCache<F>,
    transformed: TypeCache<F>,
    x: Tensor<F>,
    heads: Vec<SelfAttentionHead<F>>,
    z: Vec<F>,
    z_mask: DropoutMask<F>,
    pre: Vec<F>,
}

impl<F: Real> LayerCache<F> {
    /// Neighbor attention weights: original heads first, then transformed.
    pub fn attention(&self) -> impl Iterator<Item = &[F]> {
        self.original.alpha.iter().chain(&self.transformed.alpha).map(Vec::as_slice)
    }

    /// Stacked hidden vectors fed to self-attention.
    pub fn hidden(&self) -> &Tensor<F> {
        &self.x
    }

    /// Flattened self-attention output after dropout.
    pub fn fused(&self) -> &[F] {
        &self.z
    }
}

fn project<F: Real>(w: &Tensor<F>, x: &[F]) -> Result<Vec<F>> {
    if x.len() != w.cols() {
        return Err(Error::Shape(format!(
            "neighbor input of width {} for a {}x{} projection",
            x.len(),
            w.rows(),
            w.cols()
        )));
    }
    Ok(w.matvec(x))
}

/// `W_c · [parts…]`.
pub fn build_input<F: Real>(w_c: &Tensor<F>, parts: &[&[F]]) -> Result<Vec<F>> {
    project(w_c, &concat(parts))
}

fn attention_logits<F: Real>(inputs: &[Vec<F>], w_b: &[F]) -> (Vec<F>, Vec<F>) {
    let slope = F::lit(LEAKY_SLOPE);
    let u: Vec<F> = inputs.iter().map(|c| c.iter().zip(w_b).map(|(&a, &b)| a * b).sum()).collect();
    let a: Vec<F> = u.iter().map(|&v| leaky_relu(v, slope)).collect();
    let alpha = softmax(&a);
    (u, alpha)
}

/// Softmax over `LeakyReLU(w_b · c_j)` within one neighbor set.
pub fn neighbor_attention<F: Real>(inputs: &[Vec<F>], w_b: &[F]) -> Vec<F> {
    attention_logits(inputs, w_b).1
}

fn weighted_sum<F: Real>(inputs: &[Vec<F>], weights: &[F], width: usize) -> Vec<F> {
    let mut out = vec![F::zero(); width];
    for (c, &a) in inputs.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(c) {
            *o += a * v;
        }
    }
    out
}

/// `ELU(Σ α_j c_j)`; the zero vector when there are no inputs.
pub fn aggregate_head<F: Real>(inputs: &[Vec<F>], weights: &[F], width: usize) -> Vec<F> {
    if inputs.is_empty() {
        return vec![F::zero(); width];
    }
    weighted_sum(inputs, weights, width).into_iter().map(elu).collect()
}

fn type_forward<F: Real>(
    w_c: &Tensor<F>,
    w_b: &Tensor<F>,
    inputs: Vec<Vec<F>>,
    mask: &mut impl FnMut(usize) -> DropoutMask<F>,
) -> Result<TypeCache<F>> {
    let m = w_c.rows();
    let mut c = Vec::with_capacity(inputs.len());
    let mut masks = Vec::with_capacity(inputs.len());
    for x in &inputs {
        let mut cj = project(w_c, x)?;
        let mk = mask(m);
        mk.apply(&mut cj);
        c.push(cj);
        masks.push(mk);
    }
    let mut cache = TypeCache {
        inputs,
        c,
        masks,
        u: Vec::new(),
        alpha: Vec::new(),
        pre: Vec::new(),
        hidden: Vec::new(),
    };
    for k in 0..w_b.rows() {
        if cache.c.is_empty() {
            cache.u.push(Vec::new());
            cache.alpha.push(Vec::new());
            cache.pre.push(Vec::new());
            cache.hidden.push(vec![F::zero(); m]);
            continue;
        }
        let (u, alpha) = attention_logits(&cache.c, w_b.row(k));
        let pre = weighted_sum(&cache.c, &alpha, m);
        cache.hidden.push(pre.iter().map(|&v| elu(v)).collect());
        cache.u.push(u);
        cache.alpha.push(alpha);
        cache.pre.push(pre);
    }
    Ok(cache)
}

/// Self-attention over the stacked hidden vectors `x`, flattened, then
/// `ELU(W_f z + b_f)`. Returns the output with the head caches, the
/// flattened `z` (after `z_mask`) and the fusion pre-activation.
#[allow(clippy::type_complexity)]
fn self_attention_forward<F: Real>(
    params: &LayerParams<F>,
    x: &Tensor<F>,
    z_mask: &DropoutMask<F>,
) -> Result<(Vec<F>, Vec<SelfAttentionHead<F>>, Vec<F>, Vec<F>)> {
    let rows = x.rows();
    let k_s = params.w_q.len();
    let dv = params.w_v.first().map_or(0, Tensor::cols);
    let width = dv * k_s;
    let mut z = vec![F::zero(); rows * width];
    let mut heads = Vec::with_capacity(k_s);
    for s in 0..k_s {
        let q = crate::numerics::matmul(x, &params.w_q[s])?;
        let k = crate::numerics::matmul(x, &params.w_k[s])?;
        let v = crate::numerics::matmul(x, &params.w_v[s])?;
        if q.cols() != k.cols() {
            return Err(Error::Shape(format!("query width {} != key width {}", q.cols(), k.cols())));
        }
        let scale = F::lit(1.0 / (q.cols() as f64).sqrt());
        let mut a = Tensor::zeros(rows, rows);
        for i in 0..rows {
            let logits: Vec<F> = (0..rows)
                .map(|j| q.row(i).iter().zip(k.row(j)).map(|(&p, &r)| p * r).sum::<F>() * scale)
                .collect();
            a.row_mut(i).copy_from_slice(&softmax(&logits));
        }
        let zs = crate::numerics::matmul(&a, &v)?;
        for i in 0..rows {
            z[i * width + s * dv..i * width + (s + 1) * dv].copy_from_slice(zs.row(i));
        }
        heads.push(SelfAttentionHead { q, k, v, a });
    }
    z_mask.apply(&mut z);
    if params.w_f.cols() != z.len() {
        return Err(Error::Shape(format!(
            "fusion expects width {}, self-attention produced {}",
            params.w_f.cols(),
            z.len()
        )));
    }
    let pre: Vec<F> = params
        .w_f
        .matvec(&z)
        .into_iter()
        .zip(params.b_f.row(0))
        .map(|(a, &b)| a + b)
        .collect();
    let out = pre.iter().map(|&v| elu(v)).collect();
    Ok((out, heads, z, pre))
}

/// Self-attention and fusion over `2·K_m` stacked hidden vectors, without
/// dropout.
pub fn self_attention_fuse<F: Real>(hidden: &Tensor<F>, params: &LayerParams<F>) -> Result<Vec<F>> {
    Ok(self_attention_forward(params, hidden, &DropoutMask::identity())?.0)
}

pub fn layer_forward<F: Real>(
    params: &LayerParams<F>,
    input: &LayerInput<F>,
    dropout: Option<Dropout>,
) -> Result<(Vec<F>, LayerCache<F>)> {
    let m = params.w_co.rows();
    let k_m = params.w_bo.rows();
    let mut rng = dropout.map(|d| ChaCha8Rng::seed_from_u64(d.seed));
    let p = dropout.map_or(0.0, |d| d.p);
    let mut mask = |len| match rng.as_mut() {
        Some(r) => DropoutMask::sample(len, p, r),
        None => DropoutMask::identity(),
    };
    let orig_inputs = input.original.iter().map(|(r, t)| concat(&[input.entity, r, t])).collect();
    let trans_inputs = input
        .transformed
        .iter()
        .map(|(r, t, meta)| concat(&[input.entity, r, t, meta]))
        .collect();
    let original = type_forward(&params.w_co, &params.w_bo, orig_inputs, &mut mask)?;
    let transformed = type_forward(&params.w_ct, &params.w_bt, trans_inputs, &mut mask)?;

    let mut x = Tensor::zeros(2 * k_m, m);
    for (i, h) in original.hidden.iter().chain(&transformed.hidden).enumerate() {
        x.row_mut(i).copy_from_slice(h);
    }
    let z_len = params.w_f.cols();
    let z_mask = mask(z_len);
    let (out, heads, z, pre) = self_attention_forward(params, &x, &z_mask)?;
    if out.iter().any(|v: &F| !v.is_finite()) {
        return Err(Error::Numeric("aggregation layer output".into()));
    }
    Ok((
        out,
        LayerCache {
            original,
            transformed,
            x,
            heads,
            z,
            z_mask,
            pre,
        },
    ))
}

fn type_backward<F: Real>(
    w_c: &Tensor<F>,
    w_b: &Tensor<F>,
    cache: &TypeCache<F>,
    g_hidden: &[&[F]],
    g_wc: &mut Tensor<F>,
    g_wb: &mut Tensor<F>,
) -> Vec<Vec<F>> {
    let n = cache.c.len();
    if n == 0 {
        return Vec::new();
    }
    let m = w_c.rows();
    let slope = F::lit(LEAKY_SLOPE);
    let mut g_c = vec![vec![F::zero(); m]; n];
    for (k, g_h) in g_hidden.iter().enumerate() {
        let g_pre: Vec<F> = g_h.iter().zip(&cache.pre[k]).map(|(&g, &p)| g * elu_grad(p)).collect();
        let alpha = &cache.alpha[k];
        let mut g_alpha = vec![F::zero(); n];
        for j in 0..n {
            for (gc, &gp) in g_c[j].iter_mut().zip(&g_pre) {
                *gc += alpha[j] * gp;
            }
            g_alpha[j] = g_pre.iter().zip(&cache.c[j]).map(|(&a, &b)| a * b).sum();
        }
        let mean: F = alpha.iter().zip(&g_alpha).map(|(&a, &g)| a * g).sum();
        for j in 0..n {
            let g_u = alpha[j] * (g_alpha[j] - mean) * leaky_relu_grad(cache.u[k][j], slope);
            if g_u == F::zero() {
                continue;
            }
            for (w, &c) in g_wb.row_mut(k).iter_mut().zip(&cache.c[j]) {
                *w += g_u * c;
            }
            for (gc, &w) in g_c[j].iter_mut().zip(w_b.row(k)) {
                *gc += g_u * w;
            }
        }
    }
    g_c.into_iter()
        .enumerate()
        .map(|(j, mut g)| {
            cache.masks[j].apply(&mut g);
            g_wc.add_outer(&g, &cache.inputs[j]);
            let mut g_x = vec![F::zero(); w_c.cols()];
            w_c.matvec_t_acc(&g, &mut g_x);
            g_x
        })
        .collect()
}

/// Accumulates parameter gradients of `g_out · ∂out/∂θ` into `grads` and
/// returns the gradients with respect to the layer inputs.
pub fn layer_backward<F: Real>(
    params: &LayerParams<F>,
    cache: &LayerCache<F>,
    g_out: &[F],
    grads: &mut LayerParams<F>,
) -> InputGrads<F> {
    let g_pre: Vec<F> = g_out.iter().zip(&cache.pre).map(|(&g, &p)| g * elu_grad(p)).collect();
    grads.w_f.add_outer(&g_pre, &cache.z);
    for (b, &g) in grads.b_f.row_mut(0).iter_mut().zip(&g_pre) {
        *b += g;
    }
    let mut g_z = vec![F::zero(); cache.z.len()];
    params.w_f.matvec_t_acc(&g_pre, &mut g_z);
    cache.z_mask.apply(&mut g_z);

    let rows = cache.x.rows();
    let m = cache.x.cols();
    let k_s = cache.heads.len();
    let dv = params.w_v.first().map_or(0, Tensor::cols);
    let width = dv * k_s;
    let mut g_x = Tensor::zeros(rows, m);
    for (s, head) in cache.heads.iter().enumerate() {
        let dqk = head.q.cols();
        let scale = F::lit(1.0 / (dqk as f64).sqrt());
        let g_zs = |i: usize, c: usize| g_z[i * width + s * dv + c];
        let mut g_a = Tensor::zeros(rows, rows);
        let mut g_v = Tensor::zeros(rows, dv);
        for i in 0..rows {
            for j in 0..rows {
                let mut acc = F::zero();
                for c in 0..dv {
                    acc += g_zs(i, c) * head.v.get(j, c);
                }
                g_a.set(i, j, acc);
            }
            for c in 0..dv {
                let g = g_zs(i, c);
                for j in 0..rows {
                    let cur = g_v.get(j, c);
                    g_v.set(j, c, cur + head.a.get(i, j) * g);
                }
            }
        }
        let mut g_q = Tensor::zeros(rows, dqk);
        let mut g_k = Tensor::zeros(rows, dqk);
        for i in 0..rows {
            let a_row = head.a.row(i);
            let mean: F = a_row.iter().zip(g_a.row(i)).map(|(&a, &g)| a * g).sum();
            for j in 0..rows {
                let g_s = a_row[j] * (g_a.get(i, j) - mean) * scale;
                if g_s == F::zero() {
                    continue;
                }
                for c in 0..dqk {
                    let q = g_q.get(i, c);
                    g_q.set(i, c, q + g_s * head.k.get(j, c));
                    let k = g_k.get(j, c);
                    g_k.set(j, c, k + g_s * head.q.get(i, c));
                }
            }
        }
        for (w, gw, g) in [
            (&params.w_q[s], &mut grads.w_q[s], &g_q),
            (&params.w_k[s], &mut grads.w_k[s], &g_k),
            (&params.w_v[s], &mut grads.w_v[s], &g_v),
        ] {
            for i in 0..rows {
                gw.add_outer(cache.x.row(i), g.row(i));
                let back = w.matvec(g.row(i));
                for (o, b) in g_x.row_mut(i).iter_mut().zip(back) {
                    *o += b;
                }
            }
        }
    }

    let k_m = rows / 2;
    let orig_rows: Vec<&[F]> = (0..k_m).map(|k| g_x.row(k)).collect();
    let trans_rows: Vec<&[F]> = (k_m..rows).map(|k| g_x.row(k)).collect();
    let g_orig = type_backward(&params.w_co, &params.w_bo, &cache.original, &orig_rows, &mut grads.w_co, &mut grads.w_bo);
    let g_trans = type_backward(&params.w_ct, &params.w_bt, &cache.transformed, &trans_rows, &mut grads.w_ct, &mut grads.w_bt);

    let n = params.w_co.cols() / 3;
    let mut entity = vec![F::zero(); n];
    let mut split = |g: Vec<F>| {
        for (e, &v) in entity.iter_mut().zip(&g[..n]) {
            *e += v;
        }
        (g[n..2 * n].to_vec(), g[2 * n..3 * n].to_vec())
    };
    let original = g_orig.into_iter().map(&mut split).collect();
    let transformed = g_trans.into_iter().map(&mut split).collect();
    InputGrads {
        entity,
        original,
        transformed,
    }
}
