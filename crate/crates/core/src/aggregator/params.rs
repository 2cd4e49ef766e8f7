use crate::numerics::{glorot_init, Real, Tensor};
use crate::rules::TransformedNeighbor;
use crate::{Error, Result};

/// Which reliability scalars of a transformed neighbor enter its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureMask {
    pub use_hc: bool,
    pub use_conf: bool,
    pub use_lnorm: bool,
    pub use_s: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::full()
    }
}

impl FeatureMask {
    pub const fn full() -> Self {
        Self {
            use_hc: true,
            use_conf: true,
            use_lnorm: true,
            use_s: true,
        }
    }

    pub const fn none() -> Self {
        Self {
            use_hc: false,
            use_conf: false,
            use_lnorm: false,
            use_s: false,
        }
    }

    /// The named ablations: `nh` drops head coverage, `nc` confidence, `nl`
    /// normalized length, `ns` the embedding score. `full` keeps all four.
    pub fn ablation(name: &str) -> Result<Self> {
        let mut m = Self::full();
        match name {
            "full" => {}
            "nh" => m.use_hc = false,
            "nc" => m.use_conf = false,
            "nl" => m.use_lnorm = false,
            "ns" => m.use_s = false,
            other => return Err(Error::Argument(format!("unknown ablation '{other}' (expected full, nh, nc, nl or ns)"))),
        }
        Ok(m)
    }

    fn flags(&self) -> [bool; 4] {
        [self.use_hc, self.use_conf, self.use_lnorm, self.use_s]
    }

    /// Number of scalars appended to a transformed neighbor's input.
    pub fn width(&self) -> usize {
        self.flags().iter().filter(|&&b| b).count()
    }

    /// The enabled scalars of `n` in the order hc, conf, l_norm, s.
    pub fn select<F: Real>(&self, n: &TransformedNeighbor) -> Vec<F> {
        [n.hc, n.conf, n.l_norm, n.s]
            .iter()
            .zip(self.flags())
            .filter(|(_, on)| *on)
            .map(|(&v, _)| F::lit(v))
            .collect()
    }
}

/// Width chain of the two-layer encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggregatorDims {
    /// Base embedding dimension.
    pub d: usize,
    pub d1: usize,
    pub d2: usize,
    /// Neighbor-attention heads per neighbor type.
    pub k_m: usize,
    /// Self-attention heads.
    pub k_s: usize,
    /// Query/key width per layer.
    pub d_qk: [usize; 2],
    /// Value width per layer.
    pub d_v: [usize; 2],
}

impl Default for AggregatorDims {
    fn default() -> Self {
        Self {
            d: 100,
            d1: 100,
            d2: 200,
            k_m: 2,
            k_s: 4,
            d_qk: [25, 50],
            d_v: [25, 50],
        }
    }
}

impl AggregatorDims {
    pub fn validate(&self) -> Result<()> {
        let all = [self.d, self.d1, self.d2, self.k_m, self.k_s, self.d_qk[0], self.d_qk[1], self.d_v[0], self.d_v[1]];
        if all.contains(&0) {
            return Err(Error::Argument(format!("aggregator dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Input width of layer `l` (0-based).
    pub fn input(&self, l: usize) -> usize {
        if l == 0 {
            self.d
        } else {
            self.d1
        }
    }

    /// Output width of layer `l` (0-based).
    pub fn output(&self, l: usize) -> usize {
        if l == 0 {
            self.d1
        } else {
            self.d2
        }
    }

    /// Length of the flattened self-attention output `z` of layer `l`.
    pub fn fused_width(&self, l: usize) -> usize {
        2 * self.k_m * self.d_v[l] * self.k_s
    }
}

/// Weights of one aggregation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    /// `out × 3·in`
    pub w_co: Tensor<F>,
    /// `out × (3·in + mask width)`
    pub w_ct: Tensor<F>,
    /// One attention vector per row, `k_m × out`.
    pub w_bo: Tensor<F>,
    pub w_bt: Tensor<F>,
    /// Per self-attention head, `out × d_qk`.
    pub w_q: Vec<Tensor<F>>,
    pub w_k: Vec<Tensor<F>>,
    /// Per self-attention head, `out × d_v`.
    pub w_v: Vec<Tensor<F>>,
    /// `out × fused_width`
    pub w_f: Tensor<F>,
    /// `1 × out`
    pub b_f: Tensor<F>,
}

impl<F: Real> LayerParams<F> {
    fn init(dims: &AggregatorDims, mask: &FeatureMask, l: usize, seed: u64) -> Self {
        let (n, m) = (dims.input(l), dims.output(l));
        let mut next = 0u64;
        let mut glorot = |rows, cols| {
            next += 1;
            glorot_init(rows, cols, seed.wrapping_mul(1_000_003).wrapping_add(next))
        };
        Self {
            w_co: glorot(m, 3 * n),
            w_ct: glorot(m, 3 * n + mask.width()),
            w_bo: glorot(dims.k_m, m),
            w_bt: glorot(dims.k_m, m),
            w_q: (0..dims.k_s).map(|_| glorot(m, dims.d_qk[l])).collect(),
            w_k: (0..dims.k_s).map(|_| glorot(m, dims.d_qk[l])).collect(),
            w_v: (0..dims.k_s).map(|_| glorot(m, dims.d_v[l])).collect(),
            w_f: glorot(m, dims.fused_width(l)),
            b_f: Tensor::zeros(1, m),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor<F>)> {
        let mut out = vec![
            (format!("{prefix}.w_co"), &self.w_co),
            (format!("{prefix}.w_ct"), &self.w_ct),
            (format!("{prefix}.w_bo"), &self.w_bo),
            (format!("{prefix}.w_bt"), &self.w_bt),
        ];
        for (name, list) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v)] {
            for (k, t) in list.iter().enumerate() {
                out.push((format!("{prefix}.{name}{k}"), t));
            }
        }
        out.push((format!("{prefix}.w_f"), &self.w_f));
        out.push((format!("{prefix}.b_f"), &self.b_f));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = vec![&mut self.w_co, &mut self.w_ct, &mut self.w_bo, &mut self.w_bt];
        out.extend(self.w_q.iter_mut());
        out.extend(self.w_k.iter_mut());
        out.extend(self.w_v.iter_mut());
        out.push(&mut self.w_f);
        out.push(&mut self.b_f);
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        let src: Vec<&Tensor<F>> = other.named("").into_iter().map(|(_, t)| t).collect();
        for (a, b) in self.tensors_mut().into_iter().zip(src) {
            a.add_assign(b);
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor<F>| Tensor::zeros(t.rows(), t.cols());
        Self {
            w_co: z(&self.w_co),
            w_ct: z(&self.w_ct),
            w_bo: z(&self.w_bo),
            w_bt: z(&self.w_bt),
            w_q: self.w_q.iter().map(z).collect(),
            w_k: self.w_k.iter().map(z).collect(),
            w_v: self.w_v.iter().map(z).collect(),
            w_f: z(&self.w_f),
            b_f: z(&self.b_f),
        }
    }
}

/// Both layers plus the per-layer relation transforms: `w_r1` (`d1 × d`)
/// maps base relations into layer-2 inputs, `w_r2` (`d2 × d`) maps them into
/// the output space of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatorParams<F> {
    pub dims: AggregatorDims,
    pub mask: FeatureMask,
    pub layers: [LayerParams<F>; 2],
    pub w_r1: Tensor<F>,
    pub w_r2: Tensor<F>,
}

impl<F: Real> AggregatorParams<F> {
    pub fn init(dims: AggregatorDims, mask: FeatureMask, seed: u64) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            mask,
            layers: [
                LayerParams::init(&dims, &mask, 0, seed),
                LayerParams::init(&dims, &mask, 1, seed.wrapping_add(1)),
            ],
            w_r1: glorot_init(dims.d1, dims.d, seed.wrapping_add(0xa1)),
            w_r2: glorot_init(dims.d2, dims.d, seed.wrapping_add(0xa2)),
        })
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = self.layers[0].named("l1");
        out.extend(self.layers[1].named("l2"));
        out.push(("w_r1".into(), &self.w_r1));
        out.push(("w_r2".into(), &self.w_r2));
        out
    }

    /// Same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let [l1, l2] = &mut self.layers;
        let mut out = l1.tensors_mut();
        out.extend(l2.tensors_mut());
        out.push(&mut self.w_r1);
        out.push(&mut self.w_r2);
        out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            mask: self.mask,
            layers: [self.layers[0].zeros_like(), self.layers[1].zeros_like()],
            w_r1: Tensor::zeros(self.w_r1.rows(), self.w_r1.cols()),
            w_r2: Tensor::zeros(self.w_r2.rows(), self.w_r2.cols()),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        let src: Vec<&Tensor<F>> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (a, b) in self.tensors_mut().into_iter().zip(src) {
            a.add_assign(b);
        }
    }

    pub fn flatten(&self) -> Vec<F> {
        self.named_tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[F]) -> Result<()> {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            let Some(src) = flat.get(offset..offset + n) else {
                return Err(Error::Shape(format!("flat parameter vector of length {} is too short", flat.len())));
            };
            t.data_mut().copy_from_slice(src);
            offset += n;
        }
        if offset != flat.len() {
            return Err(Error::Shape(format!("flat parameter vector has {} extra values", flat.len() - offset)));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}
