//! Operation tape and reverse sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::filters::DepthwiseFilter;
use super::params::{Grads, ParamId, Params};
use super::Tensor;

/// Variance floor used by [`Graph::channel_norm`].
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `dilation·(k−1)/2`; shape-preserving at stride 1.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn same(dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            padding: Padding::Same,
        }
    }

    pub fn valid() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: Padding::Valid,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(x: (usize, usize, usize), kernel: &[usize], spec: ConvSpec) -> Result<(Self, usize)> {
        let (cin, h, w) = x;
        let [cout, kcin, kh, kw] = kernel[..] else {
            return Err(Error::Shape(format!("kernel shape {kernel:?} is not 4-D")));
        };
        if kcin != cin {
            return Err(Error::Shape(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} must be square and odd"
            )));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::Shape(
                "stride and dilation must be at least 1".into(),
            ));
        }
        let extent = (kh - 1) * spec.dilation + 1;
        let pad = match spec.padding {
            Padding::Same => (extent - 1) / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < extent || w + 2 * pad < extent {
            return Err(Error::Shape(format!(
                "{h}x{w} input smaller than effective kernel extent {extent}"
            )));
        }
        let ho = (h + 2 * pad - extent) / spec.stride + 1;
        let wo = (w + 2 * pad - extent) / spec.stride + 1;
        Ok((
            Self {
                cin,
                h,
                w,
                k: kh,
                ho,
                wo,
                stride: spec.stride,
                dilation: spec.dilation,
                pad,
            },
            cout,
        ))
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1 stride-1 kernels read the input directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source offset for column `ox` of tap `kx`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, n: usize) -> Option<usize> {
        let s = (o * self.stride + t * self.dilation) as isize - self.pad as isize;
        (s >= 0 && (s as usize) < n).then_some(s as usize)
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let p = self.cols();
        let mut cols = vec![T::zero(); self.rows() * p];
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &mut cols[r * p..(r + 1) * p];
                    for oy in 0..self.ho {
                        let Some(sy) = self.src(oy, ky, self.h) else {
                            continue;
                        };
                        let base = (ci * self.h + sy) * self.w;
                        for ox in 0..self.wo {
                            if let Some(sx) = self.src(ox, kx, self.w) {
                                row[oy * self.wo + ox] = x[base + sx];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let p = self.cols();
        let mut x = vec![T::zero(); self.cin * self.h * self.w];
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &cols[r * p..(r + 1) * p];
                    for oy in 0..self.ho {
                        let Some(sy) = self.src(oy, ky, self.h) else {
                            continue;
                        };
                        let base = (ci * self.h + sy) * self.w;
                        for ox in 0..self.wo {
                            if let Some(sx) = self.src(ox, kx, self.w) {
                                x[base + sx] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Conv {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Concat(Vec<NodeId>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ChannelNorm {
        x: NodeId,
        scale: Option<(ParamId, ParamId)>,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: NodeId,
        slope: T,
    },
    Filter {
        x: NodeId,
        filter: DepthwiseFilter,
    },
    Upsample {
        x: NodeId,
        factor: usize,
    },
    GlobalAvgPool(NodeId),
    Linear {
        x: NodeId,
        w: ParamId,
        b: ParamId,
    },
    Reshape(NodeId),
    Clamp {
        x: NodeId,
        lo: T,
        hi: T,
    },
    Reparam {
        mu: NodeId,
        log_var: NodeId,
        eta: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Tape of one forward pass over a borrowed parameter store.
pub struct Graph<'p, T: Scalar> {
    params: &'p Params<T>,
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    pub params: Grads<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. a node's value (`None` when the node is not upstream of any seed).
    pub fn node(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].as_deref()
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
        None => *slot = Some(g.to_vec()),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p Params<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(64),
        }
    }

    pub fn params(&self) -> &Params<T> {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Side of every non-differentiable point: leaky-ReLU input sign and clamp region.
    ///
    /// Two evaluations with equal patterns lie on the same smooth piece of the graph.
    pub fn activation_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => {
                    out.extend(
                        self.nodes[x.0]
                            .value
                            .data
                            .iter()
                            .map(|v| u8::from(*v >= T::zero())),
                    );
                }
                Op::Clamp { x, lo, hi } => out.extend(self.nodes[x.0].value.data.iter().map(|v| {
                    if *v < *lo {
                        0
                    } else if *v > *hi {
                        2
                    } else {
                        1
                    }
                })),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input)
    }

    /// Cross-correlation with kernel `[cout, cin, k, k]` and optional bias `[cout]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let input = &self.nodes[x.0].value;
        let kernel = self.params.get(w);
        let (geom, cout) = ConvGeom::new(input.chw()?, &kernel.shape, spec)?;
        let (r, p) = (geom.rows(), geom.cols());
        let cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            geom.im2col(&input.data)
        };
        let bsrc: &[T] = if geom.is_pointwise() {
            &input.data
        } else {
            &cols
        };
        let mut out = vec![T::zero(); cout * p];
        if let Some(b) = b {
            let bias = &self.params.get(b).data;
            if bias.len() != cout {
                return Err(Error::Shape(format!(
                    "bias length {} vs {cout}",
                    bias.len()
                )));
            }
            for (co, row) in out.chunks_mut(p).enumerate() {
                row.fill(bias[co]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            cout,
            r,
            p,
            T::one(),
            &kernel.data,
            r as isize,
            1,
            bsrc,
            p as isize,
            1,
            beta,
            &mut out,
            p as isize,
            1,
        );
        let value = Tensor::new(vec![cout, geom.ho, geom.wo], out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            },
        ))
    }

    /// Channel-wise concatenation of equally sized feature maps.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let (_, h, w) = self.nodes[xs[0].0].value.chw()?;
        let mut data = Vec::new();
        let mut c = 0;
        for id in xs {
            let v = &self.nodes[id.0].value;
            let (ci, hi, wi) = v.chw()?;
            if (hi, wi) != (h, w) {
                return Err(Error::Shape(format!("concat {hi}x{wi} with {h}x{w}")));
            }
            c += ci;
            data.extend_from_slice(&v.data);
        }
        let value = Tensor::new(vec![c, h, w], data)?;
        Ok(self.push(value, Op::Concat(xs.to_vec())))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, sub: bool) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape != vb.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", va.shape, vb.shape)));
        }
        let data = va
            .data
            .iter()
            .zip(&vb.data)
            .map(|(x, y)| if sub { *x - *y } else { *x + *y })
            .collect();
        let value = Tensor::new(va.shape.clone(), data)?;
        let op = if sub { Op::Sub(a, b) } else { Op::Add(a, b) };
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, false)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, true)
    }

    /// Per-channel standardization over the spatial extent, then an optional
    /// learnable `(scale, shift)` pair of `[c]` vectors.
    pub fn channel_norm(
        &mut self,
        x: NodeId,
        affine: Option<(ParamId, ParamId)>,
    ) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        let (c, h, w) = v.chw()?;
        let n = h * w;
        if n < 2 {
            return Err(Error::Shape(
                "channel norm needs at least 2 spatial elements".into(),
            ));
        }
        let eps = T::lit(NORM_EPS);
        let nt = T::lit(n as f64);
        let mut xhat = vec![T::zero(); c * n];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let src = &v.data[ch * n..(ch + 1) * n];
            let mean = src.iter().copied().sum::<T>() / nt;
            let var = src.iter().map(|a| (*a - mean) * (*a - mean)).sum::<T>() / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for (d, s) in xhat[ch * n..(ch + 1) * n].iter_mut().zip(src) {
                *d = (*s - mean) * is;
            }
        }
        let mut out = xhat.clone();
        if let Some((g, b)) = affine {
            let (g, b) = (&self.params.get(g).data, &self.params.get(b).data);
            if g.len() != c || b.len() != c {
                return Err(Error::Shape(format!("norm affine length vs {c} channels")));
            }
            for ch in 0..c {
                for o in &mut out[ch * n..(ch + 1) * n] {
                    *o = *o * g[ch] + b[ch];
                }
            }
        }
        let value = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push(
            value,
            Op::ChannelNorm {
                x,
                scale: affine,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let slope = T::lit(slope);
        let v = &self.nodes[x.0].value;
        let data = v
            .data
            .iter()
            .map(|a| if *a >= T::zero() { *a } else { *a * slope })
            .collect();
        let value = Tensor {
            shape: v.shape.clone(),
            data,
        };
        self.push(value, Op::LeakyRelu { x, slope })
    }

    /// Fixed depthwise filter (Gaussian low-pass, BlurPool).
    pub fn filter(&mut self, x: NodeId, filter: &DepthwiseFilter) -> Result<NodeId> {
        let value = filter.forward(&self.nodes[x.0].value)?;
        Ok(self.push(
            value,
            Op::Filter {
                x,
                filter: filter.clone(),
            },
        ))
    }

    pub fn gaussian_lowpass(
        &mut self,
        x: NodeId,
        kernel_size: usize,
        sigma: f64,
    ) -> Result<NodeId> {
        self.filter(x, &DepthwiseFilter::gaussian(kernel_size, sigma))
    }

    pub fn blurpool(&mut self, x: NodeId) -> Result<NodeId> {
        self.filter(x, &DepthwiseFilter::blurpool())
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        if factor < 2 {
            return Err(Error::Shape(format!("upsample factor {factor} < 2")));
        }
        let v = &self.nodes[x.0].value;
        let (c, h, w) = v.chw()?;
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                let src = &v.data[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
                let dst = &mut out[(ch * ho + y) * wo..(ch * ho + y + 1) * wo];
                for (xo, d) in dst.iter_mut().enumerate() {
                    *d = src[xo / factor];
                }
            }
        }
        let value = Tensor::new(vec![c, ho, wo], out)?;
        Ok(self.push(value, Op::Upsample { x, factor }))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        let (c, h, w) = v.chw()?;
        let n = T::lit((h * w) as f64);
        let data = v
            .data
            .chunks(h * w)
            .map(|ch| ch.iter().copied().sum::<T>() / n)
            .collect();
        debug_assert_eq!(c, v.data.len() / (h * w));
        let value = Tensor::vector(data);
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    /// `w · x + b` with `w` of shape `[out, in]`.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        let (wt, bt) = (self.params.get(w), self.params.get(b));
        let [m, n] = wt.shape[..] else {
            return Err(Error::Shape(format!(
                "weight shape {:?} is not 2-D",
                wt.shape
            )));
        };
        if v.len() != n || bt.len() != m {
            return Err(Error::Shape(format!(
                "linear {m}x{n} applied to length {} with bias {}",
                v.len(),
                bt.len()
            )));
        }
        let mut out = bt.data.clone();
        T::gemm(
            m,
            n,
            1,
            T::one(),
            &wt.data,
            n as isize,
            1,
            &v.data,
            1,
            1,
            T::one(),
            &mut out,
            1,
            1,
        );
        let value = Tensor::vector(out);
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = &self.nodes[x.0].value;
        let value = Tensor::new(shape, v.data.clone())?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let v = &self.nodes[x.0].value;
        let value = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|a| a.max(lo).min(hi)).collect(),
        };
        self.push(value, Op::Clamp { x, lo, hi })
    }

    /// `z = μ + exp(log σ² / 2) ⊙ η` for a fixed noise vector `η`.
    pub fn reparameterize(&mut self, mu: NodeId, log_var: NodeId, eta: Vec<T>) -> Result<NodeId> {
        let (m, lv) = (&self.nodes[mu.0].value, &self.nodes[log_var.0].value);
        if m.len() != lv.len() || m.len() != eta.len() {
            return Err(Error::Shape("reparameterization lengths differ".into()));
        }
        let half = T::lit(0.5);
        let data = m
            .data
            .iter()
            .zip(&lv.data)
            .zip(&eta)
            .map(|((a, l), e)| *a + (*l * half).exp() * *e)
            .collect();
        let value = Tensor::vector(data);
        Ok(self.push(value, Op::Reparam { mu, log_var, eta }))
    }

    /// Reverse sweep from one or more `(node, dL/dnode)` seeds.
    pub fn backward(&self, seeds: &[(NodeId, &[T])]) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        let mut pgrads = self.params.zero_grads();
        for (id, g) in seeds {
            if g.len() != self.nodes[id.0].value.len() {
                return Err(Error::Shape(format!(
                    "seed gradient length {} for node of length {}",
                    g.len(),
                    self.nodes[id.0].value.len()
                )));
            }
            add_into(&mut grads[id.0], g);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout, &mut grads, &mut pgrads);
            grads[i] = Some(gout);
        }
        Ok(Gradients {
            nodes: grads,
            params: pgrads,
        })
    }

    fn backprop_node(
        &self,
        i: usize,
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
        pgrads: &mut Grads<T>,
    ) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (r, p) = (geom.rows(), geom.cols());
                let cout = node.value.shape[0];
                let xin = &self.nodes[x.0].value.data;
                let bsrc: &[T] = if geom.is_pointwise() { xin } else { cols };
                // dW[co, r] += Σ_p gout[co, p] · cols[r, p]
                T::gemm(
                    cout,
                    p,
                    r,
                    T::one(),
                    gout,
                    p as isize,
                    1,
                    bsrc,
                    1,
                    p as isize,
                    T::one(),
                    pgrads.get_mut(*w),
                    r as isize,
                    1,
                );
                if let Some(b) = b {
                    let gb = pgrads.get_mut(*b);
                    for (co, row) in gout.chunks(p).enumerate() {
                        gb[co] += row.iter().copied().sum::<T>();
                    }
                }
                // dcols = Wᵀ · gout
                let kernel = &self.params.get(*w).data;
                let mut dcols = vec![T::zero(); r * p];
                T::gemm(
                    r,
                    cout,
                    p,
                    T::one(),
                    kernel,
                    1,
                    r as isize,
                    gout,
                    p as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    p as isize,
                    1,
                );
                let dx = if geom.is_pointwise() {
                    dcols
                } else {
                    geom.col2im(&dcols)
                };
                add_into(&mut grads[x.0], &dx);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for id in xs {
                    let n = self.nodes[id.0].value.len();
                    add_into(&mut grads[id.0], &gout[off..off + n]);
                    off += n;
                }
            }
            Op::Add(a, b) => {
                add_into(&mut grads[a.0], gout);
                add_into(&mut grads[b.0], gout);
            }
            Op::Sub(a, b) => {
                add_into(&mut grads[a.0], gout);
                let neg: Vec<T> = gout.iter().map(|g| -*g).collect();
                add_into(&mut grads[b.0], &neg);
            }
            Op::ChannelNorm {
                x,
                scale,
                xhat,
                inv_std,
            } => {
                let (c, h, w) = (
                    node.value.shape[0],
                    node.value.shape[1],
                    node.value.shape[2],
                );
                let n = h * w;
                let nt = T::lit(n as f64);
                let mut dx = vec![T::zero(); c * n];
                for ch in 0..c {
                    let go = &gout[ch * n..(ch + 1) * n];
                    let xh = &xhat[ch * n..(ch + 1) * n];
                    let gamma = match scale {
                        Some((g, b)) => {
                            let dg: T = go.iter().zip(xh).map(|(a, b)| *a * *b).sum();
                            let db: T = go.iter().copied().sum();
                            pgrads.get_mut(*g)[ch] += dg;
                            pgrads.get_mut(*b)[ch] += db;
                            self.params.get(*g).data[ch]
                        }
                        None => T::one(),
                    };
                    let mean_dy = go.iter().copied().sum::<T>() * gamma / nt;
                    let mean_dy_xh =
                        go.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() * gamma / nt;
                    for ((d, g), xv) in dx[ch * n..(ch + 1) * n].iter_mut().zip(go).zip(xh) {
                        *d = inv_std[ch] * (*g * gamma - mean_dy - *xv * mean_dy_xh);
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::LeakyRelu { x, slope } => {
                let xin = &self.nodes[x.0].value.data;
                let dx: Vec<T> = gout
                    .iter()
                    .zip(xin)
                    .map(|(g, a)| if *a >= T::zero() { *g } else { *g * *slope })
                    .collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Filter { x, filter } => {
                let dx = filter.backward(&self.nodes[x.0].value.shape, gout);
                add_into(&mut grads[x.0], &dx);
            }
            Op::Upsample { x, factor } => {
                let (c, h, w) = self.nodes[x.0].value.chw().expect("rank-3 input");
                let (ho, wo) = (h * factor, w * factor);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for xo in 0..wo {
                            dx[(ch * h + y / factor) * w + xo / factor] +=
                                gout[(ch * ho + y) * wo + xo];
                        }
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::GlobalAvgPool(x) => {
                let (c, h, w) = self.nodes[x.0].value.chw().expect("rank-3 input");
                let n = h * w;
                let inv = T::one() / T::lit(n as f64);
                let mut dx = vec![T::zero(); c * n];
                for ch in 0..c {
                    dx[ch * n..(ch + 1) * n].fill(gout[ch] * inv);
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Linear { x, w, b } => {
                let xin = &self.nodes[x.0].value.data;
                let wt = self.params.get(*w);
                let (m, n) = (wt.shape[0], wt.shape[1]);
                // dW = gout ⊗ x
                T::gemm(
                    m,
                    1,
                    n,
                    T::one(),
                    gout,
                    1,
                    1,
                    xin,
                    n as isize,
                    1,
                    T::one(),
                    pgrads.get_mut(*w),
                    n as isize,
                    1,
                );
                pgrads
                    .get_mut(*b)
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(a, g)| *a += *g);
                let mut dx = vec![T::zero(); n];
                T::gemm(
                    n,
                    m,
                    1,
                    T::one(),
                    &wt.data,
                    1,
                    n as isize,
                    gout,
                    1,
                    1,
                    T::zero(),
                    &mut dx,
                    1,
                    1,
                );
                add_into(&mut grads[x.0], &dx);
            }
            Op::Reshape(x) => add_into(&mut grads[x.0], gout),
            Op::Clamp { x, lo, hi } => {
                let xin = &self.nodes[x.0].value.data;
                let dx: Vec<T> = gout
                    .iter()
                    .zip(xin)
                    .map(|(g, a)| {
                        if *a >= *lo && *a <= *hi {
                            *g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Reparam { mu, log_var, eta } => {
                add_into(&mut grads[mu.0], gout);
                let lv = &self.nodes[log_var.0].value.data;
                let half = T::lit(0.5);
                let dlv: Vec<T> = gout
                    .iter()
                    .zip(lv)
                    .zip(eta)
                    .map(|((g, l), e)| *g * *e * half * (*l * half).exp())
                    .collect();
                add_into(&mut grads[log_var.0], &dlv);
            }
        }
    }
}
