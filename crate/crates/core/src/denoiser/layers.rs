//! Network layers with hand-written backward passes.
//!
//! Every layer reads its weights from a flat [`Params`] store and writes
//! weight gradients into a store of the same layout. Forward passes return
//! the cache their backward pass needs.

use super::scalar::{gemm, Scalar};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// `U(-bound, bound)`
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub(crate) init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Default, Clone)]
pub(crate) struct Layout {
    pub specs: Vec<ParamSpec>,
}

impl Layout {
    pub fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }
}

/// Flat parameter (or gradient) storage, one buffer per [`ParamSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub(crate) values: Vec<Vec<T>>,
}

impl<T: Scalar> Params<T> {
    pub(crate) fn zeros(specs: &[ParamSpec]) -> Self {
        Params {
            values: specs.iter().map(|s| vec![T::zero(); s.numel()]).collect(),
        }
    }

    pub fn tensors(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.values.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.values.iter_mut().flatten()
    }

    pub(crate) fn get(&self, id: usize) -> &[T] {
        &self.values[id]
    }

    pub(crate) fn get_mut(&mut self, id: usize) -> &mut [T] {
        &mut self.values[id]
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid(v))
}

pub(crate) fn silu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        let s = sigmoid(v);
        *d *= s * (T::one() + v * (T::one() - s));
    }
    dx
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    weight: usize,
    bias: usize,
    pub cin: usize,
    pub cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new(
        layout: &mut Layout,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        zero_init: bool,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let init = if zero_init { Init::Zeros } else { Init::Uniform(bound) };
        let weight = layout.add(format!("{name}.weight"), vec![cout, cin, k, k], init);
        let bias = layout.add(format!("{name}.bias"), vec![cout], init);
        Conv2d {
            weight,
            bias,
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
        }
    }

    fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.k) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Scalar>(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        let line = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        for ci in 0..self.cin {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                line[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (ho, wo) = (self.out_size(x.h), self.out_size(x.w));
        let (weight, bias) = (p.get(self.weight), p.get(self.bias));
        let ckk = self.cin * self.k * self.k;
        let mut out = Tensor::zeros(x.n, self.cout, ho, wo);
        let mut cols = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); ckk * ho * wo]
        };
        for i in 0..x.n {
            let dst = out.sample_mut(i);
            for (co, chunk) in dst.chunks_exact_mut(ho * wo).enumerate() {
                chunk.fill(bias[co]);
            }
            let rhs: &[T] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), x.h, x.w, &mut cols);
                &cols
            };
            gemm(false, false, self.cout, ho * wo, ckk, weight, rhs, T::one(), dst);
        }
        out
    }

    /// Accumulates weight gradients and returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        g: &mut Params<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let (ho, wo) = (dy.h, dy.w);
        let ckk = self.cin * self.k * self.k;
        let weight = p.get(self.weight);
        let mut dx = x.zeros_like();
        let mut cols = vec![T::zero(); if self.is_pointwise() { 0 } else { ckk * ho * wo }];
        let mut dcols = vec![T::zero(); ckk * ho * wo];
        for i in 0..x.n {
            let dyi = dy.sample(i);
            {
                let db = g.get_mut(self.bias);
                for (co, chunk) in dyi.chunks_exact(ho * wo).enumerate() {
                    db[co] += chunk.iter().copied().sum::<T>();
                }
            }
            let rhs: &[T] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), x.h, x.w, &mut cols);
                &cols
            };
            gemm(false, true, self.cout, ckk, ho * wo, dyi, rhs, T::one(), g.get_mut(self.weight));
            if self.is_pointwise() {
                gemm(true, false, ckk, ho * wo, self.cout, weight, dyi, T::zero(), dx.sample_mut(i));
            } else {
                gemm(true, false, ckk, ho * wo, self.cout, weight, dyi, T::zero(), &mut dcols);
                self.col2im(&dcols, x.h, x.w, dx.sample_mut(i));
            }
        }
        dx
    }
}

/// Fully connected layer over `(n, features, 1, 1)` tensors.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    weight: usize,
    bias: usize,
    pub fin: usize,
    pub fout: usize,
}

impl Linear {
    pub fn new(layout: &mut Layout, name: &str, fin: usize, fout: usize) -> Self {
        let bound = 1.0 / (fin as f64).sqrt();
        let weight = layout.add(format!("{name}.weight"), vec![fout, fin], Init::Uniform(bound));
        let bias = layout.add(format!("{name}.bias"), vec![fout], Init::Uniform(bound));
        Linear {
            weight,
            bias,
            fin,
            fout,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.sample_len(), self.fin, "linear input features");
        let mut out = Tensor::zeros(x.n, self.fout, 1, 1);
        let bias = p.get(self.bias);
        for row in out.data.chunks_exact_mut(self.fout) {
            row.copy_from_slice(bias);
        }
        gemm(false, true, x.n, self.fout, self.fin, &x.data, p.get(self.weight), T::one(), &mut out.data);
        out
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        g: &mut Params<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        {
            let db = g.get_mut(self.bias);
            for row in dy.data.chunks_exact(self.fout) {
                for (b, &d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
        }
        gemm(true, false, self.fout, self.fin, x.n, &dy.data, &x.data, T::one(), g.get_mut(self.weight));
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        gemm(false, false, x.n, self.fin, self.fout, &dy.data, p.get(self.weight), T::zero(), &mut dx.data);
        dx
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GroupNorm {
    gamma: usize,
    beta: usize,
    groups: usize,
    channels: usize,
}

pub(crate) struct GroupNormCache<T> {
    xhat: Tensor<T>,
    rstd: Vec<T>,
}

const NORM_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new(layout: &mut Layout, name: &str, groups: usize, channels: usize) -> Self {
        assert!(channels % groups == 0, "groups must divide channels");
        let gamma = layout.add(format!("{name}.weight"), vec![channels], Init::Ones);
        let beta = layout.add(format!("{name}.bias"), vec![channels], Init::Zeros);
        GroupNorm {
            gamma,
            beta,
            groups,
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> (Tensor<T>, GroupNormCache<T>) {
        assert_eq!(x.c, self.channels, "group norm channels");
        let per_group = (self.channels / self.groups) * x.plane();
        let (gamma, beta) = (p.get(self.gamma), p.get(self.beta));
        let mut xhat = x.zeros_like();
        let mut out = x.zeros_like();
        let mut rstd = Vec::with_capacity(x.n * self.groups);
        let m = T::of(per_group as f64);
        let eps = T::of(NORM_EPS);
        for (gi, ((src, xh), dst)) in x
            .data
            .chunks_exact(per_group)
            .zip(xhat.data.chunks_exact_mut(per_group))
            .zip(out.data.chunks_exact_mut(per_group))
            .enumerate()
        {
            let mean = src.iter().copied().sum::<T>() / m;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            let c0 = (gi % self.groups) * (self.channels / self.groups);
            for (j, ((&v, h), o)) in src.iter().zip(xh.iter_mut()).zip(dst.iter_mut()).enumerate() {
                let c = c0 + j / x.plane();
                *h = (v - mean) * r;
                *o = *h * gamma[c] + beta[c];
            }
        }
        (out, GroupNormCache { xhat, rstd })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        g: &mut Params<T>,
        cache: &GroupNormCache<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let plane = dy.plane();
        let cpg = self.channels / self.groups;
        let per_group = cpg * plane;
        let gamma = p.get(self.gamma).to_vec();
        let mut dgamma = vec![T::zero(); self.channels];
        let mut dbeta = vec![T::zero(); self.channels];
        let mut dx = dy.zeros_like();
        let m = T::of(per_group as f64);
        let mut dxhat = vec![T::zero(); per_group];
        for (gi, ((d, xh), out)) in dy
            .data
            .chunks_exact(per_group)
            .zip(cache.xhat.data.chunks_exact(per_group))
            .zip(dx.data.chunks_exact_mut(per_group))
            .enumerate()
        {
            let c0 = (gi % self.groups) * cpg;
            let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
            for j in 0..per_group {
                let c = c0 + j / plane;
                dgamma[c] += d[j] * xh[j];
                dbeta[c] += d[j];
                dxhat[j] = d[j] * gamma[c];
                sum_d += dxhat[j];
                sum_dx += dxhat[j] * xh[j];
            }
            let r = cache.rstd[gi];
            for j in 0..per_group {
                out[j] = r * (dxhat[j] - sum_d / m - xh[j] * sum_dx / m);
            }
        }
        for (a, b) in g.get_mut(self.gamma).iter_mut().zip(dgamma) {
            *a += b;
        }
        for (a, b) in g.get_mut(self.beta).iter_mut().zip(dbeta) {
            *a += b;
        }
        dx
    }
}

/// Residual block with timestep conditioning.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

pub(crate) struct ResBlockCache<T> {
    x: Tensor<T>,
    norm1: GroupNormCache<T>,
    a1: Tensor<T>,
    s1: Tensor<T>,
    norm2: GroupNormCache<T>,
    a2: Tensor<T>,
    s2: Tensor<T>,
}

impl ResBlock {
    pub fn new(layout: &mut Layout, name: &str, cin: usize, cout: usize, temb: usize, groups: usize) -> Self {
        ResBlock {
            norm1: GroupNorm::new(layout, &format!("{name}.norm1"), groups, cin),
            conv1: Conv2d::new(layout, &format!("{name}.conv1"), cin, cout, 3, 1, false),
            time_proj: Linear::new(layout, &format!("{name}.time_proj"), temb, cout),
            norm2: GroupNorm::new(layout, &format!("{name}.norm2"), groups, cout),
            conv2: Conv2d::new(layout, &format!("{name}.conv2"), cout, cout, 3, 1, true),
            skip: (cin != cout).then(|| Conv2d::new(layout, &format!("{name}.skip"), cin, cout, 1, 1, false)),
        }
    }

    /// `temb_act` is the SiLU-activated timestep embedding, `(n, temb, 1, 1)`.
    pub fn forward<T: Scalar>(
        &self,
        p: &Params<T>,
        x: Tensor<T>,
        temb_act: &Tensor<T>,
    ) -> (Tensor<T>, ResBlockCache<T>) {
        let (a1, norm1) = self.norm1.forward(p, &x);
        let s1 = silu(&a1);
        let mut h = self.conv1.forward(p, &s1);
        let e = self.time_proj.forward(p, temb_act);
        let plane = h.plane();
        for (chunk, &ev) in h.data.chunks_exact_mut(plane).zip(e.data.iter()) {
            for v in chunk {
                *v += ev;
            }
        }
        let (a2, norm2) = self.norm2.forward(p, &h);
        let s2 = silu(&a2);
        let mut out = self.conv2.forward(p, &s2);
        match &self.skip {
            Some(skip) => out.add_assign(&skip.forward(p, &x)),
            None => out.add_assign(&x),
        }
        let cache = ResBlockCache {
            x,
            norm1,
            a1,
            s1,
            norm2,
            a2,
            s2,
        };
        (out, cache)
    }

    /// Returns the input gradient and accumulates into `d_temb_act`.
    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        g: &mut Params<T>,
        cache: &ResBlockCache<T>,
        temb_act: &Tensor<T>,
        dy: &Tensor<T>,
        d_temb_act: &mut Tensor<T>,
    ) -> Tensor<T> {
        let ds2 = self.conv2.backward(p, g, &cache.s2, dy);
        let da2 = silu_backward(&cache.a2, &ds2);
        let dh = self.norm2.backward(p, g, &cache.norm2, &da2);
        let plane = dh.plane();
        let de = Tensor::from_vec(
            dh.n,
            dh.c,
            1,
            1,
            dh.data.chunks_exact(plane).map(|c| c.iter().copied().sum::<T>()).collect(),
        );
        d_temb_act.add_assign(&self.time_proj.backward(p, g, temb_act, &de));
        let ds1 = self.conv1.backward(p, g, &cache.s1, &dh);
        let da1 = silu_backward(&cache.a1, &ds1);
        let mut dx = self.norm1.backward(p, g, &cache.norm1, &da1);
        match &self.skip {
            Some(skip) => dx.add_assign(&skip.backward(p, g, &cache.x, dy)),
            None => dx.add_assign(dy),
        }
        dx
    }
}

/// Multi-head self-attention over spatial positions, with a residual connection.
#[derive(Debug, Clone)]
pub(crate) struct AttentionBlock {
    norm: GroupNorm,
    qkv: Conv2d,
    proj: Conv2d,
    heads: usize,
    channels: usize,
}

pub(crate) struct AttentionCache<T> {
    norm: GroupNormCache<T>,
    h: Tensor<T>,
    qkv: Tensor<T>,
    /// Softmax probabilities, `(n, heads, L, L)` flattened.
    probs: Vec<T>,
    o: Tensor<T>,
}

impl AttentionBlock {
    pub fn new(layout: &mut Layout, name: &str, channels: usize, heads: usize, groups: usize) -> Self {
        assert!(channels % heads == 0, "heads must divide channels");
        AttentionBlock {
            norm: GroupNorm::new(layout, &format!("{name}.norm"), groups, channels),
            qkv: Conv2d::new(layout, &format!("{name}.qkv"), channels, 3 * channels, 1, 1, false),
            proj: Conv2d::new(layout, &format!("{name}.proj"), channels, channels, 1, 1, true),
            heads,
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: Tensor<T>) -> (Tensor<T>, AttentionCache<T>) {
        let (h, norm) = self.norm.forward(p, &x);
        let qkv = self.qkv.forward(p, &h);
        let l = x.plane();
        let c = self.channels;
        let d = c / self.heads;
        let scale = T::of(1.0 / (d as f64).sqrt());
        let mut probs = vec![T::zero(); x.n * self.heads * l * l];
        let mut o = x.zeros_like();
        for i in 0..x.n {
            let s = qkv.sample(i);
            let oi = o.sample_mut(i);
            for head in 0..self.heads {
                let q = &s[head * d * l..(head + 1) * d * l];
                let k = &s[(c + head * d) * l..(c + (head + 1) * d) * l];
                let v = &s[(2 * c + head * d) * l..(2 * c + (head + 1) * d) * l];
                let pm = &mut probs[(i * self.heads + head) * l * l..(i * self.heads + head + 1) * l * l];
                gemm(true, false, l, l, d, q, k, T::zero(), pm);
                for row in pm.chunks_exact_mut(l) {
                    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v * scale));
                    let mut sum = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v * scale - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v = *v / sum;
                    }
                }
                gemm(false, true, d, l, l, v, pm, T::zero(), &mut oi[head * d * l..(head + 1) * d * l]);
            }
        }
        let mut out = self.proj.forward(p, &o);
        out.add_assign(&x);
        (out, AttentionCache { norm, h, qkv, probs, o })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        g: &mut Params<T>,
        cache: &AttentionCache<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let d_o = self.proj.backward(p, g, &cache.o, dy);
        let l = dy.plane();
        let c = self.channels;
        let d = c / self.heads;
        let scale = T::of(1.0 / (d as f64).sqrt());
        let mut dqkv = cache.qkv.zeros_like();
        let mut dp = vec![T::zero(); l * l];
        for i in 0..dy.n {
            let s = cache.qkv.sample(i);
            let doi = d_o.sample(i);
            let dsi = dqkv.sample_mut(i);
            for head in 0..self.heads {
                let q = &s[head * d * l..(head + 1) * d * l];
                let k = &s[(c + head * d) * l..(c + (head + 1) * d) * l];
                let v = &s[(2 * c + head * d) * l..(2 * c + (head + 1) * d) * l];
                let pm = &cache.probs[(i * self.heads + head) * l * l..(i * self.heads + head + 1) * l * l];
                let dout = &doi[head * d * l..(head + 1) * d * l];
                // dV = dO P
                gemm(false, false, d, l, l, dout, pm, T::zero(), &mut dsi[(2 * c + head * d) * l..(2 * c + (head + 1) * d) * l]);
                // dP = dO^T V
                gemm(true, false, l, l, d, dout, v, T::zero(), &mut dp);
                // dS = P * (dP - rowsum(dP * P)), folded with the score scale
                for (drow, prow) in dp.chunks_exact_mut(l).zip(pm.chunks_exact(l)) {
                    let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<T>();
                    for (dv, &pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot) * scale;
                    }
                }
                // dQ = K dS^T, dK = Q dS
                gemm(false, true, d, l, l, k, &dp, T::zero(), &mut dsi[head * d * l..(head + 1) * d * l]);
                gemm(false, false, d, l, l, q, &dp, T::zero(), &mut dsi[(c + head * d) * l..(c + (head + 1) * d) * l]);
            }
        }
        let dh = self.qkv.backward(p, g, &cache.h, &dqkv);
        let mut dx = self.norm.backward(p, g, &cache.norm, &dh);
        dx.add_assign(dy);
        dx
    }
}
