use super::scalar::Scalar;

/// Dense NCHW activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Tensor { n, c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.n, self.c, self.h, self.w)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenate along channels.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shape mismatch");
        let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
        let (la, lb) = (a.sample_len(), b.sample_len());
        for i in 0..a.n {
            let dst = out.sample_mut(i);
            dst[..la].copy_from_slice(a.sample(i));
            dst[la..la + lb].copy_from_slice(b.sample(i));
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`]: split off the first `c` channels.
    pub fn split_channels(&self, c: usize) -> (Self, Self) {
        assert!(c <= self.c);
        let mut a = Tensor::zeros(self.n, c, self.h, self.w);
        let mut b = Tensor::zeros(self.n, self.c - c, self.h, self.w);
        let la = a.sample_len();
        for i in 0..self.n {
            let src = self.sample(i);
            a.sample_mut(i).copy_from_slice(&src[..la]);
            b.sample_mut(i).copy_from_slice(&src[la..]);
        }
        (a, b)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&self) -> Self {
        let (h2, w2) = (self.h * 2, self.w * 2);
        let mut out = Tensor::zeros(self.n, self.c, h2, w2);
        for (src, dst) in self
            .data
            .chunks_exact(self.plane())
            .zip(out.data.chunks_exact_mut(h2 * w2))
        {
            for y in 0..h2 {
                let row = &src[(y / 2) * self.w..(y / 2 + 1) * self.w];
                for x in 0..w2 {
                    dst[y * w2 + x] = row[x / 2];
                }
            }
        }
        out
    }

    /// Adjoint of [`Tensor::upsample2`]: sum each 2x2 block.
    pub fn upsample2_backward(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut out = Tensor::zeros(self.n, self.c, h, w);
        for (src, dst) in self
            .data
            .chunks_exact(self.plane())
            .zip(out.data.chunks_exact_mut(h * w))
        {
            for y in 0..self.h {
                for x in 0..self.w {
                    dst[(y / 2) * w + x / 2] += src[y * self.w + x];
                }
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::from_vec(2, 1, 1, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(2, 2, 1, 2, (10..18).map(f64::from).collect());
        let cat = Tensor::concat_channels(&a, &b);
        assert_eq!(&cat.data[..6], &[1.0, 2.0, 10.0, 11.0, 12.0, 13.0]);
        let (a2, b2) = cat.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn upsample_adjoint() {
        // <up(x), y> == <x, up^T(y)>
        let x = Tensor::from_vec(1, 2, 2, 2, (0..8).map(|v| v as f64 * 0.5 - 1.0).collect());
        let y = Tensor::from_vec(1, 2, 4, 4, (0..32).map(|v| (v as f64).sin()).collect());
        let lhs: f64 = x.upsample2().data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&y.upsample2_backward().data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
