//! Fixed (non-learnable) depthwise filters with reflect padding.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Reflect an index into `0..n` without repeating the edge sample (`-1 → 1`, `n → n−2`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Normalized sampled 1-D Gaussian of odd length.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    assert!(size % 2 == 1, "Gaussian kernel size must be odd");
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// `[1, 2, 1] / 4`.
pub fn binomial_taps() -> Vec<f64> {
    vec![0.25, 0.5, 0.25]
}

/// Separable `k×k` depthwise filter applied with reflect padding, then subsampled by `stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseFilter {
    pub size: usize,
    pub stride: usize,
    /// Row-major `size×size` weights (outer product of the 1-D taps).
    pub weights: Vec<f64>,
}

impl DepthwiseFilter {
    pub fn separable(taps: &[f64], stride: usize) -> Self {
        let size = taps.len();
        let weights = taps
            .iter()
            .flat_map(|a| taps.iter().map(move |b| a * b))
            .collect();
        Self {
            size,
            stride,
            weights,
        }
    }

    pub fn gaussian(size: usize, sigma: f64) -> Self {
        Self::separable(&gaussian_taps(size, sigma), 1)
    }

    /// Binomial blur followed by stride-2 subsampling at even indices.
    pub fn blurpool() -> Self {
        Self::separable(&binomial_taps(), 2)
    }

    fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let r = self.size / 2;
        if h <= r || w <= r {
            return Err(Error::Shape(format!(
                "{h}x{w} input too small for reflect padding of radius {r}"
            )));
        }
        if self.stride > 1 && (h % self.stride != 0 || w % self.stride != 0) {
            return Err(Error::Shape(format!(
                "spatial dims {h}x{w} not divisible by stride {}",
                self.stride
            )));
        }
        Ok((h / self.stride, w / self.stride))
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = x.chw()?;
        let (ho, wo) = self.out_dims(h, w)?;
        let r = (self.size / 2) as isize;
        let k: Vec<T> = self.weights.iter().map(|v| T::lit(*v)).collect();
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            let src = &x.data[ch * h * w..(ch + 1) * h * w];
            let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let (cy, cx) = ((oy * self.stride) as isize, (ox * self.stride) as isize);
                    let mut acc = T::zero();
                    for dy in 0..self.size {
                        let sy = reflect(cy + dy as isize - r, h);
                        for dx in 0..self.size {
                            let sx = reflect(cx + dx as isize - r, w);
                            acc += k[dy * self.size + dx] * src[sy * w + sx];
                        }
                    }
                    dst[oy * wo + ox] = acc;
                }
            }
        }
        Tensor::new(vec![c, ho, wo], out)
    }

    /// Adjoint of [`forward`](Self::forward): maps an output gradient to an input gradient.
    pub fn backward<T: Scalar>(&self, input_shape: &[usize], gout: &[T]) -> Vec<T> {
        let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
        let (ho, wo) = (h / self.stride, w / self.stride);
        let r = (self.size / 2) as isize;
        let k: Vec<T> = self.weights.iter().map(|v| T::lit(*v)).collect();
        let mut gin = vec![T::zero(); c * h * w];
        for ch in 0..c {
            let g = &gout[ch * ho * wo..(ch + 1) * ho * wo];
            let dst = &mut gin[ch * h * w..(ch + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let go = g[oy * wo + ox];
                    let (cy, cx) = ((oy * self.stride) as isize, (ox * self.stride) as isize);
                    for dy in 0..self.size {
                        let sy = reflect(cy + dy as isize - r, h);
                        for dx in 0..self.size {
                            let sx = reflect(cx + dx as isize - r, w);
                            dst[sy * w + sx] += k[dy * self.size + dx] * go;
                        }
                    }
                }
            }
        }
        gin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 5), 3);
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let k = DepthwiseFilter::gaussian(5, 1.0);
        assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let mut x = Tensor::<f64>::zeros(vec![1, 9, 9]);
        x.data[4 * 9 + 4] = 1.0;
        let f = DepthwiseFilter::gaussian(5, 1.0);
        let y = f.forward(&x).unwrap();
        for dy in 0..5 {
            for dx in 0..5 {
                let v = y.data[(2 + dy) * 9 + 2 + dx];
                assert!((v - f.weights[dy * 5 + dx]).abs() < 1e-15);
            }
        }
        assert_eq!(y.data[0], 0.0);
    }

    #[test]
    fn unit_dc_gain() {
        for f in [
            DepthwiseFilter::gaussian(5, 1.0),
            DepthwiseFilter::blurpool(),
        ] {
            let x = Tensor::<f64>::filled(vec![2, 32, 32], 0.37);
            let y = f.forward(&x).unwrap();
            assert!(y.data.iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn blurpool_shapes_and_stripe_cancellation() {
        let f = DepthwiseFilter::blurpool();
        let x = Tensor::<f64>::filled(vec![1, 32, 32], 1.0);
        assert_eq!(f.forward(&x).unwrap().shape, vec![1, 16, 16]);
        // columns alternate +1/−1: each row tap gives (−1 + 2 − 1)/4 = 0
        let data = (0..64)
            .map(|i| if (i % 8) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let x = Tensor::<f64>::new(vec![1, 8, 8], data).unwrap();
        let y = f.forward(&x).unwrap();
        assert!(y.data.iter().all(|v| v.abs() < 1e-15), "{:?}", y.data);
        let odd = Tensor::<f64>::zeros(vec![1, 7, 8]);
        assert!(matches!(f.forward(&odd), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_is_the_adjoint() {
        // <F x, g> == <x, Fᵀ g>
        let f = DepthwiseFilter::blurpool();
        let x: Vec<f64> = (0..2 * 8 * 8)
            .map(|i| ((i * 37 % 11) as f64) - 5.0)
            .collect();
        let g: Vec<f64> = (0..2 * 4 * 4)
            .map(|i| ((i * 13 % 7) as f64) - 3.0)
            .collect();
        let xt = Tensor::new(vec![2, 8, 8], x.clone()).unwrap();
        let fx = f.forward(&xt).unwrap();
        let lhs: f64 = fx.data.iter().zip(&g).map(|(a, b)| a * b).sum();
        let ftg = f.backward(&[2, 8, 8], &g);
        let rhs: f64 = x.iter().zip(&ftg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
