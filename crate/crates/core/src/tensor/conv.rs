//! 2-D convolution (cross-correlation, no kernel flip) and its transpose, both
//! lowered to im2col + GEMM.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Square kernel geometry with symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    /// Odd kernel with `pad = ⌊k/2⌋`, so output length is `⌈in/stride⌉`.
    pub fn same(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn out_len(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "kernel {} stride {} pad {} on {h}x{w}",
                self.kernel, self.stride, self.pad
            )));
        }
        Ok(())
    }
}

/// Unfolds one `c×h×w` item into a `(c·k·k) × (ho·wo)` matrix.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: Geometry, col: &mut [T]) {
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    let k = g.kernel;
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds the matrix back, summing overlaps into `x`.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, g: Geometry, x: &mut [T]) {
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    let k = g.kernel;
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_weights(len: usize, expect: usize, what: &str) -> Result<()> {
    if len != expect {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {len} weights, expected {expect}"
        )));
    }
    Ok(())
}

/// Forward convolution. `weight` is `[out_c, in_c, k, k]`, `bias` is `[out_c]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: &[T], out_c: usize, g: Geometry) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    g.validate(h, w)?;
    let kk = c * g.kernel * g.kernel;
    check_weights(weight.len(), out_c * kk, "conv2d weight")?;
    check_weights(bias.len(), out_c, "conv2d bias")?;
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    let mut y = Tensor::zeros([n, out_c, ho, wo]);
    let mut col = vec![T::zero(); kk * ho * wo];
    for b in 0..n {
        im2col(x.item(b), c, h, w, g, &mut col);
        let out = y.item_mut(b);
        for (oc, chunk) in out.chunks_exact_mut(ho * wo).enumerate() {
            chunk.fill(bias[oc]);
        }
        T::gemm(out_c, kk, ho * wo, weight, false, &col, false, out, true);
    }
    Ok(y)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    out_c: usize,
    g: Geometry,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    dy.expect_shape([n, out_c, ho, wo], "conv2d output gradient")?;
    let kk = c * g.kernel * g.kernel;
    check_weights(weight.len(), out_c * kk, "conv2d weight")?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![T::zero(); out_c * kk];
    let mut db = vec![T::zero(); out_c];
    let mut col = vec![T::zero(); kk * ho * wo];
    let mut dcol = vec![T::zero(); kk * ho * wo];
    for b in 0..n {
        let g_out = dy.item(b);
        for (oc, chunk) in g_out.chunks_exact(ho * wo).enumerate() {
            db[oc] = chunk.iter().fold(db[oc], |acc, &v| acc + v);
        }
        im2col(x.item(b), c, h, w, g, &mut col);
        // dW += dY · colᵀ
        T::gemm(out_c, ho * wo, kk, g_out, false, &col, true, &mut dw, true);
        // dcol = Wᵀ · dY
        T::gemm(kk, out_c, ho * wo, weight, true, g_out, false, &mut dcol, false);
        col2im(&dcol, c, h, w, g, dx.item_mut(b));
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// Output length of a transpose convolution that scales by exactly `stride`.
pub fn transpose_out_len(input: usize, stride: usize) -> usize {
    input * stride
}

/// Transpose convolution producing `stride×` larger output (output padding
/// `stride − 1` with `pad = ⌊k/2⌋`). `weight` is `[in_c, out_c, k, k]`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    out_c: usize,
    g: Geometry,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (transpose_out_len(h, g.stride), transpose_out_len(w, g.stride));
    g.validate(ho, wo)?;
    debug_assert_eq!(g.out_len(ho), h);
    let kk = out_c * g.kernel * g.kernel;
    check_weights(weight.len(), c * kk, "conv_transpose2d weight")?;
    check_weights(bias.len(), out_c, "conv_transpose2d bias")?;
    let mut y = Tensor::zeros([n, out_c, ho, wo]);
    let mut col = vec![T::zero(); kk * h * w];
    for b in 0..n {
        // col = Wᵀ · x
        T::gemm(kk, c, h * w, weight, true, x.item(b), false, &mut col, false);
        let out = y.item_mut(b);
        for (oc, chunk) in out.chunks_exact_mut(ho * wo).enumerate() {
            chunk.fill(bias[oc]);
        }
        col2im(&col, out_c, ho, wo, g, out);
    }
    Ok(y)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    out_c: usize,
    g: Geometry,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (transpose_out_len(h, g.stride), transpose_out_len(w, g.stride));
    dy.expect_shape([n, out_c, ho, wo], "conv_transpose2d output gradient")?;
    let kk = out_c * g.kernel * g.kernel;
    check_weights(weight.len(), c * kk, "conv_transpose2d weight")?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![T::zero(); c * kk];
    let mut db = vec![T::zero(); out_c];
    let mut dcol = vec![T::zero(); kk * h * w];
    for b in 0..n {
        let g_out = dy.item(b);
        for (oc, chunk) in g_out.chunks_exact(ho * wo).enumerate() {
            db[oc] = chunk.iter().fold(db[oc], |acc, &v| acc + v);
        }
        im2col(g_out, out_c, ho, wo, g, &mut dcol);
        // dx = W · dcol
        T::gemm(c, kk, h * w, weight, false, &dcol, false, dx.item_mut(b), false);
        // dW += x · dcolᵀ
        T::gemm(c, h * w, kk, x.item(b), false, &dcol, true, &mut dw, true);
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::*;

    #[test]
    fn identity_kernel() {
        let x = random_tensor::<f64>([2, 3, 5, 4], 1);
        // 1×1 identity mixing matrix
        let mut wgt = vec![0.0; 9];
        for i in 0..3 {
            wgt[i * 3 + i] = 1.0;
        }
        let y = conv2d(&x, &wgt, &[0.0; 3], 3, Geometry::same(1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_on_constant() {
        let x = Tensor::<f64>::from_fn([1, 1, 5, 5], |_| 2.5);
        let y = conv2d(&x, &[1.0; 9], &[0.0], 1, Geometry::same(3, 1)).unwrap();
        assert_eq!(y.at([0, 0, 2, 2]), 9.0 * 2.5);
        assert_eq!(y.at([0, 0, 0, 0]), 4.0 * 2.5);
        assert_eq!(y.at([0, 0, 0, 2]), 6.0 * 2.5);
    }

    #[test]
    fn strided_shapes() {
        let x = Tensor::<f32>::zeros([1, 2, 64, 64]);
        let y = conv2d(&x, &vec![0.0; 4 * 2 * 9], &[0.0; 4], 4, Geometry::same(3, 2)).unwrap();
        assert_eq!(y.shape(), [1, 4, 32, 32]);
        let x = Tensor::<f32>::zeros([1, 2, 7, 5]);
        let y = conv2d(&x, &vec![0.0; 2 * 2 * 9], &[0.0; 2], 2, Geometry::same(3, 2)).unwrap();
        assert_eq!(y.shape(), [1, 2, 4, 3]);
        assert!(conv2d(&x, &[0.0; 3], &[0.0; 2], 2, Geometry::same(3, 2)).is_err());
    }

    #[test]
    fn transpose_shape_and_delta() {
        let x = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| 1.0);
        let y = conv_transpose2d(&x, &vec![0.0; 5 * 9], &[0.0; 5], 5, Geometry::same(3, 2)).unwrap();
        assert_eq!(y.shape(), [1, 5, 8, 8]);

        // Centre-tap delta: each input lands on even coordinates only.
        let x = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut delta = [0.0; 9];
        delta[4] = 1.0;
        let y = conv_transpose2d(&x, &delta, &[0.0], 1, Geometry::same(3, 2)).unwrap();
        #[rustfmt::skip]
        let expect = [
            1.0, 0.0, 2.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            3.0, 0.0, 4.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(y.data(), &expect);

        // All-ones kernel: every output gathers the inputs whose 3×3 footprint
        // (centred at 2i, 2j) covers it. Enumerated by hand.
        let y = conv_transpose2d(&x, &[1.0; 9], &[0.0], 1, Geometry::same(3, 2)).unwrap();
        #[rustfmt::skip]
        let expect = [
            1.0, 3.0, 2.0, 2.0,
            4.0, 10.0, 6.0, 6.0,
            3.0, 7.0, 4.0, 4.0,
            3.0, 7.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..4 {
            let x = random_tensor::<f64>([2, 3, 5, 5], seed);
            let g = Geometry::same(3, 1 + (seed as usize % 2));
            let wgt = random_vec(4 * 3 * 9, seed + 100);
            let bias = random_vec(4, seed + 200);
            let probe = random_tensor::<f64>(
                [2, 4, g.out_len(5), g.out_len(5)],
                seed + 300,
            );
            let f = |x: &Tensor<f64>, w: &[f64], b: &[f64]| {
                dot(&conv2d(x, w, b, 4, g).unwrap(), &probe)
            };
            let grads = conv2d_backward(&x, &wgt, 4, g, &probe).unwrap();
            check_gradient(grads.input.data(), &numeric_grad(x.data(), |v| {
                f(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &wgt, &bias)
            }));
            check_gradient(&grads.weight, &numeric_grad(&wgt, |v| f(&x, v, &bias)));
            check_gradient(&grads.bias, &numeric_grad(&bias, |v| f(&x, &wgt, v)));
        }
    }

    #[test]
    fn transpose_gradients_match_finite_differences() {
        for seed in 0..4 {
            let x = random_tensor::<f64>([2, 3, 3, 3], seed);
            let g = Geometry::same(3, 2);
            let wgt = random_vec(3 * 2 * 9, seed + 100);
            let bias = random_vec(2, seed + 200);
            let probe = random_tensor::<f64>([2, 2, 6, 6], seed + 300);
            let f = |x: &Tensor<f64>, w: &[f64], b: &[f64]| {
                dot(&conv_transpose2d(x, w, b, 2, g).unwrap(), &probe)
            };
            let grads = conv_transpose2d_backward(&x, &wgt, 2, g, &probe).unwrap();
            check_gradient(grads.input.data(), &numeric_grad(x.data(), |v| {
                f(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &wgt, &bias)
            }));
            check_gradient(&grads.weight, &numeric_grad(&wgt, |v| f(&x, v, &bias)));
            check_gradient(&grads.bias, &numeric_grad(&bias, |v| f(&x, &wgt, v)));
        }
    }
}
