//! Element-wise activations and the reshaping ops (upsample, concat, add).

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(y, dy, |y, d| if y > T::zero() { d } else { T::zero() })
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(T::tanh)
}

/// Gradient of tanh given its *output*.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(y, dy, |y, d| d * (T::one() - y * y))
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    b.expect_shape(a.shape(), "add")?;
    Ok(zip_map(a, b, |x, y| x + y))
}

/// Clamp to `[lo, hi]`.
pub fn clamp<T: Scalar>(x: &Tensor<T>, lo: T, hi: T) -> Tensor<T> {
    x.map(|v| v.max(lo).min(hi))
}

/// Passes gradient where the pre-clamp input was strictly inside `(lo, hi)`.
pub fn clamp_backward<T: Scalar>(x: &Tensor<T>, lo: T, hi: T, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(x, dy, |x, d| if x > lo && x < hi { d } else { T::zero() })
}

/// How gradient crosses a clamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampGradient {
    /// The true derivative: zero wherever the input was clamped.
    Exact,
    /// Also passes gradient at clamped samples when descent would move them
    /// back inside. Without this a sample stuck at a bound never recovers,
    /// and at high learning rates whole output channels get stuck there.
    #[default]
    Inward,
}

/// Like [`clamp_backward`], but a clamped sample keeps its gradient when a
/// descent step (`-dy`) points back into `[lo, hi]`.
pub fn clamp_backward_inward<T: Scalar>(x: &Tensor<T>, lo: T, hi: T, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(x, dy, |x, d| {
        if (x >= hi && d < T::zero()) || (x <= lo && d > T::zero()) {
            T::zero()
        } else {
            d
        }
    })
}

/// Replicates each sample into a `factor × factor` block.
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h * factor, w * factor);
    let mut y = Tensor::zeros([n, c, ho, wo]);
    for (src, dst) in x.data().chunks_exact(h * w).zip(y.data_mut().chunks_exact_mut(ho * wo)) {
        for oy in 0..ho {
            let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, d) in dst[oy * wo..(oy + 1) * wo].iter_mut().enumerate() {
                *d = row[ox / factor];
            }
        }
    }
    Ok(y)
}

pub fn upsample_nearest_backward<T: Scalar>(dy: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, ho, wo] = dy.shape();
    if factor == 0 || ho % factor != 0 || wo % factor != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{ho}x{wo} is not a multiple of {factor}"
        )));
    }
    let (h, w) = (ho / factor, wo / factor);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for (src, dst) in dy.data().chunks_exact(ho * wo).zip(dx.data_mut().chunks_exact_mut(h * w)) {
        for oy in 0..ho {
            for ox in 0..wo {
                let d = &mut dst[(oy / factor) * w + ox / factor];
                *d = *d + src[oy * wo + ox];
            }
        }
    }
    Ok(dx)
}

/// Stacks tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "concat {:?} with {:?}",
                first.shape(),
                p.shape()
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(b));
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Adjoint of [`concat_channels`].
pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [n, c, h, w] = x.shape();
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::ShapeMismatch(format!("split {c} channels into {sizes:?}")));
    }
    let mut out: Vec<Vec<T>> = sizes.iter().map(|s| Vec::with_capacity(n * s * h * w)).collect();
    for b in 0..n {
        let mut off = 0;
        for (o, &s) in out.iter_mut().zip(sizes) {
            o.extend_from_slice(&x.item(b)[off * h * w..(off + s) * h * w]);
            off += s;
        }
    }
    out.into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::from_vec([n, s, h, w], d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::*;

    #[test]
    fn activation_ranges() {
        let x = random_tensor::<f32>([1, 2, 4, 4], 1).map(|v| v * 10.0);
        assert!(relu(&x).data().iter().all(|&v| v >= 0.0));
        assert!(tanh(&x).data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn inward_clamp_gradient() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 6], vec![-2.0, -2.0, 0.5, 0.5, 2.0, 2.0]).unwrap();
        let dy = Tensor::from_vec([1, 1, 1, 6], vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(clamp_backward(&x, -1.0, 1.0, &dy).data(), [0.0, 0.0, 1.0, -1.0, 0.0, 0.0]);
        // below the range only an upward step (negative gradient) passes
        assert_eq!(clamp_backward_inward(&x, -1.0, 1.0, &dy).data(), [0.0, -1.0, 1.0, -1.0, 1.0, 0.0]);
    }

    #[test]
    fn upsample_block_constant() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
        let y = upsample_nearest(&x, 8).unwrap();
        assert_eq!(y.shape(), [1, 1, 16, 16]);
        for yy in 0..16 {
            for xx in 0..16 {
                assert_eq!(y.at([0, 0, yy, xx]), x.at([0, 0, yy / 8, xx / 8]));
            }
        }
        // stride-8 sampling recovers the input
        let sampled: Vec<f32> = (0..2)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .map(|(r, c)| y.at([0, 0, r * 8, c * 8]))
            .collect();
        assert_eq!(sampled, x.data());
    }

    #[test]
    fn concat_split_inverse() {
        let a = random_tensor::<f32>([2, 1, 3, 3], 1);
        let b = random_tensor::<f32>([2, 3, 3, 3], 2);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), [2, 4, 3, 3]);
        assert_eq!(c.at([1, 2, 1, 1]), b.at([1, 1, 1, 1]));
        let parts = split_channels(&c, &[1, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert!(concat_channels(&[&a, &random_tensor::<f32>([2, 1, 2, 3], 3)]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let shape = [2, 2, 3, 3];
            // keep ReLU inputs away from the kink
            let x = random_tensor::<f64>(shape, seed).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
            let probe = random_tensor::<f64>(shape, seed + 50);
            let t = |v: &[f64]| Tensor::from_vec(shape, v.to_vec()).unwrap();

            let y = relu(&x);
            check_gradient(
                relu_backward(&y, &probe).data(),
                &numeric_grad(x.data(), |v| dot(&relu(&t(v)), &probe)),
            );
            let y = tanh(&x);
            check_gradient(
                tanh_backward(&y, &probe).data(),
                &numeric_grad(x.data(), |v| dot(&tanh(&t(v)), &probe)),
            );

            let up_probe = random_tensor::<f64>([2, 2, 9, 9], seed + 60);
            check_gradient(
                upsample_nearest_backward(&up_probe, 3).unwrap().data(),
                &numeric_grad(x.data(), |v| dot(&upsample_nearest(&t(v), 3).unwrap(), &up_probe)),
            );

            let other = random_tensor::<f64>(shape, seed + 70);
            let cat_probe = random_tensor::<f64>([2, 4, 3, 3], seed + 80);
            let split = split_channels(&cat_probe, &[2, 2]).unwrap();
            check_gradient(
                split[0].data(),
                &numeric_grad(x.data(), |v| dot(&concat_channels(&[&t(v), &other]).unwrap(), &cat_probe)),
            );
            check_gradient(
                probe.data(),
                &numeric_grad(x.data(), |v| dot(&add(&t(v), &other).unwrap(), &probe)),
            );
        }
    }
}
