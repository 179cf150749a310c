//! Numeric kernels shared by the forward and backward passes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Floating-point element type of a model (`f32` for training, `f64` for
/// gradient checks).
pub trait Scalar:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Row-wise softmax over the keys where `key_mask` is true; masked keys get
/// weight exactly zero. A row with no valid key is all zeros.
pub fn masked_softmax<T: Scalar>(scores: &mut Array2<T>, key_mask: &[bool]) {
    for mut row in scores.rows_mut() {
        let mut max = T::neg_infinity();
        for (j, &s) in row.iter().enumerate() {
            if key_mask[j] && s > max {
                max = s;
            }
        }
        if max == T::neg_infinity() {
            row.fill(T::zero());
            continue;
        }
        let mut sum = T::zero();
        for (j, s) in row.iter_mut().enumerate() {
            if key_mask[j] {
                *s = (*s - max).exp();
                sum += *s;
            } else {
                *s = T::zero();
            }
        }
        row.mapv_inplace(|p| p / sum);
    }
}

/// Scaled dot-product attention weights and context for one head.
pub(crate) fn attention_with_probs<T: Scalar>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    key_mask: &[bool],
) -> (Array2<T>, Array2<T>) {
    let scale = T::one() / T::from_usize(q.ncols()).unwrap().sqrt();
    let mut probs = q.dot(&k.t());
    probs.mapv_inplace(|s| s * scale);
    masked_softmax(&mut probs, key_mask);
    let context = probs.dot(&v);
    (probs, context)
}

/// `softmax(Q K^T / sqrt(d_k) + mask) V` where masked keys get `-inf` bias.
pub fn attention<T: Scalar>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    key_mask: &[bool],
) -> Result<Array2<T>> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() || key_mask.len() != k.nrows() {
        return Err(Error::Shape(format!(
            "attention q{:?} k{:?} v{:?} mask {}",
            q.dim(),
            k.dim(),
            v.dim(),
            key_mask.len()
        )));
    }
    for (name, m) in [("query", &q), ("key", &k), ("value", &v)] {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("attention {name}")));
        }
    }
    Ok(attention_with_probs(q, k, v, key_mask).1)
}

/// Per-row normalisation output plus what the backward pass needs.
pub(crate) struct LayerNormOut<T> {
    pub y: Array2<T>,
    pub x_hat: Array2<T>,
    pub inv_std: Array1<T>,
}

pub(crate) fn layer_norm_cached<T: Scalar>(
    x: &Array2<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    eps: T,
) -> LayerNormOut<T> {
    let n = T::from_usize(x.ncols()).unwrap();
    let mut x_hat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in x_hat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.iter().copied().sum::<T>() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / n;
        *s = T::one() / (var + eps).sqrt();
        let is = *s;
        row.mapv_inplace(|v| v * is);
    }
    let y = &x_hat * &gamma + &beta;
    LayerNormOut { y, x_hat, inv_std }
}

/// `gamma * (x - mean) / std + beta`, per row.
pub fn layer_norm<T: Scalar>(x: &Array2<T>, gamma: ArrayView1<T>, beta: ArrayView1<T>, eps: T) -> Array2<T> {
    layer_norm_cached(x, gamma, beta, eps).y
}

/// Backward of layer norm. Accumulates into `d_gamma`/`d_beta` and returns
/// the gradient with respect to the input.
pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &LayerNormOut<T>,
    gamma: ArrayView1<T>,
    d_gamma: &mut Array1<T>,
    d_beta: &mut Array1<T>,
) -> Array2<T> {
    *d_gamma += &(dy * &cache.x_hat).sum_axis(Axis(0));
    *d_beta += &dy.sum_axis(Axis(0));
    let n = T::from_usize(dy.ncols()).unwrap();
    let dx_hat = dy * &gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dx_hat.row(i);
        let xh = cache.x_hat.row(i);
        let mean_g = g.sum() / n;
        let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        let s = cache.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = s * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

/// Backward of a row-wise softmax given the probabilities and upstream grad.
pub(crate) fn softmax_backward<T: Scalar>(probs: &Array2<T>, d_probs: &Array2<T>) -> Array2<T> {
    let mut ds = probs * d_probs;
    for (mut row, p) in ds.rows_mut().into_iter().zip(probs.rows()) {
        let dot = row.sum();
        for (d, &pj) in row.iter_mut().zip(p) {
            *d -= pj * dot;
        }
    }
    ds
}

/// `log(sum(exp(x)))` computed stably.
pub fn log_sum_exp<T: Scalar>(x: ArrayView1<T>) -> T {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// Binary cross-entropy on a logit, `-(y ln s(z) + (1-y) ln(1-s(z)))`.
pub fn bce_with_logit<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn singleton_attention_returns_value() {
        let q = array![[0.3, -1.2]];
        let k = array![[2.0, 0.5]];
        let v = array![[7.0, -3.0, 1.0]];
        let out = attention(q.view(), k.view(), v.view(), &[true]).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn equal_logits_average_unmasked_values() {
        let q = array![[0.0, 0.0]];
        let k = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let v = array![[1.0, 2.0], [3.0, 4.0], [100.0, 100.0]];
        let out = attention(q.view(), k.view(), v.view(), &[true, true, false]).unwrap();
        assert!((out[[0, 0]] - 2.0f64).abs() < 1e-12);
        assert!((out[[0, 1]] - 3.0f64).abs() < 1e-12);
    }

    #[test]
    fn attention_rejects_non_finite() {
        let q = array![[f64::NAN]];
        assert!(attention(q.view(), q.view(), q.view(), &[true]).is_err());
        let ok = array![[1.0]];
        assert!(attention(ok.view(), ok.view(), ok.view(), &[true, true]).is_err());
    }

    #[test]
    fn bce_matches_definition() {
        for &(z, y) in &[(0.3f64, 1.0f64), (-2.0, 0.0), (5.0, 0.0), (-30.0, 1.0)] {
            let s = 1.0 / (1.0 + (-z).exp());
            let direct = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
            assert!((bce_with_logit(z, y) - direct).abs() < 1e-9, "{z} {y}");
        }
        assert!((bce_with_logit(0.0f64, 1.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lse_is_stable() {
        let x = array![1000.0f64, 1000.0];
        assert!((log_sum_exp(x.view()) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
