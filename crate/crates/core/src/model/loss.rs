//! Reconstruction and smoothness objectives on `muscles × W` predictions.

use ndarray::{Array3, ArrayView2, Axis};

use super::params::real;
use super::Real;
use crate::error::{Error, Result};

fn check_same<F>(yhat: &ArrayView2<F>, y: &ArrayView2<F>) -> Result<()> {
    if yhat.dim() != y.dim() {
        return Err(Error::config(format!(
            "prediction is {:?} but target is {:?}",
            yhat.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Mean squared error over all `M·W` entries.
pub fn loss_mse<F: Real>(yhat: ArrayView2<F>, y: ArrayView2<F>) -> Result<F> {
    check_same(&yhat, &y)?;
    let n = real::<F>(y.len() as f64);
    let sum = yhat
        .iter()
        .zip(y.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .fold(F::zero(), |s, v| s + v);
    Ok(sum / n)
}

/// Mean squared mismatch between consecutive-step changes of prediction and
/// target, over `M·(W−1)` entries. Time runs along the second axis.
pub fn loss_smooth<F: Real>(yhat: ArrayView2<F>, y: ArrayView2<F>) -> Result<F> {
    check_same(&yhat, &y)?;
    let (m, w) = y.dim();
    if w < 2 {
        return Err(Error::config("smoothness loss needs at least 2 time steps"));
    }
    let mut sum = F::zero();
    for k in 0..m {
        for t in 0..w - 1 {
            let e = (yhat[[k, t + 1]] - yhat[[k, t]]) - (y[[k, t + 1]] - y[[k, t]]);
            sum += e * e;
        }
    }
    Ok(sum / real((m * (w - 1)) as f64))
}

/// `loss_mse + λ·loss_smooth`.
pub fn loss_total<F: Real>(yhat: ArrayView2<F>, y: ArrayView2<F>, lambda: F) -> Result<F> {
    if !(lambda >= F::zero()) {
        return Err(Error::config("lambda must be non-negative"));
    }
    let mse = loss_mse(yhat, y)?;
    if lambda == F::zero() {
        return Ok(mse);
    }
    Ok(mse + lambda * loss_smooth(yhat, y)?)
}

/// Batch-mean of [`loss_total`] over `(B, M, W)` tensors, with its gradient
/// with respect to `yhat`.
pub fn batch_loss_and_grad<F: Real>(
    yhat: &Array3<F>,
    y: &Array3<F>,
    lambda: F,
) -> Result<(F, Array3<F>)> {
    if yhat.dim() != y.dim() {
        return Err(Error::config(format!(
            "prediction is {:?} but target is {:?}",
            yhat.dim(),
            y.dim()
        )));
    }
    let (b, m, w) = y.dim();
    if b == 0 {
        return Err(Error::config("empty batch"));
    }
    let inv_b = real::<F>(1.0 / b as f64);
    let mut loss = F::zero();
    let mut grad = Array3::zeros(y.raw_dim());
    let two = real::<F>(2.0);
    let mse_scale = two * inv_b / real((m * w) as f64);
    let smooth_scale = if w > 1 {
        two * lambda * inv_b / real((m * (w - 1)) as f64)
    } else {
        F::zero()
    };
    for ((yh, yt), mut g) in yhat
        .axis_iter(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .zip(grad.axis_iter_mut(Axis(0)))
    {
        loss += loss_total(yh, yt, lambda)? * inv_b;
        for k in 0..m {
            for t in 0..w {
                g[[k, t]] = mse_scale * (yh[[k, t]] - yt[[k, t]]);
            }
            if lambda > F::zero() {
                for t in 0..w - 1 {
                    let e = (yh[[k, t + 1]] - yh[[k, t]]) - (yt[[k, t + 1]] - yt[[k, t]]);
                    g[[k, t + 1]] += smooth_scale * e;
                    g[[k, t]] -= smooth_scale * e;
                }
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        let y = array![[1.0], [0.0]];
        let yhat = array![[0.0], [1.0]];
        assert_eq!(loss_mse(yhat.view(), y.view()).unwrap(), 1.0);
        assert_eq!(loss_mse(y.view(), y.view()).unwrap(), 0.0);
        let other = Array2::<f64>::zeros((3, 1));
        assert!(loss_mse(other.view(), y.view()).is_err());
    }

    #[test]
    fn smooth_examples() {
        let y = array![[0.0, 0.0, 0.0]];
        let yhat = array![[0.0, 1.0, 0.0]];
        assert_eq!(loss_smooth(yhat.view(), y.view()).unwrap(), 1.0);

        let flat = array![[0.3, 0.3, 0.3], [0.1, 0.1, 0.1]];
        assert_eq!(loss_smooth(flat.view(), flat.view()).unwrap(), 0.0);

        let one_step = array![[0.0]];
        assert!(loss_smooth(one_step.view(), one_step.view()).is_err());
    }

    #[test]
    fn total_combines_terms() {
        let y = array![[0.0, 0.2, 0.1, 0.5], [0.3, 0.3, 0.0, 0.9]];
        let yhat = array![[0.1, 0.1, 0.4, 0.5], [0.2, 0.6, 0.1, 0.7]];
        let mse = loss_mse(yhat.view(), y.view()).unwrap();
        let smooth = loss_smooth(yhat.view(), y.view()).unwrap();
        let total: f64 = loss_total(yhat.view(), y.view(), 0.1).unwrap();
        assert!((total - (mse + 0.1 * smooth)).abs() < 1e-12);
        assert_eq!(loss_total(yhat.view(), y.view(), 0.0).unwrap(), mse);
        assert_eq!(loss_total(y.view(), y.view(), 0.1).unwrap(), 0.0);
        assert!(loss_total(yhat.view(), y.view(), -0.1).is_err());
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let y = Array3::from_shape_fn((2, 3, 5), |(b, k, t)| ((b + 2 * k + 3 * t) % 7) as f64 / 7.0);
        let yhat = Array3::from_shape_fn((2, 3, 5), |(b, k, t)| ((5 * b + k + t) % 6) as f64 / 6.0);
        let (_, g) = batch_loss_and_grad(&yhat, &y, 0.1).unwrap();
        let eps = 1e-6;
        for idx in [(0, 0, 0), (1, 2, 4), (0, 1, 2), (1, 0, 3)] {
            let mut p = yhat.clone();
            p[idx] += eps;
            let lp = batch_loss_and_grad(&p, &y, 0.1).unwrap().0;
            p[idx] -= 2.0 * eps;
            let lm = batch_loss_and_grad(&p, &y, 0.1).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - g[idx]).abs() < 1e-8, "{idx:?}: {fd} vs {}", g[idx]);
        }
    }

    proptest! {
        #[test]
        fn mse_is_permutation_invariant(
            vals in proptest::collection::vec(0.0f64..1.0, 2 * 3 * 4),
            rot in 0usize..3,
        ) {
            let y = Array2::from_shape_fn((3, 4), |(k, t)| vals[k * 4 + t]);
            let yhat = Array2::from_shape_fn((3, 4), |(k, t)| vals[12 + k * 4 + t]);
            let perm = |a: &Array2<f64>| Array2::from_shape_fn((3, 4), |(k, t)| a[[(k + rot) % 3, t]]);
            let l1 = loss_mse(yhat.view(), y.view()).unwrap();
            let l2 = loss_mse(perm(&yhat).view(), perm(&y).view()).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-12);
        }

        #[test]
        fn smooth_ignores_channel_offsets(
            vals in proptest::collection::vec(0.0f64..1.0, 2 * 5),
            offs in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            let y = Array2::from_shape_fn((2, 5), |(k, t)| vals[k * 5 + t]);
            let yhat = Array2::from_shape_fn((2, 5), |(k, t)| y[[k, t]] + offs[k]);
            prop_assert!(loss_smooth(yhat.view(), y.view()).unwrap() < 1e-24);
        }
    }
}
