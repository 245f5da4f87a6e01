use super::backward::backward;
use super::tensor::{Graph, Tensor};
use crate::error::{Error, Result};

/// One-sided slopes that disagree by more than this (relative) mark a kink.
const KINK_TOLERANCE: f64 = 1e-3;

/// Compares the reverse-mode gradient of a scalar function against central
/// differences and returns the largest relative error
/// `|analytic − numeric| / max(1, |analytic|)`.
///
/// Coordinates where the forward and backward one-sided slopes disagree
/// (relu kinks and similar) are excluded.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    let graph = Graph::new();
    let x = graph.leaf(point);
    let y = f(&x)?;
    let analytic = backward(&y, &[&x], false)?.remove(0);

    let eval = |values: Vec<f64>| -> Result<f64> {
        let v = f(&Tensor::new(point.shape(), values)?)?.item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check probe".into()));
        }
        Ok(v)
    };
    let base = point.to_vec();
    let f0 = eval(base.clone())?;
    let mut worst: f64 = 0.0;
    for j in 0..base.len() {
        let mut plus = base.clone();
        plus[j] += eps;
        let mut minus = base.clone();
        minus[j] -= eps;
        let fp = eval(plus)?;
        let fm = eval(minus)?;
        let fwd = (fp - f0) / eps;
        let bwd = (f0 - fm) / eps;
        if (fwd - bwd).abs() > KINK_TOLERANCE * 1f64.max(fwd.abs()).max(bwd.abs()) {
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.values()[j];
        worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let p = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let err = grad_check(|x| x.square()?.sum(), &p, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn logsumexp_pair() {
        let p = Tensor::vector(vec![0.1, -0.2]);
        let err = grad_check(|x| x.logsumexp(), &p, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_kink_is_excluded() {
        let p = Tensor::vector(vec![0.0, 1.0, -2.0]);
        let err = grad_check(|x| x.relu()?.sum(), &p, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let p = Tensor::vector(vec![709.0]);
        let res = grad_check(|x| x.exp()?.sum(), &p, 2.0);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn rejects_non_positive_eps() {
        let p = Tensor::vector(vec![1.0]);
        assert!(grad_check(|x| x.sum(), &p, 0.0).is_err());
    }
}
