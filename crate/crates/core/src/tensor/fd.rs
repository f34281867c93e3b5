use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Central differences `(f(p + eps·eᵢ) − f(p − eps·eᵢ)) / (2·eps)` for every
/// coordinate of `params`.
pub fn finite_difference_gradient<T, F>(mut f: F, params: &Tensor<T>, eps: T) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if !(eps > T::zero()) {
        return Err(Error::Parameter(format!(
            "finite-difference step must be > 0, got {eps:?}"
        )));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.len());
    let two_eps = eps + eps;
    for i in 0..params.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((up - down) / two_eps);
    }
    Tensor::new(params.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let p = Tensor::<f64>::from_f64(&[3], &[0.3, -2.0, 7.5]).unwrap();
        let g = finite_difference_gradient(|t| Ok(t.data().iter().sum()), &p, 1e-5).unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn product_rule() {
        let p = Tensor::<f64>::from_f64(&[2], &[3.0, 5.0]).unwrap();
        let g = finite_difference_gradient(|t| Ok(t.data()[0] * t.data()[1]), &p, 1e-5).unwrap();
        assert!((g.data()[0] - 5.0).abs() < 1e-6);
        assert!((g.data()[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = Tensor::<f64>::from_f64(&[1], &[1.0]).unwrap();
        assert!(finite_difference_gradient(|t| Ok(t.item()), &p, 0.0).is_err());
    }
}
