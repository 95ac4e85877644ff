use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    /// `max |analytic - numeric| / max(1, |analytic|)` over every coordinate.
    pub max_rel_error: T,
    /// Worst error per parameter tensor.
    pub per_tensor: Vec<T>,
    /// `(tensor, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
}

/// Compares `analytic` gradients of `loss` at `params` against central
/// differences with step `epsilon`.
pub fn grad_check<T, F>(
    mut loss: F,
    params: &[Tensor<T>],
    analytic: &[Tensor<T>],
    epsilon: T,
) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: FnMut(&[Tensor<T>]) -> Result<T>,
{
    if !(epsilon >= T::lit(1e-7) && epsilon <= T::lit(1e-3)) {
        return Err(Error::Config(format!("epsilon must be in [1e-7, 1e-3], got {epsilon}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape("grad_check tensor count", params.len(), analytic.len()));
    }
    for (i, (p, g)) in params.iter().zip(analytic).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                format!("grad_check tensor {i}"),
                format!("{:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
    }
    let mut work = params.to_vec();
    let mut eval = |work: &[Tensor<T>]| -> Result<T> {
        let v = loss(work)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check loss".into()))
        }
    };
    eval(&work)?;
    let two = T::lit(2.0);
    let mut per_tensor = vec![T::zero(); params.len()];
    let mut worst = (0, 0);
    let mut max_rel_error = T::zero();
    for t in 0..params.len() {
        for j in 0..params[t].len() {
            let orig = params[t].data()[j];
            work[t].data_mut()[j] = orig + epsilon;
            let up = eval(&work)?;
            work[t].data_mut()[j] = orig - epsilon;
            let down = eval(&work)?;
            work[t].data_mut()[j] = orig;
            let numeric = (up - down) / (two * epsilon);
            let a = analytic[t].data()[j];
            let err = (a - numeric).abs() / a.abs().max(T::one());
            if err > per_tensor[t] {
                per_tensor[t] = err;
            }
            if err > max_rel_error {
                max_rel_error = err;
                worst = (t, j);
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
        worst,
    })
}
