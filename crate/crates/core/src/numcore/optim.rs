use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// SGD with classical (heavy-ball) momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    /// `shapes` lists the parameter tensors in the order they are passed to
    /// [`sgd_step`].
    pub fn new(learning_rate: T, momentum: T, shapes: &[&[usize]]) -> Result<Self> {
        if !(learning_rate > T::zero()) || !learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be > 0, got {learning_rate}")));
        }
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            velocity: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }
}

/// `v <- momentum * v + grad; p <- p - lr * v` for every tensor.
///
/// Nothing is modified when a gradient is non-finite or mis-shaped.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(
            "sgd_step tensor count",
            state.velocity.len(),
            format!("{} params / {} grads", params.len(), grads.len()),
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || v.shape() != g.shape() {
            return Err(Error::shape(
                format!("sgd_step tensor {i}"),
                format!("{:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient tensor {i}")));
        }
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv;
            *pv = *pv - lr * *vv;
        }
    }
    Ok(())
}
