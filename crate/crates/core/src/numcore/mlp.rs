use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ops::{sigmoid, softmax_slice, softmax_vjp};
use super::{Scalar, Tensor};

/// Nonlinearity applied between hidden layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Nonlinearity applied to the last layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalActivation {
    None,
    Sigmoid,
    Softmax,
}

/// Architecture of a fully connected network: `widths[0]` is the input
/// width, `widths.last()` the output width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub final_activation: FinalActivation,
}

impl MlpSpec {
    pub fn new(
        widths: Vec<usize>,
        activation: Activation,
        final_activation: FinalActivation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            activation,
            final_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single affine layer without output nonlinearity.
    pub fn linear(input: usize, output: usize) -> Result<Self> {
        Self::new(vec![input, output], Activation::Relu, FinalActivation::None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least 2 widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "MLP widths must be positive, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Shapes of the parameter list: `[W0, b0, W1, b1, ...]` with `W` stored
    /// as `[out, in]`.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.widths
            .windows(2)
            .flat_map(|w| [vec![w[1], w[0]], vec![w[1]]])
            .collect()
    }
}

/// Activations recorded by [`Mlp::forward_traced`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T> MlpTrace<T> {
    pub fn output(&self) -> &[T] {
        &self.output
    }
}

/// An [`MlpSpec`] together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    spec: MlpSpec,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(spec: MlpSpec) -> Self {
        let params = spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Mlp { spec, params }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(spec);
        for (layer, w) in mlp.spec.widths.windows(2).enumerate() {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for x in mlp.params[2 * layer].data_mut() {
                *x = T::lit(rng.random_range(-bound..bound));
            }
        }
        mlp
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        check_param_shapes(&spec, &params)?;
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.spec.clone())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_traced(x)?.output)
    }

    pub fn forward_traced(&self, x: &[T]) -> Result<MlpTrace<T>> {
        forward_raw(&self.spec, &self.params, x)
    }

    /// Accumulates parameter gradients into `grads` (same layout as
    /// [`Mlp::params`]) and returns the gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace<T>, grad_out: &[T], grads: &mut [Tensor<T>]) -> Vec<T> {
        debug_assert_eq!(grad_out.len(), self.spec.output_width());
        let mut g: Vec<T> = match self.spec.final_activation {
            FinalActivation::None => grad_out.to_vec(),
            FinalActivation::Sigmoid => trace
                .output
                .iter()
                .zip(grad_out)
                .map(|(&y, &gy)| gy * y * (T::one() - y))
                .collect(),
            FinalActivation::Softmax => softmax_vjp(&trace.output, grad_out),
        };
        for layer in (0..self.spec.num_layers()).rev() {
            let (n_in, n_out) = (self.spec.widths[layer], self.spec.widths[layer + 1]);
            let input = &trace.inputs[layer];
            let w = self.params[2 * layer].data();
            {
                let (gw, rest) = grads[2 * layer..].split_at_mut(1);
                let gw = gw[0].data_mut();
                let gb = rest[0].data_mut();
                for o in 0..n_out {
                    let go = g[o];
                    if go == T::zero() {
                        continue;
                    }
                    gb[o] = gb[o] + go;
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (slot, &a) in row.iter_mut().zip(input) {
                        *slot = *slot + go * a;
                    }
                }
            }
            let mut g_in = vec![T::zero(); n_in];
            for o in 0..n_out {
                let go = g[o];
                if go == T::zero() {
                    continue;
                }
                for (slot, &wv) in g_in.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *slot = *slot + go * wv;
                }
            }
            if layer > 0 {
                let pre = &trace.pre[layer - 1];
                match self.spec.activation {
                    Activation::Relu => {
                        for (gi, &z) in g_in.iter_mut().zip(pre) {
                            if z <= T::zero() {
                                *gi = T::zero();
                            }
                        }
                    }
                    Activation::Tanh => {
                        for (gi, &a) in g_in.iter_mut().zip(&trace.inputs[layer]) {
                            *gi = *gi * (T::one() - a * a);
                        }
                    }
                }
            }
            g = g_in;
        }
        g
    }
}

fn check_param_shapes<T: Scalar>(spec: &MlpSpec, params: &[Tensor<T>]) -> Result<()> {
    let shapes = spec.param_shapes();
    if shapes.len() != params.len() {
        return Err(Error::shape("MLP parameter count", shapes.len(), params.len()));
    }
    for (i, (expected, p)) in shapes.iter().zip(params).enumerate() {
        if p.shape() != expected.as_slice() {
            let what = if i % 2 == 0 { "weight" } else { "bias" };
            return Err(Error::shape(
                format!("MLP layer {} {what}", i / 2),
                format!("{expected:?}"),
                format!("{:?}", p.shape()),
            ));
        }
    }
    Ok(())
}

fn forward_raw<T: Scalar>(spec: &MlpSpec, params: &[Tensor<T>], x: &[T]) -> Result<MlpTrace<T>> {
    if x.len() != spec.input_width() {
        return Err(Error::shape("MLP layer 0 input", spec.input_width(), x.len()));
    }
    let layers = spec.num_layers();
    let mut inputs = Vec::with_capacity(layers);
    let mut pre = Vec::with_capacity(layers);
    let mut a = x.to_vec();
    for layer in 0..layers {
        let (n_in, n_out) = (spec.widths[layer], spec.widths[layer + 1]);
        let w = params[2 * layer].data();
        let b = params[2 * layer + 1].data();
        let z: Vec<T> = (0..n_out)
            .map(|o| {
                w[o * n_in..(o + 1) * n_in]
                    .iter()
                    .zip(&a)
                    .fold(b[o], |acc, (&wv, &av)| acc + wv * av)
            })
            .collect();
        inputs.push(a);
        if layer + 1 < layers {
            a = match spec.activation {
                Activation::Relu => z.iter().map(|&v| v.max(T::zero())).collect(),
                Activation::Tanh => z.iter().map(|&v| v.tanh()).collect(),
            };
            pre.push(z);
        } else {
            a = match spec.final_activation {
                FinalActivation::None => z.clone(),
                FinalActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                FinalActivation::Softmax => softmax_slice(&z),
            };
            pre.push(z);
        }
    }
    Ok(MlpTrace {
        inputs,
        pre,
        output: a,
    })
}

/// Shape-checked forward pass over a borrowed parameter list.
pub fn mlp_forward<T: Scalar>(spec: &MlpSpec, params: &[Tensor<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    spec.validate()?;
    check_param_shapes(spec, params)?;
    let out = forward_raw(spec, params, x.data())?.output;
    Tensor::vector(out)
}
