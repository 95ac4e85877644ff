//! Forward passes with recorded intermediates and their backward passes.
//!
//! Query-independent work (statistics, `v`, `t`) lives in [`SetForward`] so
//! one set can be scored against many queries; gradients from every query
//! are collected in a [`SetGrad`] and pushed through the set networks once.

use super::{nearest, sq_dist, ImportanceWeights, MetricParams, MetricVariant, PostSet};
use crate::error::Result;
use crate::numcore::{softmax_slice, softmax_vjp, MlpTrace, Scalar};

pub(crate) struct SetForward<T> {
    pub(crate) v: Option<Vec<T>>,
    v_traces: Vec<MlpTrace<T>>,
    pub(crate) t: Option<Vec<T>>,
    t_trace: Option<MlpTrace<T>>,
}

pub(crate) fn set_forward<T: Scalar>(
    set: &PostSet<T>,
    params: &MetricParams<T>,
    variant: MetricVariant,
) -> Result<SetForward<T>> {
    let stat = set.stats().as_vector();
    let (v, v_traces) = if variant.uses_intra_set() {
        let traces = set
            .items()
            .iter()
            .map(|it| params.importance.forward_traced(&[it.f.as_slice(), &stat].concat()))
            .collect::<Result<Vec<_>>>()?;
        (Some(traces.iter().map(|t| t.output()[0]).collect()), traces)
    } else {
        (None, Vec::new())
    };
    let (t, t_trace) = if variant.user_specific() {
        let trace = params.scaling.forward_traced(&stat)?;
        (Some(trace.output().to_vec()), Some(trace))
    } else {
        (None, None)
    };
    Ok(SetForward {
        v,
        v_traces,
        t,
        t_trace,
    })
}

pub(crate) enum QueryTrace<T> {
    Nearest {
        index: usize,
    },
    Prototype {
        /// `None` means uniform weights (prototype = set mean).
        alpha: Option<Vec<T>>,
        /// `d(f_i, f)`, recorded when the neighboring term is active.
        dists: Vec<T>,
        diff: Vec<T>,
    },
}

fn scores<T: Scalar>(
    set: &PostSet<T>,
    sf: &SetForward<T>,
    f: &[T],
    params: &MetricParams<T>,
    variant: MetricVariant,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let k = set.len();
    let dists: Vec<T> = if variant.uses_neighboring() {
        set.items().iter().map(|it| sq_dist(&it.f, f)).collect()
    } else {
        Vec::new()
    };
    let u: Vec<T> = if variant.uses_neighboring() {
        let gamma = params.gamma();
        dists.iter().map(|&d| -gamma * d).collect()
    } else {
        vec![T::zero(); k]
    };
    let v = sf.v.clone().unwrap_or_else(|| vec![T::zero(); k]);
    (dists, u, v)
}

pub(crate) fn query_forward<T: Scalar>(
    set: &PostSet<T>,
    sf: &SetForward<T>,
    f: &[T],
    params: &MetricParams<T>,
    variant: MetricVariant,
) -> (T, QueryTrace<T>) {
    if variant == MetricVariant::Nn {
        let (index, d) = nearest(&set.views(), f);
        return (d, QueryTrace::Nearest { index });
    }
    let weighted = variant.uses_intra_set() || variant.uses_neighboring();
    let (dists, alpha, proto) = if weighted {
        let (dists, u, v) = scores(set, sf, f, params, variant);
        let w: Vec<T> = u.iter().zip(&v).map(|(&a, &b)| a + b).collect();
        let alpha = softmax_slice(&w);
        let mut p = vec![T::zero(); f.len()];
        for (a, it) in alpha.iter().zip(set.items()) {
            for (pk, &x) in p.iter_mut().zip(&it.f) {
                *pk = *pk + *a * x;
            }
        }
        (dists, Some(alpha), p)
    } else {
        (Vec::new(), None, set.stats().mean.clone())
    };
    let diff: Vec<T> = proto.iter().zip(f).map(|(&p, &q)| p - q).collect();
    let d = match &sf.t {
        Some(t) => diff.iter().zip(t).fold(T::zero(), |acc, (&x, &s)| {
            let r = s * x;
            acc + r * r
        }),
        None => diff.iter().fold(T::zero(), |acc, &x| acc + x * x),
    };
    (d, QueryTrace::Prototype { alpha, dists, diff })
}

pub(crate) fn importance_weights<T: Scalar>(
    set: &PostSet<T>,
    sf: &SetForward<T>,
    f: &[T],
    params: &MetricParams<T>,
    variant: MetricVariant,
) -> ImportanceWeights<T> {
    let k = set.len();
    let zeros = vec![T::zero(); k];
    if variant == MetricVariant::Nn {
        let (index, _) = nearest(&set.views(), f);
        let mut alpha = zeros.clone();
        alpha[index] = T::one();
        return ImportanceWeights { u: zeros.clone(), v: zeros.clone(), w: zeros, alpha };
    }
    let (_, u, v) = scores(set, sf, f, params, variant);
    let w: Vec<T> = u.iter().zip(&v).map(|(&a, &b)| a + b).collect();
    let alpha = softmax_slice(&w);
    ImportanceWeights { u, v, w, alpha }
}

/// Gradient accumulators for the query-independent parts of one set.
pub(crate) struct SetGrad<T> {
    pub(crate) items: Vec<Vec<T>>,
    v: Vec<T>,
    t: Vec<T>,
}

impl<T: Scalar> SetGrad<T> {
    pub(crate) fn new(set: &PostSet<T>) -> Self {
        let (k, d) = (set.len(), set.dim());
        SetGrad {
            items: vec![vec![T::zero(); d]; k],
            v: vec![T::zero(); k],
            t: vec![T::zero(); d],
        }
    }
}

/// Backward of [`query_forward`] for upstream gradient `g_d`. Query
/// gradients go to `g_f`, parameter gradients to `grads`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn query_backward<T: Scalar>(
    set: &PostSet<T>,
    sf: &SetForward<T>,
    trace: &QueryTrace<T>,
    f: &[T],
    g_d: T,
    params: &MetricParams<T>,
    variant: MetricVariant,
    acc: &mut SetGrad<T>,
    g_f: &mut [T],
    grads: &mut MetricParams<T>,
) {
    let two = T::lit(2.0);
    match trace {
        QueryTrace::Nearest { index } => {
            let fi = &set.items()[*index].f;
            for j in 0..f.len() {
                let g = two * (fi[j] - f[j]) * g_d;
                acc.items[*index][j] = acc.items[*index][j] + g;
                g_f[j] = g_f[j] - g;
            }
        }
        QueryTrace::Prototype { alpha, dists, diff } => {
            // D = Σ (t_k diff_k)^2
            let g_diff: Vec<T> = match &sf.t {
                Some(t) => {
                    for j in 0..diff.len() {
                        let r = t[j] * diff[j];
                        acc.t[j] = acc.t[j] + two * r * diff[j] * g_d;
                    }
                    diff.iter().zip(t).map(|(&x, &s)| two * s * s * x * g_d).collect()
                }
                None => diff.iter().map(|&x| two * x * g_d).collect(),
            };
            for j in 0..f.len() {
                g_f[j] = g_f[j] - g_diff[j];
            }
            let Some(alpha) = alpha else {
                let k = T::lit(set.len() as f64);
                for g_item in acc.items.iter_mut() {
                    for j in 0..g_diff.len() {
                        g_item[j] = g_item[j] + g_diff[j] / k;
                    }
                }
                return;
            };
            let g_alpha: Vec<T> = set
                .items()
                .iter()
                .map(|it| it.f.iter().zip(&g_diff).fold(T::zero(), |s, (&x, &g)| s + x * g))
                .collect();
            for (i, g_item) in acc.items.iter_mut().enumerate() {
                for j in 0..g_diff.len() {
                    g_item[j] = g_item[j] + alpha[i] * g_diff[j];
                }
            }
            let g_w = softmax_vjp(alpha, &g_alpha);
            if variant.uses_intra_set() {
                for (a, &g) in acc.v.iter_mut().zip(&g_w) {
                    *a = *a + g;
                }
            }
            if variant.uses_neighboring() {
                let gamma = params.gamma();
                let mut g_gamma = T::zero();
                for (i, it) in set.items().iter().enumerate() {
                    // u_i = -γ d(f_i, f)
                    g_gamma = g_gamma - dists[i] * g_w[i];
                    let scale = -two * gamma * g_w[i];
                    for j in 0..f.len() {
                        let g = scale * (it.f[j] - f[j]);
                        acc.items[i][j] = acc.items[i][j] + g;
                        g_f[j] = g_f[j] - g;
                    }
                }
                let slot = &mut grads.gamma_raw.data_mut()[0];
                *slot = *slot + g_gamma * params.gamma_slope();
            }
        }
    }
}

/// Pushes the accumulated `v`/`t` gradients through their networks and the
/// set statistics. Returns the gradient for every set item.
pub(crate) fn set_backward<T: Scalar>(
    set: &PostSet<T>,
    sf: &SetForward<T>,
    mut acc: SetGrad<T>,
    params: &MetricParams<T>,
    grads: &mut MetricParams<T>,
) -> Vec<Vec<T>> {
    let d = set.dim();
    let mut g_stat = vec![T::zero(); 4 * d];
    let mut touched = false;
    for (i, trace) in sf.v_traces.iter().enumerate() {
        let g_in = params.importance.backward(trace, &[acc.v[i]], grads.importance.params_mut());
        for j in 0..d {
            acc.items[i][j] = acc.items[i][j] + g_in[j];
        }
        for (s, &g) in g_stat.iter_mut().zip(&g_in[d..]) {
            *s = *s + g;
        }
        touched = true;
    }
    if let Some(trace) = &sf.t_trace {
        let g_in = params.scaling.backward(trace, &acc.t, grads.scaling.params_mut());
        for (s, &g) in g_stat.iter_mut().zip(&g_in) {
            *s = *s + g;
        }
        touched = true;
    }
    if touched {
        set.stats().backward(&set.views(), &g_stat, &mut acc.items);
    }
    acc.items
}
