use super::{AttentionTrace, EmbedTrace, EmbeddingParams};
use crate::numcore::{softmax_vjp, Mlp, Scalar};

fn attention_backward<T: Scalar>(
    trace: &AttentionTrace<T>,
    grad_out: &[T],
    transform: &Mlp<T>,
    scorer: &Mlp<T>,
    g_transform: &mut Mlp<T>,
    g_scorer: &mut Mlp<T>,
) {
    // out = Σ α_i f_i
    let g_alpha: Vec<T> = trace
        .transform
        .iter()
        .map(|t| t.output().iter().zip(grad_out).map(|(&f, &g)| f * g).sum())
        .collect();
    let g_e = softmax_vjp(&trace.alpha, &g_alpha);
    for i in 0..trace.alpha.len() {
        let g_score = scorer.backward(&trace.scorer[i], &[g_e[i]], g_scorer.params_mut());
        let g_feat: Vec<T> = grad_out
            .iter()
            .zip(&g_score)
            .map(|(&g, &s)| trace.alpha[i] * g + s)
            .collect();
        transform.backward(&trace.transform[i], &g_feat, g_transform.params_mut());
    }
}

/// Accumulates `d loss / d params` into `grads` given `d loss / d f`.
pub(crate) fn embed_backward<T: Scalar>(
    trace: &EmbedTrace<T>,
    grad_f: &[T],
    params: &EmbeddingParams<T>,
    grads: &mut EmbeddingParams<T>,
) {
    let m = trace.d_mod;
    let g_cat = params.fusion.backward(&trace.fusion, grad_f, grads.fusion.params_mut());
    let (g_im_gated, rest) = g_cat.split_at(m);
    let mut g_fh = rest[..m].to_vec();
    let mut g_ft = rest[m..].to_vec();

    // f_im' = f_im ⊙ a_i
    let a_i = trace.gate_image.output();
    let g_im: Vec<T> = g_im_gated.iter().zip(a_i).map(|(&g, &a)| g * a).collect();
    let g_ai: Vec<T> = g_im_gated.iter().zip(&trace.f_im).map(|(&g, &f)| g * f).collect();
    let g_gate_in = params.gate_image.backward(&trace.gate_image, &g_ai, grads.gate_image.params_mut());
    for k in 0..m {
        g_fh[k] = g_fh[k] + g_gate_in[k];
        g_ft[k] = g_ft[k] + g_gate_in[m + k];
    }
    params.image_proj.backward(&trace.image_proj, &g_im, grads.image_proj.params_mut());

    // f_h' = g_h ⊙ gate_h(g_t), f_t' = g_t ⊙ gate_t(g_h)
    let a_h = trace.gate_hashtag.output();
    let a_t = trace.gate_title.output();
    let mut g_gh: Vec<T> = g_fh.iter().zip(a_h).map(|(&g, &a)| g * a).collect();
    let mut g_gt: Vec<T> = g_ft.iter().zip(a_t).map(|(&g, &a)| g * a).collect();
    let g_ah: Vec<T> = g_fh.iter().zip(&trace.g_h).map(|(&g, &f)| g * f).collect();
    let g_at: Vec<T> = g_ft.iter().zip(&trace.g_t).map(|(&g, &f)| g * f).collect();
    let from_h = params.gate_hashtag.backward(&trace.gate_hashtag, &g_ah, grads.gate_hashtag.params_mut());
    let from_t = params.gate_title.backward(&trace.gate_title, &g_at, grads.gate_title.params_mut());
    for k in 0..m {
        g_gt[k] = g_gt[k] + from_h[k];
        g_gh[k] = g_gh[k] + from_t[k];
    }

    if let Some(t) = &trace.hashtag {
        attention_backward(
            t,
            &g_gh,
            &params.hashtag_transform,
            &params.hashtag_scorer,
            &mut grads.hashtag_transform,
            &mut grads.hashtag_scorer,
        );
    }
    if let Some(t) = &trace.title {
        attention_backward(
            t,
            &g_gt,
            &params.title_transform,
            &params.title_scorer,
            &mut grads.title_transform,
            &mut grads.title_scorer,
        );
    }
}
