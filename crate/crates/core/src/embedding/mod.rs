//! Multi-modal item embedding.
//!
//! Hashtag and title word bags are reduced by attentive averaging, the two
//! text features gate each other, the gated text features gate a projected
//! image feature, and a two-layer fusion network maps the concatenation to
//! the final item vector.

mod backward;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::ItemFeatures;
use crate::model::ModelConfig;
use crate::numcore::{softmax_slice, Activation, FinalActivation, Mlp, MlpSpec, MlpTrace, Scalar};

/// Fused item vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedItem<T> {
    pub item_id: String,
    pub f: Vec<T>,
}

/// Per-modality features entering the fusion network, all of width `d_mod`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityFeatures<T> {
    pub f_im: Vec<T>,
    pub f_h: Vec<T>,
    pub f_t: Vec<T>,
}

/// Unnormalized word scores `e` and their softmax `alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionScores<T> {
    pub e: Vec<T>,
    pub alpha: Vec<T>,
}

/// Parameters of the embedding module. Gate networks end in a sigmoid, so
/// their output is the per-dimension filtering score directly.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams<T> {
    pub image_proj: Mlp<T>,
    pub hashtag_transform: Mlp<T>,
    pub hashtag_scorer: Mlp<T>,
    pub title_transform: Mlp<T>,
    pub title_scorer: Mlp<T>,
    /// Filters hashtag features from title features.
    pub gate_hashtag: Mlp<T>,
    /// Filters title features from hashtag features.
    pub gate_title: Mlp<T>,
    /// Filters image features from the concatenated gated text features.
    pub gate_image: Mlp<T>,
    pub fusion: Mlp<T>,
}

pub(crate) const PART_NAMES: [&str; 9] = [
    "image_proj",
    "hashtag_transform",
    "hashtag_scorer",
    "title_transform",
    "title_scorer",
    "gate_hashtag",
    "gate_title",
    "gate_image",
    "fusion",
];

fn specs(c: &ModelConfig) -> Result<[MlpSpec; 9]> {
    use Activation::Relu;
    use FinalActivation::{None as Plain, Sigmoid};
    let (m, e) = (c.d_mod, c.d_emb);
    Ok([
        MlpSpec::linear(c.d_im, m)?,
        MlpSpec::new(vec![c.d_w, m, m], Relu, Plain)?,
        MlpSpec::new(vec![m, m, 1], Relu, Plain)?,
        MlpSpec::new(vec![c.d_w, m, m], Relu, Plain)?,
        MlpSpec::new(vec![m, m, 1], Relu, Plain)?,
        MlpSpec::new(vec![m, m, m], Relu, Sigmoid)?,
        MlpSpec::new(vec![m, m, m], Relu, Sigmoid)?,
        MlpSpec::new(vec![2 * m, m, m], Relu, Sigmoid)?,
        MlpSpec::new(vec![3 * m, e, e], Relu, Plain)?,
    ])
}

impl<T: Scalar> EmbeddingParams<T> {
    fn from_parts(mut parts: Vec<Mlp<T>>) -> Self {
        let mut take = || parts.remove(0);
        EmbeddingParams {
            image_proj: take(),
            hashtag_transform: take(),
            hashtag_scorer: take(),
            title_transform: take(),
            title_scorer: take(),
            gate_hashtag: take(),
            gate_title: take(),
            gate_image: take(),
            fusion: take(),
        }
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Ok(Self::from_parts(specs(config)?.into_iter().map(Mlp::zeros).collect()))
    }

    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(Self::from_parts(specs(config)?.into_iter().map(|s| Mlp::init(s, rng)).collect()))
    }

    pub fn parts(&self) -> [&Mlp<T>; 9] {
        [
            &self.image_proj,
            &self.hashtag_transform,
            &self.hashtag_scorer,
            &self.title_transform,
            &self.title_scorer,
            &self.gate_hashtag,
            &self.gate_title,
            &self.gate_image,
            &self.fusion,
        ]
    }

    pub fn parts_mut(&mut self) -> [&mut Mlp<T>; 9] {
        [
            &mut self.image_proj,
            &mut self.hashtag_transform,
            &mut self.hashtag_scorer,
            &mut self.title_transform,
            &mut self.title_scorer,
            &mut self.gate_hashtag,
            &mut self.gate_title,
            &mut self.gate_image,
            &mut self.fusion,
        ]
    }

    pub fn d_mod(&self) -> usize {
        self.image_proj.spec().output_width()
    }

    pub fn d_emb(&self) -> usize {
        self.fusion.spec().output_width()
    }
}

/// Trace of one [`attentive_average`] call.
#[derive(Clone, Debug)]
pub(crate) struct AttentionTrace<T> {
    transform: Vec<MlpTrace<T>>,
    scorer: Vec<MlpTrace<T>>,
    alpha: Vec<T>,
}

pub(crate) fn attentive_average_traced<T: Scalar>(
    words: &[Vec<T>],
    transform: &Mlp<T>,
    scorer: &Mlp<T>,
) -> Result<(Vec<T>, AttentionScores<T>, AttentionTrace<T>)> {
    if words.is_empty() {
        return Err(Error::Empty("attentive averaging over zero words".into()));
    }
    if scorer.spec().output_width() != 1 {
        return Err(Error::shape("attention scorer output", 1, scorer.spec().output_width()));
    }
    let transform_traces = words
        .iter()
        .map(|w| transform.forward_traced(w))
        .collect::<Result<Vec<_>>>()?;
    let scorer_traces = transform_traces
        .iter()
        .map(|t| scorer.forward_traced(t.output()))
        .collect::<Result<Vec<_>>>()?;
    let e: Vec<T> = scorer_traces.iter().map(|t| t.output()[0]).collect();
    let alpha = softmax_slice(&e);
    let width = transform.spec().output_width();
    let mut out = vec![T::zero(); width];
    for (a, t) in alpha.iter().zip(&transform_traces) {
        for (o, &f) in out.iter_mut().zip(t.output()) {
            *o = *o + *a * f;
        }
    }
    let scores = AttentionScores { e, alpha: alpha.clone() };
    let trace = AttentionTrace {
        transform: transform_traces,
        scorer: scorer_traces,
        alpha,
    };
    Ok((out, scores, trace))
}

/// Maps each word through `transform`, scores the result with `scorer` and
/// returns the softmax-weighted average of the transformed words.
pub fn attentive_average<T: Scalar>(
    words: &[Vec<T>],
    transform: &Mlp<T>,
    scorer: &Mlp<T>,
) -> Result<(Vec<T>, AttentionScores<T>)> {
    let (out, scores, _) = attentive_average_traced(words, transform, scorer)?;
    Ok((out, scores))
}

fn hadamard<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

fn check_width<T>(what: &str, v: &[T], want: usize) -> Result<()> {
    if v.len() == want {
        Ok(())
    } else {
        Err(Error::shape(what, want, v.len()))
    }
}

/// Simultaneous cross gating: both outputs are computed from the original
/// inputs, `f_h' = f_h ⊙ gate_h(f_t)` and `f_t' = f_t ⊙ gate_t(f_h)`.
pub fn cross_gate<T: Scalar>(
    f_h: &[T],
    f_t: &[T],
    gate_h: &Mlp<T>,
    gate_t: &Mlp<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    check_width("cross_gate hashtag", f_h, gate_h.spec().output_width())?;
    check_width("cross_gate title", f_t, gate_t.spec().output_width())?;
    let a_h = gate_h.forward(f_t)?;
    let a_t = gate_t.forward(f_h)?;
    Ok((hadamard(f_h, &a_h), hadamard(f_t, &a_t)))
}

/// `f_im' = f_im ⊙ gate_i([f_h', f_t'])`.
pub fn image_gate<T: Scalar>(f_im: &[T], f_h: &[T], f_t: &[T], gate_i: &Mlp<T>) -> Result<Vec<T>> {
    check_width("image_gate image", f_im, gate_i.spec().output_width())?;
    let cat = [f_h, f_t].concat();
    let a = gate_i.forward(&cat)?;
    Ok(hadamard(f_im, &a))
}

/// Everything the backward pass needs from one embedding forward pass.
#[derive(Clone, Debug)]
pub(crate) struct EmbedTrace<T> {
    image_proj: MlpTrace<T>,
    hashtag: Option<AttentionTrace<T>>,
    title: Option<AttentionTrace<T>>,
    g_h: Vec<T>,
    g_t: Vec<T>,
    gate_hashtag: MlpTrace<T>,
    gate_title: MlpTrace<T>,
    f_im: Vec<T>,
    gate_image: MlpTrace<T>,
    fusion: MlpTrace<T>,
    d_mod: usize,
}

fn convert<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

pub(crate) fn embed_traced<T: Scalar>(
    item: &ItemFeatures,
    params: &EmbeddingParams<T>,
) -> Result<(Vec<T>, ModalityFeatures<T>, EmbedTrace<T>)> {
    let d_mod = params.d_mod();
    let wrap = |e: Error| match e {
        Error::Shape { context, expected, found } => Error::Item {
            item_id: item.item_id.clone(),
            message: format!("shape mismatch in {context}: expected {expected}, found {found}"),
        },
        other => other,
    };
    let image: Vec<T> = convert(&item.image);
    let image_proj = params.image_proj.forward_traced(&image).map_err(wrap)?;

    let modality = |words: &[Vec<f64>], transform: &Mlp<T>, scorer: &Mlp<T>| -> Result<(Vec<T>, Option<AttentionTrace<T>>)> {
        if words.is_empty() {
            return Ok((vec![T::zero(); d_mod], None));
        }
        let words: Vec<Vec<T>> = words.iter().map(|w| convert(w)).collect();
        let (g, _, trace) = attentive_average_traced(&words, transform, scorer).map_err(wrap)?;
        Ok((g, Some(trace)))
    };
    let (g_h, hashtag) = modality(&item.hashtag, &params.hashtag_transform, &params.hashtag_scorer)?;
    let (g_t, title) = modality(&item.title, &params.title_transform, &params.title_scorer)?;

    let gate_hashtag = params.gate_hashtag.forward_traced(&g_t)?;
    let gate_title = params.gate_title.forward_traced(&g_h)?;
    let f_h = hadamard(&g_h, gate_hashtag.output());
    let f_t = hadamard(&g_t, gate_title.output());

    let f_im_raw = image_proj.output().to_vec();
    let gate_image = params.gate_image.forward_traced(&[f_h.as_slice(), &f_t].concat())?;
    let f_im = hadamard(&f_im_raw, gate_image.output());

    let fusion = params.fusion.forward_traced(&[f_im.as_slice(), &f_h, &f_t].concat())?;
    let out = fusion.output().to_vec();
    let feats = ModalityFeatures { f_im, f_h, f_t };
    let trace = EmbedTrace {
        image_proj,
        hashtag,
        title,
        g_h,
        g_t,
        gate_hashtag,
        gate_title,
        f_im: f_im_raw,
        gate_image,
        fusion,
        d_mod,
    };
    Ok((out, feats, trace))
}

/// Embeds one item. Empty hashtag or title lists contribute a zero vector.
pub fn embed_item<T: Scalar>(item: &ItemFeatures, params: &EmbeddingParams<T>) -> Result<EmbeddedItem<T>> {
    let (f, _, _) = embed_traced(item, params)?;
    Ok(EmbeddedItem {
        item_id: item.item_id.clone(),
        f,
    })
}

/// The gated modality features that enter the fusion network.
pub fn modality_features<T: Scalar>(item: &ItemFeatures, params: &EmbeddingParams<T>) -> Result<ModalityFeatures<T>> {
    Ok(embed_traced(item, params)?.1)
}

pub(crate) use backward::embed_backward;

#[cfg(test)]
pub(crate) mod tests;
