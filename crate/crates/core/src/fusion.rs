//! Multimodal fusion of patch and text embeddings into one conditioning vector.
//!
//! The full network modulates patch embeddings with FiLM coefficients predicted
//! from the text CLS token, summarizes the modulated patches with a transformer
//! behind a learnable patch CLS token, then runs two cross-attentions:
//! text CLS over the patch tokens, and updated patch CLS over the text tokens.
//! The two attended vectors are summed. The ablation variants drop stages.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{check_dim, Error, Result};
use crate::nn::{LayerNorm, Linear, Mode, MultiHeadAttention, TransformerLayer};
use crate::params::{Group, ParamId, ParamStore};
use crate::rng::normal_matrix;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    Full,
    MeanImage,
    TextClsOnly,
    PatchTransformerOnly,
    FilmOnly,
    CrossAttentionOnly,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 6] = [
        FusionVariant::MeanImage,
        FusionVariant::TextClsOnly,
        FusionVariant::PatchTransformerOnly,
        FusionVariant::FilmOnly,
        FusionVariant::CrossAttentionOnly,
        FusionVariant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionVariant::Full => "full",
            FusionVariant::MeanImage => "mean_image",
            FusionVariant::TextClsOnly => "text_cls_only",
            FusionVariant::PatchTransformerOnly => "patch_transformer_only",
            FusionVariant::FilmOnly => "film_only",
            FusionVariant::CrossAttentionOnly => "cross_attention_only",
        }
    }

    /// Row label used in ablation tables.
    pub fn display_name(self) -> &'static str {
        match self {
            FusionVariant::Full => "Ours",
            FusionVariant::MeanImage => "Mean Image",
            FusionVariant::TextClsOnly => "Text CLS Token",
            FusionVariant::PatchTransformerOnly => "Patch Transformer",
            FusionVariant::FilmOnly => "FiLM",
            FusionVariant::CrossAttentionOnly => "Cross Attention",
        }
    }

    fn uses_film(self) -> bool {
        matches!(self, FusionVariant::Full | FusionVariant::FilmOnly)
    }

    fn uses_transformer(self) -> bool {
        !matches!(self, FusionVariant::MeanImage | FusionVariant::TextClsOnly)
    }

    fn uses_cross_attention(self) -> bool {
        matches!(self, FusionVariant::Full | FusionVariant::CrossAttentionOnly)
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub d: usize,
    pub heads: usize,
    pub depth: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { d: 256, heads: 4, depth: 2, ffn_mult: 4, dropout: 0.1 }
    }
}

/// Predicts per-feature scale and shift from the text CLS token.
///
/// The scale is `1 + residual(cls)`; residual and shift maps start at zero, so
/// a fresh head passes patch embeddings through unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmHead {
    pub gamma: Linear,
    pub beta: Linear,
}

impl FilmHead {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, d: usize) -> Self {
        Self {
            gamma: Linear::zeros(store, &format!("{name}.gamma"), group, d, d),
            beta: Linear::zeros(store, &format!("{name}.beta"), group, d, d),
        }
    }

    /// `out[i, c] = gamma(cls)[c] * e_img[i, c] + beta(cls)[c]`.
    pub fn modulate(&self, g: &mut Graph, store: &ParamStore, e_img: Var, cls_text: Var) -> Result<Var> {
        let d = self.gamma.fan_in;
        check_dim("FiLM patch width", d, g.shape(e_img).1)?;
        check_dim("FiLM condition width", d, g.shape(cls_text).1)?;
        let residual = self.gamma.forward(g, store, cls_text);
        let gamma = g.add_scalar(residual, 1.0);
        let beta = self.beta.forward(g, store, cls_text);
        let scaled = g.mul_row(e_img, gamma);
        Ok(g.add_row(scaled, beta))
    }
}

/// Learnable patch CLS token followed by a stack of transformer blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTransformer {
    pub cls: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub final_norm: LayerNorm,
}

impl PatchTransformer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        config: &FusionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let cls = store.add(format!("{name}.cls"), group, normal_matrix(rng, 1, config.d).scale(0.02));
        let layers = (0..config.depth)
            .map(|i| {
                TransformerLayer::new(
                    store,
                    &format!("{name}.layer{i}"),
                    group,
                    config.d,
                    config.heads,
                    config.ffn_mult * config.d,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(store, &format!("{name}.final_norm"), group, config.d);
        Ok(Self { cls, layers, final_norm })
    }

    /// Returns `(N+1) × d`; row 0 is the updated patch CLS token.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e: Var, dropout: f64, mode: &mut Mode) -> Result<Var> {
        let d = store.value(self.cls).cols();
        check_dim("patch transformer width", d, g.shape(e).1)?;
        if g.shape(e).0 == 0 {
            return Err(Error::NoTiles);
        }
        let cls = g.param(store, self.cls);
        let mut x = g.concat_rows(&[cls, e]);
        for layer in &self.layers {
            x = layer.forward(g, store, x, dropout, mode)?;
        }
        Ok(self.final_norm.forward(g, store, x))
    }
}

/// One fusion network (the generator and the critic each own one).
#[derive(Clone, Debug, PartialEq)]
pub struct FusionNet {
    pub variant: FusionVariant,
    pub config: FusionConfig,
    pub film: Option<FilmHead>,
    pub transformer: Option<PatchTransformer>,
    pub text_to_image: Option<MultiHeadAttention>,
    pub image_to_text: Option<MultiHeadAttention>,
    /// Trainable `d → d` map for the pooling-only variants.
    pub head_map: Option<Linear>,
}

impl FusionNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        variant: FusionVariant,
        config: &FusionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.d;
        if config.heads == 0 || !d.is_multiple_of(config.heads) {
            return Err(Error::HeadsDontDivide { d, heads: config.heads });
        }
        let film = variant.uses_film().then(|| FilmHead::new(store, &format!("{name}.film"), group, d));
        let transformer = if variant.uses_transformer() {
            Some(PatchTransformer::new(store, &format!("{name}.patch_transformer"), group, config, rng)?)
        } else {
            None
        };
        let (text_to_image, image_to_text) = if variant.uses_cross_attention() {
            (
                Some(MultiHeadAttention::new(store, &format!("{name}.t2i"), group, d, config.heads, rng)?),
                Some(MultiHeadAttention::new(store, &format!("{name}.i2t"), group, d, config.heads, rng)?),
            )
        } else {
            (None, None)
        };
        let head_map = matches!(variant, FusionVariant::MeanImage | FusionVariant::TextClsOnly)
            .then(|| Linear::new(store, &format!("{name}.head_map"), group, d, d, rng));
        Ok(Self { variant, config: config.clone(), film, transformer, text_to_image, image_to_text, head_map })
    }

    /// A view of this network as another variant, reusing every shared parameter.
    pub fn as_variant(&self, variant: FusionVariant) -> Option<Self> {
        let mut out = self.clone();
        out.variant = variant;
        if variant.uses_film() && out.film.is_none()
            || variant.uses_transformer() && out.transformer.is_none()
            || variant.uses_cross_attention() && out.text_to_image.is_none()
        {
            return None;
        }
        if !variant.uses_film() {
            out.film = None;
        }
        Some(out)
    }

    /// `e_img: N×d`, `e_text: M×d` (row 0 is the text CLS token). Returns `1×d`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e_img: Var, e_text: Var, mode: &mut Mode) -> Result<Var> {
        let d = self.config.d;
        check_dim("patch embedding width", d, g.shape(e_img).1)?;
        check_dim("text embedding width", d, g.shape(e_text).1)?;
        if g.shape(e_img).0 == 0 {
            return Err(Error::NoTiles);
        }
        if g.shape(e_text).0 == 0 {
            return Err(Error::DimensionMismatch { context: "text token count", expected: 1, got: 0 });
        }
        let cls_text = g.slice_rows(e_text, 0, 1);
        let p = self.config.dropout;
        match self.variant {
            FusionVariant::MeanImage => {
                let pooled = g.mean_rows(e_img);
                Ok(self.head_map.as_ref().expect("head map").forward(g, store, pooled))
            }
            FusionVariant::TextClsOnly => Ok(self.head_map.as_ref().expect("head map").forward(g, store, cls_text)),
            FusionVariant::PatchTransformerOnly | FusionVariant::FilmOnly => {
                let tokens = self.patch_tokens(g, store, e_img, cls_text, mode)?;
                Ok(g.slice_rows(tokens, 0, 1))
            }
            FusionVariant::Full | FusionVariant::CrossAttentionOnly => {
                let tokens = self.patch_tokens(g, store, e_img, cls_text, mode)?;
                let cls_img = g.slice_rows(tokens, 0, 1);
                let t2i = self.text_to_image.as_ref().expect("t2i attention");
                let i2t = self.image_to_text.as_ref().expect("i2t attention");
                let from_image = t2i.forward(g, store, cls_text, tokens, p, mode)?;
                let from_text = i2t.forward(g, store, cls_img, e_text, p, mode)?;
                Ok(g.add(from_text, from_image))
            }
        }
    }

    /// FiLM (when enabled) followed by the patch transformer: `(N+1) × d`.
    pub fn patch_tokens(&self, g: &mut Graph, store: &ParamStore, e_img: Var, cls_text: Var, mode: &mut Mode) -> Result<Var> {
        let modulated = match &self.film {
            Some(film) => film.modulate(g, store, e_img, cls_text)?,
            None => e_img,
        };
        let transformer = self.transformer.as_ref().expect("patch transformer");
        transformer.forward(g, store, modulated, self.config.dropout, mode)
    }

    /// Evaluation-mode fusion on plain matrices.
    pub fn fuse(&self, store: &ParamStore, e_img: &Matrix, e_text: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let a = g.constant(e_img.clone());
        let b = g.constant(e_text.clone());
        let out = self.forward(&mut g, store, a, b, &mut Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    pub fn describe(&self) -> String {
        format!("{} (d={}, heads={}, depth={})", self.variant, self.config.d, self.config.heads, self.config.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small() -> FusionConfig {
        FusionConfig { d: 8, heads: 2, depth: 1, ffn_mult: 2, dropout: 0.0 }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in FusionVariant::ALL {
            assert_eq!(v.as_str().parse::<FusionVariant>().unwrap(), v);
        }
        assert_eq!("nope".parse::<FusionVariant>().unwrap_err(), Error::UnknownVariant("nope".into()));
    }

    #[test]
    fn forced_film_coefficients() {
        let mut store = ParamStore::new();
        let head = FilmHead::new(&mut store, "f", Group::Generator, 2);
        store.set(head.gamma.bias, Matrix::row_vector(&[1.0, -0.5]));
        store.set(head.beta.bias, Matrix::row_vector(&[1.0, -1.0]));
        let mut g = Graph::new();
        let e = g.constant(Matrix::row_vector(&[1.0, 2.0]));
        let c = g.constant(Matrix::row_vector(&[0.3, -0.7]));
        let out = head.modulate(&mut g, &store, e, c).unwrap();
        assert_eq!(g.value(out).as_slice(), &[3.0, 0.0]);
    }

    #[test]
    fn film_rejects_mismatched_widths() {
        let mut store = ParamStore::new();
        let head = FilmHead::new(&mut store, "f", Group::Generator, 4);
        let mut g = Graph::new();
        let e = g.constant(Matrix::zeros(2, 3));
        let c = g.constant(Matrix::zeros(1, 4));
        assert!(matches!(head.modulate(&mut g, &store, e, c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn every_variant_yields_finite_d_vector() {
        let mut rng = seeded(3);
        let e_img = normal_matrix(&mut rng, 5, 8);
        let e_text = normal_matrix(&mut rng, 4, 8);
        for v in FusionVariant::ALL {
            let mut store = ParamStore::new();
            let net = FusionNet::new(&mut store, "fz", Group::Generator, v, &small(), &mut rng).unwrap();
            let out = net.fuse(&store, &e_img, &e_text).unwrap();
            assert_eq!(out.shape(), (1, 8), "{v}");
            assert!(out.is_finite());
            // output width is independent of N and M
            let out2 = net.fuse(&store, &e_img.select_rows(&[0]), &e_text.select_rows(&[0, 1])).unwrap();
            assert_eq!(out2.shape(), (1, 8));
        }
    }

    #[test]
    fn mean_image_of_identical_rows_is_map_of_row() {
        let mut rng = seeded(4);
        let mut store = ParamStore::new();
        let net = FusionNet::new(&mut store, "fz", Group::Generator, FusionVariant::MeanImage, &small(), &mut rng).unwrap();
        let r = normal_matrix(&mut rng, 1, 8);
        let e_img = Matrix::vstack(&[&r, &r, &r]);
        let out = net.fuse(&store, &e_img, &normal_matrix(&mut rng, 2, 8)).unwrap();
        let expect = net.head_map.as_ref().unwrap().apply(&store, &r);
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn film_only_equals_full_with_cls_passthrough() {
        let mut rng = seeded(5);
        let mut store = ParamStore::new();
        let full = FusionNet::new(&mut store, "fz", Group::Generator, FusionVariant::Full, &small(), &mut rng).unwrap();
        // give FiLM non-trivial coefficients so the check is not vacuous
        let film = full.film.as_ref().unwrap();
        store.set(film.gamma.weight, normal_matrix(&mut rng, 8, 8).scale(0.3));
        store.set(film.beta.weight, normal_matrix(&mut rng, 8, 8).scale(0.3));
        let e_img = normal_matrix(&mut rng, 4, 8);
        let e_text = normal_matrix(&mut rng, 3, 8);

        let film_only = full.as_variant(FusionVariant::FilmOnly).unwrap();
        let via_variant = film_only.fuse(&store, &e_img, &e_text).unwrap();

        let mut g = Graph::new();
        let a = g.constant(e_img);
        let b = g.constant(e_text);
        let cls_text = g.slice_rows(b, 0, 1);
        let tokens = full.patch_tokens(&mut g, &store, a, cls_text, &mut Mode::Eval).unwrap();
        let passthrough = g.slice_rows(tokens, 0, 1);
        assert_eq!(g.value(passthrough), &via_variant);
    }

    #[test]
    fn transformer_output_has_cls_row() {
        let mut rng = seeded(6);
        let mut store = ParamStore::new();
        let t = PatchTransformer::new(&mut store, "t", Group::Generator, &small(), &mut rng).unwrap();
        let mut g = Graph::new();
        let e = g.constant(normal_matrix(&mut rng, 1, 8));
        let out = t.forward(&mut g, &store, e, 0.0, &mut Mode::Eval).unwrap();
        assert_eq!(g.shape(out), (2, 8));
        assert!(g.value(out).is_finite());
    }
}
