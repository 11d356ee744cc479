//! Conditional WGAN-GP with separate generator-side and critic-side fusion
//! networks, the unconditional and categorical baselines, and a conditional VAE.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::encoders::{sample_patches, SideProjections, StubImageEncoder, StubTextEncoder, STUB_IMAGE_DIM, STUB_TEXT_BUCKETS};
use crate::error::{check_dim, Error, Result};
use crate::fusion::{FusionConfig, FusionNet, FusionVariant};
use crate::nn::{Linear, Mlp, Mode};
use crate::params::{Adam, AdamConfig, Group, ParamStore};
use crate::rng::{normal_matrix, stream, tags, uniform_matrix, Rng64};
use crate::tensor::Matrix;

/// Negative slope of the critic's hidden activations.
pub const CRITIC_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Multimodal conditioning through the fusion networks.
    Gemm,
    VanillaWganGp,
    /// One-hot disease type and primary site.
    CondWganGp,
    Cvae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gemm, ModelKind::VanillaWganGp, ModelKind::CondWganGp, ModelKind::Cvae];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gemm => "gemm",
            ModelKind::VanillaWganGp => "vanilla_wgan_gp",
            ModelKind::CondWganGp => "cond_wgan_gp",
            ModelKind::Cvae => "cvae",
        }
    }

    pub fn needs_labels(self) -> bool {
        matches!(self, ModelKind::CondWganGp | ModelKind::Cvae)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub check_every: u64,
    pub patience: u32,
    pub min_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub variant: FusionVariant,
    pub fusion: FusionConfig,
    pub d_noise: usize,
    pub n_patches: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub gp_weight: f64,
    pub critic_steps: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub max_steps: u64,
    pub max_tokens: usize,
    pub seed: u64,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gemm,
            variant: FusionVariant::Full,
            fusion: FusionConfig::default(),
            d_noise: 256,
            n_patches: 256,
            batch_size: 64,
            hidden: vec![256, 256],
            gp_weight: 10.0,
            critic_steps: 5,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            max_steps: 2000,
            max_tokens: crate::encoders::DEFAULT_MAX_TOKENS,
            seed: 0,
            early_stopping: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.fusion.d),
            ("heads", self.fusion.heads),
            ("ffn_mult", self.fusion.ffn_mult),
            ("d_noise", self.d_noise),
            ("n_patches", self.n_patches),
            ("batch_size", self.batch_size),
            ("critic_steps", self.critic_steps),
            ("max_tokens", self.max_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        let rates = [("lr_generator", self.lr_generator), ("lr_discriminator", self.lr_discriminator), ("gp_weight", self.gp_weight)];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.fusion.dropout) {
            return Err(Error::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        if !self.fusion.d.is_multiple_of(self.fusion.heads) {
            return Err(Error::HeadsDontDivide { d: self.fusion.d, heads: self.fusion.heads });
        }
        Ok(())
    }
}

/// Inputs of one case: cached native embeddings, labels and (for training) its profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseInputs {
    pub case_id: String,
    /// All tiles of the case, `T × native_image`.
    pub image: Matrix,
    /// Text tokens, `M × native_text`, CLS first.
    pub text: Matrix,
    pub disease_type: String,
    pub primary_site: String,
}

/// Cases with aligned expression profiles (row `i` belongs to `cases[i]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub cases: Vec<CaseInputs>,
    pub profiles: Matrix,
}

impl Cohort {
    pub fn new(cases: Vec<CaseInputs>, profiles: Matrix) -> Result<Self> {
        check_dim("cohort profiles", cases.len(), profiles.rows())?;
        Ok(Self { cases, profiles })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self { cases: rows.iter().map(|&i| self.cases[i].clone()).collect(), profiles: self.profiles.select_rows(rows) }
    }
}

/// Category levels for one-hot conditioning, fitted on training cases.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categories {
    pub disease_types: Vec<String>,
    pub primary_sites: Vec<String>,
}

impl Categories {
    pub fn fit(cases: &[CaseInputs]) -> Result<Self> {
        let mut diseases = alloc::collections::BTreeSet::new();
        let mut sites = alloc::collections::BTreeSet::new();
        for c in cases {
            if c.disease_type.is_empty() || c.primary_site.is_empty() {
                return Err(Error::MissingLabels(format!("case {} lacks disease type or primary site", c.case_id)));
            }
            diseases.insert(c.disease_type.clone());
            sites.insert(c.primary_site.clone());
        }
        Ok(Self { disease_types: diseases.into_iter().collect(), primary_sites: sites.into_iter().collect() })
    }

    pub fn width(&self) -> usize {
        self.disease_types.len() + self.primary_sites.len()
    }

    /// `one_hot(disease) ⊕ one_hot(site)`; unseen levels encode as zeros.
    pub fn encode(&self, disease: &str, site: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.width()];
        if let Some(i) = self.disease_types.iter().position(|d| d == disease) {
            v[i] = 1.0;
        }
        if let Some(i) = self.primary_sites.iter().position(|s| s == site) {
            v[self.disease_types.len() + i] = 1.0;
        }
        v
    }

    pub fn encode_cases(&self, cases: &[CaseInputs], rows: &[usize]) -> Matrix {
        let data = rows.iter().flat_map(|&i| self.encode(&cases[i].disease_type, &cases[i].primary_site)).collect();
        Matrix::from_vec(rows.len(), self.width(), data)
    }
}

/// Scores rows of `[x ; condition]`.
pub trait Critic {
    fn input_width(&self) -> usize;

    /// `B × 1` scores.
    fn score(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Var;

    /// Row-wise gradient of the score with respect to the input, as graph ops
    /// so it can itself be differentiated with respect to the parameters.
    fn input_grad(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Var;
}

/// `D(u) = u·w + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearCritic {
    pub layer: Linear,
}

impl LinearCritic {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, rng: &mut R) -> Self {
        Self { layer: Linear::new(store, name, Group::Discriminator, input, 1, rng) }
    }
}

impl Critic for LinearCritic {
    fn input_width(&self) -> usize {
        self.layer.fan_in
    }

    fn score(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Var {
        self.layer.forward(g, store, u)
    }

    fn input_grad(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Var {
        let ones = g.constant(Matrix::filled(g.shape(u).0, 1, 1.0));
        let w = g.param(store, self.layer.weight);
        g.matmul_t(ones, false, w, true)
    }
}

/// Leaky-rectifier MLP critic with a scalar linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpCritic {
    pub mlp: Mlp,
}

impl MlpCritic {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self { mlp: Mlp::new(store, name, Group::Discriminator, &widths, CRITIC_SLOPE, rng) }
    }
}

impl Critic for MlpCritic {
    fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    fn score(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Var {
        self.mlp.forward(g, store, u)
    }

    fn input_grad(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Var {
        let (_, pre) = self.mlp.forward_with_preactivations(g, store, u);
        let layers = &self.mlp.layers;
        let k = layers.len();
        let ones = g.constant(Matrix::filled(g.shape(u).0, 1, 1.0));
        let w_out = g.param(store, layers[k - 1].weight);
        let mut delta = g.matmul_t(ones, false, w_out, true);
        let slope = self.mlp.slope;
        // activation slopes are piecewise constant, so they enter as constants
        for i in (0..k - 1).rev() {
            let mask = g.value(pre[i]).map(|a| if a > 0.0 { 1.0 } else { slope });
            delta = g.mul_const(delta, mask);
            let w = g.param(store, layers[i].weight);
            delta = g.matmul_t(delta, false, w, true);
        }
        delta
    }
}

/// Rectifier MLP `(d_noise + d_cond) → hidden → g` with a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub mlp: Mlp,
    pub d_noise: usize,
    pub d_cond: usize,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_noise: usize,
        d_cond: usize,
        hidden: &[usize],
        g_out: usize,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![d_noise + d_cond];
        widths.extend_from_slice(hidden);
        widths.push(g_out);
        Self { mlp: Mlp::new(store, name, Group::Generator, &widths, 0.0, rng), d_noise, d_cond }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var, cond: Option<Var>) -> Result<Var> {
        check_dim("noise width", self.d_noise, g.shape(z).1)?;
        let input = match cond {
            Some(c) => {
                check_dim("generator condition width", self.d_cond, g.shape(c).1)?;
                check_dim("generator condition rows", g.shape(z).0, g.shape(c).0)?;
                g.concat_cols(&[z, c])
            }
            None => {
                check_dim("generator condition width", self.d_cond, 0)?;
                z
            }
        };
        Ok(self.mlp.forward(g, store, input))
    }
}

/// Profiles `G([z ; e_G])`, deterministic in the weights and inputs.
pub fn generate(gen: &Generator, store: &ParamStore, z: &Matrix, e_g: Option<&Matrix>) -> Result<Matrix> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let cv = e_g.map(|c| g.constant(c.clone()));
    let out = gen.forward(&mut g, store, zv, cv)?;
    Ok(g.value(out).clone())
}

/// Critic scores of `[x ; e_D]`, one per row.
pub fn critic_score(critic: &dyn Critic, store: &ParamStore, x: &Matrix, e_d: Option<&Matrix>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let u = critic_input(&mut g, x, e_d)?;
    check_dim("critic input width", critic.input_width(), g.shape(u).1)?;
    let s = critic.score(&mut g, store, u);
    Ok(g.value(s).as_slice().to_vec())
}

fn critic_input(g: &mut Graph, x: &Matrix, e: Option<&Matrix>) -> Result<Var> {
    let xv = g.constant(x.clone());
    Ok(match e {
        Some(e) => {
            check_dim("condition rows", x.rows(), e.rows())?;
            let ev = g.constant(e.clone());
            g.concat_cols(&[xv, ev])
        }
        None => xv,
    })
}

/// Gradient penalty `mean_b (‖∇_x̂ D([x̂_b ; e_b])‖₂ − 1)²` with
/// `x̂ = ε·x_real + (1 − ε)·x_fake` on the expression coordinates only.
pub fn gradient_penalty(
    g: &mut Graph,
    critic: &dyn Critic,
    store: &ParamStore,
    x_real: Var,
    x_fake: Var,
    cond: Option<Var>,
    eps: &Matrix,
) -> Result<Var> {
    let (b, width) = g.shape(x_real);
    check_dim("fake batch rows", b, g.shape(x_fake).0)?;
    check_dim("fake batch width", width, g.shape(x_fake).1)?;
    check_dim("interpolation weights", b, eps.rows())?;
    let e = g.constant(eps.clone());
    let one_minus = g.constant(eps.map(|v| 1.0 - v));
    let real_part = g.mul_col(x_real, e);
    let fake_part = g.mul_col(x_fake, one_minus);
    let x_hat = g.add(real_part, fake_part);
    let u = match cond {
        Some(c) => {
            check_dim("condition rows", b, g.shape(c).0)?;
            g.concat_cols(&[x_hat, c])
        }
        None => x_hat,
    };
    check_dim("critic input width", critic.input_width(), g.shape(u).1)?;
    let grad = critic.input_grad(g, store, u);
    let gx = g.slice_cols(grad, 0, width);
    let sq = g.square(gx);
    let ss = g.sum_cols(sq);
    let ss = g.add_scalar(ss, NORM_EPS);
    let norm = g.sqrt(ss);
    let dev = g.add_scalar(norm, -1.0);
    let pen = g.square(dev);
    Ok(g.mean(pen))
}

/// `KL(N(μ, exp(logvar)) ‖ N(0, 1))` summed over dimensions.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + crate::math::exp(lv) - 1.0 - lv))
        .sum()
}

/// Frozen stub encoders; their weights are fixed constants independent of the run seed.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEncoders {
    pub image: StubImageEncoder,
    pub text: StubTextEncoder,
}

pub const TEXT_TABLE_SEED: u64 = 0;

impl FrozenEncoders {
    pub fn new(store: &mut ParamStore) -> Self {
        Self { image: StubImageEncoder::new(store), text: StubTextEncoder::new(store, TEXT_TABLE_SEED) }
    }
}

/// Projections plus fusion network of one side.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionSide {
    pub projections: SideProjections,
    pub fusion: FusionNet,
}

impl FusionSide {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, group: Group, config: &TrainConfig, dims: &ModelDims, rng: &mut R) -> Result<Self> {
        let d = config.fusion.d;
        let projections = SideProjections::new(store, &format!("{name}.proj"), group, dims.image_native, dims.text_native, d, rng);
        let fusion = FusionNet::new(store, &format!("{name}.fusion"), group, config.variant, &config.fusion, rng)?;
        Ok(Self { projections, fusion })
    }

    /// `B × d` conditioning for the selected cases and patch subsets.
    pub fn condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cohort: &Cohort,
        rows: &[usize],
        patches: &[Vec<usize>],
        mode: &mut Mode,
    ) -> Result<Var> {
        let image_parts: Vec<Matrix> = rows.iter().zip(patches).map(|(&i, p)| cohort.cases[i].image.select_rows(p)).collect();
        let image_refs: Vec<&Matrix> = image_parts.iter().collect();
        let text_refs: Vec<&Matrix> = rows.iter().map(|&i| &cohort.cases[i].text).collect();
        let image = g.constant(Matrix::vstack(&image_refs));
        let text = g.constant(Matrix::vstack(&text_refs));
        let image = self.projections.image.project(g, store, image)?;
        let text = self.projections.text.project(g, store, text)?;
        let mut outs = Vec::with_capacity(rows.len());
        let (mut io, mut to) = (0, 0);
        for (k, &i) in rows.iter().enumerate() {
            let n = patches[k].len();
            let m = cohort.cases[i].text.rows();
            let e_img = g.slice_rows(image, io, n);
            let e_txt = g.slice_rows(text, to, m);
            outs.push(self.fusion.forward(g, store, e_img, e_txt, mode)?);
            io += n;
            to += m;
        }
        Ok(g.concat_rows(&outs))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub g: usize,
    pub image_native: usize,
    pub text_native: usize,
}

impl ModelDims {
    pub fn with_stub_encoders(g: usize) -> Self {
        Self { g, image_native: STUB_IMAGE_DIM, text_native: STUB_TEXT_BUCKETS }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Conditioner {
    None,
    Categorical(Categories),
    Multimodal { encoders: FrozenEncoders, generator_side: Box<FusionSide>, critic_side: Box<FusionSide> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub kind: ModelKind,
    pub conditioner: Conditioner,
    /// Generator, or the CVAE decoder.
    pub generator: Generator,
    pub critic: Option<MlpCritic>,
    /// CVAE encoder `[x ; c] → [μ ; logvar]`.
    pub encoder: Option<Mlp>,
}

impl GanModel {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &TrainConfig,
        dims: &ModelDims,
        categories: Option<Categories>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let conditioner = match config.kind {
            ModelKind::Gemm => {
                let encoders = FrozenEncoders::new(store);
                let generator_side = Box::new(FusionSide::new(store, "gen_side", Group::Generator, config, dims, rng)?);
                let critic_side = Box::new(FusionSide::new(store, "critic_side", Group::Discriminator, config, dims, rng)?);
                Conditioner::Multimodal { encoders, generator_side, critic_side }
            }
            ModelKind::VanillaWganGp => Conditioner::None,
            ModelKind::CondWganGp | ModelKind::Cvae => {
                let c = categories.ok_or_else(|| Error::MissingLabels("categorical conditioning needs label levels".into()))?;
                if c.width() == 0 {
                    return Err(Error::MissingLabels("no label levels".into()));
                }
                Conditioner::Categorical(c)
            }
        };
        let d_cond = match &conditioner {
            Conditioner::None => 0,
            Conditioner::Categorical(c) => c.width(),
            Conditioner::Multimodal { .. } => config.fusion.d,
        };
        let generator = Generator::new(store, "generator", config.d_noise, d_cond, &config.hidden, dims.g, rng);
        let (critic, encoder) = if config.kind == ModelKind::Cvae {
            let mut widths = vec![dims.g + d_cond];
            widths.extend_from_slice(&config.hidden);
            widths.push(2 * config.d_noise);
            (None, Some(Mlp::new(store, "cvae_encoder", Group::Generator, &widths, 0.0, rng)))
        } else {
            (Some(MlpCritic::new(store, "critic", dims.g + d_cond, &config.hidden, rng)), None)
        };
        Ok(Self { kind: config.kind, conditioner, generator, critic, encoder })
    }

    pub fn categories(&self) -> Option<&Categories> {
        match &self.conditioner {
            Conditioner::Categorical(c) => Some(c),
            _ => None,
        }
    }

    /// Conditioning rows for the generator (`critic_side = false`) or critic.
    #[allow(clippy::too_many_arguments)]
    pub fn condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        critic_side: bool,
        cohort: &Cohort,
        rows: &[usize],
        patches: &[Vec<usize>],
        mode: &mut Mode,
    ) -> Result<Option<Var>> {
        match &self.conditioner {
            Conditioner::None => Ok(None),
            Conditioner::Categorical(c) => Ok(Some(g.constant(c.encode_cases(&cohort.cases, rows)))),
            Conditioner::Multimodal { generator_side, critic_side: cs, .. } => {
                let side = if critic_side { cs } else { generator_side };
                side.condition(g, store, cohort, rows, patches, mode).map(Some)
            }
        }
    }

    fn needs_patches(&self) -> bool {
        matches!(self.conditioner, Conditioner::Multimodal { .. })
    }
}

/// Per-step diagnostics. CVAE steps report `recon` and `kl`; GAN steps the rest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: u64,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub gp: f64,
    /// `mean D(real) − mean D(fake)` of the last critic iteration.
    pub wasserstein: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Everything needed to continue training: parameters, optimizers and step count.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub store: ParamStore,
    pub model: GanModel,
    pub opt_generator: Adam,
    pub opt_critic: Adam,
    pub step: u64,
}

struct StepBatch {
    rows: Vec<usize>,
    patches: Vec<Vec<usize>>,
    real: Matrix,
}

impl TrainState {
    pub fn new(config: TrainConfig, dims: ModelDims, categories: Option<Categories>) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = stream(config.seed, tags::INIT, 0);
        let model = GanModel::new(&mut store, &config, &dims, categories, &mut rng)?;
        let adam = |lr| AdamConfig { lr, beta1: config.beta1, beta2: config.beta2, eps: 1e-8 };
        Ok(Self {
            opt_generator: Adam::new(adam(config.lr_generator), Group::Generator),
            opt_critic: Adam::new(adam(config.lr_discriminator), Group::Discriminator),
            config,
            dims,
            store,
            model,
            step: 0,
        })
    }

    /// Builds a state whose categorical levels come from `cohort` when the kind needs them.
    pub fn for_cohort(config: TrainConfig, cohort: &Cohort) -> Result<Self> {
        let dims = ModelDims {
            g: cohort.profiles.cols(),
            image_native: cohort.cases.first().map_or(STUB_IMAGE_DIM, |c| c.image.cols()),
            text_native: cohort.cases.first().map_or(STUB_TEXT_BUCKETS, |c| c.text.cols()),
        };
        let categories = if config.kind.needs_labels() { Some(Categories::fit(&cohort.cases)?) } else { None };
        Self::new(config, dims, categories)
    }

    fn check_cohort(&self, cohort: &Cohort) -> Result<()> {
        if cohort.is_empty() {
            return Err(Error::TooFewSamples { got: 0, min: 1 });
        }
        check_dim("profile width", self.dims.g, cohort.profiles.cols())?;
        if self.model.needs_patches() {
            for c in &cohort.cases {
                if c.image.rows() == 0 {
                    return Err(Error::NoTiles);
                }
                check_dim("native image width", self.dims.image_native, c.image.cols())?;
                check_dim("native text width", self.dims.text_native, c.text.cols())?;
            }
        }
        if self.config.kind.needs_labels() {
            if let Some(c) = cohort.cases.iter().find(|c| c.disease_type.is_empty() || c.primary_site.is_empty()) {
                return Err(Error::MissingLabels(format!("case {} lacks disease type or primary site", c.case_id)));
            }
        }
        Ok(())
    }

    fn draw_patches<R: Rng + ?Sized>(&self, cohort: &Cohort, rows: &[usize], rng: &mut R) -> Result<Vec<Vec<usize>>> {
        if !self.model.needs_patches() {
            return Ok(vec![Vec::new(); rows.len()]);
        }
        rows.iter().map(|&i| sample_patches(cohort.cases[i].image.rows(), self.config.n_patches, rng)).collect()
    }

    /// One optimization step on a batch drawn from `cohort` by the step's own stream.
    pub fn train_step(&mut self, cohort: &Cohort) -> Result<StepLosses> {
        self.check_cohort(cohort)?;
        let mut rng = stream(self.config.seed, tags::BATCH, self.step);
        let rows = sample_patches(cohort.len(), self.config.batch_size, &mut rng)?;
        self.train_step_on(cohort, &rows)
    }

    /// One optimization step on the given rows of `cohort`: `critic_steps`
    /// critic updates followed by one generator update (or one CVAE update).
    pub fn train_step_on(&mut self, cohort: &Cohort, rows: &[usize]) -> Result<StepLosses> {
        self.check_cohort(cohort)?;
        let mut rng = stream(self.config.seed, tags::TRAIN_STEP, self.step);
        let patches = self.draw_patches(cohort, rows, &mut rng)?;
        let batch = StepBatch { rows: rows.to_vec(), patches, real: cohort.profiles.select_rows(rows) };
        let step = self.step;
        let mut losses = if self.config.kind == ModelKind::Cvae {
            self.cvae_phase(cohort, &batch, &mut rng)?
        } else {
            let mut l = self.critic_phase(cohort, &batch, &mut rng)?;
            l.gen_loss = self.generator_phase(cohort, &batch, &mut rng)?;
            l
        };
        losses.step = step;
        for (what, v) in [("critic loss", losses.critic_loss), ("generator loss", losses.gen_loss), ("gradient penalty", losses.gp)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { step, what });
            }
        }
        self.step += 1;
        Ok(losses)
    }

    fn critic_phase(&mut self, cohort: &Cohort, batch: &StepBatch, rng: &mut Rng64) -> Result<StepLosses> {
        let b = batch.rows.len();
        let critic = self.model.critic.clone().expect("GAN model has a critic");
        let e_g = {
            let mut g = Graph::new();
            let mut mode = Mode::Train(Rng64::seed_from_u64(rng.random()));
            self.model
                .condition(&mut g, &self.store, false, cohort, &batch.rows, &batch.patches, &mut mode)?
                .map(|v| g.value(v).clone())
        };
        let mut out = StepLosses::default();
        for _ in 0..self.config.critic_steps {
            let z = normal_matrix(rng, b, self.config.d_noise);
            let fake = generate(&self.model.generator, &self.store, &z, e_g.as_ref())?;
            let eps = uniform_matrix(rng, b, 1, 0.0, 1.0);
            let mut mode = Mode::Train(Rng64::seed_from_u64(rng.random()));
            let mut g = Graph::new();
            let e_d = self.model.condition(&mut g, &self.store, true, cohort, &batch.rows, &batch.patches, &mut mode)?;
            let real = g.constant(batch.real.clone());
            let fake = g.constant(fake);
            let u_real = match e_d {
                Some(e) => g.concat_cols(&[real, e]),
                None => real,
            };
            let u_fake = match e_d {
                Some(e) => g.concat_cols(&[fake, e]),
                None => fake,
            };
            let s_real = critic.score(&mut g, &self.store, u_real);
            let s_fake = critic.score(&mut g, &self.store, u_fake);
            let m_real = g.mean(s_real);
            let m_fake = g.mean(s_fake);
            let gp = gradient_penalty(&mut g, &critic, &self.store, real, fake, e_d, &eps)?;
            let w = g.sub(m_fake, m_real);
            let pen = g.scale(gp, self.config.gp_weight);
            let loss = g.add(w, pen);
            let loss_value = g.value(loss)[(0, 0)];
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { step: self.step, what: "critic loss" });
            }
            let grads = g.backward(loss);
            self.opt_critic.step(&mut self.store, &grads);
            let k = self.config.critic_steps as f64;
            out.critic_loss += loss_value / k;
            out.gp += g.value(gp)[(0, 0)] / k;
            out.wasserstein = -g.value(w)[(0, 0)];
        }
        Ok(out)
    }

    fn generator_phase(&mut self, cohort: &Cohort, batch: &StepBatch, rng: &mut Rng64) -> Result<f64> {
        let b = batch.rows.len();
        let critic = self.model.critic.clone().expect("GAN model has a critic");
        let mut g = Graph::new();
        let mut d_mode = Mode::Train(Rng64::seed_from_u64(rng.random()));
        let e_d = self
            .model
            .condition(&mut g, &self.store, true, cohort, &batch.rows, &batch.patches, &mut d_mode)?
            .map(|v| g.value(v).clone());
        let mut g = Graph::new();
        let mut mode = Mode::Train(Rng64::seed_from_u64(rng.random()));
        let e_g = self.model.condition(&mut g, &self.store, false, cohort, &batch.rows, &batch.patches, &mut mode)?;
        let z = g.constant(normal_matrix(rng, b, self.config.d_noise));
        let fake = self.model.generator.forward(&mut g, &self.store, z, e_g)?;
        let u = match e_d {
            Some(e) => {
                let e = g.constant(e);
                g.concat_cols(&[fake, e])
            }
            None => fake,
        };
        let s = critic.score(&mut g, &self.store, u);
        let m = g.mean(s);
        let loss = g.neg(m);
        let value = g.value(loss)[(0, 0)];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, what: "generator loss" });
        }
        let grads = g.backward(loss);
        self.opt_generator.step(&mut self.store, &grads);
        Ok(value)
    }

    fn cvae_phase(&mut self, cohort: &Cohort, batch: &StepBatch, rng: &mut Rng64) -> Result<StepLosses> {
        let b = batch.rows.len();
        let latent = self.config.d_noise;
        let encoder = self.model.encoder.as_ref().expect("CVAE has an encoder");
        let mut g = Graph::new();
        let cond = self.model.condition(&mut g, &self.store, false, cohort, &batch.rows, &batch.patches, &mut Mode::Eval)?;
        let x = g.constant(batch.real.clone());
        let enc_in = match cond {
            Some(c) => g.concat_cols(&[x, c]),
            None => x,
        };
        let stats = encoder.forward(&mut g, &self.store, enc_in);
        let mu = g.slice_cols(stats, 0, latent);
        let logvar = g.slice_cols(stats, latent, latent);
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let noise = g.constant(normal_matrix(rng, b, latent));
        let spread = g.mul(sigma, noise);
        let z = g.add(mu, spread);
        let recon_x = self.model.generator.forward(&mut g, &self.store, z, cond)?;
        let diff = g.sub(recon_x, x);
        let sq = g.square(diff);
        let sse = g.sum(sq);
        let recon = g.scale(sse, 1.0 / b as f64);
        let mu_sq = g.square(mu);
        let var = g.exp(logvar);
        let t = g.add(mu_sq, var);
        let t = g.sub(t, logvar);
        let t = g.sum(t);
        let t = g.add_scalar(t, -((b * latent) as f64));
        let kl = g.scale(t, 0.5 / b as f64);
        let loss = g.add(recon, kl);
        let value = g.value(loss)[(0, 0)];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, what: "cvae loss" });
        }
        let grads = g.backward(loss);
        self.opt_generator.step(&mut self.store, &grads);
        Ok(StepLosses {
            critic_loss: 0.0,
            gen_loss: value,
            gp: 0.0,
            wasserstein: 0.0,
            recon: g.value(recon)[(0, 0)],
            kl: g.value(kl)[(0, 0)],
            step: 0,
        })
    }

    /// Generator-side and critic-side conditioning of `rows` in evaluation
    /// mode with a fixed patch draw.
    pub fn conditioning_pair(&self, cohort: &Cohort, rows: &[usize], seed: u64) -> Result<(Option<Matrix>, Option<Matrix>)> {
        let mut rng = stream(seed, tags::PATCHES, 0);
        let patches = self.draw_patches(cohort, rows, &mut rng)?;
        let mut g = Graph::new();
        let eg = self.model.condition(&mut g, &self.store, false, cohort, rows, &patches, &mut Mode::Eval)?;
        let ed = self.model.condition(&mut g, &self.store, true, cohort, rows, &patches, &mut Mode::Eval)?;
        Ok((eg.map(|v| g.value(v).clone()), ed.map(|v| g.value(v).clone())))
    }

    /// Critic estimate of the Wasserstein distance on `cohort`, used for early stopping.
    pub fn validation_distance(&self, cohort: &Cohort) -> Result<f64> {
        let Some(critic) = &self.model.critic else { return Ok(0.0) };
        let rows: Vec<usize> = (0..cohort.len()).collect();
        let mut rng = stream(self.config.seed, tags::VALIDATE, 0);
        let patches = self.draw_patches(cohort, &rows, &mut rng)?;
        let mut g = Graph::new();
        let eg = self.model.condition(&mut g, &self.store, false, cohort, &rows, &patches, &mut Mode::Eval)?;
        let ed = self.model.condition(&mut g, &self.store, true, cohort, &rows, &patches, &mut Mode::Eval)?;
        let z = g.constant(normal_matrix(&mut rng, rows.len(), self.config.d_noise));
        let fake = self.model.generator.forward(&mut g, &self.store, z, eg)?;
        let real = g.constant(cohort.profiles.clone());
        let (ur, uf) = match ed {
            Some(e) => (g.concat_cols(&[real, e]), g.concat_cols(&[fake, e])),
            None => (real, fake),
        };
        let sr = critic.score(&mut g, &self.store, ur);
        let sf = critic.score(&mut g, &self.store, uf);
        Ok(g.value(sr).sum() / rows.len() as f64 - g.value(sf).sum() / rows.len() as f64)
    }

    /// Named tensors covering parameters and both optimizers' moments.
    pub fn export_tensors(&self) -> Vec<(String, Matrix)> {
        let mut out: Vec<(String, Matrix)> =
            self.store.entries().iter().map(|e| (format!("param/{}", e.name), e.value.clone())).collect();
        for (tag, opt) in [("adam_generator", &self.opt_generator), ("adam_critic", &self.opt_critic)] {
            for (id, m) in &opt.first_moment {
                out.push((format!("{tag}.m/{}", self.store.entry(*id).name), m.clone()));
            }
            for (id, v) in &opt.second_moment {
                out.push((format!("{tag}.v/{}", self.store.entry(*id).name), v.clone()));
            }
        }
        out
    }

    /// Restores tensors written by [`TrainState::export_tensors`] into a state
    /// built from the same configuration.
    pub fn import_tensors(&mut self, tensors: &BTreeMap<String, Matrix>, generator_steps: u64, critic_steps: u64) -> Result<()> {
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = self.store.entry(id).name.clone();
            let value = tensors
                .get(&format!("param/{name}"))
                .ok_or_else(|| Error::InvalidArgument(format!("missing tensor for parameter {name}")))?;
            if value.shape() != self.store.value(id).shape() {
                return Err(Error::DimensionMismatch { context: "parameter shape", expected: self.store.value(id).len(), got: value.len() });
            }
            *self.store.value_mut(id) = value.clone();
        }
        let index: BTreeMap<String, crate::params::ParamId> =
            self.store.ids().map(|id| (self.store.entry(id).name.clone(), id)).collect();
        for (tag, opt, steps) in [
            ("adam_generator", &mut self.opt_generator, generator_steps),
            ("adam_critic", &mut self.opt_critic, critic_steps),
        ] {
            opt.step = steps;
            opt.first_moment.clear();
            opt.second_moment.clear();
            for (key, value) in tensors {
                let Some(rest) = key.strip_prefix(tag) else { continue };
                let (slot, name) = if let Some(n) = rest.strip_prefix(".m/") {
                    (&mut opt.first_moment, n)
                } else if let Some(n) = rest.strip_prefix(".v/") {
                    (&mut opt.second_moment, n)
                } else {
                    continue;
                };
                let id = *index.get(name).ok_or_else(|| Error::InvalidArgument(format!("optimizer state for unknown parameter {name}")))?;
                slot.insert(id, value.clone());
            }
        }
        Ok(())
    }
}

/// Outcome of [`train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps_run: u64,
    pub final_step: u64,
    pub stopped_early: bool,
}

/// Runs steps until `config.max_steps` total steps or an early stop.
/// `on_step` sees every step's losses and may stop training by returning `false`.
pub fn train(
    state: &mut TrainState,
    cohort: &Cohort,
    validation: Option<&Cohort>,
    mut on_step: impl FnMut(&StepLosses, &TrainState) -> bool,
) -> Result<TrainSummary> {
    let start = state.step;
    let mut best = f64::INFINITY;
    let mut stale = 0u32;
    let mut stopped_early = false;
    while state.step < state.config.max_steps {
        let losses = state.train_step(cohort)?;
        if !on_step(&losses, state) {
            break;
        }
        if let (Some(es), Some(val)) = (&state.config.early_stopping, validation) {
            if es.check_every > 0 && state.step.is_multiple_of(es.check_every) {
                let w = state.validation_distance(val)?;
                if w < best - es.min_delta {
                    best = w;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= es.patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    Ok(TrainSummary { steps_run: state.step - start, final_step: state.step, stopped_early })
}

/// `n_runs` generated matrices, one row per case of `cohort`; run `r` draws
/// its noise and patches from `(seed, r)`.
pub fn sample_profiles(state: &TrainState, cohort: &Cohort, n_runs: usize, seed: u64) -> Result<Vec<Matrix>> {
    let rows: Vec<usize> = (0..cohort.len()).collect();
    (0..n_runs)
        .map(|r| {
            let mut rng = stream(seed, tags::SAMPLE, r as u64);
            let patches = state.draw_patches(cohort, &rows, &mut rng)?;
            let mut g = Graph::new();
            let cond = state.model.condition(&mut g, &state.store, false, cohort, &rows, &patches, &mut Mode::Eval)?;
            let z = g.constant(normal_matrix(&mut rng, rows.len(), state.config.d_noise));
            let out = state.model.generator.forward(&mut g, &state.store, z, cond)?;
            Ok(g.value(out).clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, max_relative_error};
    use crate::rng::seeded;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let mut store = ParamStore::new();
        let gen = Generator::new(&mut store, "g", 4, 3, &[8, 8], 5, &mut seeded(1));
        for id in store.ids().collect::<Vec<_>>() {
            let (r, c) = store.value(id).shape();
            store.set(id, Matrix::zeros(r, c));
        }
        let out = generate(&gen, &store, &normal_matrix(&mut seeded(2), 6, 4), Some(&Matrix::filled(6, 3, 1.0))).unwrap();
        assert_eq!(out, Matrix::zeros(6, 5));
        assert!(matches!(generate(&gen, &store, &Matrix::zeros(6, 3), None), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn linear_critic_closed_forms() {
        let mut store = ParamStore::new();
        let critic = LinearCritic::new(&mut store, "c", 5, &mut seeded(3));
        let x = normal_matrix(&mut seeded(4), 3, 5);
        let scores = critic_score(&critic, &store, &x, None).unwrap();
        let w = store.value(critic.layer.weight);
        let b = store.value(critic.layer.bias)[(0, 0)];
        for i in 0..3 {
            let expect: f64 = b + (0..5).map(|j| x[(i, j)] * w[(j, 0)]).sum::<f64>();
            assert!((scores[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(gaussian_kl(&[0.0; 4], &[0.0; 4]), 0.0);
        assert!((gaussian_kl(&[1.0; 3], &[0.0; 3]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn mlp_critic_input_grad_matches_finite_differences() {
        let mut rng = seeded(5);
        let mut store = ParamStore::new();
        let critic = MlpCritic::new(&mut store, "c", 6, &[7, 5], &mut rng);
        let u = normal_matrix(&mut rng, 4, 6);
        let mut g = Graph::new();
        let uv = g.constant(u.clone());
        let grad = critic.input_grad(&mut g, &store, uv);
        let analytic = g.value(grad).clone();
        let numeric = finite_difference(&u, 1e-6, |m| critic.mlp.apply(&store, m).sum());
        assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-5);
    }
}
