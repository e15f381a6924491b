//! Learnable parameters and the forward/backward passes.
//!
//! Per pair, with `h_j` the token embedding of feature `j`:
//!
//! ```text
//! x_j = relu(V_j h_j + b_j)                     latent feature, H
//! t_j = tanh(W x_j),  e_j = a · t_j              attention energy
//! g   = softmax(e)                              attention over F features
//! z_j = relu(g_j x_j)        (theta_input = latent, H per feature)
//!     | relu(g_j t_j)        (theta_input = projected, H' per feature)
//! ŷ   = sigmoid(θ2_w · relu(θ1_w z + θ1_b) + θ2_b)
//! ```
//!
//! All tensors live in one flat buffer so the optimizer, the gradient checks
//! and the checkpoint format can treat the model as a single vector.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PairFeatures;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    /// F, number of contrastive features.
    pub features: usize,
    /// D, token-embedding dimension.
    pub embed: usize,
    /// H, latent dimension per feature.
    pub latent: usize,
    /// H', attention projection dimension.
    pub attention: usize,
    /// Hidden width of the classifier.
    pub hidden: usize,
}

impl Dims {
    pub fn new(features: usize, embed: usize, latent: usize, attention: usize, hidden: usize) -> Self {
        Self {
            features,
            embed,
            latent,
            attention,
            hidden,
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.features, self.embed, self.latent, self.attention, self.hidden].contains(&0) {
            return Err(Error::DimensionMismatch(format!("all dimensions must be ≥ 1, got {self:?}")));
        }
        Ok(())
    }
}

/// What the classifier consumes per feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaInput {
    /// `g_j · x_j`, F·H inputs.
    #[default]
    Latent,
    /// `g_j · tanh(W x_j)`, F·H' inputs.
    Projected,
}

/// Weights-only parameter count `F·D·H + H·H' + F·H'·H_hidden`.
///
/// Biases, the attention vector and the output layer are not counted.
pub fn parameter_count_formula(features: usize, embed: usize, latent: usize, attention: usize, hidden: usize) -> u64 {
    let (f, d, h, hp, hh) = (
        features as u64,
        embed as u64,
        latent as u64,
        attention as u64,
        hidden as u64,
    );
    f * d * h + h * hp + f * hp * hh
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tensor {
    V,
    B,
    W,
    A,
    Theta1W,
    Theta1B,
    Theta2W,
    Theta2B,
}

impl Tensor {
    pub const ALL: [Tensor; 8] = [
        Tensor::V,
        Tensor::B,
        Tensor::W,
        Tensor::A,
        Tensor::Theta1W,
        Tensor::Theta1B,
        Tensor::Theta2W,
        Tensor::Theta2B,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::V => "V",
            Tensor::B => "b",
            Tensor::W => "W",
            Tensor::A => "a",
            Tensor::Theta1W => "theta1_w",
            Tensor::Theta1B => "theta1_b",
            Tensor::Theta2W => "theta2_w",
            Tensor::Theta2B => "theta2_b",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// Offsets of every tensor inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dims: Dims,
    pub theta_input: ThetaInput,
}

impl Layout {
    pub fn new(dims: Dims, theta_input: ThetaInput) -> Self {
        Self { dims, theta_input }
    }

    /// Width of the classifier's per-feature input block.
    pub fn block(&self) -> usize {
        match self.theta_input {
            ThetaInput::Latent => self.dims.latent,
            ThetaInput::Projected => self.dims.attention,
        }
    }

    pub fn classifier_input(&self) -> usize {
        self.dims.features * self.block()
    }

    pub fn tensor_len(&self, t: Tensor) -> usize {
        let d = &self.dims;
        match t {
            Tensor::V => d.features * d.latent * d.embed,
            Tensor::B => d.features * d.latent,
            Tensor::W => d.attention * d.latent,
            Tensor::A => d.attention,
            Tensor::Theta1W => d.hidden * self.classifier_input(),
            Tensor::Theta1B => d.hidden,
            Tensor::Theta2W => d.hidden,
            Tensor::Theta2B => 1,
        }
    }

    pub fn range(&self, t: Tensor) -> Range<usize> {
        let mut start = 0;
        for u in Tensor::ALL {
            let len = self.tensor_len(u);
            if u == t {
                return start..start + len;
            }
            start += len;
        }
        unreachable!()
    }

    pub fn total(&self) -> usize {
        Tensor::ALL.iter().map(|&t| self.tensor_len(t)).sum()
    }

    /// (fan_in, fan_out) of weight tensors; `None` for biases.
    fn fans(&self, t: Tensor) -> Option<(usize, usize)> {
        let d = &self.dims;
        match t {
            Tensor::V => Some((d.embed, d.latent)),
            Tensor::W => Some((d.latent, d.attention)),
            Tensor::A => Some((d.attention, 1)),
            Tensor::Theta1W => Some((self.classifier_input(), d.hidden)),
            Tensor::Theta2W => Some((d.hidden, 1)),
            _ => None,
        }
    }
}

/// Flat tensor storage with typed views, shared by parameters and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet {
    layout: Layout,
    data: Vec<f64>,
}

impl TensorSet {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            data: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn from_data(layout: Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                layout.total(),
                data.len()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dims(&self) -> Dims {
        self.layout.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.data[self.layout.range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.layout.range(t);
        &mut self.data[r]
    }

    /// `V_j`, H×D row-major.
    pub fn v(&self, j: usize) -> &[f64] {
        let n = self.layout.dims.latent * self.layout.dims.embed;
        &self.tensor(Tensor::V)[j * n..(j + 1) * n]
    }

    pub fn b(&self, j: usize) -> &[f64] {
        let n = self.layout.dims.latent;
        &self.tensor(Tensor::B)[j * n..(j + 1) * n]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Adds `scale * other` elementwise.
    pub fn add_scaled(&mut self, other: &TensorSet, scale: f64) {
        debug_assert_eq!(self.layout, other.layout);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// First tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<Tensor> {
        Tensor::ALL
            .into_iter()
            .find(|&t| self.tensor(t).iter().any(|v| !v.is_finite()))
    }
}

/// All learnable tensors of one model.
pub type ModelParams = TensorSet;
/// Gradient of a scalar loss with respect to every tensor of [`ModelParams`].
pub type Gradients = TensorSet;

/// Glorot-uniform weights and zero biases, reproducible from `seed`.
pub fn init_params(dims: Dims, theta_input: ThetaInput, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let layout = Layout::new(dims, theta_input);
    let mut params = TensorSet::zeros(layout);
    let mut r = rng::stream(seed, "init");
    for t in Tensor::ALL {
        if let Some((fan_in, fan_out)) = layout.fans(t) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in params.tensor_mut(t) {
                *w = r.gen_range(-limit..=limit);
            }
        }
    }
    Ok(params)
}

/// Output of the per-feature affine projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeatures {
    pub features: usize,
    pub latent: usize,
    /// Pre-activations `V_j h_j + b_j`, F×H.
    pub pre: Vec<f64>,
    /// `relu(pre)`, F×H.
    pub x: Vec<f64>,
}

impl LatentFeatures {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.x[j * self.latent..(j + 1) * self.latent]
    }
}

/// Attention scores over the F features; entries positive and summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionVector(pub Vec<f64>);

impl AttentionVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_features(h: &PairFeatures, dims: &Dims) -> Result<()> {
    if h.features != dims.features || h.dim != dims.embed || h.h.len() != h.features * h.dim {
        return Err(Error::DimensionMismatch(format!(
            "features are {}×{}, model expects {}×{}",
            h.features, h.dim, dims.features, dims.embed
        )));
    }
    Ok(())
}

fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(e: &[f64]) -> Vec<f64> {
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// `x_j = relu(V_j h_j + b_j)` for every feature.
pub fn affine_forward(h: &PairFeatures, params: &ModelParams) -> Result<LatentFeatures> {
    let dims = params.dims();
    check_features(h, &dims)?;
    let (f, hl) = (dims.features, dims.latent);
    let mut pre = vec![0.0; f * hl];
    for j in 0..f {
        let out = &mut pre[j * hl..(j + 1) * hl];
        matvec(params.v(j), h.row(j), out);
        for (o, b) in out.iter_mut().zip(params.b(j)) {
            *o += b;
        }
    }
    let x = pre.iter().map(|&v| relu(v)).collect();
    Ok(LatentFeatures {
        features: f,
        latent: hl,
        pre,
        x,
    })
}

/// Projections `t_j = tanh(W x_j)` (F×H') and energies `e_j = a · t_j`.
pub fn attention_energies(x: &LatentFeatures, params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let dims = params.dims();
    let hp = dims.attention;
    let w = params.tensor(Tensor::W);
    let a = params.tensor(Tensor::A);
    let mut t = vec![0.0; x.features * hp];
    let mut e = vec![0.0; x.features];
    for j in 0..x.features {
        let tj = &mut t[j * hp..(j + 1) * hp];
        matvec(w, x.row(j), tj);
        tj.iter_mut().for_each(|v| *v = v.tanh());
        e[j] = tj.iter().zip(a).map(|(p, q)| p * q).sum();
    }
    (t, e)
}

/// Attention vector `g = softmax(a · tanh(W x_j))`.
pub fn attention_forward(x: &LatentFeatures, params: &ModelParams) -> AttentionVector {
    let (_, e) = attention_energies(x, params);
    AttentionVector(softmax(&e))
}

fn classifier_input(layout: &Layout, x: &[f64], t: &[f64], g: &[f64]) -> Vec<f64> {
    let block = layout.block();
    let source = match layout.theta_input {
        ThetaInput::Latent => x,
        ThetaInput::Projected => t,
    };
    source
        .chunks_exact(block)
        .zip(g)
        .flat_map(|(row, &gj)| row.iter().map(move |&v| relu(gj * v)))
        .collect()
}

/// (hidden pre-activations, logit) of the classifier for input `z`.
fn classifier_logit(z: &[f64], params: &ModelParams) -> (Vec<f64>, f64) {
    let hidden = params.dims().hidden;
    let mut hid_pre = vec![0.0; hidden];
    matvec(params.tensor(Tensor::Theta1W), z, &mut hid_pre);
    for (h, b) in hid_pre.iter_mut().zip(params.tensor(Tensor::Theta1B)) {
        *h += b;
    }
    let logit = hid_pre
        .iter()
        .zip(params.tensor(Tensor::Theta2W))
        .map(|(h, w)| relu(*h) * w)
        .sum::<f64>()
        + params.tensor(Tensor::Theta2B)[0];
    (hid_pre, logit)
}

/// Match probability from latent features and attention.
pub fn classifier_forward(x: &LatentFeatures, g: &AttentionVector, params: &ModelParams) -> f64 {
    let layout = params.layout();
    let t = match layout.theta_input {
        ThetaInput::Latent => Vec::new(),
        ThetaInput::Projected => attention_energies(x, params).0,
    };
    let z = classifier_input(&layout, &x.x, &t, &g.0);
    sigmoid(classifier_logit(&z, params).1)
}

/// Every intermediate of one pair's forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub latent: LatentFeatures,
    /// tanh(W x_j), F×H'.
    pub projected: Vec<f64>,
    pub energies: Vec<f64>,
    pub attention: AttentionVector,
    pub z: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub logit: f64,
    pub y_hat: f64,
}

pub fn forward(h: &PairFeatures, params: &ModelParams) -> Result<ForwardPass> {
    let latent = affine_forward(h, params)?;
    let (projected, energies) = attention_energies(&latent, params);
    let attention = AttentionVector(softmax(&energies));
    let z = classifier_input(&params.layout(), &latent.x, &projected, &attention.0);
    let (hidden_pre, logit) = classifier_logit(&z, params);
    Ok(ForwardPass {
        latent,
        projected,
        energies,
        attention,
        z,
        hidden_pre,
        logit,
        y_hat: sigmoid(logit),
    })
}

/// Accumulates into `grads` the gradient of a loss whose derivatives with
/// respect to this pair's logit and attention vector are `d_logit` and
/// `d_attention`.
pub fn backward(
    h: &PairFeatures,
    pass: &ForwardPass,
    params: &ModelParams,
    d_logit: f64,
    d_attention: &[f64],
    grads: &mut Gradients,
) {
    let layout = params.layout();
    let dims = layout.dims;
    let (f, hl, hp, hh, d) = (dims.features, dims.latent, dims.attention, dims.hidden, dims.embed);
    let block = layout.block();
    let input = layout.classifier_input();
    let g = &pass.attention.0;

    // classifier
    let mut d_hid_pre = vec![0.0; hh];
    {
        let t2w = params.tensor(Tensor::Theta2W);
        let gt2w = grads.tensor_mut(Tensor::Theta2W);
        for k in 0..hh {
            let act = relu(pass.hidden_pre[k]);
            gt2w[k] += d_logit * act;
            if pass.hidden_pre[k] > 0.0 {
                d_hid_pre[k] = d_logit * t2w[k];
            }
        }
        grads.tensor_mut(Tensor::Theta2B)[0] += d_logit;
        let gt1b = grads.tensor_mut(Tensor::Theta1B);
        for k in 0..hh {
            gt1b[k] += d_hid_pre[k];
        }
    }
    let mut d_z = vec![0.0; input];
    {
        let t1w = params.tensor(Tensor::Theta1W);
        let gt1w = grads.tensor_mut(Tensor::Theta1W);
        for k in 0..hh {
            let dk = d_hid_pre[k];
            if dk == 0.0 {
                continue;
            }
            let row = &t1w[k * input..(k + 1) * input];
            let grow = &mut gt1w[k * input..(k + 1) * input];
            for i in 0..input {
                grow[i] += dk * pass.z[i];
                d_z[i] += dk * row[i];
            }
        }
    }

    // z_j = relu(g_j * s_j), s = x (latent) or t (projected)
    let mut d_g: Vec<f64> = d_attention.to_vec();
    let mut d_x = vec![0.0; f * hl];
    let mut d_t = vec![0.0; f * hp];
    for j in 0..f {
        let (s, d_s) = match layout.theta_input {
            ThetaInput::Latent => (&pass.latent.x[j * hl..(j + 1) * hl], &mut d_x[j * hl..(j + 1) * hl]),
            ThetaInput::Projected => (&pass.projected[j * hp..(j + 1) * hp], &mut d_t[j * hp..(j + 1) * hp]),
        };
        for i in 0..block {
            if g[j] * s[i] > 0.0 {
                let dz = d_z[j * block + i];
                d_g[j] += dz * s[i];
                d_s[i] += dz * g[j];
            }
        }
    }

    // softmax
    let dot: f64 = g.iter().zip(&d_g).map(|(a, b)| a * b).sum();
    let d_e: Vec<f64> = g.iter().zip(&d_g).map(|(gj, dgj)| gj * (dgj - dot)).collect();

    // e_j = a · t_j, t_j = tanh(W x_j)
    let a = params.tensor(Tensor::A);
    let w = params.tensor(Tensor::W);
    let mut d_a = vec![0.0; hp];
    let mut d_w = vec![0.0; hp * hl];
    for j in 0..f {
        let tj = &pass.projected[j * hp..(j + 1) * hp];
        let xj = pass.latent.row(j);
        for q in 0..hp {
            d_a[q] += d_e[j] * tj[q];
            let dt = d_t[j * hp + q] + d_e[j] * a[q];
            let du = dt * (1.0 - tj[q] * tj[q]);
            if du == 0.0 {
                continue;
            }
            let wrow = &w[q * hl..(q + 1) * hl];
            let dwrow = &mut d_w[q * hl..(q + 1) * hl];
            for i in 0..hl {
                dwrow[i] += du * xj[i];
                d_x[j * hl + i] += du * wrow[i];
            }
        }
    }
    grads
        .tensor_mut(Tensor::A)
        .iter_mut()
        .zip(&d_a)
        .for_each(|(g, d)| *g += d);
    grads
        .tensor_mut(Tensor::W)
        .iter_mut()
        .zip(&d_w)
        .for_each(|(g, d)| *g += d);

    // x_j = relu(V_j h_j + b_j)
    let gv_range = layout.range(Tensor::V);
    let gb_range = layout.range(Tensor::B);
    let data = grads.as_mut_slice();
    for j in 0..f {
        let hj = h.row(j);
        for i in 0..hl {
            if pass.latent.pre[j * hl + i] <= 0.0 {
                continue;
            }
            let dp = d_x[j * hl + i];
            data[gb_range.start + j * hl + i] += dp;
            let off = gv_range.start + (j * hl + i) * d;
            for (gv, hv) in data[off..off + d].iter_mut().zip(hj) {
                *gv += dp * hv;
            }
        }
    }
}

const CHECKPOINT_FORMAT: &str = "adamel-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: dimensions, switches, schema and every tensor row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: Dims,
    pub theta_input: ThetaInput,
    pub channels: crate::features::FeatureChannels,
    pub crop: usize,
    pub schema: crate::data::AlignedSchema,
    pub provider: String,
    pub tensors: std::collections::BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        schema: &crate::data::AlignedSchema,
        channels: crate::features::FeatureChannels,
        crop: usize,
        provider: String,
    ) -> Self {
        let layout = params.layout();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dims: layout.dims,
            theta_input: layout.theta_input,
            channels,
            crop,
            schema: schema.clone(),
            provider,
            tensors: Tensor::ALL
                .into_iter()
                .map(|t| (t.name().to_string(), params.tensor(t).to_vec()))
                .collect(),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        self.dims.validate()?;
        if self.channels.feature_count(&self.schema) != self.dims.features {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint has F={} but its schema yields {}",
                self.dims.features,
                self.channels.feature_count(&self.schema)
            )));
        }
        let layout = Layout::new(self.dims, self.theta_input);
        let mut params = TensorSet::zeros(layout);
        for t in Tensor::ALL {
            let values = self
                .tensors
                .get(t.name())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", t.name())))?;
            if values.len() != layout.tensor_len(t) {
                return Err(Error::DimensionMismatch(format!(
                    "tensor `{}` has {} values, dims require {}",
                    t.name(),
                    values.len(),
                    layout.tensor_len(t)
                )));
            }
            params.tensor_mut(t).copy_from_slice(values);
        }
        Ok(params)
    }

    /// Checks that features built from `schema` and an embedding of
    /// dimension `embed_dim` fit this checkpoint.
    pub fn check_compatible(&self, schema: &crate::data::AlignedSchema, embed_dim: usize) -> Result<()> {
        if schema != &self.schema {
            return Err(Error::DimensionMismatch(format!(
                "schema {:?} differs from checkpoint schema {:?}",
                schema.attributes(),
                self.schema.attributes()
            )));
        }
        if embed_dim != self.dims.embed {
            return Err(Error::DimensionMismatch(format!(
                "embedding dimension {embed_dim} differs from checkpoint D={}",
                self.dims.embed
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
