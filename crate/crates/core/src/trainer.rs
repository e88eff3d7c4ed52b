//! Joint loss, training loop and checkpoints.
//!
//! The objective per minibatch is
//! `Loss = Loss_p + α·Loss_d + β·Loss_s`, where `Loss_p` is the mean binary
//! cross-entropy of the predicted probabilities and `Loss_d`, `Loss_s` are the
//! drug and disease side losses of the encoders (reconstruction plus
//! similarity pull) over the distinct items of the batch. Only the `nmf`
//! variant has side losses.
//!
//! Training only ever sees the training positives: encoder inputs,
//! reconstruction targets and negative sampling all use the association
//! matrix restricted to `split.train_positives`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sample_negatives, AssociationMatrix, DataSplit, DatasetBundle, DatasetError, Pair};
use crate::encoder::{
    decode, encode, encode_all, encoder_backward, reconstruction_backward, regularizer_backward, EncoderParams,
    LatentTable, NeighborSet, Profiles,
};
use crate::numkit::{axpy, dot, sigmoid, softplus, AdamConfig, DenseMatrix, NumError, ParamTensor, RngStream};
use crate::par::Exec;
use crate::scorer::{generalized_distance_with, inner_product_score, link, HeadKind, LinkForm};

pub const CHECKPOINT_VERSION: &str = "nmf-checkpoint/1";
/// Predictions are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

const INIT_STREAM: u64 = 0x494e_4954;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss_p={loss_p} loss_d={loss_d} loss_s={loss_s}")]
    Divergence { epoch: usize, batch: usize, loss_p: f64, loss_d: f64, loss_s: f64 },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("checkpoint holds variant {found}, expected {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Metric-information encoders with the generalized distance head.
    Nmf,
    /// Free embedding tables with the generalized distance head.
    NmfOh,
    /// Free embedding tables with the inner-product head.
    Mf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Nmf, Variant::NmfOh, Variant::Mf];

    pub fn head(self) -> HeadKind {
        match self {
            Variant::Mf => HeadKind::InnerProduct,
            _ => HeadKind::GeneralizedEuclidean,
        }
    }

    pub fn uses_encoders(self) -> bool {
        self == Variant::Nmf
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Nmf => "nmf",
            Variant::NmfOh => "nmf_oh",
            Variant::Mf => "mf",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "nmf" => Ok(Variant::Nmf),
            "nmf_oh" => Ok(Variant::NmfOh),
            "mf" => Ok(Variant::Mf),
            other => Err(format!("unknown variant {other:?} (expected nmf, nmf-oh or mf)")),
        }
    }
}

/// Training hyperparameters. Serialized as a flat JSON object; missing
/// fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    /// Neighbors kept per item for the similarity pull; `null` keeps all.
    pub neighbor_k: Option<usize>,
    pub normalize_neighbors: bool,
    pub seed: u64,
    pub variant: Variant,
    pub batch_size: usize,
    /// Fraction of positives used for training; the split is drawn from `seed`.
    pub split_ratio: f64,
    pub link: LinkForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            learning_rate: 1e-3,
            alpha: 0.01,
            beta: 0.01,
            epochs: 200,
            negatives_per_positive: 5,
            neighbor_k: Some(10),
            normalize_neighbors: false,
            seed: 0,
            variant: Variant::Nmf,
            batch_size: 256,
            split_ratio: 0.7,
            link: LinkForm::Decreasing,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("alpha={} beta={} must be finite and >= 0", self.alpha, self.beta));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio {} not in (0, 1)", self.split_ratio));
        }
        AdamConfig::with_lr(self.learning_rate).validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}

/// Parameters of one side (drugs or diseases).
// A model holds exactly two of these, so boxing the encoder buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum SideParams {
    Encoder(EncoderParams),
    Table(ParamTensor),
}

impl SideParams {
    fn tensors(&self) -> Vec<(&'static str, &ParamTensor)> {
        match self {
            SideParams::Encoder(e) => {
                vec![("w_enc", &e.w_enc), ("b_enc", &e.b_enc), ("v_dec", &e.v_dec), ("b_dec", &e.b_dec)]
            }
            SideParams::Table(t) => vec![("table", t)],
        }
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut ParamTensor)> {
        match self {
            SideParams::Encoder(e) => {
                vec![("w_enc", &mut e.w_enc), ("b_enc", &mut e.b_enc), ("v_dec", &mut e.v_dec), ("b_dec", &mut e.b_dec)]
            }
            SideParams::Table(t) => vec![("table", t)],
        }
    }

    /// Latent points of every item on this side.
    fn latents(&self, profiles: &Profiles, exec: Exec) -> LatentTable {
        match self {
            SideParams::Encoder(e) => encode_all(profiles, e, exec),
            SideParams::Table(t) => LatentTable { points: t.value.clone() },
        }
    }
}

/// Every learnable parameter of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub variant: Variant,
    pub latent_dim: usize,
    pub n_drugs: usize,
    pub n_diseases: usize,
    pub link: LinkForm,
    pub drug: SideParams,
    pub disease: SideParams,
    /// Raw distance weights (`1 × k`); absent for the inner-product head.
    pub head: Option<ParamTensor>,
}

impl ModelState {
    /// Fresh parameters drawn from the `seed` of `cfg`.
    pub fn init(cfg: &TrainConfig, n_drugs: usize, n_diseases: usize) -> Self {
        let k = cfg.latent_dim;
        let mut rng = RngStream::derived(cfg.seed, INIT_STREAM, 0);
        let (drug, disease) = if cfg.variant.uses_encoders() {
            (
                SideParams::Encoder(EncoderParams::init(n_diseases, k, &mut rng)),
                SideParams::Encoder(EncoderParams::init(n_drugs, k, &mut rng)),
            )
        } else {
            (
                SideParams::Table(ParamTensor::new(LatentTable::init(n_drugs, k, &mut rng).points)),
                SideParams::Table(ParamTensor::new(LatentTable::init(n_diseases, k, &mut rng).points)),
            )
        };
        let head = match cfg.variant.head() {
            HeadKind::GeneralizedEuclidean => {
                Some(ParamTensor::new(DenseMatrix::filled(1, k, crate::numkit::softplus_inverse(1.0))))
            }
            HeadKind::InnerProduct => None,
        };
        Self { variant: cfg.variant, latent_dim: k, n_drugs, n_diseases, link: cfg.link, drug, disease, head }
    }

    /// Parameters in a fixed order with stable names, e.g. `drug.w_enc`.
    pub fn named_params(&self) -> Vec<(String, &ParamTensor)> {
        let mut out: Vec<(String, &ParamTensor)> = Vec::new();
        out.extend(self.drug.tensors().into_iter().map(|(n, p)| (format!("drug.{n}"), p)));
        out.extend(self.disease.tensors().into_iter().map(|(n, p)| (format!("disease.{n}"), p)));
        if let Some(h) = &self.head {
            out.push(("head.raw_weights".into(), h));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut ParamTensor)> {
        let mut out: Vec<(String, &mut ParamTensor)> = Vec::new();
        out.extend(self.drug.tensors_mut().into_iter().map(|(n, p)| (format!("drug.{n}"), p)));
        out.extend(self.disease.tensors_mut().into_iter().map(|(n, p)| (format!("disease.{n}"), p)));
        if let Some(h) = &mut self.head {
            out.push(("head.raw_weights".into(), h));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    /// Checks that exactly the parameter set of `self.variant` is present.
    pub fn check_variant(&self) -> Result<(), TrainError> {
        let encoders = matches!((&self.drug, &self.disease), (SideParams::Encoder(_), SideParams::Encoder(_)));
        let tables = matches!((&self.drug, &self.disease), (SideParams::Table(_), SideParams::Table(_)));
        let ok = match self.variant {
            Variant::Nmf => encoders && self.head.is_some(),
            Variant::NmfOh => tables && self.head.is_some(),
            Variant::Mf => tables && self.head.is_none(),
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("parameter set does not match variant {}", self.variant)))
        }
    }

    /// Latent points for every item plus the head, ready for scoring.
    /// `inputs` are the association profiles fed to the encoders.
    pub fn freeze(&self, inputs: &AssociationMatrix, exec: Exec) -> FrozenModel {
        FrozenModel {
            variant: self.variant,
            link: self.link,
            drugs: self.drug.latents(&Profiles::drugs(inputs), exec),
            diseases: self.disease.latents(&Profiles::diseases(inputs), exec),
            weights: self.head.as_ref().map(|h| h.value.row(0).iter().copied().map(softplus).collect()),
        }
    }
}

/// Read-only scoring snapshot of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    pub variant: Variant,
    pub link: LinkForm,
    pub drugs: LatentTable,
    pub diseases: LatentTable,
    /// Effective distance weights; `None` for the inner-product head.
    pub weights: Option<Vec<f64>>,
}

impl FrozenModel {
    pub fn n_drugs(&self) -> usize {
        self.drugs.len()
    }

    pub fn n_diseases(&self) -> usize {
        self.diseases.len()
    }

    /// Predicted treatment probability.
    pub fn score(&self, drug: usize, disease: usize) -> f64 {
        let (d, s) = (self.drugs.point(drug), self.diseases.point(disease));
        match &self.weights {
            Some(w) => link(generalized_distance_with(d, s, w).expect("shapes fixed at freeze"), self.link),
            None => inner_product_score(d, s).expect("shapes fixed at freeze"),
        }
    }
}

/// A training example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pair: Pair,
    pub label: f64,
}

/// Loss components of one batch (or an epoch mean).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub prediction: f64,
    pub drug_side: f64,
    pub disease_side: f64,
}

/// Per-epoch means of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub loss_p: f64,
    pub loss_d: f64,
    pub loss_s: f64,
}

/// Everything training reads about the data, derived from training positives only.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train_matrix: AssociationMatrix,
    pub drug_profiles: Profiles,
    pub disease_profiles: Profiles,
    pub drug_neighbors: NeighborSet,
    pub disease_neighbors: NeighborSet,
}

impl TrainingData {
    pub fn new(bundle: &DatasetBundle, split: &DataSplit, cfg: &TrainConfig) -> Result<Self, TrainError> {
        let assoc = &bundle.associations;
        for p in split.train_positives.iter().chain(&split.test_positives) {
            if p.drug >= assoc.n_drugs() || p.disease >= assoc.n_diseases() || !assoc.contains(*p) {
                return Err(TrainError::Config(format!(
                    "split cell ({}, {}) is not a positive of the bundle",
                    p.drug, p.disease
                )));
            }
        }
        let train_matrix = assoc.restricted_to(&split.train_positives)?;
        Ok(Self::from_matrix(train_matrix, bundle, cfg))
    }

    /// Uses `train_matrix` as the full training signal.
    pub fn from_matrix(train_matrix: AssociationMatrix, bundle: &DatasetBundle, cfg: &TrainConfig) -> Self {
        Self {
            drug_profiles: Profiles::drugs(&train_matrix),
            disease_profiles: Profiles::diseases(&train_matrix),
            drug_neighbors: NeighborSet::from_similarity(&bundle.drug_sim, cfg.neighbor_k, cfg.normalize_neighbors),
            disease_neighbors: NeighborSet::from_similarity(
                &bundle.disease_sim,
                cfg.neighbor_k,
                cfg.normalize_neighbors,
            ),
            train_matrix,
        }
    }
}

/// Mean binary cross-entropy `−mean[y ln p + (1 − y) ln(1 − p)]`, with `p`
/// clamped to `[1e-12, 1 − 1e-12]`.
pub fn prediction_loss(predicted: &[f64], labels: &[f64]) -> Result<f64, NumError> {
    if predicted.len() != labels.len() {
        return Err(NumError::Shape(format!("{} predictions for {} labels", predicted.len(), labels.len())));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predicted.iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum();
    Ok(total / predicted.len() as f64)
}

#[inline]
fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn distinct_sorted(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Computes the joint loss of `batch` and writes its gradient into every
/// parameter's `grad` (previous gradients are cleared).
pub fn total_loss(
    batch: &[LabeledPair],
    state: &mut ModelState,
    data: &TrainingData,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<LossBreakdown, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    state.zero_grad();
    let k = state.latent_dim;
    let drugs = state.drug.latents(&data.drug_profiles, exec);
    let diseases = state.disease.latents(&data.disease_profiles, exec);
    let mut drug_grad = DenseMatrix::zeros(drugs.len(), k);
    let mut disease_grad = DenseMatrix::zeros(diseases.len(), k);

    let inv_n = 1.0 / batch.len() as f64;
    let mut prediction = 0.0;
    match &mut state.head {
        Some(head) => {
            let raw = head.value.row(0).to_vec();
            let w: Vec<f64> = raw.iter().copied().map(softplus).collect();
            let dw: Vec<f64> = raw.iter().copied().map(sigmoid).collect();
            let mut diff = vec![0.0; k];
            for ex in batch {
                let d = drugs.point(ex.pair.drug);
                let s = diseases.point(ex.pair.disease);
                let mut e = 0.0;
                for t in 0..k {
                    diff[t] = d[t] - s[t];
                    e += w[t] * diff[t] * diff[t];
                }
                let p = link(e, state.link);
                prediction += bce(p, ex.label);
                if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                    continue;
                }
                // dBCE/dE for p = sigmoid(∓E)
                let de = match state.link {
                    LinkForm::Decreasing => ex.label - p,
                    LinkForm::Increasing => p - ex.label,
                } * inv_n;
                let gd = drug_grad.row_mut(ex.pair.drug);
                for t in 0..k {
                    gd[t] += de * 2.0 * w[t] * diff[t];
                }
                let gs = disease_grad.row_mut(ex.pair.disease);
                for t in 0..k {
                    gs[t] -= de * 2.0 * w[t] * diff[t];
                }
                let gh = head.grad.row_mut(0);
                for t in 0..k {
                    gh[t] += de * diff[t] * diff[t] * dw[t];
                }
            }
        }
        None => {
            for ex in batch {
                let d = drugs.point(ex.pair.drug);
                let s = diseases.point(ex.pair.disease);
                let p = sigmoid(dot(d, s));
                prediction += bce(p, ex.label);
                if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                    continue;
                }
                let dz = (p - ex.label) * inv_n;
                axpy(dz, s, drug_grad.row_mut(ex.pair.drug));
                axpy(dz, d, disease_grad.row_mut(ex.pair.disease));
            }
        }
    }
    let prediction = prediction * inv_n;

    let (mut drug_side, mut disease_side) = (0.0, 0.0);
    if let (SideParams::Encoder(de), SideParams::Encoder(se)) = (&mut state.drug, &mut state.disease) {
        let drug_items = distinct_sorted(batch.iter().map(|b| b.pair.drug));
        let disease_items = distinct_sorted(batch.iter().map(|b| b.pair.disease));
        drug_side =
            reconstruction_backward(&drug_items, &data.drug_profiles, de, &drugs, cfg.alpha, &mut drug_grad, exec)
                + regularizer_backward(&drug_items, &drugs, &data.drug_neighbors, cfg.alpha, &mut drug_grad);
        disease_side =
            reconstruction_backward(
                &disease_items,
                &data.disease_profiles,
                se,
                &diseases,
                cfg.beta,
                &mut disease_grad,
                exec,
            ) + regularizer_backward(&disease_items, &diseases, &data.disease_neighbors, cfg.beta, &mut disease_grad);
        encoder_backward(&drug_grad, &drugs, &data.drug_profiles, de);
        encoder_backward(&disease_grad, &diseases, &data.disease_profiles, se);
    } else {
        if let SideParams::Table(t) = &mut state.drug {
            axpy(1.0, drug_grad.as_slice(), t.grad.as_mut_slice());
        }
        if let SideParams::Table(t) = &mut state.disease {
            axpy(1.0, disease_grad.as_slice(), t.grad.as_mut_slice());
        }
    }

    let (alpha, beta) = if state.variant.uses_encoders() { (cfg.alpha, cfg.beta) } else { (0.0, 0.0) };
    Ok(LossBreakdown {
        total: prediction + alpha * drug_side + beta * disease_side,
        prediction,
        drug_side,
        disease_side,
    })
}

/// Forward-only evaluation of the same objective as [`total_loss`], through
/// the dense per-item `encode`/`decode` path. Used as the reference side of
/// gradient checks.
pub fn loss_value(
    batch: &[LabeledPair],
    state: &ModelState,
    data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let point = |side: &SideParams, profiles: &Profiles, i: usize| -> Result<Vec<f64>, NumError> {
        match side {
            SideParams::Encoder(e) => encode(profiles.profile(i), e),
            SideParams::Table(t) => Ok(t.value.row(i).to_vec()),
        }
    };
    let mut preds = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for ex in batch {
        let d = point(&state.drug, &data.drug_profiles, ex.pair.drug)?;
        let s = point(&state.disease, &data.disease_profiles, ex.pair.disease)?;
        let p = match &state.head {
            Some(h) => {
                let w: Vec<f64> = h.value.row(0).iter().copied().map(softplus).collect();
                link(generalized_distance_with(&d, &s, &w)?, state.link)
            }
            None => inner_product_score(&d, &s)?,
        };
        preds.push(p);
        labels.push(ex.label);
    }
    let mut loss = prediction_loss(&preds, &labels)?;
    if let (SideParams::Encoder(de), SideParams::Encoder(se)) = (&state.drug, &state.disease) {
        let side = |items: Vec<usize>, e: &EncoderParams, profiles: &Profiles, nb: &NeighborSet| {
            let mut total = 0.0;
            for &i in &items {
                let di = encode(profiles.profile(i), e)?;
                let recon = decode(&di, e)?;
                total += recon.iter().zip(profiles.profile(i)).map(|(r, x)| (r - x).powi(2)).sum::<f64>();
                for &(n, w) in nb.of(i) {
                    let dn = encode(profiles.profile(n), e)?;
                    total += w * di.iter().zip(&dn).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                }
            }
            Ok::<f64, NumError>(total / items.len() as f64)
        };
        let drug_items = distinct_sorted(batch.iter().map(|b| b.pair.drug));
        let disease_items = distinct_sorted(batch.iter().map(|b| b.pair.disease));
        loss += cfg.alpha * side(drug_items, de, &data.drug_profiles, &data.drug_neighbors)?;
        loss += cfg.beta * side(disease_items, se, &data.disease_profiles, &data.disease_neighbors)?;
    }
    Ok(loss)
}

/// Hook into the training loop, mainly for auditing what training reads.
pub trait TrainObserver {
    fn on_batch(&mut self, _epoch: usize, _batch: &[LabeledPair]) {}
    fn on_epoch(&mut self, _log: &EpochLog, _state: &ModelState) {}
}

/// Observer that does nothing.
pub struct NoObserver;
impl TrainObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub state: ModelState,
    pub log: Vec<EpochLog>,
}

pub fn fit(bundle: &DatasetBundle, split: &DataSplit, cfg: &TrainConfig) -> Result<FitOutput, TrainError> {
    fit_with(bundle, split, cfg, Exec::default(), &mut NoObserver)
}

/// Runs `cfg.epochs` passes. Each epoch draws fresh negatives for every
/// training positive, shuffles positives and negatives together, and takes
/// one Adam step per minibatch of `cfg.batch_size` examples.
pub fn fit_with(
    bundle: &DatasetBundle,
    split: &DataSplit,
    cfg: &TrainConfig,
    exec: Exec,
    observer: &mut dyn TrainObserver,
) -> Result<FitOutput, TrainError> {
    cfg.validate()?;
    let data = TrainingData::new(bundle, split, cfg)?;
    let mut state = ModelState::init(cfg, bundle.n_drugs(), bundle.n_diseases());
    state.check_variant()?;
    let adam = cfg.adam();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let negatives = sample_negatives(
            &data.train_matrix,
            cfg.negatives_per_positive,
            &split.train_positives,
            cfg.seed,
            epoch as u64,
        )?;
        let mut examples: Vec<LabeledPair> = split
            .train_positives
            .iter()
            .map(|&pair| LabeledPair { pair, label: 1.0 })
            .chain(negatives.pairs.iter().map(|&pair| LabeledPair { pair, label: 0.0 }))
            .collect();
        RngStream::derived(cfg.seed, SHUFFLE_STREAM, epoch as u64).shuffle(&mut examples);

        let mut sums = LossBreakdown::default();
        let mut n_batches = 0usize;
        for (b, batch) in examples.chunks(cfg.batch_size).enumerate() {
            observer.on_batch(epoch, batch);
            let l = total_loss(batch, &mut state, &data, cfg, exec)?;
            if ![l.total, l.prediction, l.drug_side, l.disease_side].iter().all(|x| x.is_finite()) {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    loss_p: l.prediction,
                    loss_d: l.drug_side,
                    loss_s: l.disease_side,
                });
            }
            for (_, p) in state.named_params_mut() {
                p.adam_step(&adam)?;
            }
            sums.total += l.total;
            sums.prediction += l.prediction;
            sums.drug_side += l.drug_side;
            sums.disease_side += l.disease_side;
            n_batches += 1;
        }
        let n = n_batches.max(1) as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: sums.total / n,
            loss_p: sums.prediction / n,
            loss_d: sums.drug_side / n,
            loss_s: sums.disease_side / n,
        };
        log::debug!(
            "epoch {:>4}  loss {:.6}  loss_p {:.6}  loss_d {:.6}  loss_s {:.6}",
            entry.epoch,
            entry.loss,
            entry.loss_p,
            entry.loss_d,
            entry.loss_s
        );
        observer.on_epoch(&entry, &state);
        log.push(entry);
    }
    state.check_variant()?;
    Ok(FitOutput { state, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParam {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_steps: u64,
}

/// Versioned JSON checkpoint. Floats use shortest round-trip decimal form,
/// so reloading reproduces every value bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub created_by: String,
    pub config: TrainConfig,
    pub n_drugs: usize,
    pub n_diseases: usize,
    pub parameters: Vec<NamedParam>,
    pub training_log: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn new(state: &ModelState, cfg: &TrainConfig, log: &[EpochLog]) -> Self {
        let parameters = state
            .named_params()
            .into_iter()
            .map(|(name, p)| {
                let (r, c) = p.shape();
                NamedParam {
                    name,
                    shape: [r, c],
                    values: p.value.as_slice().to_vec(),
                    adam_m: p.m.as_slice().to_vec(),
                    adam_v: p.v.as_slice().to_vec(),
                    adam_steps: p.step_count,
                }
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION.into(),
            created_by: concat!("nmf-core ", env!("CARGO_PKG_VERSION")).into(),
            config: cfg.clone(),
            n_drugs: state.n_drugs,
            n_diseases: state.n_diseases,
            parameters,
            training_log: log.to_vec(),
        }
    }

    /// Rebuilds the model, checking names and shapes against the recorded
    /// configuration. With `expected`, a different variant is an error.
    pub fn to_state(&self, expected: Option<Variant>) -> Result<ModelState, TrainError> {
        let err = |message: String| TrainError::Checkpoint { path: String::new(), message };
        if let Some(expected) = expected {
            if expected != self.config.variant {
                return Err(TrainError::VariantMismatch { expected, found: self.config.variant });
            }
        }
        self.config.validate()?;
        let mut state = ModelState::init(&self.config, self.n_drugs, self.n_diseases);
        let mut slots = state.named_params_mut();
        if slots.len() != self.parameters.len() {
            return Err(err(format!(
                "{} parameters for variant {}, expected {}",
                self.parameters.len(),
                self.config.variant,
                slots.len()
            )));
        }
        for ((name, slot), saved) in slots.iter_mut().zip(&self.parameters) {
            let (r, c) = slot.shape();
            if *name != saved.name || saved.shape != [r, c] {
                return Err(err(format!(
                    "parameter {} {:?} does not match expected {name} [{r}, {c}]",
                    saved.name, saved.shape
                )));
            }
            let n = r * c;
            if saved.values.len() != n || saved.adam_m.len() != n || saved.adam_v.len() != n {
                return Err(err(format!("parameter {name}: value count does not match shape")));
            }
            slot.value = DenseMatrix::from_vec(r, c, saved.values.clone())?;
            slot.m = DenseMatrix::from_vec(r, c, saved.adam_m.clone())?;
            slot.v = DenseMatrix::from_vec(r, c, saved.adam_v.clone())?;
            slot.step_count = saved.adam_steps;
        }
        drop(slots);
        state.check_variant()?;
        Ok(state)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    state: &ModelState,
    cfg: &TrainConfig,
    log: &[EpochLog],
) -> Result<(), TrainError> {
    let path = path.as_ref();
    fs::write(path, Checkpoint::new(state, cfg, log).to_json())
        .map_err(|e| TrainError::Checkpoint { path: path.display().to_string(), message: e.to_string() })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    let path = path.as_ref();
    let err = |message: String| TrainError::Checkpoint { path: path.display().to_string(), message };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    // Peek at the version before strict parsing so format changes get a clear message.
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    match raw.get("version").and_then(|v| v.as_str()) {
        Some(CHECKPOINT_VERSION) => {}
        Some(other) => return Err(err(format!("unsupported version {other:?}"))),
        None => return Err(err("missing version tag".into())),
    }
    serde_json::from_value(raw).map_err(|e| err(e.to_string()))
}

/// Loads a checkpoint and rebuilds its model, optionally insisting on a variant.
pub fn load_model(path: impl AsRef<Path>, expected: Option<Variant>) -> Result<(Checkpoint, ModelState), TrainError> {
    let path = path.as_ref();
    let ckpt = load_checkpoint(path)?;
    let state = ckpt.to_state(expected).map_err(|e| match e {
        TrainError::Checkpoint { message, .. } => TrainError::Checkpoint { path: path.display().to_string(), message },
        other => other,
    })?;
    Ok((ckpt, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split_associations, SynthParams};

    #[test]
    fn prediction_loss_examples() {
        let half = prediction_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let perfect = prediction_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(perfect < 1e-11);
        let l = prediction_loss(&[0.25, 0.25], &[1.0, 0.0]).unwrap();
        assert!((l - -(0.25f64.ln() + 0.75f64.ln()) / 2.0).abs() < 1e-15);
        assert!((l - 0.8370).abs() < 1e-4);
        assert!(prediction_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("nmf-oh".parse::<Variant>().unwrap(), Variant::NmfOh);
        assert_eq!("NMF_OH".parse::<Variant>().unwrap(), Variant::NmfOh);
        assert_eq!("mf".parse::<Variant>().unwrap(), Variant::Mf);
        assert!("ncf".parse::<Variant>().is_err());
        assert_eq!(serde_json::to_string(&Variant::NmfOh).unwrap(), "\"nmf_oh\"");
    }

    #[test]
    fn config_json_defaults_and_strictness() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"variant": "mf", "latent_dim": 8}"#).unwrap();
        assert_eq!(cfg.variant, Variant::Mf);
        assert_eq!(cfg.negatives_per_positive, 5);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"latent_dimm": 8}"#).is_err());
        assert!(TrainConfig { latent_dim: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..TrainConfig::default() }.validate().is_err());
    }

    fn small() -> (DatasetBundle, DataSplit) {
        let s = generate_synthetic(SynthParams {
            n_drugs: 12,
            n_diseases: 10,
            latent_dim: 3,
            density: 0.15,
            noise: 0.0,
            seed: 2,
        })
        .unwrap();
        let split = split_associations(&s.bundle.associations, 0.7, 2).unwrap();
        (s.bundle, split)
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let (bundle, split) = small();
        let cfg = TrainConfig { epochs: 0, latent_dim: 4, ..TrainConfig::default() };
        let out = fit(&bundle, &split, &cfg).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.state, ModelState::init(&cfg, 12, 10));
    }

    #[test]
    fn variant_parameter_sets() {
        for v in Variant::ALL {
            let cfg = TrainConfig { variant: v, latent_dim: 4, ..TrainConfig::default() };
            let st = ModelState::init(&cfg, 5, 6);
            st.check_variant().unwrap();
            let names: Vec<String> = st.named_params().into_iter().map(|(n, _)| n).collect();
            match v {
                Variant::Nmf => assert_eq!(names.len(), 9),
                Variant::NmfOh => assert_eq!(names, ["drug.table", "disease.table", "head.raw_weights"]),
                Variant::Mf => assert_eq!(names, ["drug.table", "disease.table"]),
            }
        }
        let mut broken = ModelState::init(&TrainConfig::default(), 5, 6);
        broken.head = None;
        assert!(broken.check_variant().is_err());
    }

    #[test]
    fn loss_paths_agree() {
        let (bundle, split) = small();
        for v in Variant::ALL {
            let cfg = TrainConfig { variant: v, latent_dim: 4, alpha: 0.7, beta: 0.3, ..TrainConfig::default() };
            let data = TrainingData::new(&bundle, &split, &cfg).unwrap();
            let mut st = ModelState::init(&cfg, 12, 10);
            let neg = sample_negatives(&data.train_matrix, 2, &split.train_positives, 1, 0).unwrap();
            let batch: Vec<LabeledPair> = split
                .train_positives
                .iter()
                .map(|&pair| LabeledPair { pair, label: 1.0 })
                .chain(neg.pairs.iter().map(|&pair| LabeledPair { pair, label: 0.0 }))
                .collect();
            let a = total_loss(&batch, &mut st, &data, &cfg, Exec::Sequential).unwrap();
            let b = loss_value(&batch, &st, &data, &cfg).unwrap();
            assert!((a.total - b).abs() < 1e-12, "{v}: {} vs {b}", a.total);
        }
    }

    #[test]
    fn checkpoint_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { variant: Variant::Mf, latent_dim: 3, ..TrainConfig::default() };
        let st = ModelState::init(&cfg, 4, 5);
        let path = dir.path().join("c.json");
        save_checkpoint(&path, &st, &cfg, &[]).unwrap();
        let (_, back) = load_model(&path, Some(Variant::Mf)).unwrap();
        assert_eq!(back, st);
        assert!(matches!(
            load_model(&path, Some(Variant::Nmf)),
            Err(TrainError::VariantMismatch { expected: Variant::Nmf, found: Variant::Mf })
        ));

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());

        fs::write(&path, text.replace(CHECKPOINT_VERSION, "nmf-checkpoint/99")).unwrap();
        let e = load_checkpoint(&path).unwrap_err().to_string();
        assert!(e.contains("unsupported version"), "{e}");

        let mut ck = Checkpoint::new(&st, &cfg, &[]);
        ck.parameters[0].shape = [5, 3];
        assert!(ck.to_state(None).is_err());
    }
}
