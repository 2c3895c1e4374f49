//! Margin-loss training of AVG and GRAN with in-batch negative mining.
//!
//! For a pair (s1, s2) with mined negatives t1, t2 the pair loss is
//!
//! ```text
//! max(0, δ − cos(s1, s2) + cos(s1, t1)) + max(0, δ − cos(s1, s2) + cos(s2, t2))
//! ```
//!
//! averaged over the batch, plus `λ_c‖W_c‖² + λ_w‖W_w_initial − W_w‖²`.
//! t1 is the first element of another pair in the batch that is most similar
//! to s1; t2 is the second element of another pair most similar to s2.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PairCorpus;
use crate::embedder::{
    avg_backward, avg_ids, cosine, cosine_grad_acc, gran_backward, gran_forward_trace,
    EmbeddingMatrix, GranParams, GranTrace, ModelKind, ParaModel,
};
use crate::error::{Error, Result};
use crate::evaluation::{sts_evaluate, StsFile};
use crate::linalg::{axpy, Matrix};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub batch_size: usize,
    pub margin: f64,
    pub lambda_c: f64,
    pub lambda_w: f64,
    pub lr: f64,
    /// `None` means 20 for AVG and 3 for GRAN.
    pub epochs: Option<usize>,
    pub seed: u64,
    pub checkpoint_every_epoch: bool,
    /// GRAN hidden size; defaults to the embedding dimension.
    pub hidden: Option<usize>,
}

impl TrainConfig {
    pub fn new(kind: ModelKind) -> Self {
        TrainConfig {
            kind,
            batch_size: 100,
            margin: 0.4,
            lambda_c: 0.0,
            lambda_w: 0.0,
            lr: 0.001,
            epochs: None,
            seed: 1,
            checkpoint_every_epoch: false,
            hidden: None,
        }
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.kind {
            ModelKind::Avg => 20,
            ModelKind::Gran => 3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::arg("batch size must be at least 2"));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::arg("margin must be a nonnegative number"));
        }
        if !(self.lambda_c >= 0.0) || !(self.lambda_w >= 0.0) {
            return Err(Error::arg("regularization weights must be nonnegative"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if self.hidden == Some(0) {
            return Err(Error::arg("hidden size must be positive"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(ModelKind::Avg)
    }
}

/// A pair of id sequences.
pub type IdPair = (Vec<usize>, Vec<usize>);

/// Mined negatives as pair indices: `first[i]` is the pair whose first
/// sentence is t1 for pair i, `second[i]` the pair whose second sentence is t2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negatives {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

fn argmax_other(query: &[f64], candidates: &[&Vec<f64>], own: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_cos = f64::NEG_INFINITY;
    for (j, c) in candidates.iter().enumerate() {
        if j == own {
            continue;
        }
        let s = cosine(query, c);
        if best == usize::MAX || s > best_cos {
            best = j;
            best_cos = s;
        }
    }
    best
}

/// `embeds` holds 2B vectors ordered s1₀, s2₀, s1₁, s2₁, …
pub fn select_negatives(embeds: &[Vec<f64>]) -> Result<Negatives> {
    if embeds.len() % 2 != 0 {
        return Err(Error::arg("negative mining needs an even number of sentences"));
    }
    let b = embeds.len() / 2;
    if b < 2 {
        return Err(Error::arg("negative mining needs a batch of at least 2 pairs"));
    }
    let firsts: Vec<&Vec<f64>> = embeds.iter().step_by(2).collect();
    let seconds: Vec<&Vec<f64>> = embeds.iter().skip(1).step_by(2).collect();
    let first = (0..b).map(|i| argmax_other(firsts[i], &firsts, i)).collect();
    let second = (0..b).map(|i| argmax_other(seconds[i], &seconds, i)).collect();
    Ok(Negatives { first, second })
}

/// Hinge loss of one pair given its three cosines.
pub fn pair_loss(margin: f64, cos_pos: f64, cos_neg1: f64, cos_neg2: f64) -> f64 {
    (margin - cos_pos + cos_neg1).max(0.0) + (margin - cos_pos + cos_neg2).max(0.0)
}

/// Gradient buffers shaped like a [`ParaModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub emb: Matrix,
    pub gran: Option<GranParams>,
}

impl Gradients {
    pub fn zeros(model: &ParaModel) -> Self {
        Gradients {
            emb: Matrix::zeros(model.emb.weights.rows, model.emb.weights.cols),
            gran: model
                .gran
                .as_ref()
                .map(|g| GranParams::zeros(g.dim(), g.lstm.hidden_size)),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = vec![self.emb.data.as_slice()];
        if let Some(g) = &self.gran {
            v.extend(g.slices());
        }
        v
    }
}

/// Trainable parameter groups, in the same order as [`Gradients::slices`].
pub fn param_slices(model: &ParaModel) -> Vec<&[f64]> {
    let mut v = vec![model.emb.weights.data.as_slice()];
    if let Some(g) = &model.gran {
        v.extend(g.slices());
    }
    v
}

pub fn param_slices_mut(model: &mut ParaModel) -> Vec<&mut [f64]> {
    let mut v = vec![model.emb.weights.data.as_mut_slice()];
    if let Some(g) = &mut model.gran {
        v.extend(g.slices_mut());
    }
    v
}

enum Trace {
    Avg,
    Gran(GranTrace),
}

fn forward(model: &ParaModel, ids: &[usize]) -> Result<(Vec<f64>, Trace)> {
    if ids.is_empty() {
        return Err(Error::arg("cannot embed an empty sentence"));
    }
    match &model.gran {
        None => Ok((avg_ids(&model.emb, ids), Trace::Avg)),
        Some(p) => {
            let t = gran_forward_trace(p, &model.emb, ids)?;
            Ok((t.output.clone(), Trace::Gran(t)))
        }
    }
}

fn backward(model: &ParaModel, ids: &[usize], trace: &Trace, grad: &[f64], grads: &mut Gradients) {
    match (trace, &model.gran, &mut grads.gran) {
        (Trace::Gran(t), Some(p), Some(gp)) => {
            gran_backward(p, &model.emb, ids, t, grad, gp, &mut grads.emb)
        }
        _ => avg_backward(ids, grad, &mut grads.emb),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub lambda_c: f64,
    pub lambda_w: f64,
}

impl From<&TrainConfig> for LossConfig {
    fn from(c: &TrainConfig) -> Self {
        LossConfig {
            margin: c.margin,
            lambda_c: c.lambda_c,
            lambda_w: c.lambda_w,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub grads: Gradients,
    pub negatives: Negatives,
}

fn sentence_ids(batch: &[IdPair]) -> Vec<&[usize]> {
    batch
        .iter()
        .flat_map(|(a, b)| [a.as_slice(), b.as_slice()])
        .collect()
}

fn forward_batch(model: &ParaModel, batch: &[IdPair]) -> Result<Vec<(Vec<f64>, Trace)>> {
    sentence_ids(batch)
        .par_iter()
        .map(|ids| forward(model, ids))
        .collect()
}

fn loss_from_forward(
    model: &ParaModel,
    batch: &[IdPair],
    fwd: &[(Vec<f64>, Trace)],
    negs: &Negatives,
    cfg: &LossConfig,
) -> (f64, Gradients) {
    let b = batch.len();
    let scale = 1.0 / b as f64;
    let d = model.emb.dim();
    let e = |k: usize| fwd[k].0.as_slice();
    let mut de = vec![vec![0.0; d]; 2 * b];
    let mut loss = 0.0;
    for i in 0..b {
        let (s1, s2) = (2 * i, 2 * i + 1);
        let (t1, t2) = (2 * negs.first[i], 2 * negs.second[i] + 1);
        let pos = cosine(e(s1), e(s2));
        for (anchor, other, neg) in [(s1, s2, t1), (s2, s1, t2)] {
            let h = cfg.margin - pos + cosine(e(anchor), e(neg));
            if h > 0.0 {
                loss += h;
                cosine_grad_acc(e(anchor), e(other), -scale, &mut de[anchor]);
                cosine_grad_acc(e(other), e(anchor), -scale, &mut de[other]);
                cosine_grad_acc(e(anchor), e(neg), scale, &mut de[anchor]);
                cosine_grad_acc(e(neg), e(anchor), scale, &mut de[neg]);
            }
        }
    }
    loss *= scale;

    let mut grads = Gradients::zeros(model);
    let ids = sentence_ids(batch);
    for (k, g) in de.iter().enumerate() {
        if g.iter().any(|&v| v != 0.0) {
            backward(model, ids[k], &fwd[k].1, g, &mut grads);
        }
    }

    if cfg.lambda_c > 0.0 {
        if let (Some(p), Some(gp)) = (&model.gran, &mut grads.gran) {
            loss += cfg.lambda_c * p.sq_norm();
            for (g, w) in gp.slices_mut().into_iter().zip(p.slices()) {
                axpy(2.0 * cfg.lambda_c, w, g);
            }
        }
    }
    if cfg.lambda_w > 0.0 {
        loss += cfg.lambda_w * model.emb.drift_sq();
        let w0 = &model.emb.initial().data;
        for ((g, w), w0) in grads.emb.data.iter_mut().zip(&model.emb.weights.data).zip(w0) {
            *g += 2.0 * cfg.lambda_w * (w - w0);
        }
    }
    (loss, grads)
}

fn check_batch(batch: &[IdPair]) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::arg("a batch needs at least 2 pairs"));
    }
    Ok(())
}

/// Loss and gradients with negatives chosen by the current parameters.
pub fn batch_loss(model: &ParaModel, batch: &[IdPair], cfg: &LossConfig) -> Result<BatchLoss> {
    check_batch(batch)?;
    let fwd = forward_batch(model, batch)?;
    let embeds: Vec<Vec<f64>> = fwd.iter().map(|(v, _)| v.clone()).collect();
    let negatives = select_negatives(&embeds)?;
    let (loss, grads) = loss_from_forward(model, batch, &fwd, &negatives, cfg);
    Ok(BatchLoss {
        loss,
        grads,
        negatives,
    })
}

/// Loss and gradients with the negatives held fixed.
pub fn batch_loss_with_negatives(
    model: &ParaModel,
    batch: &[IdPair],
    negs: &Negatives,
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    check_batch(batch)?;
    if negs.first.len() != batch.len() || negs.second.len() != batch.len() {
        return Err(Error::arg("negatives do not match the batch"));
    }
    let fwd = forward_batch(model, batch)?;
    Ok(loss_from_forward(model, batch, &fwd, negs, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Compares analytic gradients to central differences on `n_coords` randomly
/// chosen coordinates (all of them if there are fewer). Negatives are mined
/// once and held fixed.
pub fn grad_check(
    model: &ParaModel,
    batch: &[IdPair],
    cfg: &LossConfig,
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheck> {
    let bl = batch_loss(model, batch, cfg)?;
    let analytic: Vec<Vec<f64>> = bl.grads.slices().iter().map(|s| s.to_vec()).collect();
    let coords: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(g, s)| (0..s.len()).map(move |k| (g, k)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() <= n_coords {
        coords
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, coords.len(), n_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    };
    let mut probe = model.clone();
    let mut max_rel_err: f64 = 0.0;
    for &(g, k) in &chosen {
        let orig = param_slices(&probe)[g][k];
        param_slices_mut(&mut probe)[g][k] = orig + eps;
        let (fp, _) = batch_loss_with_negatives(&probe, batch, &bl.negatives, cfg)?;
        param_slices_mut(&mut probe)[g][k] = orig - eps;
        let (fm, _) = batch_loss_with_negatives(&probe, batch, &bl.negatives, cfg)?;
        param_slices_mut(&mut probe)[g][k] = orig;
        let n = (fp - fm) / (2.0 * eps);
        let a = analytic[g][k];
        let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(GradCheck {
        max_rel_err,
        coords: chosen.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub mean_loss: Option<f64>,
    pub dev_pearson: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ParaModel,
    pub adam: Adam,
    /// Epoch whose parameters were returned.
    pub epoch: usize,
    pub reports: Vec<EpochReport>,
}

/// What a per-epoch hook sees after each epoch.
pub struct EpochState<'a> {
    pub epoch: usize,
    pub model: &'a ParaModel,
    pub adam: &'a Adam,
    pub report: &'a EpochReport,
}

/// Encodes both sides of every pair with the model's vocabulary.
pub fn encode_pairs(model: &ParaModel, corpus: &PairCorpus) -> Result<Vec<IdPair>> {
    corpus
        .iter()
        .map(|p| {
            if p.reference.is_empty() || p.translation.is_empty() {
                return Err(Error::arg("training pair with an empty side"));
            }
            Ok((model.emb.encode(&p.reference), model.emb.encode(&p.translation)))
        })
        .collect()
}

pub fn train(
    corpus: &PairCorpus,
    emb: EmbeddingMatrix,
    cfg: &TrainConfig,
    dev: &[StsFile],
) -> Result<TrainOutcome> {
    train_with_hook(corpus, emb, cfg, dev, &mut |_| Ok(()))
}

/// Trains from `emb`; GRAN weights and the shuffling order come from one
/// ChaCha8 stream seeded by `cfg.seed`. With dev files, the epoch with the
/// best mean dev Pearson (earliest on ties) is returned.
pub fn train_with_hook(
    corpus: &PairCorpus,
    emb: EmbeddingMatrix,
    cfg: &TrainConfig,
    dev: &[StsFile],
    hook: &mut dyn FnMut(&EpochState<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.len() < cfg.batch_size {
        return Err(Error::Size {
            requested: cfg.batch_size,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ParaModel::init(cfg.kind, emb, cfg.hidden, &mut rng)?;
    let pairs = encode_pairs(&model, corpus)?;
    let loss_cfg = LossConfig::from(cfg);
    let mut adam = Adam::for_params(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &param_slices(&model),
    );

    let dev_score = |m: &ParaModel| -> Result<Option<f64>> {
        if dev.is_empty() {
            Ok(None)
        } else {
            Ok(Some(sts_evaluate(m, dev)?.average))
        }
    };
    let mut reports = vec![EpochReport {
        epoch: 0,
        mean_loss: None,
        dev_pearson: dev_score(&model)?,
    }];
    let mut best: Option<(f64, usize, ParaModel, Adam)> = None;
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 1..=cfg.epochs() {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<IdPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let bl = batch_loss(&model, &batch, &loss_cfg)?;
            total += bl.loss;
            batches += 1;
            adam.update(param_slices_mut(&mut model), bl.grads.slices())?;
        }
        let report = EpochReport {
            epoch,
            mean_loss: Some(total / batches.max(1) as f64),
            dev_pearson: dev_score(&model)?,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} dev {:?}",
            report.mean_loss.unwrap_or(f64::NAN),
            report.dev_pearson
        );
        hook(&EpochState {
            epoch,
            model: &model,
            adam: &adam,
            report: &report,
        })?;
        if let Some(score) = report.dev_pearson {
            if best.as_ref().map_or(true, |(s, ..)| score > *s) {
                best = Some((score, epoch, model.clone(), adam.clone()));
            }
        }
        reports.push(report);
    }

    Ok(match best {
        Some((_, epoch, model, adam)) => TrainOutcome {
            model,
            adam,
            epoch,
            reports,
        },
        None => TrainOutcome {
            model,
            adam,
            epoch: cfg.epochs(),
            reports,
        },
    })
}
