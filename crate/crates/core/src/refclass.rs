//! Reference-vs-translation classifiers.
//!
//! A sentence is encoded by word averaging or by the mean of LSTM hidden
//! states, mapped to two logits (translation, reference) and normalized with
//! a softmax. P(R) is the reference probability.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PairCorpus;
use crate::embedder::{
    avg_ids, lstm_backward, lstm_forward_trace, EmbeddingMatrix, LstmParams, LstmTrace,
    COMPOSITION_INIT_SCALE,
};
use crate::error::{Error, Result};
use crate::evaluation::spearman;
use crate::linalg::{axpy, sigmoid, Matrix};
use crate::optim::{Adam, AdamConfig};
use crate::textstats::{avg_idf, default_repetition_rate, IdfTable, ALL_GROUP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Avg,
    Lstm,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(EncoderKind::Avg),
            "lstm" => Ok(EncoderKind::Lstm),
            other => Err(Error::arg(format!("unknown encoder '{other}'"))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Avg => "avg",
            EncoderKind::Lstm => "lstm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMode {
    Random,
    Hardest,
}

impl std::str::FromStr for NegativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(NegativeMode::Random),
            "hardest" => Ok(NegativeMode::Hardest),
            other => Err(Error::arg(format!("unknown negative mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NegativeMode::Random => "random",
            NegativeMode::Hardest => "hardest",
        })
    }
}

/// L2 weights searched when tuning the embedding regularizer.
pub const L2_GRID: [f64; 5] = [1e-5, 1e-6, 1e-7, 1e-8, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub encoder: EncoderKind,
    pub l2: f64,
    pub mode: NegativeMode,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// LSTM hidden size; defaults to the embedding dimension.
    pub hidden: Option<usize>,
}

impl ClassifierConfig {
    pub fn new(encoder: EncoderKind) -> Self {
        ClassifierConfig {
            encoder,
            l2: 0.0,
            mode: NegativeMode::Random,
            epochs: 10,
            lr: 0.001,
            seed: 1,
            batch_size: 100,
            hidden: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0) {
            return Err(Error::arg("L2 weight must be nonnegative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg("epochs and batch size must be positive"));
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

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self::new(EncoderKind::Avg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    /// true for a reference, false for a translation.
    pub reference: bool,
}

/// A reference with its candidate translations, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct KBestList {
    pub reference: Vec<String>,
    pub translations: Vec<Vec<String>>,
    pub lang_pair: String,
    pub source: String,
}

/// Groups consecutive pairs sharing a reference into k-best lists.
pub fn kbest_lists(corpus: &PairCorpus) -> Vec<KBestList> {
    let mut out: Vec<KBestList> = Vec::new();
    for p in corpus.iter() {
        match out.last_mut() {
            Some(l) if l.reference == p.reference => l.translations.push(p.translation.clone()),
            _ => out.push(KBestList {
                reference: p.reference.clone(),
                translations: vec![p.translation.clone()],
                lang_pair: p.lang_pair.clone(),
                source: p.source.clone(),
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub encoder: EncoderKind,
    pub emb: EmbeddingMatrix,
    pub lstm: Option<LstmParams>,
    /// 2 × D; row 0 is the translation logit, row 1 the reference logit.
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

enum EncTrace {
    Avg,
    Lstm(LstmTrace),
}

impl Classifier {
    pub fn init<R: Rng>(
        encoder: EncoderKind,
        emb: EmbeddingMatrix,
        hidden: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let d = emb.dim();
        let (lstm, out_dim) = match encoder {
            EncoderKind::Avg => (None, d),
            EncoderKind::Lstm => {
                let h = hidden.unwrap_or(d);
                (Some(LstmParams::init(d, h, rng)), h)
            }
        };
        let c = Classifier {
            encoder,
            emb,
            lstm,
            w_out: Matrix::uniform(2, out_dim, COMPOSITION_INIT_SCALE, rng),
            b_out: vec![0.0; 2],
        };
        c.check_shapes()?;
        Ok(c)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let out_dim = match (&self.encoder, &self.lstm) {
            (EncoderKind::Avg, None) => self.emb.dim(),
            (EncoderKind::Lstm, Some(p)) => {
                p.check_shapes()?;
                if p.input_size != self.emb.dim() {
                    return Err(Error::arg("LSTM input size differs from embedding dimension"));
                }
                p.hidden_size
            }
            _ => return Err(Error::arg("encoder kind does not match its parameters")),
        };
        if self.w_out.rows != 2 || self.w_out.cols != out_dim || self.b_out.len() != 2 {
            return Err(Error::arg("output layer shape mismatch"));
        }
        Ok(())
    }

    fn encode_ids(&self, ids: &[usize]) -> Result<(Vec<f64>, EncTrace)> {
        if ids.is_empty() {
            return Err(Error::arg("cannot classify an empty sentence"));
        }
        match &self.lstm {
            None => Ok((avg_ids(&self.emb, ids), EncTrace::Avg)),
            Some(p) => {
                let xs: Vec<&[f64]> = ids.iter().map(|&i| self.emb.row(i)).collect();
                let trace = lstm_forward_trace(p, &xs)?;
                let mut v = vec![0.0; p.hidden_size];
                let scale = 1.0 / ids.len() as f64;
                for h in &trace.hidden {
                    axpy(scale, h, &mut v);
                }
                Ok((v, EncTrace::Lstm(trace)))
            }
        }
    }

    fn logits(&self, v: &[f64]) -> [f64; 2] {
        let mut z = [self.b_out[0], self.b_out[1]];
        self.w_out.matvec_acc(v, &mut z);
        z
    }

    pub fn reference_probability<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64> {
        let (v, _) = self.encode_ids(&self.emb.encode(tokens))?;
        let z = self.logits(&v);
        Ok(prob_reference(z))
    }

    /// (P(T), P(R)).
    pub fn probabilities<S: AsRef<str>>(&self, tokens: &[S]) -> Result<(f64, f64)> {
        let (v, _) = self.encode_ids(&self.emb.encode(tokens))?;
        let z = self.logits(&v);
        Ok((sigmoid(z[0] - z[1]), sigmoid(z[1] - z[0])))
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = vec![self.emb.weights.data.as_slice()];
        if let Some(p) = &self.lstm {
            v.extend(p.slices());
        }
        v.extend([self.w_out.data.as_slice(), &self.b_out]);
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![self.emb.weights.data.as_mut_slice()];
        if let Some(p) = &mut self.lstm {
            v.extend(p.slices_mut());
        }
        v.extend([self.w_out.data.as_mut_slice(), &mut self.b_out]);
        v
    }
}

/// Softmax probability of the reference logit.
pub fn prob_reference(z: [f64; 2]) -> f64 {
    sigmoid(z[1] - z[0])
}

/// Per-sentence gradient pieces, reduced in input order.
struct SentenceGrad {
    ids: Vec<usize>,
    dxs: Vec<Vec<f64>>,
    lstm: Option<LstmParams>,
    dv: Vec<f64>,
    v: Vec<f64>,
    dz: [f64; 2],
    loss: f64,
}

fn sentence_grad(c: &Classifier, s: &LabeledSentence, scale: f64) -> Result<SentenceGrad> {
    let ids = c.emb.encode(&s.tokens);
    let (v, trace) = c.encode_ids(&ids)?;
    let z = c.logits(&v);
    let p1 = prob_reference(z);
    let p = [1.0 - p1, p1];
    let y = usize::from(s.reference);
    // -ln p_y computed from the logit margin for stability
    let margin = if s.reference { z[1] - z[0] } else { z[0] - z[1] };
    let loss = if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    };
    let mut dz = [scale * p[0], scale * p[1]];
    dz[y] -= scale;
    let mut dv = vec![0.0; v.len()];
    c.w_out.matvec_t_acc(&dz, &mut dv);
    let (dxs, lstm) = match (&trace, &c.lstm) {
        (EncTrace::Lstm(t), Some(lp)) => {
            let xs: Vec<&[f64]> = ids.iter().map(|&i| c.emb.row(i)).collect();
            let tscale = 1.0 / ids.len() as f64;
            let dh: Vec<Vec<f64>> = (0..ids.len())
                .map(|_| dv.iter().map(|g| g * tscale).collect())
                .collect();
            let mut g = LstmParams::zeros(lp.input_size, lp.hidden_size);
            let mut dxs = vec![vec![0.0; lp.input_size]; ids.len()];
            lstm_backward(lp, &xs, t, &dh, &mut g, &mut dxs);
            (dxs, Some(g))
        }
        _ => {
            let tscale = 1.0 / ids.len() as f64;
            let dx: Vec<f64> = dv.iter().map(|g| g * tscale).collect();
            (vec![dx; ids.len()], None)
        }
    };
    Ok(SentenceGrad {
        ids,
        dxs,
        lstm,
        dv,
        v,
        dz,
        loss,
    })
}

/// Mean cross-entropy plus `l2 · ‖W_w‖²`, with gradients in parameter order.
fn batch_grad(c: &Classifier, batch: &[&LabeledSentence], l2: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<SentenceGrad> = batch
        .par_iter()
        .map(|s| sentence_grad(c, s, scale))
        .collect::<Result<_>>()?;
    let mut grads: Vec<Vec<f64>> = c.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
    let d = c.emb.dim();
    let n_groups = grads.len();
    let mut loss = 0.0;
    for part in &parts {
        loss += scale * part.loss;
        for (&i, dx) in part.ids.iter().zip(&part.dxs) {
            axpy(1.0, dx, &mut grads[0][i * d..(i + 1) * d]);
        }
        if let Some(g) = &part.lstm {
            for (k, s) in g.slices().into_iter().enumerate() {
                axpy(1.0, s, &mut grads[1 + k]);
            }
        }
        let wo = &mut grads[n_groups - 2];
        let cols = part.v.len();
        for r in 0..2 {
            axpy(part.dz[r], &part.v, &mut wo[r * cols..(r + 1) * cols]);
        }
        grads[n_groups - 1][0] += part.dz[0];
        grads[n_groups - 1][1] += part.dz[1];
        debug_assert_eq!(part.dv.len(), cols);
    }
    if l2 > 0.0 {
        let w = &c.emb.weights.data;
        loss += l2 * w.iter().map(|x| x * x).sum::<f64>();
        axpy(2.0 * l2, w, &mut grads[0]);
    }
    Ok((loss, grads))
}

/// One 1-labeled reference and one 0-labeled translation per list. Random mode
/// draws the translation uniformly; hardest mode takes the translation with
/// the highest P(R) under `scorer` (lowest index on ties).
pub fn make_training_set<R: Rng>(
    lists: &[KBestList],
    mode: NegativeMode,
    scorer: Option<&Classifier>,
    rng: &mut R,
) -> Result<Vec<LabeledSentence>> {
    if lists.iter().any(|l| l.translations.is_empty()) {
        return Err(Error::arg("empty k-best list"));
    }
    let picks: Vec<usize> = match mode {
        NegativeMode::Random => lists
            .iter()
            .map(|l| rng.gen_range(0..l.translations.len()))
            .collect(),
        NegativeMode::Hardest => {
            let c = scorer.ok_or_else(|| Error::arg("hardest mode needs a scoring classifier"))?;
            lists
                .par_iter()
                .map(|l| {
                    let scores: Vec<f64> = l
                        .translations
                        .iter()
                        .map(|t| c.reference_probability(t))
                        .collect::<Result<_>>()?;
                    Ok(argmax_first(&scores))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut out = Vec::with_capacity(2 * lists.len());
    for (l, k) in lists.iter().zip(picks) {
        out.push(LabeledSentence {
            tokens: l.reference.clone(),
            reference: true,
        });
        out.push(LabeledSentence {
            tokens: l.translations[k].clone(),
            reference: false,
        });
    }
    Ok(out)
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    pub reference: f64,
    pub translation: f64,
    pub n_reference: usize,
    pub n_translation: usize,
}

/// Accuracy at threshold 0.5 (P(R) ≥ 0.5 predicts reference). A class with no
/// examples reports accuracy 0.
pub fn classifier_report(c: &Classifier, test: &[LabeledSentence]) -> Result<Accuracy> {
    if test.is_empty() {
        return Err(Error::arg("empty test set"));
    }
    let probs: Vec<f64> = test
        .par_iter()
        .map(|s| c.reference_probability(&s.tokens))
        .collect::<Result<_>>()?;
    Ok(accuracy_from_predictions(
        test.iter().zip(&probs).map(|(s, &p)| (s.reference, p >= 0.5)),
    ))
}

/// `items` yields (gold is reference, predicted reference).
pub fn accuracy_from_predictions<I: IntoIterator<Item = (bool, bool)>>(items: I) -> Accuracy {
    let (mut np, mut nn, mut cp, mut cn) = (0usize, 0usize, 0usize, 0usize);
    for (gold, pred) in items {
        if gold {
            np += 1;
            cp += usize::from(pred);
        } else {
            nn += 1;
            cn += usize::from(!pred);
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Accuracy {
        overall: frac(cp + cn, np + nn),
        reference: frac(cp, np),
        translation: frac(cn, nn),
        n_reference: np,
        n_translation: nn,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub lang: String,
    pub source: String,
    pub accuracy: Accuracy,
}

/// One row per (lang, source) group plus an "All" row. Each k-best list
/// contributes its reference once and every translation.
pub fn group_report(c: &Classifier, corpus: &PairCorpus) -> Result<Vec<GroupAccuracy>> {
    let lists = kbest_lists(corpus);
    let mut groups: BTreeMap<(String, String), Vec<LabeledSentence>> = BTreeMap::new();
    for l in &lists {
        let g = groups
            .entry((l.lang_pair.clone(), l.source.clone()))
            .or_default();
        g.push(LabeledSentence {
            tokens: l.reference.clone(),
            reference: true,
        });
        for t in &l.translations {
            g.push(LabeledSentence {
                tokens: t.clone(),
                reference: false,
            });
        }
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for ((lang, source), items) in groups {
        rows.push(GroupAccuracy {
            lang,
            source,
            accuracy: classifier_report(c, &items)?,
        });
        all.extend(items);
    }
    if all.is_empty() {
        return Err(Error::arg("empty corpus"));
    }
    rows.push(GroupAccuracy {
        lang: ALL_GROUP.into(),
        source: ALL_GROUP.into(),
        accuracy: classifier_report(c, &all)?,
    });
    Ok(rows)
}

/// Accuracies as percentages with one decimal.
pub fn group_report_tsv(rows: &[GroupAccuracy]) -> String {
    let mut out = String::from("lang\tsource\tn_ref\tn_trans\tacc\tacc_ref\tacc_trans\n");
    for r in rows {
        let a = &r.accuracy;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.1}\n",
            r.lang,
            r.source,
            a.n_reference,
            a.n_translation,
            a.overall * 100.0,
            a.reference * 100.0,
            a.translation * 100.0
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochAccuracy {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub adam: Adam,
    /// Epoch whose parameters were kept.
    pub epoch: usize,
    pub history: Vec<EpochAccuracy>,
}

fn check_classes(data: &[LabeledSentence]) -> Result<()> {
    let pos = data.iter().filter(|s| s.reference).count();
    if pos == 0 || pos == data.len() {
        return Err(Error::arg("training data must contain both classes"));
    }
    if data.iter().any(|s| s.tokens.is_empty()) {
        return Err(Error::arg("empty sentence in classifier data"));
    }
    Ok(())
}

fn fit(
    mut c: Classifier,
    val: &[LabeledSentence],
    cfg: &ClassifierConfig,
    rng: &mut ChaCha8Rng,
    next_set: &mut dyn FnMut(usize, &Classifier, &mut ChaCha8Rng) -> Result<Vec<LabeledSentence>>,
) -> Result<TrainedClassifier> {
    if val.is_empty() {
        return Err(Error::arg("empty validation set"));
    }
    let mut adam = Adam::for_params(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &c.param_slices(),
    );
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Classifier, Adam)> = None;
    for epoch in 1..=cfg.epochs {
        let data = next_set(epoch, &c, rng)?;
        check_classes(&data)?;
        let mut order: Vec<&LabeledSentence> = data.iter().collect();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_grad(&c, chunk, cfg.l2)?;
            total += loss;
            batches += 1;
            let gs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            adam.update(c.param_slices_mut(), gs)?;
        }
        let acc = classifier_report(&c, val)?.overall;
        log::info!("classifier epoch {epoch}: loss {:.5} val acc {acc:.4}", total / batches as f64);
        history.push(EpochAccuracy {
            epoch,
            loss: total / batches as f64,
            val_accuracy: acc,
        });
        if best.as_ref().map_or(true, |(a, ..)| acc > *a) {
            best = Some((acc, epoch, c.clone(), adam.clone()));
        }
    }
    let (_, epoch, classifier, adam) = best.expect("at least one epoch");
    Ok(TrainedClassifier {
        classifier,
        adam,
        epoch,
        history,
    })
}

/// Trains on a fixed labeled set.
pub fn train_classifier(
    train: &[LabeledSentence],
    val: &[LabeledSentence],
    cfg: &ClassifierConfig,
    emb: EmbeddingMatrix,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    check_classes(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = Classifier::init(cfg.encoder, emb, cfg.hidden, &mut rng)?;
    fit(c, val, cfg, &mut rng, &mut |_, _, _| Ok(train.to_vec()))
}

/// Trains from k-best lists, choosing each list's negative anew every epoch.
/// The first epoch always draws at random; later epochs follow `cfg.mode`,
/// scoring with the current classifier in hardest mode.
pub fn train_classifier_kbest(
    train: &[KBestList],
    val: &[LabeledSentence],
    cfg: &ClassifierConfig,
    emb: EmbeddingMatrix,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::arg("no training lists"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = Classifier::init(cfg.encoder, emb, cfg.hidden, &mut rng)?;
    fit(c, val, cfg, &mut rng, &mut |epoch, cur, rng| {
        if epoch == 1 || cfg.mode == NegativeMode::Random {
            make_training_set(train, NegativeMode::Random, None, rng)
        } else {
            make_training_set(train, NegativeMode::Hardest, Some(cur), rng)
        }
    })
}

/// Measures correlated against P(R), in report order.
pub const CORRELATION_MEASURES: [&str; 4] = [
    "Unigram repetition rate",
    "Trigram repetition rate",
    "Average IDF",
    "Length",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub measure: String,
    pub rho: f64,
    /// The correlation was undefined (a constant series) and is reported as 0.
    pub undefined: bool,
}

/// Spearman ρ between P(R) of each translation and measures of it.
pub fn correlations_from_scores(
    pr: &[f64],
    translations: &[Vec<String>],
    idf: &IdfTable,
) -> Result<Vec<CorrelationRow>> {
    if pr.len() != translations.len() {
        return Err(Error::arg("one score per translation required"));
    }
    if pr.len() < 3 {
        return Err(Error::arg("correlations need at least 3 pairs"));
    }
    let uni: Vec<f64> = translations.iter().map(|t| default_repetition_rate(t, 1)).collect();
    let tri: Vec<f64> = translations.iter().map(|t| default_repetition_rate(t, 3)).collect();
    let idfs: Vec<f64> = translations
        .iter()
        .map(|t| avg_idf(t, idf))
        .collect::<Result<_>>()?;
    let lens: Vec<f64> = translations.iter().map(|t| t.len() as f64).collect();
    let mut rows = Vec::new();
    for (name, series) in CORRELATION_MEASURES.iter().zip([uni, tri, idfs, lens]) {
        let (rho, undefined) = match spearman(pr, &series) {
            Ok(r) => (r, false),
            Err(Error::UndefinedCorrelation(_)) => (0.0, true),
            Err(e) => return Err(e),
        };
        rows.push(CorrelationRow {
            measure: name.to_string(),
            rho,
            undefined,
        });
    }
    Ok(rows)
}

pub fn metric_correlations(
    c: &Classifier,
    pairs: &PairCorpus,
    idf: &IdfTable,
) -> Result<Vec<CorrelationRow>> {
    let translations: Vec<Vec<String>> = pairs.iter().map(|p| p.translation.clone()).collect();
    let pr: Vec<f64> = translations
        .par_iter()
        .map(|t| c.reference_probability(t))
        .collect::<Result<_>>()?;
    correlations_from_scores(&pr, &translations, idf)
}

/// ρ × 100 with one decimal; undefined correlations are flagged.
pub fn correlations_tsv(rows: &[CorrelationRow]) -> String {
    let mut out = String::from("measure\tspearman_x100\tundefined\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.1}\t{}\n", r.measure, r.rho * 100.0, r.undefined));
    }
    out
}
