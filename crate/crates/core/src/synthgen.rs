//! Seeded synthetic corpora.
//!
//! Two generators:
//!
//! * [`gen_paraphrase_corpus`] builds clusters of concepts, each concept with
//!   several surface forms. A pair realizes one concept set twice; `noise` is
//!   the chance that a concept appears in an alternate form instead of its
//!   core form. STS items get gold `5 · shared / L` from their concept sets.
//! * [`gen_mt_like`] draws references from a Zipfian vocabulary in which a
//!   small set of frequent tokens is rare in references, and derives a
//!   "translation" by mapping rare tokens to frequent ones and duplicating
//!   tokens chosen in proportion to their frequency.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PairCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::evaluation::{StsFile, StsItem};

/// Surface forms per concept (more when the vocabulary does not divide evenly).
pub const FORMS_PER_CONCEPT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub vocab: usize,
    pub noise: f64,
    pub seed: u64,
    /// Concepts per sentence.
    pub sentence_concepts: usize,
    /// Items in each of the dev and test STS files.
    pub sts_items: usize,
    /// Fraction of STS items drawn across clusters (gold 0).
    pub cross_cluster: f64,
}

impl ParaphraseConfig {
    pub fn new(clusters: usize, per_cluster: usize, vocab: usize, noise: f64, seed: u64) -> Self {
        ParaphraseConfig {
            clusters,
            per_cluster,
            vocab,
            noise,
            seed,
            sentence_concepts: 3,
            sts_items: 300,
            cross_cluster: 0.2,
        }
    }
}

/// Where a surface token comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptId {
    pub cluster: usize,
    pub concept: usize,
    pub form: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseData {
    pub corpus: PairCorpus,
    pub dev: StsFile,
    pub test: StsFile,
    pub concepts: BTreeMap<String, ConceptId>,
}

struct Inventory {
    /// forms[cluster][concept] lists token strings; index 0 is the core form.
    forms: Vec<Vec<Vec<String>>>,
}

impl Inventory {
    fn realize<R: Rng>(&self, cluster: usize, concepts: &[usize], noise: f64, rng: &mut R) -> Vec<String> {
        let mut out: Vec<String> = concepts
            .iter()
            .map(|&c| {
                let forms = &self.forms[cluster][c];
                if forms.len() > 1 && rng.gen_bool(noise) {
                    forms[rng.gen_range(1..forms.len())].clone()
                } else {
                    forms[0].clone()
                }
            })
            .collect();
        out.shuffle(rng);
        out
    }
}

fn sample_concepts<R: Rng>(rng: &mut R, k: usize, n: usize) -> Vec<usize> {
    index::sample(rng, k, n).into_vec()
}

pub fn gen_paraphrase_corpus(cfg: &ParaphraseConfig) -> Result<ParaphraseData> {
    let l = cfg.sentence_concepts;
    if cfg.clusters < 2 {
        return Err(Error::arg("need at least 2 clusters"));
    }
    if cfg.per_cluster == 0 || l == 0 {
        return Err(Error::arg("cluster size and sentence length must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.noise) || !(0.0..=1.0).contains(&cfg.cross_cluster) {
        return Err(Error::arg("noise and cross-cluster rates must lie in [0, 1]"));
    }
    let per_cluster_concepts = cfg.vocab / (cfg.clusters * FORMS_PER_CONCEPT);
    if per_cluster_concepts < 2 * l {
        return Err(Error::arg(format!(
            "vocabulary {} too small: each cluster needs {} concepts of {} forms",
            cfg.vocab,
            2 * l,
            FORMS_PER_CONCEPT
        )));
    }
    let n_concepts = cfg.clusters * per_cluster_concepts;
    let mut forms = vec![vec![Vec::new(); per_cluster_concepts]; cfg.clusters];
    let mut concepts = BTreeMap::new();
    for w in 0..cfg.vocab {
        let global = w % n_concepts;
        let (cluster, concept) = (global / per_cluster_concepts, global % per_cluster_concepts);
        let form = w / n_concepts;
        let tok = format!("p{w:04}");
        forms[cluster][concept].push(tok.clone());
        concepts.insert(
            tok,
            ConceptId {
                cluster,
                concept,
                form,
            },
        );
    }
    let inv = Inventory { forms };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pairs = Vec::with_capacity(cfg.clusters * cfg.per_cluster);
    for cluster in 0..cfg.clusters {
        for _ in 0..cfg.per_cluster {
            let set = sample_concepts(&mut rng, per_cluster_concepts, l);
            let a = inv.realize(cluster, &set, cfg.noise, &mut rng);
            let b = inv.realize(cluster, &set, cfg.noise, &mut rng);
            let mut p = SentencePair::new(a, b);
            p.lang_pair = "syn-en".into();
            p.source = format!("cluster{cluster:02}");
            pairs.push(p);
        }
    }
    // Interleave clusters so that sequential batches mix them.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let corpus = PairCorpus::new(order.into_iter().map(|i| pairs[i].clone()).collect());

    let mut sts = |name: &str| -> StsFile {
        let items = (0..cfg.sts_items)
            .map(|_| {
                let ca = rng.gen_range(0..cfg.clusters);
                let a_set = sample_concepts(&mut rng, per_cluster_concepts, l);
                let (cb, b_set, shared) = if rng.gen_bool(cfg.cross_cluster) {
                    let cb = (ca + rng.gen_range(1..cfg.clusters)) % cfg.clusters;
                    (cb, sample_concepts(&mut rng, per_cluster_concepts, l), 0)
                } else {
                    let k = rng.gen_range(0..=l);
                    let mut b_set: Vec<usize> = a_set[..k].to_vec();
                    let rest: Vec<usize> = (0..per_cluster_concepts)
                        .filter(|c| !a_set.contains(c))
                        .collect();
                    b_set.extend(rest.choose_multiple(&mut rng, l - k));
                    (ca, b_set, k)
                };
                StsItem {
                    sentence1: inv.realize(ca, &a_set, cfg.noise, &mut rng),
                    sentence2: inv.realize(cb, &b_set, cfg.noise, &mut rng),
                    gold: 5.0 * shared as f64 / l as f64,
                }
            })
            .collect();
        StsFile {
            name: name.to_string(),
            items,
        }
    };
    let dev = sts("synthetic-dev");
    let test = sts("synthetic-test");
    Ok(ParaphraseData {
        corpus,
        dev,
        test,
        concepts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtLikeConfig {
    /// Number of references.
    pub pairs: usize,
    pub repeat_rate: f64,
    pub vocab_shrink: f64,
    pub seed: u64,
    /// Translations per reference, stored as consecutive pairs.
    pub kbest: usize,
    pub frequent_tokens: usize,
    pub tail_tokens: usize,
    /// Probability that a reference token is drawn from the frequent set.
    pub frequent_mass: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl MtLikeConfig {
    pub fn new(pairs: usize, repeat_rate: f64, vocab_shrink: f64, seed: u64) -> Self {
        MtLikeConfig {
            pairs,
            repeat_rate,
            vocab_shrink,
            seed,
            kbest: 1,
            frequent_tokens: 20,
            tail_tokens: 2000,
            frequent_mass: 0.05,
            min_len: 15,
            max_len: 30,
        }
    }
}

/// Token name for vocabulary rank `r`; the frequent set takes the first ranks.
pub fn mt_token(rank: usize) -> String {
    format!("w{rank:04}")
}

struct MtVocab {
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
    frequent: usize,
}

impl MtVocab {
    fn new(cfg: &MtLikeConfig) -> Result<Self> {
        if cfg.frequent_tokens == 0 || cfg.tail_tokens == 0 {
            return Err(Error::arg("token sets must be nonempty"));
        }
        let f = cfg.frequent_tokens;
        let h: f64 = (1..=cfg.tail_tokens).map(|r| 1.0 / r as f64).sum();
        let mut probs = vec![cfg.frequent_mass / f as f64; f];
        probs.extend((1..=cfg.tail_tokens).map(|r| (1.0 - cfg.frequent_mass) / (r as f64 * h)));
        let sampler = WeightedIndex::new(&probs).map_err(|e| Error::arg(e.to_string()))?;
        Ok(MtVocab {
            probs,
            sampler,
            frequent: f,
        })
    }

    /// Frequent token that rare rank `r` collapses to.
    fn shrink_target(&self, r: usize) -> usize {
        (r * 7919) % self.frequent
    }
}

fn translate<R: Rng>(reference: &[usize], v: &MtVocab, cfg: &MtLikeConfig, rng: &mut R) -> Vec<usize> {
    let shrunk: Vec<usize> = reference
        .iter()
        .map(|&r| {
            if r >= v.frequent && cfg.vocab_shrink > 0.0 && rng.gen_bool(cfg.vocab_shrink) {
                v.shrink_target(r)
            } else {
                r
            }
        })
        .collect();
    let n_dup = (cfg.repeat_rate * shrunk.len() as f64).round() as usize;
    if n_dup == 0 {
        return shrunk;
    }
    let positions: Vec<usize> = (0..shrunk.len()).collect();
    let chosen: Vec<usize> = positions
        .choose_multiple_weighted(rng, n_dup, |&i| v.probs[shrunk[i]])
        .expect("weights are positive")
        .copied()
        .collect();
    let mut after: Vec<Vec<usize>> = vec![Vec::new(); shrunk.len()];
    let mut chosen = chosen;
    chosen.sort_unstable();
    for i in chosen {
        let k = rng.gen_range(i..shrunk.len());
        after[k].push(shrunk[i]);
    }
    let mut out = Vec::with_capacity(shrunk.len() + n_dup);
    for (i, &t) in shrunk.iter().enumerate() {
        out.push(t);
        out.extend(&after[i]);
    }
    out
}

pub fn gen_mt_like_with(cfg: &MtLikeConfig) -> Result<PairCorpus> {
    for (name, r) in [("repeat_rate", cfg.repeat_rate), ("vocab_shrink", cfg.vocab_shrink)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::arg(format!("{name} must lie in [0, 1]")));
        }
    }
    if cfg.kbest == 0 || cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::arg("invalid k-best size or length range"));
    }
    if !(0.0..1.0).contains(&cfg.frequent_mass) {
        return Err(Error::arg("frequent_mass must lie in [0, 1)"));
    }
    let v = MtVocab::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let langs = ["cs-en", "fr-en"];
    let mut pairs = Vec::with_capacity(cfg.pairs * cfg.kbest);
    for i in 0..cfg.pairs {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let reference: Vec<usize> = (0..len).map(|_| v.sampler.sample(&mut rng)).collect();
        let ref_toks: Vec<String> = reference.iter().map(|&r| mt_token(r)).collect();
        for k in 0..cfg.kbest {
            let trans = translate(&reference, &v, cfg, &mut rng);
            let mut p = SentencePair::new(
                ref_toks.clone(),
                trans.iter().map(|&r| mt_token(r)).collect(),
            );
            p.lang_pair = langs[i % langs.len()].to_string();
            p.source = "synth".into();
            p.beam_rank = Some(k as u32 + 1);
            pairs.push(p);
        }
    }
    Ok(PairCorpus::new(pairs))
}

pub fn gen_mt_like(pairs: usize, repeat_rate: f64, vocab_shrink: f64, seed: u64) -> Result<PairCorpus> {
    gen_mt_like_with(&MtLikeConfig::new(pairs, repeat_rate, vocab_shrink, seed))
}
