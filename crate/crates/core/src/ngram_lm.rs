//! Order-n language model with interpolated absolute discounting.
//!
//! For an observed history `h` at order k,
//!
//! ```text
//! p_k(w | h) = max(c(h,w) - d, 0) / c(h) + d * N1+(h) / c(h) * p_{k-1}(w | h')
//! ```
//!
//! where `h'` drops the oldest token. Unobserved histories fall through to the
//! lower order unchanged. The unigram level interpolates with a uniform
//! distribution over the outcome set (vocabulary, `</s>` and `<unk>`).
//!
//! The trained model is stored in backoff form (interpolated probability for
//! every observed n-gram, backoff weight for every observed history), which
//! reproduces the interpolated distribution exactly and maps directly onto the
//! ARPA-like text format written by [`NgramLm::write_arpa`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::corpus::UNK;
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const UNK_ID: u32 = 0;
const EOS_ID: u32 = 1;
const BOS_ID: u32 = 2;
/// log10 probability written for histories that are never predicted (`<s>`).
const NO_PROB: f64 = -99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub order: usize,
    pub discount: f64,
    /// Tokens seen fewer times than this are mapped to `<unk>`.
    pub min_count: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            order: 3,
            discount: 0.75,
            min_count: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    discount: f64,
    /// id → token; ids 0, 1, 2 are `<unk>`, `</s>`, `<s>`.
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    /// Unigram probability per id (`<s>` has 0).
    unigram: Vec<f64>,
    /// `probs[k]`: probabilities of observed (k+2)-grams, keyed by history ++ word.
    probs: Vec<HashMap<Vec<u32>, f64>>,
    /// `backoff[k]`: weights of observed histories of length k+1.
    backoff: Vec<HashMap<Vec<u32>, f64>>,
}

fn special_ids() -> (Vec<String>, HashMap<String, u32>) {
    let tokens = vec![UNK.to_string(), EOS.to_string(), BOS.to_string()];
    let ids = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    (tokens, ids)
}

#[derive(Default)]
struct HistoryStats {
    total: usize,
    types: usize,
}

pub fn train_lm<S: AsRef<[String]>>(sentences: &[S], cfg: &LmConfig) -> Result<NgramLm> {
    NgramLm::train(sentences, cfg)
}

impl NgramLm {
    pub fn train<S: AsRef<[String]>>(sentences: &[S], cfg: &LmConfig) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::arg("language model needs at least one training sentence"));
        }
        if !(cfg.discount > 0.0 && cfg.discount < 1.0) {
            return Err(Error::arg(format!(
                "discount must lie in (0, 1), got {}",
                cfg.discount
            )));
        }
        if cfg.order < 1 {
            return Err(Error::arg("language model order must be at least 1"));
        }
        let d = cfg.discount;
        let order = cfg.order;

        let mut raw: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s.as_ref() {
                *raw.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut words: Vec<&str> = raw
            .iter()
            .filter(|&(t, &c)| c >= cfg.min_count && ![UNK, BOS, EOS].contains(t))
            .map(|(t, _)| *t)
            .collect();
        words.sort_unstable();
        let (mut tokens, mut ids) = special_ids();
        for w in words {
            ids.insert(w.to_string(), tokens.len() as u32);
            tokens.push(w.to_string());
        }
        let outcomes = (tokens.len() - 1) as f64;

        // counts[k]: (k+1)-gram counts over predicted positions
        let mut counts: Vec<HashMap<Vec<u32>, usize>> = vec![HashMap::new(); order];
        for s in sentences {
            let mut seq = vec![BOS_ID; order - 1];
            seq.extend(
                s.as_ref()
                    .iter()
                    .map(|t| ids.get(t.as_str()).copied().unwrap_or(UNK_ID)),
            );
            seq.push(EOS_ID);
            for pos in order - 1..seq.len() {
                for (k, table) in counts.iter_mut().enumerate() {
                    *table.entry(seq[pos - k..=pos].to_vec()).or_insert(0) += 1;
                }
            }
        }

        let n_total: usize = counts[0].values().sum();
        let n_types = counts[0].len();
        let floor = d * n_types as f64 / n_total as f64 / outcomes;
        let mut unigram = vec![floor; tokens.len()];
        unigram[BOS_ID as usize] = 0.0;
        for (g, &c) in &counts[0] {
            unigram[g[0] as usize] += (c as f64 - d) / n_total as f64;
        }

        let mut lm = NgramLm {
            order,
            discount: d,
            tokens,
            ids,
            unigram,
            probs: Vec::with_capacity(order.saturating_sub(1)),
            backoff: Vec::with_capacity(order.saturating_sub(1)),
        };
        for k in 1..order {
            let mut hist: HashMap<&[u32], HistoryStats> = HashMap::new();
            for (g, &c) in &counts[k] {
                let h = hist.entry(&g[..k]).or_default();
                h.total += c;
                h.types += 1;
            }
            let bow: HashMap<Vec<u32>, f64> = hist
                .iter()
                .map(|(h, s)| (h.to_vec(), d * s.types as f64 / s.total as f64))
                .collect();
            // lower orders are complete, so prob() can be used for p_{k-1}
            lm.backoff.push(bow);
            let mut probs = HashMap::with_capacity(counts[k].len());
            for (g, &c) in &counts[k] {
                let h = &hist[&g[..k]];
                let lower = lm.prob_ids(&g[1..k], g[k]);
                let p = (c as f64 - d) / h.total as f64 + lm.backoff[k - 1][&g[..k]] * lower;
                probs.insert(g.clone(), p);
            }
            lm.probs.push(probs);
        }
        Ok(lm)
    }

    /// A model with no observations: uniform over `words`, `</s>` and `<unk>`.
    pub fn uniform<S: AsRef<str>>(order: usize, words: &[S]) -> Result<Self> {
        if order < 1 {
            return Err(Error::arg("language model order must be at least 1"));
        }
        let (mut tokens, mut ids) = special_ids();
        for w in words {
            let w = w.as_ref();
            if ids.contains_key(w) {
                continue;
            }
            ids.insert(w.to_string(), tokens.len() as u32);
            tokens.push(w.to_string());
        }
        let p = 1.0 / (tokens.len() - 1) as f64;
        let mut unigram = vec![p; tokens.len()];
        unigram[BOS_ID as usize] = 0.0;
        Ok(NgramLm {
            order,
            discount: 0.5,
            tokens,
            ids,
            unigram,
            probs: vec![HashMap::new(); order - 1],
            backoff: vec![HashMap::new(); order - 1],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Number of predictable outcomes, including `</s>` and `<unk>`.
    pub fn num_outcomes(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Predictable outcomes (everything but `<s>`).
    pub fn outcomes(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|&(i, _)| i as u32 != BOS_ID)
            .map(|(_, t)| t.as_str())
    }

    fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    fn prob_ids(&self, history: &[u32], w: u32) -> f64 {
        if history.is_empty() {
            return self.unigram[w as usize];
        }
        let k = history.len();
        let table = &self.probs[k - 1];
        let mut key = Vec::with_capacity(k + 1);
        key.extend_from_slice(history);
        key.push(w);
        if let Some(&p) = table.get(&key) {
            return p;
        }
        let bow = self.backoff[k - 1].get(history).copied().unwrap_or(1.0);
        bow * self.prob_ids(&history[1..], w)
    }

    /// `p(word | history)`, using at most the last `order - 1` history tokens.
    /// Tokens outside the vocabulary are scored as `<unk>`.
    pub fn prob<S: AsRef<str>>(&self, history: &[S], word: &str) -> f64 {
        let keep = history.len().min(self.order - 1);
        let hist: Vec<u32> = history[history.len() - keep..]
            .iter()
            .map(|t| self.id(t.as_ref()))
            .collect();
        self.prob_ids(&hist, self.id(word))
    }

    /// Per-step natural-log probabilities, including the final `</s>`.
    pub fn log_probs<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut seq = vec![BOS_ID; self.order - 1];
        seq.extend(tokens.iter().map(|t| self.id(t.as_ref())));
        seq.push(EOS_ID);
        (self.order - 1..seq.len())
            .map(|pos| self.prob_ids(&seq[pos + 1 - self.order..pos], seq[pos]).ln())
            .collect()
    }

    /// exp of the mean negative log probability over the tokens plus `</s>`.
    pub fn perplexity<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::arg("perplexity of an empty sentence"));
        }
        let lp = self.log_probs(tokens);
        Ok((-lp.iter().sum::<f64>() / lp.len() as f64).exp())
    }

    /// Every history with stored statistics, as token strings, shortest first.
    pub fn histories(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new()];
        for table in &self.backoff {
            let mut hs: Vec<Vec<&str>> = table
                .keys()
                .map(|h| h.iter().map(|&i| self.tokens[i as usize].as_str()).collect())
                .collect();
            hs.sort();
            out.extend(hs);
        }
        out
    }

    /// Serializes the model in an ARPA-like layout: a `\data\` header, then
    /// one section per order with lines `log10(prob) TAB n-gram [TAB log10(bow)]`.
    /// Histories that are never predicted carry a probability of -99.
    pub fn write_arpa(&self) -> String {
        let name = |g: &[u32]| {
            g.iter()
                .map(|&i| self.tokens[i as usize].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut sections: Vec<Vec<(String, f64, Option<f64>)>> = Vec::new();

        let mut uni: Vec<(String, f64, Option<f64>)> = (0..self.tokens.len() as u32)
            .map(|i| {
                let p = if i == BOS_ID {
                    NO_PROB
                } else {
                    self.unigram[i as usize].log10()
                };
                let bow = self.backoff.first().and_then(|t| t.get(&vec![i])).map(|b| b.log10());
                (self.tokens[i as usize].clone(), p, bow)
            })
            .collect();
        uni.sort_by(|a, b| a.0.cmp(&b.0));
        sections.push(uni);

        for k in 1..self.order {
            let probs = &self.probs[k - 1];
            let next_bow = self.backoff.get(k);
            let mut keys: Vec<&Vec<u32>> = probs.keys().collect();
            if let Some(nb) = next_bow {
                keys.extend(nb.keys().filter(|h| !probs.contains_key(*h)));
            }
            let mut rows: Vec<(String, f64, Option<f64>)> = keys
                .into_iter()
                .map(|g| {
                    let p = probs.get(g).map(|p| p.log10()).unwrap_or(NO_PROB);
                    let bow = next_bow.and_then(|t| t.get(g)).map(|b| b.log10());
                    (name(g), p, bow)
                })
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            sections.push(rows);
        }

        let mut out = String::new();
        out.push_str("\\data\\\n");
        let _ = writeln!(out, "order={}", self.order);
        let _ = writeln!(out, "discount={}", self.discount);
        for (k, s) in sections.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, s.len());
        }
        for (k, s) in sections.iter().enumerate() {
            let _ = writeln!(out, "\n\\{}-grams:", k + 1);
            for (g, p, bow) in s {
                match bow {
                    Some(b) => {
                        let _ = writeln!(out, "{p}\t{g}\t{b}");
                    }
                    None => {
                        let _ = writeln!(out, "{p}\t{g}");
                    }
                }
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn read_arpa<R: BufRead>(reader: R) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let mut order = None;
        let mut discount = 0.5;
        let mut section: Option<usize> = None;
        let mut entries: Vec<Vec<(Vec<String>, f64, Option<f64>)>> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| perr(lineno, e.to_string()))?;
            let line = line.trim_end();
            if line.is_empty() || line == "\\data\\" || line.starts_with("ngram ") {
                continue;
            }
            if line == "\\end\\" {
                break;
            }
            if let Some(v) = line.strip_prefix("order=") {
                let o: usize = v.parse().map_err(|_| perr(lineno, format!("bad order '{v}'")))?;
                order = Some(o);
                entries = vec![Vec::new(); o];
                continue;
            }
            if let Some(v) = line.strip_prefix("discount=") {
                discount = v.parse().map_err(|_| perr(lineno, format!("bad discount '{v}'")))?;
                continue;
            }
            if let Some(rest) = line.strip_prefix('\\') {
                let k: usize = rest
                    .strip_suffix("-grams:")
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| perr(lineno, format!("bad section header '{line}'")))?;
                if k == 0 || k > entries.len() {
                    return Err(perr(lineno, format!("section {k} outside model order")));
                }
                section = Some(k);
                continue;
            }
            let k = section.ok_or_else(|| perr(lineno, "entry before any section".into()))?;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 || cols.len() > 3 {
                return Err(perr(lineno, "expected 2 or 3 tab-separated fields".into()));
            }
            let p: f64 = cols[0]
                .parse()
                .map_err(|_| perr(lineno, format!("bad probability '{}'", cols[0])))?;
            let g: Vec<String> = cols[1].split(' ').map(String::from).collect();
            if g.len() != k {
                return Err(perr(lineno, format!("expected a {k}-gram, got '{}'", cols[1])));
            }
            let bow = match cols.get(2) {
                Some(b) => Some(
                    b.parse::<f64>()
                        .map_err(|_| perr(lineno, format!("bad backoff '{b}'")))?,
                ),
                None => None,
            };
            entries[k - 1].push((g, p, bow));
        }
        let order = order.ok_or_else(|| Error::Parse {
            line: 0,
            msg: "missing order= header".into(),
        })?;

        let (mut tokens, mut ids) = special_ids();
        for (g, _, _) in &entries[0] {
            if !ids.contains_key(&g[0]) {
                ids.insert(g[0].clone(), tokens.len() as u32);
                tokens.push(g[0].clone());
            }
        }
        let to_ids = |g: &[String]| -> Result<Vec<u32>> {
            g.iter()
                .map(|t| {
                    ids.get(t)
                        .copied()
                        .ok_or_else(|| Error::Parse {
                            line: 0,
                            msg: format!("token '{t}' missing from unigram section"),
                        })
                })
                .collect()
        };
        let mut unigram = vec![0.0; tokens.len()];
        let mut probs = vec![HashMap::new(); order - 1];
        let mut backoff = vec![HashMap::new(); order - 1];
        for (k, section) in entries.iter().enumerate() {
            for (g, p, bow) in section {
                let key = to_ids(g)?;
                if *p != NO_PROB {
                    let prob = 10f64.powf(*p);
                    if k == 0 {
                        unigram[key[0] as usize] = prob;
                    } else {
                        probs[k - 1].insert(key.clone(), prob);
                    }
                }
                if let Some(b) = bow {
                    if k + 1 >= order {
                        return Err(Error::Parse {
                            line: 0,
                            msg: format!("backoff weight on a highest-order {}-gram", k + 1),
                        });
                    }
                    backoff[k].insert(key, 10f64.powf(*b));
                }
            }
        }
        Ok(NgramLm {
            order,
            discount,
            tokens,
            ids,
            unigram,
            probs,
            backoff,
        })
    }
}
