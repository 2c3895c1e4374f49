//! Length, quality and diversity filters over scored pairs, and grid tuning.
//!
//! Every bound is inclusive. A filter config is a conjunction of the active
//! predicates, optionally followed by a seeded fixed-size sample.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::corpus::{sample_fixed, PairCorpus, SentencePair};
use crate::embedder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::evaluation::StsFile;
use crate::ngram_lm::NgramLm;
use crate::refclass::Classifier;
use crate::textstats::{ngram_overlap, smoothed_bleu};
use crate::trainer::{train, TrainConfig};

/// Highest n for which overlap is cached.
pub const MAX_OVERLAP_N: usize = 3;

/// Default number of pairs sampled after filtering during tuning.
pub const DEFAULT_TARGET_SIZE: usize = 24_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub len: usize,
    pub ref_len: usize,
    pub cost: Option<f64>,
    pub ppl: Option<f64>,
    pub pr: Option<f64>,
    /// overlap₁, overlap₂, overlap₃
    pub overlap: [f64; MAX_OVERLAP_N],
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair: SentencePair,
    pub metrics: PairMetrics,
}

/// Models used for the model-based metrics.
#[derive(Default, Clone, Copy)]
pub struct Resources<'a> {
    pub lm: Option<&'a NgramLm>,
    pub classifier: Option<&'a Classifier>,
}

/// Which model-based metrics to compute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricRequest {
    pub ppl: bool,
    pub pr: bool,
}

impl MetricRequest {
    pub fn all() -> Self {
        MetricRequest { ppl: true, pr: true }
    }
}

/// Caches every metric for every pair. Perplexity and P(R) are computed on
/// the translation.
pub fn score_pairs(
    corpus: &PairCorpus,
    res: &Resources<'_>,
    req: &MetricRequest,
) -> Result<Vec<ScoredPair>> {
    if req.ppl && res.lm.is_none() {
        return Err(Error::Config("perplexity requested without a language model".into()));
    }
    if req.pr && res.classifier.is_none() {
        return Err(Error::Config("P(R) requested without a classifier".into()));
    }
    corpus
        .pairs
        .par_iter()
        .map(|p| {
            let ppl = match (req.ppl, res.lm) {
                (true, Some(lm)) => Some(lm.perplexity(&p.translation)?),
                _ => None,
            };
            let pr = match (req.pr, res.classifier) {
                (true, Some(c)) => Some(c.reference_probability(&p.translation)?),
                _ => None,
            };
            let overlap = [1, 2, 3].map(|n| ngram_overlap(&p.reference, &p.translation, n));
            Ok(ScoredPair {
                metrics: PairMetrics {
                    len: p.translation.len(),
                    ref_len: p.reference.len(),
                    cost: p.cost,
                    ppl,
                    pr,
                    overlap,
                    bleu: smoothed_bleu(&p.reference, &p.translation)?,
                },
                pair: p.clone(),
            })
        })
        .collect()
}

/// One JSON object per line.
pub fn write_scored<W: std::io::Write>(mut w: W, scored: &[ScoredPair]) -> Result<()> {
    for s in scored {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn read_scored<R: std::io::BufRead>(reader: R) -> Result<Vec<ScoredPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn save_scored(path: &std::path::Path, scored: &[ScoredPair]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scored(std::io::BufWriter::new(f), scored)
}

pub fn load_scored(path: &std::path::Path) -> Result<Vec<ScoredPair>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scored(std::io::BufReader::new(f))
}

/// Which side's token count the length filter uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LengthSide {
    #[default]
    Translation,
    Reference,
}

impl std::str::FromStr for LengthSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(LengthSide::Translation),
            "reference" => Ok(LengthSide::Reference),
            other => Err(Error::Config(format!("unknown length side '{other}'"))),
        }
    }
}

impl fmt::Display for LengthSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LengthSide::Translation => "translation",
            LengthSide::Reference => "reference",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapBound {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub length_range: Option<(usize, usize)>,
    pub length_side: LengthSide,
    pub cost_max: Option<f64>,
    /// `None` is an infinite bound.
    pub ppl_max: Option<f64>,
    pub pr_min: Option<f64>,
    pub overlap: Option<OverlapBound>,
    pub bleu_range: Option<(f64, f64)>,
    pub target_size: Option<usize>,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            length_range: None,
            length_side: LengthSide::Translation,
            cost_max: None,
            ppl_max: None,
            pr_min: None,
            overlap: None,
            bleu_range: None,
            target_size: None,
            seed: 1,
        }
    }
}

/// One active bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Predicate {
    Length { lo: usize, hi: usize, side: LengthSide },
    CostMax(f64),
    PplMax(f64),
    PrMin(f64),
    Overlap(OverlapBound),
    Bleu { lo: f64, hi: f64 },
}

fn need(v: Option<f64>, what: &str) -> Result<f64> {
    v.ok_or_else(|| Error::Config(format!("{what} filter active but the metric is missing")))
}

impl Predicate {
    pub fn keep(&self, m: &PairMetrics) -> Result<bool> {
        Ok(match *self {
            Predicate::Length { lo, hi, side } => {
                let n = match side {
                    LengthSide::Translation => m.len,
                    LengthSide::Reference => m.ref_len,
                };
                (lo..=hi).contains(&n)
            }
            Predicate::CostMax(c) => need(m.cost, "cost")? <= c,
            Predicate::PplMax(c) => need(m.ppl, "perplexity")? <= c,
            Predicate::PrMin(c) => need(m.pr, "P(R)")? >= c,
            Predicate::Overlap(b) => (b.lo..=b.hi).contains(&m.overlap[b.n - 1]),
            Predicate::Bleu { lo, hi } => (lo..=hi).contains(&m.bleu),
        })
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if let Some((lo, hi)) = self.length_range {
            if lo > hi {
                return bad("length_range lower bound exceeds upper bound");
            }
        }
        if let Some(b) = self.overlap {
            if !(1..=MAX_OVERLAP_N).contains(&b.n) {
                return bad("overlap order must be 1, 2 or 3");
            }
            if !(b.lo <= b.hi) {
                return bad("overlap lower bound exceeds upper bound");
            }
        }
        if let Some((lo, hi)) = self.bleu_range {
            if !(lo <= hi) {
                return bad("bleu_range lower bound exceeds upper bound");
            }
        }
        if let Some(p) = self.pr_min {
            if !(0.0..=1.0).contains(&p) {
                return bad("pr_min must lie in [0, 1]");
            }
        }
        for v in [self.cost_max, self.ppl_max].into_iter().flatten() {
            if v.is_nan() {
                return bad("NaN bound");
            }
        }
        Ok(())
    }

    pub fn predicates(&self) -> Vec<Predicate> {
        let mut out = Vec::new();
        if let Some((lo, hi)) = self.length_range {
            out.push(Predicate::Length {
                lo,
                hi,
                side: self.length_side,
            });
        }
        if let Some(c) = self.cost_max {
            out.push(Predicate::CostMax(c));
        }
        if let Some(c) = self.ppl_max {
            out.push(Predicate::PplMax(c));
        }
        if let Some(c) = self.pr_min {
            out.push(Predicate::PrMin(c));
        }
        if let Some(b) = self.overlap {
            out.push(Predicate::Overlap(b));
        }
        if let Some((lo, hi)) = self.bleu_range {
            out.push(Predicate::Bleu { lo, hi });
        }
        out
    }

    /// Which model-based metrics the active predicates read.
    pub fn metric_request(&self) -> MetricRequest {
        MetricRequest {
            ppl: self.ppl_max.is_some(),
            pr: self.pr_min.is_some(),
        }
    }

    pub const KEYS: [&'static str; 9] = [
        "length_range",
        "length_side",
        "cost_max",
        "ppl_max",
        "pr_min",
        "overlap",
        "bleu_range",
        "target_size",
        "seed",
    ];

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        if let Some((lo, hi)) = self.length_range {
            kv.set("length_range", format!("{lo},{hi}"));
        }
        kv.set("length_side", self.length_side.to_string());
        if let Some(c) = self.cost_max {
            kv.set("cost_max", fmt_num(c));
        }
        kv.set("ppl_max", self.ppl_max.map_or("inf".to_string(), fmt_num));
        if let Some(c) = self.pr_min {
            kv.set("pr_min", fmt_num(c));
        }
        if let Some(b) = self.overlap {
            kv.set("overlap", format!("{},{},{}", b.n, fmt_num(b.lo), fmt_num(b.hi)));
        }
        if let Some((lo, hi)) = self.bleu_range {
            kv.set("bleu_range", format!("{},{}", fmt_num(lo), fmt_num(hi)));
        }
        if let Some(n) = self.target_size {
            kv.set("target_size", n.to_string());
        }
        kv.set("seed", self.seed.to_string());
        kv
    }

    /// Reads the keys in [`FilterConfig::KEYS`]; other keys are ignored.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        fn list<T: std::str::FromStr>(key: &str, v: &str, n: usize) -> Result<Vec<T>> {
            let parts: Vec<&str> = v.split([',', ' ']).filter(|s| !s.is_empty()).collect();
            if parts.len() != n {
                return Err(Error::Config(format!("'{key}' needs {n} values, got '{v}'")));
            }
            parts
                .iter()
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::Config(format!("bad value '{p}' in '{key}'")))
                })
                .collect()
        }
        let mut c = FilterConfig::default();
        if let Some(v) = kv.get("length_range") {
            let x: Vec<usize> = list("length_range", v, 2)?;
            c.length_range = Some((x[0], x[1]));
        }
        if let Some(side) = kv.get_parsed::<String>("length_side")? {
            c.length_side = side.parse()?;
        }
        c.cost_max = kv.get_parsed("cost_max")?;
        c.ppl_max = match kv.get("ppl_max") {
            None | Some("inf") | Some("none") | Some("") => None,
            Some(_) => kv.get_parsed("ppl_max")?,
        };
        if c.ppl_max == Some(f64::INFINITY) {
            c.ppl_max = None;
        }
        c.pr_min = kv.get_parsed("pr_min")?;
        if let Some(v) = kv.get("overlap") {
            let x: Vec<f64> = list("overlap", v, 3)?;
            if x[0].fract() != 0.0 || x[0] < 1.0 {
                return Err(Error::Config("overlap order must be a positive integer".into()));
            }
            c.overlap = Some(OverlapBound {
                n: x[0] as usize,
                lo: x[1],
                hi: x[2],
            });
        }
        if let Some(v) = kv.get("bleu_range") {
            let x: Vec<f64> = list("bleu_range", v, 2)?;
            c.bleu_range = Some((x[0], x[1]));
        }
        c.target_size = kv.get_parsed("target_size")?;
        if let Some(s) = kv.get_parsed("seed")? {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }

    /// Compact one-line description of the active bounds.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some((lo, hi)) = self.length_range {
            let side = match self.length_side {
                LengthSide::Translation => "",
                LengthSide::Reference => "ref_",
            };
            parts.push(format!("{side}length=[{lo},{hi}]"));
        }
        if let Some(c) = self.cost_max {
            parts.push(format!("cost<={}", fmt_num(c)));
        }
        if let Some(c) = self.ppl_max {
            parts.push(format!("ppl<={}", fmt_num(c)));
        }
        if let Some(c) = self.pr_min {
            parts.push(format!("pr>={}", fmt_num(c)));
        }
        if let Some(b) = self.overlap {
            parts.push(format!("overlap{}=[{},{}]", b.n, fmt_num(b.lo), fmt_num(b.hi)));
        }
        if let Some((lo, hi)) = self.bleu_range {
            parts.push(format!("bleu=[{},{}]", fmt_num(lo), fmt_num(hi)));
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(";")
        }
    }
}

/// Indices of pairs passing every active predicate.
pub fn survivor_indices(scored: &[ScoredPair], cfg: &FilterConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let preds = cfg.predicates();
    let keep: Vec<bool> = scored
        .par_iter()
        .map(|s| {
            for p in &preds {
                if !p.keep(&s.metrics)? {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<_>>()?;
    Ok(keep
        .iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect())
}

/// Survivors in input order, then a seeded sample of `target_size` if set.
pub fn apply_filters(scored: &[ScoredPair], cfg: &FilterConfig) -> Result<PairCorpus> {
    let kept: PairCorpus = survivor_indices(scored, cfg)?
        .into_iter()
        .map(|i| scored[i].pair.clone())
        .collect();
    match cfg.target_size {
        Some(n) => sample_fixed(&kept, n, cfg.seed),
        None => Ok(kept),
    }
}

/// Filter families that can be tuned one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterFamily {
    Length,
    Cost,
    Perplexity,
    ReferenceProb,
    Overlap(usize),
    Bleu,
}

impl std::str::FromStr for FilterFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "length" => FilterFamily::Length,
            "cost" => FilterFamily::Cost,
            "ppl" | "perplexity" => FilterFamily::Perplexity,
            "pr" => FilterFamily::ReferenceProb,
            "overlap1" => FilterFamily::Overlap(1),
            "overlap2" => FilterFamily::Overlap(2),
            "overlap3" => FilterFamily::Overlap(3),
            "bleu" => FilterFamily::Bleu,
            other => return Err(Error::Config(format!("unknown filter family '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub length_ranges: Vec<(usize, usize)>,
    pub cost_max: Vec<f64>,
    /// `None` is ∞.
    pub ppl_max: Vec<Option<f64>>,
    pub pr_min: Vec<f64>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        let tenths = |a: u32, b: u32| (a..=b).map(|k| k as f64 / 10.0).collect::<Vec<_>>();
        TuningGrid {
            length_ranges: vec![
                (0, 10),
                (0, 15),
                (0, 20),
                (0, 30),
                (0, 100),
                (10, 20),
                (10, 30),
                (10, 100),
                (15, 25),
                (15, 30),
                (15, 100),
                (20, 30),
                (20, 100),
                (30, 100),
            ],
            cost_max: tenths(2, 10),
            ppl_max: [25.0, 50.0, 75.0, 100.0, 150.0, 200.0]
                .into_iter()
                .map(Some)
                .chain([None])
                .collect(),
            pr_min: tenths(0, 9),
            lower_bounds: tenths(0, 3),
            upper_bounds: tenths(6, 10),
        }
    }
}

impl TuningGrid {
    /// Grid points for one family, each extending `base`, in listed order.
    pub fn points(&self, family: FilterFamily, base: &FilterConfig) -> Result<Vec<FilterConfig>> {
        let with = |f: &dyn Fn(&mut FilterConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        let pts: Vec<FilterConfig> = match family {
            FilterFamily::Length => self
                .length_ranges
                .iter()
                .map(|&r| with(&|c| c.length_range = Some(r)))
                .collect(),
            FilterFamily::Cost => self
                .cost_max
                .iter()
                .map(|&v| with(&|c| c.cost_max = Some(v)))
                .collect(),
            FilterFamily::Perplexity => self
                .ppl_max
                .iter()
                .map(|&v| with(&|c| c.ppl_max = v))
                .collect(),
            FilterFamily::ReferenceProb => self
                .pr_min
                .iter()
                .map(|&v| with(&|c| c.pr_min = Some(v)))
                .collect(),
            FilterFamily::Overlap(n) => {
                let mut v = Vec::new();
                for &lo in &self.lower_bounds {
                    for &hi in &self.upper_bounds {
                        v.push(with(&|c| c.overlap = Some(OverlapBound { n, lo, hi })));
                    }
                }
                v
            }
            FilterFamily::Bleu => {
                let mut v = Vec::new();
                for &lo in &self.lower_bounds {
                    for &hi in &self.upper_bounds {
                        v.push(with(&|c| c.bleu_range = Some((lo, hi))));
                    }
                }
                v
            }
        };
        if pts.is_empty() {
            return Err(Error::Config("empty tuning grid".into()));
        }
        for p in &pts {
            p.validate()?;
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub point: usize,
    pub config: String,
    pub survivors: usize,
    pub dev_pearson: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: FilterConfig,
    pub rows: Vec<TuneRow>,
}

impl TuneResult {
    /// One row per evaluated grid point; Pearson r × 100 with one decimal.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("point\tconfig\tsurvivors\tdev_pearson_x100\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.1}\n",
                r.point,
                r.config,
                r.survivors,
                r.dev_pearson * 100.0
            ));
        }
        out
    }
}

/// For each grid point: filter, sample `target_size`, train from `emb`, and
/// score on `dev`. Points with too few survivors are skipped. The best point
/// wins, with the earliest point winning ties.
pub fn tune_filter(
    points: &[FilterConfig],
    scored: &[ScoredPair],
    dev: &[StsFile],
    train_cfg: &TrainConfig,
    emb: &EmbeddingMatrix,
    target_size: usize,
) -> Result<TuneResult> {
    if dev.is_empty() {
        return Err(Error::Config("tuning needs dev STS files".into()));
    }
    if points.is_empty() {
        return Err(Error::Config("empty tuning grid".into()));
    }
    let results: Vec<Result<Option<TuneRow>>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let survivors = survivor_indices(scored, p)?.len();
            if survivors < target_size {
                log::warn!(
                    "skipping grid point {} ({}): {survivors} survivors < {target_size}",
                    i,
                    p.describe()
                );
                return Ok(None);
            }
            let mut cfg = p.clone();
            cfg.target_size = Some(target_size);
            let data = apply_filters(scored, &cfg)?;
            let out = train(&data, emb.clone(), train_cfg, dev)?;
            let dev_pearson = out.reports[out.epoch]
                .dev_pearson
                .expect("dev files were given");
            Ok(Some(TuneRow {
                point: i,
                config: p.describe(),
                survivors,
                dev_pearson,
            }))
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        if let Some(row) = r? {
            rows.push(row);
        }
    }
    let best_row = rows
        .iter()
        .fold(None::<&TuneRow>, |best, r| match best {
            Some(b) if b.dev_pearson >= r.dev_pearson => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::Size {
            requested: target_size,
            available: points
                .iter()
                .map(|p| survivor_indices(scored, p).map(|v| v.len()).unwrap_or(0))
                .max()
                .unwrap_or(0),
        })?;
    let mut best = points[best_row.point].clone();
    best.target_size = Some(target_size);
    Ok(TuneResult { best, rows })
}
