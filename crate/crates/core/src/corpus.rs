//! Sentence-pair corpora: loading, tokenization, vocabularies and seeded sampling.
//!
//! Two interchange formats are supported. TSV carries the columns
//! `reference, translation, cost, lang_pair, source, beam_rank` with trailing
//! optionals; an empty field means "absent". JSONL carries one object per line
//! with the same key names (`ref` and `trans` are accepted as aliases when
//! reading).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const UNK_INDEX: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub reference: Vec<String>,
    pub translation: Vec<String>,
    /// Per-token negative log likelihood of the translation (natural log).
    pub cost: Option<f64>,
    pub lang_pair: String,
    pub source: String,
    pub beam_rank: Option<u32>,
}

impl SentencePair {
    pub fn new(reference: Vec<String>, translation: Vec<String>) -> Self {
        SentencePair {
            reference,
            translation,
            cost: None,
            lang_pair: String::new(),
            source: String::new(),
            beam_rank: None,
        }
    }

    /// Checks the load-time invariants, returning the reason for rejection.
    pub fn validate(&self) -> std::result::Result<(), &'static str> {
        if self.reference.is_empty() {
            return Err("empty_reference");
        }
        if self.translation.is_empty() {
            return Err("empty_translation");
        }
        if let Some(c) = self.cost {
            if !c.is_finite() || c < 0.0 {
                return Err("invalid_cost");
            }
        }
        Ok(())
    }

    /// `(lang_pair, source)` grouping key used by the per-dataset reports.
    pub fn group_key(&self) -> (String, String) {
        (self.lang_pair.clone(), self.source.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairCorpus {
    pub pairs: Vec<SentencePair>,
}

impl PairCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> Self {
        PairCorpus { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SentencePair> {
        self.pairs.iter()
    }
}

impl FromIterator<SentencePair> for PairCorpus {
    fn from_iter<I: IntoIterator<Item = SentencePair>>(iter: I) -> Self {
        PairCorpus {
            pairs: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    /// Split on runs of Unicode whitespace.
    Whitespace,
    /// Input is already tokenized and separated by single spaces.
    Pretokenized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub mode: TokenizeMode,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: false,
            mode: TokenizeMode::Whitespace,
        }
    }
}

pub fn tokenize(text: &str, tok: &TokenizerConfig) -> Vec<String> {
    let normalize = |t: &str| {
        if tok.lowercase {
            t.to_lowercase()
        } else {
            t.to_string()
        }
    };
    match tok.mode {
        TokenizeMode::Whitespace => text.split_whitespace().map(normalize).collect(),
        TokenizeMode::Pretokenized => text
            .trim_end_matches(['\n', '\r'])
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(normalize)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::arg(format!("unknown corpus format '{other}'"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Tsv => "tsv",
            CorpusFormat::Jsonl => "jsonl",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub kept: usize,
    pub skipped: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl LoadReport {
    fn skip(&mut self, reason: &str) {
        self.skipped += 1;
        *self.reasons.entry(reason.to_string()).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub tok: TokenizerConfig,
    /// Malformed records are an error instead of being skipped.
    pub strict: bool,
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    #[serde(alias = "ref")]
    reference: String,
    #[serde(alias = "trans")]
    translation: String,
    #[serde(default)]
    cost: Option<f64>,
    #[serde(default)]
    lang_pair: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    beam_rank: Option<u32>,
}

#[derive(Serialize)]
struct JsonRecordOut<'a> {
    reference: String,
    translation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost: Option<f64>,
    lang_pair: &'a str,
    source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    beam_rank: Option<u32>,
}

fn parse_tsv_line(line: &str, lineno: usize, tok: &TokenizerConfig) -> Result<SentencePair> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 2 {
        return Err(Error::Parse {
            line: lineno,
            msg: "expected at least reference and translation columns".into(),
        });
    }
    if cols.len() > 6 {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected at most 6 columns, found {}", cols.len()),
        });
    }
    let opt = |i: usize| cols.get(i).map(|s| s.trim()).filter(|s| !s.is_empty());
    let cost = match opt(2) {
        Some(s) => Some(s.parse::<f64>().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad cost '{s}': {e}"),
        })?),
        None => None,
    };
    let beam_rank = match opt(5) {
        Some(s) => Some(s.parse::<u32>().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad beam_rank '{s}': {e}"),
        })?),
        None => None,
    };
    Ok(SentencePair {
        reference: tokenize(cols[0], tok),
        translation: tokenize(cols[1], tok),
        cost,
        lang_pair: opt(3).unwrap_or_default().to_string(),
        source: opt(4).unwrap_or_default().to_string(),
        beam_rank,
    })
}

fn parse_json_line(line: &str, lineno: usize, tok: &TokenizerConfig) -> Result<SentencePair> {
    let rec: JsonRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        msg: e.to_string(),
    })?;
    Ok(SentencePair {
        reference: tokenize(&rec.reference, tok),
        translation: tokenize(&rec.translation, tok),
        cost: rec.cost,
        lang_pair: rec.lang_pair.unwrap_or_default(),
        source: rec.source.unwrap_or_default(),
        beam_rank: rec.beam_rank,
    })
}

/// Parses pair records from a reader. Blank lines are ignored.
pub fn read_pairs<R: BufRead>(
    reader: R,
    format: CorpusFormat,
    opts: &LoadOptions,
) -> Result<(PairCorpus, LoadReport)> {
    let mut report = LoadReport::default();
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            CorpusFormat::Tsv => parse_tsv_line(line, lineno, &opts.tok),
            CorpusFormat::Jsonl => parse_json_line(line, lineno, &opts.tok),
        };
        let pair = match parsed {
            Ok(p) => p,
            Err(e) if opts.strict => return Err(e),
            Err(e) => {
                log::debug!("skipping malformed record: {e}");
                report.skip("malformed");
                continue;
            }
        };
        match pair.validate() {
            Ok(()) => {
                report.kept += 1;
                pairs.push(pair);
            }
            Err(reason) => report.skip(reason),
        }
    }
    Ok((PairCorpus { pairs }, report))
}

pub fn load_pairs(
    path: &Path,
    format: CorpusFormat,
    opts: &LoadOptions,
) -> Result<(PairCorpus, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(BufReader::new(file), format, opts)
}

pub fn write_pairs<W: Write>(mut w: W, corpus: &PairCorpus, format: CorpusFormat) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    for p in &corpus.pairs {
        match format {
            CorpusFormat::Tsv => {
                let cost = p.cost.map(|c| c.to_string()).unwrap_or_default();
                let rank = p.beam_rank.map(|r| r.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    p.reference.join(" "),
                    p.translation.join(" "),
                    cost,
                    p.lang_pair,
                    p.source,
                    rank
                )
                .map_err(io)?;
            }
            CorpusFormat::Jsonl => {
                serde_json::to_writer(&mut w, &pair_to_json(p))?;
                writeln!(w).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

fn pair_to_json(p: &SentencePair) -> JsonRecordOut<'_> {
    JsonRecordOut {
        reference: p.reference.join(" "),
        translation: p.translation.join(" "),
        cost: p.cost,
        lang_pair: &p.lang_pair,
        source: &p.source,
        beam_rank: p.beam_rank,
    }
}

/// JSON object for one pair, in the same shape as a JSONL corpus line.
pub fn pair_json_value(p: &SentencePair) -> serde_json::Value {
    serde_json::to_value(pair_to_json(p)).expect("pair record serializes")
}

pub fn save_pairs(path: &Path, corpus: &PairCorpus, format: CorpusFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pairs(BufWriter::new(file), corpus, format)
}

/// Token vocabulary with `<unk>` reserved at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list. `<unk>` is inserted at
    /// index 0 if absent; duplicates are rejected.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: vec![UNK.to_string()],
            index: HashMap::from([(UNK.to_string(), UNK_INDEX)]),
        };
        for (i, t) in tokens.into_iter().enumerate() {
            let t = t.into();
            if t == UNK {
                if i == 0 {
                    continue;
                }
                return Err(Error::arg("<unk> must be the first vocabulary entry"));
            }
            if vocab.index.contains_key(&t) {
                return Err(Error::arg(format!("duplicate vocabulary token '{t}'")));
            }
            vocab.index.insert(t.clone(), vocab.tokens.len());
            vocab.tokens.push(t);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or of `<unk>` when the token is unknown.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// Vocabulary over both sides of the corpus; indices follow descending count,
/// then lexicographic order.
pub fn build_vocab(corpus: &PairCorpus, min_count: usize) -> Result<Vocabulary> {
    build_vocab_from_sentences(
        corpus
            .pairs
            .iter()
            .flat_map(|p| [p.reference.as_slice(), p.translation.as_slice()]),
        min_count,
    )
}

pub fn build_vocab_from_sentences<'a, I>(sentences: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if min_count < 1 {
        return Err(Error::arg("min_count must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sent in sentences {
        for t in sent {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != UNK)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t))
}

/// Uniform sample of `n` pairs without replacement, seed-deterministic.
pub fn sample_fixed(corpus: &PairCorpus, n: usize, seed: u64) -> Result<PairCorpus> {
    if n > corpus.len() {
        return Err(Error::Size {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut rng);
    Ok(idx[..n]
        .iter()
        .map(|&i| corpus.pairs[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn load_str(s: &str, format: CorpusFormat) -> (PairCorpus, LoadReport) {
        read_pairs(s.as_bytes(), format, &LoadOptions::default()).unwrap()
    }

    #[test]
    fn jsonl_aliases_and_cost() {
        let (c, r) = load_str(r#"{"ref":"a b","trans":"a c","cost":0.5}"#, CorpusFormat::Jsonl);
        assert_eq!(r.kept, 1);
        assert_eq!(c.pairs[0].reference, toks("a b"));
        assert_eq!(c.pairs[0].translation, toks("a c"));
        assert_eq!(c.pairs[0].cost, Some(0.5));
    }

    #[test]
    fn tsv_without_cost() {
        let (c, _) = load_str("a b\ta c\n", CorpusFormat::Tsv);
        assert_eq!(c.pairs[0].cost, None);
        assert_eq!(c.pairs[0].translation, toks("a c"));
    }

    #[test]
    fn empty_translation_is_skipped() {
        let (c, r) = load_str("a b\t\nx\ty\n", CorpusFormat::Tsv);
        assert_eq!(c.len(), 1);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.reasons["empty_translation"], 1);
    }

    #[test]
    fn negative_cost_is_skipped() {
        let (c, r) = load_str(r#"{"reference":"a","translation":"b","cost":-1}"#, CorpusFormat::Jsonl);
        assert!(c.is_empty());
        assert_eq!(r.reasons["invalid_cost"], 1);
    }

    #[test]
    fn strict_mode_reports_line_number() {
        let data = "a\tb\nnot json here\n";
        let err = read_pairs(
            "{\"ref\":\"a\",\"trans\":\"b\"}\n{oops\n".as_bytes(),
            CorpusFormat::Jsonl,
            &LoadOptions {
                strict: true,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        // lenient mode counts it instead
        let (_, r) = load_str(data, CorpusFormat::Jsonl);
        assert_eq!(r.reasons["malformed"], 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_pairs(
            Path::new("/nonexistent/pairs.tsv"),
            CorpusFormat::Tsv,
            &LoadOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn tokenize_examples() {
        let lc = TokenizerConfig {
            lowercase: true,
            ..Default::default()
        };
        assert_eq!(tokenize("The  cat", &lc), toks("the cat"));
        assert!(tokenize("", &lc).is_empty());
        assert_eq!(tokenize("a\tb c", &TokenizerConfig::default()), toks("a b c"));
        let pre = TokenizerConfig {
            lowercase: false,
            mode: TokenizeMode::Pretokenized,
        };
        assert_eq!(tokenize("a  b", &pre), toks("a b"));
    }

    #[test]
    fn vocab_examples() {
        let c = PairCorpus::new(vec![SentencePair::new(toks("a a"), toks("b"))]);
        let v = build_vocab(&c, 1).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "a", "b"]);
        let v = build_vocab(&c, 2).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "a"]);
        let v = build_vocab(&PairCorpus::default(), 1).unwrap();
        assert_eq!(v.tokens(), &["<unk>"]);
        assert_eq!(v.lookup("zzz"), UNK_INDEX);
        assert!(build_vocab(&c, 0).is_err());
    }

    #[test]
    fn vocab_ties_break_lexicographically() {
        let c = PairCorpus::new(vec![SentencePair::new(toks("c b a c"), toks("b a"))]);
        let v = build_vocab(&c, 1).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "a", "b", "c"]);
    }

    fn synthetic(n: usize) -> PairCorpus {
        (0..n)
            .map(|i| SentencePair::new(vec![format!("r{i}")], vec![format!("t{i}")]))
            .collect()
    }

    #[test]
    fn sample_fixed_examples() {
        let c = synthetic(10);
        let all = sample_fixed(&c, 10, 1).unwrap();
        let mut a: Vec<_> = all.pairs.iter().map(|p| p.reference[0].clone()).collect();
        let mut b: Vec<_> = c.pairs.iter().map(|p| p.reference[0].clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(sample_fixed(&c, 0, 1).unwrap().is_empty());
        assert_eq!(sample_fixed(&c, 3, 7).unwrap(), sample_fixed(&c, 3, 7).unwrap());
        assert!(matches!(
            sample_fixed(&c, 11, 1),
            Err(Error::Size {
                requested: 11,
                available: 10
            })
        ));
    }

    fn arb_token() -> impl Strategy<Value = String> {
        "[a-zé<>.,]{1,6}"
    }

    fn arb_pair() -> impl Strategy<Value = SentencePair> {
        (
            prop::collection::vec(arb_token(), 1..6),
            prop::collection::vec(arb_token(), 1..6),
            prop::option::of(0.0f64..50.0),
            "[a-z]{0,2}(-[a-z]{2})?",
            "[A-Za-z]{0,4}",
            prop::option::of(0u32..50),
        )
            .prop_map(|(r, t, cost, lang_pair, source, beam_rank)| SentencePair {
                reference: r,
                translation: t,
                cost,
                lang_pair,
                source,
                beam_rank,
            })
    }

    proptest! {
        #[test]
        fn roundtrip_both_formats(pairs in prop::collection::vec(arb_pair(), 0..8)) {
            let corpus = PairCorpus::new(pairs);
            for format in [CorpusFormat::Tsv, CorpusFormat::Jsonl] {
                let mut buf = Vec::new();
                write_pairs(&mut buf, &corpus, format).unwrap();
                let (back, report) = read_pairs(
                    buf.as_slice(),
                    format,
                    &LoadOptions { strict: true, ..Default::default() },
                ).unwrap();
                prop_assert_eq!(report.skipped, 0);
                prop_assert_eq!(&back, &corpus);
            }
        }

        #[test]
        fn sample_is_sub_multiset(n in 0usize..12, seed in any::<u64>()) {
            let c = synthetic(12);
            let s = sample_fixed(&c, n, seed).unwrap();
            prop_assert_eq!(s.len(), n);
            let mut seen = std::collections::HashSet::new();
            for p in &s.pairs {
                prop_assert!(c.pairs.contains(p));
                prop_assert!(seen.insert(p.reference.clone()));
            }
        }

        #[test]
        fn vocab_indices_contiguous(pairs in prop::collection::vec(arb_pair(), 0..8), min in 1usize..3) {
            let v = build_vocab(&PairCorpus::new(pairs), min).unwrap();
            for (i, t) in v.tokens().iter().enumerate() {
                prop_assert_eq!(v.get(t), Some(i));
            }
            prop_assert_eq!(v.token(UNK_INDEX), UNK);
        }

        #[test]
        fn tokenize_idempotent(text in "[ a-zA-Z\t]{0,20}", lowercase in any::<bool>()) {
            let cfg = TokenizerConfig { lowercase, mode: TokenizeMode::Whitespace };
            let once = tokenize(&text, &cfg);
            let twice = tokenize(&once.join(" "), &cfg);
            prop_assert_eq!(once, twice);
        }
    }
}
