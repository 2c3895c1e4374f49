//! Sentence and corpus n-gram statistics.
//!
//! Everything here is a pure function of token sequences: n-gram counts,
//! Shannon entropy, within-sentence repetition, IDF, clipped n-gram overlap
//! and an add-one smoothed sentence BLEU.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PairCorpus;
use crate::error::{Error, Result};

/// Highest n-gram order used by [`smoothed_bleu`].
pub const BLEU_MAX_ORDER: usize = 4;
/// Default minimum token length for unigram repetition.
pub const REPETITION_MIN_CHARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramCounts<'a> {
    order: usize,
    counts: HashMap<&'a [String], usize>,
    total: usize,
}

impl<'a> NgramCounts<'a> {
    pub fn new(order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::arg("n-gram order must be at least 1"));
        }
        Ok(NgramCounts {
            order,
            counts: HashMap::new(),
            total: 0,
        })
    }

    /// Adds every contiguous n-gram of `tokens`.
    pub fn add(&mut self, tokens: &'a [String]) {
        for g in tokens.windows(self.order) {
            *self.counts.entry(g).or_insert(0) += 1;
            self.total += 1;
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn num_types(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [String], usize)> + '_ {
        self.counts.iter().map(|(g, c)| (*g, *c))
    }
}

pub fn ngram_counts(tokens: &[String], n: usize) -> Result<NgramCounts<'_>> {
    let mut c = NgramCounts::new(n)?;
    c.add(tokens);
    Ok(c)
}

/// Entropy in bits of the empirical n-gram distribution; 0 for empty counts.
pub fn entropy(counts: &NgramCounts<'_>) -> f64 {
    entropy_of_counts(counts.counts.values().copied())
}

/// Sums in sorted count order so the result does not depend on hash order.
fn entropy_of_counts(counts: impl Iterator<Item = usize>) -> f64 {
    let mut counts: Vec<usize> = counts.filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Fraction of items that already appeared earlier in the sentence.
///
/// For unigrams only tokens with at least `min_chars` characters are
/// considered; higher orders use every n-gram.
pub fn repetition_rate(tokens: &[String], n: usize, min_chars: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut seen: HashSet<&[String]> = HashSet::new();
    let mut items = 0usize;
    let mut repeats = 0usize;
    for g in tokens.windows(n) {
        if n == 1 && g[0].chars().count() < min_chars {
            continue;
        }
        items += 1;
        if !seen.insert(g) {
            repeats += 1;
        }
    }
    if items == 0 {
        0.0
    } else {
        repeats as f64 / items as f64
    }
}

/// Repetition rate with the default character threshold for the order.
pub fn default_repetition_rate(tokens: &[String], n: usize) -> f64 {
    let min_chars = if n == 1 { REPETITION_MIN_CHARS } else { 0 };
    repetition_rate(tokens, n, min_chars)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    idf: HashMap<String, f64>,
    num_docs: usize,
}

impl IdfTable {
    /// idf(w) = ln((N+1)/(df(w)+1)) over lowercased tokens.
    pub fn build<S: AsRef<[String]>>(documents: &[S]) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::arg("IDF table needs at least one document"));
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in documents {
            let uniq: HashSet<String> = doc.as_ref().iter().map(|t| t.to_lowercase()).collect();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        Ok(Self::from_document_frequencies(df, documents.len()))
    }

    pub fn from_document_frequencies(df: HashMap<String, usize>, num_docs: usize) -> Self {
        let n1 = (num_docs + 1) as f64;
        let idf = df
            .into_iter()
            .map(|(t, d)| (t, (n1 / (d + 1) as f64).ln()))
            .collect();
        IdfTable { idf, num_docs }
    }

    /// Table with explicit values; used for persistence.
    pub fn from_values(idf: HashMap<String, f64>, num_docs: usize) -> Result<Self> {
        if let Some((t, v)) = idf.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::arg(format!("invalid idf {v} for '{t}'")));
        }
        Ok(IdfTable { idf, num_docs })
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    /// Value for tokens never seen in the background corpus: ln(N+1).
    pub fn default_idf(&self) -> f64 {
        ((self.num_docs + 1) as f64).ln()
    }

    pub fn get(&self, token: &str) -> f64 {
        self.idf
            .get(token)
            .or_else(|| self.idf.get(&token.to_lowercase()))
            .copied()
            .unwrap_or_else(|| self.default_idf())
    }

    /// Entries sorted by token, for deterministic output.
    pub fn sorted_entries(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<_> = self.idf.iter().map(|(t, x)| (t.as_str(), *x)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// `#num_docs\tN` header, then one `token\tidf` line per entry in token order.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#num_docs\t{}\n", self.num_docs);
        for (t, x) in self.sorted_entries() {
            out.push_str(&format!("{t}\t{x}\n"));
        }
        out
    }

    pub fn read_tsv<R: std::io::BufRead>(reader: R) -> Result<Self> {
        let mut num_docs = None;
        let mut idf = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: lineno,
                msg: msg.to_string(),
            };
            let (k, v) = line.split_once('\t').ok_or_else(|| bad("expected two tab-separated columns"))?;
            if lineno == 1 && k == "#num_docs" {
                num_docs = Some(v.parse::<usize>().map_err(|_| bad("bad document count"))?);
                continue;
            }
            let x: f64 = v.parse().map_err(|_| bad("bad idf value"))?;
            if idf.insert(k.to_string(), x).is_some() {
                return Err(bad("duplicate token"));
            }
        }
        let n = num_docs.ok_or_else(|| Error::Parse {
            line: 1,
            msg: "missing #num_docs header".into(),
        })?;
        Self::from_values(idf, n)
    }
}

pub fn build_idf<S: AsRef<[String]>>(documents: &[S]) -> Result<IdfTable> {
    IdfTable::build(documents)
}

pub fn avg_idf(tokens: &[String], idf: &IdfTable) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::arg("average IDF of an empty sentence"));
    }
    Ok(tokens.iter().map(|t| idf.get(t)).sum::<f64>() / tokens.len() as f64)
}

/// Clipped shared n-gram count over the smaller side's n-gram total.
pub fn ngram_overlap(reference: &[String], translation: &[String], n: usize) -> f64 {
    let (Ok(r), Ok(t)) = (ngram_counts(reference, n), ngram_counts(translation, n)) else {
        return 0.0;
    };
    let denom = r.total().min(t.total());
    if denom == 0 {
        return 0.0;
    }
    let shared: usize = r.iter().map(|(g, c)| c.min(t.get(g))).sum();
    shared as f64 / denom as f64
}

/// Sentence BLEU with add-one smoothing on every precision and on the brevity
/// penalty:
///
/// `p_n = (m_n + 1) / (c_n + 1)` for n = 1..4,
/// `BP = min(1, exp(1 - (r + 1) / (c + 1)))`,
/// `score = BP * exp(mean(ln p_n))`.
pub fn smoothed_bleu(reference: &[String], translation: &[String]) -> Result<f64> {
    if reference.is_empty() || translation.is_empty() {
        return Err(Error::arg("BLEU needs nonempty reference and translation"));
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let r = ngram_counts(reference, n)?;
        let t = ngram_counts(translation, n)?;
        let matches: usize = t.iter().map(|(g, c)| c.min(r.get(g))).sum();
        log_sum += ((matches + 1) as f64 / (t.total() + 1) as f64).ln();
    }
    let r = reference.len() as f64;
    let c = translation.len() as f64;
    let bp = (1.0 - (r + 1.0) / (c + 1.0)).exp().min(1.0);
    Ok(bp * (log_sum / BLEU_MAX_ORDER as f64).exp())
}

/// One row of the reference-minus-translation statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub lang: String,
    pub source: String,
    pub pairs: usize,
    pub ent_uni: f64,
    pub ent_tri: f64,
    /// Fractions, not percentages.
    pub rep_uni: f64,
    pub rep_tri: f64,
}

/// Name used for the pooled row over the whole corpus.
pub const ALL_GROUP: &str = "All";

#[derive(Debug, Default)]
struct SideStats {
    ent_uni: f64,
    ent_tri: f64,
    rep_uni: f64,
    rep_tri: f64,
}

fn side_stats<'a>(sentences: &[&'a [String]]) -> SideStats {
    let mut uni = NgramCounts::new(1).expect("order 1");
    let mut tri = NgramCounts::new(3).expect("order 3");
    for s in sentences {
        uni.add(s);
        tri.add(s);
    }
    let reps: Vec<(f64, f64)> = sentences
        .par_iter()
        .map(|s| (default_repetition_rate(s, 1), default_repetition_rate(s, 3)))
        .collect();
    let n = sentences.len().max(1) as f64;
    SideStats {
        ent_uni: entropy(&uni),
        ent_tri: entropy(&tri),
        rep_uni: reps.iter().map(|r| r.0).sum::<f64>() / n,
        rep_tri: reps.iter().map(|r| r.1).sum::<f64>() / n,
    }
}

fn diff_row(lang: &str, source: &str, refs: &[&[String]], trans: &[&[String]]) -> DiffRow {
    let r = side_stats(refs);
    let t = side_stats(trans);
    DiffRow {
        lang: lang.to_string(),
        source: source.to_string(),
        pairs: refs.len(),
        ent_uni: r.ent_uni - t.ent_uni,
        ent_tri: r.ent_tri - t.ent_tri,
        rep_uni: r.rep_uni - t.rep_uni,
        rep_tri: r.rep_tri - t.rep_tri,
    }
}

/// Per-(lang, source) differences, reference statistic minus translation
/// statistic, followed by a pooled row over all pairs. Entropies pool n-gram
/// counts across the group; repetition is the mean per-sentence rate.
pub fn corpus_diff_report(corpus: &PairCorpus) -> Result<Vec<DiffRow>> {
    if corpus.is_empty() {
        return Err(Error::arg("statistics of an empty corpus"));
    }
    let mut groups: BTreeMap<(String, String), (Vec<&[String]>, Vec<&[String]>)> = BTreeMap::new();
    for p in &corpus.pairs {
        let g = groups.entry(p.group_key()).or_default();
        g.0.push(&p.reference);
        g.1.push(&p.translation);
    }
    let mut rows: Vec<DiffRow> = groups
        .iter()
        .map(|((lang, source), (r, t))| diff_row(lang, source, r, t))
        .collect();
    let all_r: Vec<&[String]> = corpus.pairs.iter().map(|p| p.reference.as_slice()).collect();
    let all_t: Vec<&[String]> = corpus.pairs.iter().map(|p| p.translation.as_slice()).collect();
    rows.push(diff_row(ALL_GROUP, "", &all_r, &all_t));
    Ok(rows)
}

/// TSV rendering: entropies in bits, repetition deltas in percent.
pub fn diff_report_tsv(rows: &[DiffRow]) -> String {
    let mut out = String::from("lang\tsource\tpairs\tent_uni\tent_tri\trep_uni\trep_tri\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.2}%\t{:.2}%\n",
            r.lang,
            r.source,
            r.pairs,
            r.ent_uni,
            r.ent_tri,
            r.rep_uni * 100.0,
            r.rep_tri * 100.0
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn counts_examples() {
        let s = toks("a b a");
        let c = ngram_counts(&s, 1).unwrap();
        assert_eq!((c.get(&toks("a")), c.get(&toks("b")), c.total()), (2, 1, 3));
        let c = ngram_counts(&s, 2).unwrap();
        assert_eq!((c.get(&toks("a b")), c.get(&toks("b a")), c.total()), (1, 1, 2));
        let short = toks("a");
        let c = ngram_counts(&short, 3).unwrap();
        assert_eq!((c.num_types(), c.total()), (0, 0));
        assert!(ngram_counts(&s, 0).is_err());
    }

    #[test]
    fn entropy_examples() {
        let s = toks("a b c d");
        assert!(close(entropy(&ngram_counts(&s, 1).unwrap()), 2.0));
        let s = toks("a a a a a");
        assert!(close(entropy(&ngram_counts(&s, 1).unwrap()), 0.0));
        let s = toks("a a b c");
        assert!(close(entropy(&ngram_counts(&s, 1).unwrap()), 1.5));
        assert_eq!(entropy(&NgramCounts::new(2).unwrap()), 0.0);
    }

    #[test]
    fn entropy_is_bitwise_stable_across_rebuilds() {
        let s: Vec<String> = (0..400).map(|i| format!("w{}", (i * 7919) % 97 % (i % 13 + 1))).collect();
        let first = entropy(&ngram_counts(&s, 1).unwrap());
        for _ in 0..20 {
            assert_eq!(entropy(&ngram_counts(&s, 1).unwrap()).to_bits(), first.to_bits());
        }
    }

    #[test]
    fn repetition_examples() {
        assert!(close(repetition_rate(&toks("cat dog fox"), 1, 3), 0.0));
        assert!(close(repetition_rate(&toks("nice nice nice"), 1, 3), 2.0 / 3.0));
        let s = toks(
            "the staff were very nice and the room was very nice and the staff were very nice .",
        );
        assert!(close(repetition_rate(&s, 1, 3), 9.0 / 17.0));
        assert_eq!(repetition_rate(&toks("a b"), 1, 3), 0.0);
    }

    #[test]
    fn idf_tsv_round_trips() {
        let docs = vec![toks("a b"), toks("b c c"), toks("D")];
        let t = build_idf(&docs).unwrap();
        let back = IdfTable::read_tsv(t.to_tsv().as_bytes()).unwrap();
        assert_eq!(back, t);
        assert!(IdfTable::read_tsv(&b"a\t1.0\n"[..]).is_err());
        assert!(IdfTable::read_tsv(&b"#num_docs\t2\na\t-1\n"[..]).is_err());
    }

    #[test]
    fn idf_examples() {
        let docs = vec![toks("rare common"), toks("common"), toks("common x")];
        let t = build_idf(&docs).unwrap();
        assert!(close(t.get("rare"), (4.0f64 / 2.0).ln()));
        assert!(close(t.get("common"), 0.0));
        assert!(close(t.get("unseen"), 4.0f64.ln()));
        let one = build_idf(&[toks("w")]).unwrap();
        assert!(close(one.get("w"), 0.0));
        let docs: Vec<_> = (0..4).map(|_| toks("w")).collect();
        assert!(close(build_idf(&docs).unwrap().get("w"), 0.0));
        assert!(build_idf::<Vec<String>>(&[]).is_err());
        // lowercased before counting
        let t = build_idf(&[toks("Rare"), toks("x")]).unwrap();
        assert!(close(t.get("rare"), (3.0f64 / 2.0).ln()));
    }

    #[test]
    fn avg_idf_examples() {
        let mut m = HashMap::new();
        m.insert("a".to_string(), 2.0);
        m.insert("b".to_string(), 2.0);
        let t = IdfTable::from_values(m, 5).unwrap();
        assert!(close(avg_idf(&toks("a b a"), &t).unwrap(), 2.0));
        let mut m = HashMap::new();
        m.insert("a".to_string(), 1.0);
        m.insert("b".to_string(), 3.0);
        let t = IdfTable::from_values(m, 5).unwrap();
        assert!(close(avg_idf(&toks("a b"), &t).unwrap(), 2.0));
        assert!(avg_idf(&[], &t).is_err());
    }

    #[test]
    fn overlap_examples() {
        let s = toks("a b c a");
        for n in 1..=4 {
            assert!(close(ngram_overlap(&s, &s, n), 1.0));
        }
        assert_eq!(ngram_overlap(&toks("a b"), &toks("c d"), 1), 0.0);
        assert!(close(ngram_overlap(&toks("a b c d"), &toks("a b x"), 1), 2.0 / 3.0));
        assert_eq!(ngram_overlap(&toks("a"), &toks("a b"), 2), 0.0);
    }

    #[test]
    fn bleu_examples() {
        let s = toks("the cat sat on the mat");
        assert!(close(smoothed_bleu(&s, &s).unwrap(), 1.0));
        let v = smoothed_bleu(&toks("the cat sat"), &toks("the cat")).unwrap();
        assert!(close(v, (-1.0f64 / 3.0).exp()));
        assert!((v - 0.71653).abs() < 1e-5);
        let v = smoothed_bleu(&toks("a b"), &toks("c d")).unwrap();
        assert!(close(v, (1.0f64 / 6.0).powf(0.25)));
        assert!((v - 0.6389).abs() < 1e-4);
        assert!(smoothed_bleu(&[], &toks("a")).is_err());
    }

    fn group(lang: &str, refs: &[&str], trans: &[&str]) -> Vec<SentencePair> {
        refs.iter()
            .zip(trans)
            .map(|(r, t)| SentencePair {
                lang_pair: lang.into(),
                source: "S".into(),
                ..SentencePair::new(toks(r), toks(t))
            })
            .collect()
    }

    #[test]
    fn diff_report_identical_sides_is_zero() {
        let c = PairCorpus::new(group("cs-en", &["alpha beta beta", "gamma"], &["alpha beta beta", "gamma"]));
        for r in corpus_diff_report(&c).unwrap() {
            assert_eq!((r.ent_uni, r.ent_tri, r.rep_uni, r.rep_tri), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn diff_report_repeating_translations() {
        let c = PairCorpus::new(group(
            "fr-en",
            &["alpha beta gamma", "delta epsilon"],
            &["alpha alpha beta beta gamma gamma", "delta delta epsilon epsilon"],
        ));
        let rows = corpus_diff_report(&c).unwrap();
        assert_eq!(rows.len(), 2);
        // oracle: per-sentence rates are 0 for references and 1/2 for translations
        assert!(close(rows[0].rep_uni, -0.5));
        assert!(rows[0].rep_uni < 0.0);
        assert_eq!(rows[1].lang, ALL_GROUP);
    }

    #[test]
    fn diff_report_doubled_types_gain_one_bit() {
        // references use 8 types uniformly, translations 4
        let c = PairCorpus::new(group(
            "de-en",
            &["aaa bbb ccc ddd", "eee fff ggg hhh"],
            &["aaa bbb ccc ddd", "aaa bbb ccc ddd"],
        ));
        let rows = corpus_diff_report(&c).unwrap();
        assert!(close(rows[0].ent_uni, 1.0));
        assert!(corpus_diff_report(&PairCorpus::default()).is_err());
    }

    fn arb_tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "bb", "ccc", "dddd", "eee"]), 1..max)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn overlap_symmetric(a in arb_tokens(10), b in arb_tokens(10), n in 1usize..4) {
            prop_assert!((ngram_overlap(&a, &b, n) - ngram_overlap(&b, &a, n)).abs() < 1e-15);
            let v = ngram_overlap(&a, &b, n);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn bleu_self_is_one(a in arb_tokens(12)) {
            prop_assert!((smoothed_bleu(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bleu_in_unit_interval(a in arb_tokens(10), b in arb_tokens(10)) {
            let v = smoothed_bleu(&a, &b).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0);
        }

        #[test]
        fn repetition_identity(a in arb_tokens(15), n in 1usize..4) {
            let min_chars = if n == 1 { 3 } else { 0 };
            let items: Vec<&[String]> = a
                .windows(n)
                .filter(|g| n > 1 || g[0].len() >= min_chars)
                .collect();
            let r = repetition_rate(&a, n, min_chars);
            prop_assert!((0.0..=1.0).contains(&r));
            if !items.is_empty() {
                let distinct: HashSet<_> = items.iter().collect();
                let expect = 1.0 - distinct.len() as f64 / items.len() as f64;
                prop_assert!((r - expect).abs() < 1e-12);
            }
        }

        #[test]
        fn entropy_bounded_by_log_types(a in arb_tokens(20)) {
            let c = ngram_counts(&a, 1).unwrap();
            let h = entropy(&c);
            let max = (c.num_types() as f64).log2();
            prop_assert!(h <= max + 1e-12);
            let uniform = c.iter().all(|(_, k)| k == c.total() / c.num_types())
                && c.total() % c.num_types() == 0;
            prop_assert_eq!(uniform, (h - max).abs() < 1e-12);
        }
    }
}
