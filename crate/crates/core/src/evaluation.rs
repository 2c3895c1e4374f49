//! Correlation statistics and the STS evaluation harness.
//!
//! STS files are TSV with three columns: sentence 1, sentence 2 and a gold
//! similarity in [0, 5]. A model is scored per file by the Pearson correlation
//! between its cosine similarities and the gold scores; files are combined by
//! an unweighted mean.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenizerConfig};
use crate::embedder::{cosine, SentenceEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsItem {
    pub sentence1: Vec<String>,
    pub sentence2: Vec<String>,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsFile {
    pub name: String,
    pub items: Vec<StsItem>,
}

impl StsFile {
    pub fn read<R: BufRead>(name: &str, reader: R, tok: &TokenizerConfig) -> Result<Self> {
        let mut items = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            }
            let gold: f64 = cols[2].trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad gold score '{}'", cols[2]),
            })?;
            if !(0.0..=5.0).contains(&gold) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("gold score {gold} outside [0, 5]"),
                });
            }
            let s1 = tokenize(cols[0], tok);
            let s2 = tokenize(cols[1], tok);
            if s1.is_empty() || s2.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "empty sentence".into(),
                });
            }
            items.push(StsItem {
                sentence1: s1,
                sentence2: s2,
                gold,
            });
        }
        if items.is_empty() {
            return Err(Error::arg(format!("STS file '{name}' is empty")));
        }
        Ok(StsFile {
            name: name.to_string(),
            items,
        })
    }

    pub fn load(path: &Path, tok: &TokenizerConfig) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::read(&name, BufReader::new(f), tok)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for it in &self.items {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                it.sentence1.join(" "),
                it.sentence2.join(" "),
                it.gold
            ));
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::arg(format!(
            "correlation of sequences with lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::arg("correlation needs at least two points"));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::arg("correlation of sequences with different lengths"));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileScore {
    pub name: String,
    pub items: usize,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsReport {
    pub files: Vec<FileScore>,
    /// Files whose gold scores (or predictions) have no variance.
    pub excluded: Vec<String>,
    pub average: f64,
}

impl StsReport {
    /// One row per file plus an AVERAGE row; values are r × 100 with one decimal.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("file\titems\tpearson_x100\n");
        for f in &self.files {
            out.push_str(&format!("{}\t{}\t{:.1}\n", f.name, f.items, f.pearson * 100.0));
        }
        let n: usize = self.files.iter().map(|f| f.items).sum();
        out.push_str(&format!("AVERAGE\t{}\t{:.1}\n", n, self.average * 100.0));
        out
    }
}

/// Cosine predictions for every item of a file.
pub fn predict<E: SentenceEncoder + ?Sized>(model: &E, file: &StsFile) -> Result<Vec<f64>> {
    file.items
        .iter()
        .map(|it| {
            let a = model.encode(&it.sentence1)?;
            let b = model.encode(&it.sentence2)?;
            Ok(cosine(&a.0, &b.0))
        })
        .collect()
}

/// Pearson r per file and the unweighted mean across files.
pub fn sts_evaluate<E: SentenceEncoder + ?Sized>(model: &E, files: &[StsFile]) -> Result<StsReport> {
    if files.is_empty() {
        return Err(Error::arg("no STS files to evaluate"));
    }
    let results: Vec<Result<Option<FileScore>>> = files
        .par_iter()
        .map(|f| {
            let preds = predict(model, f)?;
            let gold: Vec<f64> = f.items.iter().map(|i| i.gold).collect();
            match pearson(&preds, &gold) {
                Ok(r) => Ok(Some(FileScore {
                    name: f.name.clone(),
                    items: f.items.len(),
                    pearson: r,
                })),
                Err(Error::UndefinedCorrelation(msg)) => {
                    log::warn!("excluding STS file {}: {msg}", f.name);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut scores = Vec::new();
    let mut excluded = Vec::new();
    for (f, r) in files.iter().zip(results) {
        match r? {
            Some(s) => scores.push(s),
            None => excluded.push(f.name.clone()),
        }
    }
    if scores.is_empty() {
        return Err(Error::UndefinedCorrelation(
            "every STS file has zero variance".into(),
        ));
    }
    let average = scores.iter().map(|s| s.pearson).sum::<f64>() / scores.len() as f64;
    Ok(StsReport {
        files: scores,
        excluded,
        average,
    })
}
