//! Versioned checkpoint container shared by the sentence encoder and the
//! reference classifier.
//!
//! Layout: one magic line `PARAMINE-CHECKPOINT v<version>`, then a single
//! JSON object. Serialization is deterministic, so equal states give
//! byte-identical files.
//!
//! The container stores W_w and a SHA-256 digest of W_w_initial, not the
//! initial matrix itself. A loaded model therefore takes its current weights
//! as the new initial point; [`Checkpoint::verify_initial`] checks that an
//! externally restored initial matrix is the one training started from.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::embedder::{EmbeddingMatrix, GranParams, LstmParams, ModelKind, ParaModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::Adam;
use crate::refclass::{Classifier, EncoderKind};

pub const MAGIC: &str = "PARAMINE-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSection {
    pub kind: ModelKind,
    pub gran: Option<GranParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSection {
    pub encoder: EncoderKind,
    pub lstm: Option<LstmParams>,
    /// 2 × D; row 1 is the reference logit.
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Echo of the run configuration.
    pub config: serde_json::Value,
    pub vocab: Vec<String>,
    pub embeddings: Matrix,
    /// Hex SHA-256 of W_w_initial.
    pub initial_digest: String,
    pub encoder: Option<EncoderSection>,
    pub classifier: Option<ClassifierSection>,
    pub adam: Option<Adam>,
    pub epoch: usize,
}

/// Hex SHA-256 over the shape (u64 little-endian) and the f64 bit patterns.
pub fn matrix_digest(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.rows as u64).to_le_bytes());
    h.update((m.cols as u64).to_le_bytes());
    for x in &m.data {
        h.update(x.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Hex SHA-256 of a byte stream.
pub fn bytes_digest<R: Read>(mut r: R) -> std::io::Result<String> {
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    bytes_digest(BufReader::new(f)).map_err(|e| Error::io(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    fn base(emb: &EmbeddingMatrix, config: serde_json::Value, adam: Option<&Adam>, epoch: usize) -> Self {
        Checkpoint {
            version: VERSION,
            config,
            vocab: emb.vocab().tokens().to_vec(),
            embeddings: emb.weights.clone(),
            initial_digest: matrix_digest(emb.initial()),
            encoder: None,
            classifier: None,
            adam: adam.cloned(),
            epoch,
        }
    }

    pub fn from_model(
        model: &ParaModel,
        adam: Option<&Adam>,
        epoch: usize,
        config: serde_json::Value,
    ) -> Self {
        let mut c = Self::base(&model.emb, config, adam, epoch);
        c.encoder = Some(EncoderSection {
            kind: model.kind,
            gran: model.gran.clone(),
        });
        c
    }

    pub fn from_classifier(
        clf: &Classifier,
        adam: Option<&Adam>,
        epoch: usize,
        config: serde_json::Value,
    ) -> Self {
        let mut c = Self::base(&clf.emb, config, adam, epoch);
        c.classifier = Some(ClassifierSection {
            encoder: clf.encoder,
            lstm: clf.lstm.clone(),
            w_out: clf.w_out.clone(),
            b_out: clf.b_out.clone(),
        });
        c
    }

    fn embedding(&self) -> Result<EmbeddingMatrix> {
        let vocab = Vocabulary::from_tokens(self.vocab.iter().cloned())
            .map_err(|e| bad(format!("vocabulary: {e}")))?;
        if self.embeddings.data.len() != self.embeddings.rows * self.embeddings.cols {
            return Err(bad("embedding data length does not match its shape"));
        }
        EmbeddingMatrix::new(vocab, self.embeddings.clone()).map_err(|e| bad(e.to_string()))
    }

    pub fn to_model(&self) -> Result<ParaModel> {
        let sec = self
            .encoder
            .as_ref()
            .ok_or_else(|| bad("no sentence-encoder section"))?;
        let emb = self.embedding()?;
        match (sec.kind, &sec.gran) {
            (ModelKind::Avg, None) => Ok(ParaModel::avg(emb)),
            (ModelKind::Gran, Some(p)) => {
                ParaModel::gran(emb, p.clone()).map_err(|e| bad(e.to_string()))
            }
            _ => Err(bad("model kind does not match its parameters")),
        }
    }

    pub fn to_classifier(&self) -> Result<Classifier> {
        let sec = self
            .classifier
            .as_ref()
            .ok_or_else(|| bad("no classifier section"))?;
        let c = Classifier {
            encoder: sec.encoder,
            emb: self.embedding()?,
            lstm: sec.lstm.clone(),
            w_out: sec.w_out.clone(),
            b_out: sec.b_out.clone(),
        };
        c.check_shapes().map_err(|e| bad(e.to_string()))?;
        Ok(c)
    }

    /// Whether `initial` is the matrix training started from.
    pub fn verify_initial(&self, initial: &Matrix) -> bool {
        matrix_digest(initial) == self.initial_digest
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let json = serde_json::to_string(self)?;
        writeln!(w, "{MAGIC} v{}", self.version).and_then(|_| {
            w.write_all(json.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()
        })
        .map_err(|e| bad(format!("write failed: {e}")))
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|e| bad(format!("read failed: {e}")))?;
        let version = header
            .trim_end()
            .strip_prefix(MAGIC)
            .and_then(|rest| rest.strip_prefix(" v"))
            .ok_or_else(|| bad("missing checkpoint header"))?;
        let version: u32 = version
            .parse()
            .map_err(|_| bad(format!("bad checkpoint version '{version}'")))?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let c: Checkpoint = serde_json::from_reader(r)?;
        if c.version != version {
            return Err(bad("header and body versions differ"));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}
