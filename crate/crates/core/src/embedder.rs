//! Sentence encoders: word averaging (AVG), LSTM, and the gated recurrent
//! averaging network (GRAN).
//!
//! GRAN runs an LSTM over the word vectors `x_t`, gates each word vector with
//! `σ(W_x x_t + W_h h_t + b)` and averages the gated vectors. With a gate that
//! is always open it reduces to AVG.
//!
//! Forward passes can record a trace, and every trace has a matching backward
//! pass that accumulates exact gradients; the trainer and the reference
//! classifier are built on these.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, UNK_INDEX};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, sigmoid, Matrix};

/// Scale of the uniform initialization of word vectors.
pub const EMBEDDING_INIT_SCALE: f64 = 0.1;
/// Scale of the uniform initialization of compositional weights.
pub const COMPOSITION_INIT_SCALE: f64 = 0.05;
/// Norms below this make [`cosine`] return 0.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceVector(pub Vec<f64>);

impl SentenceVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Cosine similarity; 0 when either vector is (numerically) zero.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let nu = norm(u);
    let nv = norm(v);
    if nu < COSINE_EPS || nv < COSINE_EPS {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Gradient of `cosine(u, v)` with respect to `u`, scaled by `scale` and added
/// to `out`. Zero in the guarded region.
pub fn cosine_grad_acc(u: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let nu = norm(u);
    let nv = norm(v);
    if nu < COSINE_EPS || nv < COSINE_EPS || scale == 0.0 {
        return;
    }
    let c = dot(u, v) / (nu * nv);
    let a = scale / (nu * nv);
    let b = scale * c / (nu * nu);
    for ((o, &vi), &ui) in out.iter_mut().zip(v).zip(u) {
        *o += a * vi - b * ui;
    }
}

/// Word vectors read from a text file.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    /// One word per line: the token followed by `dim` decimal values. A first
    /// line made of exactly two integers is taken as a `V d` header.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0
                && fields.len() == 2
                && fields.iter().all(|f| f.parse::<usize>().is_ok())
            {
                dim = Some(fields[1].parse().expect("checked"));
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad vector value: {e}"),
                })?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "non-finite vector value".into(),
                });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            vectors.insert(fields[0].to_string(), values);
        }
        let dim = dim.filter(|&d| d > 0).ok_or_else(|| Error::Parse {
            line: 0,
            msg: "embedding file holds no vectors".into(),
        })?;
        Ok(WordVectors { dim, vectors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }
}

/// Vocabulary-indexed word vectors plus the frozen copy taken at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vocabulary,
    pub weights: Matrix,
    initial: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(vocab: Vocabulary, weights: Matrix) -> Result<Self> {
        if weights.rows != vocab.len() {
            return Err(Error::arg(format!(
                "embedding matrix has {} rows for a vocabulary of {}",
                weights.rows,
                vocab.len()
            )));
        }
        if !weights.is_finite() {
            return Err(Error::arg("embedding matrix has non-finite entries"));
        }
        let initial = weights.clone();
        Ok(EmbeddingMatrix {
            vocab,
            weights,
            initial,
        })
    }

    /// Restores a matrix whose frozen copy differs from the current values.
    pub fn with_initial(vocab: Vocabulary, weights: Matrix, initial: Matrix) -> Result<Self> {
        let mut e = Self::new(vocab, weights)?;
        if initial.rows != e.weights.rows || initial.cols != e.weights.cols {
            return Err(Error::arg("initial embedding matrix shape mismatch"));
        }
        e.initial = initial;
        Ok(e)
    }

    /// Rows come from `pretrained` where available, otherwise uniform in
    /// ±[`EMBEDDING_INIT_SCALE`].
    pub fn init<R: Rng>(
        vocab: Vocabulary,
        dim: usize,
        pretrained: Option<&WordVectors>,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = pretrained.map(|p| p.dim).unwrap_or(dim);
        if dim == 0 {
            return Err(Error::arg("embedding dimension must be positive"));
        }
        let mut w = Matrix::uniform(vocab.len(), dim, EMBEDDING_INIT_SCALE, rng);
        if let Some(p) = pretrained {
            let mut hits = 0;
            for (i, t) in vocab.tokens().iter().enumerate() {
                if let Some(v) = p.vectors.get(t) {
                    w.row_mut(i).copy_from_slice(v);
                    hits += 1;
                }
            }
            log::info!("initialized {hits}/{} rows from pretrained vectors", vocab.len());
        }
        Self::new(vocab, w)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.weights.cols
    }

    pub fn initial(&self) -> &Matrix {
        &self.initial
    }

    pub fn row(&self, index: usize) -> &[f64] {
        self.weights.row(index)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        self.vocab.encode(tokens)
    }

    /// ‖W_w_initial − W_w‖²
    pub fn drift_sq(&self) -> f64 {
        self.weights
            .data
            .iter()
            .zip(&self.initial.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Mean of the embedding rows; unknown tokens use the `<unk>` row.
pub fn embed_avg<S: AsRef<str>>(emb: &EmbeddingMatrix, tokens: &[S]) -> Result<SentenceVector> {
    if tokens.is_empty() {
        return Err(Error::arg("cannot embed an empty sentence"));
    }
    Ok(SentenceVector(avg_ids(emb, &emb.encode(tokens))))
}

pub(crate) fn avg_ids(emb: &EmbeddingMatrix, ids: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; emb.dim()];
    let scale = 1.0 / ids.len() as f64;
    for &i in ids {
        axpy(scale, emb.row(i), &mut out);
    }
    out
}

/// Backward of [`avg_ids`]: adds `grad / T` to every token row.
pub(crate) fn avg_backward(ids: &[usize], grad: &[f64], emb_grad: &mut Matrix) {
    let scale = 1.0 / ids.len() as f64;
    for &i in ids {
        axpy(scale, grad, emb_grad.row_mut(i));
    }
}

/// LSTM weights. The four gate blocks of `w_in`, `w_hid` and `bias` are
/// stacked in the order input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// 4H × d
    pub w_in: Matrix,
    /// 4H × H
    pub w_hid: Matrix,
    /// 4H
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmParams {
            input_size,
            hidden_size,
            w_in: Matrix::zeros(4 * hidden_size, input_size),
            w_hid: Matrix::zeros(4 * hidden_size, hidden_size),
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    /// Uniform weights, forget-gate bias 1 and all other biases 0.
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let s = COMPOSITION_INIT_SCALE;
        let mut bias = vec![0.0; 4 * hidden_size];
        bias[hidden_size..2 * hidden_size].fill(1.0);
        LstmParams {
            input_size,
            hidden_size,
            w_in: Matrix::uniform(4 * hidden_size, input_size, s, rng),
            w_hid: Matrix::uniform(4 * hidden_size, hidden_size, s, rng),
            bias,
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, h) = (self.input_size, self.hidden_size);
        let ok = self.w_in.rows == 4 * h
            && self.w_in.cols == d
            && self.w_hid.rows == 4 * h
            && self.w_hid.cols == h
            && self.bias.len() == 4 * h
            && self.w_in.data.len() == 4 * h * d
            && self.w_hid.data.len() == 4 * h * h;
        if ok {
            Ok(())
        } else {
            Err(Error::arg("inconsistent LSTM parameter shapes"))
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        vec![&self.w_in.data, &self.w_hid.data, &self.bias]
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w_in.data, &mut self.w_hid.data, &mut self.bias]
    }

    pub fn sq_norm(&self) -> f64 {
        self.w_in.sq_norm() + self.w_hid.sq_norm() + dot(&self.bias, &self.bias)
    }
}

/// Everything the LSTM backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    /// Activated gates per step, 4H each (i, f, o, g).
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

pub fn lstm_forward(p: &LstmParams, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    Ok(lstm_forward_trace(p, xs)?.hidden)
}

pub fn lstm_forward_trace(p: &LstmParams, xs: &[&[f64]]) -> Result<LstmTrace> {
    p.check_shapes()?;
    if xs.is_empty() {
        return Err(Error::arg("LSTM needs at least one input"));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != p.input_size) {
        return Err(Error::arg(format!(
            "LSTM input of size {} for input_size {}",
            x.len(),
            p.input_size
        )));
    }
    let h = p.hidden_size;
    let mut trace = LstmTrace {
        gates: Vec::with_capacity(xs.len()),
        cells: Vec::with_capacity(xs.len()),
        hidden: Vec::with_capacity(xs.len()),
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for x in xs {
        let mut z = p.bias.clone();
        p.w_in.matvec_acc(x, &mut z);
        p.w_hid.matvec_acc(&h_prev, &mut z);
        for v in &mut z[..3 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut z[3 * h..] {
            *v = v.tanh();
        }
        let (i, rest) = z.split_at(h);
        let (f, rest) = rest.split_at(h);
        let (o, g) = rest.split_at(h);
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let hv: Vec<f64> = (0..h).map(|k| o[k] * c[k].tanh()).collect();
        trace.gates.push(z);
        trace.cells.push(c.clone());
        trace.hidden.push(hv.clone());
        h_prev = hv;
        c_prev = c;
    }
    Ok(trace)
}

/// Backpropagation through time. `dh[t]` is the external gradient on `h_t`;
/// parameter gradients are added to `grads` and input gradients to `dxs`.
pub fn lstm_backward(
    p: &LstmParams,
    xs: &[&[f64]],
    trace: &LstmTrace,
    dh: &[Vec<f64>],
    grads: &mut LstmParams,
    dxs: &mut [Vec<f64>],
) {
    let h = p.hidden_size;
    let steps = xs.len();
    let zeros = vec![0.0; h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let gates = &trace.gates[t];
        let (i, rest) = gates.split_at(h);
        let (f, rest) = rest.split_at(h);
        let (o, g) = rest.split_at(h);
        let c = &trace.cells[t];
        let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &trace.hidden[t - 1] } else { &zeros };
        for k in 0..h {
            let dhk = dh[t][k] + dh_next[k];
            let tc = c[k].tanh();
            let d_o = dhk * tc;
            let dc = dhk * o[k] * (1.0 - tc * tc) + dc_next[k];
            let d_i = dc * g[k];
            let d_g = dc * i[k];
            let d_f = dc * c_prev[k];
            dc_next[k] = dc * f[k];
            dz[k] = d_i * i[k] * (1.0 - i[k]);
            dz[h + k] = d_f * f[k] * (1.0 - f[k]);
            dz[2 * h + k] = d_o * o[k] * (1.0 - o[k]);
            dz[3 * h + k] = d_g * (1.0 - g[k] * g[k]);
        }
        grads.w_in.outer_acc(&dz, xs[t]);
        grads.w_hid.outer_acc(&dz, h_prev);
        axpy(1.0, &dz, &mut grads.bias);
        p.w_in.matvec_t_acc(&dz, &mut dxs[t]);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        p.w_hid.matvec_t_acc(&dz, &mut dh_next);
    }
}

/// Compositional parameters of GRAN: the LSTM plus the gate `W_x`, `W_h`, `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranParams {
    pub lstm: LstmParams,
    /// d × d
    pub w_x: Matrix,
    /// d × H
    pub w_h: Matrix,
    /// d
    pub b: Vec<f64>,
}

impl GranParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        GranParams {
            lstm: LstmParams::zeros(dim, hidden),
            w_x: Matrix::zeros(dim, dim),
            w_h: Matrix::zeros(dim, hidden),
            b: vec![0.0; dim],
        }
    }

    pub fn init<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let lstm = LstmParams::init(dim, hidden, rng);
        let s = COMPOSITION_INIT_SCALE;
        GranParams {
            lstm,
            w_x: Matrix::uniform(dim, dim, s, rng),
            w_h: Matrix::uniform(dim, hidden, s, rng),
            b: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.w_x.rows
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.lstm.check_shapes()?;
        let d = self.lstm.input_size;
        let h = self.lstm.hidden_size;
        let ok = self.w_x.rows == d
            && self.w_x.cols == d
            && self.w_h.rows == d
            && self.w_h.cols == h
            && self.b.len() == d;
        if ok {
            Ok(())
        } else {
            Err(Error::arg("inconsistent GRAN parameter shapes"))
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.lstm.slices();
        v.extend([self.w_x.data.as_slice(), &self.w_h.data, &self.b]);
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm.slices_mut();
        v.extend([self.w_x.data.as_mut_slice(), &mut self.w_h.data, &mut self.b]);
        v
    }

    /// ‖W_c‖²
    pub fn sq_norm(&self) -> f64 {
        self.lstm.sq_norm() + self.w_x.sq_norm() + self.w_h.sq_norm() + dot(&self.b, &self.b)
    }
}

#[derive(Debug, Clone)]
pub struct GranTrace {
    lstm: LstmTrace,
    gate: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn gran_forward_trace(p: &GranParams, emb: &EmbeddingMatrix, ids: &[usize]) -> Result<GranTrace> {
    if ids.is_empty() {
        return Err(Error::arg("cannot embed an empty sentence"));
    }
    p.check_shapes()?;
    if p.dim() != emb.dim() {
        return Err(Error::arg("GRAN dimension differs from embedding dimension"));
    }
    let xs: Vec<&[f64]> = ids.iter().map(|&i| emb.row(i)).collect();
    let lstm = lstm_forward_trace(&p.lstm, &xs)?;
    let d = p.dim();
    let scale = 1.0 / ids.len() as f64;
    let mut output = vec![0.0; d];
    let mut gates = Vec::with_capacity(ids.len());
    for (x, h) in xs.iter().zip(&lstm.hidden) {
        let mut z = p.b.clone();
        p.w_x.matvec_acc(x, &mut z);
        p.w_h.matvec_acc(h, &mut z);
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = sigmoid(*zk);
            output[k] += scale * x[k] * *zk;
        }
        gates.push(z);
    }
    Ok(GranTrace {
        lstm,
        gate: gates,
        output,
    })
}

/// Backward of [`gran_forward_trace`] for an output gradient `grad`.
pub fn gran_backward(
    p: &GranParams,
    emb: &EmbeddingMatrix,
    ids: &[usize],
    trace: &GranTrace,
    grad: &[f64],
    grads: &mut GranParams,
    emb_grad: &mut Matrix,
) {
    let d = p.dim();
    let hsz = p.lstm.hidden_size;
    let scale = 1.0 / ids.len() as f64;
    let xs: Vec<&[f64]> = ids.iter().map(|&i| emb.row(i)).collect();
    let mut dxs = vec![vec![0.0; d]; ids.len()];
    let mut dh = vec![vec![0.0; hsz]; ids.len()];
    let mut dpre = vec![0.0; d];
    for t in 0..ids.len() {
        let gate = &trace.gate[t];
        let x = xs[t];
        for k in 0..d {
            let da = scale * grad[k];
            dxs[t][k] += da * gate[k];
            dpre[k] = da * x[k] * gate[k] * (1.0 - gate[k]);
        }
        grads.w_x.outer_acc(&dpre, x);
        grads.w_h.outer_acc(&dpre, &trace.lstm.hidden[t]);
        axpy(1.0, &dpre, &mut grads.b);
        p.w_x.matvec_t_acc(&dpre, &mut dxs[t]);
        p.w_h.matvec_t_acc(&dpre, &mut dh[t]);
    }
    lstm_backward(&p.lstm, &xs, &trace.lstm, &dh, &mut grads.lstm, &mut dxs);
    for (&i, dx) in ids.iter().zip(&dxs) {
        axpy(1.0, dx, emb_grad.row_mut(i));
    }
}

pub fn embed_gran<S: AsRef<str>>(
    p: &GranParams,
    emb: &EmbeddingMatrix,
    tokens: &[S],
) -> Result<SentenceVector> {
    Ok(SentenceVector(gran_forward_trace(p, emb, &emb.encode(tokens))?.output))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Avg,
    Gran,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(ModelKind::Avg),
            "gran" => Ok(ModelKind::Gran),
            other => Err(Error::arg(format!("unknown model kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Avg => "avg",
            ModelKind::Gran => "gran",
        })
    }
}

/// Anything that maps a token sequence to a sentence vector.
pub trait SentenceEncoder: Sync {
    fn encode(&self, tokens: &[String]) -> Result<SentenceVector>;
}

/// A paraphrastic sentence encoder: word embeddings plus, for GRAN, the
/// compositional parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParaModel {
    pub kind: ModelKind,
    pub emb: EmbeddingMatrix,
    pub gran: Option<GranParams>,
}

impl ParaModel {
    pub fn avg(emb: EmbeddingMatrix) -> Self {
        ParaModel {
            kind: ModelKind::Avg,
            emb,
            gran: None,
        }
    }

    pub fn gran(emb: EmbeddingMatrix, params: GranParams) -> Result<Self> {
        params.check_shapes()?;
        if params.dim() != emb.dim() {
            return Err(Error::arg("GRAN dimension differs from embedding dimension"));
        }
        Ok(ParaModel {
            kind: ModelKind::Gran,
            emb,
            gran: Some(params),
        })
    }

    /// Fresh model with compositional weights drawn from `rng`; the hidden
    /// size defaults to the embedding dimension.
    pub fn init<R: Rng>(
        kind: ModelKind,
        emb: EmbeddingMatrix,
        hidden: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        match kind {
            ModelKind::Avg => Ok(Self::avg(emb)),
            ModelKind::Gran => {
                let d = emb.dim();
                let p = GranParams::init(d, hidden.unwrap_or(d), rng);
                Self::gran(emb, p)
            }
        }
    }

    pub fn embed_ids(&self, ids: &[usize]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::arg("cannot embed an empty sentence"));
        }
        match &self.gran {
            None => Ok(avg_ids(&self.emb, ids)),
            Some(p) => Ok(gran_forward_trace(p, &self.emb, ids)?.output),
        }
    }

    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Result<SentenceVector> {
        Ok(SentenceVector(self.embed_ids(&self.emb.encode(tokens))?))
    }
}

impl SentenceEncoder for ParaModel {
    fn encode(&self, tokens: &[String]) -> Result<SentenceVector> {
        self.embed(tokens)
    }
}

/// `<unk>` row index, re-exported for callers building id sequences by hand.
pub const UNK_ROW: usize = UNK_INDEX;
