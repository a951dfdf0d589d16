use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, PAD_ID};
use crate::data::CaptionRecord;
use crate::error::{Error, Result};
use crate::grad::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub word_dim: usize,
    /// GRU hidden size, which is also the joint embedding size.
    pub hidden_dim: usize,
    /// Width of the precomputed image features.
    pub image_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            hidden_dim: 1024,
            image_dim: 2048,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.hidden_dim == 0 || self.image_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

pub const PARAM_NAMES: [&str; 6] = [
    "embeddings",
    "gru.input",
    "gru.recurrent",
    "gru.bias",
    "image.proj",
    "image.bias",
];

/// Every trainable tensor of the grounded model.
///
/// GRU weight blocks are stored column-concatenated in gate order
/// `[update z | reset r | candidate h]`, using row-vector convention
/// (`x · W`). With `H` the hidden size:
///
/// * `z  = σ(x·W_z + h·U_z + b_z)`
/// * `r  = σ(x·W_r + h·U_r + b_r)`
/// * `h̃ = tanh(x·W_h + (r ⊙ h)·U_h + b_h)`
/// * `h' = (1 − z) ⊙ h + z ⊙ h̃`
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// `|V| × word_dim`
    pub embeddings: Tensor<T>,
    /// `word_dim × 3H`
    pub gru_input: Tensor<T>,
    /// `H × 3H`
    pub gru_recurrent: Tensor<T>,
    /// `1 × 3H`
    pub gru_bias: Tensor<T>,
    /// `image_dim × H`
    pub image_proj: Tensor<T>,
    /// `1 × H`
    pub image_bias: Tensor<T>,
}

impl ModelParams<f32> {
    /// Embeddings and GRU weights uniform in [−0.1, 0.1], image projection
    /// Xavier-uniform, biases zero.
    pub fn init(config: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let mut uniform = |shape: &[usize], bound: f32| -> Tensor<f32> {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches")
        };
        let embeddings = uniform(&[vocab_size, config.word_dim], 0.1);
        let gru_input = uniform(&[config.word_dim, 3 * h], 0.1);
        let gru_recurrent = uniform(&[h, 3 * h], 0.1);
        let xavier = (6.0 / (config.image_dim + h) as f32).sqrt();
        let image_proj = uniform(&[config.image_dim, h], xavier);
        Self {
            embeddings,
            gru_input,
            gru_recurrent,
            gru_bias: Tensor::zeros(&[1, 3 * h]),
            image_proj,
            image_bias: Tensor::zeros(&[1, h]),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            word_dim: self.embeddings.cols(),
            hidden_dim: self.image_bias.cols(),
            image_dim: self.image_proj.rows(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn tensors(&self) -> [&Tensor<T>; 6] {
        [
            &self.embeddings,
            &self.gru_input,
            &self.gru_recurrent,
            &self.gru_bias,
            &self.image_proj,
            &self.image_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.embeddings,
            &mut self.gru_input,
            &mut self.gru_recurrent,
            &mut self.gru_bias,
            &mut self.image_proj,
            &mut self.image_bias,
        ]
    }

    /// Reassembles parameters in [`PARAM_NAMES`] order, checking shapes.
    pub fn from_tensors(tensors: [Tensor<T>; 6]) -> Result<Self> {
        let [embeddings, gru_input, gru_recurrent, gru_bias, image_proj, image_bias] = tensors;
        let e = embeddings.cols();
        let h = image_bias.cols();
        let d = image_proj.rows();
        let expect: [(&str, &Tensor<T>, [usize; 2]); 6] = [
            ("embeddings", &embeddings, [embeddings.rows(), e]),
            ("gru.input", &gru_input, [e, 3 * h]),
            ("gru.recurrent", &gru_recurrent, [h, 3 * h]),
            ("gru.bias", &gru_bias, [1, 3 * h]),
            ("image.proj", &image_proj, [d, h]),
            ("image.bias", &image_bias, [1, h]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            embeddings,
            gru_input,
            gru_recurrent,
            gru_bias,
            image_proj,
            image_bias,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            embeddings: self.embeddings.cast(),
            gru_input: self.gru_input.cast(),
            gru_recurrent: self.gru_recurrent.cast(),
            gru_bias: self.gru_bias.cast(),
            image_proj: self.image_proj.cast(),
            image_bias: self.image_bias.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Records the parameters on `tape` as trainable leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundParams> {
        self.bind_with(tape, true)
    }

    /// Records the parameters as constants, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Result<BoundParams> {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape<T>, trainable: bool) -> Result<BoundParams> {
        let mut leaf = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let leaves = self.tensors().map(&mut leaf);
        BoundParams::from_leaves(tape, leaves)
    }
}

/// Parameter handles on one tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub embeddings: Var,
    pub gru_input: Var,
    pub gru_recurrent: Var,
    pub gru_bias: Var,
    pub image_proj: Var,
    pub image_bias: Var,
    recurrent_zr: Var,
    recurrent_h: Var,
    hidden: usize,
    vocab_size: usize,
    image_dim: usize,
}

impl BoundParams {
    /// Wraps six leaves already on `tape`, in [`ModelParams::tensors`] order.
    pub fn from_leaves<T: Scalar>(tape: &mut Tape<T>, leaves: [Var; 6]) -> Result<Self> {
        let [embeddings, gru_input, gru_recurrent, gru_bias, image_proj, image_bias] = leaves;
        let h = tape.value(image_bias).cols();
        let (vocab_size, _) = tape.value(embeddings).require_matrix("embeddings")?;
        let (image_dim, _) = tape.value(image_proj).require_matrix("image_proj")?;
        if tape.value(gru_recurrent).cols() != 3 * h {
            return Err(Error::shape("bind", tape.value(gru_recurrent).shape(), &[h, 3 * h]));
        }
        let recurrent_zr = tape.slice_cols(gru_recurrent, 0, 2 * h)?;
        let recurrent_h = tape.slice_cols(gru_recurrent, 2 * h, 3 * h)?;
        Ok(Self {
            embeddings,
            gru_input,
            gru_recurrent,
            gru_bias,
            image_proj,
            image_bias,
            recurrent_zr,
            recurrent_h,
            hidden: h,
            vocab_size,
            image_dim,
        })
    }

    pub fn vars(&self) -> [Var; 6] {
        [
            self.embeddings,
            self.gru_input,
            self.gru_recurrent,
            self.gru_bias,
            self.image_proj,
            self.image_bias,
        ]
    }
}

/// One GRU step over a batch: `x` is `B×E`, `h` is `B×H`.
pub fn gru_step<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, x: Var, h: Var) -> Result<Var> {
    let hd = p.hidden;
    let xw = tape.matmul(x, p.gru_input)?;
    let gx = tape.add_row(xw, p.gru_bias)?;
    let gh = tape.matmul(h, p.recurrent_zr)?;
    let (gx_z, gx_r, gx_h) = (
        tape.slice_cols(gx, 0, hd)?,
        tape.slice_cols(gx, hd, 2 * hd)?,
        tape.slice_cols(gx, 2 * hd, 3 * hd)?,
    );
    let (gh_z, gh_r) = (tape.slice_cols(gh, 0, hd)?, tape.slice_cols(gh, hd, 2 * hd)?);
    let z_pre = tape.add(gx_z, gh_z)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = tape.add(gx_r, gh_r)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, p.recurrent_h)?;
    let cand_pre = tape.add(gx_h, rhu)?;
    let cand = tape.tanh(cand_pre);
    let neg_z = tape.scale(z, -T::one());
    let keep = tape.shift(neg_z, T::one());
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

/// Final GRU hidden state per sequence, L2-normalized. Shorter sequences are
/// padded; once a sequence ends its state is carried through unchanged.
pub fn encode_sentences_on_tape<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, seqs: &[Vec<usize>]) -> Result<Var> {
    if seqs.is_empty() {
        return Err(Error::Empty("sentence batch"));
    }
    for (i, s) in seqs.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::ZeroLengthSequence(i));
        }
        if let Some(&id) = s.iter().find(|&&id| id >= p.vocab_size) {
            return Err(Error::TokenOutOfRange { id, size: p.vocab_size });
        }
    }
    let b = seqs.len();
    let hd = p.hidden;
    let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut h = tape.constant(Tensor::zeros(&[b, hd]));
    for t in 0..max_len {
        let ids: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD_ID)).collect();
        let x = tape.embedding(p.embeddings, &ids)?;
        let next = gru_step(tape, p, x, h)?;
        h = if seqs.iter().all(|s| s.len() > t) {
            next
        } else {
            let mut active = Vec::with_capacity(b * hd);
            let mut done = Vec::with_capacity(b * hd);
            for s in seqs {
                let on = s.len() > t;
                active.extend(std::iter::repeat_n(if on { T::one() } else { T::zero() }, hd));
                done.extend(std::iter::repeat_n(if on { T::zero() } else { T::one() }, hd));
            }
            let m_on = tape.constant(Tensor::new(vec![b, hd], active)?);
            let m_off = tape.constant(Tensor::new(vec![b, hd], done)?);
            let a = tape.mul(m_on, next)?;
            let c = tape.mul(m_off, h)?;
            tape.add(a, c)?
        };
    }
    tape.l2_normalize_rows(h)
}

/// `normalize(features · W_I + b)`.
pub fn encode_images_on_tape<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, features: Tensor<T>) -> Result<Var> {
    let (_, width) = features.require_matrix("encode_images")?;
    if width != p.image_dim {
        return Err(Error::Dimension {
            expected: p.image_dim,
            found: width,
            context: "image feature width".into(),
        });
    }
    let x = tape.constant(features);
    let proj = tape.matmul(x, p.image_proj)?;
    let y = tape.add_row(proj, p.image_bias)?;
    tape.l2_normalize_rows(y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Sentence,
}

/// Joint-space vectors, one per row, each of unit norm except rows listed
/// in `degenerate` (zero pre-normalization state, emitted as zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: Tensor<f32>,
    pub modality: Modality,
    pub language: Option<String>,
    pub degenerate: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    fn from_rows(vectors: Tensor<f32>, modality: Modality, language: Option<String>) -> Self {
        let degenerate = (0..vectors.rows())
            .filter(|&i| vectors.row(i).iter().all(|&v| v == 0.0))
            .collect::<Vec<_>>();
        if !degenerate.is_empty() {
            log::warn!("{} embedding rows had zero norm before normalization", degenerate.len());
        }
        Self {
            vectors,
            modality,
            language,
            degenerate,
        }
    }
}

const INFERENCE_CHUNK: usize = 512;

/// A vocabulary with its trained parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub vocab: Vocabulary,
    pub params: ModelParams<f32>,
}

impl Model {
    pub fn new(vocab: Vocabulary, config: &ModelConfig, seed: u64) -> Self {
        let params = ModelParams::init(config, vocab.len(), seed);
        Self { vocab, params }
    }

    pub fn config(&self) -> ModelConfig {
        self.params.config()
    }

    pub fn encode_sentences(&self, seqs: &[Vec<usize>]) -> Result<EmbeddingBatch> {
        let h = self.params.config().hidden_dim;
        let mut out = Vec::with_capacity(seqs.len() * h);
        for chunk in seqs.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape)?;
            let y = encode_sentences_on_tape(&mut tape, &p, chunk)?;
            out.extend_from_slice(tape.value(y).data());
        }
        let vectors = Tensor::new(vec![seqs.len(), h], out)?;
        Ok(EmbeddingBatch::from_rows(vectors, Modality::Sentence, None))
    }

    pub fn encode_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<EmbeddingBatch> {
        let seqs: Vec<Vec<usize>> = texts.iter().map(|t| self.vocab.encode_text(t.as_ref())).collect();
        self.encode_sentences(&seqs)
    }

    /// Encodes caption records. The language tag is kept only when all
    /// records share one; it never influences the encoding.
    pub fn encode_captions(&self, captions: &[&CaptionRecord]) -> Result<EmbeddingBatch> {
        let seqs: Vec<Vec<usize>> = captions.iter().map(|c| self.vocab.encode(&c.tokens)).collect();
        let mut batch = self.encode_sentences(&seqs)?;
        if let Some(first) = captions.first() {
            if captions.iter().all(|c| c.language == first.language) {
                batch.language = Some(first.language.clone());
            }
        }
        Ok(batch)
    }

    pub fn encode_images(&self, features: &Tensor<f32>) -> Result<EmbeddingBatch> {
        let (n, d) = features.require_matrix("encode_images")?;
        let h = self.params.config().hidden_dim;
        let mut out = Vec::with_capacity(n * h);
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let chunk = Tensor::new(vec![end - start, d], features.data()[start * d..end * d].to_vec())?;
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape)?;
            let y = encode_images_on_tape(&mut tape, &p, chunk)?;
            out.extend_from_slice(tape.value(y).data());
        }
        if n == 0 && d != self.config().image_dim {
            return Err(Error::Dimension {
                expected: self.config().image_dim,
                found: d,
                context: "image feature width".into(),
            });
        }
        let vectors = Tensor::new(vec![n, h], out)?;
        Ok(EmbeddingBatch::from_rows(vectors, Modality::Image, None))
    }
}
