//! Hinge-based ranking objectives over in-batch similarity matrices.
//!
//! For a square similarity matrix `S` with gold pairs on the diagonal, the
//! max-violation loss of item `i` is
//!
//! ```text
//! J_i = max_{j≠i} [α − S[i][i] + S[j][i]]₊ + max_{j≠i} [α − S[i][i] + S[i][j]]₊
//! ```
//!
//! (contrastive first-side items for the second-side item `i`, then
//! contrastive second-side items for the first-side item `i`). The
//! sum-violation variant replaces each `max` by a sum. The batch loss is
//! `Σ_i J_i` accumulated in increasing `i` (or that sum divided by `n` for
//! mean aggregation). Each hinge argument is evaluated as
//! `(S_neg − S[i][i]) + α`, negatives are scanned in increasing index, and
//! sums accumulate left to right; [`literal_loss`] follows the same order.

use serde::{Deserialize, Serialize};

use crate::encoders::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::grad::{matmul_bt, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    #[default]
    MaxViolation,
    SumViolation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub margin: f64,
    pub variant: LossVariant,
    pub aggregation: Aggregation,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            variant: LossVariant::MaxViolation,
            aggregation: Aggregation::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Dense cosine similarities between two batches of unit vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Tensor<f32>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.scores.rows()
    }

    pub fn cols(&self) -> usize {
        self.scores.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.scores.get(i, j)
    }

    pub fn transpose(&self) -> Self {
        Self {
            scores: self.scores.transpose(),
            row_ids: self.col_ids.clone(),
            col_ids: self.row_ids.clone(),
        }
    }
}

/// `S = A·Bᵀ`; row/column ids default to positional indices.
pub fn similarity_matrix(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<SimilarityMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::shape("similarity_matrix", a.vectors.shape(), b.vectors.shape()));
    }
    let (m, n, k) = (a.len(), b.len(), a.dim());
    let scores = Tensor::new(vec![m, n], matmul_bt(a.vectors.data(), b.vectors.data(), m, k, n))?;
    Ok(SimilarityMatrix {
        scores,
        row_ids: (0..m).map(|i| i.to_string()).collect(),
        col_ids: (0..n).map(|i| i.to_string()).collect(),
    })
}

/// Records `S = A·Bᵀ` for two batches of normalized embeddings.
pub fn similarity_on_tape<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    tape.matmul_bt(a, b)
}

/// Per-item hinge terms in one direction as an `n×1` column. For row `i`,
/// `scan` holds `S_neg − S[i][i]` over candidate negatives `j`.
fn direction_terms<T: Scalar>(tape: &mut Tape<T>, scan: Var, mask: Var, cfg: &LossConfig) -> Result<Var> {
    let masked = tape.add(scan, mask)?;
    let shifted = tape.shift(masked, T::from_f64_lossy(cfg.margin));
    match cfg.variant {
        LossVariant::MaxViolation => {
            let worst = tape.row_max(shifted)?;
            Ok(tape.hinge(worst))
        }
        LossVariant::SumViolation => {
            let h = tape.hinge(shifted);
            tape.sum_rows(h)
        }
    }
}

/// Ranking loss over a square similarity matrix with gold pairs on the
/// diagonal, using the variant named in `cfg`.
pub fn ranking_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, s: Var, cfg: &LossConfig) -> Result<Var> {
    let sv = tape.value(s);
    let (n, m) = sv.require_matrix("ranking_loss")?;
    if n != m {
        return Err(Error::shape("ranking_loss", &[n, m], &[n, n]));
    }
    if n == 0 {
        return Err(Error::Empty("ranking loss batch"));
    }
    let diag_row = diag_as_row(tape, s, n)?;
    let neg_gold = tape.scale(diag_row, -T::one());

    let mut mask = vec![T::zero(); n * n];
    for i in 0..n {
        mask[i * n + i] = T::neg_infinity();
    }
    let mask = tape.constant(Tensor::new(vec![n, n], mask)?);

    // Row i of `col_scan` is S[j][i] − S[i][i] over j: contrastive first-side
    // items against the second-side item i.
    let col_scan_t = tape.add_row(s, neg_gold)?;
    let col_scan = tape.transpose(col_scan_t)?;
    // Row i of `row_scan` is S[i][j] − S[i][i] over j.
    let st = tape.transpose(s)?;
    let row_scan_t = tape.add_row(st, neg_gold)?;
    let row_scan = tape.transpose(row_scan_t)?;

    let first = direction_terms(tape, col_scan, mask, cfg)?;
    let second = direction_terms(tape, row_scan, mask, cfg)?;
    let per_item = tape.add(first, second)?;
    let total = tape.sum(per_item);
    Ok(match cfg.aggregation {
        Aggregation::Sum => total,
        Aggregation::Mean => tape.scale(total, T::one() / T::from_usize(n).expect("batch size")),
    })
}

/// The diagonal of a square matrix as a `1×n` row, differentiable.
fn diag_as_row<T: Scalar>(tape: &mut Tape<T>, s: Var, n: usize) -> Result<Var> {
    let mut sel = vec![T::zero(); n * n];
    for i in 0..n {
        sel[i * n + i] = T::one();
    }
    let sel = tape.constant(Tensor::new(vec![n, n], sel)?);
    let diag_only = tape.mul(s, sel)?;
    let ones = tape.constant(Tensor::filled(&[1, n], T::one()));
    // Column sums of S ⊙ I are the gold scores.
    tape.matmul(ones, diag_only)
}

pub fn max_violation_on_tape<T: Scalar>(tape: &mut Tape<T>, s: Var, cfg: &LossConfig) -> Result<Var> {
    let cfg = LossConfig {
        variant: LossVariant::MaxViolation,
        ..*cfg
    };
    ranking_loss_on_tape(tape, s, &cfg)
}

pub fn sum_violation_on_tape<T: Scalar>(tape: &mut Tape<T>, s: Var, cfg: &LossConfig) -> Result<Var> {
    let cfg = LossConfig {
        variant: LossVariant::SumViolation,
        ..*cfg
    };
    ranking_loss_on_tape(tape, s, &cfg)
}

/// Caption–caption loss: the ranking loss with `(a, b)` = two caption
/// batches whose rows are aligned by image.
pub fn c2c_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, left: Var, right: Var, cfg: &LossConfig) -> Result<Var> {
    let (l, r) = (tape.value(left).rows(), tape.value(right).rows());
    if l != r {
        return Err(Error::Dimension {
            expected: l,
            found: r,
            context: "c2c batch lengths".into(),
        });
    }
    let s = similarity_on_tape(tape, left, right)?;
    ranking_loss_on_tape(tape, s, cfg)
}

fn loss_value<T: Scalar>(s: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let l = ranking_loss_on_tape(&mut tape, sv, cfg)?;
    Ok(tape.value(l).item())
}

pub fn max_violation_loss<T: Scalar>(s: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    loss_value(
        s,
        &LossConfig {
            variant: LossVariant::MaxViolation,
            ..*cfg
        },
    )
}

pub fn sum_violation_loss<T: Scalar>(s: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    loss_value(
        s,
        &LossConfig {
            variant: LossVariant::SumViolation,
            ..*cfg
        },
    )
}

pub fn c2c_loss(left: &EmbeddingBatch, right: &EmbeddingBatch, cfg: &LossConfig) -> Result<f32> {
    if left.len() != right.len() {
        return Err(Error::Dimension {
            expected: left.len(),
            found: right.len(),
            context: "c2c batch lengths".into(),
        });
    }
    let s = similarity_matrix(left, right)?;
    loss_value(&s.scores, cfg)
}

/// Direct double-loop transcription of the ranking loss, in the documented
/// evaluation order. Used as an oracle in tests.
pub fn literal_loss<T: Scalar>(s: &Tensor<T>, cfg: &LossConfig) -> T {
    let n = s.rows();
    let alpha = T::from_f64_lossy(cfg.margin);
    let mut total = T::zero();
    for i in 0..n {
        let gold = s.get(i, i);
        let mut terms = [T::zero(); 2];
        for (dir, term) in terms.iter_mut().enumerate() {
            let mut acc = T::zero();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let neg = if dir == 0 { s.get(j, i) } else { s.get(i, j) };
                let h = (neg - gold) + alpha;
                let h = if h > T::zero() { h } else { T::zero() };
                acc = match cfg.variant {
                    LossVariant::MaxViolation => {
                        if h > acc {
                            h
                        } else {
                            acc
                        }
                    }
                    LossVariant::SumViolation => acc + h,
                };
            }
            *term = acc;
        }
        total = total + (terms[0] + terms[1]);
    }
    match cfg.aggregation {
        Aggregation::Sum => total,
        Aggregation::Mean => total * (T::one() / T::from_usize(n.max(1)).expect("n")),
    }
}
