//! Image–text retrieval metrics and cross-lingual translation retrieval.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::CaptionedCorpus;
use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::grad::{matmul_bt, Tensor};

/// Position of item `j` in a stable descending sort of `scores`.
fn stable_rank(scores: &[f32], j: usize) -> usize {
    let s = scores[j];
    let mut rank = 1;
    for (k, &v) in scores.iter().enumerate() {
        if v > s || (v == s && k < j) {
            rank += 1;
        }
    }
    rank
}

/// Best rank among each image's gold captions. `s` is images × captions.
pub fn rank_image_to_text(s: &Tensor<f32>, gold: &[Vec<usize>]) -> Result<Vec<usize>> {
    let (rows, cols) = s.require_matrix("rank_image_to_text")?;
    if gold.len() != rows {
        return Err(Error::Dimension {
            expected: rows,
            found: gold.len(),
            context: "gold caption sets vs images".into(),
        });
    }
    let mut ranks = Vec::with_capacity(rows);
    for (i, g) in gold.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::MissingGold(format!("image row {i}")));
        }
        let row = s.row(i);
        let mut best = usize::MAX;
        for &j in g {
            if j >= cols {
                return Err(Error::MissingGold(format!("caption column {j} for image row {i}")));
            }
            best = best.min(stable_rank(row, j));
        }
        ranks.push(best);
    }
    Ok(ranks)
}

/// Rank of each caption's gold image. `s` is captions × images.
pub fn rank_text_to_image(s: &Tensor<f32>, gold: &[usize]) -> Result<Vec<usize>> {
    let (rows, cols) = s.require_matrix("rank_text_to_image")?;
    if gold.len() != rows {
        return Err(Error::Dimension {
            expected: rows,
            found: gold.len(),
            context: "gold images vs captions".into(),
        });
    }
    gold.iter()
        .enumerate()
        .map(|(i, &g)| {
            if g >= cols {
                return Err(Error::MissingGold(format!("image column {g} for caption row {i}")));
            }
            Ok(stable_rank(s.row(i), g))
        })
        .collect()
}

/// Percentage of ranks at or below `k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list"));
    }
    if k == 0 {
        return Err(Error::Config("recall cutoff must be at least 1".into()));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(100.0 * hits as f64 / ranks.len() as f64)
}

/// Median rank; for an even count the lower middle value.
pub fn median_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list"));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    Ok(sorted[(sorted.len() - 1) / 2] as f64)
}

pub fn mean_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list"));
    }
    Ok(ranks.iter().map(|&r| r as f64).sum::<f64>() / ranks.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionScores {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub median_rank: f64,
    pub mean_rank: f64,
}

impl DirectionScores {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        Ok(Self {
            r1: recall_at_k(ranks, 1)?,
            r5: recall_at_k(ranks, 5)?,
            r10: recall_at_k(ranks, 10)?,
            median_rank: median_rank(ranks)?,
            mean_rank: mean_rank(ranks)?,
        })
    }

    pub fn recall_sum(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageReport {
    pub language: String,
    pub image_to_text: DirectionScores,
    pub text_to_image: DirectionScores,
    pub sum: f64,
}

impl LanguageReport {
    pub fn new(language: impl Into<String>, image_to_text: DirectionScores, text_to_image: DirectionScores) -> Self {
        let sum = image_to_text.recall_sum() + text_to_image.recall_sum();
        Self {
            language: language.into(),
            image_to_text,
            text_to_image,
            sum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub languages: Vec<LanguageReport>,
    pub sum_of_sums: f64,
}

impl RetrievalReport {
    pub fn new(languages: Vec<LanguageReport>) -> Self {
        let sum_of_sums = languages.iter().map(|l| l.sum).sum();
        Self { languages, sum_of_sums }
    }

    pub fn language(&self, language: &str) -> Option<&LanguageReport> {
        self.languages.iter().find(|l| l.language == language)
    }

    /// Aligned plain-text table, recalls to one decimal place.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} | {:>6} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6} | {:>7}",
            "lang", "I>T@1", "@5", "@10", "medr", "T>I@1", "@5", "@10", "medr", "sum"
        );
        for l in &self.languages {
            let (a, b) = (&l.image_to_text, &l.text_to_image);
            let _ = writeln!(
                out,
                "{:<6} | {:>6.1} {:>6.1} {:>6.1} {:>6.1} | {:>6.1} {:>6.1} {:>6.1} {:>6.1} | {:>7.1}",
                l.language, a.r1, a.r5, a.r10, a.median_rank, b.r1, b.r5, b.r10, b.median_rank, l.sum
            );
        }
        let _ = writeln!(out, "sum(sum) {:.1}", self.sum_of_sums);
        out
    }

    pub fn csv_header() -> &'static str {
        "language,i2t_r1,i2t_r5,i2t_r10,i2t_medr,i2t_meanr,t2i_r1,t2i_r5,t2i_r10,t2i_medr,t2i_meanr,sum"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.languages
            .iter()
            .map(|l| {
                let (a, b) = (&l.image_to_text, &l.text_to_image);
                format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    l.language,
                    a.r1,
                    a.r5,
                    a.r10,
                    a.median_rank,
                    a.mean_rank,
                    b.r1,
                    b.r5,
                    b.r10,
                    b.median_rank,
                    b.mean_rank,
                    l.sum
                )
            })
            .collect()
    }
}

/// Per-language Sum values and the global Sum(Sum).
pub fn sum_of_recall(report: &RetrievalReport) -> (BTreeMap<String, f64>, f64) {
    let per: BTreeMap<String, f64> = report.languages.iter().map(|l| (l.language.clone(), l.sum)).collect();
    let total = report.languages.iter().map(|l| l.sum).sum();
    (per, total)
}

/// Field-wise mean of reports over seeds. Languages are matched by name and
/// must be the same set in every report.
pub fn mean_report(reports: &[RetrievalReport]) -> Result<RetrievalReport> {
    let first = reports.first().ok_or(Error::Empty("reports"))?;
    let n = reports.len() as f64;
    let mut languages = Vec::with_capacity(first.languages.len());
    for l in &first.languages {
        let mut parts = Vec::with_capacity(reports.len());
        for r in reports {
            parts.push(
                r.language(&l.language)
                    .ok_or_else(|| Error::Config(format!("report missing language {}", l.language)))?,
            );
        }
        let avg = |f: &dyn Fn(&LanguageReport) -> &DirectionScores| DirectionScores {
            r1: parts.iter().map(|p| f(p).r1).sum::<f64>() / n,
            r5: parts.iter().map(|p| f(p).r5).sum::<f64>() / n,
            r10: parts.iter().map(|p| f(p).r10).sum::<f64>() / n,
            median_rank: parts.iter().map(|p| f(p).median_rank).sum::<f64>() / n,
            mean_rank: parts.iter().map(|p| f(p).mean_rank).sum::<f64>() / n,
        };
        languages.push(LanguageReport::new(
            l.language.clone(),
            avg(&|p| &p.image_to_text),
            avg(&|p| &p.text_to_image),
        ));
    }
    if reports.iter().any(|r| r.languages.len() != first.languages.len()) {
        return Err(Error::Config("reports cover different languages".into()));
    }
    Ok(RetrievalReport::new(languages))
}

fn cosine_matrix(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.rows();
    Tensor::new(vec![m, n], matmul_bt(a.data(), b.data(), m, k, n)).expect("shape matches")
}

/// Retrieval scores for one language: images that carry at least one
/// caption in `language` against all captions in that language.
pub fn evaluate_language(model: &Model, corpus: &CaptionedCorpus, language: &str) -> Result<LanguageReport> {
    let groups = corpus.captions_by_image(Some(language));
    let image_rows: Vec<usize> = (0..groups.len()).filter(|&i| !groups[i].is_empty()).collect();
    if image_rows.is_empty() {
        return Err(Error::Config(format!(
            "corpus {} has no {language} captions",
            corpus.name()
        )));
    }
    let mut caption_idx = Vec::new();
    let mut gold_image = Vec::new();
    let mut gold_captions = Vec::with_capacity(image_rows.len());
    for (img, &row) in image_rows.iter().enumerate() {
        let mut g = Vec::with_capacity(groups[row].len());
        for &c in &groups[row] {
            g.push(caption_idx.len());
            caption_idx.push(c);
            gold_image.push(img);
        }
        gold_captions.push(g);
    }
    let records: Vec<_> = caption_idx.iter().map(|&c| &corpus.captions()[c]).collect();
    let text = model.encode_captions(&records)?;
    let images = model.encode_images(&corpus.features().gather_rows(&image_rows))?;
    let s = cosine_matrix(&images.vectors, &text.vectors);
    if !s.all_finite() {
        return Err(Error::NonFinite("similarity matrix during evaluation".into()));
    }
    let i2t = rank_image_to_text(&s, &gold_captions)?;
    let t2i = rank_text_to_image(&s.transpose(), &gold_image)?;
    Ok(LanguageReport::new(
        language,
        DirectionScores::from_ranks(&i2t)?,
        DirectionScores::from_ranks(&t2i)?,
    ))
}

/// Evaluates every listed language (all corpus languages when empty).
pub fn evaluate(model: &Model, corpus: &CaptionedCorpus, languages: &[String]) -> Result<RetrievalReport> {
    let langs = if languages.is_empty() {
        corpus.languages()
    } else {
        languages.to_vec()
    };
    let reports = langs
        .iter()
        .map(|l| evaluate_language(model, corpus, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalReport::new(reports))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationScores {
    /// R@1 retrieving the right-hand sentence given the left-hand one.
    pub left_to_right_r1: f64,
    pub right_to_left_r1: f64,
}

/// R@1 of the gold translation among all candidates, in both directions,
/// from precomputed sentence embeddings.
pub fn translation_retrieval_embeddings(left: &Tensor<f32>, right: &Tensor<f32>) -> Result<TranslationScores> {
    if left.rows() != right.rows() {
        return Err(Error::Dimension {
            expected: left.rows(),
            found: right.rows(),
            context: "translation pairs".into(),
        });
    }
    let s = cosine_matrix(left, right);
    let gold: Vec<usize> = (0..left.rows()).collect();
    let l2r = rank_text_to_image(&s, &gold)?;
    let r2l = rank_text_to_image(&s.transpose(), &gold)?;
    Ok(TranslationScores {
        left_to_right_r1: recall_at_k(&l2r, 1)?,
        right_to_left_r1: recall_at_k(&r2l, 1)?,
    })
}

/// Encodes both sides of aligned sentence pairs and scores translation retrieval.
pub fn translation_retrieval<S: AsRef<str>>(model: &Model, left: &[S], right: &[S]) -> Result<TranslationScores> {
    if left.len() != right.len() {
        return Err(Error::Dimension {
            expected: left.len(),
            found: right.len(),
            context: "translation pairs".into(),
        });
    }
    let a = model.encode_texts(left)?;
    let b = model.encode_texts(right)?;
    translation_retrieval_embeddings(&a.vectors, &b.vectors)
}
