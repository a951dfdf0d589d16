//! Cross-lingual pseudopairs: each target-language caption is annotated with
//! the most similar source-language caption under the sentence encoder.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{CaptionRecord, CaptionedCorpus, Provenance};
use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::grad::{matmul_bt, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoPair {
    pub target_caption_id: String,
    pub source_caption_id: String,
    pub target_image_id: String,
    pub similarity: f32,
}

/// Which pseudopairs survive filtering by similarity.
///
/// `KeepTop25` keeps pairs at or above the 75th percentile, `RemoveBottom25`
/// keeps pairs at or above the 25th percentile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterPolicy {
    #[default]
    None,
    #[serde(rename = "keep-top-25")]
    KeepTop25,
    #[serde(rename = "remove-bottom-25")]
    RemoveBottom25,
}

impl fmt::Display for FilterPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterPolicy::None => "none",
            FilterPolicy::KeepTop25 => "keep-top-25",
            FilterPolicy::RemoveBottom25 => "remove-bottom-25",
        })
    }
}

/// Index of the best source row for every target row. Source rows are
/// scanned in `order`; only a strictly larger score replaces the current
/// best, so ties go to the earliest row in `order`.
fn nearest(source: &Tensor<f32>, target: &Tensor<f32>, order: &[usize]) -> Vec<(usize, f32)> {
    let (ns, d) = (source.rows(), source.cols());
    let nt = target.rows();
    let mut out = Vec::with_capacity(nt);
    const CHUNK: usize = 256;
    for start in (0..nt).step_by(CHUNK) {
        let end = (start + CHUNK).min(nt);
        let s = matmul_bt(&target.data()[start * d..end * d], source.data(), end - start, d, ns);
        for row in s.chunks_exact(ns) {
            let mut best = (order[0], row[order[0]]);
            for &j in &order[1..] {
                if row[j] > best.1 {
                    best = (j, row[j]);
                }
            }
            out.push(best);
        }
    }
    out
}

/// Pairs every target caption with its nearest source caption given
/// precomputed unit-norm sentence embeddings (one row per caption).
pub fn generate_from_embeddings(
    source: &[&CaptionRecord],
    source_embeddings: &Tensor<f32>,
    target: &[&CaptionRecord],
    target_embeddings: &Tensor<f32>,
) -> Result<Vec<PseudoPair>> {
    if source.is_empty() {
        return Err(Error::Empty("pseudopair source captions"));
    }
    if source_embeddings.rows() != source.len() || target_embeddings.rows() != target.len() {
        return Err(Error::Dimension {
            expected: source.len(),
            found: source_embeddings.rows(),
            context: "embedding rows vs captions".into(),
        });
    }
    if source_embeddings.cols() != target_embeddings.cols() {
        return Err(Error::shape(
            "pseudopairs",
            source_embeddings.shape(),
            target_embeddings.shape(),
        ));
    }
    if target.is_empty() {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.sort_by(|&a, &b| source[a].caption_id.cmp(&source[b].caption_id));
    let best = nearest(source_embeddings, target_embeddings, &order);
    Ok(target
        .iter()
        .zip(best)
        .map(|(t, (j, sim))| PseudoPair {
            target_caption_id: t.caption_id.clone(),
            source_caption_id: source[j].caption_id.clone(),
            target_image_id: t.image_id.clone(),
            similarity: sim,
        })
        .collect())
}

/// Encodes the `source_language` captions of `source` and the
/// `target_language` captions of `target`, then pairs each target caption
/// with its most similar source caption. Ties go to the lowest source
/// caption id.
pub fn generate(
    model: &Model,
    source: &CaptionedCorpus,
    source_language: &str,
    target: &CaptionedCorpus,
    target_language: &str,
) -> Result<Vec<PseudoPair>> {
    if source_language == target_language {
        return Err(Error::Config("pseudopair languages must differ".into()));
    }
    let src: Vec<&CaptionRecord> = source
        .captions()
        .iter()
        .filter(|c| c.language == source_language)
        .collect();
    let tgt: Vec<&CaptionRecord> = target
        .captions()
        .iter()
        .filter(|c| c.language == target_language)
        .collect();
    if src.is_empty() {
        return Err(Error::Empty("pseudopair source captions"));
    }
    if tgt.is_empty() {
        return Ok(Vec::new());
    }
    let se = model.encode_captions(&src)?;
    let te = model.encode_captions(&tgt)?;
    generate_from_embeddings(&src, &se.vectors, &tgt, &te.vectors)
}

/// Nearest-rank style threshold: the value at zero-based position
/// `⌊p·N/100⌋` of the ascending sort, clamped to the last element.
pub fn percentile_threshold(values: &[f32], p: f64) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let idx = ((p * sorted.len() as f64 / 100.0).floor() as usize).min(sorted.len() - 1);
    Some(sorted[idx])
}

pub fn apply_filter(pairs: &[PseudoPair], policy: FilterPolicy) -> Vec<PseudoPair> {
    let p = match policy {
        FilterPolicy::None => return pairs.to_vec(),
        FilterPolicy::KeepTop25 => 75.0,
        FilterPolicy::RemoveBottom25 => 25.0,
    };
    let sims: Vec<f32> = pairs.iter().map(|x| x.similarity).collect();
    let Some(threshold) = percentile_threshold(&sims, p) else {
        return Vec::new();
    };
    pairs.iter().filter(|x| x.similarity >= threshold).cloned().collect()
}

pub fn pseudopair_caption_id(pair: &PseudoPair) -> String {
    format!("{}~{}", pair.target_caption_id, pair.source_caption_id)
}

/// Caption records placing each pair's source caption text on the target
/// image, tagged as pseudopairs.
pub fn pseudopair_captions(pairs: &[PseudoPair], source: &CaptionedCorpus) -> Result<Vec<CaptionRecord>> {
    let by_id: HashMap<&str, &CaptionRecord> = source.captions().iter().map(|c| (c.caption_id.as_str(), c)).collect();
    pairs
        .iter()
        .map(|p| {
            let src = by_id
                .get(p.source_caption_id.as_str())
                .ok_or_else(|| Error::UnknownCaption(p.source_caption_id.clone()))?;
            CaptionRecord::new(
                pseudopair_caption_id(p),
                p.target_image_id.clone(),
                src.language.clone(),
                src.text.clone(),
                Provenance::Pseudopair,
            )
        })
        .collect()
}

/// Adds the pairs to `target` as source-language captions.
pub fn augment_with_pseudopairs(
    target: &CaptionedCorpus,
    source: &CaptionedCorpus,
    pairs: &[PseudoPair],
) -> Result<CaptionedCorpus> {
    if pairs.is_empty() {
        return Err(Error::NoPseudoPairs);
    }
    target.clone().with_captions(pseudopair_captions(pairs, source)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub source_caption_id: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoPairDiagnostics {
    pub pairs: usize,
    pub source_captions: usize,
    pub distinct_sources: usize,
    /// Distinct source captions used over all source captions.
    pub coverage: f64,
    /// Sorted by count descending, then caption id.
    pub usage: Vec<Usage>,
    /// Share of pairs whose source caption is one of the 150 most used.
    pub top150_mass: f64,
    pub top1_mass: f64,
    pub min_similarity: Option<f32>,
    pub mean_similarity: Option<f64>,
    pub max_similarity: Option<f32>,
    /// Jaccard overlap of distinct source caption ids with the reference.
    pub jaccard: Option<f64>,
    /// Share of targets present in both sets that map to the same source.
    pub agreement_rate: Option<f64>,
    /// Share of pairs whose source and target share a ground-truth concept.
    pub concept_agreement: Option<f64>,
}

impl PseudoPairDiagnostics {
    /// Share of pairs covered by the `k` most used source captions.
    pub fn top_k_mass(&self, k: usize) -> f64 {
        if self.pairs == 0 {
            return 0.0;
        }
        self.usage.iter().take(k).map(|u| u.count).sum::<usize>() as f64 / self.pairs as f64
    }
}

pub fn jaccard(a: &[PseudoPair], b: &[PseudoPair]) -> f64 {
    let sa: BTreeSet<&str> = a.iter().map(|p| p.source_caption_id.as_str()).collect();
    let sb: BTreeSet<&str> = b.iter().map(|p| p.source_caption_id.as_str()).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// `source_captions` is the number of captions the pairs could draw from.
/// `concepts` maps caption ids to ground-truth concepts when known.
pub fn diagnostics(
    pairs: &[PseudoPair],
    source_captions: usize,
    reference: Option<&[PseudoPair]>,
    concepts: Option<&BTreeMap<String, usize>>,
) -> PseudoPairDiagnostics {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.source_caption_id.as_str()).or_default() += 1;
    }
    let mut usage: Vec<Usage> = counts
        .into_iter()
        .map(|(id, count)| Usage {
            source_caption_id: id.to_owned(),
            count,
        })
        .collect();
    usage.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.source_caption_id.cmp(&b.source_caption_id))
    });
    let distinct = usage.len();
    let sims = pairs.iter().map(|p| p.similarity);
    let agreement_rate = reference.and_then(|r| {
        let theirs: HashMap<&str, &str> = r
            .iter()
            .map(|p| (p.target_caption_id.as_str(), p.source_caption_id.as_str()))
            .collect();
        let shared: Vec<bool> = pairs
            .iter()
            .filter_map(|p| {
                theirs
                    .get(p.target_caption_id.as_str())
                    .map(|s| *s == p.source_caption_id)
            })
            .collect();
        (!shared.is_empty()).then(|| shared.iter().filter(|&&x| x).count() as f64 / shared.len() as f64)
    });
    let concept_agreement = concepts.and_then(|c| {
        let known: Vec<bool> = pairs
            .iter()
            .filter_map(|p| Some(c.get(&p.target_caption_id)? == c.get(&p.source_caption_id)?))
            .collect();
        (!known.is_empty()).then(|| known.iter().filter(|&&x| x).count() as f64 / known.len() as f64)
    });
    let mut diag = PseudoPairDiagnostics {
        pairs: pairs.len(),
        source_captions,
        distinct_sources: distinct,
        coverage: if source_captions == 0 {
            0.0
        } else {
            distinct as f64 / source_captions as f64
        },
        usage,
        top150_mass: 0.0,
        top1_mass: 0.0,
        min_similarity: sims.clone().reduce(f32::min),
        mean_similarity: (!pairs.is_empty())
            .then(|| pairs.iter().map(|p| f64::from(p.similarity)).sum::<f64>() / pairs.len() as f64),
        max_similarity: sims.reduce(f32::max),
        jaccard: reference.map(|r| jaccard(pairs, r)),
        agreement_rate,
        concept_agreement,
    };
    diag.top150_mass = diag.top_k_mass(150);
    diag.top1_mass = diag.top_k_mass(1);
    diag
}
