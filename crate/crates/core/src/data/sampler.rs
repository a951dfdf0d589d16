use std::fmt;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::c2c::{build_c2c_pairs, C2CPairSet};
use super::corpus::CaptionedCorpus;
use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::grad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ImageCaption,
    CaptionCaption,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::ImageCaption => "image-caption",
            Task::CaptionCaption => "caption-caption",
        })
    }
}

/// A training corpus, optionally with caption–caption pairs.
#[derive(Clone, Debug)]
pub struct TrainingSource {
    pub corpus: CaptionedCorpus,
    pub c2c: Option<C2CPairSet>,
}

impl TrainingSource {
    pub fn new(corpus: CaptionedCorpus) -> Self {
        Self { corpus, c2c: None }
    }

    /// Attaches the ℓ1×ℓ2 pair set; an empty set is dropped.
    pub fn with_c2c(corpus: CaptionedCorpus, left: &str, right: &str) -> Self {
        let pairs = build_c2c_pairs(&corpus, left, right);
        Self {
            corpus,
            c2c: (!pairs.is_empty()).then_some(pairs),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchData {
    ImageCaption {
        features: Tensor<f32>,
        captions: Vec<Vec<usize>>,
    },
    CaptionCaption {
        left: Vec<Vec<usize>>,
        right: Vec<Vec<usize>>,
    },
}

/// One training batch. Row `i` of the left side and row `i` of the right
/// side form a gold pair; `left_image_ids[i] == right_image_ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub task: Task,
    pub source: String,
    pub left_image_ids: Vec<String>,
    pub right_image_ids: Vec<String>,
    pub data: BatchData,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.left_image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left_image_ids.is_empty()
    }
}

/// Draws batches from a fixed set of sources.
///
/// A source is chosen uniformly; a source with caption–caption pairs runs
/// that task with probability 0.5. Distinct images are drawn without
/// replacement and one caption (or caption pair) is picked per image, so no
/// in-batch negative shares the gold image.
#[derive(Debug)]
pub struct BatchSampler<'a> {
    sources: &'a [TrainingSource],
    batch_size: usize,
    /// Per source: (feature row, caption indices) for captioned images.
    caption_groups: Vec<Vec<(usize, Vec<usize>)>>,
    /// Per source: pair indices grouped by image.
    pair_groups: Vec<Vec<Vec<usize>>>,
    warned: bool,
}

impl<'a> BatchSampler<'a> {
    pub fn new(sources: &'a [TrainingSource], batch_size: usize) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Empty("training sources"));
        }
        if batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        let mut caption_groups = Vec::with_capacity(sources.len());
        let mut pair_groups = Vec::with_capacity(sources.len());
        for s in sources {
            let groups: Vec<(usize, Vec<usize>)> = s
                .corpus
                .captions_by_image(None)
                .into_iter()
                .enumerate()
                .filter(|(_, caps)| !caps.is_empty())
                .collect();
            if groups.is_empty() {
                return Err(Error::Config(format!(
                    "training corpus {} has no captions",
                    s.corpus.name()
                )));
            }
            caption_groups.push(groups);
            let mut by_image: Vec<Vec<usize>> = Vec::new();
            if let Some(c2c) = &s.c2c {
                let mut last: Option<&str> = None;
                for (pi, p) in c2c.pairs.iter().enumerate() {
                    if last != Some(p.image_id.as_str()) {
                        by_image.push(Vec::new());
                        last = Some(p.image_id.as_str());
                    }
                    by_image.last_mut().expect("pushed").push(pi);
                }
            }
            pair_groups.push(by_image);
        }
        Ok(Self {
            sources,
            batch_size,
            caption_groups,
            pair_groups,
            warned: false,
        })
    }

    /// With `false`, sources only ever yield image–caption batches.
    pub fn with_c2c_enabled(mut self, enabled: bool) -> Self {
        if !enabled {
            for g in &mut self.pair_groups {
                g.clear();
            }
        }
        self
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn pick<R: Rng + ?Sized>(&mut self, rng: &mut R, population: usize, source: &str) -> Vec<usize> {
        if self.batch_size <= population {
            sample_indices(rng, population, self.batch_size).into_vec()
        } else {
            if !self.warned {
                log::warn!(
                    "batch size {} exceeds the {population} items of {source}; sampling with replacement",
                    self.batch_size
                );
                self.warned = true;
            }
            (0..self.batch_size).map(|_| rng.random_range(0..population)).collect()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, vocab: &Vocabulary, rng: &mut R) -> Result<Batch> {
        let si = rng.random_range(0..self.sources.len());
        let source = &self.sources[si];
        let name = source.corpus.name().to_owned();
        let use_c2c = !self.pair_groups[si].is_empty() && rng.random_bool(0.5);
        let captions = source.corpus.captions();
        if use_c2c {
            let c2c = source.c2c.as_ref().expect("pair groups imply pairs");
            let n = self.pair_groups[si].len();
            let picks = self.pick(rng, n, &name);
            let mut left = Vec::with_capacity(picks.len());
            let mut right = Vec::with_capacity(picks.len());
            let mut left_ids = Vec::with_capacity(picks.len());
            let mut right_ids = Vec::with_capacity(picks.len());
            for g in picks {
                let group = &self.pair_groups[si][g];
                let pair = &c2c.pairs[group[rng.random_range(0..group.len())]];
                let (l, r) = (&captions[pair.left], &captions[pair.right]);
                left.push(vocab.encode(&l.tokens));
                right.push(vocab.encode(&r.tokens));
                left_ids.push(l.image_id.clone());
                right_ids.push(r.image_id.clone());
            }
            Ok(Batch {
                task: Task::CaptionCaption,
                source: name,
                left_image_ids: left_ids,
                right_image_ids: right_ids,
                data: BatchData::CaptionCaption { left, right },
            })
        } else {
            let n = self.caption_groups[si].len();
            let picks = self.pick(rng, n, &name);
            let mut rows = Vec::with_capacity(picks.len());
            let mut seqs = Vec::with_capacity(picks.len());
            let mut image_ids = Vec::with_capacity(picks.len());
            let mut caption_image_ids = Vec::with_capacity(picks.len());
            for g in picks {
                let (row, caps) = &self.caption_groups[si][g];
                let cap = &captions[caps[rng.random_range(0..caps.len())]];
                rows.push(*row);
                seqs.push(vocab.encode(&cap.tokens));
                image_ids.push(source.corpus.image_ids()[*row].clone());
                caption_image_ids.push(cap.image_id.clone());
            }
            Ok(Batch {
                task: Task::ImageCaption,
                source: name,
                left_image_ids: image_ids,
                right_image_ids: caption_image_ids,
                data: BatchData::ImageCaption {
                    features: source.corpus.features().gather_rows(&rows),
                    captions: seqs,
                },
            })
        }
    }
}

/// One-shot convenience over [`BatchSampler`].
pub fn sample_batch<R: Rng + ?Sized>(
    sources: &[TrainingSource],
    vocab: &Vocabulary,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    BatchSampler::new(sources, batch_size)?.sample(vocab, rng)
}
