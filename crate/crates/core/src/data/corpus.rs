use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoders::tokenize;
use crate::error::{Error, Result};
use crate::grad::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[default]
    Original,
    Translated,
    Pseudopair,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub image_id: String,
    pub language: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub provenance: Provenance,
}

impl CaptionRecord {
    pub fn new(
        caption_id: impl Into<String>,
        image_id: impl Into<String>,
        language: impl Into<String>,
        text: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let caption_id = caption_id.into();
        let text = text.into();
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(Error::Config(format!("caption {caption_id} has no tokens")));
        }
        Ok(Self {
            caption_id,
            image_id: image_id.into(),
            language: language.into(),
            text,
            tokens,
            provenance,
        })
    }
}

/// Images (as precomputed feature rows) with their captions.
///
/// Every caption references an image in the table, and the feature matrix
/// has one row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionedCorpus {
    name: String,
    split: Split,
    image_ids: Vec<String>,
    image_index: HashMap<String, usize>,
    features: Tensor<f32>,
    captions: Vec<CaptionRecord>,
}

impl CaptionedCorpus {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        image_ids: Vec<String>,
        features: Tensor<f32>,
        captions: Vec<CaptionRecord>,
    ) -> Result<Self> {
        let (rows, _) = features.require_matrix("corpus features")?;
        if rows != image_ids.len() {
            return Err(Error::Dimension {
                expected: image_ids.len(),
                found: rows,
                context: "feature rows vs image count".into(),
            });
        }
        let mut image_index = HashMap::with_capacity(image_ids.len());
        for (i, id) in image_ids.iter().enumerate() {
            if image_index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for c in &captions {
            if !image_index.contains_key(&c.image_id) {
                return Err(Error::DanglingImage {
                    caption_id: c.caption_id.clone(),
                    image_id: c.image_id.clone(),
                });
            }
            if !seen.insert(c.caption_id.as_str()) {
                return Err(Error::DuplicateId(c.caption_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            split,
            image_ids,
            image_index,
            features,
            captions,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn image_row(&self, image_id: &str) -> Option<usize> {
        self.image_index.get(image_id).copied()
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn captions(&self) -> &[CaptionRecord] {
        &self.captions
    }

    pub fn num_images(&self) -> usize {
        self.image_ids.len()
    }

    /// Sorted distinct caption languages.
    pub fn languages(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.captions.iter().map(|c| c.language.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn find_caption(&self, caption_id: &str) -> Option<&CaptionRecord> {
        self.captions.iter().find(|c| c.caption_id == caption_id)
    }

    /// Appends captions, validating image references and id uniqueness.
    pub fn with_captions(self, extra: Vec<CaptionRecord>) -> Result<Self> {
        let mut captions = self.captions;
        captions.extend(extra);
        Self::new(self.name, self.split, self.image_ids, self.features, captions)
    }

    /// Keeps only captions in `language`; images are retained.
    pub fn filter_language(&self, language: &str) -> Self {
        let mut out = self.clone();
        out.captions.retain(|c| c.language == language);
        out
    }

    /// Caption indices grouped by image row, for captions in `language`
    /// (or all languages when `None`).
    pub fn captions_by_image(&self, language: Option<&str>) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.image_ids.len()];
        for (ci, c) in self.captions.iter().enumerate() {
            if language.is_none_or(|l| c.language == l) {
                groups[self.image_index[&c.image_id]].push(ci);
            }
        }
        groups
    }
}
