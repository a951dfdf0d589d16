//! Seeded synthetic bilingual captioned corpora.
//!
//! Each image carries a latent concept. Its feature vector is the concept's
//! unit-norm center plus isotropic Gaussian noise, and each caption is one of
//! the concept's language-specific content words mixed with sampled function
//! words. The generator keeps the concept labels so that retrieval and
//! pseudopair quality can be scored against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::corpus::{CaptionRecord, CaptionedCorpus, Provenance, Split};
use crate::error::{Error, Result};
use crate::grad::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub concepts: usize,
    /// Images in each training corpus.
    pub images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub captions_per_image_per_language: usize,
    pub noise: f64,
    pub seed: u64,
    pub feature_dim: usize,
    pub first_language: String,
    pub second_language: String,
    /// Function words per caption besides the content word.
    pub distractors: usize,
    /// Content words per concept per language.
    pub synonyms: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            concepts: 50,
            images: 500,
            val_images: 200,
            test_images: 500,
            captions_per_image_per_language: 2,
            noise: 0.1,
            seed: 1,
            feature_dim: 64,
            first_language: "en".into(),
            second_language: "de".into(),
            distractors: 3,
            synonyms: 2,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.concepts == 0 {
            return bad("concepts must be positive");
        }
        if self.concepts > self.images {
            return bad(&format!(
                "concepts ({}) must not exceed images ({})",
                self.concepts, self.images
            ));
        }
        if self.captions_per_image_per_language == 0 || self.synonyms == 0 || self.feature_dim == 0 {
            return bad("captions_per_image_per_language, synonyms and feature_dim must be positive");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and non-negative");
        }
        if self.first_language == self.second_language {
            return bad("languages must differ");
        }
        Ok(())
    }
}

/// Generated corpora plus ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticCorpora {
    /// Both languages on the same images.
    pub aligned: CaptionedCorpus,
    /// Second language only, on images disjoint from `aligned`.
    pub disjoint: CaptionedCorpus,
    pub validation: CaptionedCorpus,
    pub test: CaptionedCorpus,
    pub image_concepts: BTreeMap<String, usize>,
    pub caption_concepts: BTreeMap<String, usize>,
    /// `concepts × feature_dim`, unit-norm rows.
    pub centers: Tensor<f32>,
}

impl SyntheticCorpora {
    pub fn corpora(&self) -> [&CaptionedCorpus; 4] {
        [&self.aligned, &self.disjoint, &self.validation, &self.test]
    }
}

const EN_FUNCTION: &[&str] = &["a", "the", "on", "with", "near", "is", "of", "in", "and", "two"];
const DE_FUNCTION: &[&str] = &["ein", "der", "die", "auf", "mit", "bei", "ist", "von", "im", "und"];
const SHARED_FUNCTION: &[&str] = &["photo", "ok"];
const EN_SYLLABLES: &[&str] = &["ba", "ko", "ri", "tu", "me", "sa", "lo", "pi", "da", "ne", "vy", "gu"];
const DE_SYLLABLES: &[&str] = &[
    "sch", "ei", "au", "berg", "ung", "ma", "tor", "lie", "fen", "zu", "kra", "wo",
];

fn language_inventory(language: &str, first: bool) -> (&'static [&'static str], &'static [&'static str]) {
    match language {
        "en" => (EN_FUNCTION, EN_SYLLABLES),
        "de" => (DE_FUNCTION, DE_SYLLABLES),
        _ if first => (EN_FUNCTION, EN_SYLLABLES),
        _ => (DE_FUNCTION, DE_SYLLABLES),
    }
}

struct Lexicon {
    /// `[language][concept][synonym]`
    content: Vec<Vec<Vec<String>>>,
    function: Vec<Vec<&'static str>>,
}

fn build_lexicon(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Lexicon {
    let mut used: BTreeSet<String> = EN_FUNCTION
        .iter()
        .chain(DE_FUNCTION)
        .chain(SHARED_FUNCTION)
        .map(|s| s.to_string())
        .collect();
    let mut content = Vec::new();
    let mut function = Vec::new();
    for (li, lang) in [&spec.first_language, &spec.second_language].into_iter().enumerate() {
        let (func, syll) = language_inventory(lang, li == 0);
        let mut per_concept = Vec::with_capacity(spec.concepts);
        for _ in 0..spec.concepts {
            let mut words = Vec::with_capacity(spec.synonyms);
            while words.len() < spec.synonyms {
                let n = rng.random_range(2..=3);
                let w: String = (0..n).map(|_| syll[rng.random_range(0..syll.len())]).collect();
                if used.insert(w.clone()) {
                    words.push(w);
                }
            }
            per_concept.push(words);
        }
        content.push(per_concept);
        function.push(func.iter().chain(SHARED_FUNCTION).copied().collect());
    }
    Lexicon { content, function }
}

struct Builder<'a> {
    spec: &'a SynthSpec,
    lexicon: Lexicon,
    centers: Tensor<f32>,
    image_concepts: BTreeMap<String, usize>,
    caption_concepts: BTreeMap<String, usize>,
}

impl Builder<'_> {
    fn caption(&self, lang_idx: usize, concept: usize, rng: &mut ChaCha8Rng) -> String {
        let syn = &self.lexicon.content[lang_idx][concept];
        let func = &self.lexicon.function[lang_idx];
        let mut words: Vec<&str> = (0..self.spec.distractors)
            .map(|_| func[rng.random_range(0..func.len())])
            .collect();
        let pos = rng.random_range(0..=words.len());
        words.insert(pos, &syn[rng.random_range(0..syn.len())]);
        words.join(" ")
    }

    fn corpus(
        &mut self,
        name: &str,
        prefix: &str,
        count: usize,
        split: Split,
        languages: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<CaptionedCorpus> {
        let k = self.spec.concepts;
        let mut concepts: Vec<usize> = (0..count).map(|i| i % k).collect();
        concepts.shuffle(rng);
        let noise = Normal::new(0.0, self.spec.noise).map_err(|e| Error::Config(e.to_string()))?;
        let d = self.spec.feature_dim;
        let mut ids = Vec::with_capacity(count);
        let mut feats = Vec::with_capacity(count * d);
        let mut caps = Vec::new();
        let langs = [&self.spec.first_language, &self.spec.second_language];
        for (i, &c) in concepts.iter().enumerate() {
            let id = format!("{prefix}{i:05}");
            for &x in self.centers.row(c) {
                let n: f64 = if self.spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                feats.push(x + n as f32);
            }
            for &li in languages {
                for j in 0..self.spec.captions_per_image_per_language {
                    let cid = format!("{id}-{}{j}", langs[li]);
                    let text = self.caption(li, c, rng);
                    self.caption_concepts.insert(cid.clone(), c);
                    caps.push(CaptionRecord::new(
                        cid,
                        &id,
                        langs[li].as_str(),
                        text,
                        Provenance::Original,
                    )?);
                }
            }
            self.image_concepts.insert(id.clone(), c);
            ids.push(id);
        }
        CaptionedCorpus::new(name, split, ids, Tensor::new(vec![count, d], feats)?, caps)
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticCorpora> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = build_lexicon(spec, &mut rng);
    let d = spec.feature_dim;
    let mut centers = Vec::with_capacity(spec.concepts * d);
    for _ in 0..spec.concepts {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        centers.extend(v.iter().map(|x| (x / norm) as f32));
    }
    let mut b = Builder {
        spec,
        lexicon,
        centers: Tensor::new(vec![spec.concepts, d], centers)?,
        image_concepts: BTreeMap::new(),
        caption_concepts: BTreeMap::new(),
    };
    let aligned = b.corpus("aligned", "a", spec.images, Split::Train, &[0, 1], &mut rng)?;
    let disjoint = b.corpus("disjoint", "b", spec.images, Split::Train, &[1], &mut rng)?;
    let validation = b.corpus("val", "v", spec.val_images, Split::Val, &[0, 1], &mut rng)?;
    let test = b.corpus("test", "t", spec.test_images, Split::Test, &[0, 1], &mut rng)?;
    Ok(SyntheticCorpora {
        aligned,
        disjoint,
        validation,
        test,
        image_concepts: b.image_concepts,
        caption_concepts: b.caption_concepts,
        centers: b.centers,
    })
}
