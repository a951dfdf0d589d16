use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trainer::{Evaluator, TrainConfig, TrainOutcome, Trainer};
use crate::data::TrainingSource;
use crate::encoders::{build_vocabulary, Model};
use crate::error::{Error, Result};
use crate::pseudopairs::{
    apply_filter, augment_with_pseudopairs, diagnostics, generate, FilterPolicy, PseudoPair, PseudoPairDiagnostics,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleMode {
    /// Rebuild the vocabulary and train from freshly initialized parameters.
    Restart,
    /// Continue from the base model with a fresh optimizer.
    #[default]
    FineTune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoPairConfig {
    /// Name of the corpus whose captions are borrowed.
    pub source_corpus: String,
    pub source_language: String,
    /// Name of the corpus whose captions get annotated.
    pub target_corpus: String,
    pub target_language: String,
    #[serde(default)]
    pub filter: FilterPolicy,
    #[serde(default)]
    pub mode: CycleMode,
    /// Minimum token count when a restart rebuilds the vocabulary.
    #[serde(default = "one")]
    pub vocab_min_count: usize,
}

fn one() -> usize {
    1
}

impl PseudoPairConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source_language == self.target_language {
            return Err(Error::Config("pseudopair languages must differ".into()));
        }
        if self.vocab_min_count == 0 {
            return Err(Error::Config("vocab_min_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CycleOutcome {
    /// Pairs before filtering.
    pub generated: usize,
    pub pairs: Vec<PseudoPair>,
    pub diagnostics: PseudoPairDiagnostics,
    pub base_score: f64,
    pub sources: Vec<TrainingSource>,
    pub outcome: TrainOutcome,
}

fn find<'a>(sources: &'a [TrainingSource], name: &str) -> Result<&'a TrainingSource> {
    sources
        .iter()
        .find(|s| s.corpus.name() == name)
        .ok_or_else(|| Error::Config(format!("no training corpus named {name}")))
}

/// Training sources with the target corpus extended by `pairs`.
pub fn augmented_sources(
    sources: &[TrainingSource],
    cfg: &PseudoPairConfig,
    pairs: &[PseudoPair],
) -> Result<Vec<TrainingSource>> {
    let source = find(sources, &cfg.source_corpus)?;
    find(sources, &cfg.target_corpus)?;
    let mut out = Vec::with_capacity(sources.len());
    for s in sources {
        if s.corpus.name() == cfg.target_corpus {
            let corpus = augment_with_pseudopairs(&s.corpus, &source.corpus, pairs)?;
            out.push(TrainingSource::with_c2c(
                corpus,
                &cfg.source_language,
                &cfg.target_language,
            ));
        } else {
            out.push(s.clone());
        }
    }
    Ok(out)
}

/// Mines pseudopairs with `base`, adds them to the target corpus and trains
/// again, either from scratch or from `base`.
pub fn run_pseudopair_cycle(
    base: &Model,
    sources: &[TrainingSource],
    cfg: &PseudoPairConfig,
    train_cfg: &TrainConfig,
    evaluator: &mut dyn Evaluator,
    concepts: Option<&BTreeMap<String, usize>>,
) -> Result<CycleOutcome> {
    cfg.validate()?;
    let source = find(sources, &cfg.source_corpus)?;
    let target = find(sources, &cfg.target_corpus)?;
    let all = generate(
        base,
        &source.corpus,
        &cfg.source_language,
        &target.corpus,
        &cfg.target_language,
    )?;
    let pairs = apply_filter(&all, cfg.filter);
    if pairs.is_empty() {
        return Err(Error::NoPseudoPairs);
    }
    let source_captions = source
        .corpus
        .captions()
        .iter()
        .filter(|c| c.language == cfg.source_language)
        .count();
    let diag = diagnostics(&pairs, source_captions, None, concepts);
    log::info!(
        "{} pseudopairs kept of {}, coverage {:.3}",
        pairs.len(),
        all.len(),
        diag.coverage
    );
    let augmented = augmented_sources(sources, cfg, &pairs)?;
    let base_score = evaluator.score(base)?;
    let mut tcfg = train_cfg.clone();
    let model = match cfg.mode {
        CycleMode::Restart => {
            let corpora: Vec<_> = augmented.iter().map(|s| &s.corpus).collect();
            let vocab = build_vocabulary(&corpora, cfg.vocab_min_count)?;
            Model::new(vocab, &base.config(), train_cfg.seed)
        }
        CycleMode::FineTune => {
            tcfg.inspect_at_start = true;
            base.clone()
        }
    };
    let outcome = Trainer::new(model, &augmented, tcfg)?.run(evaluator)?;
    Ok(CycleOutcome {
        generated: all.len(),
        pairs,
        diagnostics: diag,
        base_score,
        sources: augmented,
        outcome,
    })
}
