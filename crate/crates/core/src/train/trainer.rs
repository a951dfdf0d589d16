use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_gradients, global_norm, Adam};
use crate::data::{Batch, BatchData, BatchSampler, CaptionedCorpus, Task, TrainingSource};
use crate::encoders::{encode_images_on_tape, encode_sentences_on_tape, Model};
use crate::error::{Error, Result};
use crate::eval::{evaluate, RetrievalReport};
use crate::grad::Tape;
use crate::loss::{c2c_loss_on_tape, ranking_loss_on_tape, similarity_on_tape, LossConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub eval_interval_updates: usize,
    pub patience_inspections: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Run the caption–caption task on sources that have pairs.
    pub c2c: bool,
    pub max_updates: usize,
    /// Also inspect the model before the first update.
    pub inspect_at_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 2e-4,
            grad_clip_norm: 2.0,
            eval_interval_updates: 500,
            patience_inspections: 10,
            seed: 1,
            loss: LossConfig::default(),
            c2c: true,
            max_updates: 50_000,
            inspect_at_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if [self.learning_rate, self.grad_clip_norm]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(Error::Config(
                "learning_rate and grad_clip_norm must be positive".into(),
            ));
        }
        if self.eval_interval_updates == 0 || self.patience_inspections == 0 || self.max_updates == 0 {
            return Err(Error::Config(
                "eval_interval_updates, patience_inspections and max_updates must be positive".into(),
            ));
        }
        self.loss.validate()
    }
}

/// Scores a model snapshot; higher is better.
pub trait Evaluator {
    fn score(&mut self, model: &Model) -> Result<f64>;
}

impl<F: FnMut(&Model) -> Result<f64>> Evaluator for F {
    fn score(&mut self, model: &Model) -> Result<f64> {
        self(model)
    }
}

/// Sum of recall over validation corpora and their languages.
#[derive(Clone, Debug)]
pub struct ValidationEvaluator {
    corpora: Vec<(CaptionedCorpus, Vec<String>)>,
    last: Vec<RetrievalReport>,
}

impl ValidationEvaluator {
    /// An empty language list evaluates every language of that corpus.
    pub fn new(corpora: Vec<(CaptionedCorpus, Vec<String>)>) -> Result<Self> {
        if corpora.is_empty() {
            return Err(Error::Empty("validation corpora"));
        }
        Ok(Self {
            corpora,
            last: Vec::new(),
        })
    }

    pub fn last_reports(&self) -> &[RetrievalReport] {
        &self.last
    }
}

impl Evaluator for ValidationEvaluator {
    fn score(&mut self, model: &Model) -> Result<f64> {
        self.last.clear();
        let mut total = 0.0;
        for (corpus, langs) in &self.corpora {
            let r = evaluate(model, corpus, langs)?;
            total += r.sum_of_sums;
            self.last.push(r);
        }
        Ok(total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxUpdates,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inspection {
    pub index: usize,
    pub update: usize,
    pub score: f64,
    pub best_score: f64,
    pub improved: bool,
    /// Mean training loss since the previous inspection.
    pub mean_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub inspections: Vec<Inspection>,
    pub best_score: f64,
    pub best_update: usize,
    pub best_checkpoint: Option<PathBuf>,
    pub updates: usize,
    pub task_counts: BTreeMap<Task, usize>,
    pub source_counts: BTreeMap<String, usize>,
    pub stop_reason: StopReason,
    pub failure: Option<String>,
}

impl TrainLog {
    /// One JSON line per inspection.
    pub fn write_inspections(&self, path: &Path) -> Result<()> {
        crate::data::io::write_jsonl(path, &self.inspections)
    }

    pub fn task_count(&self, task: Task) -> usize {
        self.task_counts.get(&task).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub update: usize,
    pub task: Task,
    pub source: String,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

/// Owns the model and optimizer state for one training run.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    model: Model,
    sampler: BatchSampler<'a>,
    optimizer: Adam,
    rng: ChaCha8Rng,
    updates: usize,
    task_counts: BTreeMap<Task, usize>,
    source_counts: BTreeMap<String, usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, sources: &'a [TrainingSource], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let image_dim = model.config().image_dim;
        for s in sources {
            if s.corpus.feature_dim() != image_dim {
                return Err(Error::Dimension {
                    expected: image_dim,
                    found: s.corpus.feature_dim(),
                    context: format!("features of training corpus {}", s.corpus.name()),
                });
            }
        }
        let sampler = BatchSampler::new(sources, cfg.batch_size)?.with_c2c_enabled(cfg.c2c);
        let optimizer = Adam::new(&model.params.tensors());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            cfg,
            model,
            sampler,
            optimizer,
            rng,
            updates: 0,
            task_counts: BTreeMap::new(),
            source_counts: BTreeMap::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn batch_loss(&self, batch: &Batch) -> Result<(f64, Vec<Option<crate::grad::Tensor<f32>>>)> {
        let mut tape = Tape::<f32>::new();
        let p = self.model.params.bind(&mut tape)?;
        let loss = match &batch.data {
            BatchData::ImageCaption { features, captions } => {
                let img = encode_images_on_tape(&mut tape, &p, features.clone())?;
                let txt = encode_sentences_on_tape(&mut tape, &p, captions)?;
                let s = similarity_on_tape(&mut tape, img, txt)?;
                ranking_loss_on_tape(&mut tape, s, &self.cfg.loss)?
            }
            BatchData::CaptionCaption { left, right } => {
                let a = encode_sentences_on_tape(&mut tape, &p, left)?;
                let b = encode_sentences_on_tape(&mut tape, &p, right)?;
                c2c_loss_on_tape(&mut tape, a, b, &self.cfg.loss)?
            }
        };
        let value = f64::from(tape.value(loss).item());
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} loss at update {} on {}",
                batch.task,
                self.updates + 1,
                batch.source
            )));
        }
        let mut grads = tape.backward(loss)?;
        Ok((value, p.vars().iter().map(|&v| grads.take(v)).collect()))
    }

    /// Samples one batch and applies one clipped Adam update.
    pub fn step(&mut self) -> Result<StepInfo> {
        let batch = self.sampler.sample(&self.model.vocab, &mut self.rng)?;
        let (loss, mut grads) = self.batch_loss(&batch)?;
        let grad_norm = global_norm(&grads);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient norm at update {}",
                self.updates + 1
            )));
        }
        clip_gradients(&mut grads, self.cfg.grad_clip_norm);
        let clipped_norm = global_norm(&grads);
        let mut params = self.model.params.tensors_mut();
        self.optimizer.step(&mut params, &grads, self.cfg.learning_rate)?;
        self.updates += 1;
        *self.task_counts.entry(batch.task).or_default() += 1;
        *self.source_counts.entry(batch.source.clone()).or_default() += 1;
        Ok(StepInfo {
            update: self.updates,
            task: batch.task,
            source: batch.source,
            loss,
            grad_norm,
            clipped_norm,
        })
    }

    /// Trains until patience runs out, the update cap is hit or the loss
    /// diverges, and returns the best inspected model.
    pub fn run(self, evaluator: &mut dyn Evaluator) -> Result<TrainOutcome> {
        self.run_observed(evaluator, &mut |_| {})
    }

    pub fn run_observed(
        mut self,
        evaluator: &mut dyn Evaluator,
        observer: &mut dyn FnMut(&StepInfo),
    ) -> Result<TrainOutcome> {
        let interval = self.cfg.eval_interval_updates;
        let mut stopper = EarlyStopping::new(self.cfg.patience_inspections);
        let mut failure = None;
        if self.cfg.inspect_at_start {
            stopper.inspect(&self.model, self.updates, evaluator)?;
        }
        let stop_reason = loop {
            if self.updates >= self.cfg.max_updates {
                if stopper.inspections.last().is_none_or(|i| i.update != self.updates) {
                    stopper.inspect(&self.model, self.updates, evaluator)?;
                }
                break StopReason::MaxUpdates;
            }
            match self.step() {
                Ok(info) => {
                    stopper.loss_sum += info.loss;
                    stopper.loss_n += 1;
                    observer(&info);
                }
                Err(e) if e.is_numeric_error() => {
                    log::error!("training diverged: {e}");
                    failure = Some(e.to_string());
                    break StopReason::Diverged;
                }
                Err(e) => return Err(e),
            }
            if self.updates.is_multiple_of(interval) && stopper.inspect(&self.model, self.updates, evaluator)? {
                break StopReason::Patience;
            }
        };

        let updates = self.updates;
        let (best_score, best_update, model) = match stopper.best {
            Some(b) => b,
            None => (f64::NEG_INFINITY, updates, self.model),
        };
        Ok(TrainOutcome {
            model,
            log: TrainLog {
                inspections: stopper.inspections,
                best_score,
                best_update,
                best_checkpoint: None,
                updates,
                task_counts: self.task_counts,
                source_counts: self.source_counts,
                stop_reason,
                failure,
            },
        })
    }
}

struct EarlyStopping {
    patience: usize,
    inspections: Vec<Inspection>,
    best: Option<(f64, usize, Model)>,
    bad: usize,
    loss_sum: f64,
    loss_n: usize,
}

impl EarlyStopping {
    fn new(patience: usize) -> Self {
        Self {
            patience,
            inspections: Vec::new(),
            best: None,
            bad: 0,
            loss_sum: 0.0,
            loss_n: 0,
        }
    }

    /// Records one inspection; true once patience is exhausted.
    fn inspect(&mut self, model: &Model, update: usize, evaluator: &mut dyn Evaluator) -> Result<bool> {
        let score = evaluator.score(model)?;
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("validation score at update {update}")));
        }
        let improved = self.best.as_ref().is_none_or(|(b, _, _)| score > *b);
        if improved {
            self.best = Some((score, update, model.clone()));
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        let best_score = self.best.as_ref().map_or(score, |b| b.0);
        log::info!(
            "inspection {} at update {update}: score {score:.2} (best {best_score:.2})",
            self.inspections.len()
        );
        self.inspections.push(Inspection {
            index: self.inspections.len(),
            update,
            score,
            best_score,
            improved,
            mean_loss: (self.loss_n > 0).then(|| self.loss_sum / self.loss_n as f64),
        });
        self.loss_sum = 0.0;
        self.loss_n = 0;
        Ok(self.bad >= self.patience)
    }
}

/// Trains `model` on `sources` with early stopping on `evaluator`.
pub fn train(
    model: Model,
    sources: &[TrainingSource],
    cfg: &TrainConfig,
    evaluator: &mut dyn Evaluator,
) -> Result<TrainOutcome> {
    Trainer::new(model, sources, cfg.clone())?.run(evaluator)
}
