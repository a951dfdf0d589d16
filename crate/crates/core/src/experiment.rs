//! Config-driven pipeline stages: synthetic data, training, evaluation,
//! pseudopairs, translation ingestion, loss comparison and report merging.
//!
//! Every stage writes deterministic artifacts into an output directory.
//! Wall-clock information goes only into `<stage>.meta.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::io::{caption_lines, read_json, write_json, write_jsonl};
use crate::data::{
    generate_synthetic, ingest_translations, load_corpus, write_corpus, CaptionedCorpus, Provenance, SynthSpec,
    TrainingSource,
};
use crate::encoders::{build_vocabulary, load_checkpoint, save_checkpoint, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_report, translation_retrieval, RetrievalReport, TranslationScores};
use crate::loss::LossVariant;
use crate::pseudopairs::{apply_filter, diagnostics, generate, PseudoPair, PseudoPairDiagnostics};
use crate::train::{run_pseudopair_cycle, PseudoPairConfig, TrainConfig, TrainLog, Trainer, ValidationEvaluator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationSource {
    pub path: PathBuf,
    pub language: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub name: String,
    pub features: PathBuf,
    pub captions: PathBuf,
    pub role: Role,
    /// Languages to evaluate; empty means all languages in the corpus.
    #[serde(default)]
    pub languages: Vec<String>,
    /// Language pair for the caption–caption task on a training corpus.
    #[serde(default)]
    pub c2c: Option<[String; 2]>,
    #[serde(default)]
    pub translations: Vec<TranslationSource>,
    /// Whether translated captions also form caption–caption pairs.
    #[serde(default = "yes")]
    pub translations_in_c2c: bool,
}

fn yes() -> bool {
    true
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "one")]
    pub vocab_min_count: usize,
    #[serde(default)]
    pub corpora: Vec<CorpusConfig>,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default)]
    pub pseudopairs: Option<PseudoPairConfig>,
    /// Caption languages paired position-wise per image for translation retrieval.
    #[serde(default)]
    pub translation_languages: Option<[String; 2]>,
    /// Ground-truth concepts (as written by `synth`) for pseudopair diagnostics.
    #[serde(default)]
    pub concepts: Option<PathBuf>,
    /// Earlier pair file to compare pseudopairs against.
    #[serde(default)]
    pub reference_pairs: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: default_out(),
            seeds: default_seeds(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab_min_count: 1,
            corpora: Vec::new(),
            synth: SynthSpec::default(),
            pseudopairs: None,
            translation_languages: None,
            concepts: None,
            reference_pairs: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for c in &mut self.corpora {
            fix(&mut c.features);
            fix(&mut c.captions);
            for t in &mut c.translations {
                fix(&mut t.path);
            }
        }
        if let Some(p) = &mut self.concepts {
            fix(p);
        }
        if let Some(p) = &mut self.reference_pairs {
            fix(p);
        }
    }

    /// Checks values, and with `require_corpora` that corpora of each role
    /// exist and that their files are present.
    pub fn validate(&self, require_corpora: bool) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.vocab_min_count == 0 {
            return Err(Error::Config("vocab_min_count must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if let Some(p) = &self.pseudopairs {
            p.validate()?;
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.corpora {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Config(format!("corpus name {} used twice", c.name)));
            }
            let mut paths = vec![&c.features, &c.captions];
            paths.extend(c.translations.iter().map(|t| &t.path));
            for p in paths {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "corpus {}: {} does not exist",
                        c.name,
                        p.display()
                    )));
                }
            }
        }
        if require_corpora {
            for role in [Role::Train, Role::Val] {
                if !self.corpora.iter().any(|c| c.role == role) {
                    return Err(Error::Config(format!("no corpus with role {role:?}").to_lowercase()));
                }
            }
        }
        Ok(())
    }

    fn with_role(&self, role: Role) -> impl Iterator<Item = &CorpusConfig> {
        self.corpora.iter().filter(move |c| c.role == role)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Sidecar with the only non-deterministic information of a run.
fn write_meta(out: &Path, command: &str, started: SystemTime, elapsed: f64) -> Result<()> {
    #[derive(Serialize)]
    struct Meta<'a> {
        command: &'a str,
        version: &'a str,
        started_unix: u64,
        elapsed_seconds: f64,
    }
    let started_unix = started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    write_json(
        &out.join(format!("{command}.meta.json")),
        &Meta {
            command,
            version: env!("CARGO_PKG_VERSION"),
            started_unix,
            elapsed_seconds: elapsed,
        },
    )
}

struct Clock(SystemTime, Instant);

impl Clock {
    fn start() -> Self {
        Clock(SystemTime::now(), Instant::now())
    }

    fn finish(&self, out: &Path, command: &str) -> Result<()> {
        write_meta(out, command, self.0, self.1.elapsed().as_secs_f64())
    }
}

pub fn load_corpus_config(c: &CorpusConfig) -> Result<CaptionedCorpus> {
    let mut corpus = load_corpus(&c.features, &c.captions)?.with_name(c.name.clone());
    for t in &c.translations {
        corpus = ingest_translations(corpus, &t.path, &t.language)?;
    }
    Ok(match c.role {
        Role::Train => corpus,
        Role::Val => corpus.with_split(crate::data::Split::Val),
        Role::Test => corpus.with_split(crate::data::Split::Test),
    })
}

fn training_source(c: &CorpusConfig, corpus: CaptionedCorpus) -> TrainingSource {
    let Some([l, r]) = &c.c2c else {
        return TrainingSource::new(corpus);
    };
    let mut src = TrainingSource::with_c2c(corpus, l, r);
    if !c.translations_in_c2c {
        if let Some(set) = &mut src.c2c {
            let caps = src.corpus.captions();
            set.pairs.retain(|p| {
                caps[p.left].provenance != Provenance::Translated && caps[p.right].provenance != Provenance::Translated
            });
            if set.pairs.is_empty() {
                src.c2c = None;
            }
        }
    }
    src
}

/// Corpora of one experiment, loaded and grouped by role.
#[derive(Clone, Debug)]
pub struct LoadedCorpora {
    pub train: Vec<TrainingSource>,
    pub val: Vec<(CaptionedCorpus, Vec<String>)>,
    pub test: Vec<(CaptionedCorpus, Vec<String>)>,
}

pub fn load_corpora(cfg: &ExperimentConfig) -> Result<LoadedCorpora> {
    let mut out = LoadedCorpora {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in &cfg.corpora {
        let corpus = load_corpus_config(c)?;
        if corpus.feature_dim() != cfg.model.image_dim {
            return Err(Error::Dimension {
                expected: cfg.model.image_dim,
                found: corpus.feature_dim(),
                context: format!("feature width of corpus {}", c.name),
            });
        }
        match c.role {
            Role::Train => out.train.push(training_source(c, corpus)),
            Role::Val => out.val.push((corpus, c.languages.clone())),
            Role::Test => out.test.push((corpus, c.languages.clone())),
        }
    }
    Ok(out)
}

/// Evaluates every corpus. With several corpora, language labels are
/// prefixed by the corpus name.
pub fn evaluate_all(model: &Model, corpora: &[(CaptionedCorpus, Vec<String>)]) -> Result<RetrievalReport> {
    let mut languages = Vec::new();
    for (corpus, langs) in corpora {
        let r = evaluate(model, corpus, langs)?;
        for mut l in r.languages {
            if corpora.len() > 1 {
                l.language = format!("{}:{}", corpus.name(), l.language);
            }
            languages.push(l);
        }
    }
    if languages.is_empty() {
        return Err(Error::Empty("evaluation corpora"));
    }
    Ok(RetrievalReport::new(languages))
}

fn write_report(dir: &Path, stem: &str, report: &RetrievalReport) -> Result<()> {
    write_json(&dir.join(format!("{stem}.json")), report)?;
    write_text(&dir.join(format!("{stem}.txt")), &report.to_table())?;
    let mut csv = String::from(RetrievalReport::csv_header());
    csv.push('\n');
    for row in report.csv_rows() {
        csv.push_str(&row);
        csv.push('\n');
    }
    write_text(&dir.join(format!("{stem}.csv")), &csv)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concepts {
    pub images: BTreeMap<String, usize>,
    pub captions: BTreeMap<String, usize>,
}

/// Writes the synthetic corpora, their ground truth, a manifest and a
/// starter experiment config into `out`.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<SynthManifest> {
    let clock = Clock::start();
    let s = generate_synthetic(spec)?;
    create_dir(out)?;
    let mut files = Vec::new();
    for corpus in s.corpora() {
        let f = format!("{}.imgf", corpus.name());
        let c = format!("{}.jsonl", corpus.name());
        write_corpus(corpus, &out.join(&f), &out.join(&c))?;
        files.push(f);
        files.push(c);
    }
    write_json(
        &out.join("concepts.json"),
        &Concepts {
            images: s.image_concepts.clone(),
            captions: s.caption_concepts.clone(),
        },
    )?;
    files.push("concepts.json".into());
    let corpus = |name: &str, role: Role, c2c: bool| CorpusConfig {
        name: name.into(),
        features: format!("{name}.imgf").into(),
        captions: format!("{name}.jsonl").into(),
        role,
        languages: Vec::new(),
        c2c: c2c.then(|| [spec.first_language.clone(), spec.second_language.clone()]),
        translations: Vec::new(),
        translations_in_c2c: true,
    };
    let experiment = ExperimentConfig {
        model: ModelConfig {
            word_dim: 32,
            hidden_dim: 64,
            image_dim: spec.feature_dim,
        },
        corpora: vec![
            corpus("aligned", Role::Train, true),
            corpus("disjoint", Role::Train, false),
            corpus("val", Role::Val, false),
            corpus("test", Role::Test, false),
        ],
        synth: spec.clone(),
        pseudopairs: Some(PseudoPairConfig {
            source_corpus: "aligned".into(),
            source_language: spec.first_language.clone(),
            target_corpus: "disjoint".into(),
            target_language: spec.second_language.clone(),
            filter: Default::default(),
            mode: Default::default(),
            vocab_min_count: 1,
        }),
        translation_languages: Some([spec.first_language.clone(), spec.second_language.clone()]),
        concepts: Some("concepts.json".into()),
        ..ExperimentConfig::default()
    };
    write_json(&out.join("experiment.json"), &experiment)?;
    files.push("experiment.json".into());
    let manifest = SynthManifest {
        spec: spec.clone(),
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    clock.finish(out, "synth")?;
    Ok(manifest)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub log: TrainLog,
    pub report: RetrievalReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub runs: Vec<SeedRun>,
    pub mean: RetrievalReport,
}

fn build_vocab(cfg: &ExperimentConfig, train: &[TrainingSource]) -> Result<crate::encoders::Vocabulary> {
    let corpora: Vec<&CaptionedCorpus> = train.iter().map(|s| &s.corpus).collect();
    build_vocabulary(&corpora, cfg.vocab_min_count)
}

/// Trains one model for `seed` and evaluates it on the test corpora.
pub fn train_seed(
    cfg: &ExperimentConfig,
    data: &LoadedCorpora,
    seed: u64,
) -> Result<(Model, TrainLog, RetrievalReport)> {
    let vocab = build_vocab(cfg, &data.train)?;
    let model = Model::new(vocab, &cfg.model, seed);
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let mut evaluator = ValidationEvaluator::new(data.val.clone())?;
    let outcome = Trainer::new(model, &data.train, tcfg)?.run(&mut evaluator)?;
    let report = if data.test.is_empty() {
        evaluate_all(&outcome.model, &data.val)?
    } else {
        evaluate_all(&outcome.model, &data.test)?
    };
    Ok((outcome.model, outcome.log, report))
}

/// Per seed: `seed-<n>/model.ckpt`, `train_log.jsonl`, `train_summary.json`
/// and `report.{json,txt,csv}`; plus a mean report over seeds in `out`.
/// A diverged run still writes its artifacts and then fails with
/// [`Error::NonFinite`].
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let clock = Clock::start();
    cfg.validate(true)?;
    let data = load_corpora(cfg)?;
    create_dir(out)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut diverged = None;
    for &seed in &cfg.seeds {
        log::info!("training seed {seed}");
        let dir = out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        let (model, mut log, report) = train_seed(cfg, &data, seed)?;
        let ckpt = dir.join("model.ckpt");
        save_checkpoint(&model, &ckpt)?;
        log.best_checkpoint = Some(PathBuf::from("model.ckpt"));
        log.write_inspections(&dir.join("train_log.jsonl"))?;
        write_json(&dir.join("train_summary.json"), &log)?;
        write_report(&dir, "report", &report)?;
        if let Some(f) = &log.failure {
            diverged.get_or_insert_with(|| format!("seed {seed}: {f}"));
        }
        runs.push(SeedRun { seed, log, report });
    }
    let mean = mean_report(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    write_report(out, "report", &mean)?;
    clock.finish(out, "train")?;
    if let Some(d) = diverged {
        return Err(Error::NonFinite(d));
    }
    Ok(TrainSummary { runs, mean })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: RetrievalReport,
    pub translation: Vec<(String, TranslationScores)>,
}

/// Caption texts of two languages paired by position within each image.
pub fn translation_pairs(corpus: &CaptionedCorpus, left: &str, right: &str) -> (Vec<String>, Vec<String>) {
    let l = corpus.captions_by_image(Some(left));
    let r = corpus.captions_by_image(Some(right));
    let caps = corpus.captions();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (li, ri) in l.iter().zip(&r) {
        for (&x, &y) in li.iter().zip(ri) {
            a.push(caps[x].text.clone());
            b.push(caps[y].text.clone());
        }
    }
    (a, b)
}

/// Test-set retrieval report for a checkpoint, plus translation retrieval
/// when `translation_languages` is set.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<EvalOutput> {
    let clock = Clock::start();
    cfg.validate(false)?;
    let model = load_checkpoint(checkpoint)?;
    let mut corpora = Vec::new();
    for c in cfg.with_role(Role::Test) {
        corpora.push((load_corpus_config(c)?, c.languages.clone()));
    }
    if corpora.is_empty() {
        return Err(Error::Config("no corpus with role test".into()));
    }
    let report = evaluate_all(&model, &corpora)?;
    let mut translation = Vec::new();
    if let Some([l, r]) = &cfg.translation_languages {
        for (corpus, _) in &corpora {
            let (a, b) = translation_pairs(corpus, l, r);
            if !a.is_empty() {
                translation.push((corpus.name().to_owned(), translation_retrieval(&model, &a, &b)?));
            }
        }
    }
    create_dir(out)?;
    write_report(out, "eval_report", &report)?;
    if !translation.is_empty() {
        write_json(&out.join("translation.json"), &translation)?;
    }
    clock.finish(out, "eval")?;
    Ok(EvalOutput { report, translation })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PseudoPairRun {
    pub generated: usize,
    pub kept: usize,
    pub diagnostics: PseudoPairDiagnostics,
    pub base_score: Option<f64>,
    pub retrained_score: Option<f64>,
    pub retrained_report: Option<RetrievalReport>,
}

fn load_concepts(cfg: &ExperimentConfig) -> Result<Option<BTreeMap<String, usize>>> {
    match &cfg.concepts {
        Some(p) => Ok(Some(read_json::<Concepts>(p)?.captions)),
        None => Ok(None),
    }
}

/// Writes `pairs.jsonl` and `diagnostics.json`. With `retrain`, also runs
/// the pseudopair training cycle and writes its checkpoint and reports
/// under `cycle/`.
pub fn cmd_pseudopairs(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path, retrain: bool) -> Result<PseudoPairRun> {
    let clock = Clock::start();
    cfg.validate(retrain)?;
    let pcfg = cfg
        .pseudopairs
        .as_ref()
        .ok_or_else(|| Error::Config("config has no pseudopairs section".into()))?;
    let model = load_checkpoint(checkpoint)?;
    let concepts = load_concepts(cfg)?;
    let reference: Option<Vec<PseudoPair>> = match &cfg.reference_pairs {
        Some(p) => Some(crate::data::io::read_jsonl(p)?),
        None => None,
    };
    let find = |name: &str| -> Result<CaptionedCorpus> {
        let c = cfg
            .corpora
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("no corpus named {name}")))?;
        load_corpus_config(c)
    };
    let source = find(&pcfg.source_corpus)?;
    let target = find(&pcfg.target_corpus)?;
    let all = generate(&model, &source, &pcfg.source_language, &target, &pcfg.target_language)?;
    let pairs = apply_filter(&all, pcfg.filter);
    let source_captions = source
        .captions()
        .iter()
        .filter(|c| c.language == pcfg.source_language)
        .count();
    let diag = diagnostics(&pairs, source_captions, reference.as_deref(), concepts.as_ref());
    create_dir(out)?;
    write_jsonl(&out.join("pairs.jsonl"), &pairs)?;
    write_json(&out.join("diagnostics.json"), &diag)?;
    let mut run = PseudoPairRun {
        generated: all.len(),
        kept: pairs.len(),
        diagnostics: diag,
        base_score: None,
        retrained_score: None,
        retrained_report: None,
    };
    if pairs.is_empty() {
        return Err(Error::NoPseudoPairs);
    }
    if retrain {
        let data = load_corpora(cfg)?;
        let seed = cfg.seeds[0];
        let tcfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let mut evaluator = ValidationEvaluator::new(data.val.clone())?;
        let cycle = run_pseudopair_cycle(&model, &data.train, pcfg, &tcfg, &mut evaluator, concepts.as_ref())?;
        let dir = out.join("cycle");
        create_dir(&dir)?;
        save_checkpoint(&cycle.outcome.model, &dir.join("model.ckpt"))?;
        let mut log = cycle.outcome.log.clone();
        log.best_checkpoint = Some(PathBuf::from("model.ckpt"));
        log.write_inspections(&dir.join("train_log.jsonl"))?;
        write_json(&dir.join("train_summary.json"), &log)?;
        let eval_set = if data.test.is_empty() { &data.val } else { &data.test };
        write_report(&dir, "base_report", &evaluate_all(&model, eval_set)?)?;
        let after = evaluate_all(&cycle.outcome.model, eval_set)?;
        write_report(&dir, "report", &after)?;
        run.base_score = Some(cycle.base_score);
        run.retrained_score = Some(log.best_score);
        run.retrained_report = Some(after);
        if let Some(f) = &log.failure {
            return Err(Error::NonFinite(f.clone()));
        }
    }
    clock.finish(out, "pseudopairs")?;
    Ok(run)
}

/// Writes each corpus that has translations as `<name>.jsonl` with the
/// translated captions included. Returns caption counts added per corpus.
pub fn cmd_ingest_translations(cfg: &ExperimentConfig, out: &Path) -> Result<BTreeMap<String, usize>> {
    let clock = Clock::start();
    cfg.validate(false)?;
    create_dir(out)?;
    let mut added = BTreeMap::new();
    for c in cfg.corpora.iter().filter(|c| !c.translations.is_empty()) {
        let before = load_corpus(&c.features, &c.captions)?.captions().len();
        let corpus = load_corpus_config(c)?;
        write_jsonl(&out.join(format!("{}.jsonl", c.name)), &caption_lines(&corpus))?;
        added.insert(c.name.clone(), corpus.captions().len() - before);
    }
    if added.is_empty() {
        return Err(Error::Config("no corpus lists translations".into()));
    }
    write_json(&out.join("ingest.json"), &added)?;
    clock.finish(out, "ingest-translations")?;
    Ok(added)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComparisonRow {
    pub variant: LossVariant,
    /// `None` for the mean over seeds.
    pub seed: Option<u64>,
    pub sum_of_sums: f64,
    pub updates: usize,
}

fn variant_name(v: LossVariant) -> &'static str {
    match v {
        LossVariant::MaxViolation => "max-violation",
        LossVariant::SumViolation => "sum-violation",
    }
}

/// Trains every seed with both loss variants and writes
/// `compare_losses.csv`: one row per variant and seed, then one mean row
/// per variant.
pub fn cmd_compare_losses(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<LossComparisonRow>> {
    let clock = Clock::start();
    cfg.validate(true)?;
    let data = load_corpora(cfg)?;
    let mut rows = Vec::new();
    for variant in [LossVariant::MaxViolation, LossVariant::SumViolation] {
        let mut c = cfg.clone();
        c.train.loss.variant = variant;
        let mut scores = Vec::new();
        for &seed in &cfg.seeds {
            let (_, log, report) = train_seed(&c, &data, seed)?;
            if let Some(f) = log.failure {
                return Err(Error::NonFinite(format!("{} seed {seed}: {f}", variant_name(variant))));
            }
            scores.push(report.sum_of_sums);
            rows.push(LossComparisonRow {
                variant,
                seed: Some(seed),
                sum_of_sums: report.sum_of_sums,
                updates: log.updates,
            });
        }
        let n = scores.len() as f64;
        let per: Vec<&LossComparisonRow> = rows.iter().filter(|r| r.variant == variant).collect();
        let updates = per.iter().map(|r| r.updates).sum::<usize>() / per.len();
        rows.push(LossComparisonRow {
            variant,
            seed: None,
            sum_of_sums: scores.iter().sum::<f64>() / n,
            updates,
        });
    }
    create_dir(out)?;
    let mut csv = String::from("variant,seed,sum_of_sums,updates\n");
    for r in &rows {
        let seed = r.seed.map_or_else(|| "mean".to_owned(), |s| s.to_string());
        csv.push_str(&format!(
            "{},{seed},{},{}\n",
            variant_name(r.variant),
            r.sum_of_sums,
            r.updates
        ));
    }
    write_text(&out.join("compare_losses.csv"), &csv)?;
    write_json(&out.join("compare_losses.json"), &rows)?;
    clock.finish(out, "compare-losses")?;
    Ok(rows)
}

/// Averages report JSON files (for example one per seed) into
/// `mean_report.{json,txt,csv}` and returns the table text.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one input report".into()));
    }
    let reports = inputs
        .iter()
        .map(|p| read_json::<RetrievalReport>(p))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_report(&reports)?;
    create_dir(out)?;
    write_report(out, "mean_report", &mean)?;
    Ok(mean.to_table())
}
