//! Stage runner behind the `ehrseq` command line. Every stage reads its
//! inputs from a work directory, writes its artifact there and records a run
//! manifest (config hash, seed, input and output digests).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{extract_encounters, Cohort, CohortRules, Split, Stage, Task, TimeTag};
use crate::dataset::{
    baseline_for, code_matrix, fit_vocabulary, predict_all, score, score_codes, train_model, Dataset, ModelParams, Sample,
};
use crate::error::Error;
use crate::eval::{choose_threshold, earliness_curve, earliness_table, metrics_report, micro_f1, weighted_auroc, MetricsReport, DEFAULT_RESAMPLES};
use crate::explain::{attention_attribution, modality_attributions, occlusion_attribution, render_report, Report, ReportInput};
use crate::fhir::{parse_resource_stream, IngestReport, ResourceReader};
use crate::models::{Arch, Checkpoint, Model};
use crate::synth::{generate_cohort, SynthConfig};
use crate::timeline::{build_timelines, dump_text, ArchiveReader, ArchiveWriter, NumericQuantizer, TokenizerConfig, Vocabulary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_DATA: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: missing artifact {path}")]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::MissingArtifact { .. } => EXIT_MISSING,
            PipelineError::Data { .. } => EXIT_DATA,
        }
    }
}

type PResult<T> = std::result::Result<T, PipelineError>;

trait StageContext<T> {
    fn stage(self, stage: &'static str) -> PResult<T>;
}

impl<T> StageContext<T> for crate::Result<T> {
    fn stage(self, stage: &'static str) -> PResult<T> {
        self.map_err(|e| match e {
            Error::Unsupported(m) => PipelineError::Config(format!("{stage}: {m}")),
            other => PipelineError::Data { stage, message: other.to_string() },
        })
    }
}

impl<T> StageContext<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> PResult<T> {
        self.map_err(|e| PipelineError::Data { stage, message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Raw resource stream (NDJSON).
    pub input: PathBuf,
    /// Directory holding every stage artifact.
    pub work: PathBuf,
    /// Ground-truth manifest written by `synth`.
    pub synth_manifest: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { input: PathBuf::from("resources.ndjson"), work: PathBuf::from("work"), synth_manifest: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub min_count: u64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { min_count: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub n_resamples: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { n_resamples: DEFAULT_RESAMPLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub top_k: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { top_k: 10 }
    }
}

/// Whole-run configuration, read from TOML. `seed` is mandatory; it seeds
/// the synthetic generator, the patient split and every trainer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub cohort: CohortRules,
    pub vocab: VocabConfig,
    pub models: ModelParams,
    pub evaluate: EvaluateConfig,
    pub explain: ExplainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> PResult<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> PResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn seed(&self) -> PResult<u64> {
        self.seed.ok_or_else(|| PipelineError::Config("seed is required (config `seed` or --seed)".into()))
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Synth { out: Option<PathBuf>, manifest: Option<PathBuf> },
    Ingest { input: Option<PathBuf> },
    Cohort,
    BuildVocab { dump_text: bool },
    Train { arch: Arch, task: Task, at: Option<TimeTag>, per_modality: bool },
    Evaluate { task: Task, split: Split, arch: Option<Arch>, at: Option<TimeTag>, out: PathBuf },
    Explain { model: PathBuf, encounter: String, at: TimeTag, out: PathBuf, html: bool, baseline: Option<PathBuf> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Cohort => "cohort",
            Command::BuildVocab { .. } => "build-vocab",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Explain { .. } => "explain",
        }
    }
}

/// Artifact locations inside the work directory.
pub struct Work {
    pub root: PathBuf,
}

impl Work {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Work { root: root.into() }
    }
    pub fn resources(&self) -> PathBuf {
        self.root.join("resources.ndjson")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest_report.json")
    }
    pub fn cohort(&self) -> PathBuf {
        self.root.join("cohort.json")
    }
    pub fn cohort_manifest(&self) -> PathBuf {
        self.root.join("cohort_manifest.ndjson")
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }
    pub fn quantizer(&self) -> PathBuf {
        self.root.join("quantizer.json")
    }
    pub fn timelines(&self) -> PathBuf {
        self.root.join("timelines.bin")
    }
    pub fn timelines_text(&self) -> PathBuf {
        self.root.join("timelines.tsv")
    }
    pub fn checkpoint(&self, task: Task, arch: Arch, tag: TimeTag) -> PathBuf {
        self.root.join("checkpoints").join(format!("{task}_{arch}_{}.ckpt", tag_slug(tag)))
    }
    pub fn earliness(&self, task: Task, arch: Arch) -> PathBuf {
        self.root.join("metrics").join(format!("{task}_{arch}_earliness.tsv"))
    }
    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }
}

/// File-name form of a time tag.
pub fn tag_slug(tag: TimeTag) -> String {
    tag.as_str().replace('+', "p").replace('-', "m")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut f = BufReader::new(File::open(path)?);
    loop {
        let buf = f.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        hasher.update(buf);
        let n = buf.len();
        f.consume(n);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    work: Work,
    seed: u64,
    stage: &'static str,
    /// Manifest file stem; distinguishes repeated runs of one stage.
    run_name: String,
}

impl Runner<'_> {
    fn require(&self, path: &Path) -> PResult<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(PipelineError::MissingArtifact { stage: self.stage, path: path.to_path_buf() })
        }
    }

    fn create(&self, path: &Path) -> PResult<BufWriter<File>> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).stage(self.stage)?;
        }
        Ok(BufWriter::new(File::create(path).stage(self.stage)?))
    }

    fn write_text(&self, path: &Path, text: &str) -> PResult<()> {
        let mut w = self.create(path)?;
        w.write_all(text.as_bytes()).stage(self.stage)?;
        w.flush().stage(self.stage)
    }

    fn display(&self, path: &Path) -> String {
        path.strip_prefix(&self.work.root).unwrap_or(path).display().to_string()
    }

    fn manifest(&self, inputs: &[PathBuf], outputs: &[PathBuf]) -> PResult<PathBuf> {
        let digests = |ps: &[PathBuf]| -> PResult<BTreeMap<String, String>> {
            ps.iter().map(|p| Ok((self.display(p), file_digest(p).stage(self.stage)?))).collect()
        };
        let m = RunManifest {
            stage: self.stage.to_string(),
            config_sha256: self.cfg.digest(),
            seed: self.seed,
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
        };
        let path = self.work.manifest(&self.run_name);
        self.write_text(&path, &(serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"))?;
        Ok(path)
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, path: &Path) -> PResult<T> {
        self.require(path)?;
        let text = fs::read_to_string(path).stage(self.stage)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Data { stage: self.stage, message: format!("{}: {e}", path.display()) })
    }

    fn load_dataset(&self) -> PResult<Dataset> {
        let cohort: Cohort = self.read_json(&self.work.cohort())?;
        let vocab_path = self.work.vocab();
        self.require(&vocab_path)?;
        let vocab = Vocabulary::from_json(&fs::read_to_string(&vocab_path).stage(self.stage)?).stage(self.stage)?;
        let quantizer: NumericQuantizer = self.read_json(&self.work.quantizer())?;
        let tl_path = self.work.timelines();
        self.require(&tl_path)?;
        let timelines = ArchiveReader::new(BufReader::new(File::open(&tl_path).stage(self.stage)?)).stage(self.stage)?.read_all().stage(self.stage)?;
        Ok(Dataset::from_parts(cohort, vocab, quantizer, timelines))
    }

    fn load_checkpoint(&self, path: &Path) -> PResult<Checkpoint> {
        self.require(path)?;
        Checkpoint::read(BufReader::new(File::open(path).stage(self.stage)?)).stage(self.stage)
    }

    fn load_resources(&self) -> PResult<Vec<crate::fhir::FhirResource>> {
        let path = self.work.resources();
        self.require(&path)?;
        let (rs, _) = parse_resource_stream(BufReader::new(File::open(&path).stage(self.stage)?)).stage(self.stage)?;
        Ok(rs)
    }
}

/// Runs one stage. Work is done on a pool of `cfg.jobs` threads.
pub fn run(cmd: &Command, cfg: &RunConfig) -> PResult<Outcome> {
    let seed = cfg.seed()?;
    let run_name = match cmd {
        Command::Train { arch, task, at, .. } => format!("train_{task}_{arch}_{}", tag_slug(at.unwrap_or(task.primary_tag()))),
        Command::Evaluate { task, .. } => format!("evaluate_{task}"),
        Command::Explain { encounter, at, .. } => format!("explain_{encounter}_{}", tag_slug(*at)),
        other => other.name().to_string(),
    };
    let runner = Runner { cfg, work: Work::new(&cfg.paths.work), seed, stage: cmd.name(), run_name };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(|e| PipelineError::Config(e.to_string()))?;
    pool.install(|| match cmd {
        Command::Synth { out, manifest } => synth(&runner, out.as_deref(), manifest.as_deref()),
        Command::Ingest { input } => ingest(&runner, input.as_deref()),
        Command::Cohort => cohort(&runner),
        Command::BuildVocab { dump_text } => build_vocab(&runner, *dump_text),
        Command::Train { arch, task, at, per_modality } => train(&runner, *arch, *task, at.unwrap_or(task.primary_tag()), *per_modality),
        Command::Evaluate { task, split, arch, at, out } => evaluate(&runner, *task, *split, *arch, at.unwrap_or(task.primary_tag()), out),
        Command::Explain { model, encounter, at, out, html, baseline } => {
            explain(&runner, model, encounter, *at, out, *html, baseline.as_deref())
        }
    })
}

fn synth(r: &Runner, out: Option<&Path>, manifest: Option<&Path>) -> PResult<Outcome> {
    let cfg = SynthConfig { seed: r.seed, ..r.cfg.synth.clone() };
    cfg.validate().map_err(|e| PipelineError::Config(format!("synth: {e}")))?;
    let generated = generate_cohort(&cfg).stage(r.stage)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| r.cfg.paths.input.clone());
    let manifest = manifest
        .map(Path::to_path_buf)
        .or_else(|| r.cfg.paths.synth_manifest.clone())
        .unwrap_or_else(|| r.work.root.join("synth_manifest.ndjson"));
    let mut w = r.create(&out)?;
    generated.write_ndjson(&mut w).stage(r.stage)?;
    w.flush().stage(r.stage)?;
    let mut w = r.create(&manifest)?;
    generated.write_manifest(&mut w).stage(r.stage)?;
    w.flush().stage(r.stage)?;
    let outputs = vec![out, manifest];
    let m = r.manifest(&[], &outputs)?;
    Ok(Outcome {
        summary: format!("{} resources, {} encounters", generated.resources.len(), generated.manifest.len()),
        outputs: outputs.into_iter().chain([m]).collect(),
    })
}

/// Streams the input, keeping accepted resources in input order.
fn ingest(r: &Runner, input: Option<&Path>) -> PResult<Outcome> {
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| r.cfg.paths.input.clone());
    r.require(&input)?;
    let mut reader = ResourceReader::new(BufReader::new(File::open(&input).stage(r.stage)?));
    let out_path = r.work.resources();
    let mut out = r.create(&out_path)?;
    while let Some(rec) = reader.next_record().stage(r.stage)? {
        if let Ok(res) = rec {
            writeln!(out, "{}", res.to_line()).stage(r.stage)?;
        }
    }
    out.flush().stage(r.stage)?;
    let report: IngestReport = reader.into_report();
    let report_path = r.work.ingest_report();
    r.write_text(&report_path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    let outputs = vec![out_path, report_path];
    let m = r.manifest(&[input], &outputs)?;
    Ok(Outcome {
        summary: format!("accepted {}, rejected {}", report.resources_accepted, report.resources_rejected),
        outputs: outputs.into_iter().chain([m]).collect(),
    })
}

fn cohort(r: &Runner) -> PResult<Outcome> {
    let resources = r.load_resources()?;
    let (all, extract) = extract_encounters(&resources, &r.cfg.cohort);
    let cohort = Cohort::build(&all, &r.cfg.cohort, r.seed).stage(r.stage)?;
    let state = r.work.cohort();
    r.write_text(&state, &serde_json::to_string(&cohort).expect("cohort serializes"))?;
    let manifest = r.work.cohort_manifest();
    let mut w = r.create(&manifest)?;
    for row in cohort.manifest_rows() {
        serde_json::to_writer(&mut w, &row).map_err(|e| PipelineError::Data { stage: r.stage, message: e.to_string() })?;
        writeln!(w).stage(r.stage)?;
    }
    w.flush().stage(r.stage)?;
    let outputs = vec![state, manifest];
    let m = r.manifest(&[r.work.resources()], &outputs)?;
    Ok(Outcome {
        summary: format!(
            "{} hospitalizations, {} included; dev/val/test patients {}/{}/{}",
            extract.encounters,
            cohort.encounters.len(),
            cohort.split.count(Split::Dev),
            cohort.split.count(Split::Val),
            cohort.split.count(Split::Test)
        ),
        outputs: outputs.into_iter().chain([m]).collect(),
    })
}

fn build_vocab(r: &Runner, dump: bool) -> PResult<Outcome> {
    let resources = r.load_resources()?;
    let cohort: Cohort = r.read_json(&r.work.cohort())?;
    let (q, v) = fit_vocabulary(&resources, &cohort, r.cfg.vocab.min_count).stage(r.stage)?;
    let timelines = build_timelines(&resources, &v, &q, &TokenizerConfig::default());
    let mut outputs = vec![r.work.vocab(), r.work.quantizer(), r.work.timelines()];
    r.write_text(&outputs[0], &(v.to_json() + "\n"))?;
    r.write_text(&outputs[1], &(serde_json::to_string_pretty(&q).expect("quantizer serializes") + "\n"))?;
    let mut w = ArchiveWriter::new(r.create(&outputs[2])?).stage(r.stage)?;
    for t in &timelines {
        w.write(t).stage(r.stage)?;
    }
    w.finish().stage(r.stage)?.flush().stage(r.stage)?;
    if dump {
        let path = r.work.timelines_text();
        let mut w = r.create(&path)?;
        dump_text(&timelines, &v, &mut w).stage(r.stage)?;
        w.flush().stage(r.stage)?;
        outputs.push(path);
    }
    let m = r.manifest(&[r.work.resources(), r.work.cohort()], &outputs)?;
    Ok(Outcome {
        summary: format!("vocabulary {} tokens, {} timelines", v.size(), timelines.len()),
        outputs: outputs.into_iter().chain([m]).collect(),
    })
}

fn train(r: &Runner, arch: Arch, task: Task, tag: TimeTag, per_modality: bool) -> PResult<Outcome> {
    if !task.grid().contains(&tag) {
        return Err(PipelineError::Config(format!("train: {tag} is not a prediction point of {task}")));
    }
    if per_modality && arch != Arch::Tann {
        return Err(PipelineError::Config("train: --per-modality applies to tann".into()));
    }
    let ds = r.load_dataset()?;
    let samples = ds.samples(Stage::Train, task, tag, Split::Dev).stage(r.stage)?;
    let mut params = r.cfg.models.clone().with_seed(r.seed);
    params.per_modality |= per_modality;
    let trained = if arch == Arch::Ensemble {
        ensemble_from_checkpoints(r, task, tag)?
    } else {
        train_model(arch, task, &samples, ds.vocab.size(), &params).stage(r.stage)?
    };
    let mut ckpt = Checkpoint::new(task, tag, trained.model, trained.outputs, r.seed);
    ckpt.excluded_codes = trained.excluded_codes;
    let path = r.work.checkpoint(task, arch, tag);
    let mut w = r.create(&path)?;
    ckpt.write(&mut w).stage(r.stage)?;
    w.flush().stage(r.stage)?;
    let m = r.manifest(&[r.work.cohort(), r.work.vocab(), r.work.timelines()], std::slice::from_ref(&path))?;
    Ok(Outcome { summary: format!("{arch} on {} {task} samples at {tag}", samples.len()), outputs: vec![path, m] })
}

/// Averages the TANN, LSTM and stump checkpoints already trained for the task.
fn ensemble_from_checkpoints(r: &Runner, task: Task, tag: TimeTag) -> PResult<crate::dataset::TrainedModel> {
    let mut members = Vec::new();
    let mut outputs = Vec::new();
    for a in [Arch::Tann, Arch::Lstm, Arch::Stumps] {
        let p = r.work.checkpoint(task, a, tag);
        if p.exists() {
            let c = r.load_checkpoint(&p)?;
            outputs = c.outputs;
            members.push(c.model);
        }
    }
    if members.is_empty() {
        return Err(PipelineError::MissingArtifact { stage: r.stage, path: r.work.checkpoint(task, Arch::Tann, tag) });
    }
    Ok(crate::dataset::TrainedModel { model: crate::models::ensemble(members).stage(r.stage)?, outputs, excluded_codes: Vec::new() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosesMetrics {
    pub weighted_auroc: f64,
    pub codes_scored: usize,
    /// Codes left out: too rare in training, or single-class on this split.
    pub excluded_codes: Vec<String>,
    /// Chosen on the validation split.
    pub threshold: f64,
    pub micro_f1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub arch: Arch,
    pub checkpoint: String,
    pub time_tag: TimeTag,
    pub metrics: Option<MetricsReport>,
    pub earliness: Vec<MetricsReport>,
    pub diagnoses: Option<DiagnosesMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub task: Task,
    pub split: Split,
    pub seed: u64,
    pub n_resamples: usize,
    pub models: Vec<ModelMetrics>,
}

fn evaluate(r: &Runner, task: Task, split: Split, arch: Option<Arch>, tag: TimeTag, out: &Path) -> PResult<Outcome> {
    if split == Split::Dev {
        return Err(PipelineError::Config("evaluate: choose --split val or test".into()));
    }
    let archs: Vec<Arch> = match arch {
        Some(a) => vec![a],
        None => [Arch::Logistic, Arch::Tann, Arch::Lstm, Arch::Stumps, Arch::Ensemble]
            .into_iter()
            .filter(|&a| r.work.checkpoint(task, a, tag).exists())
            .collect(),
    };
    let first = arch.unwrap_or(Arch::Tann);
    if archs.is_empty() {
        return Err(PipelineError::MissingArtifact { stage: r.stage, path: r.work.checkpoint(task, first, tag) });
    }
    let ckpts: Vec<(Arch, PathBuf, Checkpoint)> = archs
        .iter()
        .map(|&a| {
            let p = r.work.checkpoint(task, a, tag);
            r.load_checkpoint(&p).map(|c| (a, p, c))
        })
        .collect::<PResult<_>>()?;
    let ds = r.load_dataset()?;
    let n_resamples = r.cfg.evaluate.n_resamples;
    let mut inputs = vec![r.work.cohort(), r.work.vocab(), r.work.timelines()];
    let mut models = Vec::new();
    let mut outputs = vec![out.to_path_buf()];
    for (a, path, ckpt) in &ckpts {
        inputs.push(path.clone());
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if task == Task::Diagnoses {
            let val = ds.samples(Stage::Evaluate, task, tag, Split::Val).stage(r.stage)?;
            let test = ds.samples(Stage::Evaluate, task, tag, split).stage(r.stage)?;
            let d = diagnoses_metrics(&ckpt.model, &ckpt.outputs, &ckpt.excluded_codes, &val, &test).stage(r.stage)?;
            models.push(ModelMetrics { arch: *a, checkpoint: name, time_tag: tag, metrics: None, earliness: Vec::new(), diagnoses: Some(d) });
            continue;
        }
        let mut per_tag = Vec::new();
        for &t in task.grid() {
            let samples = ds.samples(Stage::Evaluate, task, t, split).stage(r.stage)?;
            per_tag.push((t, score(&ckpt.model, &samples, 0).stage(r.stage)?));
        }
        let earliness = earliness_curve(task, &per_tag, n_resamples, r.seed).stage(r.stage)?;
        let metrics = earliness.iter().find(|m| m.time_tag == tag).cloned();
        let metrics = match metrics {
            Some(m) => m,
            None => {
                let samples = ds.samples(Stage::Evaluate, task, tag, split).stage(r.stage)?;
                metrics_report(task, tag, &score(&ckpt.model, &samples, 0).stage(r.stage)?, n_resamples, r.seed).stage(r.stage)?
            }
        };
        let table = r.work.earliness(task, *a);
        r.write_text(&table, &earliness_table(&earliness))?;
        outputs.push(table);
        models.push(ModelMetrics { arch: *a, checkpoint: name, time_tag: tag, metrics: Some(metrics), earliness, diagnoses: None });
    }
    let file = MetricsFile { task, split, seed: r.seed, n_resamples, models };
    r.write_text(out, &(serde_json::to_string_pretty(&file).expect("metrics serialize") + "\n"))?;
    let m = r.manifest(&inputs, &outputs)?;
    let summary = file
        .models
        .iter()
        .map(|mm| match (&mm.metrics, &mm.diagnoses) {
            (Some(x), _) => format!("{}: AUROC {:.3} [{:.3}, {:.3}]", mm.arch, x.auroc, x.ci_low, x.ci_high),
            (_, Some(d)) => format!("{}: weighted AUROC {:.3}, micro-F1 {:.3}", mm.arch, d.weighted_auroc, d.micro_f1),
            _ => String::new(),
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Outcome { summary, outputs: outputs.into_iter().chain([m]).collect() })
}

pub fn diagnoses_metrics(model: &Model, codes: &[String], excluded: &[String], val: &[Sample], test: &[Sample]) -> crate::Result<DiagnosesMetrics> {
    let val_preds = predict_all(model, val);
    let threshold = choose_threshold(&val_preds, &code_matrix(val, codes))?;
    let test_preds = predict_all(model, test);
    let per_code = score_codes(&test_preds, test, codes)?;
    let w = weighted_auroc(&per_code)?;
    let f1 = micro_f1(&test_preds, &code_matrix(test, codes), threshold)?;
    let mut excluded_codes: Vec<String> = excluded.iter().cloned().chain(w.excluded.iter().cloned()).collect();
    excluded_codes.sort();
    Ok(DiagnosesMetrics { weighted_auroc: w.value, codes_scored: w.included, excluded_codes, threshold, micro_f1: f1, n: test.len() })
}

fn explain(r: &Runner, model_path: &Path, encounter_id: &str, tag: TimeTag, out: &Path, html: bool, baseline: Option<&Path>) -> PResult<Outcome> {
    let ckpt = r.load_checkpoint(model_path)?;
    let ds = r.load_dataset()?;
    let e = ds
        .encounter(encounter_id)
        .ok_or_else(|| PipelineError::Data { stage: r.stage, message: format!("encounter {encounter_id} is not in the cohort") })?
        .clone();
    let at = tag.time_for(&e);
    let prefix = ds.prefix(&e, at);
    let input = crate::models::PredictionInput::new(&prefix, at, &e);
    let score = ckpt.model.predict_one(&input);
    let mut inputs = vec![model_path.to_path_buf(), r.work.cohort(), r.work.vocab(), r.work.timelines()];
    let baseline_path = match baseline {
        Some(p) => Some(p.to_path_buf()),
        None => baseline_for(ckpt.task)
            .map(|_| r.work.checkpoint(ckpt.task, Arch::Logistic, ckpt.time_tag))
            .filter(|p| p.exists() && p.as_path() != model_path),
    };
    let baseline_score = match &baseline_path {
        Some(p) => {
            inputs.push(p.clone());
            Some(r.load_checkpoint(p)?.model.predict_one(&input))
        }
        None => None,
    };
    let top_k = r.cfg.explain.top_k.max(1);
    let attributions = match &ckpt.model {
        Model::Tann(t) => attention_attribution(t, &input),
        other => occlusion_attribution(other, &input, top_k).stage(r.stage)?,
    };
    let modalities = modality_attributions(&ckpt.model, &input);
    let report_input = ReportInput {
        task: ckpt.task,
        time_tag: tag,
        encounter: &e,
        at,
        model: ckpt.model.arch(),
        model_score: score,
        baseline_score,
        prefix: &prefix,
        vocab: &ds.vocab,
        top_k,
    };
    let report: Report = render_report(&report_input, &attributions, &modalities);
    r.write_text(out, &report.to_json())?;
    let mut outputs = vec![out.to_path_buf()];
    if html {
        let page = out.with_extension("html");
        r.write_text(&page, &report.to_html())?;
        outputs.push(page);
    }
    let m = r.manifest(&inputs, &outputs)?;
    Ok(Outcome { summary: format!("{} score {score:.4}, {} highlights", ckpt.model.arch(), report.highlights.len()), outputs: outputs.into_iter().chain([m]).collect() })
}
