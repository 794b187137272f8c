//! Stages and their on-disk artifacts.
//!
//! Each stage is stamped with a digest of the effective configuration, the
//! input files and the stage name. A stage whose stamp matches is skipped
//! unless `--force` is given; a failed stage leaves earlier stamps intact, so
//! a rerun resumes where it stopped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use mia_audit::attacks::{
    generate_all_neighbours, lira_attack, loss_attack, neighbourhood_scores, AttackError, AttackKind,
    MembershipScore, SampleFailure,
};
use mia_audit::corpus::{load_dataset, split_corpus, write_jsonl, CorpusError, Label, TextSample};
use mia_audit::eval::{
    ablation_sweep, evaluate, render_markdown, roc_csv, round_json_floats, EvalError, SweepGrid, SweepRunner,
};
use mia_audit::neighbourhood::NeighbourError;
use mia_audit::scoring::{
    fit_ngram_backend, NgramModel, RemoteOracle, ScoringError, ScoringOracle, SubstitutionOracle,
};

use crate::config::{ConfigError, OracleSelection, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] CorpusError),
    #[error(transparent)]
    Oracle(#[from] ScoringError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: malformed artifact: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "invalid_config",
            Self::Io { .. } => "io",
            Self::Dataset(_) => "dataset",
            Self::Oracle(_) => "oracle",
            Self::Attack(_) => "attack",
            Self::Eval(_) => "evaluate",
            Self::Usage(_) => "usage",
            Self::Artifact { .. } => "artifact",
        }
    }

    pub fn details(&self) -> Vec<String> {
        match self {
            Self::Config(ConfigError::Invalid(errs)) => errs.clone(),
            Self::Oracle(ScoringError::Transport { sample_ids, .. })
            | Self::Attack(AttackError::Scoring(ScoringError::Transport { sample_ids, .. })) => {
                sample_ids.iter().map(|id| format!("sample {id}")).collect()
            }
            _ => Vec::new(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file so a crash never leaves a partial artifact.
fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &r).expect("serializable");
        out.push(b'\n');
    }
    out
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Artifact {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn pretty_json(value: Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(&round_json_floats(value)).expect("json");
    s.push('\n');
    s.into_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Split,
    Fit,
    Neighbours,
    Attack(AttackKind),
    Evaluate,
    Ablate,
}

impl Stage {
    fn name(self) -> String {
        match self {
            Self::Split => "split".into(),
            Self::Fit => "fit".into(),
            Self::Neighbours => "neighbours".into(),
            Self::Attack(k) => format!("attack-{k}"),
            Self::Evaluate => "evaluate".into(),
            Self::Ablate => "ablate".into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct NeighbourRecord {
    pub id: String,
    pub neighbour_rank: usize,
    pub text: String,
    pub positions: Vec<usize>,
    pub joint_suitability: f64,
}

#[derive(Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub attack: AttackKind,
    pub score: f64,
    pub n_neighbours: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct FailureRecord {
    id: String,
    reason: String,
}

// one value per process, so the size difference between variants is moot
#[allow(clippy::large_enum_variant)]
enum Oracles {
    Builtin {
        target: NgramModel,
        reference: Option<NgramModel>,
        substitution: Option<NgramModel>,
    },
    Remote {
        target: RemoteOracle,
        reference: Option<RemoteOracle>,
    },
}

impl Oracles {
    fn target(&self) -> &dyn ScoringOracle {
        match self {
            Self::Builtin { target, .. } => target,
            Self::Remote { target, .. } => target,
        }
    }

    fn reference(&self) -> Result<&dyn ScoringOracle, PipelineError> {
        let r: Option<&dyn ScoringOracle> = match self {
            Self::Builtin { reference, .. } => reference.as_ref().map(|r| r as _),
            Self::Remote { reference, .. } => reference.as_ref().map(|r| r as _),
        };
        r.ok_or_else(|| PipelineError::Usage("lira needs a reference model, but none is configured".into()))
    }

    fn substitution(&self) -> Result<&dyn SubstitutionOracle, PipelineError> {
        let s: Option<&dyn SubstitutionOracle> = match self {
            Self::Builtin { substitution, .. } => substitution.as_ref().map(|s| s as _),
            Self::Remote { target, .. } => Some(target),
        };
        s.ok_or_else(|| PipelineError::Usage("neighbours need a substitution model, but none is configured".into()))
    }
}

pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    force: bool,
    digest: String,
    done: HashSet<Stage>,
    oracles: Option<Oracles>,
}

impl Pipeline {
    pub fn new(config: RunConfig, force: bool) -> Result<Self, PipelineError> {
        config.validate()?;
        let out = config.output_dir.clone();
        let digest = config_digest(&config)?;
        Ok(Self {
            config,
            out,
            force,
            digest,
            done: HashSet::new(),
            oracles: None,
        })
    }

    /// For commands that only talk to servers: no validation, no stamps.
    pub fn new_unchecked(config: RunConfig) -> Self {
        Self {
            out: config.output_dir.clone(),
            config,
            force: false,
            digest: String::new(),
            done: HashSet::new(),
            oracles: None,
        }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.out.join(".stamps").join(stage.name())
    }

    fn stage_hash(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        h.update(self.digest.as_bytes());
        h.update([0]);
        h.update(stage.name().as_bytes());
        hex(&h.finalize())
    }

    fn up_to_date(&self, stage: Stage) -> bool {
        !self.force
            && fs::read_to_string(self.stamp_path(stage)).is_ok_and(|s| s.trim() == self.stage_hash(stage))
            && self.outputs(stage).iter().all(|p| p.exists())
    }

    fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        match stage {
            Stage::Split => vec![self.path("split/members.jsonl"), self.path("split/nonmembers.jsonl")],
            Stage::Fit => match self.config.oracle {
                OracleSelection::BuiltinNgram(_) => vec![self.path("fit/target.json")],
                OracleSelection::Remote(_) => Vec::new(),
            },
            Stage::Neighbours => vec![self.path("neighbours/neighbours.jsonl")],
            Stage::Attack(k) => vec![self.path(&format!("attack/{k}.jsonl"))],
            Stage::Evaluate => vec![self.path("evaluate/report.md")],
            Stage::Ablate => vec![self.path("ablate/ablation.md")],
        }
    }

    fn dependencies(&self, stage: Stage) -> Vec<Stage> {
        match stage {
            Stage::Split => vec![],
            Stage::Fit => vec![Stage::Split],
            Stage::Neighbours => vec![Stage::Fit],
            Stage::Attack(AttackKind::Neighbourhood) => vec![Stage::Fit, Stage::Neighbours],
            Stage::Attack(_) => vec![Stage::Fit],
            Stage::Evaluate => self.config.attack_kinds().into_iter().map(Stage::Attack).collect(),
            Stage::Ablate => vec![Stage::Fit],
        }
    }

    /// Runs `stage` after its dependencies, skipping anything up to date.
    pub fn ensure(&mut self, stage: Stage) -> Result<(), PipelineError> {
        if self.done.contains(&stage) {
            return Ok(());
        }
        for dep in self.dependencies(stage) {
            self.ensure(dep)?;
        }
        if self.up_to_date(stage) {
            info!("{}: up to date", stage.name());
        } else {
            info!("{}: running", stage.name());
            match stage {
                Stage::Split => self.split()?,
                Stage::Fit => self.fit()?,
                Stage::Neighbours => self.neighbours()?,
                Stage::Attack(k) => self.attack(k)?,
                Stage::Evaluate => self.evaluate()?,
                Stage::Ablate => self.ablate()?,
            }
            write_file(&self.stamp_path(stage), format!("{}\n", self.stage_hash(stage)).as_bytes())?;
        }
        self.done.insert(stage);
        Ok(())
    }

    /// Every stage the configuration asks for.
    pub fn run_all(&mut self) -> Result<(), PipelineError> {
        self.ensure(Stage::Evaluate)?;
        if self.config.ablation.is_some() {
            self.ensure(Stage::Ablate)?;
        }
        Ok(())
    }

    fn split(&mut self) -> Result<(), PipelineError> {
        let d = &self.config.dataset;
        let format = self.config.format();
        let (members, nonmembers, reference, source) = match &d.path {
            Some(path) => {
                let samples = load_dataset(path, format)?;
                let split = split_corpus(&samples, d.fractions, self.config.seed)?;
                (split.members, split.nonmembers, split.reference_pool, json!({"path": path, "fractions": d.fractions}))
            }
            None => {
                let load = |p: &Path, label: Label| -> Result<Vec<TextSample>, PipelineError> {
                    Ok(load_dataset(p, format)?.into_iter().map(|s| s.with_label(label)).collect())
                };
                let members = load(d.members.as_ref().expect("validated"), Label::Member)?;
                let nonmembers = load(d.nonmembers.as_ref().expect("validated"), Label::Nonmember)?;
                let reference = match &d.reference {
                    Some(p) => load(p, Label::Unknown)?,
                    None => Vec::new(),
                };
                let mut ids = HashSet::new();
                if let Some(dup) = members.iter().chain(&nonmembers).chain(&reference).find(|s| !ids.insert(&s.id)) {
                    return Err(PipelineError::Usage(format!("sample id {:?} appears in more than one file", dup.id)));
                }
                (members, nonmembers, reference, json!({"members": d.members, "nonmembers": d.nonmembers, "reference": d.reference}))
            }
        };
        for (name, samples) in [("members", &members), ("nonmembers", &nonmembers), ("reference", &reference)] {
            let mut buf = Vec::new();
            write_jsonl(&mut buf, samples).map_err(io_err(&self.out))?;
            write_file(&self.path(&format!("split/{name}.jsonl")), &buf)?;
        }
        let manifest = json!({
            "seed": self.config.seed,
            "source": source,
            "counts": {"members": members.len(), "nonmembers": nonmembers.len(), "reference": reference.len()},
        });
        write_file(&self.path("split/manifest.json"), &pretty_json(manifest))
    }

    fn load_split(&self, name: &str) -> Result<Vec<TextSample>, PipelineError> {
        let path = self.path(&format!("split/{name}.jsonl"));
        Ok(load_dataset(&path, mia_audit::corpus::DatasetFormat::Jsonl)?)
    }

    fn evaluation_samples(&self) -> Result<Vec<TextSample>, PipelineError> {
        let mut samples = self.load_split("members")?;
        samples.extend(self.load_split("nonmembers")?);
        Ok(samples)
    }

    fn fit(&mut self) -> Result<(), PipelineError> {
        let OracleSelection::BuiltinNgram(s) = &self.config.oracle else {
            info!("fit: remote oracle, nothing to fit");
            return Ok(());
        };
        let members = self.load_split("members")?;
        let reference = self.load_split("reference")?;
        let substitution_corpus = match &s.substitution_corpus {
            Some(p) => load_dataset(p, self.config.format())?,
            None => reference.clone(),
        };
        let mut manifest = serde_json::Map::new();
        let mut save = |name: &str, corpus: &[TextSample], order: usize, add_k: f64| -> Result<(), PipelineError> {
            if corpus.is_empty() {
                return Ok(());
            }
            let model = fit_ngram_backend(corpus, order, add_k)?.with_lambda(s.lambda);
            let mut buf = Vec::new();
            model.save(&mut buf).expect("in-memory write");
            write_file(&self.out.join(format!("fit/{name}.json")), &buf)?;
            manifest.insert(
                name.into(),
                json!({"order": order, "add_k": add_k, "samples": corpus.len(), "vocab_size": model.vocab_size()}),
            );
            Ok(())
        };
        save("target", &members, s.order, s.add_k)?;
        save("reference", &reference, s.order, s.add_k)?;
        save("substitution", &substitution_corpus, s.substitution_order, s.substitution_add_k)?;
        self.oracles = None;
        write_file(&self.path("fit/manifest.json"), &pretty_json(Value::Object(manifest)))
    }

    fn oracles(&mut self) -> Result<&Oracles, PipelineError> {
        if self.oracles.is_none() {
            let oracles = match &self.config.oracle {
                OracleSelection::BuiltinNgram(_) => {
                    let load = |name: &str| -> Result<Option<NgramModel>, PipelineError> {
                        let path = self.path(&format!("fit/{name}.json"));
                        if !path.exists() {
                            return Ok(None);
                        }
                        let file = File::open(&path).map_err(io_err(&path))?;
                        Ok(Some(NgramModel::load(BufReader::new(file))?))
                    };
                    Oracles::Builtin {
                        target: load("target")?.ok_or_else(|| PipelineError::Usage("target model missing".into()))?,
                        reference: load("reference")?,
                        substitution: load("substitution")?,
                    }
                }
                OracleSelection::Remote(r) => Oracles::Remote {
                    target: RemoteOracle::connect(r.client_config(&r.endpoint))?,
                    reference: r
                        .reference_endpoint
                        .as_ref()
                        .map(|e| RemoteOracle::connect(r.client_config(e)))
                        .transpose()?,
                },
            };
            self.oracles = Some(oracles);
        }
        Ok(self.oracles.as_ref().expect("just set"))
    }

    fn neighbours(&mut self) -> Result<(), PipelineError> {
        let samples = self.evaluation_samples()?;
        let config = self.config.neighbours.clone();
        let substitution = self.oracles()?.substitution()?;
        let generated = generate_all_neighbours(substitution, &samples, &config);
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (sample, result) in samples.iter().zip(generated) {
            match result {
                Ok(ns) => records.extend(ns.into_iter().enumerate().map(|(rank, n)| NeighbourRecord {
                    id: sample.id.clone(),
                    neighbour_rank: rank + 1,
                    text: n.text,
                    positions: n.swapped_positions,
                    joint_suitability: n.joint_suitability,
                })),
                Err(NeighbourError::Oracle(e @ ScoringError::Transport { .. })) => {
                    return Err(PipelineError::Oracle(match e {
                        ScoringError::Transport { message, .. } => ScoringError::Transport {
                            message,
                            sample_ids: vec![sample.id.clone()],
                        },
                        other => other,
                    }))
                }
                Err(e) => failures.push(FailureRecord {
                    id: sample.id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        info!("neighbours: {} neighbours, {} samples without", records.len(), failures.len());
        write_file(&self.path("neighbours/failures.jsonl"), &jsonl(&failures))?;
        write_file(&self.path("neighbours/neighbours.jsonl"), &jsonl(&records))
    }

    fn attack(&mut self, kind: AttackKind) -> Result<(), PipelineError> {
        let samples = self.evaluation_samples()?;
        let reduction = self.config.reduction();
        let (scores, failures): (Vec<MembershipScore>, Vec<SampleFailure>) = match kind {
            AttackKind::Loss => (loss_attack(self.oracles()?.target(), &samples, reduction)?, Vec::new()),
            AttackKind::Lira => {
                let oracles = self.oracles()?;
                (lira_attack(oracles.target(), oracles.reference()?, &samples, reduction)?, Vec::new())
            }
            AttackKind::Neighbourhood => {
                let records: Vec<NeighbourRecord> = read_jsonl(&self.path("neighbours/neighbours.jsonl"))?;
                let generation: Vec<FailureRecord> = read_jsonl(&self.path("neighbours/failures.jsonl"))?;
                let mut by_id: HashMap<String, Vec<(usize, String)>> = HashMap::new();
                for r in records {
                    by_id.entry(r.id).or_default().push((r.neighbour_rank, r.text));
                }
                let texts: Vec<Vec<String>> = samples
                    .iter()
                    .map(|s| {
                        let mut v = by_id.remove(&s.id).unwrap_or_default();
                        v.sort_by_key(|(rank, _)| *rank);
                        v.into_iter().map(|(_, t)| t).collect()
                    })
                    .collect();
                let mut outcome = neighbourhood_scores(self.oracles()?.target(), &samples, &texts, reduction)?;
                let reasons: HashMap<_, _> = generation.into_iter().map(|f| (f.id, f.reason)).collect();
                for f in &mut outcome.failures {
                    if let Some(r) = reasons.get(&f.sample_id) {
                        f.reason = r.clone();
                    }
                }
                (outcome.scores, outcome.failures)
            }
            AttackKind::Calibrated => {
                return Err(PipelineError::Usage("the calibrated attack is library-only".into()))
            }
        };
        let records = scores.into_iter().map(|s| ScoreRecord {
            id: s.sample_id,
            attack: s.attack,
            score: s.score,
            n_neighbours: s.n_neighbours,
        });
        let failures = failures.into_iter().map(|f| FailureRecord {
            id: f.sample_id,
            reason: f.reason,
        });
        write_file(&self.path(&format!("attack/{kind}.failures.jsonl")), &jsonl(failures))?;
        write_file(&self.path(&format!("attack/{kind}.jsonl")), &jsonl(records))
    }

    fn echo(&self, kind: AttackKind) -> Value {
        let mut v = json!({
            "attack": kind,
            "reduction": self.config.reduction,
            "seed": self.config.seed,
            "oracle": self.config.oracle,
        });
        if kind == AttackKind::Neighbourhood {
            v["neighbours"] = serde_json::to_value(&self.config.neighbours).expect("json");
        }
        v
    }

    fn evaluate(&mut self) -> Result<(), PipelineError> {
        let mut labels = HashMap::new();
        for (name, label) in [("members", Label::Member), ("nonmembers", Label::Nonmember)] {
            for s in self.load_split(name)? {
                labels.insert(s.id, label);
            }
        }
        let mut reports = Vec::new();
        for kind in self.config.attack_kinds() {
            let records: Vec<ScoreRecord> = read_jsonl(&self.path(&format!("attack/{kind}.jsonl")))?;
            let failures: Vec<FailureRecord> = read_jsonl(&self.path(&format!("attack/{kind}.failures.jsonl")))?;
            let scores: Vec<MembershipScore> = records
                .into_iter()
                .map(|r| MembershipScore {
                    sample_id: r.id,
                    attack: r.attack,
                    score: r.score,
                    n_neighbours: r.n_neighbours,
                })
                .collect();
            let (report, curve) = evaluate(
                kind,
                &scores,
                &labels,
                failures.len(),
                &self.config.fpr_targets,
                self.echo(kind),
            )?;
            let dir = format!("evaluate/{kind}");
            write_file(&self.path(&format!("{dir}/report.json")), report.to_json().as_bytes())?;
            write_file(&self.path(&format!("{dir}/roc.csv")), roc_csv(&curve).as_bytes())?;
            write_file(
                &self.path(&format!("{dir}/report.md")),
                render_markdown(std::slice::from_ref(&report)).as_bytes(),
            )?;
            info!("evaluate: {kind} AUC {:.4}", report.auc);
            reports.push(report);
        }
        write_file(&self.path("evaluate/report.md"), render_markdown(&reports).as_bytes())
    }

    fn ablate(&mut self) -> Result<(), PipelineError> {
        let grid = self.config.ablation.clone().unwrap_or_else(default_grid);
        let members = self.load_split("members")?;
        let nonmembers = self.load_split("nonmembers")?;
        let base = self.config.neighbours.clone();
        let targets = self.config.fpr_targets.clone();
        let reduction = self.config.reduction();
        let oracles = self.oracles()?;
        let runner = SweepRunner {
            target: oracles.target(),
            substitution: oracles.substitution()?,
            members: &members,
            nonmembers: &nonmembers,
            base,
            targets,
            reduction,
        };
        let table = ablation_sweep(&runner, &grid)?;
        write_file(
            &self.path("ablate/ablation.json"),
            &pretty_json(serde_json::to_value(&table).expect("json")),
        )?;
        write_file(&self.path("ablate/ablation.md"), table.to_markdown().as_bytes())
    }

    /// Health of every configured server, as reported by the servers.
    pub fn server_check(&self, endpoint: Option<&str>) -> Result<Value, PipelineError> {
        let OracleSelection::Remote(r) = &self.config.oracle else {
            if let Some(e) = endpoint {
                return check_endpoint(&crate::config::RemoteSettings::default(), e);
            }
            return Err(PipelineError::Usage(
                "server-check needs a remote oracle in the config or --endpoint".into(),
            ));
        };
        let mut report = BTreeMap::new();
        let target = endpoint.unwrap_or(&r.endpoint);
        report.insert("target", check_endpoint(r, target)?);
        if let Some(e) = &r.reference_endpoint {
            report.insert("reference", check_endpoint(r, e)?);
        }
        Ok(serde_json::to_value(report).expect("json"))
    }
}

fn check_endpoint(settings: &crate::config::RemoteSettings, endpoint: &str) -> Result<Value, PipelineError> {
    let oracle = RemoteOracle::connect(settings.client_config(endpoint))?;
    let mut v = serde_json::to_value(oracle.health()).expect("json");
    v["endpoint"] = json!(endpoint);
    Ok(v)
}

pub fn default_grid() -> SweepGrid {
    SweepGrid {
        n: vec![5, 10, 25, 50, 100],
        m: vec![1],
    }
}

/// Digest of the effective configuration and the bytes of every input file.
fn config_digest(config: &RunConfig) -> Result<String, PipelineError> {
    let mut hashed = config.clone();
    hashed.output_dir = PathBuf::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&hashed).expect("json"));
    let d = &config.dataset;
    let mut inputs: Vec<&PathBuf> = [&d.path, &d.members, &d.nonmembers, &d.reference].into_iter().flatten().collect();
    if let OracleSelection::BuiltinNgram(s) = &config.oracle {
        inputs.extend(&s.substitution_corpus);
    }
    for p in inputs {
        let bytes = fs::read(p).map_err(io_err(p))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the machine-readable error report next to the artifacts.
pub fn write_error_report(out: &Path, err: &PipelineError, command: &str) {
    let report = json!({
        "error": err.code(),
        "command": command,
        "message": err.to_string(),
        "details": err.details(),
    });
    let path = out.join("error.json");
    let write = || -> std::io::Result<()> {
        fs::create_dir_all(out)?;
        let mut f = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n")?;
        f.flush()
    };
    if let Err(e) = write() {
        log::error!("cannot write {}: {e}", path.display());
    }
}
