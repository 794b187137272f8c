//! The run configuration file.
//!
//! Every key is optional; see `mia-audit show-config` for the defaults.
//! Relative paths are resolved against the directory holding the file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mia_audit::attacks::AttackKind;
use mia_audit::corpus::DatasetFormat;
use mia_audit::eval::{SweepGrid, DEFAULT_FPR_TARGETS};
use mia_audit::neighbourhood::NeighbourConfig;
use mia_audit::scoring::{Reduction, RemoteConfig};

pub const ENDPOINT_ENV: &str = "MIA_AUDIT_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub oracle: OracleSelection,
    /// `seed` is taken from the top-level `seed`.
    pub neighbours: NeighbourConfig,
    pub attacks: Vec<String>,
    pub fpr_targets: Vec<f64>,
    /// `mean` or `sum` token NLL, applied to target and reference alike.
    pub reduction: String,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Grid for `ablate`; `run` sweeps only when this is set.
    pub ablation: Option<SweepGrid>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            oracle: OracleSelection::default(),
            neighbours: NeighbourConfig::default(),
            attacks: vec!["loss".into(), "lira".into(), "neighbourhood".into()],
            fpr_targets: DEFAULT_FPR_TARGETS.to_vec(),
            reduction: "mean".into(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            ablation: None,
        }
    }
}

/// Either one corpus split by `fractions`, or pre-split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub members: Option<PathBuf>,
    pub nonmembers: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub format: String,
    /// Member, nonmember and reference-pool shares of `path`.
    pub fractions: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            members: None,
            nonmembers: None,
            reference: None,
            format: "jsonl".into(),
            fractions: [0.4, 0.4, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleSelection {
    BuiltinNgram(NgramSettings),
    Remote(RemoteSettings),
}

impl Default for OracleSelection {
    fn default() -> Self {
        Self::BuiltinNgram(NgramSettings::default())
    }
}

/// The target model is fitted on the member split, the reference model on
/// the reference pool, and the substitution model on `substitution_corpus`
/// (the reference pool when unset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramSettings {
    pub order: usize,
    pub add_k: f64,
    pub lambda: f64,
    pub substitution_order: usize,
    pub substitution_add_k: f64,
    pub substitution_corpus: Option<PathBuf>,
}

impl Default for NgramSettings {
    fn default() -> Self {
        Self {
            order: 3,
            add_k: 1.0,
            lambda: 0.5,
            substitution_order: 2,
            substitution_add_k: 1.0,
            substitution_corpus: None,
        }
    }
}

/// `endpoint` serves the target model and substitutions; LiRA needs a
/// second server for the reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSettings {
    pub endpoint: String,
    pub reference_endpoint: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub max_inflight: usize,
    pub batch_size: usize,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        let base = RemoteConfig::default();
        Self {
            endpoint: base.endpoint,
            reference_endpoint: None,
            timeout_secs: base.timeout_secs,
            retries: base.retries,
            max_inflight: base.max_inflight,
            batch_size: base.batch_size,
        }
    }
}

impl RemoteSettings {
    pub fn client_config(&self, endpoint: &str) -> RemoteConfig {
        RemoteConfig {
            endpoint: endpoint.to_string(),
            timeout_secs: self.timeout_secs,
            retries: self.retries,
            max_inflight: self.max_inflight,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let d = &mut self.dataset;
        for p in [&mut d.path, &mut d.members, &mut d.nonmembers, &mut d.reference]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let OracleSelection::BuiltinNgram(s) = &mut self.oracle {
            if let Some(p) = &mut s.substitution_corpus {
                fix(p);
            }
        }
        fix(&mut self.output_dir);
    }

    /// Applies `MIA_AUDIT_ENDPOINT` and propagates the global seed.
    pub fn apply_environment(&mut self) {
        if let (OracleSelection::Remote(r), Ok(endpoint)) = (&mut self.oracle, std::env::var(ENDPOINT_ENV)) {
            if !endpoint.is_empty() {
                r.endpoint = endpoint;
            }
        }
        self.neighbours.seed = self.seed;
    }

    pub fn format(&self) -> DatasetFormat {
        self.dataset.format.parse().expect("validated")
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction.parse().expect("validated")
    }

    pub fn attack_kinds(&self) -> Vec<AttackKind> {
        self.attacks.iter().map(|a| a.parse().expect("validated")).collect()
    }

    pub fn has_reference_pool(&self) -> bool {
        match &self.dataset.path {
            Some(_) => self.dataset.fractions[2] > 0.0,
            None => self.dataset.reference.is_some(),
        }
    }

    /// Every problem at once, each prefixed with its key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        let exists = |p: &Path| p.is_file();

        let d = &self.dataset;
        match (&d.path, &d.members, &d.nonmembers) {
            (Some(p), None, None) => {
                check(exists(p), format!("dataset.path: {} does not exist", p.display()));
                check(d.reference.is_none(), "dataset.reference: only allowed with pre-split files".into());
                let f = d.fractions;
                check(
                    f.iter().all(|x| x.is_finite() && *x >= 0.0) && f.iter().sum::<f64>() <= 1.0 + 1e-12,
                    format!("dataset.fractions: {f:?} must be nonnegative and sum to at most 1"),
                );
                check(f[0] > 0.0 && f[1] > 0.0, "dataset.fractions: member and nonmember shares must be positive".into());
            }
            (None, Some(m), Some(n)) => {
                check(exists(m), format!("dataset.members: {} does not exist", m.display()));
                check(exists(n), format!("dataset.nonmembers: {} does not exist", n.display()));
                if let Some(r) = &d.reference {
                    check(exists(r), format!("dataset.reference: {} does not exist", r.display()));
                }
            }
            (None, None, None) => check(false, "dataset: set either path or members and nonmembers".into()),
            _ => check(false, "dataset: set either path or members and nonmembers, not both".into()),
        }
        if let Err(e) = d.format.parse::<DatasetFormat>() {
            check(false, format!("dataset.format: {e}"));
        }

        let mut kinds = Vec::new();
        let mut seen = HashSet::new();
        if self.attacks.is_empty() {
            check(false, "attacks: must name at least one attack".into());
        }
        for a in &self.attacks {
            match a.parse::<AttackKind>() {
                Ok(AttackKind::Calibrated) | Err(_) => {
                    check(false, format!("attacks: unknown attack {a:?} (expected loss, lira or neighbourhood)"))
                }
                Ok(k) if !seen.insert(k) => check(false, format!("attacks: {a:?} listed twice")),
                Ok(k) => kinds.push(k),
            }
        }
        let wants = |k: AttackKind| kinds.contains(&k);

        match &self.oracle {
            OracleSelection::BuiltinNgram(s) => {
                check((1..=8).contains(&s.order), format!("oracle.order: {} outside 1..=8", s.order));
                check(
                    (1..=8).contains(&s.substitution_order),
                    format!("oracle.substitution_order: {} outside 1..=8", s.substitution_order),
                );
                check(s.add_k.is_finite() && s.add_k > 0.0, format!("oracle.add_k: {} must be positive", s.add_k));
                check(
                    s.substitution_add_k.is_finite() && s.substitution_add_k > 0.0,
                    format!("oracle.substitution_add_k: {} must be positive", s.substitution_add_k),
                );
                check((0.0..=1.0).contains(&s.lambda), format!("oracle.lambda: {} outside [0, 1]", s.lambda));
                if let Some(p) = &s.substitution_corpus {
                    check(exists(p), format!("oracle.substitution_corpus: {} does not exist", p.display()));
                }
                if wants(AttackKind::Lira) {
                    check(self.has_reference_pool(), "attacks: lira needs a reference pool to fit the reference model".into());
                }
                if wants(AttackKind::Neighbourhood) || self.ablation.is_some() {
                    check(
                        self.has_reference_pool() || s.substitution_corpus.is_some(),
                        "oracle.substitution_corpus: neighbours need a substitution corpus or a reference pool".into(),
                    );
                }
            }
            OracleSelection::Remote(r) => {
                let url_ok = |u: &str| u.starts_with("http://") || u.starts_with("https://");
                check(url_ok(&r.endpoint), format!("oracle.endpoint: {:?} is not an http(s) URL", r.endpoint));
                match &r.reference_endpoint {
                    Some(u) => check(url_ok(u), format!("oracle.reference_endpoint: {u:?} is not an http(s) URL")),
                    None => check(!wants(AttackKind::Lira), "oracle.reference_endpoint: required by lira".into()),
                }
                check(r.timeout_secs.is_finite() && r.timeout_secs > 0.0, "oracle.timeout_secs: must be positive".into());
                check(r.max_inflight > 0, "oracle.max_inflight: must be positive".into());
                check(r.batch_size > 0, "oracle.batch_size: must be positive".into());
            }
        }

        if let Err(e) = self.neighbours.validate() {
            check(false, format!("neighbours: {e}"));
        }
        if self.fpr_targets.is_empty() {
            check(false, "fpr_targets: must not be empty".into());
        }
        for t in &self.fpr_targets {
            if !(*t > 0.0 && *t < 1.0) {
                check(false, format!("fpr_targets: {t} outside (0, 1)"));
            }
        }
        if let Err(e) = self.reduction.parse::<Reduction>() {
            check(false, format!("reduction: {e}"));
        }
        if let Some(g) = &self.ablation {
            check(
                !g.n.is_empty() && g.n.iter().all(|&n| n > 0),
                "ablation.n: must list positive neighbour counts".into(),
            );
            check(
                !g.m.is_empty() && g.m.iter().all(|&m| m > 0),
                "ablation.m: must list positive replacement counts".into(),
            );
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
