//! Run directories and headed artifact files.

use std::fs;
use std::path::{Path, PathBuf};

use holderlab::field::ScalarField;
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const ARTIFACT_VERSION: &str = "holderlab-artifact v1";
pub const SCHEMA: u64 = 1;

pub const SOLUTION_CSV: &str = "solution.csv";
pub const SOLVE_JSON: &str = "solve.json";
pub const SUBSOLUTION_CSV: &str = "subsolution.csv";
pub const SUBSOLUTION_JSON: &str = "subsolution.json";
pub const HARNACK_CSV: &str = "harnack.csv";
pub const HARNACK_JSON: &str = "harnack.json";
pub const COVER_CSV: &str = "cover.csv";
pub const COVER_JSON: &str = "cover.json";
pub const DECAY_CSV: &str = "decay.csv";
pub const DECAY_JSON: &str = "decay.json";
pub const HOLDER_CSV: &str = "holder.csv";
pub const HOLDER_JSON: &str = "holder.json";
pub const METRIC_JSON: &str = "metric.json";
pub const REPORT_JSON: &str = "report.json";

/// Summaries merged by `report`, keyed by section name.
pub const SUMMARIES: [(&str, &str); 7] = [
    ("metric", METRIC_JSON),
    ("solve", SOLVE_JSON),
    ("subsolution", SUBSOLUTION_JSON),
    ("harnack", HARNACK_JSON),
    ("cover", COVER_JSON),
    ("decay", DECAY_JSON),
    ("holder", HOLDER_JSON),
];

/// One configured run writing into `dir`.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
    pub quiet: bool,
}

/// `runs/run-<UTC timestamp>-<hash>` under `base`.
pub fn fresh_run_dir(base: &Path, hash: &str) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    base.join(format!("run-{stamp}-{hash}"))
}

/// Most recent run directory under `base` for this config hash.
pub fn latest_run_dir(base: &Path, hash: &str) -> Option<PathBuf> {
    let suffix = format!("-{hash}");
    fs::read_dir(base)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("run-") && n.ends_with(&suffix))
        })
        .max()
}

impl Run {
    pub fn new(cfg: ExperimentConfig, dir: PathBuf, quiet: bool) -> Self {
        let hash = cfg.hash();
        Self {
            cfg,
            hash,
            dir,
            quiet,
        }
    }

    pub fn header(&self) -> String {
        format!("{ARTIFACT_VERSION} config={}", self.hash)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[holderlab] {}", msg.as_ref());
        }
    }

    fn ensure_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(CliError::io(&self.dir))
    }

    /// Writes `# <header>` followed by `body`.
    pub fn write_text(&self, name: &str, body: &str) -> Result<()> {
        self.ensure_dir()?;
        let path = self.path(name);
        fs::write(&path, format!("# {}\n{body}", self.header())).map_err(CliError::io(path))
    }

    /// Writes `body` (an object) with `header` and `schema` as the first keys.
    pub fn write_json(&self, name: &str, body: Value) -> Result<()> {
        self.ensure_dir()?;
        let mut out = Map::new();
        out.insert("header".into(), Value::String(self.header()));
        out.insert("schema".into(), Value::from(SCHEMA));
        if let Value::Object(m) = body {
            out.extend(m);
        }
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&Value::Object(out)).expect("json serializes");
        fs::write(&path, text + "\n").map_err(CliError::io(path))
    }

    /// Reads an artifact produced by `stage`, checking its config hash.
    pub fn read_text(&self, name: &str, stage: &'static str) -> Result<String> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::Missing { path, stage });
        }
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        let first = text.lines().next().unwrap_or("");
        let found = if name.ends_with(".json") {
            serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("header").and_then(|h| h.as_str()).map(String::from))
        } else {
            first.strip_prefix("# ").map(String::from)
        };
        match found {
            Some(h) if h == self.header() => Ok(text),
            Some(h) => Err(CliError::Validation(format!(
                "{} was written by a different configuration ({h}); expected {}",
                path.display(),
                self.header()
            ))),
            None => Err(CliError::Validation(format!(
                "{} has no artifact header",
                path.display()
            ))),
        }
    }

    pub fn read_json(&self, name: &str, stage: &'static str) -> Result<Value> {
        let text = self.read_text(name, stage)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", self.path(name).display())))
    }

    /// Like [`Run::read_json`] but `None` when the file does not exist.
    pub fn read_json_opt(&self, name: &str, stage: &'static str) -> Result<Option<Value>> {
        match self.read_json(name, stage) {
            Ok(v) => Ok(Some(v)),
            Err(CliError::Missing { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn load_solution(&self) -> Result<ScalarField> {
        let text = self.read_text(SOLUTION_CSV, "solve")?;
        let (u, _) = ScalarField::from_csv(&text)?;
        let g = self.cfg.grid()?;
        if *u.grid() != g {
            return Err(CliError::Validation(format!(
                "{} does not match the configured grid",
                self.path(SOLUTION_CSV).display()
            )));
        }
        Ok(u)
    }
}
