use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use paprlab_core::config::{validate_spec, SystemSpec};
use serde::{Deserialize, Serialize};

use crate::commands::GridArgs;
use crate::CliError;

/// Parameters of one command invocation, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Params {
    Simulate {
        trials: u64,
        seed: u64,
        gamma_min_db: f64,
        gamma_max_db: f64,
        step_db: f64,
    },
    Analyze {
        gamma_min_db: f64,
        gamma_max_db: f64,
        step_db: f64,
    },
    Allocate {
        step: f64,
        with_mc: bool,
        trials: u64,
        seed: u64,
    },
    Compare {
        trials: u64,
        seed: u64,
        gamma_min_db: f64,
        gamma_max_db: f64,
        step_db: f64,
    },
}

impl Params {
    pub fn simulate(trials: u64, seed: u64, g: &GridArgs) -> Self {
        Params::Simulate {
            trials,
            seed,
            gamma_min_db: g.gamma_min_db,
            gamma_max_db: g.gamma_max_db,
            step_db: g.step_db,
        }
    }

    pub fn analyze(g: &GridArgs) -> Self {
        Params::Analyze {
            gamma_min_db: g.gamma_min_db,
            gamma_max_db: g.gamma_max_db,
            step_db: g.step_db,
        }
    }

    pub fn allocate(step: f64, with_mc: bool, trials: u64, seed: u64) -> Self {
        Params::Allocate {
            step,
            with_mc,
            trials,
            seed,
        }
    }

    pub fn compare(trials: u64, seed: u64, g: &GridArgs) -> Self {
        Params::Compare {
            trials,
            seed,
            gamma_min_db: g.gamma_min_db,
            gamma_max_db: g.gamma_max_db,
            step_db: g.step_db,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Params::Simulate { .. } => "simulate",
            Params::Analyze { .. } => "analyze",
            Params::Allocate { .. } => "allocate",
            Params::Compare { .. } => "compare",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            Params::Simulate { seed, .. } | Params::Allocate { seed, .. } | Params::Compare { seed, .. } => {
                Some(seed)
            }
            Params::Analyze { .. } => None,
        }
    }
}

/// Sidecar written next to every output; enough to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub timestamp: String,
    pub seed: Option<u64>,
    pub params: Params,
    pub spec: SystemSpec,
}

impl Manifest {
    pub fn new(spec: &SystemSpec, params: &Params) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            seed: params.seed(),
            params: params.clone(),
            spec: spec.clone(),
        }
    }

    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config("manifest", format!("cannot read {}: {e}", path.display())))?;
        parse_json(&text, "manifest")
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, root: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { root.to_string() } else { path };
        CliError::config(key, e.into_inner().to_string())
    })
}

/// Reads and validates a JSON config; every violation becomes one error line.
pub fn load_spec(path: &Path) -> Result<SystemSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
    let spec: SystemSpec = parse_json(&text, "config")?;
    check_spec(&spec)?;
    Ok(spec)
}

pub(crate) fn check_spec(spec: &SystemSpec) -> Result<(), CliError> {
    let violations = validate_spec(spec);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(violations.into_iter().map(|v| (v.key, v.message)).collect()))
    }
}

/// CSV table with a single header line.
pub(crate) struct Table {
    text: String,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        let mut text = columns.join(",");
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub(crate) fn fmt_gamma(x: f64) -> String {
    format!("{x:.3}")
}

/// Six significant digits in scientific notation.
pub(crate) fn fmt_prob(x: f64) -> String {
    format!("{x:.5e}")
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

/// Writes `csv` to `out` and the manifest beside it.
pub(crate) fn write_outputs(out: &Path, csv: &str, manifest: &Manifest) -> Result<PathBuf, CliError> {
    fs::write(out, csv).map_err(|e| io_error(out, e))?;
    let mpath = Manifest::path_for(out);
    let mut f = fs::File::create(&mpath).map_err(|e| io_error(&mpath, e))?;
    let json = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(f, "{json}").map_err(|e| io_error(&mpath, e))?;
    Ok(mpath)
}
