use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use crate::{Cli, CommonArgs};

/// Machine-readable record of one run, written next to its results.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    /// The parsed command line, defaults filled in.
    pub config: serde_json::Value,
    /// Effective solver and limiter settings after defaults and overrides.
    pub resolved: BTreeMap<String, serde_json::Value>,
    pub versions: BTreeMap<&'static str, &'static str>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<PathBuf>,
    pub exit_code: i32,
    pub error: Option<String>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl Manifest {
    pub fn new(cli: &Cli, argv: &[OsString]) -> Self {
        let versions = BTreeMap::from([
            ("gridvolt-cli", env!("CARGO_PKG_VERSION")),
            ("gridvolt-core", gridvolt::VERSION),
        ]);
        Manifest {
            command: cli.command.name().to_string(),
            argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
            config: serde_json::to_value(cli).unwrap_or(serde_json::Value::Null),
            resolved: BTreeMap::new(),
            versions,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            exit_code: 0,
            error: None,
            started: Some(Instant::now()),
        }
    }

    /// Runs `f` and records its duration under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.timings.entry(phase.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }

    pub fn resolve(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.resolved.insert(key.to_string(), v);
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(&mut self, code: i32, err: Option<&anyhow::Error>) {
        self.exit_code = code;
        self.error = err.map(|e| format!("{e:#}"));
        if let Some(t) = self.started.take() {
            self.timings.insert("total".into(), t.elapsed().as_secs_f64());
        }
    }

    pub fn path(common: &CommonArgs) -> PathBuf {
        if let Some(p) = &common.manifest {
            return p.clone();
        }
        match &common.out {
            Some(out) => {
                let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
                out.with_file_name(format!("{stem}_manifest.json"))
            }
            None => PathBuf::from("gridvolt_manifest.json"),
        }
    }

    pub fn write(&self, common: &CommonArgs) -> anyhow::Result<()> {
        let path = Self::path(common);
        crate::commands::guard_output(&common.case, &path)?;
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, body + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
