use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use archgrad_core::io::{canonical_json, write_atomic};
use serde::Serialize;
use serde_json::Value;

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or invalid config, exceeded caps: exit 2.
    Usage(String),
    /// Divergence, failed checks, non-convergence: exit 1.
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<archgrad_core::Error> for Failure {
    fn from(e: archgrad_core::Error) -> Self {
        use archgrad_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::DimensionCap { .. } | E::LengthMismatch { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

/// Output directory; remembers every file written through it.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: std::cell::RefCell<Vec<String>>,
    started: Instant,
}

impl OutDir {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            written: Default::default(),
            started: Instant::now(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.root)
            .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", self.root.display())))?;
        let path = self.root.join(name);
        write_atomic(&path, contents.as_bytes())
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
        self.written.borrow_mut().push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let v = serde_json::to_value(value).map_err(|e| Failure::Usage(e.to_string()))?;
        self.write(name, &canonical_json(&v))
    }

    /// Writes `manifest.json` last, listing everything written before it.
    pub fn finish(&self, command: &str, config: Value, seed: Option<u64>) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.written.borrow().clone(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        self.write_json("manifest.json", &manifest)
    }
}

/// Record of one run. Everything except `wall_time_seconds` is a pure
/// function of the command and config.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}
