use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qqq_core::IntegratorOptions;

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub exit_code: i32,
    pub message: String,
}

/// Provenance of one invocation, written next to the primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub input: PathBuf,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorOptions>,
    pub tool_version: String,
    pub wall_clock_s: f64,
    pub warnings: Vec<String>,
    pub error: Option<ErrorRecord>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str, input: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            input: input.to_path_buf(),
            outputs: vec![],
            integrator: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_s: 0.0,
            warnings: vec![],
            error: None,
            started: Some(Instant::now()),
        }
    }

    /// `<output>.manifest.json`
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn finish(&mut self, path: &Path) -> std::io::Result<()> {
        if let Some(t) = self.started {
            self.wall_clock_s = t.elapsed().as_secs_f64();
        }
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }
}
