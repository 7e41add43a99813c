//! JSON record written by every command.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::records::save_json;

/// `git describe`-style version; builds may stamp their own through
/// `SCENEWALK_VERSION`.
pub fn version() -> &'static str {
    option_env!("SCENEWALK_VERSION").unwrap_or(concat!("v", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    pub metrics: serde_json::Value,
    pub elapsed_s: f64,
}

pub struct RunTimer {
    command: String,
    start: Instant,
}

impl RunTimer {
    pub fn start(command: &str) -> Self {
        Self { command: command.into(), start: Instant::now() }
    }

    pub fn finish(self, config: &RunConfig, outputs: Vec<String>, metrics: serde_json::Value) -> RunLog {
        RunLog {
            tool: "scenewalk",
            version: version(),
            command: self.command,
            config_hash: config.hash(),
            config: config.clone(),
            outputs,
            metrics,
            elapsed_s: self.start.elapsed().as_secs_f64(),
        }
    }
}

pub fn write(path: &Path, log: &RunLog) -> Result<()> {
    save_json(path, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_echoes_config() {
        let cfg = RunConfig::default();
        let log = RunTimer::start("evaluate").finish(&cfg, vec!["r.json".into()], serde_json::json!({"mpjpe_mm": 0.0}));
        let v = serde_json::to_value(&log).unwrap();
        assert_eq!(v["config_hash"], cfg.hash());
        assert_eq!(v["config"]["k"], 61);
        assert!(v["version"].as_str().unwrap().starts_with('v'));
    }
}
