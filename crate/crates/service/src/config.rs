use std::path::{Path, PathBuf};

use arena_eval_core::scheduler::{RaterConstraints, DEFAULT_LEASE_SECONDS};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

fn default_bind() -> String {
    "127.0.0.1".into()
}
fn default_port() -> u16 {
    8080
}
fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}
fn default_lease() -> i64 {
    DEFAULT_LEASE_SECONDS
}
fn default_threshold() -> u64 {
    100
}
fn default_n_boot() -> usize {
    1000
}
fn default_progress_every() -> u64 {
    50
}
fn default_session_gap() -> i64 {
    1800
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Holds `events.jsonl` and `progress.json`.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Tournament plan (`plan.json`); defaults to `<data_dir>/plan.json`.
    #[serde(default)]
    pub plan: Option<PathBuf>,
    /// Prompt-set JSON files, one per set used by the plan.
    #[serde(default)]
    pub prompt_sets: Vec<PathBuf>,
    /// JSONL of `{model, prompt_id, path}` image entries.
    #[serde(default)]
    pub assets: Option<PathBuf>,
    /// Static rater UI bundle served under `/ui/`.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    #[serde(default = "default_lease")]
    pub lease_seconds: i64,
    #[serde(default)]
    pub constraints: RaterConstraints,
    /// Studies with fewer ratings are left out of leaderboard responses.
    #[serde(default = "default_threshold")]
    pub completion_threshold: u64,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    /// Rewrite `progress.json` after this many accepted submissions.
    #[serde(default = "default_progress_every")]
    pub progress_every: u64,
    /// Idle time after which a rater's next submission opens a new session.
    #[serde(default = "default_session_gap")]
    pub session_gap_seconds: i64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

impl ServiceConfig {
    /// Reads a TOML file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ServiceConfig =
            toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        self.plan.iter_mut().for_each(fix);
        self.prompt_sets.iter_mut().for_each(fix);
        self.assets.iter_mut().for_each(fix);
        self.ui_dir.iter_mut().for_each(fix);
    }

    /// Applies `ARENA_*` overrides from `lookup` (normally the process
    /// environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        fn parse<T: std::str::FromStr>(key: &str, v: String) -> Result<T, ServiceError> {
            v.parse().map_err(|_| ServiceError::Config(format!("{key}: cannot parse {v:?}")))
        }
        if let Some(v) = lookup("ARENA_BIND") {
            self.bind = v;
        }
        if let Some(v) = lookup("ARENA_PORT") {
            self.port = parse("ARENA_PORT", v)?;
        }
        if let Some(v) = lookup("ARENA_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup("ARENA_SEED") {
            self.seed = parse("ARENA_SEED", v)?;
        }
        if let Some(v) = lookup("ARENA_LEASE_SECONDS") {
            self.lease_seconds = parse("ARENA_LEASE_SECONDS", v)?;
        }
        if let Some(v) = lookup("ARENA_MAX_STUDY_FRACTION") {
            self.constraints.max_study_fraction = parse("ARENA_MAX_STUDY_FRACTION", v)?;
        }
        if let Some(v) = lookup("ARENA_MAX_RATING_FRACTION") {
            self.constraints.max_rating_fraction_per_study = parse("ARENA_MAX_RATING_FRACTION", v)?;
        }
        if let Some(v) = lookup("ARENA_COMPLETION_THRESHOLD") {
            self.completion_threshold = parse("ARENA_COMPLETION_THRESHOLD", v)?;
        }
        Ok(())
    }

    pub fn plan_path(&self) -> PathBuf {
        self.plan.clone().unwrap_or_else(|| self.data_dir.join("plan.json"))
    }

    pub fn log_path(&self) -> PathBuf {
        self.data_dir.join("events.jsonl")
    }

    pub fn progress_path(&self) -> PathBuf {
        self.data_dir.join("progress.json")
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.constraints.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        if self.lease_seconds <= 0 {
            return Err(ServiceError::Config("lease_seconds must be positive".into()));
        }
        if self.n_boot == 0 {
            return Err(ServiceError::Config("n_boot must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ServiceConfig::default();
        assert_eq!(c.port, 8080);
        assert_eq!(c.lease_seconds, 600);
        assert_eq!(c.completion_threshold, 100);
        assert_eq!(c.constraints, RaterConstraints::default());
    }

    #[test]
    fn env_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arena.toml");
        std::fs::write(&path, "port = 9000\nseed = 3\nprompt_sets = [\"sets/a.json\"]\n[constraints]\nmax_study_fraction = 0.2\nmax_rating_fraction_per_study = 0.05\n").unwrap();
        let mut c = ServiceConfig::from_file(&path).unwrap();
        assert_eq!(c.port, 9000);
        assert_eq!(c.prompt_sets[0], dir.path().join("sets/a.json"));
        c.apply_env(|k| match k {
            "ARENA_PORT" => Some("9100".into()),
            "ARENA_MAX_STUDY_FRACTION" => Some("0.5".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.port, 9100);
        assert_eq!(c.seed, 3);
        assert_eq!(c.constraints.max_study_fraction, 0.5);
        assert!(c.apply_env(|k| (k == "ARENA_SEED").then(|| "x".into())).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ServiceConfig>("colour = 1").is_err());
    }
}
