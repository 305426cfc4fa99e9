use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use arena_eval_core::io::{read_json, read_jsonl};
use arena_eval_core::model::{CountAnnotation, ModelId, RatingRecord, Study};
use arena_eval_core::scheduler::TournamentPlan;
use arena_eval_service::eventlog::{counts_of, ratings_of, read_events, LogEvent};

use crate::commands::UsageError;

fn is_event_log(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let Some(first) = text.lines().find(|l| !l.trim().is_empty()) else { return Ok(false) };
    let v: serde_json::Value = serde_json::from_str(first).with_context(|| format!("{}: line 1", path.display()))?;
    Ok(v.get("type").is_some() && v.get("record").is_some())
}

fn events(path: &Path) -> Result<Vec<LogEvent>> {
    Ok(read_events(path)?.0)
}

/// Rating records from a ratings file or a service event log.
pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    if is_event_log(path)? {
        Ok(ratings_of(&events(path)?))
    } else {
        Ok(read_jsonl(path)?)
    }
}

pub fn load_counts(path: &Path) -> Result<Vec<CountAnnotation>> {
    if is_event_log(path)? {
        Ok(counts_of(&events(path)?))
    } else {
        Ok(read_jsonl(path)?)
    }
}

pub fn load_plan(path: &Path) -> Result<TournamentPlan> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(TournamentPlan { studies: read_jsonl(path)?, counting: Vec::new() })
    } else {
        Ok(read_json(path)?)
    }
}

/// Studies from `explicit`, or from a plan.json / studies.jsonl beside
/// `near`.
pub fn load_studies(explicit: Option<&Path>, near: &Path) -> Result<Vec<Study>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = near.parent().unwrap_or(Path::new("."));
            let candidates: Vec<PathBuf> = ["plan.json", "studies.jsonl"].iter().map(|n| dir.join(n)).collect();
            match candidates.iter().find(|p| p.exists()) {
                Some(p) => p.clone(),
                None => bail!(UsageError(format!("--studies not given and no plan.json or studies.jsonl in {}", dir.display()))),
            }
        }
    };
    Ok(load_plan(&path)?.studies)
}

/// `"6"` names six generic models; anything else is a comma list.
pub fn parse_models(spec: &str) -> Result<Vec<ModelId>> {
    if let Ok(n) = spec.trim().parse::<usize>() {
        return (1..=n).map(|i| ModelId::new(format!("model-{i}")).map_err(Into::into)).collect();
    }
    spec.split(',')
        .map(|s| ModelId::new(s.trim()).map_err(|e| UsageError(format!("--models: {e}")).into()))
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}
