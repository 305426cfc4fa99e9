use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use arena_eval_client::ArenaClient;
use arena_eval_core::api::{Answer, NextTaskResponse, SubmitRequest};
use arena_eval_core::distmetrics::{run_manifest, DistManifest};
use arena_eval_core::elo::{bootstrap_leaderboard, EloConfig, EloError, Leaderboard};
use arena_eval_core::evalsuite::{counting_report, fairness_report, CountingReport, FairnessReport};
use arena_eval_core::io::{read_json, read_jsonl, to_jsonl};
use arena_eval_core::model::{CategoricalLabel, ModelId, PromptSet, Response};
use arena_eval_core::report::{agreement_markdown, counting_markdown, fairness_markdown, leaderboard_markdown, RenderFormat, ReportBundle};
use arena_eval_core::scheduler::{plan_counting, plan_exhaustive, plan_insertion, plan_insertion_stage1, TournamentPlan};
use arena_eval_core::simulate::{simulate_ratings, synthetic_prompt_ids, SimulationConfig};
use arena_eval_core::stats::{agreement_report, human_pair_classes, metric_names, metric_pair_classes, render_grid, AgreementReport, ClassFile, ClassMap};
use arena_eval_core::validate::validate_ratings;
use arena_eval_core::{distmetrics, report};
use arena_eval_service::config::ServiceConfig;
use serde::{Deserialize, Serialize};

use crate::inputs::{load_counts, load_plan, load_ratings, load_studies, parse_models, write_pretty, write_text};
use crate::{
    AgreementArgs, ClientCommand, CountingArgs, DistArgs, FairnessArgs, LeaderboardArgs, PlanArgs, ReportArgs, ServeArgs,
    SimulateArgs, ValidateArgs,
};

/// Bad flag values or missing inputs; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Validation findings; exits with status 1.
#[derive(Debug)]
pub struct ValidationFailed(pub usize);

impl fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation finding(s)", self.0)
    }
}

impl std::error::Error for ValidationFailed {}

/// Contents of agreement.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementFile {
    pub report: AgreementReport,
    pub human: ClassFile,
    pub metrics: Vec<ClassFile>,
}

pub fn plan(a: PlanArgs) -> Result<()> {
    let models = parse_models(&a.models)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut plan = match &a.insert {
        Some(new) => return plan_insert(&a, new),
        None => plan_exhaustive(&models, &a.aspects, &a.sets, a.target).map_err(|e| UsageError(e.to_string()))?,
    };
    if a.counting {
        plan.merge(plan_counting(&models, &a.sets, a.counting_target.unwrap_or(a.target))?);
    }
    write_plan(&a.out, &plan)?;
    println!("{} pairwise studies, {} counting studies", plan.studies.len(), plan.counting.len());
    Ok(())
}

fn write_plan(dir: &Path, plan: &TournamentPlan) -> Result<()> {
    write_pretty(&dir.join("plan.json"), plan)?;
    write_text(&dir.join("studies.jsonl"), &to_jsonl(&plan.studies)?)
}

fn plan_insert(a: &PlanArgs, new: &str) -> Result<()> {
    let new = ModelId::new(new).map_err(|e| UsageError(format!("--insert: {e}")))?;
    let [aspect] = a.aspects[..] else { bail!(UsageError("insertion needs exactly one --aspects value".into())) };
    let [set] = &a.sets[..] else { bail!(UsageError("insertion needs exactly one --set".into())) };
    let path = a.leaderboard.as_deref().expect("clap requires --leaderboard");
    let boards: Vec<Leaderboard> = read_json(path)?;
    let board = boards
        .iter()
        .find(|lb| lb.aspect == Some(aspect) && lb.prompt_set.as_deref() == Some(set.as_str()))
        .or_else(|| (boards.len() == 1).then(|| &boards[0]))
        .ok_or_else(|| UsageError(format!("no leaderboard for {aspect}/{set} in {}", path.display())))?;
    let ranks: Vec<(ModelId, f64)> = board.entries.iter().map(|e| (e.model.clone(), e.rating)).collect();
    let studies = match a.preliminary {
        None => vec![plan_insertion_stage1(&new, &ranks, aspect, set, a.target)?],
        Some(r) => {
            let ins = plan_insertion(&new, &ranks, r, a.neighbors, aspect, set, a.target)?;
            write_pretty(&a.out.join("insertion.json"), &ins)?;
            ins.all_studies()
        }
    };
    let plan = TournamentPlan { studies, counting: Vec::new() };
    write_plan(&a.out, &plan)?;
    println!("{} studies for {new}", plan.studies.len());
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let mut config = ServiceConfig::from_file(&a.config)?;
    config.apply_env(|k| std::env::var(k).ok())?;
    config.validate()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(arena_eval_service::run(config))?;
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let plan = load_plan(&a.plan)?;
    let mut ratings = BTreeMap::new();
    for item in &a.ratings {
        let (name, value) = item.split_once('=').ok_or_else(|| UsageError(format!("--ratings: expected model=rating, got {item:?}")))?;
        let model = ModelId::new(name.trim()).map_err(|e| UsageError(format!("--ratings: {e}")))?;
        let value: f64 = value.trim().parse().map_err(|_| UsageError(format!("--ratings: bad rating {value:?}")))?;
        ratings.insert(model, value);
    }
    let mut prompts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for p in &a.prompts {
        let set: PromptSet = read_json(p)?;
        prompts.insert(set.name.clone(), set.prompt_ids());
    }
    for s in &plan.studies {
        prompts.entry(s.prompt_set.clone()).or_insert_with(|| synthetic_prompt_ids(a.n_prompts));
    }
    let sim = SimulationConfig { ratings, tie_rate: a.tie_rate, ratings_per_rater: a.ratings_per_rater, seed: a.seed };
    let records = simulate_ratings(&plan.studies, &prompts, &sim, &EloConfig::default())?;
    write_text(&a.out, &to_jsonl(&records)?)?;
    println!("{} ratings over {} studies", records.len(), plan.studies.len());
    Ok(())
}

pub fn leaderboard(a: LeaderboardArgs) -> Result<()> {
    let records = load_ratings(&a.ratings)?;
    let studies = load_studies(a.studies.as_deref(), &a.ratings)?;
    let plan = TournamentPlan { studies, counting: Vec::new() };
    let config = EloConfig { tie_policy: a.ties, ..EloConfig::default() };
    let mut boards = Vec::new();
    for ((aspect, set), group) in plan.groups() {
        if a.aspect.is_some_and(|x| x != aspect) || a.set.as_ref().is_some_and(|x| *x != set) {
            continue;
        }
        let ids: BTreeSet<&str> = group.iter().map(|s| s.study_id.as_str()).collect();
        let scoped: Vec<_> = records.iter().filter(|r| ids.contains(r.study_id.as_str())).cloned().collect();
        if scoped.is_empty() {
            continue;
        }
        let studies: Vec<_> = group.into_iter().cloned().collect();
        match bootstrap_leaderboard(&scoped, &studies, &config, a.level, a.boot, a.seed) {
            Ok(lb) => boards.push(lb),
            Err(EloError::Disconnected { components }) => {
                let parts: Vec<String> = components
                    .iter()
                    .map(|c| format!("[{}]", c.iter().map(ModelId::as_str).collect::<Vec<_>>().join(", ")))
                    .collect();
                bail!("{aspect}/{set}: comparison graph is disconnected: {}", parts.join(" "));
            }
            Err(e) => return Err(anyhow!("{aspect}/{set}: {e}")),
        }
    }
    if boards.is_empty() {
        bail!("no data: no ratings match the selected studies");
    }
    write_pretty(&a.out, &boards)?;
    for lb in &boards {
        print!("{}", leaderboard_markdown(lb));
    }
    Ok(())
}

pub fn agreement(a: AgreementArgs) -> Result<()> {
    let human = match (&a.human, &a.human_ratings) {
        (Some(p), _) => read_json::<ClassFile>(p)?,
        (None, Some(p)) => {
            let records = load_ratings(p)?;
            let studies = load_studies(a.studies.as_deref(), p)?;
            let seed = a.seed.expect("clap requires --seed");
            let classes = human_pair_classes(&records, &studies, a.ties, a.level, a.boot, seed)?;
            let map: ClassMap = classes.into_iter().map(|(k, c)| (k, c.class)).collect();
            ClassFile::from_map("human", &map)
        }
        (None, None) => unreachable!("clap requires a human source"),
    };
    let mut metrics: Vec<ClassFile> = a.metrics.iter().map(read_json::<ClassFile>).collect::<Result<_, _>>()?;
    if let Some(p) = &a.scores {
        let scores = read_jsonl(p)?;
        for name in metric_names(&scores) {
            let map = metric_pair_classes(&scores, &name, a.alpha)?;
            metrics.push(ClassFile::from_map(name, &map));
        }
    }
    if metrics.is_empty() {
        bail!(UsageError("give at least one --metric or --scores".into()));
    }
    let named: Vec<(String, ClassMap)> = metrics.iter().map(|m| (m.name.clone(), m.to_map())).collect();
    let report = agreement_report(&named, &human.to_map())?;
    write_pretty(&a.out, &AgreementFile { report: report.clone(), human: human.clone(), metrics: metrics.clone() })?;
    print!("{}", agreement_markdown(&report));
    let human_map = human.to_map();
    for (name, map) in &named {
        println!();
        print!("{}", render_grid(name, map, &human_map));
    }
    Ok(())
}

pub fn fairness(a: FairnessArgs) -> Result<()> {
    let labels: Vec<CategoricalLabel> = read_jsonl(&a.labels)?;
    let models: Vec<ModelId> = if a.models.is_empty() {
        labels.iter().map(|l| l.model.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        a.models.iter().map(|m| ModelId::new(m.as_str()).map_err(|e| UsageError(format!("--model: {e}")))).collect::<Result<_, _>>()?
    };
    let reports: Vec<FairnessReport> =
        models.iter().map(|m| fairness_report(&labels, m, a.images_per_prompt)).collect::<Result<_, _>>()?;
    write_pretty(&a.out, &reports)?;
    print!("{}", fairness_markdown(&reports));
    for r in &reports {
        for w in &r.warnings {
            eprintln!("warning: {}: {w}", r.model);
        }
    }
    Ok(())
}

pub fn counting(a: CountingArgs) -> Result<()> {
    let anns = load_counts(&a.counts)?;
    let models: Vec<ModelId> = if a.models.is_empty() {
        anns.iter().map(|c| c.model.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        a.models.iter().map(|m| ModelId::new(m.as_str()).map_err(|e| UsageError(format!("--model: {e}")))).collect::<Result<_, _>>()?
    };
    let reports: Vec<CountingReport> =
        models.iter().map(|m| counting_report(&anns, m, a.level, a.boot, a.seed)).collect::<Result<_, _>>()?;
    write_pretty(&a.out, &reports)?;
    print!("{}", counting_markdown(&reports));
    Ok(())
}

pub fn distmetrics(a: DistArgs) -> Result<()> {
    let manifest: DistManifest = read_json(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let table = run_manifest(&manifest, base)?;
    write_pretty(&a.out, &table)?;
    print!("{}", report::distmetrics_markdown(&table));
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut bundle = ReportBundle::default();
    for p in &a.leaderboards {
        bundle.leaderboards.extend(read_json::<Vec<Leaderboard>>(p)?);
    }
    if let Some(p) = &a.agreement {
        let f: AgreementFile = read_json(p)?;
        bundle.agreement = Some(f.report);
        bundle.agreement_human = Some(f.human);
        bundle.agreement_metrics = f.metrics;
    }
    if let Some(p) = &a.fairness {
        bundle.fairness = read_json(p)?;
    }
    if let Some(p) = &a.counting {
        bundle.counting = read_json(p)?;
    }
    if let Some(p) = &a.distmetrics {
        bundle.distmetrics = Some(read_json::<distmetrics::DistMetricsTable>(p)?);
    }
    if bundle == ReportBundle::default() {
        bail!(UsageError("nothing to report: pass at least one input".into()));
    }
    let json_path = a.out.with_file_name("report.json");
    write_text(&json_path, &bundle.render(RenderFormat::Json))?;
    if a.format != RenderFormat::Json && a.out != json_path {
        write_text(&a.out, &bundle.render(a.format))?;
    }
    print!("{}", bundle.render(if a.format == RenderFormat::Json { RenderFormat::Markdown } else { a.format }));
    Ok(())
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    let records = load_ratings(&a.ratings)?;
    let studies = load_studies(a.studies.as_deref(), &a.ratings)?;
    let sets: Vec<PromptSet> = a.prompts.iter().map(read_json).collect::<Result<_, _>>()?;
    let report = validate_ratings(&records, &studies, &sets);
    for f in &report.errors {
        println!("{}", f.describe());
    }
    println!("{} ratings, {} studies, {} finding(s)", records.len(), studies.len(), report.errors.len());
    if report.is_ok() {
        Ok(())
    } else {
        Err(ValidationFailed(report.errors.len()).into())
    }
}

fn parse_answer(s: &str) -> Result<Answer> {
    if let Ok(n) = s.parse::<u32>() {
        return Ok(Answer::Count(n));
    }
    let r = match s.to_ascii_lowercase().as_str() {
        "left" => Response::Left,
        "right" => Response::Right,
        "indifferent" | "tie" => Response::Indifferent,
        _ => bail!(UsageError(format!("--answer: expected left, right, indifferent or a count, got {s:?}"))),
    };
    Ok(Answer::Choice(r))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn client(c: ClientCommand) -> Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async {
        match c {
            ClientCommand::Health(b) => print_json(&ArenaClient::new(&b.url)?.health().await?),
            ClientCommand::Next { base, rater } => {
                let resp = ArenaClient::new(&base.url)?.next_task(&rater).await?;
                if matches!(resp, NextTaskResponse::NoTaskAvailable) {
                    eprintln!("no task available for {rater}");
                }
                print_json(&resp)
            }
            ClientCommand::Submit { base, task, rater, answer } => {
                let req = SubmitRequest { task_id: task, answer: parse_answer(&answer)?, rater_id: rater };
                let ack = ArenaClient::new(&base.url)?.submit(&req).await?;
                print_json(&ack)?;
                if !ack.accepted {
                    bail!("submission rejected: {}", ack.reason.map(|r| r.as_str()).unwrap_or("unknown"));
                }
                Ok(())
            }
            ClientCommand::Leaderboard { base, aspect, set, level } => {
                let resp = ArenaClient::new(&base.url)?.leaderboard(aspect, &set, level).await?;
                print!("{}", leaderboard_markdown(&resp.leaderboard));
                println!("log offset {}, {} studies used, {} withheld", resp.log_offset, resp.studies_used, resp.studies_withheld);
                Ok(())
            }
            ClientCommand::Status { base, study_id } => print_json(&ArenaClient::new(&base.url)?.study_status(&study_id).await?),
        }
    })
}
