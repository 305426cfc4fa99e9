mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use arena_eval_core::elo::TiePolicy;
use arena_eval_core::model::Aspect;
use arena_eval_core::report::RenderFormat;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arena-eval", version, about = "Pairwise-preference evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan an exhaustive tournament, counting studies or a model insertion.
    Plan(PlanArgs),
    /// Run the rating service.
    Serve(ServeArgs),
    /// Draw synthetic ratings for a plan from known ratings.
    Simulate(SimulateArgs),
    /// Fit Elo leaderboards with bootstrap intervals.
    Leaderboard(LeaderboardArgs),
    /// Compare automatic metric verdicts with human judgments.
    Agreement(AgreementArgs),
    /// Perceived-attribute distributions and homogeneity.
    Fairness(FairnessArgs),
    /// Exact-count accuracy of counting annotations.
    Counting(CountingArgs),
    /// Fréchet and MMD distances between embedding sets.
    Distmetrics(DistArgs),
    /// Render a combined report from analysis outputs.
    Report(ReportArgs),
    /// Check ratings against the plan. Writes nothing.
    Validate(ValidateArgs),
    /// Talk to a running service.
    #[command(subcommand)]
    Client(ClientCommand),
}

#[derive(Args)]
pub struct PlanArgs {
    /// Model names separated by commas, or a count for generic names.
    #[arg(long, required = true)]
    pub models: String,
    /// Aspects separated by commas.
    #[arg(long, value_delimiter = ',', default_value = "overall")]
    pub aspects: Vec<Aspect>,
    /// Prompt set name; repeat for several.
    #[arg(long = "set", required = true)]
    pub sets: Vec<String>,
    #[arg(long, default_value_t = 2500)]
    pub target: u32,
    /// Also plan one counting study per model and set.
    #[arg(long)]
    pub counting: bool,
    #[arg(long)]
    pub counting_target: Option<u32>,
    /// Plan the insertion of this model against `--leaderboard` instead of
    /// a full tournament.
    #[arg(long, requires = "leaderboard")]
    pub insert: Option<String>,
    #[arg(long)]
    pub leaderboard: Option<PathBuf>,
    /// Rating of the new model after stage 1. Without it only stage 1 is
    /// planned.
    #[arg(long, requires = "insert", allow_hyphen_values = true)]
    pub preliminary: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub neighbors: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Generating ratings as `model=rating`, comma separated.
    #[arg(long, required = true, value_delimiter = ',')]
    pub ratings: Vec<String>,
    /// Prompt set files. Sets without a file get synthetic prompt ids.
    #[arg(long = "prompts")]
    pub prompts: Vec<PathBuf>,
    #[arg(long, default_value_t = 1600)]
    pub n_prompts: usize,
    #[arg(long, default_value_t = 0.0)]
    pub tie_rate: f64,
    #[arg(long, default_value_t = 50)]
    pub ratings_per_rater: u32,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "ratings.jsonl")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct LeaderboardArgs {
    /// Rating records, or a service event log.
    #[arg(long)]
    pub ratings: PathBuf,
    /// plan.json or studies.jsonl. Defaults to a plan.json or
    /// studies.jsonl next to the ratings.
    #[arg(long)]
    pub studies: Option<PathBuf>,
    #[arg(long)]
    pub aspect: Option<Aspect>,
    #[arg(long)]
    pub set: Option<String>,
    #[arg(long, default_value_t = 0.99)]
    pub level: f64,
    #[arg(long, default_value_t = 1000)]
    pub boot: usize,
    #[arg(long, default_value = "half-win")]
    pub ties: TiePolicy,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "leaderboard.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AgreementArgs {
    /// Human verdicts as a class file.
    #[arg(long, required_unless_present = "human_ratings", conflicts_with = "human_ratings")]
    pub human: Option<PathBuf>,
    /// Human ratings to classify by bootstrap instead of `--human`.
    #[arg(long, requires = "seed")]
    pub human_ratings: Option<PathBuf>,
    #[arg(long)]
    pub studies: Option<PathBuf>,
    /// Metric verdicts as a class file; repeat per metric.
    #[arg(long = "metric")]
    pub metrics: Vec<PathBuf>,
    /// Per-prompt metric scores to classify with a signed-rank test.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1000)]
    pub boot: usize,
    #[arg(long, default_value = "half-win")]
    pub ties: TiePolicy,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "agreement.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FairnessArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Restrict to these models; default is every model in the labels.
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub images_per_prompt: u32,
    #[arg(long, default_value = "fairness_report.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CountingArgs {
    /// Count annotations, or a service event log.
    #[arg(long)]
    pub counts: PathBuf,
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1000)]
    pub boot: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "counting_report.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DistArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "distmetrics.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// leaderboard.json files.
    #[arg(long = "leaderboard")]
    pub leaderboards: Vec<PathBuf>,
    #[arg(long)]
    pub agreement: Option<PathBuf>,
    #[arg(long)]
    pub fairness: Option<PathBuf>,
    #[arg(long)]
    pub counting: Option<PathBuf>,
    #[arg(long)]
    pub distmetrics: Option<PathBuf>,
    #[arg(long, default_value = "markdown")]
    pub format: RenderFormat,
    /// Rendered report. The JSON bundle is written next to it as
    /// report.json.
    #[arg(long, default_value = "report.md")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long)]
    pub studies: Option<PathBuf>,
    #[arg(long = "prompts")]
    pub prompts: Vec<PathBuf>,
}

#[derive(Subcommand)]
pub enum ClientCommand {
    Health(ClientBase),
    /// Fetch the next task for a rater.
    Next {
        #[command(flatten)]
        base: ClientBase,
        #[arg(long)]
        rater: String,
    },
    /// Answer a task: left, right, indifferent or a count.
    Submit {
        #[command(flatten)]
        base: ClientBase,
        #[arg(long)]
        task: String,
        #[arg(long)]
        rater: String,
        #[arg(long)]
        answer: String,
    },
    Leaderboard {
        #[command(flatten)]
        base: ClientBase,
        #[arg(long)]
        aspect: Aspect,
        #[arg(long)]
        set: String,
        #[arg(long)]
        level: Option<f64>,
    },
    Status {
        #[command(flatten)]
        base: ClientBase,
        study_id: String,
    },
}

#[derive(Args)]
pub struct ClientBase {
    #[arg(long, env = "ARENA_URL", default_value = "http://127.0.0.1:8080")]
    pub url: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Plan(a) => commands::plan(a),
        Command::Serve(a) => commands::serve(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Leaderboard(a) => commands::leaderboard(a),
        Command::Agreement(a) => commands::agreement(a),
        Command::Fairness(a) => commands::fairness(a),
        Command::Counting(a) => commands::counting(a),
        Command::Distmetrics(a) => commands::distmetrics(a),
        Command::Report(a) => commands::report(a),
        Command::Validate(a) => commands::validate(a),
        Command::Client(c) => commands::client(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
