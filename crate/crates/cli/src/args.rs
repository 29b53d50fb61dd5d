//! Command-line surface.
//!
//! Overridable flags are `Option`s so an unset flag never masks a value from
//! the config file. The `[default: ...]` notes in `--help` are filled in at
//! runtime from the library defaults; see [`command`].

use std::path::PathBuf;

use avalign_core::config::PipelineConfig;
use avalign_core::planning::PlannerKind;
use avalign_core::workflow::RevertPolicy;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

/// Pairs synthesized by `ablate` when no manifest is given.
pub const ABLATE_DEFAULT_PAIRS: usize = 200;
/// Seeds run by `ablate`.
pub const ABLATE_DEFAULT_SEEDS: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "avalign", version, about = "Align audio to paired visual content with an edit-score loop")]
pub struct Cli {
    /// TOML config file; flags override its values
    #[arg(long, global = true, value_name = "PATH", display_order = 100)]
    pub config: Option<PathBuf>,

    /// Print the resolved configuration as TOML and exit
    #[arg(long, global = true, display_order = 101)]
    pub effective_config: bool,

    /// Log level for stderr
    #[arg(long = "log", global = true, value_enum, value_name = "LEVEL", display_order = 102)]
    pub log: Option<LogLevel>,

    /// Worker threads for batch runs and studies
    #[arg(long, global = true, value_name = "N", display_order = 103)]
    pub parallelism: Option<usize>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

impl LogLevel {
    pub fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerArg {
    Rule,
    Random,
    Remote,
}

impl From<PlannerArg> for PlannerKind {
    fn from(p: PlannerArg) -> Self {
        match p {
            PlannerArg::Rule => PlannerKind::Rule,
            PlannerArg::Random => PlannerKind::Random,
            PlannerArg::Remote => PlannerKind::Remote,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RevertArg {
    OriginalOnNoImprove,
    Chain,
}

impl From<RevertArg> for RevertPolicy {
    fn from(p: RevertArg) -> Self {
        match p {
            RevertArg::OriginalOnNoImprove => RevertPolicy::OriginalOnNoImprove,
            RevertArg::Chain => RevertPolicy::Chain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistributionArg {
    /// One corruption per pair, drawn from the default spans
    Single,
    /// Noise plus a speed change on every pair
    Mixture,
    /// No corruption
    Clean,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the workflow on one audio file and its video features
    Align(AlignArgs),
    /// Run the workflow over every pair of a manifest
    Batch(BatchArgs),
    /// Generate a synthetic corpus with known corruptions
    Synth(SynthArgs),
    /// Score true/false pair mixtures on the five-cell grid
    Analyze(AnalyzeArgs),
    /// Compare the rule planner against random actions
    Ablate(AblateArgs),
    /// Summarize a manifest or a trace file
    Inspect(InspectArgs),
}

/// Workflow overrides shared by the subcommands that run the loop.
#[derive(Debug, Clone, Default, Args)]
pub struct WorkflowArgs {
    /// Planner choosing the edits
    #[arg(long, value_enum)]
    pub planner: Option<PlannerArg>,

    /// Cycle budget per pair
    #[arg(long, value_name = "N")]
    pub max_cycles: Option<usize>,

    /// Stop once both scores reach this value, in (0, 1]
    #[arg(long, value_name = "X")]
    pub threshold: Option<f64>,

    /// Base seed for stochastic actions and planners
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,

    /// Where candidates start from
    #[arg(long, value_enum)]
    pub revert_policy: Option<RevertArg>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Input WAV
    #[arg(long, value_name = "PATH")]
    pub audio: PathBuf,

    /// Video feature series as JSON
    #[arg(long, value_name = "PATH")]
    pub features: PathBuf,

    /// Output WAV, 16-bit [default: <audio stem>.aligned.wav beside the input]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Trace output [default: the output path with extension .trace.json]
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,

    #[command(flatten)]
    pub workflow: WorkflowArgs,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Input manifest (JSON lines)
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    #[command(flatten)]
    pub workflow: WorkflowArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Number of pairs
    #[arg(long, value_name = "N")]
    pub n: Option<usize>,

    /// Corpus seed
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,

    /// Pair duration in seconds
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<f64>,

    /// Corruption distribution
    #[arg(long, value_enum)]
    pub distribution: Option<DistributionArg>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Manifest of the original (false) pairs
    #[arg(long, value_name = "PATH")]
    pub original: PathBuf,

    /// Manifest of the aligned (true) pairs [default: run the workflow on --original into <out>/aligned]
    #[arg(long, value_name = "PATH")]
    pub aligned: Option<PathBuf>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Grid unit u for the cells (u,0) (0,u) (u,u) (u,2u) (2u,u)
    #[arg(long, value_name = "N")]
    pub unit: Option<usize>,

    /// Seed for drawing pairs into the cells
    #[arg(long, value_name = "SEED")]
    pub sample_seed: Option<u64>,

    #[command(flatten)]
    pub workflow: WorkflowArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Synthetic manifest with ground truth [default: synthesize --pairs pairs into <out>/corpus]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Pairs to synthesize when --manifest is absent
    #[arg(long, value_name = "N")]
    pub pairs: Option<usize>,

    /// Number of seeds, counted up from the workflow seed
    #[arg(long, value_name = "K")]
    pub seeds: Option<u64>,

    /// Also measure per-class recovery against the best single action [default: off]
    #[arg(long)]
    pub recovery: bool,

    #[command(flatten)]
    pub workflow: WorkflowArgs,
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group = clap::ArgGroup::new("input").required(true).multiple(true).args(["manifest", "traces"]))]
pub struct InspectArgs {
    /// Manifest to summarize [default: none]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    /// Trace file (JSON lines) to summarize [default: none]
    #[arg(long, value_name = "PATH")]
    pub traces: Option<PathBuf>,

    /// Print the full record and trace of one pair [default: none]
    #[arg(long, value_name = "ID")]
    pub pair: Option<String>,
}

/// `(subcommand, arg id, default)` for every flag whose default comes from
/// the library configuration. `None` as subcommand means a global flag.
pub fn flag_defaults() -> Vec<(Option<&'static str>, &'static str, String)> {
    let d = PipelineConfig::default();
    let w = &d.workflow;
    let mut out = vec![
        (None, "config", "none".to_string()),
        (None, "effective_config", "off".to_string()),
        (None, "log", "info".to_string()),
        (None, "parallelism", d.parallelism.to_string()),
    ];
    for sub in ["align", "batch", "analyze", "ablate"] {
        out.push((Some(sub), "planner", kebab(&w.planner)));
        out.push((Some(sub), "max_cycles", w.max_cycles.to_string()));
        out.push((Some(sub), "threshold", w.threshold.to_string()));
        out.push((Some(sub), "revert_policy", kebab(&w.revert_policy)));
        out.push((Some(sub), "seed", w.seed.to_string()));
    }
    out.push((Some("synth"), "n", d.synth.n.to_string()));
    out.push((Some("synth"), "seed", d.synth.seed.to_string()));
    out.push((Some("synth"), "duration", d.synth.duration_s.to_string()));
    out.push((Some("synth"), "distribution", "single".to_string()));
    let unit = d.mixture.cells.iter().map(|c| c.n_true.max(c.n_false)).min().unwrap_or(0);
    out.push((Some("analyze"), "unit", unit.to_string()));
    out.push((Some("analyze"), "sample_seed", d.mixture.seed.to_string()));
    out.push((Some("ablate"), "pairs", ABLATE_DEFAULT_PAIRS.to_string()));
    out.push((Some("ablate"), "seeds", ABLATE_DEFAULT_SEEDS.to_string()));
    out
}

/// Kebab-case name of a unit enum variant, as clap spells it.
fn kebab<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s.replace('_', "-"),
        other => format!("{other:?}"),
    }
}

/// The clap command with `[default: ...]` appended to every flag listed in
/// [`flag_defaults`].
pub fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for (sub, id, value) in flag_defaults() {
        let annotate = |a: clap::Arg| {
            let help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
            a.help(format!("{help} [default: {value}]"))
        };
        cmd = match sub {
            None => cmd.mut_arg(id, annotate),
            Some(s) => cmd.mut_subcommand(s, |c| c.mut_arg(id, annotate)),
        };
    }
    cmd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn every_flag_documents_a_default() {
        let mut cmd = command();
        cmd.build();
        let mut missing = Vec::new();
        for sub in cmd.get_subcommands() {
            for a in sub.get_arguments() {
                if a.get_long().is_none() || matches!(a.get_id().as_str(), "help" | "version") {
                    continue;
                }
                let help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
                let required = a.is_required_set();
                if !required && !help.contains("[default: ") {
                    missing.push(format!("{} --{}", sub.get_name(), a.get_long().unwrap()));
                }
            }
        }
        assert!(missing.is_empty(), "flags without a documented default: {missing:?}");
    }

    #[test]
    fn defaults_track_library() {
        let d = flag_defaults();
        let find = |s: Option<&str>, id: &str| d.iter().find(|(a, b, _)| *a == s && *b == id).unwrap().2.clone();
        assert_eq!(find(Some("align"), "threshold"), "0.85");
        assert_eq!(find(Some("batch"), "planner"), "rule");
        assert_eq!(find(Some("batch"), "revert_policy"), "original-on-no-improve");
        assert_eq!(find(Some("synth"), "n"), "50");
        assert_eq!(find(Some("analyze"), "unit"), "50");
    }
}
