//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use avalign_core::audio::{load_for_pipeline, write_wav, WavFormat};
use avalign_core::config::PipelineConfig;
use avalign_core::corpus::study::{
    ablation_random_vs_agent, mixture_study, recovery_agent_config, recovery_study, MixtureStudyConfig,
};
use avalign_core::corpus::synth::{synth_corpus, SynthConfig, SynthDistribution};
use avalign_core::corpus::{canonical_json, manifest_root, read_manifest, AVPairRecord};
use avalign_core::video::VideoFeatureSeries;
use avalign_core::workflow::{parse_traces, run_batch, write_batch, BatchReport, Workflow, WorkflowConfig};
use avalign_core::Error;

use crate::args::{
    AblateArgs, AlignArgs, AnalyzeArgs, BatchArgs, Cli, Command, DistributionArg, InspectArgs, SynthArgs,
    WorkflowArgs, ABLATE_DEFAULT_PAIRS, ABLATE_DEFAULT_SEEDS,
};
use crate::CliError;

/// Exit status of a run that did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// The single pair of `align` ended with a workflow error.
    PairError,
}

pub const EFFECTIVE_CONFIG_FILE: &str = "effective-config.toml";

/// Defaults, then the config file and environment, then the flags.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    match &cli.command {
        Some(Command::Align(a)) => apply_workflow(&mut cfg.workflow, &a.workflow),
        Some(Command::Batch(a)) => apply_workflow(&mut cfg.workflow, &a.workflow),
        Some(Command::Analyze(a)) => {
            apply_workflow(&mut cfg.workflow, &a.workflow);
            if let Some(u) = a.unit {
                cfg.mixture.cells = MixtureStudyConfig::grid(u);
            }
            if let Some(s) = a.sample_seed {
                cfg.mixture.seed = s;
            }
        }
        Some(Command::Ablate(a)) => apply_workflow(&mut cfg.workflow, &a.workflow),
        Some(Command::Synth(a)) => apply_synth(&mut cfg.synth, a),
        Some(Command::Inspect(_)) | None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_workflow(w: &mut WorkflowConfig, a: &WorkflowArgs) {
    if let Some(p) = a.planner {
        w.planner = p.into();
    }
    if let Some(n) = a.max_cycles {
        w.max_cycles = n;
    }
    if let Some(t) = a.threshold {
        w.threshold = t;
    }
    if let Some(s) = a.seed {
        w.seed = s;
    }
    if let Some(r) = a.revert_policy {
        w.revert_policy = r.into();
    }
}

fn apply_synth(s: &mut SynthConfig, a: &SynthArgs) {
    if let Some(n) = a.n {
        s.n = n;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(d) = a.duration {
        s.duration_s = d;
    }
    if let Some(d) = a.distribution {
        s.distribution = match d {
            DistributionArg::Single => SynthDistribution::single_corruption(),
            DistributionArg::Mixture => SynthDistribution::mixture(),
            DistributionArg::Clean => SynthDistribution::default(),
        };
    }
}

pub fn run(cmd: &Command, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    match cmd {
        Command::Align(a) => align(a, cfg),
        Command::Batch(a) => batch(a, cfg),
        Command::Synth(a) => synth(a, cfg),
        Command::Analyze(a) => analyze(a, cfg),
        Command::Ablate(a) => ablate(a, cfg),
        Command::Inspect(a) => inspect(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)?;
    Ok(())
}

fn write_effective(cfg: &PipelineConfig, dir: &Path) -> Result<(), CliError> {
    write_file(&dir.join(EFFECTIVE_CONFIG_FILE), &cfg.effective_toml()?)
}

fn pretty<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(v).map_err(Error::from)?;
    Ok(serde_json::to_string_pretty(&v).map_err(Error::from)? + "\n")
}

fn read_features(path: &Path) -> Result<VideoFeatureSeries, CliError> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let v: VideoFeatureSeries = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })?;
    v.validate()?;
    Ok(v)
}

fn default_out(audio: &Path) -> PathBuf {
    let stem = audio.file_stem().and_then(|s| s.to_str()).unwrap_or("audio");
    audio.with_file_name(format!("{stem}.aligned.wav"))
}

fn align(a: &AlignArgs, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let video = read_features(&a.features)?;
    let audio = load_for_pipeline(&a.audio)?;
    let out = a.out.clone().unwrap_or_else(|| default_out(&a.audio));
    let trace_path = a.trace.clone().unwrap_or_else(|| out.with_extension("trace.json"));
    let pair_id = a.audio.file_stem().and_then(|s| s.to_str()).unwrap_or("pair");

    let wf = Workflow::new(cfg.workflow.clone(), &cfg.backend)?;
    let (aligned, trace) = wf.run_audio(pair_id, &audio, &video);
    write_wav(&out, &aligned, WavFormat::Pcm16)?;
    write_file(&trace_path, &(canonical_json(&trace)? + "\n"))?;

    match trace.final_scores {
        Some(s) => println!(
            "alignment {:.4}  temporal {:.4}  min {:.4}  cycles {}  {}",
            s.alignment,
            s.temporal,
            s.min(),
            trace.cycles.len(),
            trace.terminal_reason.as_str()
        ),
        None => println!("no scores  cycles {}  {}", trace.cycles.len(), trace.terminal_reason.as_str()),
    }
    println!("wrote {} and {}", out.display(), trace_path.display());
    match &trace.error {
        Some(e) => {
            eprintln!("error: pair {pair_id}: {e}");
            Ok(Outcome::PairError)
        }
        None => Ok(Outcome::Ok),
    }
}

fn run_and_write(
    records: &[AVPairRecord],
    root: &Path,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<(Vec<AVPairRecord>, BatchReport), CliError> {
    let wf = Workflow::new(cfg.workflow.clone(), &cfg.backend)?;
    let result = run_batch(records, root, &wf, cfg.parallelism)?;
    let written = write_batch(&result, out)?;
    if result.report.errored > 0 {
        log::warn!("{} of {} pairs errored", result.report.errored, result.report.pairs);
    }
    Ok((written, result.report))
}

fn batch(a: &BatchArgs, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let records = read_manifest(&a.manifest)?;
    let root = manifest_root(&a.manifest);
    let (_, report) = run_and_write(&records, &root, cfg, &a.out)?;
    write_effective(cfg, &a.out)?;
    print!("{}", report.to_text());
    Ok(Outcome::Ok)
}

fn synth(a: &SynthArgs, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let records = synth_corpus(&cfg.synth, &a.out)?;
    write_effective(cfg, &a.out)?;
    println!("wrote {} pairs to {}", records.len(), a.out.join("manifest.jsonl").display());
    Ok(Outcome::Ok)
}

fn analyze(a: &AnalyzeArgs, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let original = read_manifest(&a.original)?;
    let original_root = manifest_root(&a.original);
    let (aligned, aligned_root) = match &a.aligned {
        Some(p) => (read_manifest(p)?, manifest_root(p)),
        None => {
            let dir = a.out.join("aligned");
            log::info!("no --aligned manifest; running the workflow into {}", dir.display());
            (run_and_write(&original, &original_root, cfg, &dir)?.0, dir)
        }
    };
    let scorer = Workflow::new(cfg.workflow.clone(), &cfg.backend)?.scorer;
    let table = mixture_study(
        &aligned,
        &aligned_root,
        &original,
        &original_root,
        &cfg.mixture,
        &scorer,
        cfg.parallelism,
    )?;
    write_file(&a.out.join("mixture.txt"), &table.to_text())?;
    write_file(&a.out.join("mixture.json"), &pretty(&table)?)?;
    write_effective(cfg, &a.out)?;
    print!("{}", table.to_text());
    Ok(Outcome::Ok)
}

fn ablate(a: &AblateArgs, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let (mut records, root) = match &a.manifest {
        Some(p) => (read_manifest(p)?, manifest_root(p)),
        None => {
            let dir = a.out.join("corpus");
            let sc = SynthConfig {
                n: a.pairs.unwrap_or(ABLATE_DEFAULT_PAIRS),
                distribution: SynthDistribution::single_corruption(),
                ..cfg.synth.clone()
            };
            sc.validate()?;
            (synth_corpus(&sc, &dir)?, dir)
        }
    };
    if let (Some(_), Some(n)) = (&a.manifest, a.pairs) {
        records.truncate(n);
    }
    let k = a.seeds.unwrap_or(ABLATE_DEFAULT_SEEDS);
    if k == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..k).map(|i| cfg.workflow.seed.wrapping_add(i)).collect();
    let report = ablation_random_vs_agent(&records, &root, &cfg.workflow, &seeds, cfg.parallelism)?;
    write_file(&a.out.join("ablation.txt"), &report.to_text())?;
    write_file(&a.out.join("ablation.json"), &pretty(&report)?)?;
    print!("{}", report.to_text());
    if a.recovery {
        let rc = WorkflowConfig {
            seed: cfg.workflow.seed,
            ..recovery_agent_config()
        };
        let rec = recovery_study(&records, &root, &rc, cfg.parallelism)?;
        write_file(&a.out.join("recovery.txt"), &rec.to_text())?;
        write_file(&a.out.join("recovery.json"), &pretty(&rec)?)?;
        print!("\n{}", rec.to_text());
    }
    write_effective(cfg, &a.out)?;
    Ok(Outcome::Ok)
}

fn count_line(name: &str, counts: &BTreeMap<String, usize>) -> String {
    let parts: Vec<String> = counts.iter().map(|(k, n)| format!("{k} {n}")).collect();
    format!("{name:<14}{}\n", if parts.is_empty() { "-".into() } else { parts.join(", ") })
}

fn inspect(a: &InspectArgs) -> Result<Outcome, CliError> {
    let mut found = a.pair.is_none();
    if let Some(p) = &a.manifest {
        let records = read_manifest(p)?;
        let root = manifest_root(p);
        let mut provenance = BTreeMap::new();
        let mut classes = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut missing = 0usize;
        for r in &records {
            *provenance.entry(format!("{:?}", r.provenance).to_lowercase()).or_insert(0) += 1;
            let class = r.ground_truth.map_or("unknown".to_string(), |g| g.class().to_string());
            *classes.entry(class).or_insert(0) += 1;
            for l in &r.video_features.labels {
                *labels.entry(l.clone()).or_insert(0) += 1;
            }
            if !r.resolve_audio(&root).is_file() {
                missing += 1;
            }
        }
        println!("manifest {}", p.display());
        print!("{:<14}{}\n", "pairs", records.len());
        print!("{}", count_line("provenance", &provenance));
        print!("{}", count_line("corruption", &classes));
        print!("{}", count_line("labels", &labels));
        print!("{:<14}{}\n", "missing audio", missing);
        if let Some(id) = &a.pair {
            if let Some(r) = records.iter().find(|r| &r.pair_id == id) {
                print!("{}", pretty(r)?);
                found = true;
            }
        }
    }
    if let Some(p) = &a.traces {
        let text = fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        let traces = parse_traces(&text)?;
        println!("traces {}", p.display());
        print!("{}", BatchReport::from_traces(&traces).to_text());
        if let Some(id) = &a.pair {
            if let Some(t) = traces.iter().find(|t| &t.pair_id == id) {
                print!("{}", pretty(t)?);
                found = true;
            }
        }
    }
    if !found {
        return Err(CliError::NotFound(a.pair.clone().unwrap_or_default()));
    }
    Ok(Outcome::Ok)
}
