//! Corpus-level experiments: the true/false mixture table, the random-action
//! ablation, and gap recovery against a best-single-action oracle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::CLEAN_AUDIO_FIELD;
use super::{AVPairRecord, CorruptionClass};
use crate::actions::ActionKind;
use crate::audio::load_for_pipeline;
use crate::backend::BackendConfig;
use crate::error::{Error, Result};
use crate::planning::PlannerKind;
use crate::reflection::{reflect, ReflectionScores, ScorerKind};
use crate::workflow::{cycle_seed, run_batch, MeanScores, Workflow, WorkflowConfig};

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureCell {
    pub n_true: usize,
    pub n_false: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureStudyConfig {
    pub cells: Vec<MixtureCell>,
    pub seed: u64,
}

impl Default for MixtureStudyConfig {
    fn default() -> Self {
        Self {
            cells: Self::grid(50),
            seed: 0,
        }
    }
}

impl MixtureStudyConfig {
    /// The five-cell grid `(u,0) (0,u) (u,u) (u,2u) (2u,u)`.
    pub fn grid(unit: usize) -> Vec<MixtureCell> {
        [(1, 0), (0, 1), (1, 1), (1, 2), (2, 1)]
            .into_iter()
            .map(|(t, f)| MixtureCell {
                n_true: t * unit,
                n_false: f * unit,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("mixture study needs at least one cell".into()));
        }
        if let Some(c) = self.cells.iter().find(|c| c.n_true + c.n_false == 0) {
            return Err(Error::Config(format!("empty mixture cell {c:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n_true: usize,
    pub n_false: usize,
    pub mean_alignment: f64,
    pub mean_temporal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTable {
    pub cells: Vec<CellResult>,
}

impl MixtureTable {
    pub fn cell(&self, n_true: usize, n_false: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.n_true == n_true && c.n_false == n_false)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:>8}{:>9}{:>12}{:>12}\n", "true", "false", "alignment", "temporal");
        for c in &self.cells {
            s += &format!(
                "{:>8}{:>9}{:>12.4}{:>12.4}\n",
                c.n_true, c.n_false, c.mean_alignment, c.mean_temporal
            );
        }
        s
    }
}

fn score_records(
    records: &[&AVPairRecord],
    root: &Path,
    scorer: &ScorerKind,
    parallelism: usize,
) -> Result<Vec<ReflectionScores>> {
    pool(parallelism)?.install(|| {
        records
            .par_iter()
            .map(|r| {
                let audio = load_for_pipeline(&r.resolve_audio(root))?;
                reflect(&audio, &r.video_features, scorer)
            })
            .collect()
    })
}

/// Mean scores of sampled true (aligned) and false (original) pairs per cell.
///
/// Pairs are drawn without replacement from the pair ids both manifests
/// share. Each side is one seeded permutation and a cell takes its prefix,
/// so a larger cell contains every pair of a smaller one on that side.
pub fn mixture_study(
    aligned: &[AVPairRecord],
    aligned_root: &Path,
    original: &[AVPairRecord],
    original_root: &Path,
    cfg: &MixtureStudyConfig,
    scorer: &ScorerKind,
    parallelism: usize,
) -> Result<MixtureTable> {
    cfg.validate()?;
    let orig_by_id: HashMap<&str, &AVPairRecord> = original.iter().map(|r| (r.pair_id.as_str(), r)).collect();
    let shared: BTreeSet<&str> = aligned
        .iter()
        .map(|r| r.pair_id.as_str())
        .filter(|id| orig_by_id.contains_key(id))
        .collect();
    let need = cfg
        .cells
        .iter()
        .map(|c| c.n_true.max(c.n_false))
        .max()
        .unwrap_or(0);
    if shared.len() < need {
        return Err(Error::InsufficientPairs {
            needed: need,
            available: shared.len(),
        });
    }
    let aligned_by_id: HashMap<&str, &AVPairRecord> = aligned.iter().map(|r| (r.pair_id.as_str(), r)).collect();
    let ids: Vec<&str> = shared.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut true_ids = ids.clone();
    true_ids.shuffle(&mut rng);
    let mut false_ids = ids.clone();
    false_ids.shuffle(&mut rng);

    let t_max = cfg.cells.iter().map(|c| c.n_true).max().unwrap_or(0);
    let f_max = cfg.cells.iter().map(|c| c.n_false).max().unwrap_or(0);
    let t_recs: Vec<&AVPairRecord> = true_ids[..t_max].iter().map(|id| aligned_by_id[id]).collect();
    let f_recs: Vec<&AVPairRecord> = false_ids[..f_max].iter().map(|id| orig_by_id[id]).collect();
    let t_scores = score_records(&t_recs, aligned_root, scorer, parallelism)?;
    let f_scores = score_records(&f_recs, original_root, scorer, parallelism)?;

    let cells = cfg
        .cells
        .iter()
        .map(|c| {
            let picked: Vec<&ReflectionScores> =
                t_scores[..c.n_true].iter().chain(&f_scores[..c.n_false]).collect();
            let m = MeanScores::of(picked);
            CellResult {
                n_true: c.n_true,
                n_false: c.n_false,
                mean_alignment: m.alignment,
                mean_temporal: m.temporal,
            }
        })
        .collect();
    Ok(MixtureTable { cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub agent: MeanScores,
    pub baseline: MeanScores,
    /// Agent minus baseline, mean final min-score.
    pub delta: f64,
    /// Share of pairs where the agent's final min-score is at least the baseline's.
    pub win_rate: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<SeedComparison>,
    pub agent: MeanScores,
    pub baseline: MeanScores,
    pub mean_delta: f64,
    pub win_rate: f64,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>8}{:>12}{:>12}{:>10}{:>10}{:>7}\n",
            "seed", "agent min", "random min", "delta", "win rate", "pairs"
        );
        for r in &self.seeds {
            s += &format!(
                "{:>8}{:>12.4}{:>12.4}{:>10.4}{:>10.3}{:>7}\n",
                r.seed, r.agent.min, r.baseline.min, r.delta, r.win_rate, r.pairs
            );
        }
        s += &format!(
            "{:>8}{:>12.4}{:>12.4}{:>10.4}{:>10.3}\n",
            "all", self.agent.min, self.baseline.min, self.mean_delta, self.win_rate
        );
        s
    }
}

/// Runs the corpus through two workflow configurations once per seed and
/// compares final scores pair by pair. Pairs that error in either arm are
/// left out of the comparison.
pub fn compare_arms(
    records: &[AVPairRecord],
    root: &Path,
    agent: &WorkflowConfig,
    baseline: &WorkflowConfig,
    backend: &BackendConfig,
    seeds: &[u64],
    parallelism: usize,
) -> Result<AblationReport> {
    let mut per_seed = Vec::new();
    let (mut all_a, mut all_b) = (Vec::new(), Vec::new());
    let mut wins = 0usize;
    for &seed in seeds {
        let wa = Workflow::new(WorkflowConfig { seed, ..agent.clone() }, backend)?;
        let wb = Workflow::new(WorkflowConfig { seed, ..baseline.clone() }, backend)?;
        let ra = run_batch(records, root, &wa, parallelism)?;
        let rb = run_batch(records, root, &wb, parallelism)?;
        let mut a_scores = Vec::new();
        let mut b_scores = Vec::new();
        let mut seed_wins = 0usize;
        for (pa, pb) in ra.pairs.iter().zip(&rb.pairs) {
            if let (Some(fa), Some(fb)) = (pa.trace.final_scores, pb.trace.final_scores) {
                if pa.trace.error.is_none() && pb.trace.error.is_none() {
                    if fa.min() >= fb.min() {
                        seed_wins += 1;
                    }
                    a_scores.push(fa);
                    b_scores.push(fb);
                }
            }
        }
        let n = a_scores.len();
        let (ma, mb) = (MeanScores::of(&a_scores), MeanScores::of(&b_scores));
        per_seed.push(SeedComparison {
            seed,
            agent: ma,
            baseline: mb,
            delta: ma.min - mb.min,
            win_rate: if n == 0 { 0.0 } else { seed_wins as f64 / n as f64 },
            pairs: n,
        });
        wins += seed_wins;
        all_a.extend(a_scores);
        all_b.extend(b_scores);
    }
    let (ma, mb) = (MeanScores::of(&all_a), MeanScores::of(&all_b));
    Ok(AblationReport {
        seeds: per_seed,
        agent: ma,
        baseline: mb,
        mean_delta: ma.min - mb.min,
        win_rate: if all_a.is_empty() { 0.0 } else { wins as f64 / all_a.len() as f64 },
    })
}

/// Rule planner against the random planner, otherwise identical settings.
pub fn ablation_random_vs_agent(
    records: &[AVPairRecord],
    root: &Path,
    cfg: &WorkflowConfig,
    seeds: &[u64],
    parallelism: usize,
) -> Result<AblationReport> {
    if let Some(r) = records.iter().find(|r| r.ground_truth.is_none()) {
        return Err(Error::InvalidValue(format!(
            "ablation needs synthetic pairs with ground truth; {} has none",
            r.pair_id
        )));
    }
    let agent = WorkflowConfig {
        planner: PlannerKind::Rule,
        ..cfg.clone()
    };
    let random = WorkflowConfig {
        planner: PlannerKind::Random,
        ..cfg.clone()
    };
    compare_arms(records, root, &agent, &random, &BackendConfig::default(), seeds, parallelism)
}

/// The agent configuration the recovery study uses: the default workflow
/// with the stopping threshold raised to 1, so the loop spends its whole
/// budget closing the gap instead of stopping once both scores pass 0.85.
pub fn recovery_agent_config() -> WorkflowConfig {
    let mut cfg = WorkflowConfig {
        threshold: 1.0,
        ..WorkflowConfig::default()
    };
    cfg.rules.score_threshold = 1.0;
    cfg
}

/// Target recovery for a class given what the oracle achieves on it.
pub fn recovery_target(oracle_recovery: f64) -> f64 {
    if oracle_recovery >= 0.7 {
        0.7
    } else {
        0.9 * oracle_recovery
    }
}

/// Pairs whose clean-minus-corrupted gap is below this are left out.
pub const MIN_RECOVERY_GAP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecovery {
    pub clean: f64,
    pub corrupted: f64,
    pub agent: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecovery {
    pub class: CorruptionClass,
    pub pairs: usize,
    /// Pairs with a gap of at least [`MIN_RECOVERY_GAP`].
    pub scored_pairs: usize,
    pub mean_clean: f64,
    pub mean_corrupted: f64,
    pub mean_agent: f64,
    pub mean_oracle: f64,
    /// Mean recovered gap over mean gap; `None` without scored pairs.
    pub agent_recovery: Option<f64>,
    pub oracle_recovery: Option<f64>,
    pub target: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub classes: Vec<ClassRecovery>,
    pub pass: bool,
}

impl RecoveryReport {
    pub fn to_text(&self) -> String {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
        let mut s = format!(
            "{:<8}{:>6}{:>8}{:>8}{:>8}{:>8}{:>8}{:>9}{:>9}{:>8}{:>6}\n",
            "class", "pairs", "scored", "clean", "corrupt", "agent", "oracle", "agent%", "oracle%", "target", "pass"
        );
        for c in &self.classes {
            s += &format!(
                "{:<8}{:>6}{:>8}{:>8.3}{:>8.3}{:>8.3}{:>8.3}{:>9}{:>9}{:>8}{:>6}\n",
                c.class.to_string(),
                c.pairs,
                c.scored_pairs,
                c.mean_clean,
                c.mean_corrupted,
                c.mean_agent,
                c.mean_oracle,
                f(c.agent_recovery),
                f(c.oracle_recovery),
                f(c.target),
                if c.pass { "yes" } else { "no" }
            );
        }
        s += "targets: 0.7, or 0.9 x oracle recovery where the oracle stays below 0.7\n";
        s
    }
}

/// Best min-score over the input and every action applied alone with
/// default parameters.
pub fn best_single_action(
    audio: &crate::audio::AudioBuffer,
    video: &crate::video::VideoFeatureSeries,
    scorer: &ScorerKind,
    seed: u64,
) -> Result<f64> {
    let mut best = reflect(audio, video, scorer)?.min();
    for kind in ActionKind::ALL {
        match kind.default_action().apply(audio, seed) {
            Ok(edited) => best = best.max(reflect(&edited, video, scorer)?.min()),
            Err(e) => log::debug!("oracle: {kind} failed: {e}"),
        }
    }
    Ok(best)
}

/// Per-pair min-scores for clean, corrupted, agent output and oracle.
pub fn measure_recovery(
    record: &AVPairRecord,
    root: &Path,
    wf: &Workflow,
) -> Result<PairRecovery> {
    let clean_rel = record
        .extra
        .get(CLEAN_AUDIO_FIELD)
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::InvalidValue(format!("{} lacks {CLEAN_AUDIO_FIELD}", record.pair_id)))?;
    let clean = load_for_pipeline(&root.join(clean_rel))?;
    let corrupted = load_for_pipeline(&record.resolve_audio(root))?;
    let v = &record.video_features;
    let (_, trace) = wf.run_audio(&record.pair_id, &corrupted, v);
    if let Some(e) = trace.error {
        return Err(Error::InvalidValue(format!("{}: workflow failed: {e}", record.pair_id)));
    }
    Ok(PairRecovery {
        clean: reflect(&clean, v, &wf.scorer)?.min(),
        corrupted: trace.baseline_scores.map(|s| s.min()).unwrap_or(0.0),
        agent: trace.final_scores.map(|s| s.min()).unwrap_or(0.0),
        oracle: best_single_action(&corrupted, v, &wf.scorer, cycle_seed(wf.config.seed, &record.pair_id, 0))?,
    })
}

/// Per corruption class: how much of the clean-minus-corrupted gap the
/// agent closes, next to what the best single default action closes.
pub fn recovery_study(
    records: &[AVPairRecord],
    root: &Path,
    cfg: &WorkflowConfig,
    parallelism: usize,
) -> Result<RecoveryReport> {
    let wf = Workflow::builtin(cfg.clone())?;
    let measured: Vec<(CorruptionClass, PairRecovery)> = pool(parallelism)?.install(|| {
        records
            .par_iter()
            .map(|r| {
                let class = r
                    .ground_truth
                    .ok_or_else(|| Error::InvalidValue(format!("{} has no ground truth", r.pair_id)))?
                    .class();
                Ok((class, measure_recovery(r, root, &wf)?))
            })
            .collect::<Result<_>>()
    })?;
    let mut by: BTreeMap<CorruptionClass, Vec<PairRecovery>> = BTreeMap::new();
    for (c, p) in measured {
        by.entry(c).or_default().push(p);
    }
    let classes: Vec<ClassRecovery> = by
        .into_iter()
        .map(|(class, v)| {
            let mean = |f: fn(&PairRecovery) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
            let scored: Vec<&PairRecovery> = v.iter().filter(|p| p.clean - p.corrupted >= MIN_RECOVERY_GAP).collect();
            let ratio = |f: fn(&PairRecovery) -> f64| {
                let gap: f64 = scored.iter().map(|p| p.clean - p.corrupted).sum();
                let got: f64 = scored.iter().map(|p| f(p) - p.corrupted).sum();
                (!scored.is_empty()).then(|| got / gap)
            };
            let agent_recovery = ratio(|p| p.agent);
            let oracle_recovery = ratio(|p| p.oracle);
            let target = oracle_recovery.map(recovery_target);
            let pass = match (agent_recovery, target) {
                (Some(a), Some(t)) => a >= t,
                _ => true,
            };
            ClassRecovery {
                class,
                pairs: v.len(),
                scored_pairs: scored.len(),
                mean_clean: mean(|p| p.clean),
                mean_corrupted: mean(|p| p.corrupted),
                mean_agent: mean(|p| p.agent),
                mean_oracle: mean(|p| p.oracle),
                agent_recovery,
                oracle_recovery,
                target,
                pass,
            }
        })
        .collect();
    Ok(RecoveryReport {
        pass: classes.iter().all(|c| c.pass),
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{synth_corpus, Span, SynthConfig, SynthDistribution};

    fn corpus(dir: &Path, n: usize, d: SynthDistribution) -> Vec<AVPairRecord> {
        synth_corpus(
            &SynthConfig {
                n,
                seed: 9,
                distribution: d,
                ..SynthConfig::default()
            },
            dir,
        )
        .unwrap()
    }

    #[test]
    fn single_true_cell_is_that_pair() {
        let dir = tempfile::tempdir().unwrap();
        let recs = corpus(dir.path(), 1, SynthDistribution::default());
        let cfg = MixtureStudyConfig {
            cells: vec![MixtureCell { n_true: 1, n_false: 0 }],
            seed: 0,
        };
        let s = ScorerKind::default();
        let t = mixture_study(&recs, dir.path(), &recs, dir.path(), &cfg, &s, 1).unwrap();
        let audio = load_for_pipeline(&recs[0].resolve_audio(dir.path())).unwrap();
        let direct = reflect(&audio, &recs[0].video_features, &s).unwrap();
        assert_eq!(t.cells[0].mean_alignment, direct.alignment);
        assert_eq!(t.cells[0].mean_temporal, direct.temporal);
    }

    #[test]
    fn too_few_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let recs = corpus(dir.path(), 3, SynthDistribution::default());
        let cfg = MixtureStudyConfig {
            cells: MixtureStudyConfig::grid(2),
            seed: 0,
        };
        let r = mixture_study(&recs, dir.path(), &recs, dir.path(), &cfg, &ScorerKind::default(), 1);
        assert!(matches!(r, Err(Error::InsufficientPairs { needed: 4, available: 3 })));
    }

    #[test]
    fn self_comparison_has_zero_delta() {
        let dir = tempfile::tempdir().unwrap();
        let recs = corpus(dir.path(), 3, SynthDistribution::single_corruption());
        let cfg = WorkflowConfig::default();
        let r = compare_arms(&recs, dir.path(), &cfg, &cfg, &BackendConfig::default(), &[1], 1).unwrap();
        assert_eq!(r.mean_delta, 0.0);
        assert_eq!(r.win_rate, 1.0);
    }

    #[test]
    fn ablation_report_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let recs = corpus(dir.path(), 1, SynthDistribution::single_corruption());
        let cfg = WorkflowConfig::default();
        let a = ablation_random_vs_agent(&recs, dir.path(), &cfg, &[4], 1).unwrap();
        let b = ablation_random_vs_agent(&recs, dir.path(), &cfg, &[4], 1).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn recovery_on_speed_faults() {
        let dir = tempfile::tempdir().unwrap();
        let d = SynthDistribution {
            speed_factor: Some(Span::new(1.3, 1.3)),
            ..SynthDistribution::default()
        };
        let recs = corpus(dir.path(), 4, d);
        let r = recovery_study(&recs, dir.path(), &recovery_agent_config(), 1).unwrap();
        assert_eq!(r.classes.len(), 1);
        let c = &r.classes[0];
        assert_eq!(c.class, CorruptionClass::Speed);
        assert!(c.agent_recovery.unwrap() >= 0.7, "{}", r.to_text());
    }

    #[test]
    fn targets() {
        assert_eq!(recovery_target(0.9), 0.7);
        assert!((recovery_target(0.5) - 0.45).abs() < 1e-12);
    }
}
