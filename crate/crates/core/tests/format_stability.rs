//! Round trips of the on-disk formats.

use std::fs;

use avalign_core::corpus::{parse_manifest, read_manifest, render_manifest, to_canonical_line};
use avalign_core::corpus::synth::{synth_corpus, synth_pairs, SynthConfig, SynthDistribution};
use avalign_core::workflow::{parse_traces, render_traces, run_batch, write_batch, Decision, TerminalReason, Workflow, WorkflowConfig};
use avalign_core::Error;
use serde_json::json;

#[test]
fn manifest_round_trip_keeps_unknown_fields() {
    let mut recs: Vec<_> = synth_pairs(&SynthConfig {
        n: 6,
        seed: 8,
        distribution: SynthDistribution::single_corruption(),
        ..SynthConfig::default()
    })
    .unwrap()
    .into_iter()
    .map(|p| p.record)
    .collect();
    recs[0].extra.insert("annotator".into(), json!("kb"));
    recs[3].extra.insert("zz_meta".into(), json!({"b": [1, 2.5, null], "a": {"deep": true}}));

    let text = render_manifest(&recs).unwrap();
    let back = parse_manifest(&text).unwrap();
    assert_eq!(back, recs);
    assert_eq!(render_manifest(&back).unwrap(), text);
    assert_eq!(back[3].extra["zz_meta"]["a"]["deep"], json!(true));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    fs::write(&path, &text).unwrap();
    let again = render_manifest(&read_manifest(&path).unwrap()).unwrap();
    assert_eq!(again.as_bytes(), fs::read(&path).unwrap().as_slice());
}

#[test]
fn canonical_lines_sort_keys() {
    let rec = synth_pairs(&SynthConfig { n: 1, ..SynthConfig::default() }).unwrap().remove(0).record;
    let line = to_canonical_line(&rec).unwrap();
    let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line)
        .unwrap()
        .keys()
        .cloned()
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(!line.contains('\n'));
}

#[test]
fn malformed_line_is_located() {
    let recs: Vec<_> = synth_pairs(&SynthConfig { n: 10, ..SynthConfig::default() })
        .unwrap()
        .into_iter()
        .map(|p| p.record)
        .collect();
    let mut lines: Vec<String> = render_manifest(&recs).unwrap().lines().map(String::from).collect();
    lines[6] = lines[6][..lines[6].len() / 2].to_string();
    match parse_manifest(&lines.join("\n")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn invalid_video_features_are_located() {
    let recs: Vec<_> = synth_pairs(&SynthConfig { n: 3, ..SynthConfig::default() })
        .unwrap()
        .into_iter()
        .map(|p| p.record)
        .collect();
    let mut v: serde_json::Value = serde_json::from_str(&to_canonical_line(&recs[1]).unwrap()).unwrap();
    v["video_features"]["frame_rate_hz"] = json!(-1.0);
    let text = format!(
        "{}\n{}\n{}\n",
        to_canonical_line(&recs[0]).unwrap(),
        v,
        to_canonical_line(&recs[2]).unwrap()
    );
    assert!(matches!(parse_manifest(&text), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_corpus(
        &SynthConfig {
            n: 8,
            seed: 12,
            distribution: SynthDistribution::single_corruption(),
            ..SynthConfig::default()
        },
        dir.path(),
    )
    .unwrap();
    let wf = Workflow::builtin(WorkflowConfig::default()).unwrap();
    let res = run_batch(&recs, dir.path(), &wf, 1).unwrap();
    let traces = res.traces();
    assert!(traces.iter().any(|t| !t.cycles.is_empty()));

    let text = render_traces(&traces).unwrap();
    let back = parse_traces(&text).unwrap();
    assert_eq!(back, traces);
    assert_eq!(render_traces(&back).unwrap(), text);
}

fn assert_passthrough(seed: u64, cfg: WorkflowConfig, distribution: SynthDistribution) -> usize {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_corpus(&SynthConfig { n: 6, seed, distribution, ..SynthConfig::default() }, dir.path()).unwrap();
    let wf = Workflow::builtin(cfg).unwrap();
    let res = run_batch(&recs, dir.path(), &wf, 1).unwrap();
    let out = dir.path().join("out");
    let written = write_batch(&res, &out).unwrap();
    let mut untouched = 0;
    for (p, w) in res.pairs.iter().zip(&written) {
        if p.trace.cycles.iter().any(|c| c.decision == Decision::Accepted) {
            continue;
        }
        untouched += 1;
        let src = fs::read(dir.path().join(&p.record.audio_path)).unwrap();
        let dst = fs::read(out.join(&w.audio_path)).unwrap();
        assert_eq!(src, dst, "{}", p.record.pair_id);
    }
    untouched
}

#[test]
fn zero_cycle_pairs_pass_through_bit_exact() {
    let cfg = WorkflowConfig {
        threshold: 0.01,
        ..WorkflowConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_corpus(&SynthConfig { n: 3, seed: 13, ..SynthConfig::default() }, dir.path()).unwrap();
    let res = run_batch(&recs, dir.path(), &Workflow::builtin(cfg.clone()).unwrap(), 1).unwrap();
    assert!(res.pairs.iter().all(|p| p.trace.cycles.is_empty() && p.trace.terminal_reason == TerminalReason::ThresholdMet));
    assert_eq!(assert_passthrough(13, cfg, SynthDistribution::default()), 6);
}

#[test]
fn unaccepted_pairs_pass_through_bit_exact() {
    let n = assert_passthrough(15, WorkflowConfig::default(), SynthDistribution::single_corruption());
    assert!(n > 0);
}

#[test]
fn batch_output_manifest_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_corpus(&SynthConfig { n: 4, seed: 14, ..SynthConfig::default() }, dir.path()).unwrap();
    let wf = Workflow::builtin(WorkflowConfig::default()).unwrap();
    let out = dir.path().join("out");
    let written = write_batch(&run_batch(&recs, dir.path(), &wf, 1).unwrap(), &out).unwrap();
    let back = read_manifest(&out.join("manifest.jsonl")).unwrap();
    assert_eq!(back, written);
    let traces = parse_traces(&fs::read_to_string(out.join("traces.jsonl")).unwrap()).unwrap();
    assert_eq!(traces.len(), 4);
}
