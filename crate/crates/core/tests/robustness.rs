//! Backend failure modes against a stub server, and batches with broken inputs.

mod common;

use std::fs;
use std::time::Duration;

use avalign_core::backend::{BackendClient, BackendConfig};
use avalign_core::caption::{describe_audio, describe_video, CaptionSource, Captioner, Fallback};
use avalign_core::corpus::synth::{synth_corpus, synth_pairs, SynthConfig};
use avalign_core::planning::{plan_remote, ActionPlan, PlanContext, Planner, RemotePlanner};
use avalign_core::reflection::{reflect, ScorerKind};
use avalign_core::workflow::{run_batch, CaptionerChoice, TerminalReason, Workflow, WorkflowConfig};
use avalign_core::Error;
use common::{dead_url, sine, Reply, Stub};

fn tone() -> avalign_core::audio::AudioBuffer {
    common::buf(sine(440.0, 8000, 0.3))
}

fn client(stub: &Stub) -> BackendClient {
    BackendClient::new(stub.config()).unwrap()
}

fn remote(client: BackendClient, fallback: Fallback) -> Captioner {
    Captioner::Remote { client, fallback }
}

fn plan_ctx() -> PlanContext {
    let p = &synth_pairs(&SynthConfig { n: 1, ..SynthConfig::default() }).unwrap()[0];
    PlanContext {
        audio_caption: describe_audio(&p.corrupted).unwrap(),
        video_caption: describe_video(&p.record.video_features).unwrap(),
        feedback: None,
        cycle_index: 0,
        history: Vec::new(),
    }
}

fn plan_with(body: &str) -> avalign_core::Result<ActionPlan> {
    let stub = Stub::fixed(body);
    plan_remote(&plan_ctx(), &client(&stub))
}

#[test]
fn caption_echo() {
    let stub = Stub::fixed(r#"{"text": "a dog barks twice", "features": {"rms": 0.1}}"#);
    let c = remote(client(&stub), Fallback::None).audio(&tone()).unwrap();
    assert_eq!(c.text, "a dog barks twice");
    assert_eq!(c.source, CaptionSource::Remote);
    assert_eq!(c.feature("rms"), Some(0.1));

    let req: serde_json::Value = serde_json::from_str(&stub.requests()[0].body).unwrap();
    assert_eq!(req["task"], "caption");
    assert_eq!(req["modality"], "audio");
    assert!(req["payload"].is_string());
}

#[test]
fn caption_malformed_body() {
    let stub = Stub::fixed("<html>oops</html>");
    let err = remote(client(&stub), Fallback::None).audio(&tone()).unwrap_err();
    assert!(matches!(err, Error::BackendMalformedResponse(_)), "{err:?}");

    let stub = Stub::fixed(r#"{"features": {}}"#);
    let err = remote(client(&stub), Fallback::None).audio(&tone()).unwrap_err();
    assert!(matches!(err, Error::BackendMalformedResponse(_)), "{err:?}");
}

#[test]
fn caption_unreachable() {
    let cfg = BackendConfig {
        url: Some(dead_url()),
        retries: 1,
        retry_backoff_ms: 1,
        ..BackendConfig::default()
    };
    let c = BackendClient::new(cfg).unwrap();
    let err = remote(c.clone(), Fallback::None).audio(&tone()).unwrap_err();
    assert!(matches!(err, Error::BackendUnreachable { .. }), "{err:?}");

    let fell_back = remote(c, Fallback::Builtin).audio(&tone()).unwrap();
    assert_eq!(fell_back.source, CaptionSource::Builtin);
    assert_eq!(fell_back, describe_audio(&tone()).unwrap());
}

#[test]
fn timeout_is_reported() {
    let stub = Stub::start(|_, _| Reply::ok(r#"{"text": "late"}"#).delayed(Duration::from_millis(600)));
    let cfg = BackendConfig {
        timeout_ms: 100,
        ..stub.config()
    };
    let err = remote(BackendClient::new(cfg).unwrap(), Fallback::None)
        .audio(&tone())
        .unwrap_err();
    assert!(matches!(err, Error::Timeout(100)), "{err:?}");
}

#[test]
fn server_errors_are_retried_client_errors_are_not() {
    let stub = Stub::start(|i, _| {
        if i < 2 {
            Reply::status(503, "busy")
        } else {
            Reply::ok(r#"{"text": "third time"}"#)
        }
    });
    let cfg = BackendConfig {
        retries: 2,
        ..stub.config()
    };
    let c = remote(BackendClient::new(cfg).unwrap(), Fallback::None).audio(&tone()).unwrap();
    assert_eq!(c.text, "third time");
    assert_eq!(stub.requests().len(), 3);

    let stub = Stub::start(|_, _| Reply::status(400, "bad"));
    let cfg = BackendConfig {
        retries: 2,
        ..stub.config()
    };
    let err = remote(BackendClient::new(cfg).unwrap(), Fallback::None).audio(&tone()).unwrap_err();
    assert!(matches!(err, Error::BackendUnreachable { .. }), "{err:?}");
    assert_eq!(stub.requests().len(), 1);
}

#[test]
fn token_is_sent_as_bearer() {
    let stub = Stub::fixed(r#"{"text": "ok"}"#);
    let cfg = BackendConfig {
        token: Some("t0k3n".into()),
        ..stub.config()
    };
    remote(BackendClient::new(cfg).unwrap(), Fallback::None).audio(&tone()).unwrap();
    assert_eq!(stub.requests()[0].authorization.as_deref(), Some("Bearer t0k3n"));
}

#[test]
fn plan_one_action_with_defaults() {
    let plan = plan_with(r#"{"actions": [{"kind": "spectral_gate"}]}"#).unwrap();
    assert_eq!(plan.actions.len(), 1);
    assert_eq!(
        plan.actions[0].action,
        avalign_core::actions::ActionKind::SpectralGate.default_action()
    );
}

#[test]
fn plan_illegal_action() {
    let err = plan_with(r#"{"actions": [{"kind": "reverb"}]}"#).unwrap_err();
    assert!(matches!(err, Error::IllegalAction(_)), "{err:?}");
}

#[test]
fn plan_out_of_range_params() {
    let err = plan_with(r#"{"actions": [{"kind": "speed_mod", "params": {"speed_factor": 3.0}}]}"#).unwrap_err();
    assert!(matches!(err, Error::IllegalAction(_)), "{err:?}");
}

#[test]
fn plan_without_actions() {
    let err = plan_with(r#"{"text": "no idea"}"#).unwrap_err();
    assert!(matches!(err, Error::UnparseablePlan(_)), "{err:?}");
    let err = plan_with("{").unwrap_err();
    assert!(matches!(err, Error::BackendMalformedResponse(_)), "{err:?}");
}

#[test]
fn plan_request_carries_context() {
    let stub = Stub::fixed(r#"{"actions": [{"kind": "wiener_filter"}]}"#);
    RemotePlanner(client(&stub)).plan(&plan_ctx(), 0).unwrap();
    let req: serde_json::Value = serde_json::from_str(&stub.requests()[0].body).unwrap();
    assert_eq!(req["task"], "plan");
    assert!(req["context"]["audio_caption"]["text"].is_string());
}

#[test]
fn remote_scores() {
    let p = &synth_pairs(&SynthConfig { n: 1, ..SynthConfig::default() }).unwrap()[0];
    let v = &p.record.video_features;

    let stub = Stub::fixed(r#"{"scores": {"alignment": 0.7, "temporal": 1.3}}"#);
    let s = reflect(&p.corrupted, v, &ScorerKind::Remote(client(&stub))).unwrap();
    assert_eq!((s.alignment, s.temporal), (0.7, 1.0));

    let stub = Stub::fixed(r#"{"scores": {"alignment": "high"}}"#);
    let err = reflect(&p.corrupted, v, &ScorerKind::Remote(client(&stub))).unwrap_err();
    assert!(matches!(err, Error::BackendMalformedResponse(_)), "{err:?}");
}

#[test]
fn workflow_with_illegal_remote_plan_errors_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_corpus(&SynthConfig { n: 1, seed: 2, ..SynthConfig::default() }, dir.path()).unwrap();
    let stub = Stub::fixed(r#"{"actions": [{"kind": "reverb"}]}"#);
    let cfg = WorkflowConfig {
        planner: avalign_core::planning::PlannerKind::Remote,
        threshold: 1.0,
        ..WorkflowConfig::default()
    };
    let wf = Workflow::new(cfg, &stub.config()).unwrap();
    let (out, trace) = wf.run_pair(&recs[0], dir.path()).unwrap();
    assert_eq!(trace.terminal_reason, TerminalReason::Errored);
    assert!(trace.error.as_deref().unwrap().contains("reverb"));
    assert!(trace.cycles.is_empty());
    let original = avalign_core::audio::load_for_pipeline(&recs[0].resolve_audio(dir.path())).unwrap();
    assert_eq!(out.samples(), original.samples());
}

#[test]
fn workflow_with_dead_captioner_falls_back() {
    let p = &synth_pairs(&SynthConfig { n: 1, seed: 3, ..SynthConfig::default() }).unwrap()[0];
    let backend = BackendConfig {
        url: Some(dead_url()),
        retries: 0,
        ..BackendConfig::default()
    };
    let cfg = WorkflowConfig {
        captioner: CaptionerChoice::RemoteOrBuiltin,
        ..WorkflowConfig::default()
    };
    let remote = Workflow::new(cfg, &backend).unwrap();
    let builtin = Workflow::builtin(WorkflowConfig::default()).unwrap();
    let (a, ta) = remote.run_audio("p", &p.corrupted, &p.record.video_features);
    let (b, tb) = builtin.run_audio("p", &p.corrupted, &p.record.video_features);
    assert_eq!(a.samples(), b.samples());
    assert_eq!(ta, tb);
}

#[test]
fn workflow_needs_a_url_for_remote_parts() {
    let cfg = WorkflowConfig {
        captioner: CaptionerChoice::Remote,
        ..WorkflowConfig::default()
    };
    assert!(matches!(Workflow::new(cfg, &BackendConfig::default()), Err(Error::Config(_))));
}

#[test]
fn batch_with_ten_percent_broken_files() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synth_corpus(&SynthConfig { n: 30, seed: 6, ..SynthConfig::default() }, dir.path()).unwrap();
    // Three of thirty: garbage bytes, a truncated header, a missing file.
    fs::write(dir.path().join(&recs[4].audio_path), b"definitely not RIFF").unwrap();
    let full = fs::read(dir.path().join(&recs[11].audio_path)).unwrap();
    fs::write(dir.path().join(&recs[11].audio_path), &full[..20]).unwrap();
    fs::remove_file(dir.path().join(&recs[25].audio_path)).unwrap();
    let broken = [recs[4].pair_id.clone(), recs[11].pair_id.clone(), recs[25].pair_id.clone()];

    let wf = Workflow::builtin(WorkflowConfig::default()).unwrap();
    let res = run_batch(&recs, dir.path(), &wf, 2).unwrap();
    assert_eq!(res.report.pairs, 30);
    assert_eq!(res.report.errored, 3);
    assert_eq!(res.report.completed, 27);
    let ids: Vec<&str> = res.report.errors.iter().map(|e| e.pair_id.as_str()).collect();
    assert_eq!(ids, broken.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(res.report.terminal_reasons.get("errored"), Some(&3));
    for p in &res.pairs {
        let is_broken = broken.contains(&p.record.pair_id);
        assert_eq!(p.audio.is_none(), is_broken);
        assert_eq!(p.trace.terminal_reason == TerminalReason::Errored, is_broken);
    }
}

#[test]
fn duplicate_ids_abort_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = synth_corpus(&SynthConfig { n: 2, ..SynthConfig::default() }, dir.path()).unwrap();
    recs[1].pair_id = recs[0].pair_id.clone();
    let wf = Workflow::builtin(WorkflowConfig::default()).unwrap();
    assert!(matches!(run_batch(&recs, dir.path(), &wf, 1), Err(Error::DuplicatePairId(_))));
}
