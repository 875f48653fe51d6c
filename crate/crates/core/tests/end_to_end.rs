mod support;

use std::fs;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use saarthi_core::config::{load_roster, RunConfig};
use saarthi_core::conversation::{HilDecision, Message};
use saarthi_core::formal::{lint_sva, MockProver, SvaBlock};
use saarthi_core::gateway::{ChatRequest, ChatResponse, FnBackend, Gateway, Role, ScriptedBackend};
use saarthi_core::pipeline::{
    run_pipeline, FixedHuman, NoObserver, PipelineDeps, RunObserver, ScriptedHuman,
};
use saarthi_core::record::{CexVerdict, Origin, Outcome, PlanStatus, PropertyStatus, RunRecord, Stage};
use saarthi_core::setup::launch;
use saarthi_core::store::{load_run, read_index, read_transcript, REQUIRED_FOR_SUCCESS};

fn run_dir(config: &RunConfig, record: &RunRecord) -> std::path::PathBuf {
    config.out_dir.join(&record.run_id)
}

#[derive(Default)]
struct Watch {
    stages: Mutex<Vec<Stage>>,
    messages: Mutex<Vec<Message>>,
    started: Mutex<Option<String>>,
}

impl RunObserver for Watch {
    fn on_start(&self, run_id: &str) {
        *self.started.lock().unwrap() = Some(run_id.to_string());
    }
    fn on_stage(&self, stage: Stage) {
        self.stages.lock().unwrap().push(stage);
    }
    fn on_message(&self, message: &Message) {
        self.messages.lock().unwrap().push(message.clone());
    }
}

fn demo_run(out: &std::path::Path, observer: &dyn RunObserver) -> RunRecord {
    let config = support::demo_config(out);
    launch(&config, &FixedHuman(HilDecision::skip()), observer, None).unwrap()
}

#[test]
fn demo_is_deterministic_and_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let a = demo_run(&tmp.path().join("a"), &NoObserver);
    let b = demo_run(&tmp.path().join("b"), &NoObserver);
    assert!(start.elapsed().as_secs_f64() < 5.0, "{:?}", start.elapsed());

    assert_eq!(a.outcome, Outcome::Success, "{:?}", a.failure);
    assert_eq!(b.outcome, Outcome::Success);
    assert!(a.eq_modulo_run_identity(&b));
    let cfg_a = support::demo_config(&tmp.path().join("a"));
    let cfg_b = support::demo_config(&tmp.path().join("b"));
    for file in ["report.md", "properties.sva", "vplan.md", "coverage.json"] {
        let fa = fs::read(run_dir(&cfg_a, &a).join(file)).unwrap();
        let fb = fs::read(run_dir(&cfg_b, &b).join(file)).unwrap();
        assert!(fa == fb, "{file} differs between replays");
    }
}

#[test]
fn demo_outcome_details() {
    let tmp = tempfile::tempdir().unwrap();
    let watch = Watch::default();
    let rec = demo_run(tmp.path(), &watch);
    let config = support::demo_config(tmp.path());
    let dir = run_dir(&config, &rec);

    assert_eq!(rec.stage_reached, Stage::Report);
    assert_eq!(rec.vplan.items.len(), support::PLAN.len() + 1);
    assert!(rec.vplan.items.iter().all(|i| i.status == PlanStatus::CoveredBySva));
    assert_eq!(rec.kpi.n_properties, 8);
    assert_eq!(rec.kpi.proven_rate.render(), "100.00");
    assert_eq!(rec.kpi.coverage_rate.render(), "100.00");
    assert!(rec.kpi.run_success);

    // critic accepted the first draft of P1
    let p1 = &rec.properties[0];
    assert_eq!((p1.revision, p1.origin, p1.status), (0, Origin::Agent, PropertyStatus::Proven));
    // P2 failed, was judged a bad property and revised once
    let p2 = &rec.properties[1];
    assert_eq!(p2.revision, 1);
    assert!(p2.code.contains("!wr_en"));
    assert_eq!(rec.cex_analyses.len(), 1);
    assert_eq!(rec.cex_analyses[0].verdict, CexVerdict::BadProperty);
    // P7 was rejected once by the critic
    assert_eq!(rec.properties[6].revision, 1);
    assert!(rec.properties[6].code.contains("|=>"));

    // every accepted property is lint-clean against the design's ports
    let ports = saarthi_core::formal::extract_port_list(&fs::read_to_string(support::demo_dir().join("fifo.sv")).unwrap());
    for p in &rec.properties {
        assert!(lint_sva(&SvaBlock::new(&p.code), &ports).ok, "{}", p.code);
    }

    // stages only move forward, re-prove at most once
    let stages = watch.stages.lock().unwrap().clone();
    assert!(stages.windows(2).all(|w| w[0] <= w[1]), "{stages:?}");
    assert_eq!(stages.iter().filter(|s| **s == Stage::Reprove).count(), 1);
    assert_eq!(watch.started.lock().unwrap().as_deref(), Some(rec.run_id.as_str()));

    // artifacts
    let index = read_index(&dir).unwrap();
    for name in REQUIRED_FOR_SUCCESS {
        assert!(dir.join(&index.files[*name]).is_file(), "{name}");
    }
    assert!(dir.join("cex/P2.json").is_file());
    assert_eq!(load_run(&dir).unwrap(), rec);
    let transcript = read_transcript(&dir).unwrap();
    assert_eq!(transcript, *watch.messages.lock().unwrap());
    assert!(transcript.windows(2).all(|w| w[0].seq < w[1].seq));

    let report = fs::read_to_string(dir.join("report.md")).unwrap();
    assert!(!report.contains(&rec.run_id));
    assert!(report.contains("| Initial |"));
    assert!(report.contains("| Final | 100.00% | 0.00% | 0.00% | 100.00% |"), "{report}");
    let checker = fs::read_to_string(dir.join("properties.sva")).unwrap();
    assert!(checker.contains("\nchecker sync_fifo_assertions;\n"));
    assert!(checker.trim_end().ends_with("endchecker"));
}

fn bundled() -> (saarthi_core::config::AgentMap, Vec<saarthi_core::config::TaskSpec>) {
    load_roster(&RunConfig::default()).unwrap()
}

fn run_with(config: &RunConfig, gateway: &Gateway, human: &dyn saarthi_core::pipeline::HumanInput) -> RunRecord {
    let (agents, tasks) = bundled();
    let prover = MockProver::open(config.prover_fixture.as_ref().unwrap()).unwrap();
    run_pipeline(
        config,
        &agents,
        &tasks,
        PipelineDeps { gateway, prover: &prover, human, observer: &NoObserver, console: None, now: None },
    )
    .unwrap()
}

#[test]
fn no_plan_fails_at_vplan() {
    let tmp = tempfile::tempdir().unwrap();
    let config = support::demo_config(tmp.path());
    let gateway = Gateway::new(ScriptedBackend::new(["I would rather not make a list today."]));
    let rec = run_with(&config, &gateway, &ScriptedHuman::new([]));
    assert_eq!(rec.outcome, Outcome::Failed);
    assert_eq!(rec.stage_reached, Stage::Vplan);
    assert_eq!(rec.kpi.n_properties, 0);
    assert_eq!(rec.kpi.proven_rate.render(), "0.00");
    assert_eq!(rec.kpi.coverage_rate.render(), "0.00");
    assert!(!rec.kpi.run_success);
    assert!(rec.failure.is_some());
    assert_eq!(load_run(&run_dir(&config, &rec)).unwrap(), rec);
}

#[test]
fn terminate_during_refine_aborts_with_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = support::demo_config(tmp.path());
    let gateway = Gateway::new(FnBackend(|req: &ChatRequest| {
        let system = &req.messages.iter().find(|m| m.role == Role::System).unwrap().content;
        if system.contains("Assertion Reviewer") {
            Ok(ChatResponse::stop("REJECT: no"))
        } else {
            support::fifo_responder(req)
        }
    }));
    let human = ScriptedHuman::new([HilDecision::terminate()]);
    let rec = run_with(&config, &gateway, &human);
    assert_eq!(rec.outcome, Outcome::Aborted);
    assert_eq!(rec.stage_reached, Stage::Sva);
    assert_eq!(human.requests().len(), 1);
    let dir = run_dir(&config, &rec);
    assert!(dir.join("vplan.md").is_file());
    assert!(dir.join("transcript.jsonl").is_file());
    assert!(!read_transcript(&dir).unwrap().is_empty());
    assert_eq!(load_run(&dir).unwrap(), rec);
}

#[test]
fn rtl_bug_keeps_property_failing() {
    let tmp = tempfile::tempdir().unwrap();
    let config = support::demo_config(tmp.path());
    let gateway = Gateway::new(FnBackend(|req: &ChatRequest| {
        let system = &req.messages.iter().find(|m| m.role == Role::System).unwrap().content;
        if system.contains("Counterexample Analyst") {
            Ok(ChatResponse::stop("RTL_BUG: the pop decrements count even when empty"))
        } else {
            support::fifo_responder(req)
        }
    }));
    let rec = run_with(&config, &gateway, &ScriptedHuman::new([]));
    assert_eq!(rec.outcome, Outcome::Success);
    let p2 = &rec.properties[1];
    assert_eq!((p2.status, p2.revision), (PropertyStatus::Cex, 0));
    assert_eq!(rec.cex_analyses[0].verdict, CexVerdict::RtlBug);
    let report = fs::read_to_string(run_dir(&config, &rec).join("report.md")).unwrap();
    assert!(report.contains("the pop decrements count even when empty"));
}

#[test]
fn voting_seeds_the_critic_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig { vote_samples: 3, ..support::demo_config(tmp.path()) };
    let calls = Arc::new(Mutex::new(0usize));
    let counter = calls.clone();
    let gateway = Gateway::new(FnBackend(move |req: &ChatRequest| {
        *counter.lock().unwrap() += 1;
        support::fifo_responder(req)
    }));
    let rec = run_with(&config, &gateway, &ScriptedHuman::new([]));
    assert_eq!(rec.outcome, Outcome::Success);
    assert_eq!(rec.properties[0].origin, Origin::Vote);
    // P7's voted draft was rejected once, so the accepted code is the agent's revision
    assert_eq!(rec.properties[6].origin, Origin::Agent);
}
