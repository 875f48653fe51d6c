//! One check per headline criterion; each prints a PASS/FAIL line.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use saarthi_core::cli::parse_cli_args;
use saarthi_core::config::{parse_agents, parse_tasks, DEFAULT_AGENTS, DEFAULT_TASKS};
use saarthi_core::conversation::{ConversationState, HilDecision, HilMode, Message, MessageKind};
use saarthi_core::formal::{
    extract_sva_blocks, lint_sva, parse_prover_log, prove, render_blocks, AssertionStatus,
    CoverStatus, LintCode, MockProver, ProverError, RtlSource, SubprocessProver, SvaBlock,
};
use saarthi_core::gateway::{ChatRequest, ChatResponse, FnBackend, Gateway, Role};
use saarthi_core::metrics::{proven_rate, BenchmarkMatrix, Complexity, KpiSummary, WorkflowRow};
use saarthi_core::pipeline::{
    generate_and_refine_sva, DesignSpec, FixedHuman, NoObserver, Roster, ScriptedHuman, Session,
};
use saarthi_core::record::{Origin, Outcome, RunRecord, VPlan};
use saarthi_core::setup::launch;
use saarthi_core::store::load_run;
use saarthi_service::{default_launcher, spawn_server, Service, ServiceOptions};
use saarthi_tests::{core_fixtures, demo_config, demo_dir, saarthi_bin, Checks};

// ---------------------------------------------------------------------------
// HIL state machine against a brute-force interpreter

#[derive(Debug, Clone, Copy)]
enum Policy {
    Terminate,
    Skip,
    Intercept,
}

/// (transcript length, counter, active) computed step by step from the
/// escalation rules, independently of the library.
fn interpret(msgs: &[bool], never: bool, max_replies: u32, policy: Policy) -> (usize, u32, bool) {
    let (mut replies, mut counter, mut active) = (0usize, 0u32, true);
    for &terminating in msgs {
        if terminating {
            active = false;
            break;
        }
        if never {
            replies += 1;
        } else if counter >= max_replies {
            match policy {
                Policy::Terminate => {
                    active = false;
                    break;
                }
                Policy::Skip => replies += 1,
                Policy::Intercept => {
                    replies += 1;
                    counter = 0;
                }
            }
        } else {
            replies += 1;
            counter += 1;
        }
    }
    if active {
        active = false; // source exhausted
    }
    (replies, counter, active)
}

fn simulate(msgs: &[bool], never: bool, max_replies: u32, policy: Policy) -> (usize, u32, bool) {
    let mode = if never { HilMode::Never } else { HilMode::Terminate };
    let mut state = ConversationState::new(mode, max_replies);
    let source: Vec<Message> = msgs
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let text = if t { format!("{i} TERMINATE") } else { format!("draft {i}") };
            Message::new("engineer", "reviewer", MessageKind::Task, text)
        })
        .collect();
    state
        .run_conversation(
            source,
            |m: &Message| {
                Ok::<_, Infallible>(Message::new("reviewer", m.sender.clone(), MessageKind::Reply, "ok"))
            },
            |_: &Message| {
                Ok(match policy {
                    Policy::Terminate => HilDecision::terminate(),
                    Policy::Skip => HilDecision::skip(),
                    Policy::Intercept => HilDecision::intercept("human reply"),
                })
            },
        )
        .unwrap();
    (state.transcript.len(), state.counter, state.conversation_active)
}

#[test]
fn hil_oracle_equivalence() {
    let mut c = Checks::default();
    let start = Instant::now();
    let mut cases = 0;
    for len in 0..=6 {
        for bits in 0u32..(1 << len) {
            let msgs: Vec<bool> = (0..len).map(|k| bits >> k & 1 == 1).collect();
            for never in [true, false] {
                for max_replies in 1..=3 {
                    for policy in [Policy::Terminate, Policy::Skip, Policy::Intercept] {
                        cases += 1;
                        let want = interpret(&msgs, never, max_replies, policy);
                        let got = simulate(&msgs, never, max_replies, policy);
                        c.check(got == want, || {
                            format!("{msgs:?} never={never} max={max_replies} {policy:?}: {got:?} vs {want:?}")
                        });
                    }
                }
            }
        }
    }
    c.eq("cases", cases, 127 * 2 * 3 * 3);
    let took = start.elapsed();
    c.check(took < Duration::from_secs(10), || format!("took {took:?}"));
    c.finish("HIL state machine matches the brute-force interpreter on all 2286 cases in < 10 s");
}

// ---------------------------------------------------------------------------
// Escalation threshold

#[test]
fn escalation_threshold() {
    let mut c = Checks::default();
    let critic_calls = Arc::new(AtomicU32::new(0));
    let calls = Arc::clone(&critic_calls);
    let drafts = AtomicU32::new(0);
    let gateway = Gateway::new(FnBackend(move |req: &ChatRequest| {
        let system = &req.messages.iter().find(|m| m.role == Role::System).unwrap().content;
        if system.contains("Assertion Reviewer") {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok(ChatResponse::stop("REJECT: try again"))
        } else {
            let n = drafts.fetch_add(1, Ordering::SeqCst);
            Ok(ChatResponse::stop(format!(
                "```systemverilog\nassert property (@(posedge clk) count <= DEPTH + {n});\n```"
            )))
        }
    }));
    let config = saarthi_core::config::RunConfig {
        hil_mode: HilMode::Terminate,
        max_iter: 5,
        ..demo_config(Path::new("unused"))
    };
    let agents = parse_agents(DEFAULT_AGENTS).unwrap();
    let roster = Roster::new(&agents, &parse_tasks(DEFAULT_TASKS, &agents).unwrap()).unwrap();
    let spec = DesignSpec::load(&config).unwrap();
    let human = ScriptedHuman::new([HilDecision::intercept(
        "assert property (@(posedge clk) !(full && empty));",
    )]);
    let session = Session::new(&config, roster, &gateway, &human);
    let mut plan = VPlan::default();
    let item = plan.push("count never exceeds DEPTH.").clone();
    let out = generate_and_refine_sva(&session, &spec, &item, "P1").unwrap();

    c.eq("critic invocations", critic_calls.load(Ordering::SeqCst), 5);
    c.eq("human requests", human.requests().len(), 1);
    c.eq("counter after INTERCEPT", out.state.counter, 0);
    let p = out.property.expect("intercepted property");
    c.eq("origin", p.origin, Origin::HumanIntercept);
    c.eq("revision", p.revision, 5);
    c.finish("always-reject critic with max_iter=5: exactly 5 critic calls, then HIL; counter 0 after INTERCEPT");
}

// ---------------------------------------------------------------------------
// KPI arithmetic

fn workflow_row(label: &str, proven: usize, unreachable: usize) -> WorkflowRow {
    let ids = |p: &str, n: usize| (1..=n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let mut mock = MockProver::new(ids("P", 7).into_iter().enumerate().map(|(i, id)| {
        (id, if i < proven { AssertionStatus::Proven } else { AssertionStatus::Cex })
    }));
    for (i, id) in ids("C", 8).iter().enumerate() {
        let s = if i < unreachable { CoverStatus::Unreachable } else { CoverStatus::Covered };
        mock = mock.with_cover(id, s, &[]);
    }
    let props: Vec<(String, SvaBlock)> = ids("P", 7)
        .into_iter()
        .map(|id| (id, SvaBlock::new("assert property (@(posedge clk) !(full && empty));")))
        .collect();
    WorkflowRow::from_result(label, &prove(&mock, &[], &props).unwrap())
}

fn cells(r: &WorkflowRow) -> Vec<String> {
    [r.proven, r.cex, r.unreachable, r.covered].iter().map(|p| p.render()).collect()
}

#[test]
fn kpi_arithmetic() {
    let mut c = Checks::default();
    let rate = proven_rate(5, 11).unwrap();
    c.eq("proven_rate(5, 11)", rate.render(), "45.45".to_string());
    c.eq("table string", rate.latex(), "45.45\\%".to_string());
    // 7 assertions (3 proven, 4 CEX) and 8 covers (1 unreachable, 7 covered)
    c.eq(
        "zero-shot row",
        cells(&workflow_row("Zero-shot", 3, 1)),
        ["42.85", "57.15", "12.50", "87.50"].map(String::from).to_vec(),
    );
    c.eq(
        "few-shot row",
        cells(&workflow_row("Few-shot", 7, 0)),
        ["100.00", "0.00", "0.00", "100.00"].map(String::from).to_vec(),
    );
    c.finish("KPI arithmetic: 45.45 / 45.45\\%, zero-shot 42.85/57.15/12.5/87.5, few-shot 100/0/0/100");
}

// ---------------------------------------------------------------------------
// Aggregation

#[test]
fn aggregation_cross_check() {
    let mut c = Checks::default();
    let mut matrix = BenchmarkMatrix::default();
    let mut reader = csv::Reader::from_path(core_fixtures().join("basic_designs.csv")).unwrap();
    let mut gpt_cells = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        matrix.add_design(&rec[0], Complexity::Basic);
        let kpi = KpiSummary::from_reported(
            rec[3].parse().unwrap(),
            rec[4].parse().unwrap(),
            rec[5].parse().unwrap(),
        )
        .unwrap();
        matrix.insert(&rec[0], &rec[1], rec[2].parse().unwrap(), kpi).unwrap();
        gpt_cells += usize::from(&rec[1] == "GPT-4o");
    }
    c.eq("GPT-4o cells", gpt_cells, 15);
    let agg = matrix.aggregate_by_complexity("GPT-4o").unwrap()[&Complexity::Basic];
    c.eq("mean coverage", agg.mean_coverage_rate.render(), "72.28".to_string());
    c.eq("mean proven", agg.mean_proven_rate.render(), "46.11".to_string());
    let dc = (agg.mean_coverage_rate.value() - 72.22).abs();
    let dp = (agg.mean_proven_rate.value() - 46.00).abs();
    c.check(dc <= 0.5, || format!("coverage off by {dc}"));
    c.check(dp <= 0.5, || format!("proven off by {dp}"));
    c.finish("GPT-4o basic-design means 72.28 / 46.11, within 0.5 of 72.22 / 46.00");
}

// ---------------------------------------------------------------------------
// End to end

#[test]
fn deterministic_end_to_end() {
    let mut c = Checks::default();
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let runs: Vec<(RunRecord, std::path::PathBuf)> = ["a", "b"]
        .iter()
        .map(|n| {
            let config = demo_config(&tmp.path().join(n));
            let r = launch(&config, &FixedHuman(HilDecision::skip()), &NoObserver, None).unwrap();
            let dir = config.out_dir.join(&r.run_id);
            (r, dir)
        })
        .collect();
    let took = start.elapsed();
    for (r, _) in &runs {
        c.eq("outcome", r.outcome, Outcome::Success);
    }
    c.check(runs[0].0.eq_modulo_run_identity(&runs[1].0), || "records differ".into());
    for file in ["report.md", "properties.sva"] {
        let a = fs::read(runs[0].1.join(file)).unwrap();
        let b = fs::read(runs[1].1.join(file)).unwrap();
        c.check(a == b, || format!("{file} differs"));
    }
    c.check(took < Duration::from_secs(5), || format!("took {took:?}"));
    c.finish("FIFO demo succeeds twice with byte-identical report.md and properties.sva in < 5 s");
}

// ---------------------------------------------------------------------------
// Lint suite

const PORTS: &[&str] = &[
    "clk", "clk2", "rst_n", "req", "gnt", "a", "b", "valid", "ready", "data", "count", "DEPTH",
];

fn statement() -> impl Strategy<Value = String> {
    let kind = prop_oneof![Just("assert"), Just("assume"), Just("cover")];
    let sig = prop_oneof![Just("a"), Just("b"), Just("req"), Just("gnt"), Just("valid")];
    let op = prop_oneof![Just("|->"), Just("|=>"), Just("&&"), Just("##1"), Just("##[1:3]")];
    let label = prop_oneof![Just(String::new()), "[a-z]{2,6}_chk".prop_map(|l| format!("{l}: "))];
    (label, kind, sig.clone(), op, sig)
        .prop_map(|(l, k, a, op, b)| format!("{l}{k} property (@(posedge clk) {a} {op} {b});"))
}

#[test]
fn lint_suite() {
    let mut c = Checks::default();
    let corpus: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(core_fixtures().join("lint_corpus.json")).unwrap())
            .unwrap();
    c.eq("corpus size", corpus.len(), 30);
    let mut right = 0;
    for case in &corpus {
        let ports: Vec<String> = match case.get("ports") {
            Some(p) => serde_json::from_value(p.clone()).unwrap(),
            None => PORTS.iter().map(|s| s.to_string()).collect(),
        };
        let want: BTreeSet<String> = serde_json::from_value::<Vec<LintCode>>(case["expect"].clone())
            .unwrap()
            .iter()
            .map(ToString::to_string)
            .collect();
        let report = lint_sva(&SvaBlock::new(case["code"].as_str().unwrap()), &ports);
        let got: BTreeSet<String> = report.diagnostics.iter().map(|d| d.code.to_string()).collect();
        if got == want && report.ok == want.is_empty() {
            right += 1;
        } else {
            c.0.push(format!("{:?}: got {got:?}", case["code"]));
        }
    }

    let mut runner = TestRunner::new(Config::with_cases(1000));
    let fuzz = (
        proptest::collection::vec(statement(), 1..5),
        prop_oneof![Just(String::new()), "[A-Za-z ,.]{0,40}\n"],
        prop_oneof![Just("systemverilog"), Just("sv"), Just("verilog"), Just("sva")],
        any::<bool>(),
    );
    let result = runner.run(&fuzz, |(stmts, prose, tag, one_fence)| {
        let blocks: Vec<SvaBlock> = stmts.iter().map(SvaBlock::new).collect();
        let body = if one_fence {
            format!("```{tag}\n{}\n```", stmts.join("\n"))
        } else {
            render_blocks(&blocks).replace("```systemverilog", &format!("```{tag}"))
        };
        let got: Vec<String> = extract_sva_blocks(&format!("{prose}{body}\n{prose}"))
            .into_iter()
            .map(|b| b.code)
            .collect();
        prop_assert_eq!(got, stmts);
        Ok(())
    });
    c.check(result.is_ok(), || format!("fuzz: {result:?}"));
    c.finish(&format!(
        "lint corpus {right}/30 classified; extraction round-trip over 1000 fuzz cases"
    ));
}

// ---------------------------------------------------------------------------
// Subprocess prover

#[test]
fn subprocess_golden() {
    let mut c = Checks::default();
    let shim = core_fixtures().join("fake-prover");
    let script = shim.join("fake-prover.sh").display().to_string();
    let rtl_path = demo_dir().join("fifo.sv");
    let rtl = vec![RtlSource {
        path: rtl_path.display().to_string(),
        content: fs::read_to_string(&rtl_path).unwrap(),
    }];
    let props = |ids: &[&str]| -> Vec<(String, SvaBlock)> {
        ids.iter()
            .map(|id| (id.to_string(), SvaBlock::new("assert property (@(posedge clk) !(full && empty));")))
            .collect()
    };

    let mut want = parse_prover_log(&fs::read_to_string(shim.join("canned/results.txt")).unwrap()).unwrap();
    want.load_traces(&shim.join("canned")).unwrap();
    let mut got = prove(&SubprocessProver::new(format!("sh '{script}'")), &rtl, &props(&["P1", "P2", "P3"])).unwrap();
    got.wall_time = Duration::ZERO;
    c.check(got == want, || format!("shim result {got:?} != canned {want:?}"));

    let malformed = SubprocessProver::new(format!(
        "FAKE_PROVER_CANNED='{}' sh '{script}'",
        shim.join("malformed").display()
    ));
    match prove(&malformed, &rtl, &props(&["P1", "P2"])) {
        Err(ProverError::Parse { line: 3, .. }) => {}
        other => c.0.push(format!("malformed results: {other:?}")),
    }
    c.finish("fake-prover round trip equals the canned parse; malformed line reported at line 3");
}

// ---------------------------------------------------------------------------
// CLI against HTTP

#[test]
fn cli_vs_http_equivalence() {
    let mut c = Checks::default();
    let tmp = tempfile::tempdir().unwrap();
    let d = demo_dir();
    let cli_out = tmp.path().join("cli");
    let flags: Vec<String> = [
        "--spec", &d.join("spec.md").display().to_string(),
        "--rtl", &d.join("fifo.sv").display().to_string(),
        "--model", "mock",
        "--cassette", &d.join("cassette.json").display().to_string(),
        "--prover-fixture", &d.join("prover.json").display().to_string(),
        "--out", &cli_out.display().to_string(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let out = Command::new(saarthi_bin()).arg("run").args(&flags).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let cli_id = stdout
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("run "))
        .and_then(|l| l.split(':').next())
        .unwrap()
        .to_string();
    let cli_record = load_run(&cli_out.join(&cli_id)).unwrap();

    let mut config = parse_cli_args(&flags).unwrap();
    config.out_dir = tmp.path().join("http");
    let server = spawn_server(Service::new(default_launcher(), ServiceOptions::default()), "127.0.0.1:0", false).unwrap();
    let base = format!("http://{}", server.addr);
    let client = reqwest::blocking::Client::new();
    let started: serde_json::Value =
        client.post(format!("{base}/runs")).json(&config).send().unwrap().json().unwrap();
    let id = started["run_id"].as_str().unwrap().to_string();
    let deadline = Instant::now() + Duration::from_secs(10);
    let http_record: RunRecord = loop {
        let detail: serde_json::Value =
            client.get(format!("{base}/runs/{id}")).send().unwrap().json().unwrap();
        if detail["status"] != "RUNNING" {
            break serde_json::from_value(detail["record"].clone()).unwrap();
        }
        assert!(Instant::now() < deadline, "HTTP run did not finish");
        std::thread::sleep(Duration::from_millis(10));
    };

    c.eq("cli outcome", cli_record.outcome, Outcome::Success);
    c.check(cli_record.run_id != http_record.run_id, || "run ids should differ".into());
    c.check(cli_record.eq_modulo_run_identity(&http_record), || {
        "RunRecords differ beyond run identity".into()
    });
    let http_report = client.get(format!("{base}/runs/{id}/report")).send().unwrap().text().unwrap();
    let cli_report = fs::read_to_string(cli_out.join(&cli_id).join("report.md")).unwrap();
    c.check(http_report == cli_report, || "report.md differs".into());
    c.finish("the same scripted run via CLI and via POST /runs yields equal RunRecords");
}
