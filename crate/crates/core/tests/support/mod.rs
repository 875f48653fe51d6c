//! Shared fixtures for integration tests: the bundled FIFO demo and a
//! rule-based stand-in for the model that produced its cassette.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use saarthi_core::config::RunConfig;
use saarthi_core::conversation::HilMode;
use saarthi_core::gateway::{ChatRequest, ChatResponse, GatewayError, Role};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn demo_dir() -> PathBuf {
    repo_root().join("demo/fifo")
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// The demo run configuration, writing runs under `out`.
pub fn demo_config(out: &Path) -> RunConfig {
    let d = demo_dir();
    RunConfig {
        spec_path: d.join("spec.md"),
        rtl_paths: vec![d.join("fifo.sv")],
        hil_mode: HilMode::Terminate,
        out_dir: out.to_path_buf(),
        cassette: Some(d.join("cassette.json")),
        prover_fixture: Some(d.join("prover.json")),
        ..RunConfig::default()
    }
}

fn sva(body: &str) -> String {
    format!(
        "```systemverilog\nassert property (@(posedge clk) disable iff (!rst_n) {body});\n```"
    )
}

pub const PLAN: &[&str] = &[
    "A push while full without a pop leaves count unchanged.",
    "A pop while empty leaves count unchanged.",
    "full and empty are never high together.",
    "count never exceeds DEPTH.",
    "empty is high exactly when count is zero.",
    "full is high exactly when count equals DEPTH.",
    "A push without a pop on a non-full FIFO increments count.",
];

pub const FEEDBACK_ITEM: &str = "A simultaneous push and pop while full leaves count unchanged.";

fn first_draft(item: usize) -> String {
    sva(match item {
        1 => "full && wr_en && !rd_en |=> $stable(count)",
        2 => "empty && rd_en |=> $stable(count)",
        3 => "!(full && empty)",
        4 => "count <= DEPTH",
        5 => "empty == (count == 0)",
        6 => "full == (count == DEPTH)",
        7 => "wr_en && !rd_en && !full |-> count == $past(count) + 1",
        8 => "full && wr_en && rd_en |=> $stable(count)",
        _ => "1'b1",
    })
}

fn revised_draft(item: usize) -> String {
    match item {
        7 => sva("wr_en && !rd_en && !full |=> count == $past(count) + 1"),
        _ => first_draft(item),
    }
}

fn item_number(text: &str) -> usize {
    text.split("Property V")
        .nth(1)
        .and_then(|rest| rest.split(':').next())
        .and_then(|n| n.trim().parse().ok())
        .unwrap_or(0)
}

/// Deterministic replies keyed on the agent role and the prompt shape.
pub fn fifo_responder(req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    let system = req
        .messages
        .iter()
        .find(|m| m.role == Role::System)
        .map_or("", |m| m.content.as_str());
    let first_user = req
        .messages
        .iter()
        .find(|m| m.role == Role::User)
        .map_or("", |m| m.content.as_str());
    let last = req.messages.last().map_or("", |m| m.content.as_str());

    let reply = if system.contains("Formal Verification Lead") {
        if last.contains("Coverage holes:") {
            if last.contains("C8") {
                format!("1. {FEEDBACK_ITEM}")
            } else {
                "NONE".to_string()
            }
        } else {
            let mut s = String::from("Properties to verify:\n\n");
            for (i, p) in PLAN.iter().enumerate() {
                s.push_str(&format!("{}. {p}\n", i + 1));
            }
            s
        }
    } else if system.contains("Formal Verification Engineer") {
        let item = item_number(first_user);
        if last.contains("was rejected") {
            revised_draft(item)
        } else {
            first_draft(item)
        }
    } else if system.contains("Assertion Reviewer") {
        if last.contains("|-> count == $past") {
            "REJECT: count only changes on the following clock edge, so compare \
             against $past(count) with a non-overlapping implication (|=>)."
                .to_string()
        } else {
            "ACCEPT".to_string()
        }
    } else if system.contains("Counterexample Analyst") {
        if last.contains("Property P2") {
            format!(
                "BAD_PROPERTY: the assertion ignores a simultaneous push.\n\
                 At cycle 0 the FIFO is empty with wr_en and rd_en both high. The pop is \
                 ignored but the push lands, so count becomes 1, as the specification \
                 requires. The assertion must exclude a concurrent write.\n{}",
                sva("empty && rd_en && !wr_en |=> $stable(count)")
            )
        } else {
            "RTL_BUG: unexpected failure".to_string()
        }
    } else {
        return Err(GatewayError::InvalidRequest(format!(
            "no scripted reply for system prompt {system:?}"
        )));
    };
    Ok(ChatResponse::stop(reply))
}
