mod support;

use std::fs;

use saarthi_core::config::{
    load_agent_config, load_task_config, parse_agents, parse_tasks, ConfigError, DEFAULT_AGENTS,
    DEFAULT_TASKS,
};

#[test]
fn lead_agent_listing_loads() {
    let agents = load_agent_config(&support::fixtures_dir().join("lead_agent.yaml")).unwrap();
    assert_eq!(agents.len(), 1);
    let lead = &agents["formal_verification_lead"];
    assert_eq!(lead.name, "formal_verification_lead");
    assert_eq!(lead.role, "Formal Verification Lead");
    assert!(!lead.allow_delegation);
    assert!(lead.verbose);
    assert_eq!(lead.max_iter, 5);
    assert!(lead.goal.starts_with("Gather all the necessary information"));
    // folded block: newlines become single spaces, no trailing newline
    assert!(!lead.backstory.contains('\n'));
    assert!(lead.backstory.ends_with("natural English language."));
}

#[test]
fn task_listing_keeps_order_and_assignments() {
    let dir = support::fixtures_dir();
    let agents = load_agent_config(&dir.join("team_agents.yaml")).unwrap();
    let tasks = load_task_config(&dir.join("team_tasks.yaml"), &agents).unwrap();
    let pairs: Vec<(&str, &str)> = tasks
        .iter()
        .map(|t| (t.name.as_str(), t.assigned_agent.as_str()))
        .collect();
    assert_eq!(
        pairs,
        [
            ("vplan_gen", "formal_verification_lead"),
            ("property_gen", "formal_verification_engineer"),
        ]
    );
    assert!(tasks[1].description.contains("write the SystemVerilog Assertion (SVA) property"));
}

#[test]
fn empty_file_gives_empty_map() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("agents.yaml");
    fs::write(&p, "").unwrap();
    assert!(load_agent_config(&p).unwrap().is_empty());
}

#[test]
fn duplicate_agent_names_rejected() {
    let text = "a:\n  role: r\n  goal: g\nb:\n  role: r\n  goal: g\na:\n  role: r2\n  goal: g2\n";
    match parse_agents(text) {
        Err(ConfigError::DuplicateName { name, line }) => {
            assert_eq!(name, "a");
            assert_eq!(line, 7);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_and_unknown_keys_name_key_and_line() {
    match parse_agents("a:\n  goal: g\n") {
        Err(ConfigError::MissingKey { key, line, .. }) => {
            assert_eq!(key, "role");
            assert_eq!(line, 1);
        }
        other => panic!("{other:?}"),
    }
    match parse_agents("a:\n  role: r\n  goal: g\n  mood: calm\n") {
        Err(ConfigError::UnknownKey { key, line }) => {
            assert_eq!(key, "mood");
            assert_eq!(line, 4);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn one_task_file_and_unknown_agent() {
    let agents = parse_agents("lead:\n  role: Lead\n  goal: plan\n").unwrap();
    let one = parse_tasks("t:\n  description: d\n  expected_output: e\n  agent: lead\n", &agents).unwrap();
    assert_eq!(one.len(), 1);
    let err = parse_tasks("t:\n  description: d\n  expected_output: e\n  agent: nonexistent\n", &agents)
        .unwrap_err();
    assert!(err.to_string().contains("unknown agent"), "{err}");
}

#[test]
fn agent_loading_ignores_entry_order() {
    let a = "x:\n  role: X\n  goal: gx\ny:\n  role: Y\n  goal: gy\n";
    let b = "y:\n  role: Y\n  goal: gy\nx:\n  role: X\n  goal: gx\n";
    assert_eq!(parse_agents(a).unwrap(), parse_agents(b).unwrap());
}

#[test]
fn bundled_roster_is_consistent() {
    let agents = parse_agents(DEFAULT_AGENTS).unwrap();
    let tasks = parse_tasks(DEFAULT_TASKS, &agents).unwrap();
    assert_eq!(
        tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
        saarthi_core::pipeline::REQUIRED_TASKS
    );
}
