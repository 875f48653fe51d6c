use std::cell::{Cell, RefCell};

use crate::conversation::{
    ConversationState, HilChoice, HilError, HilMode, Message, MessageKind, Step, HUMAN,
};
use crate::formal::{
    extract_sva_blocks, lint_sva, lexer::lex, prove, AssertionStatus, CexTrace, CoverStatus,
    ProverBackend, ProverResult, RtlSource, SvaBlock,
};
use crate::gateway::ChatMessage;
use crate::record::{
    CexAnalysis, CexVerdict, CritiqueVerdict, Origin, PlanItem, PropertyStatus, Stage,
    SvaProperty, VPlan,
};
use crate::store::Level;

use super::prompts::{self, fill};
use super::{
    DesignSpec, InterventionRequest, PipelineError, Session, CONTEXT_MESSAGES, LINT, ORCHESTRATOR,
    TASK_CEX, TASK_COVERAGE, TASK_PROPERTY, TASK_REVIEW, TASK_VPLAN,
};

fn list_marker_len(line: &str) -> Option<usize> {
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    let rest = &line[digits..];
    let marker = if digits > 0 {
        match rest.chars().next() {
            Some('.' | ')') => digits + 1,
            _ => return None,
        }
    } else {
        match line.chars().next() {
            Some(c @ ('-' | '*' | '+' | '•')) => c.len_utf8(),
            _ => return None,
        }
    };
    match line[marker..].chars().next() {
        Some(c) if c.is_whitespace() => Some(marker),
        _ => None,
    }
}

/// Items of the first numbered or bulleted list in a reply. Indented
/// continuation lines join the preceding item; fenced code is ignored.
pub fn parse_plan_list(reply: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    let mut in_fence = false;
    let mut continuing = false;
    for line in reply.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            in_fence = !in_fence;
            continuing = false;
            continue;
        }
        if in_fence {
            continue;
        }
        if let Some(n) = list_marker_len(trimmed) {
            let text = trimmed[n..].trim();
            if !text.is_empty() {
                items.push(text.to_string());
                continuing = true;
            }
            continue;
        }
        if trimmed.is_empty() {
            continuing = false;
        } else if continuing && line.starts_with(char::is_whitespace) {
            let last = items.last_mut().expect("continuing implies an item");
            last.push(' ');
            last.push_str(trimmed);
        } else {
            continuing = false;
        }
    }
    items
}

fn ports_text(spec: &DesignSpec) -> String {
    if spec.port_list.is_empty() {
        "(none found)".into()
    } else {
        spec.port_list.join(", ")
    }
}

pub fn generate_vplan(session: &Session, spec: &DesignSpec) -> Result<VPlan, PipelineError> {
    let task = session.roster.task(TASK_VPLAN);
    let lead = session.roster.agent_for(TASK_VPLAN);
    let prompt = fill(
        prompts::VPLAN,
        &[
            ("task", &task.description),
            ("spec", &spec.text),
            ("ports", &ports_text(spec)),
            ("expected", &task.expected_output),
        ],
    );
    let reply = session.ask(
        TASK_VPLAN,
        vec![session.system_prompt(lead), ChatMessage::user(prompt)],
    )?;
    let items = parse_plan_list(&reply);
    if items.is_empty() {
        return Err(PipelineError::stage(
            Stage::Vplan,
            "the plan reply contains no numbered or bulleted list",
        ));
    }
    let mut plan = VPlan::default();
    for it in items {
        plan.push(it);
    }
    Ok(plan)
}

/// A draft to start the critic loop from instead of asking the engineer.
#[derive(Debug, Clone)]
pub(crate) struct Seed {
    pub reply: String,
    pub revision: u32,
    pub origin: Origin,
}

/// Result of one property's write-and-review loop.
#[derive(Debug, Clone)]
pub struct Refined {
    /// `None` when the item had to be dropped.
    pub property: Option<SvaProperty>,
    /// The loop's HIL state as it ended.
    pub state: ConversationState,
    /// Model calls made to the critic.
    pub critic_calls: u32,
    /// Rejections, whether from the critic or from lint.
    pub rejections: u32,
    pub escalated: bool,
}

struct Review {
    reply: Message,
    verdict: CritiqueVerdict,
    /// The single lint-clean block, when the draft had one.
    code: Option<String>,
}

fn single_clean_block(text: &str, spec: &DesignSpec) -> Result<SvaBlock, String> {
    let mut blocks = extract_sva_blocks(text);
    match blocks.len() {
        0 => Err("No SystemVerilog assertion was found. Reply with exactly one assertion in a systemverilog code fence.".into()),
        1 => {
            let block = blocks.remove(0);
            let report = lint_sva(&block, &spec.port_list);
            if report.ok {
                Ok(block)
            } else {
                Err(format!("The assertion does not pass lint:\n{}", report.summary()))
            }
        }
        n => Err(format!(
            "Found {n} assertion statements. Write exactly one assertion for this property."
        )),
    }
}

fn review(
    session: &Session,
    spec: &DesignSpec,
    item: &PlanItem,
    draft: &str,
    critic_calls: &Cell<u32>,
) -> Result<Review, PipelineError> {
    let engineer = &session.roster.agent_for(TASK_PROPERTY).name;
    let block = match single_clean_block(draft, spec) {
        Ok(b) => b,
        Err(feedback) => {
            let reply = session.record(Message::new(
                LINT,
                engineer,
                MessageKind::Feedback,
                format!("REJECT: {feedback}"),
            ))?;
            return Ok(Review {
                reply,
                verdict: CritiqueVerdict::reject(feedback),
                code: None,
            });
        }
    };
    let task = session.roster.task(TASK_REVIEW);
    let critic = session.roster.agent_for(TASK_REVIEW);
    let prompt = fill(
        prompts::REVIEW,
        &[
            ("task", &task.description),
            ("item_id", &item.id),
            ("description", &item.description),
            ("ports", &ports_text(spec)),
            ("code", &block.code),
            ("expected", &task.expected_output),
        ],
    );
    critic_calls.set(critic_calls.get() + 1);
    let text = session.ask(
        TASK_REVIEW,
        vec![session.system_prompt(critic), ChatMessage::user(prompt)],
    )?;
    Ok(Review {
        reply: Message::new(&critic.name, engineer, MessageKind::Feedback, &text),
        verdict: CritiqueVerdict::parse(&text),
        code: Some(block.code),
    })
}

fn property_prompt(session: &Session, spec: &DesignSpec, item: &PlanItem) -> String {
    let task = session.roster.task(TASK_PROPERTY);
    fill(
        prompts::PROPERTY,
        &[
            ("task", &task.description),
            ("item_id", &item.id),
            ("description", &item.description),
            ("ports", &ports_text(spec)),
            ("expected", &task.expected_output),
        ],
    )
}

fn first_turns(session: &Session, spec: &DesignSpec, item: &PlanItem) -> Vec<ChatMessage> {
    let engineer = session.roster.agent_for(TASK_PROPERTY);
    vec![
        session.system_prompt(engineer),
        ChatMessage::user(property_prompt(session, spec, item)),
    ]
}

/// Writes one property and runs it through the critic loop.
///
/// Each draft is reviewed by lint first and, when clean, by the critic.
/// Rejections go back to the engineer as feedback. In `terminate` mode the
/// human is asked once `max_iter` reviews were answered automatically:
/// INTERCEPT supplies the code, SKIP accepts the latest draft, TERMINATE
/// aborts the run. In `never` mode the item is dropped after `max_iter`
/// rejections.
pub fn generate_and_refine_sva(
    session: &Session,
    spec: &DesignSpec,
    item: &PlanItem,
    property_id: &str,
) -> Result<Refined, PipelineError> {
    refine(session, spec, item, property_id, None)
}

pub(crate) fn refine(
    session: &Session,
    spec: &DesignSpec,
    item: &PlanItem,
    property_id: &str,
    seed: Option<Seed>,
) -> Result<Refined, PipelineError> {
    let config = session.config;
    let engineer = session.roster.agent_for(TASK_PROPERTY).name.clone();
    let critic = session.roster.agent_for(TASK_REVIEW).name.clone();
    let expected = session.roster.task(TASK_PROPERTY).expected_output.clone();

    let mut history = first_turns(session, spec, item);
    let (mut draft, mut revision, seed_revision, seed_origin) = match seed {
        Some(s) => (s.reply, s.revision, s.revision, s.origin),
        None => (session.ask(TASK_PROPERTY, history.clone())?, 0, 0, Origin::Agent),
    };
    history.push(ChatMessage::assistant(&draft));

    let mut state = ConversationState::new(config.hil_mode, config.max_iter);
    let critic_calls = Cell::new(0u32);
    let skip = Cell::new(false);
    let escalated = Cell::new(false);
    let mut rejections = 0u32;

    let done = |property: Option<SvaProperty>, state: ConversationState, rejections, escalated: bool| Refined {
        property,
        state,
        critic_calls: critic_calls.get(),
        rejections,
        escalated,
    };
    let make = |code: String, revision: u32, origin: Origin| SvaProperty {
        id: property_id.to_string(),
        plan_item_id: item.id.clone(),
        code,
        revision,
        origin,
        status: PropertyStatus::Accepted,
    };

    loop {
        let incoming = Message::new(&engineer, &critic, MessageKind::Reply, &draft);
        let last_review: RefCell<Option<Review>> = RefCell::new(None);
        let step = state.process_message(
            &incoming,
            |m| {
                if skip.get() {
                    return Ok(Message::new(
                        ORCHESTRATOR,
                        &engineer,
                        MessageKind::Feedback,
                        "SKIP: latest draft accepted without further review",
                    ));
                }
                let r = review(session, spec, item, &m.content, &critic_calls)?;
                let reply = r.reply.clone();
                *last_review.borrow_mut() = Some(r);
                Ok(reply)
            },
            |m| {
                escalated.set(true);
                session.log(
                    Level::Warn,
                    Some(&critic),
                    format!("{}: no accepted assertion after {} reviews; asking a human", item.id, config.max_iter),
                )?;
                let request = InterventionRequest {
                    run_id: session.run_id().to_string(),
                    plan_item_id: item.id.clone(),
                    property_id: Some(property_id.to_string()),
                    prompt_context: session.recent(CONTEXT_MESSAGES),
                    latest_draft: Some(
                        extract_sva_blocks(&m.content)
                            .first()
                            .map_or_else(|| m.content.clone(), |b| b.code.clone()),
                    ),
                };
                let decision = session.human.decide(&request).map_err(PipelineError::Human)?;
                match decision.choice {
                    HilChoice::Skip => skip.set(true),
                    HilChoice::Terminate => {}
                    HilChoice::Intercept => return Ok(decision),
                }
                session.record(Message::new(
                    HUMAN,
                    &engineer,
                    MessageKind::Feedback,
                    decision.choice.to_string(),
                ))?;
                Ok(decision)
            },
        );
        let step = step.map_err(|e| match e {
            HilError::Callback(e) => e,
            HilError::InvalidDecision(m) => PipelineError::Human(m),
            HilError::Inactive => PipelineError::stage(Stage::Sva, "critic conversation is no longer active"),
        })?;

        match step {
            Step::Terminated => {
                session.log(Level::Warn, Some(&engineer), format!("{}: engineer ended the conversation; item dropped", item.id))?;
                return Ok(done(None, state, rejections, escalated.get()));
            }
            Step::HumanTerminated => return Err(PipelineError::Aborted),
            Step::Skipped(_) => {
                let accepted = single_clean_block(&draft, spec).ok();
                if accepted.is_none() {
                    session.log(Level::Warn, None, format!("{}: skipped draft does not pass lint; item dropped", item.id))?;
                }
                let p = accepted.map(|b| make(b.code, revision, Origin::Agent));
                return Ok(done(p, state, rejections, true));
            }
            Step::HumanReplied(reply) => {
                session.record(reply.clone())?;
                let blocks = extract_sva_blocks(&reply.content);
                let text = if blocks.is_empty() {
                    format!("```systemverilog\n{}\n```", reply.content.trim())
                } else {
                    reply.content.clone()
                };
                let accepted = single_clean_block(&text, spec);
                if let Err(why) = &accepted {
                    session.log(Level::Warn, Some(HUMAN), format!("{}: intercepted code rejected, item dropped: {why}", item.id))?;
                }
                let p = accepted.ok().map(|b| make(b.code, revision, Origin::HumanIntercept));
                return Ok(done(p, state, rejections, true));
            }
            Step::AutoReplied(_) => {
                let r = last_review.into_inner().expect("auto reply ran a review");
                if r.verdict.accept {
                    let origin = if revision == seed_revision { seed_origin } else { Origin::Agent };
                    let code = r.code.expect("accepted drafts passed lint");
                    return Ok(done(Some(make(code, revision, origin)), state, rejections, escalated.get()));
                }
                rejections += 1;
                if config.hil_mode == HilMode::Never && rejections >= config.max_iter {
                    session.log(
                        Level::Warn,
                        Some(&critic),
                        format!("{}: rejected {rejections} times with no human in the loop; item dropped", item.id),
                    )?;
                    return Ok(done(None, state, rejections, false));
                }
                revision += 1;
                history.push(ChatMessage::user(fill(
                    prompts::REVISE,
                    &[
                        ("item_id", &item.id),
                        ("feedback", &r.verdict.feedback),
                        ("expected", &expected),
                    ],
                )));
                draft = session.ask(TASK_PROPERTY, history.clone())?;
                history.push(ChatMessage::assistant(&draft));
            }
        }
    }
}

/// Whitespace- and comment-insensitive form of assertion code.
pub fn normalize_code(code: &str) -> String {
    lex(code)
        .tokens
        .iter()
        .map(|t| t.text)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteResult {
    /// Index of the winning sample (first member of the largest group).
    pub winner: usize,
    pub reply: String,
    /// Sample indices per normalized candidate, in first-seen order.
    pub groups: Vec<(String, Vec<usize>)>,
}

/// Draws `n` engineer samples and keeps the most common candidate; ties go
/// to the group seen first.
pub fn sample_and_vote(
    session: &Session,
    spec: &DesignSpec,
    item: &PlanItem,
    n: u32,
) -> Result<VoteResult, PipelineError> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(PipelineError::stage(Stage::Sva, format!("vote sample count must be odd, got {n}")));
    }
    let turns = first_turns(session, spec, item);
    let mut replies = Vec::new();
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for i in 0..n as usize {
        let reply = session.ask(TASK_PROPERTY, turns.clone())?;
        let blocks = extract_sva_blocks(&reply);
        if !blocks.is_empty() {
            let key = blocks
                .iter()
                .map(|b| normalize_code(&b.code))
                .collect::<Vec<_>>()
                .join("\n");
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, members)) => members.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        replies.push(reply);
    }
    let mut best: Option<&(String, Vec<usize>)> = None;
    for g in &groups {
        if best.is_none_or(|b| g.1.len() > b.1.len()) {
            best = Some(g);
        }
    }
    let winner = best
        .map(|g| g.1[0])
        .ok_or_else(|| PipelineError::stage(Stage::Sva, format!("all {n} vote samples for {} were unparseable", item.id)))?;
    Ok(VoteResult {
        winner,
        reply: replies.swap_remove(winner),
        groups,
    })
}

/// Proves every non-draft property and copies the verdicts back.
pub fn prove_stage(
    properties: &mut [SvaProperty],
    rtl: &[RtlSource],
    prover: &dyn ProverBackend,
) -> Result<ProverResult, PipelineError> {
    let submitted: Vec<(String, SvaBlock)> = properties
        .iter()
        .filter(|p| p.status != PropertyStatus::Draft)
        .map(|p| (p.id.clone(), SvaBlock::new(&p.code)))
        .collect();
    let result = prove(prover, rtl, &submitted)?;
    for p in properties.iter_mut() {
        if let Some(v) = result.assertions.get(&p.id) {
            p.status = match v.status {
                AssertionStatus::Proven => PropertyStatus::Proven,
                AssertionStatus::Cex => PropertyStatus::Cex,
                AssertionStatus::Inconclusive | AssertionStatus::Error => PropertyStatus::Inconclusive,
            };
        }
    }
    Ok(result)
}

fn verdict_word(word: &str) -> Option<CexVerdict> {
    match word {
        "RTL_BUG" => Some(CexVerdict::RtlBug),
        "BAD_PROPERTY" => Some(CexVerdict::BadProperty),
        _ => None,
    }
}

/// Reads an analyst reply: the first `RTL_BUG` / `BAD_PROPERTY` word outside
/// code fences is the verdict; the prose after it is the explanation.
pub fn parse_cex_verdict(property_id: &str, reply: &str) -> CexAnalysis {
    let mut in_fence = false;
    let mut verdict = None;
    let mut explanation: Vec<String> = Vec::new();
    for line in reply.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            continue;
        }
        if verdict.is_some() {
            if !line.trim().is_empty() {
                explanation.push(line.trim().to_string());
            }
            continue;
        }
        let mut start = 0;
        for (i, c) in line.char_indices().chain([(line.len(), ' ')]) {
            if c.is_ascii_alphanumeric() || c == '_' {
                continue;
            }
            if let Some(v) = verdict_word(&line[start..i]) {
                verdict = Some(v);
                let rest = line[i..].trim_start_matches([':', '-', ' ', '.', '*']).trim();
                if !rest.is_empty() {
                    explanation.push(rest.to_string());
                }
                break;
            }
            start = i + c.len_utf8();
        }
    }
    match verdict {
        None => CexAnalysis {
            property_id: property_id.to_string(),
            verdict: CexVerdict::Inconclusive,
            explanation: reply.trim().to_string(),
            revised_code: None,
        },
        Some(v) => {
            let revised_code = if v == CexVerdict::BadProperty {
                let blocks = extract_sva_blocks(reply);
                (blocks.len() == 1).then(|| blocks[0].code.clone())
            } else {
                None
            };
            CexAnalysis {
                property_id: property_id.to_string(),
                verdict: v,
                explanation: explanation.join("\n"),
                revised_code,
            }
        }
    }
}

/// Asks the analyst to explain a counterexample. Without a trace there is
/// nothing to analyze and the result is inconclusive.
pub fn analyze_cex(
    session: &Session,
    property: &SvaProperty,
    description: &str,
    trace: Option<&CexTrace>,
) -> Result<CexAnalysis, PipelineError> {
    let Some(trace) = trace else {
        return Ok(CexAnalysis {
            property_id: property.id.clone(),
            verdict: CexVerdict::Inconclusive,
            explanation: "the prover reported no counterexample trace".into(),
            revised_code: None,
        });
    };
    let task = session.roster.task(TASK_CEX);
    let analyst = session.roster.agent_for(TASK_CEX);
    let prompt = fill(
        prompts::CEX,
        &[
            ("task", &task.description),
            ("property_id", &property.id),
            ("description", description),
            ("code", &property.code),
            ("failing", &trace.failing_property),
            ("trace", &trace.to_table()),
            ("expected", &task.expected_output),
        ],
    );
    let reply = session.ask(
        TASK_CEX,
        vec![session.system_prompt(analyst), ChatMessage::user(prompt)],
    )?;
    Ok(parse_cex_verdict(&property.id, &reply))
}

/// Asks the lead for properties closing the coverage holes and appends them
/// to the plan. Returns the new item ids; full coverage asks nothing.
pub fn coverage_feedback(
    session: &Session,
    result: &ProverResult,
    vplan: &mut VPlan,
) -> Result<Vec<String>, PipelineError> {
    let holes: Vec<String> = result
        .covers
        .iter()
        .filter(|(_, c)| c.status != CoverStatus::Covered)
        .map(|(id, c)| format!("- {id}: {}", c.status.as_str()))
        .collect();
    if holes.is_empty() {
        return Ok(Vec::new());
    }
    let task = session.roster.task(TASK_COVERAGE);
    let lead = session.roster.agent_for(TASK_COVERAGE);
    let plan: String = vplan
        .items
        .iter()
        .map(|i| format!("- {}: {}", i.id, i.description))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = fill(
        prompts::COVERAGE,
        &[
            ("task", &task.description),
            ("coverage", &crate::metrics::coverage_rate(result).to_string()),
            ("holes", &holes.join("\n")),
            ("plan", &plan),
            ("expected", &task.expected_output),
        ],
    );
    let reply = session.ask(
        TASK_COVERAGE,
        vec![session.system_prompt(lead), ChatMessage::user(prompt)],
    )?;
    Ok(parse_plan_list(&reply)
        .into_iter()
        .map(|d| vplan.push(d).id.clone())
        .collect())
}
