//! Rendezvous between pipeline threads parked in their human callback and
//! HTTP handlers submitting decisions.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use saarthi_core::conversation::{HilDecision, Message};
use saarthi_core::pipeline::{HumanInput, InterventionRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InterventionState {
    Waiting,
    Answered,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingIntervention {
    pub intervention_id: String,
    pub run_id: String,
    pub plan_item_id: String,
    pub property_id: Option<String>,
    pub prompt_context: Vec<Message>,
    pub latest_draft: Option<String>,
    pub created: DateTime<Utc>,
    pub state: InterventionState,
    /// The decision an ANSWERED entry carries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<HilDecision>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("unknown intervention `{0}`")]
    NotFound(String),
    #[error("intervention `{id}` is already {state:?}")]
    Conflict { id: String, state: InterventionState },
    #[error("invalid decision: {0}")]
    Invalid(String),
    #[error("run `{run_id}` already waits on intervention `{waiting}`")]
    DuplicateWaiting { run_id: String, waiting: String },
}

struct Slot {
    entry: PendingIntervention,
    delivered: bool,
}

#[derive(Default)]
struct QueueState {
    slots: BTreeMap<String, Slot>,
    next: u64,
}

/// Pending interventions, oldest first. An optional deadline expires
/// unanswered entries, which the parked callback then treats as SKIP.
#[derive(Default)]
pub struct InterventionQueue {
    state: Mutex<QueueState>,
    answered: Condvar,
    deadline: Option<Duration>,
}

impl InterventionQueue {
    pub fn new(deadline: Option<Duration>) -> Self {
        InterventionQueue {
            deadline,
            ..Self::default()
        }
    }

    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Adds a WAITING entry; a run may have only one at a time.
    pub fn enqueue(&self, request: &InterventionRequest) -> Result<String, QueueError> {
        let mut st = self.lock();
        if let Some(waiting) = st.slots.values().find(|s| {
            s.entry.run_id == request.run_id && s.entry.state == InterventionState::Waiting
        }) {
            return Err(QueueError::DuplicateWaiting {
                run_id: request.run_id.clone(),
                waiting: waiting.entry.intervention_id.clone(),
            });
        }
        st.next += 1;
        let id = format!("i{:06}", st.next);
        let entry = PendingIntervention {
            intervention_id: id.clone(),
            run_id: request.run_id.clone(),
            plan_item_id: request.plan_item_id.clone(),
            property_id: request.property_id.clone(),
            prompt_context: request.prompt_context.clone(),
            latest_draft: request.latest_draft.clone(),
            created: Utc::now(),
            state: InterventionState::Waiting,
            decision: None,
        };
        st.slots.insert(
            id.clone(),
            Slot {
                entry,
                delivered: false,
            },
        );
        Ok(id)
    }

    /// Parks until the entry is answered (or expires) and hands over its
    /// decision. Each decision is handed over at most once.
    pub fn wait(&self, id: &str) -> Result<HilDecision, QueueError> {
        let expires = self.deadline.map(|d| Instant::now() + d);
        let mut st = self.lock();
        loop {
            let slot = st
                .slots
                .get_mut(id)
                .ok_or_else(|| QueueError::NotFound(id.to_string()))?;
            match slot.entry.state {
                InterventionState::Answered | InterventionState::Expired if slot.delivered => {
                    return Err(QueueError::Conflict {
                        id: id.to_string(),
                        state: slot.entry.state,
                    })
                }
                InterventionState::Answered => {
                    slot.delivered = true;
                    return Ok(slot.entry.decision.clone().expect("answered entries carry a decision"));
                }
                InterventionState::Expired => {
                    slot.delivered = true;
                    return Ok(HilDecision::skip());
                }
                InterventionState::Waiting => {}
            }
            match expires {
                None => st = self.answered.wait(st).unwrap_or_else(|p| p.into_inner()),
                Some(at) => {
                    let now = Instant::now();
                    if now >= at {
                        let slot = st.slots.get_mut(id).expect("slot checked above");
                        slot.entry.state = InterventionState::Expired;
                        continue;
                    }
                    st = self
                        .answered
                        .wait_timeout(st, at - now)
                        .unwrap_or_else(|p| p.into_inner())
                        .0;
                }
            }
        }
    }

    /// Answers a WAITING entry. Exactly one of any number of concurrent
    /// submissions for the same entry succeeds.
    pub fn submit(&self, id: &str, decision: HilDecision) -> Result<PendingIntervention, QueueError> {
        decision.validate().map_err(QueueError::Invalid)?;
        let mut st = self.lock();
        let slot = st
            .slots
            .get_mut(id)
            .ok_or_else(|| QueueError::NotFound(id.to_string()))?;
        if slot.entry.state != InterventionState::Waiting {
            return Err(QueueError::Conflict {
                id: id.to_string(),
                state: slot.entry.state,
            });
        }
        slot.entry.state = InterventionState::Answered;
        slot.entry.decision = Some(decision);
        let entry = slot.entry.clone();
        drop(st);
        self.answered.notify_all();
        Ok(entry)
    }

    pub fn get(&self, id: &str) -> Option<PendingIntervention> {
        self.lock().slots.get(id).map(|s| s.entry.clone())
    }

    /// A consistent snapshot of every entry, oldest first.
    pub fn list(&self) -> Vec<PendingIntervention> {
        self.lock().slots.values().map(|s| s.entry.clone()).collect()
    }
}

impl HumanInput for InterventionQueue {
    fn decide(&self, request: &InterventionRequest) -> Result<HilDecision, String> {
        let id = self.enqueue(request).map_err(|e| e.to_string())?;
        self.wait(&id).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(run: &str) -> InterventionRequest {
        InterventionRequest {
            run_id: run.into(),
            plan_item_id: "V1".into(),
            property_id: Some("P1".into()),
            prompt_context: Vec::new(),
            latest_draft: Some("assert property (a);".into()),
        }
    }

    #[test]
    fn enqueue_lists_waiting_entry() {
        let q = InterventionQueue::default();
        let id = q.enqueue(&request("r1")).unwrap();
        let all = q.list();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].intervention_id, id);
        assert_eq!(all[0].state, InterventionState::Waiting);
        assert_eq!(all[0].latest_draft.as_deref(), Some("assert property (a);"));
    }

    #[test]
    fn one_waiting_entry_per_run() {
        let q = InterventionQueue::default();
        let first = q.enqueue(&request("r1")).unwrap();
        assert_eq!(
            q.enqueue(&request("r1")),
            Err(QueueError::DuplicateWaiting {
                run_id: "r1".into(),
                waiting: first.clone()
            })
        );
        q.enqueue(&request("r2")).unwrap();
        q.submit(&first, HilDecision::skip()).unwrap();
        q.enqueue(&request("r1")).unwrap();
    }

    #[test]
    fn submit_errors() {
        let q = InterventionQueue::default();
        assert_eq!(
            q.submit("nope", HilDecision::skip()),
            Err(QueueError::NotFound("nope".into()))
        );
        let id = q.enqueue(&request("r1")).unwrap();
        assert!(matches!(
            q.submit(&id, HilDecision::intercept("  ")),
            Err(QueueError::Invalid(_))
        ));
        assert_eq!(q.get(&id).unwrap().state, InterventionState::Waiting);
        q.submit(&id, HilDecision::terminate()).unwrap();
        assert!(matches!(
            q.submit(&id, HilDecision::skip()),
            Err(QueueError::Conflict { state: InterventionState::Answered, .. })
        ));
        assert_eq!(q.get(&id).unwrap().decision, Some(HilDecision::terminate()));
    }

    #[test]
    fn parked_callback_receives_the_decision() {
        let q = Arc::new(InterventionQueue::default());
        let worker = {
            let q = Arc::clone(&q);
            std::thread::spawn(move || q.decide(&request("r1")))
        };
        let id = loop {
            if let Some(e) = q.list().first() {
                break e.intervention_id.clone();
            }
            std::thread::yield_now();
        };
        q.submit(&id, HilDecision::intercept("assert property (b);")).unwrap();
        assert_eq!(
            worker.join().unwrap(),
            Ok(HilDecision::intercept("assert property (b);"))
        );
        assert!(matches!(q.wait(&id), Err(QueueError::Conflict { .. })));
    }

    #[test]
    fn concurrent_duplicate_submissions_deliver_once() {
        for _ in 0..20 {
            let q = Arc::new(InterventionQueue::default());
            let id = q.enqueue(&request("r1")).unwrap();
            let accepted = Arc::new(AtomicUsize::new(0));
            let submitters: Vec<_> = (0..8)
                .map(|n| {
                    let (q, id, accepted) = (Arc::clone(&q), id.clone(), Arc::clone(&accepted));
                    std::thread::spawn(move || {
                        let decision = if n % 2 == 0 {
                            HilDecision::skip()
                        } else {
                            HilDecision::intercept(format!("assert property (s{n});"))
                        };
                        if q.submit(&id, decision).is_ok() {
                            accepted.fetch_add(1, Ordering::SeqCst);
                        }
                    })
                })
                .collect();
            let delivered = q.wait(&id).unwrap();
            for s in submitters {
                s.join().unwrap();
            }
            assert_eq!(accepted.load(Ordering::SeqCst), 1);
            assert_eq!(Some(delivered), q.get(&id).unwrap().decision);
            assert!(q.wait(&id).is_err());
        }
    }

    #[test]
    fn deadline_expires_to_skip() {
        let q = InterventionQueue::new(Some(Duration::from_millis(20)));
        let id = q.enqueue(&request("r1")).unwrap();
        assert_eq!(q.wait(&id), Ok(HilDecision::skip()));
        assert_eq!(q.get(&id).unwrap().state, InterventionState::Expired);
        assert!(matches!(
            q.submit(&id, HilDecision::skip()),
            Err(QueueError::Conflict { state: InterventionState::Expired, .. })
        ));
    }
}
