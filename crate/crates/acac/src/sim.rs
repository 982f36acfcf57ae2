//! Deterministic scenario replay: applies a time-ordered event sequence to
//! the engine, records one trace entry (with a state digest) per event, and
//! checks inline permit/deny expectations.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ast::PolicySet;
use crate::engine::{
    apply_event, decide_and_commit, Decision, DenyReason, EcosystemEvent, EngineError, Outcome,
    Request,
};
use crate::model::{ActivityInstance, AttributeValue, EcosystemState, EntityId, Timestamp};

/// One scenario line: a request, an environment update, or a device event.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioEvent {
    Request {
        subject: EntityId,
        op: EntityId,
        object: EntityId,
        activity: EntityId,
    },
    Env(EcosystemEvent),
}

/// Expected outcome bound to a request; a bare deny matches any reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Permit,
    Deny(Option<DenyReason>),
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expectation::Permit => f.write_str("permit"),
            Expectation::Deny(None) => f.write_str("deny"),
            Expectation::Deny(Some(reason)) => write!(f, "deny:{}", reason),
        }
    }
}

impl Expectation {
    pub fn matches(&self, decision: &Decision) -> bool {
        match self {
            Expectation::Permit => decision.outcome == Outcome::Permit,
            Expectation::Deny(None) => decision.outcome == Outcome::Deny,
            Expectation::Deny(Some(reason)) => {
                decision.outcome == Outcome::Deny && decision.reason == Some(*reason)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioStep {
    pub time: Timestamp,
    pub event: ScenarioEvent,
    /// Present only on request steps that carry an inline expectation.
    pub expect: Option<Expectation>,
}

/// A parsed scenario: steps in non-decreasing time order (file order breaks
/// ties and is authoritative).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub steps: Vec<ScenarioStep>,
}

/// One replayed event with its decision (requests and event-starts), any
/// sweep revocations, and the digest of the state after the event.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub time: Timestamp,
    pub event: ScenarioEvent,
    pub decision: Option<Decision>,
    pub revoked: Vec<(EntityId, EntityId)>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub entries: Vec<TraceEntry>,
    pub final_state: EcosystemState,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("step {index} at t={time}: expected {expected}, got {actual}")]
    Expectation {
        index: usize,
        time: Timestamp,
        expected: Expectation,
        actual: String,
    },
    #[error("step {index}: {source}")]
    Engine {
        index: usize,
        #[source]
        source: EngineError,
    },
}

/// Replays the scenario from the policy's initial state. The first failed
/// expectation (or engine fault on a malformed event) stops the run.
pub fn run(policy: &PolicySet, scenario: &Scenario) -> Result<ScenarioTrace, RunError> {
    run_from(policy.initial_state(), policy, scenario)
}

/// Replays from an explicit starting state (used by the CLI to build state
/// from a scenario prefix).
pub fn run_from(
    initial: EcosystemState,
    policy: &PolicySet,
    scenario: &Scenario,
) -> Result<ScenarioTrace, RunError> {
    let mut state = initial;
    let mut entries = Vec::with_capacity(scenario.steps.len());
    for (index, step) in scenario.steps.iter().enumerate() {
        let (next, decision, revoked) = match &step.event {
            ScenarioEvent::Request { subject, op, object, activity } => {
                let request = Request {
                    subject: subject.clone(),
                    op: op.clone(),
                    object: object.clone(),
                    activity: activity.clone(),
                    time: step.time,
                };
                let (next, decision) = decide_and_commit(&state, policy, &request)
                    .map_err(|source| RunError::Engine { index, source })?;
                (next, Some(decision), Vec::new())
            }
            ScenarioEvent::Env(event) => {
                let (next, effect) = apply_event(&state, policy, step.time, event)
                    .map_err(|source| RunError::Engine { index, source })?;
                (next, effect.decision, effect.revoked)
            }
        };
        if let Some(expected) = &step.expect {
            let decision = decision.as_ref().expect("expectations bind to requests");
            if !expected.matches(decision) {
                return Err(RunError::Expectation {
                    index,
                    time: step.time,
                    expected: *expected,
                    actual: describe(decision),
                });
            }
        }
        state = next;
        entries.push(TraceEntry {
            time: step.time,
            event: step.event.clone(),
            decision,
            revoked,
            digest: state_digest(&state),
        });
    }
    Ok(ScenarioTrace {
        entries,
        final_state: state,
    })
}

fn describe(decision: &Decision) -> String {
    match decision.outcome {
        Outcome::Permit => "permit".into(),
        Outcome::Deny => format!(
            "deny:{}",
            decision.reason.map(|r| r.as_str()).unwrap_or("?")
        ),
    }
}

/// Stable hex digest over the canonical serialization of the state's live
/// set, environment, and counters. Independent of in-memory layout: live
/// instances are sorted before hashing.
pub fn state_digest(state: &EcosystemState) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_state_text(state).as_bytes());
    let bytes = hasher.finalize();
    let mut hex = String::with_capacity(32);
    for b in &bytes[..16] {
        hex.push_str(&format!("{:02x}", b));
    }
    hex
}

/// Canonical text form of the decision-relevant state, used for digests and
/// for the analyzer's visited set.
pub fn canonical_state_text(state: &EcosystemState) -> String {
    let mut out = String::new();
    out.push_str(&format!("clock {}\n", state.clock));
    let mut live: Vec<&ActivityInstance> = state.live.iter().collect();
    live.sort_by_key(|i| (&i.device, &i.activity));
    for i in live {
        out.push_str(&format!(
            "live {} {} {} {} {}\n",
            i.device,
            i.activity,
            i.initiator,
            i.status.as_str(),
            i.start_time
        ));
    }
    let mut history: Vec<&ActivityInstance> = state.history.iter().collect();
    history.sort_by_key(|i| (i.end_time, &i.device, &i.activity, i.start_time));
    for i in history {
        out.push_str(&format!(
            "done {} {} {} {} {} {}\n",
            i.device,
            i.activity,
            i.initiator,
            i.status.as_str(),
            i.start_time,
            i.end_time.unwrap_or(0)
        ));
    }
    for (name, value) in &state.environment {
        out.push_str(&format!("env {} {}\n", name, canonical_value(value)));
    }
    for (key, times) in &state.counters {
        out.push_str(&format!(
            "counter {} {} {}",
            key.scope.as_str(),
            key.activity,
            key.subject_or_object
                .as_ref()
                .map(|i| i.as_str())
                .unwrap_or("-")
        ));
        for t in times {
            out.push_str(&format!(" {}", t));
        }
        out.push('\n');
    }
    out
}

fn canonical_value(value: &AttributeValue) -> String {
    match value {
        AttributeValue::Number(n) => format!("n:{}", n),
        AttributeValue::Text(s) => format!("s:{}", s),
        AttributeValue::Flag(b) => format!("b:{}", b),
    }
}

/// Renders the trace in the line-oriented decision-trace format, one `#
/// digest` line per event.
pub fn render_trace(trace: &ScenarioTrace) -> String {
    let mut out = String::new();
    for entry in &trace.entries {
        match &entry.event {
            ScenarioEvent::Request { subject, op, object, activity } => {
                out.push_str(&format!("{} {} {} {} {}", entry.time, subject, op, object, activity));
                if let Some(d) = &entry.decision {
                    out.push_str(&format!(" -> {}", render_decision(d)));
                }
            }
            ScenarioEvent::Env(EcosystemEvent::EnvSet { name, value }) => {
                out.push_str(&format!("{} env {}={}", entry.time, name, value));
                push_pairs(&mut out, "revoked", &entry.revoked);
            }
            ScenarioEvent::Env(EcosystemEvent::Start { object, activity }) => {
                out.push_str(&format!("{} EVENT EVENT {} {}", entry.time, object, activity));
                if let Some(d) = &entry.decision {
                    out.push_str(&format!(" -> {}", render_decision(d)));
                }
            }
            ScenarioEvent::Env(EcosystemEvent::Stop { object, activity }) => {
                out.push_str(&format!("{} event {} {} stop", entry.time, object, activity));
                push_pairs(&mut out, "revoked", &entry.revoked);
            }
        }
        out.push('\n');
        out.push_str(&format!("# digest {}\n", entry.digest));
    }
    out
}

/// `PERMIT|DENY(<reason>) [obligations=...] [preempted=...] [revoked=...]`
pub fn render_decision(decision: &Decision) -> String {
    let mut out = match decision.outcome {
        Outcome::Permit => "PERMIT".to_string(),
        Outcome::Deny => format!(
            "DENY({})",
            decision.reason.map(|r| r.as_str()).unwrap_or("?")
        ),
    };
    if !decision.executed_obligations.is_empty() {
        let parts: Vec<String> = decision.executed_obligations.iter().map(|o| o.to_string()).collect();
        out.push_str(&format!(" obligations={}", parts.join(";")));
    }
    if !decision.preempted.is_empty() {
        let parts: Vec<String> = decision
            .preempted
            .iter()
            .map(|(d, a, k)| format!("{}:{}:{}", a, d, k.as_str()))
            .collect();
        out.push_str(&format!(" preempted={}", parts.join(";")));
    }
    if !decision.revoked.is_empty() {
        let parts: Vec<String> = decision.revoked.iter().map(|(d, a)| format!("{}:{}", a, d)).collect();
        out.push_str(&format!(" revoked={}", parts.join(";")));
    }
    out
}

fn push_pairs(out: &mut String, label: &str, pairs: &[(EntityId, EntityId)]) {
    if !pairs.is_empty() {
        let parts: Vec<String> = pairs.iter().map(|(d, a)| format!("{}:{}", a, d)).collect();
        out.push_str(&format!(" {}={}", label, parts.join(";")));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{plain_device, user_subject, ActivityRule, Pattern};

    fn id(s: &str) -> EntityId {
        EntityId::new(s)
    }

    fn tractor_policy() -> PolicySet {
        let mut p = PolicySet::default();
        p.devices.insert(id("Tractor"), plain_device("Tractor", "Tractor"));
        p.subjects.insert(id("worker"), user_subject("worker"));
        p.rules.push(ActivityRule {
            object: Pattern::Id(id("Tractor")),
            op: id("GO"),
            source: Pattern::Any,
            activity: id("Ploughing"),
            pre: None,
            cur: None,
            cur_continuous: false,
            obligations: Vec::new(),
            when: None,
            when_continuous: false,
            limits: Vec::new(),
        });
        p
    }

    fn req(subject: &str, op: &str, object: &str, activity: &str) -> ScenarioEvent {
        ScenarioEvent::Request {
            subject: id(subject),
            op: id(op),
            object: id(object),
            activity: id(activity),
        }
    }

    #[test]
    fn empty_scenario_yields_empty_trace() {
        let policy = tractor_policy();
        let trace = run(&policy, &Scenario::default()).unwrap();
        assert!(trace.entries.is_empty());
        assert_eq!(trace.final_state, policy.initial_state());
    }

    #[test]
    fn expectations_bind_and_fail_fast() {
        let policy = tractor_policy();
        let scenario = Scenario {
            steps: vec![
                ScenarioStep {
                    time: 0,
                    event: req("worker", "GO", "Tractor", "Ploughing"),
                    expect: Some(Expectation::Permit),
                },
                ScenarioStep {
                    time: 1,
                    event: req("worker", "BAD-OP", "Tractor", "Ploughing"),
                    expect: Some(Expectation::Permit),
                },
            ],
        };
        let err = run(&policy, &scenario).unwrap_err();
        match err {
            RunError::Expectation { index, actual, .. } => {
                assert_eq!(index, 1);
                assert_eq!(actual, "deny:no-matching-rule");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let policy = tractor_policy();
        let scenario = Scenario {
            steps: vec![
                ScenarioStep {
                    time: 0,
                    event: req("worker", "GO", "Tractor", "Ploughing"),
                    expect: Some(Expectation::Permit),
                },
                ScenarioStep {
                    time: 5,
                    event: ScenarioEvent::Env(EcosystemEvent::Stop {
                        object: id("Tractor"),
                        activity: id("Ploughing"),
                    }),
                    expect: None,
                },
            ],
        };
        let a = run(&policy, &scenario).unwrap();
        let b = run(&policy, &scenario).unwrap();
        assert_eq!(render_trace(&a), render_trace(&b));
        assert_eq!(a.entries.last().unwrap().digest, b.entries.last().unwrap().digest);
    }

    #[test]
    fn digest_ignores_live_ordering() {
        let policy = tractor_policy();
        let mut s1 = policy.initial_state();
        s1.devices.insert(id("Drone"), plain_device("Drone", "Drone"));
        let mut s2 = s1.clone();
        s1.start_in_place(&id("Tractor"), &id("Ploughing"), &id("worker")).unwrap();
        s1.start_in_place(&id("Drone"), &id("Scanning"), &id("worker")).unwrap();
        s2.start_in_place(&id("Drone"), &id("Scanning"), &id("worker")).unwrap();
        s2.start_in_place(&id("Tractor"), &id("Ploughing"), &id("worker")).unwrap();
        assert_eq!(state_digest(&s1), state_digest(&s2));
    }
}
