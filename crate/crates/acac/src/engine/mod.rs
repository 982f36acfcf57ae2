//! The reference monitor: evaluates one request against the current state
//! and policy, produces a permit/deny decision, and commits permitted
//! transitions atomically — the requested start, obligations, precedence
//! preemptions, relation-triggered auto-starts, and the continuity sweep.
//!
//! Evaluation order is fixed so deny reasons are deterministic: rule
//! selection (first match wins, default deny), pre conditions, current
//! conditions, contextual conditions, usage limits, relations (against the
//! hypothetical state where the requested activity already runs), then the
//! commit. Any obligation failing its precondition rolls the whole
//! transition back to `Deny(obligation-failed)`; a denied request leaves the
//! state untouched except for the advanced clock.

mod eval;
mod relations;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use eval::{eval_cond, eval_context, EvalError};

use crate::ast::{
    ActivityRule, LoserAction, ObligationAction, ObligationKind, PolicySet, RelationDetail,
};
use crate::model::{
    ActivityInstance, ActivityStatus, AttributeValue, EcosystemState, EntityId, Phase, StopMode,
    Timestamp,
};
use eval::eval_guard_or;
use relations::{
    check_request, co_occurring_active, forbids_now, preemption_targets, start_violates_forbid,
    winner_active,
};

/// One authorization request: `subject` asks to perform `op` on `object`,
/// which would start `activity` (or, for stop-style rules, transition the
/// object toward inactivity).
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub subject: EntityId,
    pub op: EntityId,
    pub object: EntityId,
    pub activity: EntityId,
    pub time: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Permit,
    Deny,
}

/// Machine-readable deny reasons, one per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenyReason {
    NoMatchingRule,
    PreFailed,
    CurFailed,
    ContextFailed,
    LimitExceeded,
    RelationIncompatible,
    RelationOrdered,
    RelationDependence,
    RelationPrecedence,
    ObligationFailed,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::NoMatchingRule => "no-matching-rule",
            DenyReason::PreFailed => "pre-failed",
            DenyReason::CurFailed => "cur-failed",
            DenyReason::ContextFailed => "context-failed",
            DenyReason::LimitExceeded => "limit-exceeded",
            DenyReason::RelationIncompatible => "relation-incompatible",
            DenyReason::RelationOrdered => "relation-ordered",
            DenyReason::RelationDependence => "relation-dependence",
            DenyReason::RelationPrecedence => "relation-precedence",
            DenyReason::ObligationFailed => "obligation-failed",
        }
    }

    pub const ALL: [DenyReason; 10] = [
        DenyReason::NoMatchingRule,
        DenyReason::PreFailed,
        DenyReason::CurFailed,
        DenyReason::ContextFailed,
        DenyReason::LimitExceeded,
        DenyReason::RelationIncompatible,
        DenyReason::RelationOrdered,
        DenyReason::RelationDependence,
        DenyReason::RelationPrecedence,
        DenyReason::ObligationFailed,
    ];
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DenyReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        DenyReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or(())
    }
}

/// What happened to a preempted activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreemptKind {
    Halted,
    Aborted,
}

impl PreemptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PreemptKind::Halted => "halted",
            PreemptKind::Aborted => "aborted",
        }
    }
}

/// An obligation as actually executed: resolved to a concrete device.
#[derive(Debug, Clone, PartialEq)]
pub struct ObligationRecord {
    pub kind: ObligationKind,
    pub activity: EntityId,
    pub device: EntityId,
}

impl fmt::Display for ObligationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}@{}", self.kind.as_str(), self.activity, self.device)
    }
}

/// The outcome of one request. A permit names the matched rule and the
/// committed side effects; a deny carries its reason and guarantees the
/// state was left unchanged (clock aside).
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub outcome: Outcome,
    pub reason: Option<DenyReason>,
    pub matched_rule: Option<usize>,
    pub executed_obligations: Vec<ObligationRecord>,
    pub preempted: Vec<(EntityId, EntityId, PreemptKind)>,
    pub revoked: Vec<(EntityId, EntityId)>,
}

impl Decision {
    fn deny(reason: DenyReason) -> Self {
        Decision {
            outcome: Outcome::Deny,
            reason: Some(reason),
            matched_rule: None,
            executed_obligations: Vec::new(),
            preempted: Vec::new(),
            revoked: Vec::new(),
        }
    }

    pub fn is_permit(&self) -> bool {
        self.outcome == Outcome::Permit
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("unknown subject {0}")]
    UnknownSubject(EntityId),
    #[error("unknown device {0}")]
    UnknownDevice(EntityId),
    #[error("time {requested} precedes the clock {clock}")]
    TimeRegression { clock: Timestamp, requested: Timestamp },
    #[error("event stops {activity} on {device}, which is not running")]
    StopNotLive { device: EntityId, activity: EntityId },
}

/// An environment update or a device-originated activity event from a
/// scenario. Starts are authorized like any request, under the EVENT
/// subject and the reserved EVENT operation; stops model the device
/// finishing on its own and archive the instance as completed.
#[derive(Debug, Clone, PartialEq)]
pub enum EcosystemEvent {
    EnvSet { name: String, value: AttributeValue },
    Start { object: EntityId, activity: EntityId },
    Stop { object: EntityId, activity: EntityId },
}

/// Result of [`apply_event`]: the decision for start events, and any
/// continuity revocations for env updates and stops (a request's own
/// revocations live inside its `Decision`).
#[derive(Debug, Clone, PartialEq)]
pub struct EventEffect {
    pub decision: Option<Decision>,
    pub revoked: Vec<(EntityId, EntityId)>,
}

/// Evaluates `request` and, when permitted, commits the transition.
///
/// The policy set must have passed [`crate::ast::validate`]; the request's
/// subject and object must be declared and its time must not precede the
/// clock — violations are engine errors, not decisions.
pub fn decide_and_commit(
    state: &EcosystemState,
    policy: &PolicySet,
    request: &Request,
) -> Result<(EcosystemState, Decision), EngineError> {
    if !state.subjects.contains_key(&request.subject) {
        return Err(EngineError::UnknownSubject(request.subject.clone()));
    }
    if !state.devices.contains_key(&request.object) {
        return Err(EngineError::UnknownDevice(request.object.clone()));
    }
    if request.time < state.clock {
        return Err(EngineError::TimeRegression {
            clock: state.clock,
            requested: request.time,
        });
    }

    let mut work = state.clone();
    work.advance_clock_in_place(request.time).expect("time checked");

    let matched = policy.rules.iter().enumerate().find(|(_, rule)| {
        rule.matches(&request.subject, &request.op, &request.object, &request.activity, &work)
    });
    let Some((rule_index, rule)) = matched else {
        return Ok((work, Decision::deny(DenyReason::NoMatchingRule)));
    };

    if let Some(pre) = &rule.pre {
        if !eval_cond(&work, pre, Phase::Past).unwrap_or(false) {
            return Ok((work, Decision::deny(DenyReason::PreFailed)));
        }
    }
    if let Some(cur) = &rule.cur {
        if !eval_cond(&work, cur, Phase::Current).unwrap_or(false) {
            return Ok((work, Decision::deny(DenyReason::CurFailed)));
        }
    }
    if let Some(when) = &rule.when {
        if !eval_context(&work, when).unwrap_or(false) {
            return Ok((work, Decision::deny(DenyReason::ContextFailed)));
        }
    }

    let policy_limits = policy.limits.iter().filter(|l| l.activity == request.activity);
    for limit in rule.limits.iter().chain(policy_limits) {
        let key = crate::model::CounterKey {
            scope: limit.scope,
            activity: limit.activity.clone(),
            subject_or_object: match limit.scope {
                crate::model::CounterScope::PerSource => Some(request.subject.clone()),
                crate::model::CounterScope::PerObject => Some(request.object.clone()),
                crate::model::CounterScope::SystemWide => None,
            },
        };
        if work.count_in_window(&key, limit.window) >= limit.max_count as usize {
            return Ok((work, Decision::deny(DenyReason::LimitExceeded)));
        }
    }

    if !request.activity.is_inactive() {
        if let Err(reason) = check_request(&work, policy, &request.object, &request.activity) {
            return Ok((work, Decision::deny(reason)));
        }
    }

    let mut committed = work.clone();
    let output = match commit_request(&mut committed, policy, rule, request) {
        Ok(output) => output,
        Err(()) => return Ok((work, Decision::deny(DenyReason::ObligationFailed))),
    };
    let revoked = continuity_sweep(&mut committed, policy);

    Ok((
        committed,
        Decision {
            outcome: Outcome::Permit,
            reason: None,
            matched_rule: Some(rule_index),
            executed_obligations: output.records,
            preempted: output.preempted,
            revoked,
        },
    ))
}

/// Applies a scenario event at the given time: an env update mutates the
/// environment then runs the continuity sweep; a start runs the full
/// request pipeline as the EVENT subject; a stop archives the instance as
/// completed, fires deferred dependence triggers, and sweeps.
pub fn apply_event(
    state: &EcosystemState,
    policy: &PolicySet,
    time: Timestamp,
    event: &EcosystemEvent,
) -> Result<(EcosystemState, EventEffect), EngineError> {
    match event {
        EcosystemEvent::EnvSet { name, value } => {
            let mut work = advanced(state, time)?;
            work.environment.insert(name.clone(), value.clone());
            let revoked = continuity_sweep(&mut work, policy);
            Ok((work, EventEffect { decision: None, revoked }))
        }
        EcosystemEvent::Start { object, activity } => {
            let request = Request {
                subject: EntityId::event(),
                op: EntityId::new("EVENT"),
                object: object.clone(),
                activity: activity.clone(),
                time,
            };
            let (next, decision) = decide_and_commit(state, policy, &request)?;
            Ok((
                next,
                EventEffect {
                    decision: Some(decision),
                    revoked: Vec::new(),
                },
            ))
        }
        EcosystemEvent::Stop { object, activity } => {
            let mut work = advanced(state, time)?;
            work.stop_in_place(object, activity, StopMode::Completed, None)
                .map_err(|_| EngineError::StopNotLive {
                    device: object.clone(),
                    activity: activity.clone(),
                })?;
            fire_completion_triggers(&mut work, policy, object, activity);
            let revoked = continuity_sweep(&mut work, policy);
            Ok((work, EventEffect { decision: None, revoked }))
        }
    }
}

/// Advances the clock with no event, re-running the continuity sweep so
/// time-dependent conditions are re-checked. Returns revoked instances.
pub fn advance_time(
    state: &EcosystemState,
    policy: &PolicySet,
    to: Timestamp,
) -> Result<(EcosystemState, Vec<(EntityId, EntityId)>), EngineError> {
    let mut work = advanced(state, to)?;
    let revoked = continuity_sweep(&mut work, policy);
    Ok((work, revoked))
}

fn advanced(state: &EcosystemState, to: Timestamp) -> Result<EcosystemState, EngineError> {
    if to < state.clock {
        return Err(EngineError::TimeRegression {
            clock: state.clock,
            requested: to,
        });
    }
    let mut work = state.clone();
    work.advance_clock_in_place(to).expect("time checked");
    Ok(work)
}

struct CommitOutput {
    records: Vec<ObligationRecord>,
    preempted: Vec<(EntityId, EntityId, PreemptKind)>,
}

/// Runs step 8 on `work`. `Err(())` means some obligation (explicit or
/// relation-implied) failed its precondition; the caller discards `work`.
fn commit_request(
    work: &mut EcosystemState,
    policy: &PolicySet,
    rule: &ActivityRule,
    request: &Request,
) -> Result<CommitOutput, ()> {
    let mut records = Vec::new();
    let mut preempted = Vec::new();

    if !request.activity.is_inactive() {
        // a duplicate of an already-live instance fails the commit like any
        // other violated precondition
        work.start_in_place(&request.object, &request.activity, &request.subject)
            .map_err(|_| ())?;
    }

    for ob in &rule.obligations {
        apply_obligation(work, policy, ob, &request.subject, &mut records)?;
    }

    // obligations attached to conditional relations fire when the guarded
    // co-occurrence actually happens
    for rel in &policy.relations {
        if let RelationDetail::Conditional { obligations } = &rel.detail {
            let Some(partner) = rel.partner_of(&request.activity) else {
                continue;
            };
            if forbids_now(work, rel) {
                continue;
            }
            if co_occurring_active(work, &request.object, &request.activity, partner, rel.scope)
                .is_some()
            {
                for ob in obligations {
                    apply_obligation(work, policy, ob, &request.subject, &mut records)?;
                }
            }
        }
    }

    for rel in &policy.relations {
        let RelationDetail::Precedence { winner, loser } = &rel.detail else {
            continue;
        };
        if *winner != request.activity {
            continue;
        }
        let Some(loser_activity) = rel.partner_of(winner) else {
            continue;
        };
        if !guard_holds(work, rel) {
            continue;
        }
        for device in preemption_targets(work, rel, &request.object, loser_activity) {
            match loser {
                LoserAction::Halt { .. } => {
                    work.set_status_in_place(&device, loser_activity, ActivityStatus::Halted)
                        .map_err(|_| ())?;
                    preempted.push((device, loser_activity.clone(), PreemptKind::Halted));
                }
                LoserAction::Aborted => {
                    work.stop_in_place(&device, loser_activity, StopMode::Aborted, None)
                        .map_err(|_| ())?;
                    preempted.push((device, loser_activity.clone(), PreemptKind::Aborted));
                }
            }
        }
    }

    auto_start_partners(work, policy, request, &mut records)?;

    Ok(CommitOutput { records, preempted })
}

/// Concurrent-must partners and parallel dependence targets are started
/// implicitly, attributed to the requesting subject, and chained (a started
/// partner brings in its own partners). Failure to find an eligible device
/// fails the commit.
fn auto_start_partners(
    work: &mut EcosystemState,
    policy: &PolicySet,
    request: &Request,
    records: &mut Vec<ObligationRecord>,
) -> Result<(), ()> {
    let mut pending = vec![(request.object.clone(), request.activity.clone())];
    while let Some((anchor_device, anchor_activity)) = pending.pop() {
        if anchor_activity.is_inactive() {
            continue;
        }
        for rel in &policy.relations {
            let partner = match &rel.detail {
                RelationDetail::Concurrent { must: true } => rel.partner_of(&anchor_activity),
                RelationDetail::DependenceStarts { after: false } if rel.a == anchor_activity => {
                    Some(&rel.b)
                }
                _ => None,
            };
            let Some(partner) = partner.cloned() else {
                continue;
            };
            if !guard_holds(work, rel) {
                continue;
            }
            if co_occurring_active(work, &anchor_device, &anchor_activity, &partner, rel.scope)
                .is_some()
            {
                continue;
            }
            let target = pick_auto_start_device(work, policy, &anchor_device, &partner, rel.scope)
                .ok_or(())?;
            work.start_in_place(&target, &partner, &request.subject).map_err(|_| ())?;
            records.push(ObligationRecord {
                kind: ObligationKind::Start,
                activity: partner.clone(),
                device: target.clone(),
            });
            pending.push((target, partner));
        }
    }
    Ok(())
}

/// A device eligible to host an auto-started partner: scope-compatible with
/// the anchor, capable per some rule head, idle for that activity, and not
/// violating any forbidding relation. Devices are considered in id order.
fn pick_auto_start_device(
    work: &EcosystemState,
    policy: &PolicySet,
    anchor: &EntityId,
    activity: &EntityId,
    scope: crate::ast::DeviceScope,
) -> Option<EntityId> {
    let anchor_device = work.devices.get(anchor)?;
    for device in work.devices.values() {
        if !scope.covers(anchor_device, device) {
            continue;
        }
        if work.live_instance(&device.id, activity).is_some() {
            continue;
        }
        let capable = policy
            .rules
            .iter()
            .any(|r| r.activity == *activity && r.object.matches_device(device));
        if !capable {
            continue;
        }
        if start_violates_forbid(work, policy, &device.id, activity).is_some() {
            continue;
        }
        return Some(device.id.clone());
    }
    None
}

fn guard_holds(state: &EcosystemState, rel: &crate::ast::RelationDecl) -> bool {
    match &rel.guard {
        Some(g) => eval_guard_or(state, g, false),
        None => true,
    }
}

/// Applies one obligation, attributed to `subject`. Stop/halt/resume apply
/// to every live instance matching (activity, object pattern) and require at
/// least one; start requires that none exists and starts the activity on
/// every matching, non-violating device.
fn apply_obligation(
    work: &mut EcosystemState,
    policy: &PolicySet,
    ob: &ObligationAction,
    subject: &EntityId,
    records: &mut Vec<ObligationRecord>,
) -> Result<(), ()> {
    let matching_live: Vec<(EntityId, ActivityStatus)> = work
        .live
        .iter()
        .filter(|i| i.activity == ob.activity)
        .filter(|i| {
            work.devices
                .get(&i.device)
                .map(|d| ob.object.matches_device(d))
                .unwrap_or(false)
        })
        .map(|i| (i.device.clone(), i.status))
        .collect();

    match ob.kind {
        ObligationKind::Start => {
            if !matching_live.is_empty() {
                return Err(());
            }
            let devices: Vec<EntityId> = work
                .devices
                .values()
                .filter(|d| ob.object.matches_device(d))
                .map(|d| d.id.clone())
                .collect();
            if devices.is_empty() {
                return Err(());
            }
            for device in devices {
                if start_violates_forbid(work, policy, &device, &ob.activity).is_some() {
                    return Err(());
                }
                work.start_in_place(&device, &ob.activity, subject).map_err(|_| ())?;
                records.push(ObligationRecord {
                    kind: ob.kind,
                    activity: ob.activity.clone(),
                    device,
                });
            }
        }
        ObligationKind::Stop => {
            if matching_live.is_empty() {
                return Err(());
            }
            for (device, _) in matching_live {
                // attribution moves to the subject that forced the stop
                work.stop_in_place(&device, &ob.activity, StopMode::Aborted, Some(subject))
                    .map_err(|_| ())?;
                records.push(ObligationRecord {
                    kind: ob.kind,
                    activity: ob.activity.clone(),
                    device,
                });
            }
        }
        ObligationKind::Halt => {
            let active: Vec<EntityId> = matching_live
                .iter()
                .filter(|(_, s)| *s == ActivityStatus::Active)
                .map(|(d, _)| d.clone())
                .collect();
            if active.is_empty() {
                return Err(());
            }
            for device in active {
                work.set_status_in_place(&device, &ob.activity, ActivityStatus::Halted)
                    .map_err(|_| ())?;
                records.push(ObligationRecord {
                    kind: ob.kind,
                    activity: ob.activity.clone(),
                    device,
                });
            }
        }
        ObligationKind::Resume => {
            let halted: Vec<EntityId> = matching_live
                .iter()
                .filter(|(_, s)| *s == ActivityStatus::Halted)
                .map(|(d, _)| d.clone())
                .collect();
            if halted.is_empty() {
                return Err(());
            }
            for device in halted {
                if start_violates_forbid(work, policy, &device, &ob.activity).is_some() {
                    return Err(());
                }
                work.set_status_in_place(&device, &ob.activity, ActivityStatus::Active)
                    .map_err(|_| ())?;
                records.push(ObligationRecord {
                    kind: ob.kind,
                    activity: ob.activity.clone(),
                    device,
                });
            }
        }
    }
    Ok(())
}

/// Deferred dependence triggers: when `activity` completes on `device`,
/// start the dependent activities declared with `mode=after`. Best effort —
/// the completion stands even when no eligible device remains.
fn fire_completion_triggers(
    work: &mut EcosystemState,
    policy: &PolicySet,
    device: &EntityId,
    activity: &EntityId,
) {
    for rel in &policy.relations {
        let RelationDetail::DependenceStarts { after: true } = &rel.detail else {
            continue;
        };
        if rel.a != *activity || !guard_holds(work, rel) {
            continue;
        }
        if co_occurring_active(work, device, activity, &rel.b, rel.scope).is_some() {
            continue;
        }
        if let Some(target) = pick_auto_start_device(work, policy, device, &rel.b, rel.scope) {
            let _ = work.start_in_place(&target, &rel.b, &EntityId::event());
        }
    }
}

/// The rule that governs a running instance for continuity purposes: first
/// rule whose activity equals the instance's, whose object pattern matches
/// the device, and whose source pattern matches the initiator.
fn governing_rule<'p>(
    policy: &'p PolicySet,
    state: &EcosystemState,
    inst: &ActivityInstance,
) -> Option<&'p ActivityRule> {
    policy.rules.iter().find(|rule| {
        rule.activity == inst.activity
            && state
                .devices
                .get(&inst.device)
                .map(|d| rule.object.matches_device(d))
                .unwrap_or(false)
            && state
                .subjects
                .get(&inst.initiator)
                .map(|s| rule.source.matches_subject(s, &state.devices))
                .unwrap_or(false)
    })
}

/// Step 9: re-evaluates every live instance against continuity-flagged rule
/// blocks and against the declared relations, aborting violators, and
/// resumes halted precedence losers whose blocker has ended. Runs to a
/// fixpoint; returns the aborted (device, activity) pairs in order.
fn continuity_sweep(work: &mut EcosystemState, policy: &PolicySet) -> Vec<(EntityId, EntityId)> {
    let mut revoked = Vec::new();
    let max_rounds = 2 * work.live.len() + 2;
    for _ in 0..max_rounds {
        let mut changed = false;
        let mut victims: Vec<(EntityId, EntityId)> = Vec::new();
        let condemn = |device: &EntityId, activity: &EntityId, victims: &mut Vec<(EntityId, EntityId)>| {
            let key = (device.clone(), activity.clone());
            if !victims.contains(&key) {
                victims.push(key);
            }
        };

        let actives: Vec<ActivityInstance> = work
            .live
            .iter()
            .filter(|i| i.status == ActivityStatus::Active)
            .cloned()
            .collect();

        // continuity-flagged rule blocks; evaluation errors revoke
        for inst in &actives {
            let Some(rule) = governing_rule(policy, work, inst) else {
                continue;
            };
            let mut ok = true;
            if rule.cur_continuous {
                if let Some(cur) = &rule.cur {
                    ok = eval_cond(work, cur, Phase::Current).unwrap_or(false);
                }
            }
            if ok && rule.when_continuous {
                if let Some(when) = &rule.when {
                    ok = eval_context(work, when).unwrap_or(false);
                }
            }
            if !ok {
                condemn(&inst.device, &inst.activity, &mut victims);
            }
        }

        for rel in &policy.relations {
            match &rel.detail {
                // forbidden co-occurrence (guard lapsed or plain incompatible):
                // the younger instance of the pair goes
                RelationDetail::Incompatible
                | RelationDetail::Temporary
                | RelationDetail::Conditional { .. } => {
                    if !forbids_now(work, rel) {
                        continue;
                    }
                    for i in actives.iter().filter(|i| i.activity == rel.a) {
                        for j in actives.iter().filter(|j| j.activity == rel.b) {
                            if i.device == j.device && i.activity == j.activity {
                                continue;
                            }
                            let covered = match (work.devices.get(&i.device), work.devices.get(&j.device)) {
                                (Some(di), Some(dj)) => rel.scope.covers(di, dj),
                                _ => false,
                            };
                            if covered {
                                let victim = younger(i, j);
                                condemn(&victim.device, &victim.activity, &mut victims);
                            }
                        }
                    }
                }
                RelationDetail::DependenceRequires => {
                    if !guard_holds(work, rel) {
                        continue;
                    }
                    for i in actives.iter().filter(|i| i.activity == rel.a) {
                        if co_occurring_active(work, &i.device, &i.activity, &rel.b, rel.scope)
                            .is_none()
                        {
                            condemn(&i.device, &i.activity, &mut victims);
                        }
                    }
                }
                RelationDetail::Concurrent { must: true } => {
                    if !guard_holds(work, rel) {
                        continue;
                    }
                    for i in actives.iter().filter(|i| rel.involves(&i.activity)) {
                        let partner = rel.partner_of(&i.activity).expect("involved");
                        if co_occurring_active(work, &i.device, &i.activity, partner, rel.scope)
                            .is_none()
                        {
                            condemn(&i.device, &i.activity, &mut victims);
                        }
                    }
                }
                _ => {}
            }
        }

        for (device, activity) in victims {
            let still_active = work
                .live_instance(&device, &activity)
                .map(|i| i.status == ActivityStatus::Active)
                .unwrap_or(false);
            if still_active {
                work.stop_in_place(&device, &activity, StopMode::Aborted, None)
                    .expect("instance is live");
                revoked.push((device, activity));
                changed = true;
            }
        }

        // resume halted precedence losers whose blockers have all ended,
        // unless resuming would immediately violate something
        let halted: Vec<ActivityInstance> = work
            .live
            .iter()
            .filter(|i| i.status == ActivityStatus::Halted)
            .cloned()
            .collect();
        for inst in halted {
            let as_loser: Vec<&crate::ast::RelationDecl> = policy
                .relations
                .iter()
                .filter(|rel| {
                    matches!(rel.detail, RelationDetail::Precedence { ref winner, .. } if rel.partner_of(winner) == Some(&inst.activity))
                })
                .collect();
            if as_loser.is_empty() {
                continue; // halted by an explicit obligation; stays until resumed
            }
            let resumable = as_loser.iter().any(|rel| {
                matches!(
                    rel.detail,
                    RelationDetail::Precedence { loser: LoserAction::Halt { resume: true }, .. }
                )
            });
            if !resumable {
                continue;
            }
            let blocked = as_loser.iter().any(|rel| {
                let RelationDetail::Precedence { winner, .. } = &rel.detail else {
                    return false;
                };
                guard_holds(work, rel) && winner_active(work, rel, &inst.device, winner)
            });
            if blocked {
                continue;
            }
            if start_violates_forbid(work, policy, &inst.device, &inst.activity).is_some() {
                continue;
            }
            if let Some(rule) = governing_rule(policy, work, &inst) {
                let mut ok = true;
                if rule.cur_continuous {
                    if let Some(cur) = &rule.cur {
                        ok = eval_cond(work, cur, Phase::Current).unwrap_or(false);
                    }
                }
                if ok && rule.when_continuous {
                    if let Some(when) = &rule.when {
                        ok = eval_context(work, when).unwrap_or(false);
                    }
                }
                if !ok {
                    continue;
                }
            }
            work.set_status_in_place(&inst.device, &inst.activity, ActivityStatus::Active)
                .expect("instance is halted");
            changed = true;
        }

        if !changed {
            break;
        }
    }
    revoked
}

/// The more recently started of a violating pair; ties go to the larger
/// (device, activity) name so the choice is deterministic.
fn younger<'a>(i: &'a ActivityInstance, j: &'a ActivityInstance) -> &'a ActivityInstance {
    match i.start_time.cmp(&j.start_time) {
        std::cmp::Ordering::Less => j,
        std::cmp::Ordering::Greater => i,
        std::cmp::Ordering::Equal => {
            if (&i.device, &i.activity) >= (&j.device, &j.activity) {
                i
            } else {
                j
            }
        }
    }
}
