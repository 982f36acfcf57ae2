//! Relation enforcement: pre-commit checks against the hypothetical state
//! where the requested activity is already running, plus the co-occurrence
//! scan reused by the continuity sweep and by engine-initiated starts.

use crate::ast::{DeviceScope, PolicySet, RelationDecl, RelationDetail};
use crate::engine::eval::eval_guard_or;
use crate::engine::DenyReason;
use crate::model::{ActivityStatus, EcosystemState, EntityId, Timestamp};

/// Is co-occurrence of this relation's pair currently forbidden?
/// Incompatible pairs always are (a guard, when present, gates enforcement);
/// temporary and conditional pairs are forbidden unless their guard holds.
/// Guard evaluation errors fall toward the safe side.
pub(crate) fn forbids_now(state: &EcosystemState, rel: &RelationDecl) -> bool {
    match &rel.detail {
        RelationDetail::Incompatible => match &rel.guard {
            Some(g) => eval_guard_or(state, g, true),
            None => true,
        },
        RelationDetail::Temporary | RelationDetail::Conditional { .. } => match &rel.guard {
            Some(g) => !eval_guard_or(state, g, false),
            // a guard is required by validation; enforce if it is missing
            None => true,
        },
        _ => false,
    }
}

/// Non-guard relations (ordered, precedence, dependence, concurrent) are
/// enforced only while their optional guard holds.
fn enforced_now(state: &EcosystemState, rel: &RelationDecl) -> bool {
    match &rel.guard {
        Some(g) => eval_guard_or(state, g, true),
        None => true,
    }
}

fn scope_covers(state: &EcosystemState, scope: DeviceScope, a: &EntityId, b: &EntityId) -> bool {
    match (state.devices.get(a), state.devices.get(b)) {
        (Some(da), Some(db)) => scope.covers(da, db),
        _ => false,
    }
}

/// An active instance of `activity` whose device pairs with `device` under
/// `scope`. The instance at (device, activity) itself is ignored so that a
/// self-incompatibility (same activity, different devices) does not trip on
/// the hypothetical instance.
pub(crate) fn co_occurring_active(
    state: &EcosystemState,
    device: &EntityId,
    exclude_activity: &EntityId,
    partner: &EntityId,
    scope: DeviceScope,
) -> Option<(EntityId, EntityId)> {
    state
        .live
        .iter()
        .filter(|i| i.status == ActivityStatus::Active)
        .filter(|i| i.activity == *partner)
        .filter(|i| !(i.device == *device && i.activity == *exclude_activity))
        .find(|i| scope_covers(state, scope, device, &i.device))
        .map(|i| (i.device.clone(), i.activity.clone()))
}

/// A finished instance of `partner` whose trailing window still covers `now`:
/// `end_time > now - window` (the pair becomes startable again exactly at
/// `end_time + window`).
fn finished_within_window(
    state: &EcosystemState,
    device: &EntityId,
    partner: &EntityId,
    scope: DeviceScope,
    window: u64,
    now: Timestamp,
) -> bool {
    let floor = now as i128 - window as i128;
    state
        .history
        .iter()
        .filter(|i| i.activity == *partner)
        .filter(|i| scope_covers(state, scope, device, &i.device))
        .any(|i| i.end_time.map(|e| (e as i128) > floor).unwrap_or(false))
}

/// Would starting `activity` on `device` violate a forbidding relation
/// (incompatible, or temporary/conditional with the guard not held)?
/// Used both for requested starts and for engine-initiated ones.
pub(crate) fn start_violates_forbid(
    state: &EcosystemState,
    policy: &PolicySet,
    device: &EntityId,
    activity: &EntityId,
) -> Option<String> {
    for rel in &policy.relations {
        let Some(partner) = rel.partner_of(activity) else {
            continue;
        };
        if !forbids_now(state, rel) {
            continue;
        }
        if co_occurring_active(state, device, activity, partner, rel.scope).is_some() {
            return Some(rel.names());
        }
        // conditional pairs gate live co-occurrence only; incompatible and
        // temporary pairs also carry the trailing window
        if !matches!(rel.detail, RelationDetail::Conditional { .. }) {
            if let Some(w) = rel.window {
                if finished_within_window(state, device, partner, rel.scope, w, state.clock) {
                    return Some(rel.names());
                }
            }
        }
    }
    None
}

/// Full pre-commit relation check for a requested start (pipeline step
/// before commit). `state` has the clock already advanced to the request
/// time; the requested instance is treated as hypothetically active.
pub(crate) fn check_request(
    state: &EcosystemState,
    policy: &PolicySet,
    device: &EntityId,
    activity: &EntityId,
) -> Result<(), DenyReason> {
    if start_violates_forbid(state, policy, device, activity).is_some() {
        return Err(DenyReason::RelationIncompatible);
    }
    for rel in &policy.relations {
        let Some(partner) = rel.partner_of(activity) else {
            continue;
        };
        if !enforced_now(state, rel) {
            continue;
        }
        match &rel.detail {
            RelationDetail::Ordered { first } => {
                // only the non-first side is constrained
                if activity == first {
                    continue;
                }
                if !ordered_prerequisite_met(state, rel, device, first) {
                    return Err(DenyReason::RelationOrdered);
                }
            }
            RelationDetail::Precedence { winner, .. } => {
                if activity == winner {
                    continue;
                }
                if co_occurring_active(state, device, activity, winner, rel.scope).is_some() {
                    return Err(DenyReason::RelationPrecedence);
                }
            }
            RelationDetail::DependenceRequires => {
                // directional: a requires b
                if *activity != rel.a {
                    continue;
                }
                if co_occurring_active(state, device, activity, partner, rel.scope).is_none() {
                    return Err(DenyReason::RelationDependence);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Ordered prerequisite: an instance of `first` that is live (initiated and
/// not yet gone) or completed, on a device the scope pairs with `device`.
/// A declared window requires the completed evidence to be fresh.
fn ordered_prerequisite_met(
    state: &EcosystemState,
    rel: &RelationDecl,
    device: &EntityId,
    first: &EntityId,
) -> bool {
    let live_ok = state
        .live
        .iter()
        .filter(|i| i.activity == *first)
        .any(|i| scope_covers(state, rel.scope, device, &i.device));
    if live_ok {
        return true;
    }
    let floor = rel
        .window
        .map(|w| state.clock as i128 - w as i128)
        .unwrap_or(i128::MIN);
    state
        .history
        .iter()
        .filter(|i| i.status == ActivityStatus::Completed && i.activity == *first)
        .filter(|i| scope_covers(state, rel.scope, device, &i.device))
        .any(|i| i.end_time.map(|e| (e as i128) > floor).unwrap_or(false))
}

/// Active instances of `loser` that an incoming `winner` start preempts.
pub(crate) fn preemption_targets(
    state: &EcosystemState,
    rel: &RelationDecl,
    winner_device: &EntityId,
    loser: &EntityId,
) -> Vec<EntityId> {
    state
        .live
        .iter()
        .filter(|i| i.status == ActivityStatus::Active && i.activity == *loser)
        .filter(|i| scope_covers(state, rel.scope, winner_device, &i.device))
        .map(|i| i.device.clone())
        .collect()
}

/// Is some active winner instance blocking a halted loser on `device`?
pub(crate) fn winner_active(
    state: &EcosystemState,
    rel: &RelationDecl,
    loser_device: &EntityId,
    winner: &EntityId,
) -> bool {
    state
        .live
        .iter()
        .filter(|i| i.status == ActivityStatus::Active && i.activity == *winner)
        .any(|i| scope_covers(state, rel.scope, loser_device, &i.device))
}
