//! Evaluation of state-condition and contextual-condition trees against an
//! ecosystem state. Pure reads; every atom yields true/false or a typed
//! evaluation error (missing attribute, cross-kind comparison).

use thiserror::Error;

use crate::ast::{CmpOp, CondAtom, CondExpr, ContextAtom, ContextExpr, StateAtom};
use crate::model::{
    ActivityQuery, ActivityStatus, AttributeValue, EcosystemState, Pattern, Phase, DAY_SECS,
};

use crate::ast::ActivityRef;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("environment attribute `{0}` is not set")]
    MissingAttribute(String),
    #[error("cannot compare {left} {op} {right}")]
    KindMismatch {
        left: &'static str,
        op: &'static str,
        right: &'static str,
    },
    #[error("{op} is not defined for {kind} values")]
    UnorderedKind { op: &'static str, kind: &'static str },
}

/// Evaluates a `pre`/`cur` block. `phase` selects which instances state
/// atoms range over; context atoms ignore it.
pub fn eval_cond(state: &EcosystemState, expr: &CondExpr, phase: Phase) -> Result<bool, EvalError> {
    expr.eval(&mut |atom| match atom {
        CondAtom::State(s) => Ok(eval_state_atom(state, s, phase)),
        CondAtom::Context(c) => eval_context_atom(state, c),
    })
}

pub fn eval_context(state: &EcosystemState, expr: &ContextExpr) -> Result<bool, EvalError> {
    expr.eval(&mut |atom| eval_context_atom(state, atom))
}

/// Guard evaluation for relations: an error counts as the fail-safe value
/// supplied by the caller.
pub fn eval_guard_or(state: &EcosystemState, guard: &ContextExpr, on_error: bool) -> bool {
    eval_context(state, guard).unwrap_or(on_error)
}

fn eval_state_atom(state: &EcosystemState, atom: &StateAtom, phase: Phase) -> bool {
    let query = match &atom.activity {
        ActivityRef::Named(id) => ActivityQuery::Named(id.clone()),
        ActivityRef::Inactive => ActivityQuery::Inactive,
    };
    let hits = state.query_state(phase, &query, &atom.object, &atom.source, atom.window);
    match phase {
        Phase::Current => !hits.is_empty(),
        // past conditions speak of activities that ran their course;
        // an aborted run does not satisfy them
        Phase::Past => hits.iter().any(|i| i.status == ActivityStatus::Completed),
    }
}

fn eval_context_atom(state: &EcosystemState, atom: &ContextAtom) -> Result<bool, EvalError> {
    match atom {
        ContextAtom::ValueCmp { name, op, literal } => {
            let value = state
                .environment
                .get(name)
                .ok_or_else(|| EvalError::MissingAttribute(name.clone()))?;
            compare(value, *op, literal)
        }
        ContextAtom::LocationCmp { object, eq, location } => {
            let mut any = false;
            for device in state.devices.values() {
                if !object.matches_device(device) {
                    continue;
                }
                any = true;
                match &device.location {
                    Some(loc) if (loc == location) == *eq => {}
                    // unknown location never satisfies either comparison
                    _ => return Ok(false),
                }
            }
            Ok(any)
        }
        ContextAtom::Rel { name, subject, target } => {
            for s in state.subjects.values() {
                if !subject.matches_subject(s, &state.devices) {
                    continue;
                }
                for (rel_name, rel_target) in &s.relations {
                    if rel_name == name && target_matches(state, target, rel_target) {
                        return Ok(true);
                    }
                }
            }
            Ok(false)
        }
        ContextAtom::TimeIn { start, end } => {
            let sod = state.clock % DAY_SECS;
            Ok(if start <= end {
                sod >= *start && sod < *end
            } else {
                // wraps past midnight
                sod >= *start || sod < *end
            })
        }
    }
}

/// Relation targets may name devices or subjects; fall back to plain id
/// matching for labels that are neither.
fn target_matches(state: &EcosystemState, pattern: &Pattern, target: &crate::model::EntityId) -> bool {
    if let Some(device) = state.devices.get(target) {
        return pattern.matches_device(device);
    }
    if let Some(subject) = state.subjects.get(target) {
        return pattern.matches_subject(subject, &state.devices);
    }
    match pattern {
        Pattern::Id(id) => id == target,
        Pattern::Any => true,
        _ => false,
    }
}

fn compare(left: &AttributeValue, op: CmpOp, right: &AttributeValue) -> Result<bool, EvalError> {
    use AttributeValue::*;
    match (left, right) {
        (Number(a), Number(b)) => Ok(match op {
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }),
        (Text(a), Text(b)) => match op {
            CmpOp::Eq => Ok(a == b),
            CmpOp::Ne => Ok(a != b),
            CmpOp::Lt | CmpOp::Gt => Err(EvalError::UnorderedKind {
                op: op.as_str(),
                kind: "string",
            }),
        },
        (Flag(a), Flag(b)) => match op {
            CmpOp::Eq => Ok(a == b),
            CmpOp::Ne => Ok(a != b),
            CmpOp::Lt | CmpOp::Gt => Err(EvalError::UnorderedKind {
                op: op.as_str(),
                kind: "boolean",
            }),
        },
        _ => Err(EvalError::KindMismatch {
            left: left.kind(),
            op: op.as_str(),
            right: right.kind(),
        }),
    }
}
