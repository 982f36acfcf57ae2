//! Policy representation: activity control rules, inter-activity relation
//! declarations, usage limits, and whole-policy validation.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{
    AttributeValue, CounterScope, DeviceObject, DurationSecs, EcosystemState, EntityId, Subject,
};

pub use crate::model::Pattern;

/// Boolean expression tree. Precedence when printed/parsed: `!` > `and` > `or`.
#[derive(Debug, Clone, PartialEq)]
pub enum BoolExpr<A> {
    Atom(A),
    Not(Box<BoolExpr<A>>),
    And(Box<BoolExpr<A>>, Box<BoolExpr<A>>),
    Or(Box<BoolExpr<A>>, Box<BoolExpr<A>>),
}

impl<A> BoolExpr<A> {
    pub fn atoms(&self) -> Vec<&A> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a A>) {
        match self {
            BoolExpr::Atom(a) => out.push(a),
            BoolExpr::Not(e) => e.collect_atoms(out),
            BoolExpr::And(l, r) | BoolExpr::Or(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
        }
    }

    /// Evaluates the tree given a (fallible) atom valuation.
    pub fn eval<E>(&self, f: &mut impl FnMut(&A) -> Result<bool, E>) -> Result<bool, E> {
        match self {
            BoolExpr::Atom(a) => f(a),
            BoolExpr::Not(e) => Ok(!e.eval(f)?),
            BoolExpr::And(l, r) => Ok(l.eval(f)? && r.eval(f)?),
            BoolExpr::Or(l, r) => Ok(l.eval(f)? || r.eval(f)?),
        }
    }
}

/// Activity named by a state atom: a concrete activity or the reserved
/// `inactive` pseudo-activity.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivityRef {
    Named(EntityId),
    Inactive,
}

impl fmt::Display for ActivityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivityRef::Named(id) => write!(f, "{}", id),
            ActivityRef::Inactive => f.write_str("inactive"),
        }
    }
}

/// One state condition: does a matching instance exist (in the block's
/// phase)? `window` is only meaningful in `pre` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StateAtom {
    pub activity: ActivityRef,
    pub object: Pattern,
    pub source: Pattern,
    pub window: Option<DurationSecs>,
}

/// Comparison operator for contextual value checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Gt,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }
}

/// Atoms of contextual conditions: environment value comparisons, device
/// location checks, subject relationship checks, and time-of-day windows.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextAtom {
    /// `value(<name>) <op> <literal>` against the environment map.
    ValueCmp {
        name: String,
        op: CmpOp,
        literal: AttributeValue,
    },
    /// `location(<pattern>) =|!= <id>`: every matching device satisfies the
    /// comparison; false when nothing matches or a device has no location.
    LocationCmp {
        object: Pattern,
        eq: bool,
        location: EntityId,
    },
    /// `rel(<name>, <subject-pattern>, <target-pattern>)`: some declared
    /// subject matching the pattern holds the named relation to a matching
    /// target.
    Rel {
        name: String,
        subject: Pattern,
        target: Pattern,
    },
    /// `time_in <start>..<end>` over seconds-of-day (clock mod 86400),
    /// half-open, wrapping past midnight when start > end.
    TimeIn { start: DurationSecs, end: DurationSecs },
}

/// Atom of a rule `pre`/`cur` block: a state condition or, where a single
/// tree must mix both (disjunctions over state and context), a context atom.
#[derive(Debug, Clone, PartialEq)]
pub enum CondAtom {
    State(StateAtom),
    Context(ContextAtom),
}

pub type CondExpr = BoolExpr<CondAtom>;
pub type ContextExpr = BoolExpr<ContextAtom>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObligationKind {
    Start,
    Stop,
    Halt,
    Resume,
}

impl ObligationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObligationKind::Start => "start",
            ObligationKind::Stop => "stop",
            ObligationKind::Halt => "halt",
            ObligationKind::Resume => "resume",
        }
    }
}

/// An action the engine executes as a consequence of a permit, attributed to
/// the requesting subject. Stop/halt/resume apply to every matching live
/// instance and require at least one; start requires that none exists.
#[derive(Debug, Clone, PartialEq)]
pub struct ObligationAction {
    pub kind: ObligationKind,
    pub activity: EntityId,
    pub object: Pattern,
}

impl fmt::Display for ObligationAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}({})", self.kind.as_str(), self.activity, self.object)
    }
}

/// Cap on activations of an activity within a sliding window.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageLimit {
    pub scope: CounterScope,
    pub activity: EntityId,
    pub max_count: u32,
    pub window: DurationSecs,
}

/// One generalized activity control expression.
///
/// A request is permitted by this rule iff the head matches (op, source,
/// object, activity all match), the `pre` tree holds over past instances,
/// the `cur` tree holds over current instances, the `when` context holds,
/// no usage limit is exhausted, and no declared relation objects. The
/// `*_continuous` flags opt the corresponding block into re-evaluation while
/// the permitted activity runs (continuity; violators are revoked).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRule {
    pub object: Pattern,
    pub op: EntityId,
    pub source: Pattern,
    pub activity: EntityId,
    pub pre: Option<CondExpr>,
    pub cur: Option<CondExpr>,
    pub cur_continuous: bool,
    pub obligations: Vec<ObligationAction>,
    pub when: Option<ContextExpr>,
    pub when_continuous: bool,
    pub limits: Vec<UsageLimit>,
}

impl ActivityRule {
    /// Canonical one-line head, used in validation messages.
    pub fn head_text(&self) -> String {
        format!(
            "rule on {} allow {} by {} as {}",
            self.object, self.op, self.source, self.activity
        )
    }

    /// Head match: op and activity equal, object pattern selects the device,
    /// source pattern selects the subject.
    pub fn matches(
        &self,
        subject: &EntityId,
        op: &EntityId,
        object: &EntityId,
        activity: &EntityId,
        state: &EcosystemState,
    ) -> bool {
        if self.op != *op || self.activity != *activity {
            return false;
        }
        let device_ok = match state.devices.get(object) {
            Some(d) => self.object.matches_device(d),
            None => false,
        };
        let subject_ok = match state.subjects.get(subject) {
            Some(s) => self.source.matches_subject(s, &state.devices),
            None => false,
        };
        device_ok && subject_ok
    }
}

/// The seven inter-activity relation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    Ordered,
    Concurrent,
    Temporary,
    Precedence,
    Dependence,
    Conditional,
    Incompatible,
}

impl RelationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Ordered => "ordered",
            RelationKind::Concurrent => "concurrent",
            RelationKind::Temporary => "temporary",
            RelationKind::Precedence => "precedence",
            RelationKind::Dependence => "dependence",
            RelationKind::Conditional => "conditional",
            RelationKind::Incompatible => "incompatible",
        }
    }
}

/// Which device pairings a relation constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceScope {
    Same,
    Different,
    Any,
    /// Both devices share a declared location.
    SameLocation,
}

impl DeviceScope {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceScope::Same => "same",
            DeviceScope::Different => "different",
            DeviceScope::Any => "any",
            DeviceScope::SameLocation => "same-location",
        }
    }

    /// Does the pairing (device of the first activity, device of the second)
    /// fall under this scope?
    pub fn covers(self, a: &DeviceObject, b: &DeviceObject) -> bool {
        match self {
            DeviceScope::Same => a.id == b.id,
            DeviceScope::Different => a.id != b.id,
            DeviceScope::Any => true,
            DeviceScope::SameLocation => match (&a.location, &b.location) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            },
        }
    }
}

/// What happens to a preempted activity when a precedence winner starts.
#[derive(Debug, Clone, PartialEq)]
pub enum LoserAction {
    /// Suspended; with `resume`, restarted once no winner is active.
    Halt { resume: bool },
    Aborted,
}

/// Kind-specific payload of a relation declaration.
#[derive(Debug, Clone, PartialEq)]
pub enum RelationDetail {
    /// `first` (one of a/b) must have been initiated before the other may start.
    Ordered { first: EntityId },
    /// `must`: permitting one side auto-starts the other (atomically);
    /// otherwise the pair is merely documented as allowed to co-occur.
    Concurrent { must: bool },
    /// Incompatible unless the declaration's guard holds.
    Temporary,
    /// `winner` (one of a/b) preempts the other.
    Precedence { winner: EntityId, loser: LoserAction },
    /// Starting `a` requires `b` active, continuously.
    DependenceRequires,
    /// Permitting `a` starts `b`; `after` defers the start to `a`'s completion.
    DependenceStarts { after: bool },
    /// Co-occurrence allowed only under the guard; extra obligations fire
    /// when the guarded co-occurrence is permitted.
    Conditional { obligations: Vec<ObligationAction> },
    /// Never simultaneously, nor within `window` after either side finished.
    Incompatible,
}

impl RelationDetail {
    pub fn kind(&self) -> RelationKind {
        match self {
            RelationDetail::Ordered { .. } => RelationKind::Ordered,
            RelationDetail::Concurrent { .. } => RelationKind::Concurrent,
            RelationDetail::Temporary => RelationKind::Temporary,
            RelationDetail::Precedence { .. } => RelationKind::Precedence,
            RelationDetail::DependenceRequires | RelationDetail::DependenceStarts { .. } => {
                RelationKind::Dependence
            }
            RelationDetail::Conditional { .. } => RelationKind::Conditional,
            RelationDetail::Incompatible => RelationKind::Incompatible,
        }
    }
}

/// A declared relation between two activities.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationDecl {
    pub a: EntityId,
    pub b: EntityId,
    pub scope: DeviceScope,
    pub window: Option<DurationSecs>,
    pub guard: Option<ContextExpr>,
    pub detail: RelationDetail,
}

impl RelationDecl {
    pub fn kind(&self) -> RelationKind {
        self.detail.kind()
    }

    pub fn names(&self) -> String {
        format!("relation {} {} {}", self.kind().as_str(), self.a, self.b)
    }

    /// Does this relation mention the activity (on either side)?
    pub fn involves(&self, activity: &EntityId) -> bool {
        self.a == *activity || self.b == *activity
    }

    /// The opposite side of `activity`, if the relation involves it.
    pub fn partner_of(&self, activity: &EntityId) -> Option<&EntityId> {
        if self.a == *activity {
            Some(&self.b)
        } else if self.b == *activity {
            Some(&self.a)
        } else {
            None
        }
    }
}

/// A complete policy: entity declarations, initial environment, policy-level
/// usage limits, the ordered rule list (first match wins), and relations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicySet {
    pub devices: BTreeMap<EntityId, DeviceObject>,
    pub subjects: BTreeMap<EntityId, Subject>,
    pub environment: BTreeMap<String, AttributeValue>,
    pub limits: Vec<UsageLimit>,
    pub rules: Vec<ActivityRule>,
    pub relations: Vec<RelationDecl>,
}

impl PolicySet {
    /// Ecosystem state at t = 0: declared devices and subjects (plus the
    /// EVENT subject), declared environment, nothing running.
    pub fn initial_state(&self) -> EcosystemState {
        let mut state = EcosystemState::new();
        state.devices = self.devices.clone();
        for (id, subject) in &self.subjects {
            state.subjects.insert(id.clone(), subject.clone());
        }
        state.environment = self.environment.clone();
        state
    }

    /// Activities that can come into existence: named by rule heads or by
    /// obligations (the reserved `inactive` is not an activity).
    pub fn known_activities(&self) -> Vec<&EntityId> {
        let mut out: Vec<&EntityId> = Vec::new();
        for rule in &self.rules {
            if !rule.activity.is_inactive() && !out.contains(&&rule.activity) {
                out.push(&rule.activity);
            }
            for ob in &rule.obligations {
                if !out.contains(&&ob.activity) {
                    out.push(&ob.activity);
                }
            }
        }
        for rel in &self.relations {
            if let RelationDetail::Conditional { obligations } = &rel.detail {
                for ob in obligations {
                    if !out.contains(&&ob.activity) {
                        out.push(&ob.activity);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Error)]
pub enum ValidationError {
    #[error("dangling reference: no declared {kind} matches `{id}` (in {context})")]
    DanglingReference {
        kind: &'static str,
        id: String,
        context: String,
    },
    #[error("subject `{0}` has kind=device but no device with that id is declared")]
    DeviceSubjectUndeclared(String),
    #[error("conflicting relations on ({a}, {b}): {first} with {second}")]
    ConflictingRelations {
        a: String,
        b: String,
        first: String,
        second: String,
    },
    #[error("{context}: window of zero")]
    ZeroWindow { context: String },
    #[error("{context}: usage limit max count must be positive")]
    ZeroLimit { context: String },
    #[error("{context}: ordering comparison needs a number literal, got {got} `{literal}`")]
    BadLiteralType {
        context: String,
        got: &'static str,
        literal: String,
    },
    #[error("{context}: relation of an activity with itself is only allowed as incompatible scope=different")]
    SelfRelation { context: String },
    #[error("{context}: {kind} relation requires a `when` guard")]
    MissingGuard { context: String, kind: &'static str },
    #[error("{context}: detail names `{id}`, which is neither side of the relation")]
    DetailNamesOutsider { context: String, id: String },
    #[error("{context}: a rule for `inactive` must stop a named activity in its obligations")]
    InactiveRuleWithoutStop { context: String },
    #[error("{context}: `within` windows are only permitted in pre conditions")]
    WindowInCurrentCondition { context: String },
    #[error("{context}: `inactive` is only meaningful as a current condition")]
    InactiveInPreCondition { context: String },
}

/// Checks a parsed policy set for dangling references, conflicting relation
/// declarations, zero windows, and type errors in context literals. Errors
/// reference offending declarations by their canonical text, so the result
/// is insensitive to rule order.
pub fn validate(policy: &PolicySet) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let activities = policy.known_activities();
    let has_activity = |id: &EntityId| activities.iter().any(|a| *a == id);

    for device in policy.devices.values() {
        let context = format!("device {}", device.id);
        if let Some(owner) = &device.owner {
            if !policy.subjects.contains_key(owner) {
                errors.push(ValidationError::DanglingReference {
                    kind: "subject",
                    id: owner.to_string(),
                    context: context.clone(),
                });
            }
        }
    }
    for subject in policy.subjects.values() {
        if subject.kind == crate::model::SubjectKind::Device && !policy.devices.contains_key(&subject.id) {
            errors.push(ValidationError::DeviceSubjectUndeclared(subject.id.to_string()));
        }
    }

    for rule in &policy.rules {
        let context = rule.head_text();
        check_object_pattern(policy, &rule.object, &context, &mut errors);
        check_source_pattern(policy, &rule.source, &context, &mut errors);
        if rule.activity.is_inactive()
            && !rule.obligations.iter().any(|o| o.kind == ObligationKind::Stop)
        {
            errors.push(ValidationError::InactiveRuleWithoutStop { context: context.clone() });
        }
        if let Some(pre) = &rule.pre {
            check_cond(policy, pre, true, &context, &has_activity, &mut errors);
        }
        if let Some(cur) = &rule.cur {
            check_cond(policy, cur, false, &context, &has_activity, &mut errors);
        }
        if let Some(when) = &rule.when {
            check_context(policy, when, &context, &mut errors);
        }
        for ob in &rule.obligations {
            check_object_pattern(policy, &ob.object, &context, &mut errors);
        }
        for limit in &rule.limits {
            check_limit(limit, &context, &has_activity, &mut errors);
        }
    }

    for limit in &policy.limits {
        check_limit(limit, "policy-level limit", &has_activity, &mut errors);
    }

    for rel in &policy.relations {
        let context = rel.names();
        for side in [&rel.a, &rel.b] {
            if !has_activity(side) {
                errors.push(ValidationError::DanglingReference {
                    kind: "activity",
                    id: side.to_string(),
                    context: context.clone(),
                });
            }
        }
        if rel.a == rel.b
            && !(rel.kind() == RelationKind::Incompatible && rel.scope == DeviceScope::Different)
        {
            errors.push(ValidationError::SelfRelation { context: context.clone() });
        }
        if rel.window == Some(0) {
            errors.push(ValidationError::ZeroWindow { context: context.clone() });
        }
        if let Some(guard) = &rel.guard {
            check_context(policy, guard, &context, &mut errors);
        }
        match &rel.detail {
            RelationDetail::Ordered { first } => {
                if *first != rel.a && *first != rel.b {
                    errors.push(ValidationError::DetailNamesOutsider {
                        context: context.clone(),
                        id: first.to_string(),
                    });
                }
            }
            RelationDetail::Precedence { winner, .. } => {
                if *winner != rel.a && *winner != rel.b {
                    errors.push(ValidationError::DetailNamesOutsider {
                        context: context.clone(),
                        id: winner.to_string(),
                    });
                }
            }
            RelationDetail::Temporary => {
                if rel.guard.is_none() {
                    errors.push(ValidationError::MissingGuard {
                        context: context.clone(),
                        kind: "temporary",
                    });
                }
            }
            RelationDetail::Conditional { obligations } => {
                if rel.guard.is_none() {
                    errors.push(ValidationError::MissingGuard {
                        context: context.clone(),
                        kind: "conditional",
                    });
                }
                for ob in obligations {
                    check_object_pattern(policy, &ob.object, &context, &mut errors);
                }
            }
            _ => {}
        }
    }

    // Pairwise kind conflicts: a declaration that forces two activities to
    // co-occur cannot share a pair (on an overlapping scope) with one that
    // forbids their co-occurrence.
    for (i, x) in policy.relations.iter().enumerate() {
        for y in policy.relations.iter().skip(i + 1) {
            let same_pair = (x.a == y.a && x.b == y.b) || (x.a == y.b && x.b == y.a);
            if !same_pair || !scopes_overlap(x.scope, y.scope) {
                continue;
            }
            let conflict = (forces_co_occurrence(x) && forbids_co_occurrence(y))
                || (forces_co_occurrence(y) && forbids_co_occurrence(x));
            if conflict {
                errors.push(ValidationError::ConflictingRelations {
                    a: x.a.to_string(),
                    b: x.b.to_string(),
                    first: x.kind().as_str().into(),
                    second: y.kind().as_str().into(),
                });
            }
        }
    }

    errors
}

fn forces_co_occurrence(rel: &RelationDecl) -> bool {
    matches!(
        rel.detail,
        RelationDetail::Concurrent { must: true }
            | RelationDetail::DependenceRequires
            | RelationDetail::DependenceStarts { after: false }
    )
}

fn forbids_co_occurrence(rel: &RelationDecl) -> bool {
    matches!(rel.detail, RelationDetail::Incompatible | RelationDetail::Temporary)
}

fn scopes_overlap(x: DeviceScope, y: DeviceScope) -> bool {
    !matches!(
        (x, y),
        (DeviceScope::Same, DeviceScope::Different) | (DeviceScope::Different, DeviceScope::Same)
    )
}

fn check_limit(
    limit: &UsageLimit,
    context: &str,
    has_activity: &impl Fn(&EntityId) -> bool,
    errors: &mut Vec<ValidationError>,
) {
    let context = format!(
        "{}: limit {} {}",
        context,
        limit.scope.as_str(),
        limit.activity
    );
    if limit.window == 0 {
        errors.push(ValidationError::ZeroWindow { context: context.clone() });
    }
    if limit.max_count == 0 {
        errors.push(ValidationError::ZeroLimit { context: context.clone() });
    }
    if !has_activity(&limit.activity) {
        errors.push(ValidationError::DanglingReference {
            kind: "activity",
            id: limit.activity.to_string(),
            context,
        });
    }
}

fn check_object_pattern(
    policy: &PolicySet,
    pattern: &Pattern,
    context: &str,
    errors: &mut Vec<ValidationError>,
) {
    let (kind, missing) = match pattern {
        Pattern::Id(id) => ("device", !policy.devices.contains_key(id)),
        Pattern::Type(t) => (
            "device type",
            !policy.devices.values().any(|d| d.object_type == *t),
        ),
        Pattern::Group(g) => (
            "device group",
            !policy.devices.values().any(|d| d.groups.contains(g)),
        ),
        Pattern::Any => return,
    };
    if missing {
        let id = match pattern {
            Pattern::Id(i) | Pattern::Type(i) | Pattern::Group(i) => i.to_string(),
            Pattern::Any => unreachable!(),
        };
        errors.push(ValidationError::DanglingReference {
            kind,
            id,
            context: context.to_string(),
        });
    }
}

fn check_source_pattern(
    policy: &PolicySet,
    pattern: &Pattern,
    context: &str,
    errors: &mut Vec<ValidationError>,
) {
    match pattern {
        Pattern::Id(id) => {
            if !policy.subjects.contains_key(id) && !id.is_event() {
                errors.push(ValidationError::DanglingReference {
                    kind: "subject",
                    id: id.to_string(),
                    context: context.to_string(),
                });
            }
        }
        // type/group source patterns select device subjects through the
        // device table, so they are checked as device patterns
        Pattern::Type(_) | Pattern::Group(_) => {
            check_object_pattern(policy, pattern, context, errors)
        }
        Pattern::Any => {}
    }
}

fn check_cond(
    policy: &PolicySet,
    cond: &CondExpr,
    is_pre: bool,
    context: &str,
    has_activity: &impl Fn(&EntityId) -> bool,
    errors: &mut Vec<ValidationError>,
) {
    for atom in cond.atoms() {
        match atom {
            CondAtom::State(s) => {
                check_object_pattern(policy, &s.object, context, errors);
                check_source_pattern(policy, &s.source, context, errors);
                match &s.activity {
                    ActivityRef::Named(a) => {
                        if !has_activity(a) {
                            errors.push(ValidationError::DanglingReference {
                                kind: "activity",
                                id: a.to_string(),
                                context: context.to_string(),
                            });
                        }
                    }
                    ActivityRef::Inactive => {
                        if is_pre {
                            errors.push(ValidationError::InactiveInPreCondition {
                                context: context.to_string(),
                            });
                        }
                    }
                }
                match s.window {
                    Some(0) => errors.push(ValidationError::ZeroWindow {
                        context: context.to_string(),
                    }),
                    Some(_) if !is_pre => errors.push(ValidationError::WindowInCurrentCondition {
                        context: context.to_string(),
                    }),
                    _ => {}
                }
            }
            CondAtom::Context(c) => check_context_atom(policy, c, context, errors),
        }
    }
}

fn check_context(
    policy: &PolicySet,
    expr: &ContextExpr,
    context: &str,
    errors: &mut Vec<ValidationError>,
) {
    for atom in expr.atoms() {
        check_context_atom(policy, atom, context, errors);
    }
}

fn check_context_atom(
    policy: &PolicySet,
    atom: &ContextAtom,
    context: &str,
    errors: &mut Vec<ValidationError>,
) {
    match atom {
        ContextAtom::ValueCmp { op, literal, .. } => {
            if matches!(op, CmpOp::Lt | CmpOp::Gt) && !matches!(literal, AttributeValue::Number(_)) {
                errors.push(ValidationError::BadLiteralType {
                    context: context.to_string(),
                    got: literal.kind(),
                    literal: literal.to_string(),
                });
            }
        }
        ContextAtom::LocationCmp { object, .. } => {
            check_object_pattern(policy, object, context, errors);
        }
        ContextAtom::Rel { subject, target, .. } => {
            check_source_pattern(policy, subject, context, errors);
            // relation targets may be subjects or devices; accept either
            if let Pattern::Id(id) = target {
                if !policy.subjects.contains_key(id) && !policy.devices.contains_key(id) {
                    errors.push(ValidationError::DanglingReference {
                        kind: "entity",
                        id: id.to_string(),
                        context: context.to_string(),
                    });
                }
            }
        }
        ContextAtom::TimeIn { .. } => {}
    }
}

/// Helpers for building subjects/devices programmatically (tests, builders).
pub fn user_subject(id: impl Into<String>) -> Subject {
    Subject {
        id: EntityId::new(id),
        kind: crate::model::SubjectKind::User,
        relations: Vec::new(),
        attributes: BTreeMap::new(),
    }
}

pub fn plain_device(id: impl Into<String>, object_type: impl Into<String>) -> DeviceObject {
    DeviceObject {
        id: EntityId::new(id),
        object_type: EntityId::new(object_type),
        groups: Vec::new(),
        location: None,
        owner: None,
        attributes: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubjectKind;
    use proptest::prelude::*;

    fn id(s: &str) -> EntityId {
        EntityId::new(s)
    }

    fn simple_rule(object: Pattern, op: &str, source: Pattern, activity: &str) -> ActivityRule {
        ActivityRule {
            object,
            op: id(op),
            source,
            activity: id(activity),
            pre: None,
            cur: None,
            cur_continuous: false,
            obligations: Vec::new(),
            when: None,
            when_continuous: false,
            limits: Vec::new(),
        }
    }

    fn farm_policy() -> PolicySet {
        let mut policy = PolicySet::default();
        let mut sprinkler = plain_device("WaterSprinkler", "Sprinkler");
        sprinkler.groups.push(id("irrigation"));
        policy.devices.insert(sprinkler.id.clone(), sprinkler);
        policy
            .devices
            .insert(id("GreenhouseWindow3"), plain_device("GreenhouseWindow3", "Window"));
        policy.subjects.insert(id("moisture-sensor"), user_subject("moisture-sensor"));
        policy.subjects.insert(id("farm-manager"), user_subject("farm-manager"));
        policy.rules.push(simple_rule(
            Pattern::Id(id("WaterSprinkler")),
            "TURN-ON",
            Pattern::Id(id("moisture-sensor")),
            "Spraying",
        ));
        policy
    }

    #[test]
    fn rule_matches_by_id() {
        let policy = farm_policy();
        let state = policy.initial_state();
        let rule = &policy.rules[0];
        assert!(rule.matches(&id("moisture-sensor"), &id("TURN-ON"), &id("WaterSprinkler"), &id("Spraying"), &state));
        assert!(!rule.matches(&id("moisture-sensor"), &id("TURN-OFF"), &id("WaterSprinkler"), &id("Spraying"), &state));
        assert!(!rule.matches(&id("farm-manager"), &id("TURN-ON"), &id("WaterSprinkler"), &id("Spraying"), &state));
    }

    #[test]
    fn rule_matches_by_object_type() {
        let mut policy = farm_policy();
        policy.rules.push(simple_rule(
            Pattern::Type(id("Window")),
            "TURN-ON",
            Pattern::Any,
            "Opening",
        ));
        let state = policy.initial_state();
        let rule = &policy.rules[1];
        assert!(rule.matches(&id("farm-manager"), &id("TURN-ON"), &id("GreenhouseWindow3"), &id("Opening"), &state));
        assert!(!rule.matches(&id("farm-manager"), &id("TURN-ON"), &id("WaterSprinkler"), &id("Opening"), &state));
    }

    #[test]
    fn any_source_rule_matches_event() {
        let mut policy = farm_policy();
        policy.rules.push(simple_rule(Pattern::Any, "EVENT", Pattern::Any, "Vibrating"));
        let state = policy.initial_state();
        let rule = &policy.rules[1];
        assert!(rule.matches(&EntityId::event(), &id("EVENT"), &id("WaterSprinkler"), &id("Vibrating"), &state));
    }

    #[test]
    fn validate_accepts_wellformed_policy() {
        assert_eq!(validate(&farm_policy()), Vec::new());
    }

    #[test]
    fn validate_flags_dangling_device() {
        let mut policy = farm_policy();
        policy.rules.push(simple_rule(
            Pattern::Id(id("Sprinkler2")),
            "TURN-ON",
            Pattern::Any,
            "Spraying",
        ));
        let errors = validate(&policy);
        assert!(errors.iter().any(|e| matches!(
            e,
            ValidationError::DanglingReference { kind: "device", .. }
        )));
    }

    #[test]
    fn validate_flags_device_subject_without_device() {
        let mut policy = farm_policy();
        policy.subjects.insert(
            id("ghost"),
            Subject {
                id: id("ghost"),
                kind: SubjectKind::Device,
                relations: Vec::new(),
                attributes: BTreeMap::new(),
            },
        );
        let errors = validate(&policy);
        assert!(errors
            .iter()
            .any(|e| matches!(e, ValidationError::DeviceSubjectUndeclared(_))));
    }

    #[test]
    fn validate_flags_conflicting_relations() {
        let mut policy = farm_policy();
        policy.rules.push(simple_rule(Pattern::Any, "TURN-ON", Pattern::Any, "PestSpray"));
        policy.rules.push(simple_rule(Pattern::Any, "TURN-ON", Pattern::Any, "WaterSpray"));
        policy.relations.push(RelationDecl {
            a: id("PestSpray"),
            b: id("WaterSpray"),
            scope: DeviceScope::Any,
            window: None,
            guard: None,
            detail: RelationDetail::Incompatible,
        });
        policy.relations.push(RelationDecl {
            a: id("WaterSpray"),
            b: id("PestSpray"),
            scope: DeviceScope::Any,
            window: None,
            guard: None,
            detail: RelationDetail::Concurrent { must: true },
        });
        let errors = validate(&policy);
        assert!(errors
            .iter()
            .any(|e| matches!(e, ValidationError::ConflictingRelations { .. })));
    }

    #[test]
    fn validate_ignores_disjoint_scopes() {
        let mut policy = farm_policy();
        policy.rules.push(simple_rule(Pattern::Any, "TURN-ON", Pattern::Any, "PestSpray"));
        policy.rules.push(simple_rule(Pattern::Any, "TURN-ON", Pattern::Any, "WaterSpray"));
        policy.relations.push(RelationDecl {
            a: id("PestSpray"),
            b: id("WaterSpray"),
            scope: DeviceScope::Same,
            window: None,
            guard: None,
            detail: RelationDetail::Incompatible,
        });
        policy.relations.push(RelationDecl {
            a: id("PestSpray"),
            b: id("WaterSpray"),
            scope: DeviceScope::Different,
            window: None,
            guard: None,
            detail: RelationDetail::Concurrent { must: true },
        });
        let errors = validate(&policy);
        assert!(!errors
            .iter()
            .any(|e| matches!(e, ValidationError::ConflictingRelations { .. })));
    }

    #[test]
    fn validate_flags_zero_window_and_zero_limit() {
        let mut policy = farm_policy();
        policy.limits.push(UsageLimit {
            scope: CounterScope::SystemWide,
            activity: id("Spraying"),
            max_count: 0,
            window: 0,
        });
        let errors = validate(&policy);
        assert!(errors.iter().any(|e| matches!(e, ValidationError::ZeroWindow { .. })));
        assert!(errors.iter().any(|e| matches!(e, ValidationError::ZeroLimit { .. })));
    }

    #[test]
    fn validate_flags_bad_ordering_literal() {
        let mut policy = farm_policy();
        policy.rules[0].when = Some(BoolExpr::Atom(ContextAtom::ValueCmp {
            name: "weather".into(),
            op: CmpOp::Lt,
            literal: AttributeValue::Text("severe".into()),
        }));
        let errors = validate(&policy);
        assert!(errors.iter().any(|e| matches!(e, ValidationError::BadLiteralType { .. })));
    }

    #[test]
    fn validate_flags_inactive_rule_without_stop() {
        let mut policy = farm_policy();
        policy.rules.push(simple_rule(
            Pattern::Id(id("WaterSprinkler")),
            "TURN-OFF",
            Pattern::Any,
            "inactive",
        ));
        let errors = validate(&policy);
        assert!(errors
            .iter()
            .any(|e| matches!(e, ValidationError::InactiveRuleWithoutStop { .. })));
    }

    #[test]
    fn validate_is_order_insensitive() {
        let mut policy = farm_policy();
        policy.rules.push(simple_rule(Pattern::Id(id("NoSuchDevice")), "X", Pattern::Any, "A"));
        policy.rules.push(simple_rule(Pattern::Id(id("AlsoMissing")), "Y", Pattern::Any, "B"));
        let mut forward = validate(&policy);
        policy.rules.reverse();
        let mut backward = validate(&policy);
        forward.sort();
        backward.sort();
        assert_eq!(forward, backward);
    }

    proptest! {
        // Id(x) matching implies Type, every Group, and Any also match.
        #[test]
        fn pattern_matching_is_monotone(
            ty in "[A-Z][a-z]{1,6}",
            groups in prop::collection::vec("[a-z]{1,6}", 0..3),
        ) {
            let mut device = plain_device("dev", ty.clone());
            device.groups = groups.iter().map(|g| EntityId::new(g.clone())).collect();
            prop_assert!(Pattern::Id(id("dev")).matches_device(&device));
            prop_assert!(Pattern::Type(EntityId::new(ty)).matches_device(&device));
            for g in &device.groups {
                prop_assert!(Pattern::Group(g.clone()).matches_device(&device));
            }
            prop_assert!(Pattern::Any.matches_device(&device));
        }
    }
}
