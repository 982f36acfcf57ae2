//! Ecosystem state: devices, subjects, activity instances, environment,
//! history, and usage counters.
//!
//! `EcosystemState` is a value with pure transition functions: every
//! operation returns a new state (or an error) and never mutates the caller's
//! copy. All collections are ordered (`BTreeMap`/`Vec`) so identical inputs
//! produce identical states byte for byte.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Simulated clock value, integer seconds from t = 0.
pub type Timestamp = u64;

/// Length of time, integer seconds.
pub type DurationSecs = u64;

/// Seconds in one simulated day; seconds-of-day = clock % DAY_SECS.
pub const DAY_SECS: u64 = 86_400;

/// Case-sensitive identifier naming a device, subject, activity, operation,
/// group, type, or location. Namespaces are separate: a device and a subject
/// may share a name (a device subject must, in fact).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        debug_assert!(!name.is_empty(), "entity id must be non-empty");
        EntityId(name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The distinguished subject-less initiator.
    pub fn event() -> Self {
        EntityId("EVENT".into())
    }

    /// The reserved pseudo-activity denoting device idleness.
    pub fn inactive() -> Self {
        EntityId("inactive".into())
    }

    pub fn is_event(&self) -> bool {
        self.0 == "EVENT"
    }

    pub fn is_inactive(&self) -> bool {
        self.0 == "inactive"
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId::new(s)
    }
}

/// A typed attribute value. Comparisons are defined only between values of
/// the same kind; cross-kind comparison is a policy evaluation error.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributeValue {
    Number(f64),
    Text(String),
    Flag(bool),
}

impl AttributeValue {
    pub fn kind(&self) -> &'static str {
        match self {
            AttributeValue::Number(_) => "number",
            AttributeValue::Text(_) => "string",
            AttributeValue::Flag(_) => "boolean",
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::Number(n) => f.write_str(&format_number(*n)),
            AttributeValue::Text(s) => f.write_str(s),
            AttributeValue::Flag(b) => write!(f, "{}", b),
        }
    }
}

/// Writes a number without a trailing `.0` when it is integral, so printed
/// policies parse back to the same value.
pub(crate) fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{}", n)
    }
}

/// A smart object on which activities run.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceObject {
    pub id: EntityId,
    pub object_type: EntityId,
    pub groups: Vec<EntityId>,
    pub location: Option<EntityId>,
    pub owner: Option<EntityId>,
    pub attributes: BTreeMap<String, AttributeValue>,
}

/// Who can issue operations: a user, another device, or the distinguished
/// EVENT subject modelling subject-less triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubjectKind {
    User,
    Device,
    Event,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: EntityId,
    pub kind: SubjectKind,
    /// Named relations to other entities, e.g. (parent-of, Child).
    pub relations: Vec<(String, EntityId)>,
    pub attributes: BTreeMap<String, AttributeValue>,
}

/// Lifecycle status of an activity instance. Every instance traverses
/// active -> (halted <-> active)* -> {completed | aborted}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActivityStatus {
    Active,
    Halted,
    Completed,
    Aborted,
}

impl ActivityStatus {
    pub fn is_live(self) -> bool {
        matches!(self, ActivityStatus::Active | ActivityStatus::Halted)
    }

    pub fn is_finished(self) -> bool {
        matches!(self, ActivityStatus::Completed | ActivityStatus::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityStatus::Active => "active",
            ActivityStatus::Halted => "halted",
            ActivityStatus::Completed => "completed",
            ActivityStatus::Aborted => "aborted",
        }
    }
}

/// One run of an activity on a device.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityInstance {
    pub device: EntityId,
    pub activity: EntityId,
    /// Subject the instance is attributed to. Set at start; an obligation
    /// stop rewrites it to the subject that forced the stop.
    pub initiator: EntityId,
    pub start_time: Timestamp,
    pub status: ActivityStatus,
    /// Present iff status is completed or aborted.
    pub end_time: Option<Timestamp>,
}

/// How a stop archives the instance: completed (ran its course) or aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    Completed,
    Aborted,
}

impl StopMode {
    pub fn status(self) -> ActivityStatus {
        match self {
            StopMode::Completed => ActivityStatus::Completed,
            StopMode::Aborted => ActivityStatus::Aborted,
        }
    }
}

/// Scope of a usage counter / usage limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CounterScope {
    PerSource,
    PerObject,
    SystemWide,
}

impl CounterScope {
    pub fn as_str(self) -> &'static str {
        match self {
            CounterScope::PerSource => "per-source",
            CounterScope::PerObject => "per-object",
            CounterScope::SystemWide => "system-wide",
        }
    }
}

/// Key of one activation counter. `subject_or_object` is present iff the
/// scope is not system-wide.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CounterKey {
    pub scope: CounterScope,
    pub activity: EntityId,
    pub subject_or_object: Option<EntityId>,
}

/// Which instances a state query ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Live instances with status = active.
    Current,
    /// Finished instances in the history log.
    Past,
}

/// Activity selector for [`EcosystemState::query_state`].
#[derive(Debug, Clone, PartialEq)]
pub enum ActivityQuery {
    Named(EntityId),
    Any,
    /// Devices holding no active instance of any activity (current phase only).
    Inactive,
}

/// Device/subject selector shared with the policy AST. Defined here so the
/// model can be queried without depending on the AST module.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pattern {
    Id(EntityId),
    Type(EntityId),
    Group(EntityId),
    Any,
}

impl Pattern {
    /// Does this pattern select the given device?
    pub fn matches_device(&self, device: &DeviceObject) -> bool {
        match self {
            Pattern::Id(id) => *id == device.id,
            Pattern::Type(t) => *t == device.object_type,
            Pattern::Group(g) => device.groups.contains(g),
            Pattern::Any => true,
        }
    }

    /// Does this pattern select the given subject? Type/group patterns match
    /// device subjects through their device record and never match users.
    pub fn matches_subject(&self, subject: &Subject, devices: &BTreeMap<EntityId, DeviceObject>) -> bool {
        match self {
            Pattern::Id(id) => *id == subject.id,
            Pattern::Any => true,
            Pattern::Type(_) | Pattern::Group(_) => devices
                .get(&subject.id)
                .map(|d| self.matches_device(d))
                .unwrap_or(false),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Id(id) => write!(f, "{}", id),
            Pattern::Type(id) => write!(f, "type:{}", id),
            Pattern::Group(id) => write!(f, "group:{}", id),
            Pattern::Any => f.write_str("ANY"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown device {0}")]
    UnknownDevice(EntityId),
    #[error("activity {activity} is already live on {device}")]
    AlreadyActive { device: EntityId, activity: EntityId },
    #[error("no live instance of {activity} on {device}")]
    NotActive { device: EntityId, activity: EntityId },
    #[error("instance of {activity} on {device} is not halted")]
    NotHalted { device: EntityId, activity: EntityId },
    #[error("instance of {activity} on {device} is not active")]
    NotRunning { device: EntityId, activity: EntityId },
    #[error("clock may not move backwards (at {clock}, asked for {requested})")]
    ClockBackwards { clock: Timestamp, requested: Timestamp },
}

/// The whole simulated ecosystem at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EcosystemState {
    pub clock: Timestamp,
    pub devices: BTreeMap<EntityId, DeviceObject>,
    pub subjects: BTreeMap<EntityId, Subject>,
    /// Live instances (active or halted), in start order.
    pub live: Vec<ActivityInstance>,
    /// Finished instances (completed or aborted), append-only.
    pub history: Vec<ActivityInstance>,
    pub environment: BTreeMap<String, AttributeValue>,
    /// Activation timestamps per counter key, in activation order.
    pub counters: BTreeMap<CounterKey, Vec<Timestamp>>,
}

impl EcosystemState {
    pub fn new() -> Self {
        let mut subjects = BTreeMap::new();
        subjects.insert(
            EntityId::event(),
            Subject {
                id: EntityId::event(),
                kind: SubjectKind::Event,
                relations: Vec::new(),
                attributes: BTreeMap::new(),
            },
        );
        EcosystemState {
            clock: 0,
            devices: BTreeMap::new(),
            subjects,
            live: Vec::new(),
            history: Vec::new(),
            environment: BTreeMap::new(),
            counters: BTreeMap::new(),
        }
    }

    pub fn live_instance(&self, device: &EntityId, activity: &EntityId) -> Option<&ActivityInstance> {
        self.live
            .iter()
            .find(|i| i.device == *device && i.activity == *activity)
    }

    /// Starts `activity` on `device`, attributed to `initiator`, and records
    /// the activation on the per-source, per-object, and system-wide
    /// counters. Fails if any live instance of the pair exists: a start next
    /// to a halted instance would let a later resume produce two active ones.
    pub fn start_activity(
        &self,
        device: &EntityId,
        activity: &EntityId,
        initiator: &EntityId,
    ) -> Result<EcosystemState, ModelError> {
        let mut next = self.clone();
        next.start_in_place(device, activity, initiator)?;
        Ok(next)
    }

    pub(crate) fn start_in_place(
        &mut self,
        device: &EntityId,
        activity: &EntityId,
        initiator: &EntityId,
    ) -> Result<(), ModelError> {
        if !self.devices.contains_key(device) {
            return Err(ModelError::UnknownDevice(device.clone()));
        }
        if self.live_instance(device, activity).is_some() {
            return Err(ModelError::AlreadyActive {
                device: device.clone(),
                activity: activity.clone(),
            });
        }
        self.live.push(ActivityInstance {
            device: device.clone(),
            activity: activity.clone(),
            initiator: initiator.clone(),
            start_time: self.clock,
            status: ActivityStatus::Active,
            end_time: None,
        });
        let clock = self.clock;
        for key in [
            CounterKey {
                scope: CounterScope::PerSource,
                activity: activity.clone(),
                subject_or_object: Some(initiator.clone()),
            },
            CounterKey {
                scope: CounterScope::PerObject,
                activity: activity.clone(),
                subject_or_object: Some(device.clone()),
            },
            CounterKey {
                scope: CounterScope::SystemWide,
                activity: activity.clone(),
                subject_or_object: None,
            },
        ] {
            self.counters.entry(key).or_default().push(clock);
        }
        Ok(())
    }

    /// Moves the live (active or halted) instance of the pair to history
    /// with `end_time = clock` and the status given by `mode`.
    pub fn stop_activity(
        &self,
        device: &EntityId,
        activity: &EntityId,
        mode: StopMode,
    ) -> Result<EcosystemState, ModelError> {
        let mut next = self.clone();
        next.stop_in_place(device, activity, mode, None)?;
        Ok(next)
    }

    /// `reattribute`: rewrite the archived instance's initiator (used when an
    /// obligation stop attributes the state change to the requesting subject).
    pub(crate) fn stop_in_place(
        &mut self,
        device: &EntityId,
        activity: &EntityId,
        mode: StopMode,
        reattribute: Option<&EntityId>,
    ) -> Result<(), ModelError> {
        let idx = self
            .live
            .iter()
            .position(|i| i.device == *device && i.activity == *activity)
            .ok_or_else(|| ModelError::NotActive {
                device: device.clone(),
                activity: activity.clone(),
            })?;
        let mut inst = self.live.remove(idx);
        inst.status = mode.status();
        inst.end_time = Some(self.clock);
        if let Some(subject) = reattribute {
            inst.initiator = subject.clone();
        }
        self.history.push(inst);
        Ok(())
    }

    /// Suspends the active instance of the pair; start_time is preserved.
    pub fn halt_activity(&self, device: &EntityId, activity: &EntityId) -> Result<EcosystemState, ModelError> {
        let mut next = self.clone();
        next.set_status_in_place(device, activity, ActivityStatus::Halted)?;
        Ok(next)
    }

    /// Resumes a halted instance of the pair; start_time is preserved.
    pub fn resume_activity(&self, device: &EntityId, activity: &EntityId) -> Result<EcosystemState, ModelError> {
        let mut next = self.clone();
        next.set_status_in_place(device, activity, ActivityStatus::Active)?;
        Ok(next)
    }

    pub(crate) fn set_status_in_place(
        &mut self,
        device: &EntityId,
        activity: &EntityId,
        to: ActivityStatus,
    ) -> Result<(), ModelError> {
        let inst = self
            .live
            .iter_mut()
            .find(|i| i.device == *device && i.activity == *activity)
            .ok_or_else(|| ModelError::NotActive {
                device: device.clone(),
                activity: activity.clone(),
            })?;
        match to {
            ActivityStatus::Halted if inst.status == ActivityStatus::Active => {
                inst.status = ActivityStatus::Halted;
                Ok(())
            }
            ActivityStatus::Halted => Err(ModelError::NotRunning {
                device: device.clone(),
                activity: activity.clone(),
            }),
            ActivityStatus::Active if inst.status == ActivityStatus::Halted => {
                inst.status = ActivityStatus::Active;
                Ok(())
            }
            ActivityStatus::Active => Err(ModelError::NotHalted {
                device: device.clone(),
                activity: activity.clone(),
            }),
            _ => unreachable!("set_status_in_place only toggles live statuses"),
        }
    }

    pub(crate) fn advance_clock_in_place(&mut self, to: Timestamp) -> Result<(), ModelError> {
        if to < self.clock {
            return Err(ModelError::ClockBackwards {
                clock: self.clock,
                requested: to,
            });
        }
        self.clock = to;
        Ok(())
    }

    /// The initiator of the most recent finished instance on `device`, or
    /// None when the device has no history (an unattributed fresh device).
    pub fn last_change_initiator(&self, device: &EntityId) -> Option<&EntityId> {
        self.history
            .iter()
            .rev()
            .find(|i| i.device == *device)
            .map(|i| &i.initiator)
    }

    /// True when the device holds no active instance of any activity.
    /// Halted instances are suspended and do not count.
    pub fn device_inactive(&self, device: &EntityId) -> bool {
        !self
            .live
            .iter()
            .any(|i| i.device == *device && i.status == ActivityStatus::Active)
    }

    /// Matching instances for one phase.
    ///
    /// Current phase ranges over active instances; past over the history
    /// log (completed and aborted). A `window` restricts past matches to
    /// `end_time >= clock - window`. The `Inactive` selector (current phase
    /// only) synthesizes one instance per matching idle device, attributed
    /// to the initiator of its most recent finished instance; a device with
    /// no history matches only a wildcard source pattern.
    pub fn query_state(
        &self,
        phase: Phase,
        activity: &ActivityQuery,
        object: &Pattern,
        source: &Pattern,
        window: Option<DurationSecs>,
    ) -> Vec<ActivityInstance> {
        match (phase, activity) {
            (Phase::Current, ActivityQuery::Inactive) => {
                let mut out = Vec::new();
                for device in self.devices.values() {
                    if !object.matches_device(device) || !self.device_inactive(&device.id) {
                        continue;
                    }
                    let attributed = self.last_change_initiator(&device.id);
                    let matched = match attributed {
                        Some(initiator) => self.source_matches(source, initiator),
                        None => matches!(source, Pattern::Any),
                    };
                    if matched {
                        out.push(ActivityInstance {
                            device: device.id.clone(),
                            activity: EntityId::inactive(),
                            initiator: attributed.cloned().unwrap_or_else(EntityId::event),
                            start_time: self.clock,
                            status: ActivityStatus::Active,
                            end_time: None,
                        });
                    }
                }
                out
            }
            (Phase::Past, ActivityQuery::Inactive) => Vec::new(),
            (Phase::Current, _) => self
                .live
                .iter()
                .filter(|i| i.status == ActivityStatus::Active)
                .filter(|i| self.instance_matches(i, activity, object, source))
                .cloned()
                .collect(),
            (Phase::Past, _) => self
                .history
                .iter()
                .filter(|i| self.instance_matches(i, activity, object, source))
                .filter(|i| match window {
                    Some(w) => i.end_time.expect("history instance has end_time") >= self.clock.saturating_sub(w),
                    None => true,
                })
                .cloned()
                .collect(),
        }
    }

    fn instance_matches(
        &self,
        inst: &ActivityInstance,
        activity: &ActivityQuery,
        object: &Pattern,
        source: &Pattern,
    ) -> bool {
        let activity_ok = match activity {
            ActivityQuery::Named(a) => inst.activity == *a,
            ActivityQuery::Any => true,
            ActivityQuery::Inactive => false,
        };
        let object_ok = self
            .devices
            .get(&inst.device)
            .map(|d| object.matches_device(d))
            .unwrap_or(matches!(object, Pattern::Any));
        activity_ok && object_ok && self.source_matches(source, &inst.initiator)
    }

    fn source_matches(&self, pattern: &Pattern, subject_id: &EntityId) -> bool {
        match self.subjects.get(subject_id) {
            Some(subject) => pattern.matches_subject(subject, &self.devices),
            // Initiators are always declared subjects; be permissive only for ANY.
            None => matches!(pattern, Pattern::Any),
        }
    }

    /// Activations for `key` with timestamp in `(clock - window, clock]`.
    /// The lower bound may lie before t = 0, in which case every activation
    /// so far is inside the window.
    pub fn count_in_window(&self, key: &CounterKey, window: DurationSecs) -> usize {
        let floor = self.clock as i128 - window as i128;
        self.counters
            .get(key)
            .map(|ts| ts.iter().filter(|&&t| (t as i128) > floor).count())
            .unwrap_or(0)
    }
}

impl Default for EcosystemState {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> EntityId {
        EntityId::new(s)
    }

    fn device(name: &str, ty: &str) -> DeviceObject {
        DeviceObject {
            id: id(name),
            object_type: id(ty),
            groups: Vec::new(),
            location: None,
            owner: None,
            attributes: BTreeMap::new(),
        }
    }

    fn subject(name: &str, kind: SubjectKind) -> Subject {
        Subject {
            id: id(name),
            kind,
            relations: Vec::new(),
            attributes: BTreeMap::new(),
        }
    }

    fn farm_state() -> EcosystemState {
        let mut s = EcosystemState::new();
        for (name, ty) in [
            ("WaterSprinkler", "Sprinkler"),
            ("AerialDrone", "Drone"),
            ("Tractor", "Tractor"),
        ] {
            s.devices.insert(id(name), device(name, ty));
        }
        for name in ["farm-manager", "worker", "moisture-sensor", "weed-detector", "autonomous-tractor"] {
            s.subjects.insert(id(name), subject(name, SubjectKind::User));
        }
        s
    }

    #[test]
    fn start_records_instance_and_counters() {
        let s = farm_state();
        let s = s
            .start_activity(&id("WaterSprinkler"), &id("Spraying"), &id("moisture-sensor"))
            .unwrap();
        assert_eq!(s.live.len(), 1);
        let inst = &s.live[0];
        assert_eq!(inst.device, id("WaterSprinkler"));
        assert_eq!(inst.activity, id("Spraying"));
        assert_eq!(inst.initiator, id("moisture-sensor"));
        assert_eq!(inst.status, ActivityStatus::Active);
        assert_eq!(inst.start_time, 0);
        assert_eq!(inst.end_time, None);
        // one activation lands on all three counter scopes
        assert_eq!(s.counters.len(), 3);
        for ts in s.counters.values() {
            assert_eq!(ts, &vec![0]);
        }
    }

    #[test]
    fn duplicate_start_is_already_active() {
        let s = farm_state()
            .start_activity(&id("WaterSprinkler"), &id("Spraying"), &id("moisture-sensor"))
            .unwrap();
        let err = s
            .start_activity(&id("WaterSprinkler"), &id("Spraying"), &id("worker"))
            .unwrap_err();
        assert!(matches!(err, ModelError::AlreadyActive { .. }));
    }

    #[test]
    fn start_next_to_halted_instance_is_rejected() {
        let s = farm_state()
            .start_activity(&id("AerialDrone"), &id("Spraying"), &id("weed-detector"))
            .unwrap()
            .halt_activity(&id("AerialDrone"), &id("Spraying"))
            .unwrap();
        let err = s
            .start_activity(&id("AerialDrone"), &id("Spraying"), &id("worker"))
            .unwrap_err();
        assert!(matches!(err, ModelError::AlreadyActive { .. }));
    }

    #[test]
    fn unknown_device_rejected() {
        let err = farm_state()
            .start_activity(&id("Sprinkler2"), &id("Spraying"), &id("worker"))
            .unwrap_err();
        assert_eq!(err, ModelError::UnknownDevice(id("Sprinkler2")));
    }

    #[test]
    fn device_holds_multiple_simultaneous_activities() {
        let s = farm_state()
            .start_activity(&id("AerialDrone"), &id("Spraying"), &id("weed-detector"))
            .unwrap()
            .start_activity(&id("AerialDrone"), &id("ThermalImaging"), &id("autonomous-tractor"))
            .unwrap();
        assert_eq!(s.live.len(), 2);
        assert!(s.live_instance(&id("AerialDrone"), &id("Spraying")).is_some());
        assert!(s.live_instance(&id("AerialDrone"), &id("ThermalImaging")).is_some());
    }

    #[test]
    fn stop_moves_to_history_with_status() {
        let mut s = farm_state()
            .start_activity(&id("AerialDrone"), &id("Spraying"), &id("weed-detector"))
            .unwrap();
        s.advance_clock_in_place(5).unwrap();
        let s = s.stop_activity(&id("AerialDrone"), &id("Spraying"), StopMode::Aborted).unwrap();
        assert!(s.live.is_empty());
        assert_eq!(s.history.len(), 1);
        let inst = &s.history[0];
        assert_eq!(inst.status, ActivityStatus::Aborted);
        assert_eq!(inst.end_time, Some(5));
        assert!(inst.start_time <= inst.end_time.unwrap());
    }

    #[test]
    fn stop_when_not_live_errors() {
        let err = farm_state()
            .stop_activity(&id("Tractor"), &id("Ploughing"), StopMode::Completed)
            .unwrap_err();
        assert!(matches!(err, ModelError::NotActive { .. }));
    }

    #[test]
    fn start_stop_lifecycle_identity() {
        let s = farm_state()
            .start_activity(&id("Tractor"), &id("Ploughing"), &id("worker"))
            .unwrap()
            .stop_activity(&id("Tractor"), &id("Ploughing"), StopMode::Completed)
            .unwrap();
        assert!(s.live.is_empty());
        assert_eq!(s.history.len(), 1);
        assert_eq!(s.history[0].status, ActivityStatus::Completed);
    }

    #[test]
    fn halt_resume_round_trip() {
        let started = farm_state()
            .start_activity(&id("WaterSprinkler"), &id("Spraying"), &id("farm-manager"))
            .unwrap();
        let halted = started.halt_activity(&id("WaterSprinkler"), &id("Spraying")).unwrap();
        assert_eq!(halted.live[0].status, ActivityStatus::Halted);
        let resumed = halted.resume_activity(&id("WaterSprinkler"), &id("Spraying")).unwrap();
        assert_eq!(resumed, started);
    }

    #[test]
    fn resume_active_instance_is_not_halted() {
        let s = farm_state()
            .start_activity(&id("WaterSprinkler"), &id("Spraying"), &id("farm-manager"))
            .unwrap();
        let err = s.resume_activity(&id("WaterSprinkler"), &id("Spraying")).unwrap_err();
        assert!(matches!(err, ModelError::NotHalted { .. }));
    }

    #[test]
    fn halt_halted_instance_is_not_running() {
        let s = farm_state()
            .start_activity(&id("WaterSprinkler"), &id("Spraying"), &id("farm-manager"))
            .unwrap()
            .halt_activity(&id("WaterSprinkler"), &id("Spraying"))
            .unwrap();
        let err = s.halt_activity(&id("WaterSprinkler"), &id("Spraying")).unwrap_err();
        assert!(matches!(err, ModelError::NotRunning { .. }));
    }

    #[test]
    fn query_current_matches_started_instance() {
        let s = farm_state()
            .start_activity(&id("AerialDrone"), &id("Spraying"), &id("weed-detector"))
            .unwrap();
        let hits = s.query_state(
            Phase::Current,
            &ActivityQuery::Named(id("Spraying")),
            &Pattern::Id(id("AerialDrone")),
            &Pattern::Id(id("weed-detector")),
            None,
        );
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn query_past_matches_finished_instance() {
        let s = farm_state()
            .start_activity(&id("Tractor"), &id("Ploughing"), &id("worker"))
            .unwrap()
            .stop_activity(&id("Tractor"), &id("Ploughing"), StopMode::Completed)
            .unwrap();
        let hits = s.query_state(
            Phase::Past,
            &ActivityQuery::Named(id("Ploughing")),
            &Pattern::Id(id("Tractor")),
            &Pattern::Id(id("worker")),
            None,
        );
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].status, ActivityStatus::Completed);
    }

    #[test]
    fn query_on_empty_state_is_empty() {
        let s = EcosystemState::new();
        let hits = s.query_state(Phase::Current, &ActivityQuery::Any, &Pattern::Any, &Pattern::Any, None);
        assert!(hits.is_empty());
    }

    #[test]
    fn query_past_window_filters_by_end_time() {
        let mut s = farm_state()
            .start_activity(&id("Tractor"), &id("Ploughing"), &id("worker"))
            .unwrap();
        s.advance_clock_in_place(100).unwrap();
        let mut s = s.stop_activity(&id("Tractor"), &id("Ploughing"), StopMode::Completed).unwrap();
        s.advance_clock_in_place(500).unwrap();
        let query = |s: &EcosystemState, w| {
            s.query_state(
                Phase::Past,
                &ActivityQuery::Named(id("Ploughing")),
                &Pattern::Any,
                &Pattern::Any,
                Some(w),
            )
            .len()
        };
        // end_time = 100, clock = 500: matches iff end_time >= clock - window
        assert_eq!(query(&s, 400), 1);
        assert_eq!(query(&s, 399), 0);
    }

    #[test]
    fn inactive_query_attributes_last_change() {
        let s = farm_state()
            .start_activity(&id("WaterSprinkler"), &id("Spraying"), &id("farm-manager"))
            .unwrap()
            .stop_activity(&id("WaterSprinkler"), &id("Spraying"), StopMode::Completed)
            .unwrap();
        let by_manager = s.query_state(
            Phase::Current,
            &ActivityQuery::Inactive,
            &Pattern::Id(id("WaterSprinkler")),
            &Pattern::Id(id("farm-manager")),
            None,
        );
        assert_eq!(by_manager.len(), 1);
        assert_eq!(by_manager[0].initiator, id("farm-manager"));
        let by_worker = s.query_state(
            Phase::Current,
            &ActivityQuery::Inactive,
            &Pattern::Id(id("WaterSprinkler")),
            &Pattern::Id(id("worker")),
            None,
        );
        assert!(by_worker.is_empty());
    }

    #[test]
    fn inactive_query_on_fresh_device_needs_any_source() {
        let s = farm_state();
        let any = s.query_state(
            Phase::Current,
            &ActivityQuery::Inactive,
            &Pattern::Id(id("WaterSprinkler")),
            &Pattern::Any,
            None,
        );
        assert_eq!(any.len(), 1);
        let named = s.query_state(
            Phase::Current,
            &ActivityQuery::Inactive,
            &Pattern::Id(id("WaterSprinkler")),
            &Pattern::Id(id("farm-manager")),
            None,
        );
        assert!(named.is_empty());
    }

    #[test]
    fn inactive_query_ignores_busy_devices() {
        let s = farm_state()
            .start_activity(&id("WaterSprinkler"), &id("Spraying"), &id("farm-manager"))
            .unwrap();
        let hits = s.query_state(
            Phase::Current,
            &ActivityQuery::Inactive,
            &Pattern::Id(id("WaterSprinkler")),
            &Pattern::Any,
            None,
        );
        assert!(hits.is_empty());
    }

    #[test]
    fn counter_window_is_half_open() {
        let mut s = farm_state();
        for t in [0u64, 100, 7200] {
            s.advance_clock_in_place(t).unwrap();
            s.start_in_place(&id("WaterSprinkler"), &id("Spraying"), &id("worker")).unwrap();
            s.stop_in_place(&id("WaterSprinkler"), &id("Spraying"), StopMode::Completed, None)
                .unwrap();
        }
        let key = CounterKey {
            scope: CounterScope::SystemWide,
            activity: id("Spraying"),
            subject_or_object: None,
        };
        // clock = 7200; activations at 0, 100, 7200
        assert_eq!(s.count_in_window(&key, 7200), 2); // (0, 7200] drops t = 0
        assert_eq!(s.count_in_window(&key, 7201), 3); // lower bound before the epoch
        assert_eq!(s.count_in_window(&key, 7100), 1); // (100, 7200] drops t = 100
        assert_eq!(s.count_in_window(&key, 1), 1);
    }

    #[test]
    fn conservation_of_instances() {
        let mut s = farm_state();
        let mut starts = 0;
        for (dev, act) in [("WaterSprinkler", "Spraying"), ("Tractor", "Ploughing"), ("AerialDrone", "Spraying")] {
            s.start_in_place(&id(dev), &id(act), &id("worker")).unwrap();
            starts += 1;
        }
        s.stop_in_place(&id("Tractor"), &id("Ploughing"), StopMode::Completed, None).unwrap();
        assert_eq!(s.live.len() + s.history.len(), starts);
    }

    #[test]
    fn clock_never_moves_backwards() {
        let mut s = farm_state();
        s.advance_clock_in_place(10).unwrap();
        assert!(matches!(
            s.advance_clock_in_place(9),
            Err(ModelError::ClockBackwards { .. })
        ));
    }
}
