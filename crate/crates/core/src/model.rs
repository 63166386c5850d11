//! Domain types shared by every part of the engine: hierarchy, states,
//! canonical diagrams, object distributions, counters and traces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trend::TrendClass;

/// Abstract model time unit.
pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("interval end {end} precedes start {start}")]
    InvertedInterval { start: Tick, end: Tick },
    #[error("object universe mismatch: object `{object}` appears in only one distribution")]
    ObjectUniverseMismatch { object: String },
    #[error("distribution not disjoint: object `{object}` occupies `{first}` and `{second}`")]
    NotDisjoint {
        object: String,
        first: String,
        second: String,
    },
}

/// Closed tick range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: Tick,
    pub end: Tick,
}

impl TimeInterval {
    pub fn new(start: Tick, end: Tick) -> Result<Self, ModelError> {
        if end < start {
            return Err(ModelError::InvertedInterval { start, end });
        }
        Ok(Self { start, end })
    }

    /// Control horizon `[0, end]`.
    pub fn horizon(end: Tick) -> Self {
        Self { start: 0, end }
    }

    pub fn len(&self) -> Tick {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, tick: Tick) -> bool {
        self.start <= tick && tick <= self.end
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterNode {
    pub id: String,
    pub level: u32,
    #[serde(default)]
    pub polymorphic: bool,
    #[serde(default)]
    pub children: Vec<String>,
}

/// Tree of parameters (or subsystems). The same structure serves as the
/// hierarchy a scenario maps its diagrams onto.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterHierarchy {
    pub nodes: Vec<ParameterNode>,
}

impl ParameterHierarchy {
    pub fn node(&self, id: &str) -> Option<&ParameterNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.node(id).is_some()
    }

    pub fn parent_of(&self, id: &str) -> Option<&ParameterNode> {
        self.nodes
            .iter()
            .find(|n| n.children.iter().any(|c| c == id))
    }

    pub fn is_child_of(&self, child: &str, parent: &str) -> bool {
        self.node(parent)
            .is_some_and(|p| p.children.iter().any(|c| c == child))
    }

    pub fn has_level(&self, level: u32) -> bool {
        self.nodes.iter().any(|n| n.level == level)
    }

    /// Structural problems: duplicate ids, dangling children, multiple
    /// parents, level mismatches and cycles.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id.as_str()) {
                problems.push(format!("duplicate hierarchy node `{}`", node.id));
            }
        }
        let mut parent_count: BTreeMap<&str, usize> = BTreeMap::new();
        for node in &self.nodes {
            for child in &node.children {
                match self.node(child) {
                    None => problems.push(format!(
                        "hierarchy node `{}` lists unknown child `{child}`",
                        node.id
                    )),
                    Some(c) => {
                        *parent_count.entry(c.id.as_str()).or_default() += 1;
                        if c.level != node.level + 1 {
                            problems.push(format!(
                                "hierarchy child `{}` has level {} under parent `{}` at level {}",
                                c.id, c.level, node.id, node.level
                            ));
                        }
                    }
                }
            }
        }
        for (id, count) in &parent_count {
            if *count > 1 {
                problems.push(format!("hierarchy node `{id}` has {count} parents"));
            }
        }
        for node in &self.nodes {
            if !parent_count.contains_key(node.id.as_str()) && node.level != 0 {
                problems.push(format!(
                    "hierarchy root `{}` must have level 0, found {}",
                    node.id, node.level
                ));
            }
        }
        // Levels strictly increase along child edges, so a cycle always
        // produces a level mismatch above; nothing further to check.
        problems
    }
}

/// An observed object with one time series per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub id: String,
    #[serde(default)]
    pub level: u32,
    pub series: BTreeMap<String, Vec<(Tick, f64)>>,
}

impl TrackedObject {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            level: 0,
            series: BTreeMap::new(),
        }
    }

    pub fn with_series(mut self, parameter: impl Into<String>, points: Vec<(Tick, f64)>) -> Self {
        self.series.insert(parameter.into(), points);
        self
    }

    /// Points of `parameter` whose tick lies in `interval`.
    pub fn window(&self, parameter: &str, interval: TimeInterval) -> Option<Vec<(Tick, f64)>> {
        let series = self.series.get(parameter)?;
        Some(
            series
                .iter()
                .copied()
                .filter(|(t, _)| interval.contains(*t))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub id: String,
    pub rank: i64,
    #[serde(default)]
    pub level: u32,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub signature: BTreeSet<(String, TrendClass)>,
}

impl State {
    pub fn new(id: impl Into<String>, rank: i64) -> Self {
        Self {
            id: id.into(),
            rank,
            level: 0,
            signature: BTreeSet::new(),
        }
    }
}

fn default_delta() -> Tick {
    1
}

/// Timed arc `(src, dst, Δ)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arc {
    pub src: String,
    pub dst: String,
    #[serde(default = "default_delta")]
    pub delta: Tick,
}

impl Arc {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, delta: Tick) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            delta,
        }
    }
}

/// Objects per state. Empty state entries are not significant: two
/// distributions that differ only by empty sets compare equal.
#[derive(Debug, Clone, Default, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution {
    pub assignment: BTreeMap<String, BTreeSet<String>>,
}

impl PartialEq for Distribution {
    fn eq(&self, other: &Self) -> bool {
        let a = self.assignment.iter().filter(|(_, v)| !v.is_empty());
        let b = other.assignment.iter().filter(|(_, v)| !v.is_empty());
        a.eq(b)
    }
}

impl Distribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a [&'a str])>) -> Self {
        let mut d = Self::new();
        for (state, objects) in pairs {
            let set = d.assignment.entry(state.to_string()).or_default();
            set.extend(objects.iter().map(|o| o.to_string()));
        }
        d
    }

    /// All objects in one state.
    pub fn uniform<I, S>(state: &str, objects: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut d = Self::new();
        d.assignment
            .insert(state.to_string(), objects.into_iter().map(Into::into).collect());
        d
    }

    pub fn insert(&mut self, state: impl Into<String>, object: impl Into<String>) {
        self.assignment
            .entry(state.into())
            .or_default()
            .insert(object.into());
    }

    pub fn count(&self, state: &str) -> usize {
        self.assignment.get(state).map_or(0, BTreeSet::len)
    }

    /// Total number of (state, object) memberships.
    pub fn total(&self) -> usize {
        self.assignment.values().map(BTreeSet::len).sum()
    }

    pub fn states(&self) -> impl Iterator<Item = &str> {
        self.assignment.keys().map(String::as_str)
    }

    /// Object → state map. Fails if some object occupies two states.
    pub fn locate(&self) -> Result<BTreeMap<&str, &str>, ModelError> {
        let mut located: BTreeMap<&str, &str> = BTreeMap::new();
        for (state, objects) in &self.assignment {
            for object in objects {
                if let Some(first) = located.insert(object, state) {
                    return Err(ModelError::NotDisjoint {
                        object: object.clone(),
                        first: first.to_string(),
                        second: state.clone(),
                    });
                }
            }
        }
        Ok(located)
    }

    pub fn is_disjoint(&self) -> bool {
        self.locate().is_ok()
    }

    pub fn objects(&self) -> BTreeSet<&str> {
        self.assignment
            .values()
            .flat_map(|s| s.iter().map(String::as_str))
            .collect()
    }

    /// Applies moves produced by [`distribution_delta`].
    pub fn apply(&self, moves: &[Move]) -> Distribution {
        let mut next = self.clone();
        for m in moves {
            if let Some(set) = next.assignment.get_mut(&m.from) {
                set.remove(&m.object);
            }
            next.insert(m.to.clone(), m.object.clone());
        }
        next
    }

    /// Drops empty state entries.
    pub fn normalized(&self) -> Distribution {
        Distribution {
            assignment: self
                .assignment
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub tick: Tick,
    pub distribution: Distribution,
}

/// Hypothesized development diagram: ordered states, development and
/// critical-backstep arcs, and the required distribution schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalDiagram {
    pub id: String,
    pub states: Vec<State>,
    #[serde(default)]
    pub dev_arcs: Vec<Arc>,
    #[serde(default)]
    pub back_arcs: Vec<Arc>,
    pub s0: String,
    pub s_star: String,
    #[serde(default)]
    pub target_schedule: Vec<TargetDistribution>,
    /// Classifier whose leaf states place observed objects on this diagram.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<String>,
}

impl CanonicalDiagram {
    pub fn state(&self, id: &str) -> Option<&State> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn rank(&self, id: &str) -> Option<i64> {
        self.state(id).map(|s| s.rank)
    }

    pub fn has_state(&self, id: &str) -> bool {
        self.state(id).is_some()
    }

    /// Whether `(src, dst)` is a development or backstep arc.
    pub fn has_arc(&self, src: &str, dst: &str) -> bool {
        self.dev_arcs
            .iter()
            .chain(&self.back_arcs)
            .any(|a| a.src == src && a.dst == dst)
    }

    /// Linear chain `ids[0] → ids[1] → …` with unit Δ and ranks 0, 1, ….
    pub fn chain(id: impl Into<String>, ids: &[&str]) -> Self {
        let states = ids
            .iter()
            .enumerate()
            .map(|(i, s)| State::new(*s, i as i64))
            .collect();
        let dev_arcs = ids.windows(2).map(|w| Arc::new(w[0], w[1], 1)).collect();
        Self {
            id: id.into(),
            states,
            dev_arcs,
            back_arcs: Vec::new(),
            s0: ids.first().map(|s| s.to_string()).unwrap_or_default(),
            s_star: ids.last().map(|s| s.to_string()).unwrap_or_default(),
            target_schedule: Vec::new(),
            classifier: None,
        }
    }
}

/// A single rule violated by a diagram.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagramViolation {
    DuplicateState { state: String },
    UnknownState { site: String, state: String },
    DevArcOrder { src: String, dst: String },
    BackArcOrder { src: String, dst: String },
    ArcInBothSets { src: String, dst: String },
    ZeroDelta { src: String, dst: String },
    InitialNotMinimal { state: String },
    FinalNotMaximal { state: String },
    DistributionNotDisjoint { tick: Tick, object: String },
    ScheduleOrder { tick: Tick },
    ScheduleStart { tick: Tick },
}

impl fmt::Display for DiagramViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateState { state } => write!(f, "duplicate state id: {state}"),
            Self::UnknownState { site, state } => write!(f, "unknown state {state} in {site}"),
            Self::DevArcOrder { src, dst } => {
                write!(f, "devArc violates rank order: ({src},{dst})")
            }
            Self::BackArcOrder { src, dst } => {
                write!(f, "backArc violates rank order: ({src},{dst})")
            }
            Self::ArcInBothSets { src, dst } => {
                write!(f, "arc is both devArc and backArc: ({src},{dst})")
            }
            Self::ZeroDelta { src, dst } => write!(f, "arc has zero delta: ({src},{dst})"),
            Self::InitialNotMinimal { state } => {
                write!(f, "initial state {state} does not have minimal rank")
            }
            Self::FinalNotMaximal { state } => {
                write!(f, "final state {state} does not have maximal rank")
            }
            Self::DistributionNotDisjoint { .. } => write!(f, "distribution not disjoint"),
            Self::ScheduleOrder { tick } => {
                write!(f, "target schedule ticks not strictly increasing at {tick}")
            }
            Self::ScheduleStart { tick } => {
                write!(f, "target schedule must start at tick 0, starts at {tick}")
            }
        }
    }
}

/// Checks every structural rule of a canonical diagram. An empty report
/// means the diagram is valid.
pub fn validate_diagram(diagram: &CanonicalDiagram) -> Vec<DiagramViolation> {
    let mut report = Vec::new();
    let mut ranks: BTreeMap<&str, i64> = BTreeMap::new();
    for s in &diagram.states {
        if ranks.insert(&s.id, s.rank).is_some() {
            report.push(DiagramViolation::DuplicateState { state: s.id.clone() });
        }
    }
    let unknown = |site: &str, state: &str| DiagramViolation::UnknownState {
        site: site.to_string(),
        state: state.to_string(),
    };

    let check_arcs = |arcs: &[Arc], site: &str, report: &mut Vec<DiagramViolation>, dev: bool| {
        for a in arcs {
            let (Some(&rs), Some(&rd)) = (ranks.get(a.src.as_str()), ranks.get(a.dst.as_str()))
            else {
                for end in [&a.src, &a.dst] {
                    if !ranks.contains_key(end.as_str()) {
                        report.push(unknown(site, end));
                    }
                }
                continue;
            };
            if dev && rs >= rd {
                report.push(DiagramViolation::DevArcOrder {
                    src: a.src.clone(),
                    dst: a.dst.clone(),
                });
            }
            if !dev && rd >= rs {
                report.push(DiagramViolation::BackArcOrder {
                    src: a.src.clone(),
                    dst: a.dst.clone(),
                });
            }
            if a.delta == 0 {
                report.push(DiagramViolation::ZeroDelta {
                    src: a.src.clone(),
                    dst: a.dst.clone(),
                });
            }
        }
    };
    check_arcs(&diagram.dev_arcs, "devArcs", &mut report, true);
    check_arcs(&diagram.back_arcs, "backArcs", &mut report, false);

    let back: BTreeSet<(&str, &str)> = diagram
        .back_arcs
        .iter()
        .map(|a| (a.src.as_str(), a.dst.as_str()))
        .collect();
    for a in &diagram.dev_arcs {
        if back.contains(&(a.src.as_str(), a.dst.as_str())) {
            report.push(DiagramViolation::ArcInBothSets {
                src: a.src.clone(),
                dst: a.dst.clone(),
            });
        }
    }

    let min = ranks.values().min().copied();
    let max = ranks.values().max().copied();
    match ranks.get(diagram.s0.as_str()) {
        None => report.push(unknown("s0", &diagram.s0)),
        Some(r) if Some(*r) != min => report.push(DiagramViolation::InitialNotMinimal {
            state: diagram.s0.clone(),
        }),
        _ => {}
    }
    match ranks.get(diagram.s_star.as_str()) {
        None => report.push(unknown("sStar", &diagram.s_star)),
        Some(r) if Some(*r) != max => report.push(DiagramViolation::FinalNotMaximal {
            state: diagram.s_star.clone(),
        }),
        _ => {}
    }

    let mut last: Option<Tick> = None;
    for (i, target) in diagram.target_schedule.iter().enumerate() {
        if i == 0 && target.tick != 0 {
            report.push(DiagramViolation::ScheduleStart { tick: target.tick });
        }
        if last.is_some_and(|l| target.tick <= l) {
            report.push(DiagramViolation::ScheduleOrder { tick: target.tick });
        }
        last = Some(target.tick);
        if let Err(ModelError::NotDisjoint { object, .. }) = target.distribution.locate() {
            report.push(DiagramViolation::DistributionNotDisjoint {
                tick: target.tick,
                object,
            });
        }
        for state in target.distribution.states() {
            if !ranks.contains_key(state) {
                report.push(unknown(&format!("targetSchedule@{}", target.tick), state));
            }
        }
    }
    report
}

/// One object changing state between two snapshots.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Move {
    pub object: String,
    pub from: String,
    pub to: String,
}

/// Objects whose state differs between `prev` and `next`, ordered by object id.
pub fn distribution_delta(prev: &Distribution, next: &Distribution) -> Result<Vec<Move>, ModelError> {
    let before = prev.locate()?;
    let after = next.locate()?;
    for object in before.keys().chain(after.keys()) {
        if before.contains_key(object) != after.contains_key(object) {
            return Err(ModelError::ObjectUniverseMismatch {
                object: object.to_string(),
            });
        }
    }
    Ok(before
        .iter()
        .filter_map(|(object, from)| {
            let to = after[object];
            (to != *from).then(|| Move {
                object: object.to_string(),
                from: from.to_string(),
                to: to.to_string(),
            })
        })
        .collect())
}

/// Per-arc move counters η and per-state occupancy history N_i(t).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArcCounters {
    /// `src → dst → η`.
    pub per_arc: BTreeMap<String, BTreeMap<String, u64>>,
    /// `state → [(tick, N_i(tick))]`.
    pub per_state: BTreeMap<String, Vec<(Tick, u64)>>,
}

impl ArcCounters {
    pub fn eta(&self, src: &str, dst: &str) -> u64 {
        self.per_arc
            .get(src)
            .and_then(|m| m.get(dst))
            .copied()
            .unwrap_or(0)
    }

    pub fn occupancy(&self, state: &str, tick: Tick) -> Option<u64> {
        self.per_state
            .get(state)?
            .iter()
            .rev()
            .find(|(t, _)| *t == tick)
            .map(|(_, n)| *n)
    }

    /// Σ_i N_i(tick) over all recorded states.
    pub fn population_at(&self, tick: Tick) -> u64 {
        self.per_state
            .values()
            .filter_map(|h| h.iter().rev().find(|(t, _)| *t == tick).map(|(_, n)| *n))
            .sum()
    }

    pub fn recorded_ticks(&self) -> BTreeSet<Tick> {
        self.per_state
            .values()
            .flat_map(|h| h.iter().map(|(t, _)| *t))
            .collect()
    }
}

/// Why a subsystem entered a state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Cause {
    Initial,
    Symbol(String),
    Decay,
    Rule(String),
    Propagation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tick: Tick,
    pub state: String,
    pub cause: Cause,
}

/// State history of one subsystem. The first entry is its initial state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateTrace {
    pub diagram: String,
    pub entries: Vec<TraceEntry>,
}

impl StateTrace {
    pub fn new(diagram: impl Into<String>, initial: impl Into<String>) -> Self {
        Self {
            diagram: diagram.into(),
            entries: vec![TraceEntry {
                tick: 0,
                state: initial.into(),
                cause: Cause::Initial,
            }],
        }
    }

    pub fn push(&mut self, tick: Tick, state: impl Into<String>, cause: Cause) {
        debug_assert!(self.entries.last().is_none_or(|e| e.tick <= tick));
        self.entries.push(TraceEntry {
            tick,
            state: state.into(),
            cause,
        });
    }

    /// State held at `tick` (the last entry at or before it).
    pub fn state_at(&self, tick: Tick) -> Option<&str> {
        self.entries
            .iter()
            .take_while(|e| e.tick <= tick)
            .last()
            .map(|e| e.state.as_str())
    }

    pub fn final_state(&self) -> Option<&str> {
        self.entries.last().map(|e| e.state.as_str())
    }

    /// Earliest tick in `[from, until]` at which `state` is held.
    pub fn first_occupancy(&self, state: &str, from: Tick, until: Tick) -> Option<Tick> {
        if from > until {
            return None;
        }
        if self.state_at(from) == Some(state) {
            return Some(from);
        }
        self.entries
            .iter()
            .find(|e| e.tick > from && e.tick <= until && e.state == state)
            .map(|e| e.tick)
    }

    pub fn visited(&self, state: &str) -> bool {
        self.entries.iter().any(|e| e.state == state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub tick: Tick,
    pub metrics: BTreeMap<String, f64>,
}

/// Named metrics sampled over time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricTrace {
    pub points: Vec<MetricPoint>,
}
