//! Sequential and parallel composition of canonical diagrams,
//! generalization over Cartesian products of child states, and the
//! time-event consistency check.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_diagram, Arc, CanonicalDiagram, DiagramViolation, State, StateTrace, TargetDistribution,
    Tick, TimeInterval,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComposeError {
    #[error("nothing to compose")]
    Empty,
    #[error("interval {next} does not start after {prev}")]
    IntervalOrderViolation { prev: TimeInterval, next: TimeInterval },
    #[error("diagram `{diagram}` is defined on {found}, expected {expected}")]
    IntervalMismatch {
        diagram: String,
        expected: TimeInterval,
        found: TimeInterval,
    },
    #[error("child diagram `{diagram}` is invalid: {violations:?}")]
    InvalidChild {
        diagram: String,
        violations: Vec<DiagramViolation>,
    },
    #[error("state id `{0}` occurs in more than one child")]
    StateIdClash(String),
    #[error("tuple {tuple:?} belongs to blocks `{first}` and `{second}`")]
    OverlappingBlocks {
        tuple: Vec<String>,
        first: String,
        second: String,
    },
    #[error("block `{block}` contains {tuple:?}, which is not a tuple of child states")]
    UnknownChildState { block: String, tuple: Vec<String> },
    #[error("tuple {0:?} is not covered by any block")]
    UncoveredRequiredTuple(Vec<String>),
    #[error("block `{lower}` is ordered below `{higher}` but {dominating:?} dominates {dominated:?}")]
    OrderInconsistent {
        lower: String,
        higher: String,
        dominating: Vec<String>,
        dominated: Vec<String>,
    },
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("parent diagram is invalid: {0:?}")]
    InvalidParent(Vec<DiagramViolation>),
    #[error("unknown state id `{0}`")]
    UnknownStateId(String),
    #[error("state id `{0}` occurs in several children of the fragment")]
    AmbiguousStateId(String),
}

/// A diagram together with the time interval it is defined on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedDiagram {
    pub diagram: CanonicalDiagram,
    pub interval: TimeInterval,
}

impl TimedDiagram {
    pub fn new(diagram: CanonicalDiagram, interval: TimeInterval) -> Self {
        Self { diagram, interval }
    }
}

fn ensure_valid(d: &CanonicalDiagram) -> Result<(), ComposeError> {
    let violations = validate_diagram(d);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ComposeError::InvalidChild {
            diagram: d.id.clone(),
            violations,
        })
    }
}

/// Chains diagrams defined on strictly successive intervals. Child ranks
/// are shifted so every state of child `i` precedes every state of child
/// `i + 1`; a development arc bridges each `s*` to the next `s0` with Δ
/// equal to the gap between intervals. Target schedules are re-based onto
/// the composite interval.
pub fn compose_sequential(parts: &[TimedDiagram]) -> Result<TimedDiagram, ComposeError> {
    let (first, rest) = parts.split_first().ok_or(ComposeError::Empty)?;
    for p in parts {
        ensure_valid(&p.diagram)?;
    }
    for w in parts.windows(2) {
        if w[0].interval.end >= w[1].interval.start {
            return Err(ComposeError::IntervalOrderViolation {
                prev: w[0].interval,
                next: w[1].interval,
            });
        }
    }
    if rest.is_empty() {
        return Ok(first.clone());
    }

    let mut seen = BTreeSet::new();
    for p in parts {
        for s in &p.diagram.states {
            if !seen.insert(s.id.as_str()) {
                return Err(ComposeError::StateIdClash(s.id.clone()));
            }
        }
    }

    let min_rank = |d: &CanonicalDiagram| d.states.iter().map(|s| s.rank).min().unwrap_or(0);
    let mut base = min_rank(&first.diagram);
    let mut states = Vec::new();
    let mut dev_arcs = Vec::new();
    let mut back_arcs = Vec::new();
    let mut target_schedule = Vec::new();
    let mut prev: Option<&TimedDiagram> = None;
    for part in parts {
        let d = &part.diagram;
        let offset = base - min_rank(d);
        states.extend(d.states.iter().map(|s| State {
            rank: s.rank + offset,
            ..s.clone()
        }));
        base = states.iter().map(|s| s.rank).max().unwrap_or(base) + 1;
        if let Some(p) = prev {
            dev_arcs.push(Arc::new(
                p.diagram.s_star.clone(),
                d.s0.clone(),
                part.interval.start - p.interval.end,
            ));
        }
        dev_arcs.extend(d.dev_arcs.iter().cloned());
        back_arcs.extend(d.back_arcs.iter().cloned());
        let shift = part.interval.start - first.interval.start;
        target_schedule.extend(d.target_schedule.iter().map(|t| TargetDistribution {
            tick: t.tick + shift,
            distribution: t.distribution.clone(),
        }));
        prev = Some(part);
    }
    let last = parts.last().expect("non-empty");
    Ok(TimedDiagram {
        diagram: CanonicalDiagram {
            id: parts
                .iter()
                .map(|p| p.diagram.id.as_str())
                .collect::<Vec<_>>()
                .join("+"),
            states,
            dev_arcs,
            back_arcs,
            s0: first.diagram.s0.clone(),
            s_star: last.diagram.s_star.clone(),
            target_schedule,
            classifier: None,
        },
        interval: TimeInterval {
            start: first.interval.start,
            end: last.interval.end,
        },
    })
}

/// Diagrams running side by side on one interval. The joint state is the
/// tuple of child states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelFragment {
    pub interval: TimeInterval,
    pub children: Vec<CanonicalDiagram>,
}

impl ParallelFragment {
    pub fn joint_state_count(&self) -> usize {
        self.children.iter().map(|c| c.states.len()).product()
    }

    pub fn joint_states(&self) -> Vec<Vec<String>> {
        cartesian(&self.children)
    }

    /// Tuple of child states at `tick`, given one trace per child in order.
    pub fn joint_state(&self, traces: &[StateTrace], tick: Tick) -> Option<Vec<String>> {
        if traces.len() != self.children.len() {
            return None;
        }
        traces
            .iter()
            .map(|t| t.state_at(tick).map(str::to_string))
            .collect()
    }

    pub fn check_consistency(&self, requirement: &[Requirement]) -> Result<Consistency, ComposeError> {
        let children: Vec<&CanonicalDiagram> = self.children.iter().collect();
        consistency(&children, requirement)
    }
}

pub fn compose_parallel(parts: &[TimedDiagram]) -> Result<ParallelFragment, ComposeError> {
    let first = parts.first().ok_or(ComposeError::Empty)?;
    for p in parts {
        ensure_valid(&p.diagram)?;
        if p.interval != first.interval {
            return Err(ComposeError::IntervalMismatch {
                diagram: p.diagram.id.clone(),
                expected: first.interval,
                found: p.interval,
            });
        }
    }
    Ok(ParallelFragment {
        interval: first.interval,
        children: parts.iter().map(|p| p.diagram.clone()).collect(),
    })
}

fn cartesian(children: &[CanonicalDiagram]) -> Vec<Vec<String>> {
    children.iter().fold(vec![Vec::new()], |acc, child| {
        acc.iter()
            .flat_map(|prefix| {
                child.states.iter().map(move |s| {
                    let mut t = prefix.clone();
                    t.push(s.id.clone());
                    t
                })
            })
            .collect()
    })
}

/// A parent state: a set of tuples of child states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateBlock {
    pub id: String,
    pub members: Vec<Vec<String>>,
}

impl StateBlock {
    /// Block equal to the product of per-child state sets.
    pub fn product(id: impl Into<String>, coordinates: &[&[&str]]) -> Self {
        let members = coordinates.iter().fold(vec![Vec::new()], |acc, coord| {
            acc.iter()
                .flat_map(|prefix: &Vec<String>| {
                    coord.iter().map(move |s| {
                        let mut t = prefix.clone();
                        t.push(s.to_string());
                        t
                    })
                })
                .collect()
        });
        Self {
            id: id.into(),
            members,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    #[default]
    Partial,
    Total,
}

/// Parent diagram over blocks of child-state tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generalization {
    pub parent: CanonicalDiagram,
    pub children: Vec<String>,
    membership: BTreeMap<Vec<String>, String>,
}

impl Generalization {
    /// Block containing the tuple, if any.
    pub fn membership<S: AsRef<str>>(&self, tuple: &[S]) -> Option<&str> {
        let key: Vec<String> = tuple.iter().map(|s| s.as_ref().to_string()).collect();
        self.membership.get(&key).map(String::as_str)
    }

    pub fn covered(&self) -> impl Iterator<Item = (&Vec<String>, &str)> {
        self.membership.iter().map(|(k, v)| (k, v.as_str()))
    }

    /// Parent block over time, given one trace per child in order. A new
    /// point is emitted whenever the joint child state changes; this is the
    /// response of the hierarchical network at its top level.
    pub fn block_trajectory(&self, traces: &[StateTrace]) -> Vec<(Tick, Option<String>)> {
        let ticks: BTreeSet<Tick> = traces
            .iter()
            .flat_map(|t| t.entries.iter().map(|e| e.tick))
            .collect();
        let mut out: Vec<(Tick, Option<String>)> = Vec::new();
        for tick in ticks {
            let tuple: Option<Vec<&str>> = traces.iter().map(|t| t.state_at(tick)).collect();
            let block = tuple.and_then(|t| self.membership(&t).map(str::to_string));
            if out.last().is_none_or(|(_, b)| *b != block) {
                out.push((tick, block));
            }
        }
        out
    }
}

/// `a` dominates `b`: no coordinate lower, at least one higher.
fn dominates(a: &[i64], b: &[i64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Builds a parent diagram whose states are `blocks`, ranked in the order
/// given. Arcs are declared between block ids; each becomes a development
/// or backstep arc according to the block order.
pub fn generalize(
    id: impl Into<String>,
    children: &[CanonicalDiagram],
    blocks: &[StateBlock],
    arcs: &[Arc],
    coverage: Coverage,
) -> Result<Generalization, ComposeError> {
    if children.is_empty() || blocks.is_empty() {
        return Err(ComposeError::Empty);
    }
    for c in children {
        ensure_valid(c)?;
    }
    let mut ranked: Vec<Vec<Vec<i64>>> = Vec::with_capacity(blocks.len());
    let mut membership: BTreeMap<Vec<String>, String> = BTreeMap::new();
    for block in blocks {
        let mut ranks = Vec::with_capacity(block.members.len());
        for tuple in &block.members {
            let r: Option<Vec<i64>> = (tuple.len() == children.len())
                .then(|| children.iter().zip(tuple).map(|(c, s)| c.rank(s)).collect())
                .flatten();
            let r = r.ok_or_else(|| ComposeError::UnknownChildState {
                block: block.id.clone(),
                tuple: tuple.clone(),
            })?;
            ranks.push(r);
            if let Some(first) = membership.insert(tuple.clone(), block.id.clone()) {
                return Err(ComposeError::OverlappingBlocks {
                    tuple: tuple.clone(),
                    first,
                    second: block.id.clone(),
                });
            }
        }
        ranked.push(ranks);
    }
    if coverage == Coverage::Total {
        if let Some(t) = cartesian(children).into_iter().find(|t| !membership.contains_key(t)) {
            return Err(ComposeError::UncoveredRequiredTuple(t));
        }
    }
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            for (a, ra) in blocks[i].members.iter().zip(&ranked[i]) {
                for (b, rb) in blocks[j].members.iter().zip(&ranked[j]) {
                    if dominates(ra, rb) {
                        return Err(ComposeError::OrderInconsistent {
                            lower: blocks[i].id.clone(),
                            higher: blocks[j].id.clone(),
                            dominating: a.clone(),
                            dominated: b.clone(),
                        });
                    }
                }
            }
        }
    }

    let position: BTreeMap<&str, usize> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();
    let level = children
        .iter()
        .flat_map(|c| c.states.iter().map(|s| s.level))
        .min()
        .unwrap_or(0)
        .saturating_sub(1);
    let mut dev_arcs = Vec::new();
    let mut back_arcs = Vec::new();
    for arc in arcs {
        let src = *position
            .get(arc.src.as_str())
            .ok_or_else(|| ComposeError::UnknownBlock(arc.src.clone()))?;
        let dst = *position
            .get(arc.dst.as_str())
            .ok_or_else(|| ComposeError::UnknownBlock(arc.dst.clone()))?;
        if src <= dst {
            dev_arcs.push(arc.clone());
        } else {
            back_arcs.push(arc.clone());
        }
    }
    let parent = CanonicalDiagram {
        id: id.into(),
        states: blocks
            .iter()
            .enumerate()
            .map(|(i, b)| State {
                level,
                ..State::new(b.id.clone(), i as i64)
            })
            .collect(),
        dev_arcs,
        back_arcs,
        s0: blocks[0].id.clone(),
        s_star: blocks[blocks.len() - 1].id.clone(),
        target_schedule: Vec::new(),
        classifier: None,
    };
    let violations = validate_diagram(&parent);
    if !violations.is_empty() {
        return Err(ComposeError::InvalidParent(violations));
    }
    Ok(Generalization {
        parent,
        children: children.iter().map(|c| c.id.clone()).collect(),
        membership,
    })
}

/// Block id used for a single tuple, e.g. `(S11,S21)`.
pub fn tuple_id<S: AsRef<str>>(tuple: &[S]) -> String {
    let parts: Vec<&str> = tuple.iter().map(AsRef::as_ref).collect();
    format!("({})", parts.join(","))
}

/// Singleton blocks for every tuple of the children's product, ordered by
/// rank sum (a linear extension of coordinate-wise dominance), together with
/// the product of development arcs: any non-empty set of children advances
/// along one development arc each, taking the longest Δ among them.
pub fn singleton_product(children: &[CanonicalDiagram]) -> (Vec<StateBlock>, Vec<Arc>) {
    let mut tuples = cartesian(children);
    let rank_sum = |t: &Vec<String>| -> i64 {
        children
            .iter()
            .zip(t)
            .map(|(c, s)| c.rank(s).unwrap_or(0))
            .sum()
    };
    tuples.sort_by_key(|t| (rank_sum(t), t.clone()));
    let blocks = tuples
        .iter()
        .map(|t| StateBlock {
            id: tuple_id(t),
            members: vec![t.clone()],
        })
        .collect();

    let mut arcs = BTreeSet::new();
    for t in &tuples {
        // Per child: stay (None) or one of its outgoing development arcs.
        let options: Vec<Vec<Option<&Arc>>> = children
            .iter()
            .zip(t)
            .map(|(c, s)| {
                std::iter::once(None)
                    .chain(c.dev_arcs.iter().filter(|a| &a.src == s).map(Some))
                    .collect()
            })
            .collect();
        let combos = options.iter().fold(vec![Vec::new()], |acc, opts| {
            acc.iter()
                .flat_map(|prefix: &Vec<Option<&Arc>>| {
                    opts.iter().map(move |o| {
                        let mut p = prefix.clone();
                        p.push(*o);
                        p
                    })
                })
                .collect::<Vec<_>>()
        });
        for combo in combos {
            if combo.iter().all(Option::is_none) {
                continue;
            }
            let target: Vec<String> = combo
                .iter()
                .zip(t)
                .map(|(a, s)| a.map_or_else(|| s.clone(), |a| a.dst.clone()))
                .collect();
            let delta = combo.iter().flatten().map(|a| a.delta).max().unwrap_or(1);
            arcs.insert(Arc::new(tuple_id(t), tuple_id(&target), delta));
        }
    }
    (blocks, arcs.into_iter().collect())
}

/// One element of a prescribed time-event sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub state: String,
    pub deadline: Tick,
}

impl Requirement {
    pub fn new(state: impl Into<String>, deadline: Tick) -> Self {
        Self {
            state: state.into(),
            deadline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    /// Position in the requirement list.
    pub index: usize,
    pub state: String,
    pub deadline: Tick,
    /// Earliest feasible arrival, `None` when unreachable.
    pub earliest: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Consistency {
    /// Earliest arrival tick for each requirement.
    Consistent { arrivals: Vec<Tick> },
    Inconsistent { witness: Witness },
}

/// Δ-weighted earliest arrival from `from` to every state over development arcs.
pub fn earliest_arrivals(diagram: &CanonicalDiagram, from: &str) -> BTreeMap<String, Tick> {
    let mut dist: BTreeMap<String, Tick> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0, from.to_string())));
    while let Some(Reverse((d, s))) = heap.pop() {
        if dist.contains_key(&s) {
            continue;
        }
        for a in diagram.dev_arcs.iter().filter(|a| a.src == s) {
            if !dist.contains_key(&a.dst) {
                heap.push(Reverse((d + a.delta, a.dst.clone())));
            }
        }
        dist.insert(s, d);
    }
    dist
}

/// Checks that the required states are attained in the prescribed order,
/// each by its deadline, starting from `s0` at tick 0.
pub fn check_consistency(
    diagram: &CanonicalDiagram,
    requirement: &[Requirement],
) -> Result<Consistency, ComposeError> {
    consistency(&[diagram], requirement)
}

fn consistency(children: &[&CanonicalDiagram], requirement: &[Requirement]) -> Result<Consistency, ComposeError> {
    let mut owner = Vec::with_capacity(requirement.len());
    for r in requirement {
        let mut hits = children.iter().enumerate().filter(|(_, c)| c.has_state(&r.state));
        let (i, _) = hits
            .next()
            .ok_or_else(|| ComposeError::UnknownStateId(r.state.clone()))?;
        if hits.next().is_some() {
            return Err(ComposeError::AmbiguousStateId(r.state.clone()));
        }
        owner.push(i);
    }
    // Per child: current state and the tick it was reached.
    let mut position: Vec<(String, Tick)> = children.iter().map(|c| (c.s0.clone(), 0)).collect();
    let mut last_event = 0;
    let mut arrivals = Vec::with_capacity(requirement.len());
    for (index, (r, &child)) in requirement.iter().zip(&owner).enumerate() {
        let (at, since) = &position[child];
        let reach = earliest_arrivals(children[child], at);
        let earliest = reach.get(&r.state).map(|d| (since + d).max(last_event));
        match earliest {
            Some(t) if t <= r.deadline => {
                arrivals.push(t);
                last_event = t;
                position[child] = (r.state.clone(), t);
            }
            _ => {
                return Ok(Consistency::Inconsistent {
                    witness: Witness {
                        index,
                        state: r.state.clone(),
                        deadline: r.deadline,
                        earliest,
                    },
                })
            }
        }
    }
    Ok(Consistency::Consistent { arrivals })
}
