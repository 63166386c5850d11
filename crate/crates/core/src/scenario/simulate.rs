use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioError, SymbolKind, UpwardPolicy};
use crate::model::{Cause, StateTrace, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiringPolicy {
    /// A general symbol fires its group only when every child is ready.
    #[default]
    Strict,
    /// Fire the parent and whichever children are ready.
    Lenient,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default)]
    pub firing: FiringPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    Isolated,
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Downward,
    Upward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "group", rename_all = "snake_case")]
pub enum RedundancyReason {
    Busy,
    NoEnabledArc,
    ChildrenNotReady(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Fired,
    Redundant { why: RedundancyReason },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Delivered {
        symbol: String,
        kind: SymbolKind,
        recipient: String,
        #[serde(flatten)]
        outcome: Outcome,
    },
    GroupFired {
        group: String,
        direction: Direction,
    },
    TransitionStarted {
        diagram: String,
        src: String,
        dst: String,
        completes_at: Tick,
        coupling: Coupling,
        cause: Cause,
    },
    Arrived {
        diagram: String,
        state: String,
    },
    Decayed {
        diagram: String,
        src: String,
        dst: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: Tick,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Result of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub scenario: String,
    pub horizon: Tick,
    pub traces: BTreeMap<String, StateTrace>,
    pub events: Vec<Event>,
    /// Diagram id → its sStar.
    pub finals: BTreeMap<String, String>,
}

impl SimulationRun {
    pub fn metrics(&self) -> super::ScenarioMetrics {
        super::evaluate_scenario(self)
    }
}

#[derive(Debug, Clone)]
struct Pending {
    src: String,
    dst: String,
    completes_at: Tick,
    cause: Cause,
    origin: Option<usize>,
}

#[derive(Debug, Clone)]
struct Slot {
    id: String,
    state: String,
    pending: Option<Pending>,
    idle_since: Tick,
}

#[derive(Debug, Clone)]
struct Leg {
    slot: usize,
    src: String,
    dst: String,
    delta: Tick,
}

#[derive(Debug, Clone)]
struct Plan {
    id: String,
    symbol: String,
    parent: Leg,
    children: Vec<Leg>,
    upward: UpwardPolicy,
}

struct Runner<'a> {
    scenario: &'a Scenario,
    config: SimConfig,
    tick: Tick,
    slots: Vec<Slot>,
    index: BTreeMap<&'a str, usize>,
    plans: Vec<Plan>,
    /// (slot, src, dst) → group whose parent arc it is.
    parent_of: BTreeMap<(usize, String, String), usize>,
    /// (slot, src, dst) → (group, child position).
    child_of: BTreeMap<(usize, String, String), Vec<(usize, usize)>>,
    fired: Vec<BTreeSet<usize>>,
    traces: BTreeMap<String, StateTrace>,
    events: Vec<Event>,
}

/// Run `scenario` over ticks `0..=horizon`.
pub fn simulate(scenario: &Scenario, horizon: Tick, config: SimConfig) -> Result<SimulationRun, ScenarioError> {
    scenario.validate()?;
    if let Some(last) = scenario.schedule.iter().map(|e| e.tick).max() {
        if last > horizon {
            return Err(ScenarioError::HorizonBeforeSchedule { horizon, last });
        }
    }
    let mut runner = Runner::new(scenario, config);
    for t in 0..=horizon {
        runner.tick = t;
        runner.complete();
        for entry in scenario.schedule.iter().filter(|e| e.tick == t) {
            runner.deliver(&entry.symbol, entry.to.as_deref())?;
        }
        runner.upward();
        runner.decay()?;
    }
    Ok(SimulationRun {
        scenario: scenario.id.clone(),
        horizon,
        traces: runner.traces,
        events: runner.events,
        finals: scenario
            .diagrams
            .values()
            .map(|d| (d.id.clone(), d.s_star.clone()))
            .collect(),
    })
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario, config: SimConfig) -> Self {
        let slots: Vec<Slot> = scenario
            .diagrams
            .values()
            .map(|d| Slot {
                id: d.id.clone(),
                state: d.s0.clone(),
                pending: None,
                idle_since: 0,
            })
            .collect();
        let index: BTreeMap<&str, usize> = scenario
            .diagrams
            .keys()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();
        let leg = |r: &super::ArcRef| {
            let arc = scenario.diagrams[&r.diagram].coupled_arcs(&r.src, &r.dst)[0];
            (
                Leg {
                    slot: index[r.diagram.as_str()],
                    src: r.src.clone(),
                    dst: r.dst.clone(),
                    delta: arc.delta,
                },
                arc.symbol.clone(),
            )
        };
        let plans: Vec<Plan> = scenario
            .after_effect
            .iter()
            .map(|g| {
                let (parent, symbol) = leg(&g.parent);
                Plan {
                    id: g.id.clone(),
                    symbol,
                    parent,
                    children: g.children.iter().map(|c| leg(c).0).collect(),
                    upward: g.upward,
                }
            })
            .collect();
        let mut parent_of = BTreeMap::new();
        let mut child_of: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for (gi, p) in plans.iter().enumerate() {
            parent_of.insert((p.parent.slot, p.parent.src.clone(), p.parent.dst.clone()), gi);
            for (ci, c) in p.children.iter().enumerate() {
                child_of
                    .entry((c.slot, c.src.clone(), c.dst.clone()))
                    .or_default()
                    .push((gi, ci));
            }
        }
        let traces = scenario
            .diagrams
            .values()
            .map(|d| (d.id.clone(), StateTrace::new(d.id.clone(), d.s0.clone())))
            .collect();
        Self {
            scenario,
            config,
            tick: 0,
            fired: vec![BTreeSet::new(); plans.len()],
            slots,
            index,
            plans,
            parent_of,
            child_of,
            traces,
            events: Vec::new(),
        }
    }

    fn emit(&mut self, kind: EventKind) {
        self.events.push(Event { tick: self.tick, kind });
    }

    fn idle_at(&self, slot: usize, state: &str) -> bool {
        let s = &self.slots[slot];
        s.pending.is_none() && s.state == state
    }

    fn complete(&mut self) {
        for i in 0..self.slots.len() {
            let due = matches!(&self.slots[i].pending, Some(p) if p.completes_at == self.tick);
            if !due {
                continue;
            }
            let p = self.slots[i].pending.take().expect("pending transition");
            let slot = &mut self.slots[i];
            slot.state = p.dst.clone();
            slot.idle_since = self.tick;
            let id = slot.id.clone();
            self.traces
                .get_mut(&id)
                .expect("trace per diagram")
                .push(self.tick, p.dst.clone(), p.cause);
            self.emit(EventKind::Arrived {
                diagram: id,
                state: p.dst.clone(),
            });
            if let Some(groups) = self.child_of.get(&(i, p.src, p.dst)) {
                for &(g, c) in groups {
                    if Some(g) != p.origin {
                        self.fired[g].insert(c);
                    }
                }
            }
        }
    }

    fn start(&mut self, slot: usize, src: &str, dst: &str, delta: Tick, cause: Cause, coupling: Coupling, origin: Option<usize>) {
        let completes_at = self.tick + delta;
        let id = self.slots[slot].id.clone();
        self.emit(EventKind::TransitionStarted {
            diagram: id,
            src: src.to_string(),
            dst: dst.to_string(),
            completes_at,
            coupling,
            cause: cause.clone(),
        });
        self.slots[slot].pending = Some(Pending {
            src: src.to_string(),
            dst: dst.to_string(),
            completes_at,
            cause,
            origin,
        });
    }

    fn leg_ready(&self, leg: &Leg) -> bool {
        match self.parent_of.get(&(leg.slot, leg.src.clone(), leg.dst.clone())) {
            Some(&h) => self.group_ready(h),
            None => self.idle_at(leg.slot, &leg.src),
        }
    }

    fn group_ready(&self, g: usize) -> bool {
        let plan = &self.plans[g];
        if !self.idle_at(plan.parent.slot, &plan.parent.src) {
            return false;
        }
        match self.config.firing {
            FiringPolicy::Strict => plan.children.iter().all(|c| self.leg_ready(c)),
            FiringPolicy::Lenient => true,
        }
    }

    /// Fire group `g` downward: parent arc with `cause`, then every ready child.
    fn fire(&mut self, g: usize, cause: Cause, origin: Option<usize>) {
        let plan = self.plans[g].clone();
        self.emit(EventKind::GroupFired {
            group: plan.id.clone(),
            direction: Direction::Downward,
        });
        let ready: Vec<bool> = plan.children.iter().map(|c| self.leg_ready(c)).collect();
        let p = &plan.parent;
        self.start(p.slot, &p.src, &p.dst, p.delta, cause, Coupling::Coupled, origin);
        for (c, ok) in plan.children.iter().zip(ready) {
            if !ok {
                continue;
            }
            match self.parent_of.get(&(c.slot, c.src.clone(), c.dst.clone())) {
                Some(&h) => self.fire(h, Cause::Propagation, Some(g)),
                None => self.start(c.slot, &c.src, &c.dst, c.delta, Cause::Propagation, Coupling::Coupled, Some(g)),
            }
        }
        self.fired[g].clear();
    }

    fn recipients(&self, symbol: &str, kind: SymbolKind, to: Option<&str>) -> Vec<usize> {
        if let Some(d) = to {
            return vec![self.index[d]];
        }
        let accepts: Vec<usize> = self
            .scenario
            .diagrams
            .values()
            .filter(|d| d.symbol(symbol).is_some())
            .map(|d| self.index[d.id.as_str()])
            .collect();
        if kind == SymbolKind::Individual {
            return accepts;
        }
        let parents: BTreeSet<usize> = self
            .plans
            .iter()
            .filter(|p| p.symbol == symbol)
            .map(|p| p.parent.slot)
            .collect();
        if parents.is_empty() {
            accepts
        } else {
            parents.into_iter().collect()
        }
    }

    fn deliver(&mut self, symbol: &str, to: Option<&str>) -> Result<(), ScenarioError> {
        let kind = self
            .scenario
            .symbol_kind(symbol)
            .expect("schedule symbols are validated");
        for slot in self.recipients(symbol, kind, to) {
            self.deliver_one(symbol, kind, slot)?;
        }
        Ok(())
    }

    fn deliver_one(&mut self, symbol: &str, kind: SymbolKind, slot: usize) -> Result<(), ScenarioError> {
        let id = self.slots[slot].id.clone();
        let state = self.slots[slot].state.clone();
        let delivered = |outcome| EventKind::Delivered {
            symbol: symbol.to_string(),
            kind,
            recipient: id.clone(),
            outcome,
        };
        let redundant = |why| Outcome::Redundant { why };
        if self.slots[slot].pending.is_some() {
            self.emit(delivered(redundant(RedundancyReason::Busy)));
            return Ok(());
        }
        let ambiguous = || ScenarioError::AmbiguousArc {
            tick: self.tick,
            diagram: id.clone(),
            state: state.clone(),
            symbol: symbol.to_string(),
        };
        if kind == SymbolKind::General {
            let groups: Vec<usize> = (0..self.plans.len())
                .filter(|&g| {
                    let p = &self.plans[g];
                    p.symbol == symbol && p.parent.slot == slot && p.parent.src == state
                })
                .collect();
            match groups.as_slice() {
                [] => {}
                [g] => {
                    let g = *g;
                    if self.group_ready(g) {
                        self.emit(delivered(Outcome::Fired));
                        self.fire(g, Cause::Symbol(symbol.to_string()), None);
                    } else {
                        let why = RedundancyReason::ChildrenNotReady(self.plans[g].id.clone());
                        self.emit(delivered(redundant(why)));
                    }
                    return Ok(());
                }
                _ => return Err(ambiguous()),
            }
        }
        let diagram = &self.scenario.diagrams[&id];
        let arc = match diagram.enabled(&state, symbol).as_slice() {
            [] => None,
            [a] => Some((*a).clone()),
            _ => return Err(ambiguous()),
        };
        match arc {
            None => self.emit(delivered(redundant(RedundancyReason::NoEnabledArc))),
            Some(a) => {
                let coupling = match kind {
                    SymbolKind::Individual => Coupling::Isolated,
                    SymbolKind::General => Coupling::Coupled,
                };
                self.emit(delivered(Outcome::Fired));
                self.start(slot, &a.src, &a.dst, a.delta, Cause::Symbol(symbol.to_string()), coupling, None);
            }
        }
        Ok(())
    }

    fn upward(&mut self) {
        for g in 0..self.plans.len() {
            let plan = &self.plans[g];
            let count = self.fired[g].len();
            let met = match plan.upward {
                UpwardPolicy::All => count == plan.children.len(),
                UpwardPolicy::AtLeast(k) => count >= k,
            };
            if !met || !self.idle_at(plan.parent.slot, &plan.parent.src) {
                continue;
            }
            let p = plan.parent.clone();
            let id = plan.id.clone();
            self.emit(EventKind::GroupFired {
                group: id,
                direction: Direction::Upward,
            });
            self.start(p.slot, &p.src, &p.dst, p.delta, Cause::Propagation, Coupling::Coupled, None);
            self.fired[g].clear();
        }
    }

    fn decay(&mut self) -> Result<(), ScenarioError> {
        for i in 0..self.slots.len() {
            let slot = &self.slots[i];
            if slot.pending.is_some() {
                continue;
            }
            let idle = self.tick - slot.idle_since;
            let diagram = &self.scenario.diagrams[&slot.id];
            let due: Vec<_> = diagram
                .p2_arcs
                .iter()
                .filter(|a| a.src == slot.state && a.threshold.is_some_and(|d| idle >= d))
                .collect();
            let Some(first) = due.iter().min_by_key(|a| a.threshold) else {
                continue;
            };
            if due.iter().any(|a| a.threshold == first.threshold && a.dst != first.dst) {
                return Err(ScenarioError::AmbiguousArc {
                    tick: self.tick,
                    diagram: slot.id.clone(),
                    state: slot.state.clone(),
                    symbol: "decay".to_string(),
                });
            }
            let (id, src, dst) = (slot.id.clone(), first.src.clone(), first.dst.clone());
            let slot = &mut self.slots[i];
            slot.state = dst.clone();
            slot.idle_since = self.tick;
            self.traces
                .get_mut(&id)
                .expect("trace per diagram")
                .push(self.tick, dst.clone(), Cause::Decay);
            self.emit(EventKind::Decayed { diagram: id, src, dst });
        }
        Ok(())
    }
}
