//! Controllable development: control diagrams driven by input symbols,
//! scenarios with coupled after-effects, scenario metrics, elementary
//! rules, goal trees, partial diagrams and forecast search.

mod forecast;
mod metrics;
mod partial;
mod rules;
mod simulate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ParameterHierarchy, State, Tick};

pub use forecast::{
    forecast, CostOrder, DevelopmentChain, ForecastConfig, ForecastOutcome, Frontier, PlanStep,
};
pub use metrics::{evaluate_scenario, metric_timeline, ScenarioMetrics};
pub use partial::{check_partial_diagram, Budget, PartialDiagram, PartialError, PartialVerdict, Refutation, SupportState};
pub use rules::{
    apply_rule, run_goal_tree, ElementaryRule, GoalNode, GoalReport, GoalStep, GoalTree, RuleFailure,
    StepOutcome, SystemState,
};
pub use simulate::{
    simulate, Coupling, Direction, Event, EventKind, FiringPolicy, Outcome, RedundancyReason, SimConfig,
    SimulationRun,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("malformed scenario: {}", .0.join("; "))]
    MalformedScenario(Vec<String>),
    #[error("ambiguous arc at tick {tick}: diagram `{diagram}` in `{state}` has several arcs for `{symbol}`")]
    AmbiguousArc {
        tick: Tick,
        diagram: String,
        state: String,
        symbol: String,
    },
    #[error("horizon {horizon} precedes the last scheduled tick {last}")]
    HorizonBeforeSchedule { horizon: Tick, last: Tick },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolKind {
    /// Affects only the addressed subsystem.
    Individual,
    /// Drives coupled arcs across hierarchy levels.
    General,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub id: String,
    pub kind: SymbolKind,
}

impl Symbol {
    pub fn individual(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: SymbolKind::Individual,
        }
    }

    pub fn general(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: SymbolKind::General,
        }
    }
}

fn default_delta() -> Tick {
    1
}

/// Transition initiated by an input symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlArc {
    pub src: String,
    pub dst: String,
    pub symbol: String,
    #[serde(default = "default_delta")]
    pub delta: Tick,
}

impl ControlArc {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, symbol: impl Into<String>, delta: Tick) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            symbol: symbol.into(),
            delta,
        }
    }
}

/// Backstep taken after `threshold` idle ticks. No threshold means the arc
/// never fires on its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecayArc {
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Tick>,
}

impl DecayArc {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, threshold: Tick) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            threshold: Some(threshold),
        }
    }
}

/// Hypothesis automaton of one subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDiagram {
    pub id: String,
    pub states: Vec<State>,
    pub s0: String,
    pub s_star: String,
    #[serde(default)]
    pub alphabet: Vec<Symbol>,
    #[serde(default)]
    pub p1_arcs: Vec<ControlArc>,
    #[serde(default)]
    pub p2_arcs: Vec<DecayArc>,
}

impl ControlDiagram {
    pub fn state(&self, id: &str) -> Option<&State> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn has_state(&self, id: &str) -> bool {
        self.state(id).is_some()
    }

    pub fn symbol(&self, id: &str) -> Option<&Symbol> {
        self.alphabet.iter().find(|s| s.id == id)
    }

    /// Symbol → the input-driven arcs it triggers.
    pub fn correspondence(&self) -> BTreeMap<&str, Vec<&ControlArc>> {
        let mut map: BTreeMap<&str, Vec<&ControlArc>> = BTreeMap::new();
        for a in &self.p1_arcs {
            map.entry(a.symbol.as_str()).or_default().push(a);
        }
        map
    }

    pub fn enabled(&self, state: &str, symbol: &str) -> Vec<&ControlArc> {
        self.p1_arcs
            .iter()
            .filter(|a| a.src == state && a.symbol == symbol)
            .collect()
    }

    /// Input-driven arcs between `src` and `dst` labeled with a general symbol.
    pub fn coupled_arcs(&self, src: &str, dst: &str) -> Vec<&ControlArc> {
        self.p1_arcs
            .iter()
            .filter(|a| {
                a.src == src
                    && a.dst == dst
                    && self.symbol(&a.symbol).is_some_and(|s| s.kind == SymbolKind::General)
            })
            .collect()
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = BTreeSet::new();
        for s in &self.states {
            if !ids.insert(s.id.as_str()) {
                out.push(format!("duplicate state `{}`", s.id));
            }
        }
        for (site, s) in [("s0", &self.s0), ("sStar", &self.s_star)] {
            if !ids.contains(s.as_str()) {
                out.push(format!("{site} `{s}` is not a state"));
            }
        }
        let mut symbols = BTreeSet::new();
        for s in &self.alphabet {
            if !symbols.insert(s.id.as_str()) {
                out.push(format!("duplicate symbol `{}`", s.id));
            }
        }
        for a in &self.p1_arcs {
            for end in [&a.src, &a.dst] {
                if !ids.contains(end.as_str()) {
                    out.push(format!("p1 arc ({},{}) references unknown state `{end}`", a.src, a.dst));
                }
            }
            if !symbols.contains(a.symbol.as_str()) {
                out.push(format!("p1 arc ({},{}) uses unknown symbol `{}`", a.src, a.dst, a.symbol));
            }
            if a.delta == 0 {
                out.push(format!("p1 arc ({},{}) has zero delta", a.src, a.dst));
            }
        }
        let p1: BTreeSet<(&str, &str)> = self
            .p1_arcs
            .iter()
            .map(|a| (a.src.as_str(), a.dst.as_str()))
            .collect();
        for a in &self.p2_arcs {
            match (self.state(&a.src), self.state(&a.dst)) {
                (Some(s), Some(d)) if d.rank >= s.rank => {
                    out.push(format!("p2 arc ({},{}) does not decrease rank", a.src, a.dst))
                }
                (Some(_), Some(_)) => {}
                _ => out.push(format!("p2 arc ({},{}) references an unknown state", a.src, a.dst)),
            }
            if p1.contains(&(a.src.as_str(), a.dst.as_str())) {
                out.push(format!("arc ({},{}) is in both P1 and P2", a.src, a.dst));
            }
            if a.threshold == Some(0) {
                out.push(format!("p2 arc ({},{}) has zero decay threshold", a.src, a.dst));
            }
        }
        out
    }

    /// Linear chain driven by one individual symbol per step:
    /// `states[i] → states[i+1]` on `symbols[i]`.
    pub fn chain(id: impl Into<String>, states: &[&str], symbols: &[&str]) -> Self {
        debug_assert_eq!(symbols.len() + 1, states.len());
        Self {
            id: id.into(),
            states: states
                .iter()
                .enumerate()
                .map(|(i, s)| State::new(*s, i as i64))
                .collect(),
            s0: states[0].to_string(),
            s_star: states[states.len() - 1].to_string(),
            alphabet: symbols.iter().map(|s| Symbol::individual(*s)).collect(),
            p1_arcs: states
                .windows(2)
                .zip(symbols)
                .map(|(w, s)| ControlArc::new(w[0], w[1], *s, 1))
                .collect(),
            p2_arcs: Vec::new(),
        }
    }
}

/// Reference to an input-driven arc of one diagram.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArcRef {
    pub diagram: String,
    pub src: String,
    pub dst: String,
}

impl ArcRef {
    pub fn new(diagram: impl Into<String>, src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self {
            diagram: diagram.into(),
            src: src.into(),
            dst: dst.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpwardPolicy {
    /// Parent fires once every child arc has fired.
    #[default]
    All,
    /// Parent fires once at least `k` child arcs have fired.
    AtLeast(usize),
}

/// A parent-arc bound to child-arcs of subsystems one level below.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoupledGroup {
    pub id: String,
    pub parent: ArcRef,
    pub children: Vec<ArcRef>,
    #[serde(default)]
    pub upward: UpwardPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledSymbol {
    pub tick: Tick,
    pub symbol: String,
    /// Addressee diagram; `None` broadcasts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
}

impl ScheduledSymbol {
    pub fn to(tick: Tick, symbol: impl Into<String>, diagram: impl Into<String>) -> Self {
        Self {
            tick,
            symbol: symbol.into(),
            to: Some(diagram.into()),
        }
    }

    pub fn broadcast(tick: Tick, symbol: impl Into<String>) -> Self {
        Self {
            tick,
            symbol: symbol.into(),
            to: None,
        }
    }
}

/// Scenario as stored in a model bundle: diagrams and groups by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub diagrams: Vec<String>,
    #[serde(default)]
    pub mapping: BTreeMap<String, String>,
    #[serde(default)]
    pub schedule: Vec<ScheduledSymbol>,
    #[serde(default)]
    pub after_effect: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Tick>,
}

/// Resolved scenario: diagram system, hierarchy, mapping, symbol schedule
/// and after-effect scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub diagrams: BTreeMap<String, ControlDiagram>,
    #[serde(default)]
    pub hierarchy: ParameterHierarchy,
    /// Hierarchy node → diagram id.
    #[serde(default)]
    pub mapping: BTreeMap<String, String>,
    #[serde(default)]
    pub schedule: Vec<ScheduledSymbol>,
    #[serde(default)]
    pub after_effect: Vec<CoupledGroup>,
}

/// Load-time validation result.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCheck {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ScenarioCheck {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl Scenario {
    pub fn new(id: impl Into<String>, diagrams: impl IntoIterator<Item = ControlDiagram>) -> Self {
        Self {
            id: id.into(),
            diagrams: diagrams.into_iter().map(|d| (d.id.clone(), d)).collect(),
            hierarchy: ParameterHierarchy::default(),
            mapping: BTreeMap::new(),
            schedule: Vec::new(),
            after_effect: Vec::new(),
        }
    }

    /// Kind of a symbol as declared by the diagrams of this scenario.
    pub fn symbol_kind(&self, symbol: &str) -> Option<SymbolKind> {
        self.diagrams
            .values()
            .find_map(|d| d.symbol(symbol).map(|s| s.kind))
    }

    fn node_of(&self, diagram: &str) -> Option<&str> {
        self.mapping
            .iter()
            .find(|(_, d)| d.as_str() == diagram)
            .map(|(n, _)| n.as_str())
    }

    pub fn check(&self) -> ScenarioCheck {
        let mut check = ScenarioCheck::default();
        let errors = &mut check.errors;
        for (id, d) in &self.diagrams {
            if id != &d.id {
                errors.push(format!("diagram keyed `{id}` has id `{}`", d.id));
            }
            errors.extend(d.problems().into_iter().map(|p| format!("diagram `{id}`: {p}")));
        }
        for (node, diagram) in &self.mapping {
            if !self.hierarchy.contains(node) {
                errors.push(format!("mapping uses unknown hierarchy node `{node}`"));
            }
            if !self.diagrams.contains_key(diagram) {
                errors.push(format!("mapping targets unknown diagram `{diagram}`"));
            }
        }

        let mut kinds: BTreeMap<&str, SymbolKind> = BTreeMap::new();
        for d in self.diagrams.values() {
            for s in &d.alphabet {
                if let Some(k) = kinds.insert(&s.id, s.kind) {
                    if k != s.kind {
                        errors.push(format!("symbol `{}` declared both individual and general", s.id));
                    }
                }
            }
        }

        let mut parent_arcs = BTreeSet::new();
        let mut coupled_symbols = BTreeSet::new();
        for g in &self.after_effect {
            let arc_ok = |r: &ArcRef, errors: &mut Vec<String>| -> Option<String> {
                let Some(d) = self.diagrams.get(&r.diagram) else {
                    errors.push(format!("group `{}` references unknown diagram `{}`", g.id, r.diagram));
                    return None;
                };
                match d.coupled_arcs(&r.src, &r.dst).as_slice() {
                    [a] => Some(a.symbol.clone()),
                    [] => {
                        errors.push(format!(
                            "group `{}`: ({},{}) is not a coupled arc of `{}`",
                            g.id, r.src, r.dst, r.diagram
                        ));
                        None
                    }
                    _ => {
                        errors.push(format!(
                            "group `{}`: ({},{}) matches several coupled arcs of `{}`",
                            g.id, r.src, r.dst, r.diagram
                        ));
                        None
                    }
                }
            };
            if let Some(sym) = arc_ok(&g.parent, errors) {
                coupled_symbols.insert(sym);
            }
            if !parent_arcs.insert(g.parent.clone()) {
                errors.push(format!("parent arc of group `{}` is bound by another group", g.id));
            }
            if g.children.is_empty() {
                errors.push(format!("group `{}` has no child arcs", g.id));
            }
            let mut seen = BTreeSet::new();
            for c in &g.children {
                arc_ok(c, errors);
                if !seen.insert(c.diagram.as_str()) || c.diagram == g.parent.diagram {
                    errors.push(format!(
                        "group `{}`: child arcs must come from distinct child diagrams (`{}`)",
                        g.id, c.diagram
                    ));
                }
                match (self.node_of(&g.parent.diagram), self.node_of(&c.diagram)) {
                    (Some(p), Some(n)) if self.hierarchy.is_child_of(n, p) => {}
                    (Some(_), Some(_)) => errors.push(format!(
                        "group `{}`: `{}` is not a child of `{}` in the hierarchy",
                        g.id, c.diagram, g.parent.diagram
                    )),
                    _ => errors.push(format!(
                        "group `{}`: diagrams `{}` and `{}` must be mapped onto the hierarchy",
                        g.id, g.parent.diagram, c.diagram
                    )),
                }
            }
            if let UpwardPolicy::AtLeast(k) = g.upward {
                if k == 0 || k > g.children.len() {
                    errors.push(format!("group `{}`: at_least({k}) is out of range", g.id));
                }
            }
        }

        for entry in &self.schedule {
            let Some(kind) = kinds.get(entry.symbol.as_str()) else {
                errors.push(format!("schedule uses unknown symbol `{}` at tick {}", entry.symbol, entry.tick));
                continue;
            };
            if let Some(to) = &entry.to {
                match self.diagrams.get(to) {
                    None => errors.push(format!("schedule addresses unknown diagram `{to}` at tick {}", entry.tick)),
                    Some(d) if d.symbol(&entry.symbol).is_none() => errors.push(format!(
                        "diagram `{to}` does not accept symbol `{}` (tick {})",
                        entry.symbol, entry.tick
                    )),
                    Some(_) => {}
                }
            }
            if *kind == SymbolKind::General && !coupled_symbols.contains(&entry.symbol) {
                check
                    .warnings
                    .push(format!("general symbol `{}` triggers no parent-arc", entry.symbol));
            }
        }
        check
    }

    pub fn validate(&self) -> Result<ScenarioCheck, ScenarioError> {
        let check = self.check();
        if check.is_ok() {
            Ok(check)
        } else {
            Err(ScenarioError::MalformedScenario(check.errors))
        }
    }

    /// Copy of the scenario without one diagram, its mapping entries and
    /// schedule entries only it could receive.
    pub fn without_diagram(&self, id: &str) -> Scenario {
        let mut s = self.clone();
        s.diagrams.remove(id);
        s.mapping.retain(|_, d| d != id);
        let schedule = std::mem::take(&mut s.schedule);
        s.schedule = schedule
            .into_iter()
            .filter(|e| e.to.as_deref() != Some(id) && s.symbol_kind(&e.symbol).is_some())
            .collect();
        s
    }
}
