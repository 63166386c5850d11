use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::partial::{PartialDiagram, SupportState};
use super::rules::{ElementaryRule, SystemState};
use crate::model::{Arc, Tick};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostOrder {
    #[default]
    TicksThenResources,
    ResourcesThenTicks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastConfig {
    #[serde(default)]
    pub order: CostOrder,
    #[serde(default = "default_expansions")]
    pub max_expansions: usize,
}

fn default_expansions() -> usize {
    1_000_000
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            order: CostOrder::default(),
            max_expansions: default_expansions(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub rule: String,
    pub subsystem: String,
    pub from: String,
    pub to: String,
    pub start: Tick,
    pub end: Tick,
    pub resources: f64,
}

/// Predicted development of one subsystem under a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevelopmentChain {
    pub diagram: String,
    pub visits: Vec<(Tick, String)>,
    pub arcs: Vec<Arc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub states: BTreeMap<String, String>,
    pub elapsed: Tick,
    pub spent: f64,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ForecastOutcome {
    Plan {
        steps: Vec<PlanStep>,
        ticks: Tick,
        resources: f64,
        support_ticks: Vec<Tick>,
        predicted: Vec<DevelopmentChain>,
    },
    Infeasible {
        prefix: Vec<SupportState>,
        frontier: Frontier,
        /// False when the expansion limit stopped the search early.
        exhausted: bool,
    },
}

impl ForecastOutcome {
    pub fn steps(&self) -> Option<&[PlanStep]> {
        match self {
            Self::Plan { steps, .. } => Some(steps),
            Self::Infeasible { .. } => None,
        }
    }
}

struct Node {
    parent: Option<usize>,
    step: Option<PlanStep>,
    states: Vec<String>,
    progress: Vec<usize>,
    met: Vec<Option<Tick>>,
    elapsed: Tick,
    spent: f64,
}

struct Search<'a> {
    diagrams: Vec<String>,
    /// Diagram position → support indices for that diagram, in list order.
    per: Vec<Vec<usize>>,
    partial: &'a PartialDiagram,
    clock: Tick,
}

impl Search<'_> {
    /// Advance support pointers at absolute tick `now`; false when some
    /// pending support state can no longer be met.
    fn advance(&self, node: &mut Node, now: Tick) -> bool {
        for (d, entries) in self.per.iter().enumerate() {
            while let Some(&i) = entries.get(node.progress[d]) {
                let s = &self.partial.support[i];
                if s.state == node.states[d] && now <= s.deadline {
                    node.met[i] = Some(now);
                    node.progress[d] += 1;
                } else {
                    break;
                }
            }
            if let Some(&i) = entries.get(node.progress[d]) {
                if self.partial.support[i].deadline < now {
                    return false;
                }
            }
        }
        true
    }

    fn prefix(&self, node: &Node) -> usize {
        node.met.iter().take_while(|m| m.is_some()).count()
    }

    fn done(&self, node: &Node) -> bool {
        node.met.iter().all(Option::is_some)
    }

    fn cost(&self, order: CostOrder, node: &Node) -> (u64, u64) {
        let spent = node.spent.max(0.0).to_bits();
        match order {
            CostOrder::TicksThenResources => (node.elapsed, spent),
            CostOrder::ResourcesThenTicks => (spent, node.elapsed),
        }
    }
}

fn path(arena: &[Node], mut at: usize) -> Vec<PlanStep> {
    let mut steps = Vec::new();
    while let Some(step) = &arena[at].step {
        steps.push(step.clone());
        at = arena[at].parent.expect("non-root nodes have parents");
    }
    steps.reverse();
    steps
}

/// Least-cost rule sequence that meets every support state in order within
/// budget. Decay is not modeled.
pub fn forecast(
    initial: &SystemState,
    rules: &[ElementaryRule],
    partial: &PartialDiagram,
    config: ForecastConfig,
) -> ForecastOutcome {
    let mut diagrams: BTreeSet<String> = initial.states.keys().cloned().collect();
    diagrams.extend(partial.support.iter().map(|s| s.diagram.clone()));
    let diagrams: Vec<String> = diagrams.into_iter().collect();
    let pos: BTreeMap<&str, usize> = diagrams.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let mut per = vec![Vec::new(); diagrams.len()];
    for (i, s) in partial.support.iter().enumerate() {
        per[pos[s.diagram.as_str()]].push(i);
    }
    let search = Search {
        per,
        partial,
        clock: initial.clock,
        diagrams: diagrams.clone(),
    };

    let mut root = Node {
        parent: None,
        step: None,
        states: diagrams
            .iter()
            .map(|d| initial.states.get(d).cloned().unwrap_or_default())
            .collect(),
        progress: vec![0; diagrams.len()],
        met: vec![None; partial.support.len()],
        elapsed: 0,
        spent: 0.0,
    };
    let alive = search.advance(&mut root, search.clock);
    let budget = partial.budget;
    let max_spend = budget.max_resources.min(initial.pool) + EPS;

    let mut arena = vec![root];
    let mut best = 0;
    let mut heap = BinaryHeap::new();
    if alive {
        heap.push(Reverse((search.cost(config.order, &arena[0]), 0usize)));
    }
    let mut seen: BTreeSet<(Vec<String>, Vec<usize>, Tick, u64)> = BTreeSet::new();
    let mut expansions = 0;
    let mut exhausted = true;

    while let Some(Reverse((_, at))) = heap.pop() {
        let node = &arena[at];
        let key = (node.states.clone(), node.progress.clone(), node.elapsed, node.spent.to_bits());
        if !seen.insert(key) {
            continue;
        }
        if search.done(node) {
            return plan(&search, &arena, at);
        }
        if (search.prefix(node), Reverse(search.cost(config.order, node)))
            > (search.prefix(&arena[best]), Reverse(search.cost(config.order, &arena[best])))
        {
            best = at;
        }
        expansions += 1;
        if expansions > config.max_expansions {
            exhausted = false;
            break;
        }
        for rule in rules {
            let node = &arena[at];
            let Some(&d) = pos.get(rule.subsystem.as_str()) else {
                continue;
            };
            if node.states[d] != rule.from {
                continue;
            }
            let elapsed = node.elapsed + rule.duration;
            let spent = node.spent + rule.resources;
            if elapsed > budget.max_ticks || spent > max_spend {
                continue;
            }
            let now = search.clock + elapsed;
            let mut child = Node {
                parent: Some(at),
                step: Some(PlanStep {
                    rule: rule.id.clone(),
                    subsystem: rule.subsystem.clone(),
                    from: rule.from.clone(),
                    to: rule.to.clone(),
                    start: search.clock + node.elapsed,
                    end: now,
                    resources: rule.resources,
                }),
                states: node.states.clone(),
                progress: node.progress.clone(),
                met: node.met.clone(),
                elapsed,
                spent,
            };
            child.states[d] = rule.to.clone();
            if search.advance(&mut child, now) {
                let cost = search.cost(config.order, &child);
                arena.push(child);
                heap.push(Reverse((cost, arena.len() - 1)));
            }
        }
    }

    let b = &arena[best];
    ForecastOutcome::Infeasible {
        prefix: partial.support[..search.prefix(b)].to_vec(),
        frontier: Frontier {
            states: diagrams.iter().cloned().zip(b.states.iter().cloned()).collect(),
            elapsed: b.elapsed,
            spent: b.spent,
            steps: path(&arena, best),
        },
        exhausted,
    }
}

fn plan(search: &Search, arena: &[Node], at: usize) -> ForecastOutcome {
    let node = &arena[at];
    let steps = path(arena, at);
    let predicted = search
        .diagrams
        .iter()
        .enumerate()
        .map(|(d, id)| {
            let mut visits = vec![(search.clock, arena[0].states[d].clone())];
            let mut arcs = Vec::new();
            for s in steps.iter().filter(|s| &s.subsystem == id) {
                visits.push((s.end, s.to.clone()));
                arcs.push(Arc::new(s.from.clone(), s.to.clone(), s.end - s.start));
            }
            DevelopmentChain {
                diagram: id.clone(),
                visits,
                arcs,
            }
        })
        .collect();
    ForecastOutcome::Plan {
        ticks: node.elapsed,
        resources: node.spent,
        support_ticks: node.met.iter().map(|m| m.expect("plan meets all support")).collect(),
        steps,
        predicted,
    }
}
