use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::simulate::{Coupling, Event, EventKind, Outcome, SimulationRun};
use super::SymbolKind;
use crate::model::{MetricPoint, MetricTrace, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub completeness: f64,
    pub redundancy_count: u64,
    pub omitted_possibilities: u64,
    pub complexness: f64,
    pub coupled_transitions: u64,
    pub total_transitions: u64,
}

#[derive(Default)]
struct Tally {
    redundant: u64,
    omitted: u64,
    coupled: u64,
    total: u64,
    individual: BTreeSet<(Tick, String)>,
    general: BTreeSet<(Tick, String)>,
    mixed: u64,
}

impl Tally {
    fn absorb(&mut self, e: &Event) {
        match &e.kind {
            EventKind::Delivered {
                kind,
                recipient,
                outcome,
                ..
            } => {
                if matches!(outcome, Outcome::Redundant { .. }) {
                    self.redundant += 1;
                }
                let key = (e.tick, recipient.clone());
                let (mine, other) = match kind {
                    SymbolKind::Individual => (&mut self.individual, &self.general),
                    SymbolKind::General => (&mut self.general, &self.individual),
                };
                if mine.insert(key.clone()) && other.contains(&key) {
                    self.mixed += 1;
                }
            }
            EventKind::TransitionStarted { coupling, .. } => {
                self.total += 1;
                if *coupling == Coupling::Coupled {
                    self.coupled += 1;
                }
            }
            EventKind::Decayed { .. } => {
                self.total += 1;
                self.omitted += 1;
            }
            EventKind::GroupFired { .. } | EventKind::Arrived { .. } => {}
        }
    }

    fn metrics(&self, complete: usize, subsystems: usize) -> ScenarioMetrics {
        ScenarioMetrics {
            completeness: if subsystems == 0 {
                0.0
            } else {
                complete as f64 / subsystems as f64
            },
            redundancy_count: self.redundant + self.mixed,
            omitted_possibilities: self.omitted,
            complexness: if self.total == 0 {
                0.0
            } else {
                self.coupled as f64 / self.total as f64
            },
            coupled_transitions: self.coupled,
            total_transitions: self.total,
        }
    }
}

/// Tick at which each subsystem first held its sStar.
fn attainment(run: &SimulationRun) -> BTreeMap<&str, Option<Tick>> {
    run.traces
        .iter()
        .map(|(id, trace)| {
            let goal = run.finals.get(id).map(String::as_str);
            let at = trace
                .entries
                .iter()
                .find(|e| Some(e.state.as_str()) == goal)
                .map(|e| e.tick);
            (id.as_str(), at)
        })
        .collect()
}

pub fn evaluate_scenario(run: &SimulationRun) -> ScenarioMetrics {
    let mut tally = Tally::default();
    run.events.iter().for_each(|e| tally.absorb(e));
    let reached = attainment(run).values().filter(|t| t.is_some()).count();
    tally.metrics(reached, run.traces.len())
}

/// The four scenario metrics sampled at the end of every tick.
pub fn metric_timeline(run: &SimulationRun) -> MetricTrace {
    let reached = attainment(run);
    let mut tally = Tally::default();
    let mut events = run.events.iter().peekable();
    let mut points = Vec::with_capacity(run.horizon as usize + 1);
    for t in 0..=run.horizon {
        while let Some(e) = events.next_if(|e| e.tick <= t) {
            tally.absorb(e);
        }
        let done = reached.values().filter(|a| a.is_some_and(|a| a <= t)).count();
        let m = tally.metrics(done, run.traces.len());
        points.push(MetricPoint {
            tick: t,
            metrics: BTreeMap::from([
                ("completeness".to_string(), m.completeness),
                ("redundancy".to_string(), m.redundancy_count as f64),
                ("omitted_possibilities".to_string(), m.omitted_possibilities as f64),
                ("complexness".to_string(), m.complexness),
            ]),
        });
    }
    MetricTrace { points }
}
