use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ControlDiagram;
use crate::model::{StateTrace, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportState {
    pub diagram: String,
    pub state: String,
    pub deadline: Tick,
}

impl SupportState {
    pub fn new(diagram: impl Into<String>, state: impl Into<String>, deadline: Tick) -> Self {
        Self {
            diagram: diagram.into(),
            state: state.into(),
            deadline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_ticks: Tick,
    pub max_resources: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDiagram {
    pub id: String,
    pub support: Vec<SupportState>,
    pub budget: Budget,
}

impl PartialDiagram {
    /// The pair of states special case: every diagram at s0 at tick 0 and at
    /// sStar by `horizon`.
    pub fn endpoints(id: impl Into<String>, diagrams: &BTreeMap<String, ControlDiagram>, horizon: Tick) -> Self {
        let mut support: Vec<SupportState> = diagrams
            .values()
            .map(|d| SupportState::new(&d.id, &d.s0, 0))
            .collect();
        support.extend(diagrams.values().map(|d| SupportState::new(&d.id, &d.s_star, horizon)));
        Self {
            id: id.into(),
            support,
            budget: Budget {
                max_ticks: horizon,
                max_resources: 0.0,
            },
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.support.windows(2).any(|w| w[1].deadline < w[0].deadline) {
            out.push("support deadlines decrease along the list".to_string());
        }
        if !(self.budget.max_resources >= 0.0) {
            out.push("resource budget is negative".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartialError {
    #[error("support state `{state}` is not a state of diagram `{diagram}`")]
    UnknownSupportState { diagram: String, state: String },
    #[error("no trace for diagram `{0}`")]
    MissingTrace(String),
    #[error("trace horizon {horizon} does not cover deadline {deadline}")]
    TraceTooShort { horizon: Tick, deadline: Tick },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "refutation", rename_all = "snake_case")]
pub enum Refutation {
    Missed {
        index: usize,
        support: SupportState,
        actual: Option<String>,
    },
    BudgetExceeded {
        ticks: Tick,
        max_ticks: Tick,
        resources: f64,
        max_resources: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PartialVerdict {
    /// Tick at which each support state was met.
    Confirmed { attained: Vec<Tick> },
    Refuted(Refutation),
}

impl PartialVerdict {
    pub fn confirmed(&self) -> bool {
        matches!(self, Self::Confirmed { .. })
    }
}

/// Each support state must be occupied by its diagram at or before its
/// deadline, no earlier than that diagram's previous support state.
pub fn check_partial_diagram(
    traces: &BTreeMap<String, StateTrace>,
    horizon: Tick,
    resources_spent: f64,
    partial: &PartialDiagram,
    diagrams: &BTreeMap<String, ControlDiagram>,
) -> Result<PartialVerdict, PartialError> {
    for s in &partial.support {
        if !diagrams.get(&s.diagram).is_some_and(|d| d.has_state(&s.state)) {
            return Err(PartialError::UnknownSupportState {
                diagram: s.diagram.clone(),
                state: s.state.clone(),
            });
        }
        if !traces.contains_key(&s.diagram) {
            return Err(PartialError::MissingTrace(s.diagram.clone()));
        }
    }
    if let Some(deadline) = partial.support.iter().map(|s| s.deadline).max() {
        if deadline > horizon {
            return Err(PartialError::TraceTooShort { horizon, deadline });
        }
    }

    let mut since: BTreeMap<&str, Tick> = BTreeMap::new();
    let mut attained = Vec::with_capacity(partial.support.len());
    for (index, s) in partial.support.iter().enumerate() {
        let trace = &traces[&s.diagram];
        let from = since.get(s.diagram.as_str()).copied().unwrap_or(0);
        match trace.first_occupancy(&s.state, from, s.deadline) {
            Some(t) => {
                since.insert(&s.diagram, t);
                attained.push(t);
            }
            None => {
                return Ok(PartialVerdict::Refuted(Refutation::Missed {
                    index,
                    support: s.clone(),
                    actual: trace.state_at(s.deadline).map(str::to_string),
                }))
            }
        }
    }
    let b = partial.budget;
    if horizon > b.max_ticks || resources_spent > b.max_resources {
        return Ok(PartialVerdict::Refuted(Refutation::BudgetExceeded {
            ticks: horizon,
            max_ticks: b.max_ticks,
            resources: resources_spent,
            max_resources: b.max_resources,
        }));
    }
    Ok(PartialVerdict::Confirmed { attained })
}
