use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ControlDiagram;
use crate::model::Tick;

const POOL_EPS: f64 = 1e-9;

/// IF `subsystem` is in `from` THEN apply `action`, spending `resources`
/// over `duration` ticks, to reach `to` without falling back into `forbidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementaryRule {
    pub id: String,
    pub subsystem: String,
    pub from: String,
    pub to: String,
    pub forbidden: String,
    pub action: String,
    pub resources: f64,
    pub duration: Tick,
}

impl ElementaryRule {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.from == self.to {
            out.push(format!("rule `{}`: from equals to", self.id));
        }
        if self.forbidden == self.from {
            out.push(format!("rule `{}`: forbidden state is the source", self.id));
        }
        if self.duration == 0 {
            out.push(format!("rule `{}`: zero duration", self.id));
        }
        if !(self.resources >= 0.0 && self.resources.is_finite()) {
            out.push(format!("rule `{}`: resources must be a non-negative number", self.id));
        }
        out
    }
}

/// Per-subsystem states, resource pool and clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub states: BTreeMap<String, String>,
    pub pool: f64,
    #[serde(default)]
    pub clock: Tick,
    /// Tick each subsystem last arrived in its state; absent means 0.
    #[serde(default)]
    pub idle_since: BTreeMap<String, Tick>,
}

impl SystemState {
    pub fn new<I, K, V>(states: I, pool: f64) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            states: states.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            pool,
            clock: 0,
            idle_since: BTreeMap::new(),
        }
    }

    pub fn at(mut self, tick: Tick) -> Self {
        self.clock = tick;
        self
    }

    fn arrive(&mut self, subsystem: &str, state: &str, tick: Tick) {
        self.states.insert(subsystem.to_string(), state.to_string());
        self.idle_since.insert(subsystem.to_string(), tick);
        self.clock = tick;
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "failure", rename_all = "snake_case")]
pub enum RuleFailure {
    #[error("`{subsystem}` is in {actual:?}, rule needs `{expected}`")]
    WrongSourceState {
        subsystem: String,
        expected: String,
        actual: Option<String>,
    },
    #[error("rule needs {required} resources, pool holds {available}")]
    InsufficientResources { required: f64, available: f64 },
    #[error("`{subsystem}` fell back into forbidden `{state}` at tick {at}")]
    ForbiddenBackstep { subsystem: String, state: String, at: Tick },
    #[error("`{subsystem}` decayed into `{state}` at tick {at} before the rule completed")]
    Interrupted { subsystem: String, state: String, at: Tick },
}

impl RuleFailure {
    /// Whether the failure consumed the rule's resources.
    pub fn is_sunk(&self) -> bool {
        matches!(self, Self::ForbiddenBackstep { .. } | Self::Interrupted { .. })
    }
}

/// Apply `rule` at `state.clock`. On a sunk failure the returned state
/// (pool debited, subsystem moved by decay) is carried in the error pair.
pub fn apply_rule(
    rule: &ElementaryRule,
    state: &SystemState,
    diagrams: &BTreeMap<String, ControlDiagram>,
) -> Result<SystemState, (RuleFailure, SystemState)> {
    let actual = state.states.get(&rule.subsystem);
    if actual != Some(&rule.from) {
        let failure = RuleFailure::WrongSourceState {
            subsystem: rule.subsystem.clone(),
            expected: rule.from.clone(),
            actual: actual.cloned(),
        };
        return Err((failure, state.clone()));
    }
    if state.pool + POOL_EPS < rule.resources {
        let failure = RuleFailure::InsufficientResources {
            required: rule.resources,
            available: state.pool,
        };
        return Err((failure, state.clone()));
    }
    let mut next = state.clone();
    next.pool -= rule.resources;
    let start = state.clock;
    let end = start + rule.duration;

    let idle = state.idle_since.get(&rule.subsystem).copied().unwrap_or(0);
    let decay = diagrams.get(&rule.subsystem).and_then(|d| {
        d.p2_arcs
            .iter()
            .filter(|a| a.src == rule.from)
            .filter_map(|a| a.threshold.map(|th| ((idle + th).max(start), a.dst.as_str())))
            .min()
    });
    if let Some((at, dst)) = decay.filter(|(at, _)| *at < end) {
        next.arrive(&rule.subsystem, dst, at);
        let failure = if dst == rule.forbidden {
            RuleFailure::ForbiddenBackstep {
                subsystem: rule.subsystem.clone(),
                state: dst.to_string(),
                at,
            }
        } else {
            RuleFailure::Interrupted {
                subsystem: rule.subsystem.clone(),
                state: dst.to_string(),
                at,
            }
        };
        return Err((failure, next));
    }
    next.arrive(&rule.subsystem, &rule.to, end);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalNode {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<GoalNode>,
}

impl GoalNode {
    pub fn terminal(id: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            rule: Some(rule.into()),
            children: Vec::new(),
        }
    }

    pub fn goal(id: impl Into<String>, children: Vec<GoalNode>) -> Self {
        Self {
            id: id.into(),
            rule: None,
            children,
        }
    }

    fn is_terminal(&self) -> bool {
        self.children.is_empty()
    }

    fn terminals<'a>(&'a self, out: &mut Vec<&'a GoalNode>) {
        if self.is_terminal() {
            out.push(self);
        }
        for c in &self.children {
            c.terminals(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTree {
    pub id: String,
    pub root: GoalNode,
}

impl GoalTree {
    pub fn problems(&self, rules: &BTreeMap<String, ElementaryRule>) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(n) = stack.pop() {
            match (&n.rule, n.is_terminal()) {
                (None, true) => out.push(format!("terminal goal `{}` carries no rule", n.id)),
                (Some(_), false) => out.push(format!("internal goal `{}` carries a rule", n.id)),
                (Some(r), true) if !rules.contains_key(r) => {
                    out.push(format!("goal `{}` references unknown rule `{r}`", n.id))
                }
                _ => {}
            }
            stack.extend(&n.children);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StepOutcome {
    Applied { completed_at: Tick },
    Failed { failure: RuleFailure },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalStep {
    pub goal: String,
    pub rule: String,
    pub started_at: Option<Tick>,
    #[serde(flatten)]
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalReport {
    pub tree: String,
    pub success: bool,
    pub steps: Vec<GoalStep>,
    pub first_failure: Option<String>,
    pub final_state: SystemState,
    pub remaining_pool: f64,
}

/// Depth-first, left-to-right execution of the tree's terminal rules.
/// A failing terminal skips its remaining siblings; ancestors carry on.
pub fn run_goal_tree(
    tree: &GoalTree,
    rules: &BTreeMap<String, ElementaryRule>,
    diagrams: &BTreeMap<String, ControlDiagram>,
    initial: &SystemState,
) -> GoalReport {
    let mut run = GoalRun {
        rules,
        diagrams,
        state: initial.clone(),
        steps: Vec::new(),
    };
    let success = run.visit(&tree.root);
    let first_failure = run
        .steps
        .iter()
        .find(|s| matches!(s.outcome, StepOutcome::Failed { .. }))
        .map(|s| s.goal.clone());
    GoalReport {
        tree: tree.id.clone(),
        success,
        remaining_pool: run.state.pool,
        final_state: run.state,
        steps: run.steps,
        first_failure,
    }
}

struct GoalRun<'a> {
    rules: &'a BTreeMap<String, ElementaryRule>,
    diagrams: &'a BTreeMap<String, ControlDiagram>,
    state: SystemState,
    steps: Vec<GoalStep>,
}

impl GoalRun<'_> {
    fn visit(&mut self, node: &GoalNode) -> bool {
        if node.is_terminal() {
            return self.execute(node);
        }
        let mut ok = true;
        for (i, child) in node.children.iter().enumerate() {
            if self.visit(child) {
                continue;
            }
            ok = false;
            if child.is_terminal() {
                let mut rest = Vec::new();
                node.children[i + 1..].iter().for_each(|c| c.terminals(&mut rest));
                for t in rest {
                    self.steps.push(GoalStep {
                        goal: t.id.clone(),
                        rule: t.rule.clone().unwrap_or_default(),
                        started_at: None,
                        outcome: StepOutcome::Skipped,
                    });
                }
                break;
            }
        }
        ok
    }

    fn execute(&mut self, node: &GoalNode) -> bool {
        let rule_id = node.rule.clone().unwrap_or_default();
        let started_at = Some(self.state.clock);
        let Some(rule) = self.rules.get(&rule_id) else {
            self.steps.push(GoalStep {
                goal: node.id.clone(),
                rule: rule_id,
                started_at: None,
                outcome: StepOutcome::Skipped,
            });
            return false;
        };
        let (outcome, ok) = match apply_rule(rule, &self.state, self.diagrams) {
            Ok(next) => {
                self.state = next;
                (
                    StepOutcome::Applied {
                        completed_at: self.state.clock,
                    },
                    true,
                )
            }
            Err((failure, next)) => {
                self.state = next;
                (StepOutcome::Failed { failure }, false)
            }
        };
        self.steps.push(GoalStep {
            goal: node.id.clone(),
            rule: rule_id,
            started_at,
            outcome,
        });
        ok
    }
}
