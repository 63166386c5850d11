use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::Classifier;
use crate::model::{validate_diagram, CanonicalDiagram, ParameterHierarchy};
use crate::scenario::{
    ControlDiagram, CoupledGroup, ElementaryRule, GoalTree, PartialDiagram, Scenario, ScenarioSpec,
};

pub const SCHEMA: &str = "hierion/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("unknown fields: {}", .0.join(", "))]
    UnknownFields(Vec<String>),
    #[error("unsupported schema `{0}`, expected `{SCHEMA}`")]
    UnsupportedSchema(String),
    #[error("dangling reference `{id}` in {site}")]
    DanglingReference { id: String, site: String },
    #[error("validation failed: {}", .0.join("; "))]
    ValidationFailed(Vec<String>),
    #[error("no {kind} with id `{id}`")]
    NotFound { kind: &'static str, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Unknown fields are an error.
    #[default]
    Strict,
    /// Unknown fields are reported as warnings.
    Lenient,
}

/// Versioned model document: hierarchy, classifiers, diagrams, groups,
/// rules, goal trees, partial diagrams and scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema: String,
    #[serde(default)]
    pub hierarchy: ParameterHierarchy,
    #[serde(default)]
    pub classifiers: Vec<Classifier>,
    #[serde(default)]
    pub canonical_diagrams: Vec<CanonicalDiagram>,
    #[serde(default)]
    pub control_diagrams: Vec<ControlDiagram>,
    #[serde(default)]
    pub coupled_groups: Vec<CoupledGroup>,
    #[serde(default)]
    pub rules: Vec<ElementaryRule>,
    #[serde(default)]
    pub goal_trees: Vec<GoalTree>,
    #[serde(default)]
    pub partial_diagrams: Vec<PartialDiagram>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for ModelBundle {
    fn default() -> Self {
        Self {
            schema: SCHEMA.to_string(),
            hierarchy: ParameterHierarchy::default(),
            classifiers: Vec::new(),
            canonical_diagrams: Vec::new(),
            control_diagrams: Vec::new(),
            coupled_groups: Vec::new(),
            rules: Vec::new(),
            goal_trees: Vec::new(),
            partial_diagrams: Vec::new(),
            scenarios: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBundle {
    pub bundle: ModelBundle,
    pub warnings: Vec<String>,
}

pub fn load_bundle(text: &str, strictness: Strictness) -> Result<LoadedBundle, BundleError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let parsed: Result<ModelBundle, _> = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()));
    let bundle = parsed
        .and_then(|b| de.end().map(|_| b))
        .map_err(|e| BundleError::ParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    if bundle.schema != SCHEMA {
        return Err(BundleError::UnsupportedSchema(bundle.schema));
    }
    let mut warnings = Vec::new();
    if !unknown.is_empty() {
        match strictness {
            Strictness::Strict => return Err(BundleError::UnknownFields(unknown)),
            Strictness::Lenient => warnings.extend(unknown.into_iter().map(|p| format!("unknown field `{p}`"))),
        }
    }
    check_references(&bundle)?;
    let report = bundle.validation_report(&mut warnings);
    if !report.is_empty() {
        return Err(BundleError::ValidationFailed(report));
    }
    Ok(LoadedBundle { bundle, warnings })
}

pub fn save_bundle(bundle: &ModelBundle) -> String {
    let mut out = serde_json::to_string_pretty(bundle).expect("bundle serializes");
    out.push('\n');
    out
}

fn dangling(id: &str, site: String) -> BundleError {
    BundleError::DanglingReference {
        id: id.to_string(),
        site,
    }
}

fn check_references(b: &ModelBundle) -> Result<(), BundleError> {
    let classifiers: BTreeMap<&str, &Classifier> = b.classifiers.iter().map(|c| (c.id.as_str(), c)).collect();
    for c in &b.classifiers {
        for p in c.parameters() {
            if !b.hierarchy.contains(p) {
                return Err(dangling(p, format!("classifier `{}`", c.id)));
            }
        }
    }
    for d in &b.canonical_diagrams {
        let states: BTreeSet<&str> = d.states.iter().map(|s| s.id.as_str()).collect();
        let site = |what: &str| format!("canonical diagram `{}` {what}", d.id);
        for (what, s) in [("s0", &d.s0), ("sStar", &d.s_star)] {
            if !states.contains(s.as_str()) {
                return Err(dangling(s, site(what)));
            }
        }
        for a in d.dev_arcs.iter().chain(&d.back_arcs) {
            for end in [&a.src, &a.dst] {
                if !states.contains(end.as_str()) {
                    return Err(dangling(end, site(&format!("arc ({},{})", a.src, a.dst))));
                }
            }
        }
        for t in &d.target_schedule {
            if let Some(s) = t.distribution.states().find(|s| !states.contains(s)) {
                return Err(dangling(s, site(&format!("target at tick {}", t.tick))));
            }
        }
        if let Some(cid) = &d.classifier {
            let Some(c) = classifiers.get(cid.as_str()) else {
                return Err(dangling(cid, site("classifier")));
            };
            if let Some(s) = c.leaf_states().into_iter().find(|s| !states.contains(s)) {
                return Err(dangling(s, format!("classifier `{cid}` used by `{}`", d.id)));
            }
        }
    }

    let controls: BTreeMap<&str, &ControlDiagram> =
        b.control_diagrams.iter().map(|d| (d.id.as_str(), d)).collect();
    for d in &b.control_diagrams {
        let site = |what: &str| format!("control diagram `{}` {what}", d.id);
        for (what, s) in [("s0", &d.s0), ("sStar", &d.s_star)] {
            if !d.has_state(s) {
                return Err(dangling(s, site(what)));
            }
        }
        for a in &d.p1_arcs {
            for end in [&a.src, &a.dst] {
                if !d.has_state(end) {
                    return Err(dangling(end, site(&format!("p1 arc ({},{})", a.src, a.dst))));
                }
            }
            if d.symbol(&a.symbol).is_none() {
                return Err(dangling(&a.symbol, site(&format!("p1 arc ({},{})", a.src, a.dst))));
            }
        }
        for a in &d.p2_arcs {
            for end in [&a.src, &a.dst] {
                if !d.has_state(end) {
                    return Err(dangling(end, site(&format!("p2 arc ({},{})", a.src, a.dst))));
                }
            }
        }
    }
    let state_of = |diagram: &str, state: &str, site: String| -> Result<(), BundleError> {
        let Some(d) = controls.get(diagram) else {
            return Err(dangling(diagram, site));
        };
        if !d.has_state(state) {
            return Err(dangling(state, site));
        }
        Ok(())
    };
    for g in &b.coupled_groups {
        for r in std::iter::once(&g.parent).chain(&g.children) {
            state_of(&r.diagram, &r.src, format!("coupled group `{}`", g.id))?;
            state_of(&r.diagram, &r.dst, format!("coupled group `{}`", g.id))?;
        }
    }
    for r in &b.rules {
        for s in [&r.from, &r.to, &r.forbidden] {
            state_of(&r.subsystem, s, format!("rule `{}`", r.id))?;
        }
    }
    let rule_ids: BTreeSet<&str> = b.rules.iter().map(|r| r.id.as_str()).collect();
    for t in &b.goal_trees {
        let mut stack = vec![&t.root];
        while let Some(n) = stack.pop() {
            if let Some(r) = &n.rule {
                if !rule_ids.contains(r.as_str()) {
                    return Err(dangling(r, format!("goal `{}` of tree `{}`", n.id, t.id)));
                }
            }
            stack.extend(&n.children);
        }
    }
    for p in &b.partial_diagrams {
        for s in &p.support {
            state_of(&s.diagram, &s.state, format!("partial diagram `{}`", p.id))?;
        }
    }
    let groups: BTreeSet<&str> = b.coupled_groups.iter().map(|g| g.id.as_str()).collect();
    for s in &b.scenarios {
        let site = |what: &str| format!("scenario `{}` {what}", s.id);
        for d in &s.diagrams {
            if !controls.contains_key(d.as_str()) {
                return Err(dangling(d, site("diagrams")));
            }
        }
        for (node, d) in &s.mapping {
            if !b.hierarchy.contains(node) {
                return Err(dangling(node, site("mapping")));
            }
            if !s.diagrams.contains(d) {
                return Err(dangling(d, site("mapping")));
            }
        }
        for g in &s.after_effect {
            if !groups.contains(g.as_str()) {
                return Err(dangling(g, site("after-effect")));
            }
        }
        for e in &s.schedule {
            let known = s
                .diagrams
                .iter()
                .any(|d| controls[d.as_str()].symbol(&e.symbol).is_some());
            if !known {
                return Err(dangling(&e.symbol, site(&format!("schedule at tick {}", e.tick))));
            }
            if let Some(to) = &e.to {
                if !s.diagrams.contains(to) {
                    return Err(dangling(to, site(&format!("schedule at tick {}", e.tick))));
                }
            }
        }
    }
    Ok(())
}

impl ModelBundle {
    /// Every module-level validator, prefixed by the offending item.
    fn validation_report(&self, warnings: &mut Vec<String>) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.hierarchy.validate().into_iter().map(|p| format!("hierarchy: {p}")));
        for c in &self.classifiers {
            out.extend(c.structural_problems().into_iter().map(|p| format!("classifier `{}`: {p}", c.id)));
        }
        for d in &self.canonical_diagrams {
            out.extend(validate_diagram(d).into_iter().map(|v| format!("diagram `{}`: {v}", d.id)));
        }
        for d in &self.control_diagrams {
            out.extend(d.problems().into_iter().map(|p| format!("control diagram `{}`: {p}", d.id)));
        }
        for r in &self.rules {
            out.extend(r.problems());
        }
        let rules = self.rule_map();
        for t in &self.goal_trees {
            out.extend(t.problems(&rules).into_iter().map(|p| format!("goal tree `{}`: {p}", t.id)));
        }
        for p in &self.partial_diagrams {
            out.extend(p.problems().into_iter().map(|e| format!("partial diagram `{}`: {e}", p.id)));
        }
        let mut ids = BTreeSet::new();
        let all_ids = self
            .classifiers
            .iter()
            .map(|c| ("classifier", &c.id))
            .chain(self.canonical_diagrams.iter().map(|d| ("canonical diagram", &d.id)))
            .chain(self.control_diagrams.iter().map(|d| ("control diagram", &d.id)))
            .chain(self.coupled_groups.iter().map(|g| ("coupled group", &g.id)))
            .chain(self.rules.iter().map(|r| ("rule", &r.id)))
            .chain(self.goal_trees.iter().map(|t| ("goal tree", &t.id)))
            .chain(self.partial_diagrams.iter().map(|p| ("partial diagram", &p.id)))
            .chain(self.scenarios.iter().map(|s| ("scenario", &s.id)));
        for (kind, id) in all_ids {
            if !ids.insert((kind, id)) {
                out.push(format!("duplicate {kind} id `{id}`"));
            }
        }
        for spec in &self.scenarios {
            if let Ok(s) = self.resolve(spec) {
                let check = s.check();
                out.extend(check.errors.into_iter().map(|e| format!("scenario `{}`: {e}", spec.id)));
                warnings.extend(check.warnings.into_iter().map(|w| format!("scenario `{}`: {w}", spec.id)));
                if let (Some(h), Some(last)) = (spec.horizon, spec.schedule.iter().map(|e| e.tick).max()) {
                    if last > h {
                        out.push(format!("scenario `{}`: schedule tick {last} beyond horizon {h}", spec.id));
                    }
                }
            }
        }
        out
    }

    pub fn rule_map(&self) -> BTreeMap<String, ElementaryRule> {
        self.rules.iter().map(|r| (r.id.clone(), r.clone())).collect()
    }

    pub fn control_map(&self) -> BTreeMap<String, ControlDiagram> {
        self.control_diagrams.iter().map(|d| (d.id.clone(), d.clone())).collect()
    }

    pub fn canonical(&self, id: &str) -> Result<&CanonicalDiagram, BundleError> {
        self.canonical_diagrams
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| not_found("canonical diagram", id))
    }

    pub fn classifier(&self, id: &str) -> Result<&Classifier, BundleError> {
        self.classifiers
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| not_found("classifier", id))
    }

    pub fn partial(&self, id: &str) -> Result<&PartialDiagram, BundleError> {
        self.partial_diagrams
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| not_found("partial diagram", id))
    }

    pub fn goal_tree(&self, id: &str) -> Result<&GoalTree, BundleError> {
        self.goal_trees
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| not_found("goal tree", id))
    }

    pub fn scenario_spec(&self, id: &str) -> Result<&ScenarioSpec, BundleError> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| not_found("scenario", id))
    }

    /// The scenario with its diagrams, hierarchy and groups in place.
    pub fn scenario(&self, id: &str) -> Result<Scenario, BundleError> {
        self.resolve(self.scenario_spec(id)?)
    }

    pub fn resolve(&self, spec: &ScenarioSpec) -> Result<Scenario, BundleError> {
        let diagrams = spec
            .diagrams
            .iter()
            .map(|id| {
                self.control_diagrams
                    .iter()
                    .find(|d| &d.id == id)
                    .cloned()
                    .ok_or_else(|| not_found("control diagram", id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let after_effect = spec
            .after_effect
            .iter()
            .map(|id| {
                self.coupled_groups
                    .iter()
                    .find(|g| &g.id == id)
                    .cloned()
                    .ok_or_else(|| not_found("coupled group", id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut s = Scenario::new(&spec.id, diagrams);
        s.hierarchy = self.hierarchy.clone();
        s.mapping = spec.mapping.clone();
        s.schedule = spec.schedule.clone();
        s.after_effect = after_effect;
        Ok(s)
    }

    /// Writes a resolved scenario's schedule, mapping and groups back into
    /// its spec. Diagrams are referenced by id and must already exist.
    pub fn put_scenario(&mut self, scenario: &Scenario, horizon: Option<crate::model::Tick>) {
        let spec = ScenarioSpec {
            id: scenario.id.clone(),
            diagrams: scenario.diagrams.keys().cloned().collect(),
            mapping: scenario.mapping.clone(),
            schedule: scenario.schedule.clone(),
            after_effect: scenario.after_effect.iter().map(|g| g.id.clone()).collect(),
            horizon,
        };
        for g in &scenario.after_effect {
            match self.coupled_groups.iter_mut().find(|x| x.id == g.id) {
                Some(x) => *x = g.clone(),
                None => self.coupled_groups.push(g.clone()),
            }
        }
        match self.scenarios.iter_mut().find(|s| s.id == spec.id) {
            Some(s) => *s = spec,
            None => self.scenarios.push(spec),
        }
    }
}

fn not_found(kind: &'static str, id: &str) -> BundleError {
    BundleError::NotFound {
        kind,
        id: id.to_string(),
    }
}
