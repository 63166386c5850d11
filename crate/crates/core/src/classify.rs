//! Predicate scales, hierarchical classifiers, object distributions over
//! canonical states, arc counters and comparison with the canonical schedule.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    distribution_delta, ArcCounters, CanonicalDiagram, Distribution, ModelError, Move, Tick,
    TimeInterval, TrackedObject,
};
use crate::trend::{classify_series, TrendClass};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("no predicate satisfied at scale level {level}")]
    NoPredicateSatisfied { level: usize },
    #[error("predicates {predicates:?} are simultaneously true")]
    DisjointnessViolated { predicates: Vec<String> },
    #[error("sub-predicate `{child}` holds while its parent `{parent}` does not")]
    HierarchyViolated { parent: String, child: String },
    #[error("missing data for parameter `{parameter}`")]
    MissingData { parameter: String },
    #[error("object `{object}`: {source}")]
    Object {
        object: String,
        #[source]
        source: Box<ClassifyError>,
    },
    #[error("target schedule is empty")]
    EmptySchedule,
    #[error("no actual snapshots to compare")]
    NoSnapshots,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Closed, open or half-open real range used by `value_in` atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub min_open: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub max_open: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl ValueRange {
    pub fn closed(min: f64, max: f64) -> Self {
        Self {
            min,
            max,
            min_open: false,
            max_open: false,
        }
    }

    /// `(min, max]`
    pub fn left_open(min: f64, max: f64) -> Self {
        Self {
            min_open: true,
            ..Self::closed(min, max)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.min_open { v > self.min } else { v >= self.min };
        let below = if self.max_open { v < self.max } else { v <= self.max };
        above && below
    }
}

/// Boolean formula over trend and value atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    TrendIs { parameter: String, class: TrendClass },
    ValueIn { parameter: String, range: ValueRange },
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Not(Box<Formula>),
}

impl Formula {
    pub fn trend_is(parameter: impl Into<String>, class: TrendClass) -> Self {
        Self::TrendIs {
            parameter: parameter.into(),
            class,
        }
    }

    pub fn value_in(parameter: impl Into<String>, range: ValueRange) -> Self {
        Self::ValueIn {
            parameter: parameter.into(),
            range,
        }
    }

    pub fn parameters(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_parameters(&mut out);
        out
    }

    fn collect_parameters<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Self::TrendIs { parameter, .. } | Self::ValueIn { parameter, .. } => {
                out.insert(parameter);
            }
            Self::And(fs) | Self::Or(fs) => fs.iter().for_each(|f| f.collect_parameters(out)),
            Self::Not(f) => f.collect_parameters(out),
        }
    }

    pub fn eval(&self, obs: &dyn Observation) -> Result<bool, ClassifyError> {
        Ok(match self {
            Self::TrendIs { parameter, class } => obs.trend(parameter)? == *class,
            Self::ValueIn { parameter, range } => range.contains(obs.value(parameter)?),
            Self::And(fs) => {
                for f in fs {
                    if !f.eval(obs)? {
                        return Ok(false);
                    }
                }
                true
            }
            Self::Or(fs) => {
                for f in fs {
                    if f.eval(obs)? {
                        return Ok(true);
                    }
                }
                false
            }
            Self::Not(f) => !f.eval(obs)?,
        })
    }
}

/// What a formula can ask about an object.
pub trait Observation {
    /// Current value of the parameter.
    fn value(&self, parameter: &str) -> Result<f64, ClassifyError>;
    fn trend(&self, parameter: &str) -> Result<TrendClass, ClassifyError>;
}

/// Synthetic evaluation: fixed values and trends per parameter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub trends: BTreeMap<String, TrendClass>,
}

impl Probe {
    pub fn value(parameter: impl Into<String>, v: f64) -> Self {
        let mut p = Self::default();
        p.values.insert(parameter.into(), v);
        p
    }
}

impl Observation for Probe {
    fn value(&self, parameter: &str) -> Result<f64, ClassifyError> {
        self.values.get(parameter).copied().ok_or_else(|| ClassifyError::MissingData {
            parameter: parameter.to_string(),
        })
    }

    fn trend(&self, parameter: &str) -> Result<TrendClass, ClassifyError> {
        self.trends.get(parameter).copied().ok_or_else(|| ClassifyError::MissingData {
            parameter: parameter.to_string(),
        })
    }
}

/// An object observed over an interval. `value` is the last observation in
/// the interval; `trend` classifies the points inside it.
pub struct ObjectWindow<'a> {
    pub object: &'a TrackedObject,
    pub interval: TimeInterval,
    pub tolerance: f64,
}

impl ObjectWindow<'_> {
    fn points(&self, parameter: &str) -> Result<Vec<(Tick, f64)>, ClassifyError> {
        let missing = || ClassifyError::MissingData {
            parameter: parameter.to_string(),
        };
        let points = self.object.window(parameter, self.interval).ok_or_else(missing)?;
        if points.is_empty() {
            return Err(missing());
        }
        Ok(points)
    }
}

impl Observation for ObjectWindow<'_> {
    fn value(&self, parameter: &str) -> Result<f64, ClassifyError> {
        Ok(self.points(parameter)?.last().map(|p| p.1).unwrap_or_default())
    }

    fn trend(&self, parameter: &str) -> Result<TrendClass, ClassifyError> {
        let points = self.points(parameter)?;
        classify_series(&points, self.tolerance)
            .map(|e| e.class)
            .map_err(|_| ClassifyError::MissingData {
                parameter: parameter.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub id: String,
    pub formula: Formula,
}

impl Predicate {
    pub fn new(id: impl Into<String>, formula: Formula) -> Self {
        Self {
            id: id.into(),
            formula,
        }
    }
}

/// Ordered predicates `K1 < … < Kn`, each inducing the state at the same
/// position of `state_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub predicates: Vec<Predicate>,
    pub state_ids: Vec<String>,
}

impl Scale {
    pub fn new(pairs: Vec<(Predicate, &str)>) -> Self {
        let (predicates, state_ids) = pairs.into_iter().map(|(p, s)| (p, s.to_string())).unzip();
        Self {
            predicates,
            state_ids,
        }
    }

    /// Indices of the predicates true for `obs`.
    fn satisfied(&self, obs: &dyn Observation) -> Result<Vec<usize>, ClassifyError> {
        let mut hits = Vec::new();
        for (i, p) in self.predicates.iter().enumerate() {
            if p.formula.eval(obs)? {
                hits.push(i);
            }
        }
        Ok(hits)
    }

    pub fn structural_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.predicates.len() != self.state_ids.len() {
            problems.push(format!(
                "scale has {} predicates but {} states",
                self.predicates.len(),
                self.state_ids.len()
            ));
        }
        if self.predicates.is_empty() {
            problems.push("scale has no predicates".to_string());
        }
        problems
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    /// Probe index and the predicates it satisfies simultaneously.
    pub breaches: Vec<(usize, Vec<String>)>,
    /// Probes satisfying no predicate.
    pub uncovered: Vec<usize>,
    /// Probes that could not be evaluated (missing parameters).
    pub unevaluable: Vec<usize>,
}

impl ScaleReport {
    pub fn is_disjoint(&self) -> bool {
        self.breaches.is_empty()
    }

    pub fn full_coverage(&self) -> bool {
        self.uncovered.is_empty() && self.unevaluable.is_empty()
    }
}

/// Probes a scale for overlapping truth domains and coverage gaps.
pub fn validate_scale(scale: &Scale, probes: &[Probe]) -> ScaleReport {
    let mut report = ScaleReport::default();
    for (i, probe) in probes.iter().enumerate() {
        match scale.satisfied(probe) {
            Err(_) => report.unevaluable.push(i),
            Ok(hits) if hits.is_empty() => report.uncovered.push(i),
            Ok(hits) if hits.len() > 1 => report.breaches.push((
                i,
                hits.iter().map(|&h| scale.predicates[h].id.clone()).collect(),
            )),
            Ok(_) => {}
        }
    }
    report
}

/// A root scale plus hierarchical continuations refining individual
/// predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub id: String,
    pub root: Scale,
    #[serde(default)]
    pub continuations: BTreeMap<String, Scale>,
    /// Observation window Δ; its length is the look-back used when
    /// classifying at a snapshot tick.
    pub interval: TimeInterval,
    #[serde(default)]
    pub tolerance: f64,
}

impl Classifier {
    pub fn single(id: impl Into<String>, root: Scale, interval: TimeInterval) -> Self {
        Self {
            id: id.into(),
            root,
            continuations: BTreeMap::new(),
            interval,
            tolerance: 0.0,
        }
    }

    pub fn scales(&self) -> impl Iterator<Item = &Scale> {
        std::iter::once(&self.root).chain(self.continuations.values())
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.scales().flat_map(|s| s.predicates.iter())
    }

    pub fn parameters(&self) -> BTreeSet<&str> {
        self.predicates().flat_map(|p| p.formula.parameters()).collect()
    }

    /// All states any scale can induce.
    pub fn state_ids(&self) -> BTreeSet<&str> {
        self.scales()
            .flat_map(|s| s.state_ids.iter().map(String::as_str))
            .collect()
    }

    /// States reached at the bottom of each chain.
    pub fn leaf_states(&self) -> BTreeSet<&str> {
        self.scales()
            .flat_map(|s| s.predicates.iter().zip(&s.state_ids))
            .filter(|(p, _)| !self.continuations.contains_key(&p.id))
            .map(|(_, s)| s.as_str())
            .collect()
    }

    /// Shape checks: predicate ids unique, continuation keys resolve, and the
    /// continuation graph is a tree rooted at the root scale.
    pub fn structural_problems(&self) -> Vec<String> {
        let mut problems: Vec<String> = self.scales().flat_map(Scale::structural_problems).collect();
        let mut seen = BTreeSet::new();
        for p in self.predicates() {
            if !seen.insert(p.id.as_str()) {
                problems.push(format!("predicate id `{}` used more than once", p.id));
            }
        }
        for key in self.continuations.keys() {
            if !seen.contains(key.as_str()) {
                problems.push(format!("continuation refines unknown predicate `{key}`"));
            }
        }
        // Every continuation scale must be reachable from the root.
        let mut reachable = BTreeSet::new();
        let mut stack: Vec<&Scale> = vec![&self.root];
        while let Some(scale) = stack.pop() {
            for p in &scale.predicates {
                if let Some(next) = self.continuations.get(&p.id) {
                    if reachable.insert(p.id.as_str()) {
                        stack.push(next);
                    }
                }
            }
        }
        for key in self.continuations.keys() {
            if seen.contains(key.as_str()) && !reachable.contains(key.as_str()) {
                problems.push(format!("continuation of `{key}` is not reachable from the root"));
            }
        }
        problems
    }

    /// Deepest state on the unique chain of satisfied predicates.
    pub fn classify(&self, obs: &dyn Observation) -> Result<String, ClassifyError> {
        let mut scale = &self.root;
        let mut level = 0;
        let mut state: Option<String> = None;
        loop {
            let hits = scale.satisfied(obs)?;
            match hits.as_slice() {
                [] if level == 0 => return Err(ClassifyError::NoPredicateSatisfied { level }),
                [] => break,
                [i] => {
                    // Nothing below a rejected predicate may hold.
                    for (j, p) in scale.predicates.iter().enumerate() {
                        if j != *i {
                            self.assert_subtree_false(&p.id, obs)?;
                        }
                    }
                    let chosen = &scale.predicates[*i];
                    state = Some(scale.state_ids[*i].clone());
                    match self.continuations.get(&chosen.id) {
                        Some(next) => {
                            scale = next;
                            level += 1;
                        }
                        None => break,
                    }
                }
                many => {
                    return Err(ClassifyError::DisjointnessViolated {
                        predicates: many.iter().map(|&i| scale.predicates[i].id.clone()).collect(),
                    })
                }
            }
        }
        Ok(state.expect("root level matched"))
    }

    fn assert_subtree_false(&self, parent: &str, obs: &dyn Observation) -> Result<(), ClassifyError> {
        let Some(scale) = self.continuations.get(parent) else {
            return Ok(());
        };
        for p in &scale.predicates {
            if p.formula.eval(obs)? {
                return Err(ClassifyError::HierarchyViolated {
                    parent: parent.to_string(),
                    child: p.id.clone(),
                });
            }
            self.assert_subtree_false(&p.id, obs)?;
        }
        Ok(())
    }
}

/// Places one object over `interval` using `classifier`.
pub fn classify_object(
    object: &TrackedObject,
    classifier: &Classifier,
    interval: TimeInterval,
) -> Result<String, ClassifyError> {
    classifier.classify(&ObjectWindow {
        object,
        interval,
        tolerance: classifier.tolerance,
    })
}

/// Classifies every object; the first failure is returned annotated with
/// the object id.
pub fn distribute(
    objects: &[TrackedObject],
    classifier: &Classifier,
    window: TimeInterval,
) -> Result<Distribution, ClassifyError> {
    let mut out = Distribution::new();
    for object in objects {
        let state = classify_object(object, classifier, window).map_err(|e| ClassifyError::Object {
            object: object.id.clone(),
            source: Box::new(e),
        })?;
        out.insert(state, object.id.clone());
    }
    Ok(out)
}

/// Parameter × object-class matrix of formulas. Compiles to a one-level
/// scale: column `J` becomes the conjunction of its cells, evaluated
/// row-major, and induces state `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[row][column]`; `None` means no condition.
    pub cells: Vec<Vec<Option<Formula>>>,
}

impl ClassificationMatrix {
    pub fn to_scale(&self) -> Scale {
        let predicates = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, column)| {
                let cells: Vec<Formula> = self
                    .cells
                    .iter()
                    .filter_map(|row| row.get(j).cloned().flatten())
                    .collect();
                Predicate::new(column.clone(), Formula::And(cells))
            })
            .collect();
        Scale {
            predicates,
            state_ids: self.columns.clone(),
        }
    }
}

/// Move observed with no development or backstep arc.
pub type Anomaly = Move;

/// Records one snapshot transition: η for every move along a declared arc,
/// an anomaly for every other move, and N_i(tick) for every state.
pub fn update_counters(
    diagram: &CanonicalDiagram,
    prev: &Distribution,
    next: &Distribution,
    counters: &ArcCounters,
    tick: Tick,
) -> Result<(ArcCounters, Vec<Anomaly>), ClassifyError> {
    let moves = distribution_delta(prev, next)?;
    let mut updated = counters.clone();
    let mut anomalies = Vec::new();
    for m in moves {
        if diagram.has_arc(&m.from, &m.to) {
            *updated
                .per_arc
                .entry(m.from.clone())
                .or_default()
                .entry(m.to.clone())
                .or_default() += 1;
        } else {
            anomalies.push(m);
        }
    }
    let states: BTreeSet<&str> = diagram
        .states
        .iter()
        .map(|s| s.id.as_str())
        .chain(next.states())
        .collect();
    for state in states {
        updated
            .per_state
            .entry(state.to_string())
            .or_default()
            .push((tick, next.count(state) as u64));
    }
    Ok((updated, anomalies))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDeviation {
    pub state: String,
    pub required: u64,
    pub actual: u64,
    /// `actual - required`
    pub deviation: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickComparison {
    pub scheduled_tick: Tick,
    pub snapshot_tick: Tick,
    pub states: Vec<StateDeviation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Confirmed,
    Refuted { first_tick: Tick },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub ticks: Vec<TickComparison>,
    pub verdict: Verdict,
}

impl DivergenceReport {
    pub fn confirmed(&self) -> bool {
        self.verdict == Verdict::Confirmed
    }

    /// Non-zero deviations at one scheduled tick.
    pub fn deviations_at(&self, scheduled: Tick) -> Vec<&StateDeviation> {
        self.ticks
            .iter()
            .filter(|t| t.scheduled_tick == scheduled)
            .flat_map(|t| t.states.iter().filter(|s| s.deviation != 0))
            .collect()
    }
}

/// Snapshot nearest to `tick`; ties go to the earlier snapshot.
fn nearest(actual: &[(Tick, Distribution)], tick: Tick) -> &(Tick, Distribution) {
    actual
        .iter()
        .min_by_key(|(t, _)| (t.abs_diff(tick), *t))
        .expect("non-empty snapshots")
}

/// Compares observed snapshots with the diagram's required distributions.
pub fn compare_with_canonical(
    actual: &[(Tick, Distribution)],
    diagram: &CanonicalDiagram,
) -> Result<DivergenceReport, ClassifyError> {
    if diagram.target_schedule.is_empty() {
        return Err(ClassifyError::EmptySchedule);
    }
    if actual.is_empty() {
        return Err(ClassifyError::NoSnapshots);
    }
    let mut ticks = Vec::new();
    let mut first_miss = None;
    for target in &diagram.target_schedule {
        let (snap_tick, snapshot) = nearest(actual, target.tick);
        let states: BTreeSet<&str> = diagram
            .states
            .iter()
            .map(|s| s.id.as_str())
            .chain(target.distribution.states())
            .chain(snapshot.states())
            .collect();
        let rows: Vec<StateDeviation> = states
            .into_iter()
            .map(|s| {
                let required = target.distribution.count(s) as u64;
                let actual = snapshot.count(s) as u64;
                StateDeviation {
                    state: s.to_string(),
                    required,
                    actual,
                    deviation: actual as i64 - required as i64,
                }
            })
            .collect();
        if first_miss.is_none() && rows.iter().any(|r| r.deviation != 0) {
            first_miss = Some(target.tick);
        }
        ticks.push(TickComparison {
            scheduled_tick: target.tick,
            snapshot_tick: *snap_tick,
            states: rows,
        });
    }
    let verdict = match first_miss {
        None => Verdict::Confirmed,
        Some(first_tick) => Verdict::Refuted { first_tick },
    };
    Ok(DivergenceReport { ticks, verdict })
}
