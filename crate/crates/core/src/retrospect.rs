//! Retrospective analysis: stored monitoring data replayed against a
//! canonical diagram, plus the tabular plot-data exports.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{compare_with_canonical, distribute, update_counters, Anomaly, ClassifyError, DivergenceReport};
use crate::model::{ArcCounters, Distribution, MetricTrace, TimeInterval, Tick};
use crate::store::{BundleError, EventStore, ModelBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Query,
    Classify,
    Counters,
    Compare,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Query => "query",
            Stage::Classify => "classify",
            Stage::Counters => "counters",
            Stage::Compare => "compare",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrospectError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("diagram `{0}` names no classifier")]
    NoClassifier(String),
    #[error("snapshot tick {tick} lies outside {interval}")]
    SnapshotOutsideInterval { tick: Tick, interval: TimeInterval },
    #[error("no snapshot ticks to analyse")]
    NoSnapshots,
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: ClassifyError,
    },
}

impl RetrospectError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Self::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

fn at(stage: Stage) -> impl FnOnce(ClassifyError) -> RetrospectError {
    move |source| RetrospectError::Stage { stage, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrospectRequest {
    pub diagram: String,
    pub interval: TimeInterval,
    /// Snapshot ticks; empty means the diagram's scheduled ticks inside
    /// the interval.
    #[serde(default)]
    pub snapshots: Vec<Tick>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub src: String,
    pub dst: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: Tick,
    pub window: TimeInterval,
    pub distribution: Distribution,
    /// Moves along declared arcs since the previous snapshot.
    pub flows: Vec<Flow>,
    pub anomalies: Vec<Anomaly>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrospectReport {
    pub diagram: String,
    pub classifier: String,
    pub interval: TimeInterval,
    pub snapshots: Vec<Snapshot>,
    pub counters: ArcCounters,
    pub divergence: DivergenceReport,
}

impl RetrospectReport {
    pub fn confirmed(&self) -> bool {
        self.divergence.confirmed()
    }
}

fn flows(before: &ArcCounters, after: &ArcCounters) -> Vec<Flow> {
    let mut out = Vec::new();
    for (src, dsts) in &after.per_arc {
        for (dst, n) in dsts {
            let prev = before.eta(src, dst);
            if *n > prev {
                out.push(Flow {
                    src: src.clone(),
                    dst: dst.clone(),
                    count: n - prev,
                });
            }
        }
    }
    out
}

/// query → classify per snapshot → counters → comparison with the
/// canonical schedule.
pub fn retrospect(
    bundle: &ModelBundle,
    store: &EventStore,
    request: &RetrospectRequest,
) -> Result<RetrospectReport, RetrospectError> {
    let diagram = bundle.canonical(&request.diagram)?;
    let classifier_id = diagram
        .classifier
        .as_deref()
        .ok_or_else(|| RetrospectError::NoClassifier(diagram.id.clone()))?;
    let classifier = bundle.classifier(classifier_id)?;
    let interval = request.interval;

    let mut ticks: Vec<Tick> = if request.snapshots.is_empty() {
        diagram
            .target_schedule
            .iter()
            .map(|t| t.tick)
            .filter(|t| interval.contains(*t))
            .collect()
    } else {
        request.snapshots.clone()
    };
    ticks.sort_unstable();
    ticks.dedup();
    if ticks.is_empty() {
        return Err(RetrospectError::NoSnapshots);
    }
    if let Some(&tick) = ticks.iter().find(|t| !interval.contains(**t)) {
        return Err(RetrospectError::SnapshotOutsideInterval { tick, interval });
    }

    let objects = store.tracked_objects(interval);
    if objects.iter().all(|o| o.series.values().all(Vec::is_empty)) {
        let parameter = classifier.parameters().into_iter().next().unwrap_or_default().to_string();
        return Err(at(Stage::Query)(ClassifyError::MissingData { parameter }));
    }

    let look_back = classifier.interval.len();
    let mut snapshots = Vec::with_capacity(ticks.len());
    let mut counters = ArcCounters::default();
    let mut prev: Option<Distribution> = None;
    for tick in ticks {
        let window = TimeInterval {
            start: tick.saturating_sub(look_back).max(interval.start),
            end: tick,
        };
        let distribution = distribute(&objects, classifier, window).map_err(at(Stage::Classify))?;
        let base = prev.as_ref().unwrap_or(&distribution);
        let (next, anomalies) =
            update_counters(diagram, base, &distribution, &counters, tick).map_err(at(Stage::Counters))?;
        snapshots.push(Snapshot {
            tick,
            window,
            flows: flows(&counters, &next),
            distribution: distribution.clone(),
            anomalies,
        });
        counters = next;
        prev = Some(distribution);
    }
    let actual: Vec<(Tick, Distribution)> = snapshots.iter().map(|s| (s.tick, s.distribution.clone())).collect();
    let divergence = compare_with_canonical(&actual, diagram).map_err(at(Stage::Compare))?;
    Ok(RetrospectReport {
        diagram: diagram.id.clone(),
        classifier: classifier.id.clone(),
        interval,
        snapshots,
        counters,
        divergence,
    })
}

fn to_csv<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// `state,tick,count`: one row per recorded N_i(t).
pub fn occupancy_table(counters: &ArcCounters) -> String {
    let rows = counters
        .per_state
        .iter()
        .flat_map(|(s, h)| h.iter().map(move |(t, n)| (s.as_str(), *t, *n)));
    to_csv(&["state", "tick", "count"], rows)
}

/// `tick,src,dst,count`: arc flows per snapshot.
pub fn flow_table(report: &RetrospectReport) -> String {
    let rows = report
        .snapshots
        .iter()
        .flat_map(|s| s.flows.iter().map(move |f| (s.tick, f.src.as_str(), f.dst.as_str(), f.count)));
    to_csv(&["tick", "src", "dst", "count"], rows)
}

/// `tick,state,required,actual,deviation` from the divergence report.
pub fn divergence_table(report: &DivergenceReport) -> String {
    let rows = report.ticks.iter().flat_map(|t| {
        t.states
            .iter()
            .map(move |s| (t.scheduled_tick, s.state.as_str(), s.required, s.actual, s.deviation))
    });
    to_csv(&["tick", "state", "required", "actual", "deviation"], rows)
}

/// `tick` plus one column per metric name, columns sorted by name.
pub fn metric_table(trace: &MetricTrace) -> String {
    let names: Vec<&str> = trace
        .points
        .iter()
        .flat_map(|p| p.metrics.keys().map(String::as_str))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec!["tick"];
    header.extend(&names);
    let rows = trace.points.iter().map(|p| {
        let mut row = vec![p.tick.to_string()];
        row.extend(names.iter().map(|n| p.metrics.get(*n).map(f64::to_string).unwrap_or_default()));
        row
    });
    to_csv(&header, rows)
}
