use std::fs;
use std::path::{Path, PathBuf};

use hierion_core::model::{ArcCounters, TimeInterval};
use hierion_core::retrospect::{
    divergence_table, flow_table, metric_table, occupancy_table, retrospect as run_retrospect, RetrospectReport,
    RetrospectRequest,
};
use hierion_core::scenario::{
    check_partial_diagram, forecast as run_forecast, metric_timeline, run_goal_tree, simulate as run_simulate,
    CostOrder, FiringPolicy, ForecastConfig, ForecastOutcome, SimConfig, SimulationRun, SystemState,
};
use hierion_core::store::{load_bundle, ColumnMapping, EventStore, ModelBundle, Strictness};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::output::{json_text, write_file, OutDir, RunManifest};
use crate::{
    BundleArgs, EvaluateArgs, ExportArgs, ForecastArgs, IngestArgs, InitialArgs, RetrospectArgs, ServeArgs,
    SimulateArgs,
};

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn load(path: &Path, lenient: bool) -> CliResult<ModelBundle> {
    let strictness = if lenient { Strictness::Lenient } else { Strictness::Strict };
    let loaded = load_bundle(&read(path)?, strictness)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded.bundle)
}

fn load_args(args: &BundleArgs, manifest: &mut RunManifest) -> CliResult<ModelBundle> {
    manifest.bundle = Some(args.bundle.clone());
    load(&args.bundle, args.lenient)
}

/// Writes to `out` or prints to stdout.
fn emit<T: Serialize>(mut manifest: RunManifest, out: Option<&PathBuf>, report: &T) -> CliResult<()> {
    match out {
        Some(path) => {
            manifest.outputs.push(path.clone());
            write_file(path, &json_text(&manifest, report))
        }
        None => {
            print!("{}", json_text(&manifest, report));
            Ok(())
        }
    }
}

pub fn ingest(raw: &[String], args: IngestArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new(raw);
    manifest.store = Some(args.store.clone());
    let mapping: ColumnMapping = match &args.mapping {
        Some(p) => read_json(p)?,
        None => ColumnMapping::default(),
    };
    let file = fs::File::open(&args.csv).map_err(CliError::io(&args.csv))?;
    let mut store = EventStore::open(&args.store)?;
    let report = store.ingest_monitoring(file, &mapping)?;
    for r in &report.rejects {
        eprintln!("rejected line {}: {}", r.line, r.reason);
    }
    emit(manifest, args.out.as_ref(), &report)
}

pub fn retrospect(raw: &[String], args: RetrospectArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new(raw);
    let bundle = load_args(&args.bundle, &mut manifest)?;
    manifest.store = Some(args.store.clone());
    if !args.store.exists() {
        return Err(CliError::Io {
            path: args.store.clone(),
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    let store = EventStore::open(&args.store)?;
    let interval = TimeInterval::new(args.from, args.to).map_err(|e| CliError::Invalid(e.to_string()))?;
    let request = RetrospectRequest {
        diagram: args.diagram,
        interval,
        snapshots: args.snapshots,
    };
    let report = run_retrospect(&bundle, &store, &request)?;
    let banner = if report.confirmed() { "CONFIRMED" } else { "REFUTED" };
    match &args.out_dir {
        Some(dir) => {
            let mut out = OutDir::new(dir);
            out.json("retrospect.json", &report);
            write_retrospect_tables(&mut out, &report);
            out.finish(manifest)?;
            println!("{banner}");
        }
        None => emit(manifest, None, &report)?,
    }
    Ok(())
}

fn write_retrospect_tables(out: &mut OutDir, report: &RetrospectReport) {
    out.text("occupancy.csv", occupancy_table(&report.counters));
    out.text("flows.csv", flow_table(report));
    out.text("divergence.csv", divergence_table(&report.divergence));
}

/// Values from `--config`; each one replaces the matching flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    horizon: Option<u64>,
    firing: Option<FiringPolicy>,
    order: Option<CostOrder>,
    max_expansions: Option<usize>,
}

fn overrides(path: Option<&PathBuf>) -> CliResult<Overrides> {
    path.map(|p| read_json(p)).transpose().map(Option::unwrap_or_default)
}

/// The config value wins; a clash with an explicit flag is reported.
fn pick<T: Serialize + Copy>(manifest: &mut RunManifest, name: &str, flag: Option<T>, config: Option<T>) -> Option<T> {
    match config {
        Some(v) => {
            if flag.is_some() {
                eprintln!("warning: config overrides --{}", name.replace('_', "-"));
            }
            manifest.overrides.insert(name.to_string(), json!(v));
            Some(v)
        }
        None => flag,
    }
}

pub fn simulate(raw: &[String], args: SimulateArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new(raw);
    let bundle = load_args(&args.bundle, &mut manifest)?;
    let config = overrides(args.config.as_ref())?;
    let spec = bundle.scenario_spec(&args.scenario)?;
    let horizon = pick(&mut manifest, "horizon", args.horizon, config.horizon)
        .or(spec.horizon)
        .ok_or_else(|| CliError::Invalid(format!("scenario `{}` has no horizon; pass --horizon", spec.id)))?;
    let firing = pick(&mut manifest, "firing", args.firing.map(Into::into), config.firing).unwrap_or_default();
    let scenario = bundle.scenario(&args.scenario)?;
    let run = run_simulate(&scenario, horizon, SimConfig { firing })?;
    let metrics = run.metrics();
    match &args.out_dir {
        Some(dir) => {
            let mut out = OutDir::new(dir);
            out.json("run.json", &run);
            out.json("metrics.json", &metrics);
            for (id, trace) in &run.traces {
                out.json(&format!("trace-{id}.json"), trace);
            }
            let events: String = run
                .events
                .iter()
                .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
                .collect();
            out.text("events.jsonl", events);
            out.text("timeline.csv", metric_table(&metric_timeline(&run)));
            out.finish(manifest)?;
            println!(
                "completeness={} redundancy={} omitted={} complexness={}",
                metrics.completeness, metrics.redundancy_count, metrics.omitted_possibilities, metrics.complexness
            );
            Ok(())
        }
        None => emit(manifest, None, &metrics),
    }
}

fn initial_state(args: &InitialArgs) -> CliResult<SystemState> {
    match &args.initial {
        Some(path) => read_json(path),
        None => Ok(SystemState::new(args.state.iter().cloned(), args.pool)),
    }
}

#[derive(Serialize)]
struct PlanRow<'a> {
    rule: &'a str,
    subsystem: &'a str,
    from: &'a str,
    to: &'a str,
    start: u64,
    end: u64,
    resources: f64,
    cumulative_resources: f64,
}

fn plan_table(outcome: &ForecastOutcome) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut total = 0.0;
    let steps = outcome.steps().unwrap_or_default();
    if steps.is_empty() {
        w.write_record([
            "rule",
            "subsystem",
            "from",
            "to",
            "start",
            "end",
            "resources",
            "cumulative_resources",
        ])
        .expect("in-memory write");
    }
    for s in steps {
        total += s.resources;
        w.serialize(PlanRow {
            rule: &s.rule,
            subsystem: &s.subsystem,
            from: &s.from,
            to: &s.to,
            start: s.start,
            end: s.end,
            resources: s.resources,
            cumulative_resources: total,
        })
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn forecast(raw: &[String], args: ForecastArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new(raw);
    let bundle = load_args(&args.bundle, &mut manifest)?;
    let config = overrides(args.config.as_ref())?;
    let partial = bundle.partial(&args.partial)?;
    let initial = initial_state(&args.initial)?;
    let known = bundle.control_map();
    for (d, s) in &initial.states {
        if !known.get(d).is_some_and(|c| c.has_state(s)) {
            return Err(CliError::Invalid(format!("initial state `{d}={s}` is not a declared state")));
        }
    }
    let mut fc = ForecastConfig::default();
    if let Some(o) = pick(&mut manifest, "order", args.order.map(Into::into), config.order) {
        fc.order = o;
    }
    if let Some(n) = pick(&mut manifest, "max_expansions", args.max_expansions, config.max_expansions) {
        fc.max_expansions = n;
    }
    let outcome = run_forecast(&initial, &bundle.rules, partial, fc);
    match &args.out_dir {
        Some(dir) => {
            let mut out = OutDir::new(dir);
            out.json("plan.json", &outcome);
            out.text("plan.csv", plan_table(&outcome));
            out.finish(manifest)?;
            match &outcome {
                ForecastOutcome::Plan { ticks, resources, .. } => println!("PLAN ticks={ticks} resources={resources}"),
                ForecastOutcome::Infeasible { .. } => println!("INFEASIBLE"),
            }
            Ok(())
        }
        None => emit(manifest, None, &outcome),
    }
}

pub fn evaluate(raw: &[String], args: EvaluateArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new(raw);
    let bundle = match &args.bundle {
        Some(p) => {
            manifest.bundle = Some(p.clone());
            Some(load(p, args.lenient)?)
        }
        None => None,
    };
    let report = match (&args.run, &args.goal_tree, &bundle) {
        (Some(path), _, _) => {
            let run: SimulationRun = decode(path, report_value(path)?)?;
            let mut report = json!({"scenario": run.scenario, "metrics": run.metrics()});
            if let (Some(pid), Some(b)) = (&args.partial, &bundle) {
                let verdict = check_partial_diagram(
                    &run.traces,
                    run.horizon,
                    args.resources_spent,
                    b.partial(pid)?,
                    &b.control_map(),
                )?;
                report["partial"] = json!(verdict);
            }
            report
        }
        (None, Some(tid), Some(b)) => {
            let initial = initial_state(&args.initial)?;
            json!(run_goal_tree(b.goal_tree(tid)?, &b.rule_map(), &b.control_map(), &initial))
        }
        _ => return Err(CliError::Invalid("pass --run, or --bundle with --goal-tree".into())),
    };
    emit(manifest, args.out.as_ref(), &report)
}

fn report_value(path: &Path) -> CliResult<Value> {
    if !path.exists() {
        return Err(CliError::MissingReport(path.to_path_buf()));
    }
    let value: Value = read_json(path)?;
    Ok(match value {
        Value::Object(mut m) if m.contains_key("manifest") && m.contains_key("report") => {
            m.remove("report").expect("checked")
        }
        other => other,
    })
}

fn decode<T: DeserializeOwned>(path: &Path, value: Value) -> CliResult<T> {
    serde_json::from_value(value).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn export(raw: &[String], args: ExportArgs) -> CliResult<()> {
    let mut out = OutDir::new(&args.out_dir);
    for path in &args.reports {
        let value = report_value(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        let has = |k: &str| value.get(k).is_some();
        if has("divergence") && has("counters") {
            let report: RetrospectReport = decode(path, value)?;
            out.text(&format!("{stem}-occupancy.csv"), occupancy_table(&report.counters));
            out.text(&format!("{stem}-flows.csv"), flow_table(&report));
            out.text(&format!("{stem}-divergence.csv"), divergence_table(&report.divergence));
        } else if has("traces") && has("events") {
            let run: SimulationRun = decode(path, value)?;
            out.text(&format!("{stem}-timeline.csv"), metric_table(&metric_timeline(&run)));
        } else if has("per_state") {
            let counters: ArcCounters = decode(path, value)?;
            out.text(&format!("{stem}-occupancy.csv"), occupancy_table(&counters));
        } else {
            return Err(CliError::Invalid(format!("{}: not a retrospect, run or counters report", path.display())));
        }
    }
    out.finish(RunManifest::new(raw))
}

pub fn serve(args: ServeArgs) -> CliResult<()> {
    let store = match &args.store {
        Some(p) => EventStore::open(p)?,
        None => EventStore::in_memory(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::io("tokio runtime"))?;
    eprintln!("listening on http://{}", args.addr);
    runtime
        .block_on(hierion_server::serve(args.addr, store))
        .map_err(CliError::io(args.addr.to_string()))
}
