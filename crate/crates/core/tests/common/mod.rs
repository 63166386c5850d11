#![allow(dead_code)]

use hierion_core::classify::{Classifier, Formula, Predicate, Scale, ValueRange};
use hierion_core::model::{
    CanonicalDiagram, Distribution, ParameterHierarchy, ParameterNode, State, TargetDistribution, TimeInterval,
};
use std::collections::BTreeMap;

use hierion_core::model::{Cause, StateTrace};
use hierion_core::scenario::{
    check_partial_diagram, ArcRef, Budget, ControlArc, ControlDiagram, Coupling, CoupledGroup, DecayArc, Direction,
    ElementaryRule, Event, EventKind, Outcome, PartialDiagram, RedundancyReason, Scenario, ScheduledSymbol,
    SupportState, Symbol, SymbolKind, SystemState, UpwardPolicy,
};
use hierion_core::store::ModelBundle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn node(id: &str, level: u32, children: &[&str]) -> ParameterNode {
    ParameterNode {
        id: id.to_string(),
        level,
        polymorphic: false,
        children: children.iter().map(|c| c.to_string()).collect(),
    }
}

fn child_chain(id: &str, prefix: &str, letter: &str) -> ControlDiagram {
    let states: Vec<String> = (1..=6).map(|i| format!("{prefix}{i}")).collect();
    let refs: Vec<&str> = states.iter().map(String::as_str).collect();
    let symbols = [
        format!("{letter}1"),
        format!("{letter}2"),
        "g".to_string(),
        format!("{letter}4"),
        format!("{letter}5"),
    ];
    let sym_refs: Vec<&str> = symbols.iter().map(String::as_str).collect();
    let mut d = ControlDiagram::chain(id, &refs, &sym_refs);
    d.alphabet.retain(|s| s.id != "g");
    d.alphabet.push(Symbol::general("g"));
    d
}

/// Parent W (S1→S2 on g) over children W1 (S11..S16) and W2 (S21..S26),
/// with g coupling S13→S14 and S23→S24 to the parent arc.
pub fn coupled(schedule: Vec<ScheduledSymbol>) -> Scenario {
    let parent = ControlDiagram {
        id: "W".into(),
        states: vec![State::new("S1", 0), State::new("S2", 1)],
        s0: "S1".into(),
        s_star: "S2".into(),
        alphabet: vec![Symbol::general("g")],
        p1_arcs: vec![ControlArc::new("S1", "S2", "g", 1)],
        p2_arcs: vec![],
    };
    let mut s = Scenario::new("coupled", [parent, child_chain("W1", "S1", "a"), child_chain("W2", "S2", "b")]);
    s.hierarchy = ParameterHierarchy {
        nodes: vec![node("w", 0, &["w1", "w2"]), node("w1", 1, &[]), node("w2", 1, &[])],
    };
    s.mapping = [("w", "W"), ("w1", "W1"), ("w2", "W2")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    s.after_effect = vec![CoupledGroup {
        id: "G".into(),
        parent: ArcRef::new("W", "S1", "S2"),
        children: vec![ArcRef::new("W1", "S13", "S14"), ArcRef::new("W2", "S23", "S24")],
        upward: UpwardPolicy::All,
    }];
    s.schedule = schedule;
    s
}

pub fn coupled_schedule() -> Vec<ScheduledSymbol> {
    vec![
        ScheduledSymbol::to(0, "a1", "W1"),
        ScheduledSymbol::to(0, "b1", "W2"),
        ScheduledSymbol::to(1, "g", "W"),
        ScheduledSymbol::to(1, "a2", "W1"),
        ScheduledSymbol::to(1, "b2", "W2"),
        ScheduledSymbol::to(3, "g", "W"),
        ScheduledSymbol::to(4, "a4", "W1"),
        ScheduledSymbol::to(4, "b4", "W2"),
        ScheduledSymbol::to(5, "a5", "W1"),
        ScheduledSymbol::to(5, "b5", "W2"),
    ]
}

pub const COUPLED_HORIZON: u64 = 7;

/// Chain diagram with random branches, deltas and decay arcs. Symbols are
/// private to the diagram.
pub fn random_diagram(rng: &mut ChaCha8Rng, id: &str) -> ControlDiagram {
    let n = rng.gen_range(2..=5);
    let states: Vec<String> = (0..n).map(|i| format!("{id}_s{i}")).collect();
    let mut d = ControlDiagram {
        id: id.to_string(),
        states: states.iter().enumerate().map(|(i, s)| State::new(s, i as i64)).collect(),
        s0: states[0].clone(),
        s_star: states[n - 1].clone(),
        alphabet: (0..3).map(|i| Symbol::individual(format!("{id}_x{i}"))).collect(),
        p1_arcs: vec![],
        p2_arcs: vec![],
    };
    for w in 0..n - 1 {
        let sym = format!("{id}_x{}", w % 3);
        d.p1_arcs
            .push(ControlArc::new(&states[w], &states[w + 1], sym, rng.gen_range(1..=2)));
    }
    for src in 1..n {
        if rng.gen_bool(0.4) {
            let dst = rng.gen_range(0..src);
            d.p2_arcs
                .push(DecayArc::new(&states[src], &states[dst], rng.gen_range(1..=4)));
        }
    }
    d
}

/// Scenario of `k` independent random diagrams with a random schedule of
/// addressed and broadcast symbols.
pub fn random_scenario(seed: u64, k: usize, horizon: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..k).map(|i| format!("D{i}")).collect();
    let diagrams: Vec<ControlDiagram> = ids.iter().map(|id| random_diagram(&mut rng, id)).collect();
    let mut s = Scenario::new(format!("random-{seed}"), diagrams);
    let entries = rng.gen_range(0..=3 * horizon as usize);
    let mut schedule: Vec<ScheduledSymbol> = (0..entries)
        .map(|_| {
            let d = &ids[rng.gen_range(0..k)];
            let sym = format!("{d}_x{}", rng.gen_range(0..3));
            let tick = rng.gen_range(0..=horizon);
            if rng.gen_bool(0.3) {
                ScheduledSymbol::broadcast(tick, sym)
            } else {
                ScheduledSymbol::to(tick, sym, d)
            }
        })
        .collect();
    schedule.sort_by_key(|e| e.tick);
    s.schedule = schedule;
    s
}

fn band(min: f64, max: f64) -> ValueRange {
    ValueRange {
        max_open: true,
        ..ValueRange::closed(min, max)
    }
}

/// Canonical A → B → C development of four objects over parameter `p`:
/// o1, o2 reach C by tick 10, o3, o4 reach B.
pub fn retro_bundle() -> ModelBundle {
    let scale = Scale::new(vec![
        (Predicate::new("low", Formula::value_in("p", band(0.0, 10.0))), "A"),
        (Predicate::new("mid", Formula::value_in("p", band(10.0, 20.0))), "B"),
        (Predicate::new("high", Formula::value_in("p", ValueRange::closed(20.0, 40.0))), "C"),
    ]);
    let classifier = Classifier::single("levels", scale, TimeInterval::new(0, 2).unwrap());
    let mut diagram = CanonicalDiagram::chain("growth", &["A", "B", "C"]);
    diagram.classifier = Some("levels".into());
    let all: &[&str] = &["o1", "o2", "o3", "o4"];
    diagram.target_schedule = vec![
        TargetDistribution {
            tick: 0,
            distribution: Distribution::from_pairs([("A", all)]),
        },
        TargetDistribution {
            tick: 5,
            distribution: Distribution::from_pairs([("A", &["o3", "o4"][..]), ("B", &["o1", "o2"][..])]),
        },
        TargetDistribution {
            tick: 10,
            distribution: Distribution::from_pairs([("B", &["o3", "o4"][..]), ("C", &["o1", "o2"][..])]),
        },
    ];
    ModelBundle {
        hierarchy: ParameterHierarchy {
            nodes: vec![node("p", 0, &[])],
        },
        classifiers: vec![classifier],
        canonical_diagrams: vec![diagram],
        ..ModelBundle::default()
    }
}

/// Monitoring rows realizing [`retro_bundle`]'s schedule; with `stagnant`
/// object o4 never leaves A.
pub fn retro_csv(stagnant: bool) -> String {
    let mut out = String::from("source,object,parameter,tick,value\n");
    for t in 0..=10u64 {
        for (obj, rate) in [("o1", 2.5), ("o2", 2.5), ("o3", 1.2), ("o4", 1.2)] {
            let rate = if stagnant && obj == "o4" { 0.0 } else { rate };
            let source = if obj < "o3" { "ME" } else { "MT" };
            out.push_str(&format!("{source},{obj},p,{t},{}\n", rate * t as f64 + 1.0));
        }
    }
    out
}

pub fn sym(s: &str) -> Cause {
    Cause::Symbol(s.into())
}

pub fn at(tick: u64, kind: EventKind) -> Event {
    Event { tick, kind }
}

pub fn delivered(symbol: &str, kind: SymbolKind, to: &str, outcome: Outcome) -> EventKind {
    EventKind::Delivered {
        symbol: symbol.into(),
        kind,
        recipient: to.into(),
        outcome,
    }
}

pub fn fired(symbol: &str, to: &str) -> EventKind {
    delivered(symbol, SymbolKind::Individual, to, Outcome::Fired)
}

pub fn started(d: &str, src: &str, dst: &str, done: u64, coupling: Coupling, cause: Cause) -> EventKind {
    EventKind::TransitionStarted {
        diagram: d.into(),
        src: src.into(),
        dst: dst.into(),
        completes_at: done,
        coupling,
        cause,
    }
}

pub fn arrived(d: &str, s: &str) -> EventKind {
    EventKind::Arrived {
        diagram: d.into(),
        state: s.into(),
    }
}

/// Hand-simulated run of the two-children system, tick by tick.
pub fn coupled_expected_events() -> Vec<Event> {
    use Coupling::*;
    use SymbolKind::General;
    vec![
        at(0, fired("a1", "W1")),
        at(0, started("W1", "S11", "S12", 1, Isolated, sym("a1"))),
        at(0, fired("b1", "W2")),
        at(0, started("W2", "S21", "S22", 1, Isolated, sym("b1"))),
        at(1, arrived("W1", "S12")),
        at(1, arrived("W2", "S22")),
        at(
            1,
            delivered(
                "g",
                General,
                "W",
                Outcome::Redundant {
                    why: RedundancyReason::ChildrenNotReady("G".into()),
                },
            ),
        ),
        at(1, fired("a2", "W1")),
        at(1, started("W1", "S12", "S13", 2, Isolated, sym("a2"))),
        at(1, fired("b2", "W2")),
        at(1, started("W2", "S22", "S23", 2, Isolated, sym("b2"))),
        at(2, arrived("W1", "S13")),
        at(2, arrived("W2", "S23")),
        at(3, delivered("g", General, "W", Outcome::Fired)),
        at(
            3,
            EventKind::GroupFired {
                group: "G".into(),
                direction: Direction::Downward,
            },
        ),
        at(3, started("W", "S1", "S2", 4, Coupled, sym("g"))),
        at(3, started("W1", "S13", "S14", 4, Coupled, Cause::Propagation)),
        at(3, started("W2", "S23", "S24", 4, Coupled, Cause::Propagation)),
        at(4, arrived("W", "S2")),
        at(4, arrived("W1", "S14")),
        at(4, arrived("W2", "S24")),
        at(4, fired("a4", "W1")),
        at(4, started("W1", "S14", "S15", 5, Isolated, sym("a4"))),
        at(4, fired("b4", "W2")),
        at(4, started("W2", "S24", "S25", 5, Isolated, sym("b4"))),
        at(5, arrived("W1", "S15")),
        at(5, arrived("W2", "S25")),
        at(5, fired("a5", "W1")),
        at(5, started("W1", "S15", "S16", 6, Isolated, sym("a5"))),
        at(5, fired("b5", "W2")),
        at(5, started("W2", "S25", "S26", 6, Isolated, sym("b5"))),
        at(6, arrived("W1", "S16")),
        at(6, arrived("W2", "S26")),
    ]
}

/// Exhaustive oracle: every rule sequence within the tick budget, checked
/// through traces and the partial-diagram verdict.
pub fn brute_force(init: &SystemState, rs: &[ElementaryRule], partial: &PartialDiagram) -> Option<u64> {
    let diagrams: BTreeMap<String, ControlDiagram> = init
        .states
        .keys()
        .map(|k| {
            let mut states: Vec<String> = rs
                .iter()
                .filter(|r| &r.subsystem == k)
                .flat_map(|r| [r.from.clone(), r.to.clone(), r.forbidden.clone()])
                .collect();
            states.extend(partial.support.iter().filter(|s| &s.diagram == k).map(|s| s.state.clone()));
            states.push(init.states[k].clone());
            states.sort();
            states.dedup();
            let d = ControlDiagram {
                id: k.clone(),
                states: states.iter().enumerate().map(|(i, s)| State::new(s, i as i64)).collect(),
                s0: init.states[k].clone(),
                s_star: init.states[k].clone(),
                alphabet: vec![],
                p1_arcs: vec![],
                p2_arcs: vec![],
            };
            (k.clone(), d)
        })
        .collect();
    let last_deadline = partial.support.iter().map(|s| s.deadline).max().unwrap_or(0);
    let mut best: Option<u64> = None;
    let mut stack: Vec<(BTreeMap<String, String>, Vec<(u64, String, String)>, u64, f64)> =
        vec![(init.states.clone(), vec![], 0, 0.0)];
    while let Some((states, moves, elapsed, spent)) = stack.pop() {
        let mut traces: BTreeMap<String, StateTrace> = init
            .states
            .iter()
            .map(|(k, v)| (k.clone(), StateTrace::new(k.clone(), v.clone())))
            .collect();
        for (t, d, s) in &moves {
            traces.get_mut(d).unwrap().push(*t, s.clone(), Cause::Propagation);
        }
        let loose = PartialDiagram {
            budget: Budget {
                max_ticks: u64::MAX,
                max_resources: f64::INFINITY,
            },
            ..partial.clone()
        };
        let horizon = elapsed.max(last_deadline);
        if check_partial_diagram(&traces, horizon, spent, &loose, &diagrams)
            .unwrap()
            .confirmed()
        {
            best = Some(best.map_or(elapsed, |b| b.min(elapsed)));
        }
        for r in rs {
            if states.get(&r.subsystem) != Some(&r.from) {
                continue;
            }
            let (e, sp) = (elapsed + r.duration, spent + r.resources);
            if e > partial.budget.max_ticks || sp > partial.budget.max_resources || sp > init.pool {
                continue;
            }
            let mut next = states.clone();
            next.insert(r.subsystem.clone(), r.to.clone());
            let mut m = moves.clone();
            m.push((e, r.subsystem.clone(), r.to.clone()));
            stack.push((next, m, e, sp));
        }
    }
    best
}

pub fn random_instance(seed: u64) -> (SystemState, Vec<ElementaryRule>, PartialDiagram) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..=2);
    let names: Vec<Vec<String>> = (0..k)
        .map(|d| {
            let n = rng.gen_range(3..=6);
            (0..n).map(|i| format!("d{d}s{i}")).collect()
        })
        .collect();
    let rules: Vec<ElementaryRule> = (0..rng.gen_range(1..=10))
        .map(|i| {
            let d = rng.gen_range(0..k);
            let st = &names[d];
            let from = rng.gen_range(0..st.len());
            let mut to = rng.gen_range(0..st.len() - 1);
            if to >= from {
                to += 1;
            }
            ElementaryRule {
                id: format!("r{i}"),
                subsystem: format!("d{d}"),
                from: st[from].clone(),
                to: st[to].clone(),
                forbidden: st[(from + 1) % st.len()].clone(),
                action: "act".into(),
                resources: rng.gen_range(0..=3) as f64,
                duration: rng.gen_range(1..=3),
            }
        })
        .collect();
    let init = SystemState::new((0..k).map(|d| (format!("d{d}"), names[d][0].clone())), rng.gen_range(4..=10) as f64);
    let mut deadline = 0;
    let support = (0..rng.gen_range(1..=3))
        .map(|_| {
            let d = rng.gen_range(0..k);
            deadline += rng.gen_range(0..=3);
            SupportState::new(format!("d{d}"), names[d][rng.gen_range(0..names[d].len())].clone(), deadline)
        })
        .collect();
    let partial = PartialDiagram {
        id: "p".into(),
        support,
        budget: Budget {
            max_ticks: rng.gen_range(3..=8),
            max_resources: rng.gen_range(2..=10) as f64,
        },
    };
    (init, rules, partial)
}

