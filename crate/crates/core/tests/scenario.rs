mod common;

use std::collections::BTreeMap;

use common::{
    at, brute_force, coupled, coupled_expected_events, coupled_schedule, random_instance, random_scenario, started, sym,
    COUPLED_HORIZON,
};
use hierion_core::model::{Cause, ParameterHierarchy, State, StateTrace};
use hierion_core::scenario::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trace(d: &str, entries: &[(u64, &str, Cause)]) -> StateTrace {
    StateTrace {
        diagram: d.into(),
        entries: entries
            .iter()
            .map(|(t, s, c)| hierion_core::model::TraceEntry {
                tick: *t,
                state: s.to_string(),
                cause: c.clone(),
            })
            .collect(),
    }
}

#[test]
fn coupled_matches_hand_trace() {
    let run = simulate(&coupled(coupled_schedule()), COUPLED_HORIZON, SimConfig::default()).unwrap();
    assert_eq!(run.events, coupled_expected_events());
    assert_eq!(
        run.traces["W"],
        trace("W", &[(0, "S1", Cause::Initial), (4, "S2", sym("g"))])
    );
    assert_eq!(
        run.traces["W1"],
        trace(
            "W1",
            &[
                (0, "S11", Cause::Initial),
                (1, "S12", sym("a1")),
                (2, "S13", sym("a2")),
                (4, "S14", Cause::Propagation),
                (5, "S15", sym("a4")),
                (6, "S16", sym("a5")),
            ]
        )
    );
    let m = run.metrics();
    assert_eq!(m.completeness, 1.0);
    assert_eq!(m.redundancy_count, 1);
    assert_eq!(m.omitted_possibilities, 0);
    assert_eq!((m.coupled_transitions, m.total_transitions), (3, 11));
}

#[test]
fn early_general_symbol_leaves_parent_unmoved() {
    let mut schedule = coupled_schedule();
    schedule.retain(|e| !(e.symbol == "g" && e.tick == 3));
    let run = simulate(&coupled(schedule), COUPLED_HORIZON, SimConfig::default()).unwrap();
    assert_eq!(run.traces["W"].final_state(), Some("S1"));
    assert_eq!(run.traces["W1"].final_state(), Some("S13"));
    assert_eq!(run.metrics().redundancy_count, 5, "early g plus a4, b4, a5, b5 with children stuck");
}

#[test]
fn lenient_policy_fires_parent_with_ready_children_only() {
    let schedule = vec![
        ScheduledSymbol::to(0, "a1", "W1"),
        ScheduledSymbol::to(1, "a2", "W1"),
        ScheduledSymbol::to(3, "g", "W"),
    ];
    let config = SimConfig {
        firing: FiringPolicy::Lenient,
    };
    let run = simulate(&coupled(schedule), 5, config).unwrap();
    assert_eq!(run.traces["W"].final_state(), Some("S2"));
    assert_eq!(run.traces["W1"].final_state(), Some("S14"));
    assert_eq!(run.traces["W2"].final_state(), Some("S21"));
}

#[test]
fn upward_after_effect_moves_parent() {
    let mut schedule = vec![
        ScheduledSymbol::to(0, "a1", "W1"),
        ScheduledSymbol::to(1, "a2", "W1"),
        ScheduledSymbol::to(0, "b1", "W2"),
        ScheduledSymbol::to(1, "b2", "W2"),
        ScheduledSymbol::to(2, "g", "W1"),
    ];
    schedule.sort_by_key(|e| e.tick);
    let mut s = coupled(schedule.clone());
    let run = simulate(&s, 6, SimConfig::default()).unwrap();
    assert_eq!(run.traces["W"].final_state(), Some("S1"), "only one child fired");

    s.after_effect[0].upward = UpwardPolicy::AtLeast(1);
    let run = simulate(&s, 6, SimConfig::default()).unwrap();
    assert_eq!(
        run.traces["W"].entries.last().map(|e| (e.tick, e.cause.clone())),
        Some((4, Cause::Propagation))
    );
    assert!(run.events.contains(&at(
        3,
        EventKind::GroupFired {
            group: "G".into(),
            direction: Direction::Upward
        }
    )));

    schedule.push(ScheduledSymbol::to(2, "g", "W2"));
    let run = simulate(&coupled(schedule), 6, SimConfig::default()).unwrap();
    assert_eq!(run.traces["W"].state_at(4), Some("S2"));
}

#[test]
fn empty_schedule_stays_put() {
    let s = Scenario::new("s", [ControlDiagram::chain("d", &["A", "B"], &["x"])]);
    let run = simulate(&s, 10, SimConfig::default()).unwrap();
    assert_eq!(run.traces["d"].entries.len(), 1);
    assert_eq!(run.metrics().completeness, 0.0);

    let mut lone = ControlDiagram::chain("e", &["A", "B"], &["x"]);
    lone.s_star = "A".into();
    let run = simulate(&Scenario::new("s", [lone]), 3, SimConfig::default()).unwrap();
    assert_eq!(run.metrics().completeness, 1.0);
}

#[test]
fn one_step_automaton() {
    let mut s = Scenario::new("s", [ControlDiagram::chain("d", &["A", "B"], &["x"])]);
    s.schedule = vec![ScheduledSymbol::to(0, "x", "d")];
    let run = simulate(&s, 2, SimConfig::default()).unwrap();
    assert_eq!(run.traces["d"].state_at(1), Some("B"));
    assert_eq!(run.traces["d"].state_at(0), Some("A"));
    assert_eq!(run.metrics().completeness, 1.0);
}

#[test]
fn busy_and_unmatched_deliveries_are_redundant() {
    let mut d = ControlDiagram::chain("d", &["A", "B", "C"], &["x", "y"]);
    d.p1_arcs[0].delta = 3;
    let mut s = Scenario::new("s", [d]);
    s.schedule = vec![
        ScheduledSymbol::to(0, "x", "d"),
        ScheduledSymbol::to(1, "y", "d"),
        ScheduledSymbol::to(4, "x", "d"),
    ];
    let run = simulate(&s, 5, SimConfig::default()).unwrap();
    assert_eq!(run.traces["d"].final_state(), Some("B"));
    assert_eq!(run.metrics().redundancy_count, 2);
}

#[test]
fn mixed_symbol_kinds_at_one_tick_count_once() {
    let mut d = ControlDiagram::chain("d", &["A", "B"], &["x"]);
    d.alphabet.push(Symbol::general("g"));
    d.p1_arcs.push(ControlArc::new("B", "A", "g", 1));
    let mut s = Scenario::new("s", [d]);
    s.schedule = vec![ScheduledSymbol::to(0, "x", "d"), ScheduledSymbol::to(0, "g", "d")];
    let run = simulate(&s, 2, SimConfig::default()).unwrap();
    // g hits a busy diagram (1) and arrives alongside x (1).
    assert_eq!(run.metrics().redundancy_count, 2);
}

#[test]
fn ambiguous_arc_is_refused() {
    let mut d = ControlDiagram::chain("d", &["A", "B", "C"], &["x", "y"]);
    d.p1_arcs.push(ControlArc::new("A", "C", "x", 1));
    let mut s = Scenario::new("s", [d]);
    s.schedule = vec![ScheduledSymbol::to(0, "x", "d")];
    assert!(matches!(
        simulate(&s, 1, SimConfig::default()),
        Err(ScenarioError::AmbiguousArc { tick: 0, .. })
    ));
}

#[test]
fn horizon_must_cover_schedule() {
    let mut s = Scenario::new("s", [ControlDiagram::chain("d", &["A", "B"], &["x"])]);
    s.schedule = vec![ScheduledSymbol::to(5, "x", "d")];
    assert_eq!(
        simulate(&s, 3, SimConfig::default()),
        Err(ScenarioError::HorizonBeforeSchedule { horizon: 3, last: 5 })
    );
}

#[test]
fn decay_fires_after_threshold_and_counts_as_omitted() {
    let mut d = ControlDiagram::chain("d", &["A", "B", "C"], &["x", "y"]);
    d.p2_arcs.push(DecayArc::new("B", "A", 2));
    let mut s = Scenario::new("s", [d]);
    s.schedule = vec![ScheduledSymbol::to(0, "x", "d"), ScheduledSymbol::to(4, "x", "d")];
    let run = simulate(&s, 8, SimConfig::default()).unwrap();
    let ticks: Vec<(u64, &str)> = run.traces["d"]
        .entries
        .iter()
        .map(|e| (e.tick, e.state.as_str()))
        .collect();
    assert_eq!(ticks, vec![(0, "A"), (1, "B"), (3, "A"), (5, "B"), (7, "A")]);
    assert_eq!(run.metrics().omitted_possibilities, 2);
}

#[test]
fn complexness_is_a_transition_ratio() {
    let mut events = Vec::new();
    for i in 0..12u64 {
        let coupling = if i < 3 { Coupling::Coupled } else { Coupling::Isolated };
        events.push(at(i, started("d", "A", "B", i + 1, coupling, Cause::Propagation)));
    }
    let run = SimulationRun {
        scenario: "s".into(),
        horizon: 12,
        traces: BTreeMap::from([("d".to_string(), StateTrace::new("d", "A"))]),
        events,
        finals: BTreeMap::from([("d".to_string(), "A".to_string())]),
    };
    let m = evaluate_scenario(&run);
    assert_eq!(m.complexness, 0.25);
    assert_eq!(m.completeness, 1.0);
}

#[test]
fn metric_timeline_ends_at_final_metrics() {
    let run = simulate(&coupled(coupled_schedule()), COUPLED_HORIZON, SimConfig::default()).unwrap();
    let timeline = metric_timeline(&run);
    assert_eq!(timeline.points.len(), COUPLED_HORIZON as usize + 1);
    let last = &timeline.points.last().unwrap().metrics;
    let m = run.metrics();
    assert_eq!(last["completeness"], m.completeness);
    assert_eq!(last["complexness"], m.complexness);
    assert_eq!(timeline.points[3].metrics["completeness"], 0.0);
    assert_eq!(timeline.points[4].metrics["completeness"], 1.0 / 3.0);
}

#[test]
fn group_requires_hierarchy_relation() {
    let mut s = coupled(vec![]);
    s.hierarchy = ParameterHierarchy::default();
    s.mapping.clear();
    let err = s.validate().unwrap_err();
    assert!(err.to_string().contains("mapped onto the hierarchy"));
}

fn rule(id: &str, from: &str, to: &str, resources: f64, duration: u64) -> ElementaryRule {
    ElementaryRule {
        id: id.into(),
        subsystem: "w".into(),
        from: from.into(),
        to: to.into(),
        forbidden: "Z".into(),
        action: "act".into(),
        resources,
        duration,
    }
}

fn w_diagram(decay: Option<u64>) -> BTreeMap<String, ControlDiagram> {
    let mut d = ControlDiagram {
        id: "w".into(),
        states: vec![State::new("Z", 0), State::new("A", 1), State::new("B", 2), State::new("C", 3)],
        s0: "A".into(),
        s_star: "C".into(),
        alphabet: vec![],
        p1_arcs: vec![],
        p2_arcs: vec![],
    };
    if let Some(th) = decay {
        d.p2_arcs.push(DecayArc::new("A", "Z", th));
    }
    BTreeMap::from([("w".to_string(), d)])
}

#[test]
fn nominal_rule_application() {
    let s = SystemState::new([("w", "A")], 5.0).at(10);
    let next = apply_rule(&rule("r", "A", "B", 2.0, 3), &s, &w_diagram(None)).unwrap();
    assert_eq!(next.states["w"], "B");
    assert_eq!(next.clock, 13);
    assert_eq!(next.pool, 3.0);
}

#[test]
fn rule_failures() {
    let r = rule("r", "A", "B", 2.0, 3);
    let poor = SystemState::new([("w", "A")], 1.0);
    let (f, after) = apply_rule(&r, &poor, &w_diagram(None)).unwrap_err();
    assert!(matches!(f, RuleFailure::InsufficientResources { .. }));
    assert_eq!(after, poor);

    let elsewhere = SystemState::new([("w", "C")], 5.0);
    let (f, _) = apply_rule(&r, &elsewhere, &w_diagram(None)).unwrap_err();
    assert!(matches!(f, RuleFailure::WrongSourceState { .. }));
}

#[test]
fn decay_into_forbidden_state_aborts_rule() {
    // w idle in A since tick 0, decay threshold 1: the backstep lands at
    // tick 1, inside the rule's [0, 3) window.
    let s = SystemState::new([("w", "A")], 5.0);
    let (f, after) = apply_rule(&rule("r", "A", "B", 2.0, 3), &s, &w_diagram(Some(1))).unwrap_err();
    assert_eq!(
        f,
        RuleFailure::ForbiddenBackstep {
            subsystem: "w".into(),
            state: "Z".into(),
            at: 1
        }
    );
    assert_eq!(after.states["w"], "Z");
    assert_eq!(after.pool, 3.0);

    // A slow decay that lands after completion does not interfere.
    let ok = apply_rule(&rule("r", "A", "B", 2.0, 3), &s, &w_diagram(Some(3))).unwrap();
    assert_eq!(ok.states["w"], "B");
}

fn rules(list: &[ElementaryRule]) -> BTreeMap<String, ElementaryRule> {
    list.iter().map(|r| (r.id.clone(), r.clone())).collect()
}

#[test]
fn goal_tree_examples() {
    let rs = rules(&[rule("r1", "A", "B", 1.0, 1), rule("r2", "B", "C", 1.0, 1), rule("big", "A", "B", 9.0, 1)]);
    let init = SystemState::new([("w", "A")], 5.0);
    let d = w_diagram(None);

    let single = GoalTree {
        id: "t".into(),
        root: GoalNode::terminal("g", "r1"),
    };
    assert!(single.problems(&rs).is_empty());
    let rep = run_goal_tree(&single, &rs, &d, &init);
    assert!(rep.success);
    assert_eq!(rep.steps.len(), 1);

    let ordered = GoalTree {
        id: "t".into(),
        root: GoalNode::goal("top", vec![GoalNode::terminal("g1", "r1"), GoalNode::terminal("g2", "r2")]),
    };
    let rep = run_goal_tree(&ordered, &rs, &d, &init);
    assert!(rep.success);
    assert_eq!(rep.final_state.states["w"], "C");
    assert_eq!(rep.remaining_pool, 3.0);

    let reversed = GoalTree {
        id: "t".into(),
        root: GoalNode::goal("top", vec![GoalNode::terminal("g2", "r2"), GoalNode::terminal("g1", "r1")]),
    };
    let rep = run_goal_tree(&reversed, &rs, &d, &init);
    assert!(!rep.success);
    assert_eq!(rep.first_failure.as_deref(), Some("g2"));
    assert_eq!(rep.steps[1].outcome, StepOutcome::Skipped);

    let broke = GoalTree {
        id: "t".into(),
        root: GoalNode::goal("top", vec![GoalNode::terminal("gb", "big")]),
    };
    let rep = run_goal_tree(&broke, &rs, &d, &init);
    assert!(!rep.success);
    assert!(matches!(
        &rep.steps[0].outcome,
        StepOutcome::Failed {
            failure: RuleFailure::InsufficientResources { .. }
        }
    ));
}

#[test]
fn failed_subtree_does_not_stop_ancestor_siblings() {
    let rs = rules(&[rule("r1", "A", "B", 1.0, 1), rule("r2", "B", "C", 1.0, 1), rule("bad", "C", "A", 1.0, 1)]);
    let tree = GoalTree {
        id: "t".into(),
        root: GoalNode::goal(
            "top",
            vec![
                GoalNode::goal("left", vec![GoalNode::terminal("x", "bad"), GoalNode::terminal("y", "r2")]),
                GoalNode::goal("right", vec![GoalNode::terminal("z", "r1")]),
            ],
        ),
    };
    let rep = run_goal_tree(&tree, &rs, &w_diagram(None), &SystemState::new([("w", "A")], 5.0));
    let goals: Vec<(&str, bool)> = rep
        .steps
        .iter()
        .map(|s| (s.goal.as_str(), matches!(s.outcome, StepOutcome::Applied { .. })))
        .collect();
    assert_eq!(goals, vec![("x", false), ("y", false), ("z", true)]);
    assert!(!rep.success);
}

#[test]
fn partial_diagram_examples() {
    let run = simulate(&coupled(coupled_schedule()), COUPLED_HORIZON, SimConfig::default()).unwrap();
    let s = coupled(vec![]);
    let diagrams: BTreeMap<String, ControlDiagram> = s.diagrams.clone();
    let pair = PartialDiagram::endpoints("p", &diagrams, COUPLED_HORIZON);
    let v = check_partial_diagram(&run.traces, run.horizon, 0.0, &pair, &diagrams).unwrap();
    assert!(v.confirmed());

    let mut miss = pair.clone();
    miss.support.push(SupportState::new("W", "S1", COUPLED_HORIZON));
    let v = check_partial_diagram(&run.traces, run.horizon, 0.0, &miss, &diagrams).unwrap();
    assert_eq!(
        v,
        PartialVerdict::Refuted(Refutation::Missed {
            index: 6,
            support: SupportState::new("W", "S1", COUPLED_HORIZON),
            actual: Some("S2".into())
        })
    );

    let v = check_partial_diagram(&run.traces, run.horizon, 1.5, &pair, &diagrams).unwrap();
    assert!(matches!(v, PartialVerdict::Refuted(Refutation::BudgetExceeded { .. })));

    let mut unknown = pair.clone();
    unknown.support[0].state = "nope".into();
    assert!(matches!(
        check_partial_diagram(&run.traces, run.horizon, 0.0, &unknown, &diagrams),
        Err(PartialError::UnknownSupportState { .. })
    ));
}

fn chain_rules() -> Vec<ElementaryRule> {
    vec![rule("ab", "A", "B", 1.0, 2), rule("bc", "B", "C", 1.0, 1)]
}

fn target(deadline: u64) -> PartialDiagram {
    PartialDiagram {
        id: "p".into(),
        support: vec![SupportState::new("w", "C", deadline)],
        budget: Budget {
            max_ticks: 10,
            max_resources: 10.0,
        },
    }
}

#[test]
fn forecast_examples() {
    let init = SystemState::new([("w", "A")], 10.0);
    let cfg = ForecastConfig::default();

    let already = PartialDiagram {
        support: vec![SupportState::new("w", "A", 0)],
        ..target(0)
    };
    assert_eq!(forecast(&init, &chain_rules(), &already, cfg).steps(), Some(&[][..]));

    match forecast(&init, &chain_rules(), &target(3), cfg) {
        ForecastOutcome::Plan { steps, ticks, predicted, .. } => {
            let ids: Vec<&str> = steps.iter().map(|s| s.rule.as_str()).collect();
            assert_eq!(ids, ["ab", "bc"]);
            assert_eq!(ticks, 3);
            assert_eq!(predicted[0].arcs.iter().map(|a| a.delta).collect::<Vec<_>>(), [2, 1]);
        }
        other => panic!("expected plan, got {other:?}"),
    }

    match forecast(&init, &chain_rules(), &target(2), cfg) {
        ForecastOutcome::Infeasible { prefix, exhausted, .. } => {
            assert!(prefix.is_empty());
            assert!(exhausted);
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn forecast_resource_first_order_prefers_cheap_plan() {
    let rs = vec![rule("fast", "A", "C", 5.0, 1), rule("ab", "A", "B", 1.0, 2), rule("bc", "B", "C", 1.0, 2)];
    let init = SystemState::new([("w", "A")], 10.0);
    let by_ticks = forecast(&init, &rs, &target(9), ForecastConfig::default());
    assert_eq!(by_ticks.steps().unwrap().len(), 1);
    let cfg = ForecastConfig {
        order: CostOrder::ResourcesThenTicks,
        ..ForecastConfig::default()
    };
    assert_eq!(forecast(&init, &rs, &target(9), cfg).steps().unwrap().len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forecast_matches_exhaustive_minimum(seed in any::<u64>()) {
        let (init, rs, partial) = random_instance(seed);
        let oracle = brute_force(&init, &rs, &partial);
        let out = forecast(&init, &rs, &partial, ForecastConfig::default());
        match (&out, oracle) {
            (ForecastOutcome::Plan { ticks, .. }, Some(min)) => prop_assert_eq!(*ticks, min),
            (ForecastOutcome::Infeasible { .. }, None) => {}
            _ => prop_assert!(false, "forecast {:?} vs oracle {:?}", out, oracle),
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let s = random_scenario(seed, 3, 12);
        let a = simulate(&s, 12, SimConfig::default()).unwrap();
        let b = simulate(&s, 12, SimConfig::default()).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn removing_an_independent_diagram_is_isolated(seed in any::<u64>()) {
        let s = random_scenario(seed, 3, 12);
        let full = simulate(&s, 12, SimConfig::default()).unwrap();
        let cut = simulate(&s.without_diagram("D1"), 12, SimConfig::default()).unwrap();
        prop_assert!(!cut.traces.contains_key("D1"));
        for (id, t) in &cut.traces {
            prop_assert_eq!(t, &full.traces[id]);
        }
    }

    #[test]
    fn completeness_matches_endpoint_check(seed in any::<u64>()) {
        let s = random_scenario(seed, 2, 10);
        let run = simulate(&s, 10, SimConfig::default()).unwrap();
        let pair = PartialDiagram::endpoints("pair", &s.diagrams, 10);
        let v = check_partial_diagram(&run.traces, 10, 0.0, &pair, &s.diagrams).unwrap();
        prop_assert_eq!(run.metrics().completeness == 1.0, v.confirmed());
    }

    #[test]
    fn goal_tree_pool_accounting(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = ["Z", "A", "B", "C"];
        let list: Vec<ElementaryRule> = (0..6).map(|i| {
            let from = rng.gen_range(1..4);
            let to = 1 + (from + rng.gen_range(0..2)) % 3;
            rule(&format!("r{i}"), states[from], states[to], rng.gen_range(0..4) as f64, rng.gen_range(1..4))
        }).collect();
        let leaves: Vec<GoalNode> = list.iter().map(|r| GoalNode::terminal(format!("g{}", r.id), &r.id)).collect();
        let tree = GoalTree { id: "t".into(), root: GoalNode::goal("top", vec![
            GoalNode::goal("l", leaves[..3].to_vec()),
            GoalNode::goal("r", leaves[3..].to_vec()),
        ]) };
        let rs = rules(&list);
        let init = SystemState::new([("w", "A")], rng.gen_range(0..12) as f64);
        let rep = run_goal_tree(&tree, &rs, &w_diagram(Some(rng.gen_range(1..4))), &init);
        let charged: f64 = rep.steps.iter().map(|s| match &s.outcome {
            StepOutcome::Applied { .. } => rs[&s.rule].resources,
            StepOutcome::Failed { failure } if failure.is_sunk() => rs[&s.rule].resources,
            _ => 0.0,
        }).sum();
        prop_assert!((rep.remaining_pool - (init.pool - charged)).abs() < 1e-9);
    }
}
