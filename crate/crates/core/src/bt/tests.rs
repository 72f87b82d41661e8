use serde_json::json;

use super::*;
use crate::world::{Joints, WorldConfig};

/// Plays back a status per tick: R running, S success, F retryable failure,
/// G gate trip. Ticking past the end fails loudly.
struct Script {
    steps: Vec<char>,
    at: usize,
}

impl Behavior for Script {
    fn tick(&mut self, ctx: &mut TickContext<'_, '_>) -> NodeStatus {
        let Some(&c) = self.steps.get(self.at) else {
            return ctx.fail(FailureReason::ActionFailed {
                detail: "over-ticked".into(),
            });
        };
        self.at += 1;
        match c {
            'R' => {
                let gate = ctx.gate;
                ctx.command(ControlIntent::Velocity {
                    v: Joints::repeat(0.1),
                    gate,
                });
                NodeStatus::Running
            }
            'S' => {
                let gate = ctx.gate;
                ctx.command(ControlIntent::Velocity {
                    v: Joints::repeat(0.2),
                    gate,
                });
                NodeStatus::Success
            }
            'F' => ctx.fail(FailureReason::ActionFailed {
                detail: "scripted".into(),
            }),
            'G' => ctx.fail(FailureReason::ForceGateTripped {
                force: 5.0,
                torque: 0.0,
            }),
            other => panic!("bad script char {other}"),
        }
    }

    fn reset(&mut self) {
        self.at = 0;
    }
}

fn registry() -> Registry {
    let mut r = Registry::default();
    r.register_action("script", |p| {
        let s = p["s"].as_str().ok_or_else(|| BtError::InvalidParams {
            binding: "script".into(),
            reason: "missing s".into(),
        })?;
        Ok(Box::new(Script {
            steps: s.chars().collect(),
            at: 0,
        }))
    });
    r
}

fn leaf(id: &str, s: &str) -> NodeDef {
    NodeDef::Action {
        id: id.into(),
        binding: "script".into(),
        params: json!({ "s": s }),
    }
}

fn seq(id: &str, children: Vec<NodeDef>) -> NodeDef {
    NodeDef::Sequence {
        id: id.into(),
        children,
    }
}

fn fallback(id: &str, children: Vec<NodeDef>) -> NodeDef {
    NodeDef::Fallback {
        id: id.into(),
        children,
    }
}

fn deco(id: &str, decorator: DecoratorKind, child: NodeDef) -> NodeDef {
    NodeDef::Decorator {
        id: id.into(),
        decorator,
        child: Box::new(child),
    }
}

fn tree(root: NodeDef) -> TreeDefinition {
    TreeDefinition {
        name: "t".into(),
        root,
        blackboard_schema: BTreeMap::new(),
    }
}

struct Env {
    world: WorldState,
    perception: PerceptionSnapshot,
    params: ParamSet,
}

impl Env {
    fn new() -> Self {
        let cfg = WorldConfig::reference();
        let q0 = cfg.stations.rest;
        Self {
            world: WorldState::new(cfg, Vec::new(), q0, 1).unwrap(),
            perception: PerceptionSnapshot::default(),
            params: ParamSet::default(),
        }
    }

    fn inputs(&self, now: f64) -> TickInputs<'_> {
        TickInputs {
            world: &self.world,
            ft: None,
            guard: GuardState::Run,
            last_gate: None,
            perception: &self.perception,
            params: &self.params,
            library: None,
            now,
            dt: 0.01,
        }
    }
}

fn run(root: NodeDef, max_ticks: usize) -> (TreeExecution, Vec<TickOutput>) {
    let env = Env::new();
    let mut ex = registry().instantiate(&tree(root), 1).unwrap();
    let mut outs = Vec::new();
    for k in 0..max_ticks {
        if ex.is_terminal() {
            break;
        }
        outs.push(ex.tick(&env.inputs(k as f64 * 0.01)).unwrap());
    }
    (ex, outs)
}

fn statuses(outs: &[TickOutput]) -> Vec<NodeStatus> {
    outs.iter().map(|o| o.status).collect()
}

use NodeStatus::{Failure, Running, Success};

#[test]
fn sequence_keeps_memory() {
    let (ex, outs) = run(seq("root", vec![leaf("a", "S"), leaf("b", "RS"), leaf("c", "S")]), 10);
    assert_eq!(statuses(&outs), vec![Running, Success]);
    assert_eq!(ex.current_path, vec!["root", "c"]);
    assert!(ex.failure.is_none());
}

#[test]
fn sequence_stops_at_first_failure() {
    let (ex, outs) = run(seq("root", vec![leaf("a", "F"), leaf("b", "S")]), 10);
    assert_eq!(statuses(&outs), vec![Failure]);
    assert_eq!(ex.current_path, vec!["root", "a"]);
}

#[test]
fn fallback_tries_alternatives() {
    let (ex, outs) = run(fallback("root", vec![leaf("a", "RF"), leaf("b", "S")]), 10);
    assert_eq!(statuses(&outs), vec![Running, Success]);
    assert!(ex.failure.is_none());
}

#[test]
fn fallback_propagates_safety_failures() {
    let (ex, outs) = run(fallback("root", vec![leaf("a", "G"), leaf("b", "S")]), 10);
    assert_eq!(statuses(&outs), vec![Failure]);
    assert!(matches!(ex.failure, Some(FailureReason::ForceGateTripped { .. })));
}

#[test]
fn fallback_reports_last_failure() {
    let (ex, _) = run(fallback("root", vec![leaf("a", "F"), leaf("b", "F")]), 10);
    assert!(matches!(ex.failure, Some(FailureReason::ActionFailed { .. })));
}

#[test]
fn retry_resets_child() {
    let r = |n| DecoratorKind::Retry { attempts: n };
    let (_, outs) = run(deco("retry", r(2), leaf("a", "RF")), 10);
    // The script restarts after the reset, so the second attempt fails too.
    assert_eq!(statuses(&outs), vec![Running, Running, Running, Failure]);
    let (_, outs) = run(deco("retry", r(1), leaf("a", "F")), 10);
    assert_eq!(statuses(&outs), vec![Failure]);
    let (ex, outs) = run(deco("retry", r(5), leaf("a", "G")), 10);
    assert_eq!(statuses(&outs), vec![Failure]);
    assert!(!ex.failure.unwrap().retryable());
}

#[test]
fn timeout_fails_running_child() {
    let (ex, outs) = run(
        deco("to", DecoratorKind::Timeout { seconds: 0.05 }, leaf("a", &"R".repeat(50))),
        50,
    );
    assert_eq!(outs.len(), 7);
    assert_eq!(ex.failure, Some(FailureReason::Timeout));
    assert_eq!(outs.last().unwrap().intent, Some(ControlIntent::Hold));
}

#[test]
fn gate_override_scopes_thresholds() {
    let strong = GateConfig {
        f_max: 10.0,
        tau_max: 4.0,
    };
    let root = seq(
        "root",
        vec![
            deco("gate", DecoratorKind::GateOverride { gate: strong }, leaf("a", "RS")),
            leaf("b", "RS"),
        ],
    );
    let (_, outs) = run(root, 10);
    let gate_of = |o: &TickOutput| match o.intent {
        Some(ControlIntent::Velocity { gate, .. }) => gate,
        ref other => panic!("unexpected intent {other:?}"),
    };
    assert_eq!(gate_of(&outs[0]), strong);
    assert_eq!(gate_of(&outs[1]), GateConfig::default());
}

#[test]
fn preemption_takes_one_tick() {
    let env = Env::new();
    let mut ex = registry()
        .instantiate(&tree(leaf("a", &"R".repeat(100))), 7)
        .unwrap();
    for k in 0..5 {
        ex.tick(&env.inputs(k as f64 * 0.01)).unwrap();
    }
    ex.preempt().unwrap();
    let out = ex.tick(&env.inputs(0.05)).unwrap();
    assert_eq!(out.status, Failure);
    assert_eq!(out.intent, Some(ControlIntent::Hold));
    assert_eq!(ex.failure, Some(FailureReason::Preempted));
    assert_eq!(ex.tick(&env.inputs(0.06)).unwrap_err(), BtError::AlreadyTerminal);
    assert_eq!(ex.preempt().unwrap_err(), BtError::AlreadyTerminal);
}

#[test]
fn terminal_tick_never_commands_motion() {
    for root in [
        seq("root", vec![leaf("a", "S")]),
        seq("root", vec![leaf("a", "R"), leaf("b", "S")]),
        fallback("root", vec![leaf("a", "F"), leaf("b", "G")]),
    ] {
        let (ex, outs) = run(root, 10);
        assert!(ex.is_terminal());
        let last = outs.last().unwrap();
        assert_eq!(last.intent, Some(ControlIntent::Hold));
        for o in &outs[..outs.len() - 1] {
            assert_eq!(o.status, Running);
        }
    }
}

#[test]
fn abort_ends_execution() {
    let env = Env::new();
    let mut ex = registry().instantiate(&tree(leaf("a", "RRR")), 1).unwrap();
    ex.tick(&env.inputs(0.0)).unwrap();
    ex.abort(FailureReason::SafetyShutdown);
    assert!(ex.is_terminal());
    assert_eq!(ex.failure, Some(FailureReason::SafetyShutdown));
    assert!(ex.tick(&env.inputs(0.01)).is_err());
}

#[test]
fn unbound_bindings_fail_at_load() {
    let def = tree(NodeDef::Action {
        id: "x".into(),
        binding: "fly".into(),
        params: json!({}),
    });
    assert_eq!(
        registry().instantiate(&def, 1).unwrap_err(),
        BtError::UnboundAction("fly".into())
    );
    let def = tree(NodeDef::Condition {
        id: "x".into(),
        binding: "sunny".into(),
        params: json!({}),
    });
    assert_eq!(
        Registry::feeding().instantiate(&def, 1).unwrap_err(),
        BtError::UnboundCondition("sunny".into())
    );
}

#[test]
fn invalid_trees_rejected() {
    let dup = seq("a", vec![leaf("a", "S")]);
    assert!(matches!(registry().instantiate(&tree(dup), 1), Err(BtError::InvalidTree(_))));
    let empty = seq("a", vec![]);
    assert!(matches!(registry().instantiate(&tree(empty), 1), Err(BtError::InvalidTree(_))));
    let bad = deco("d", DecoratorKind::Timeout { seconds: 0.0 }, leaf("a", "S"));
    assert!(matches!(registry().instantiate(&tree(bad), 1), Err(BtError::InvalidTree(_))));
    let bad_params = NodeDef::Action {
        id: "m".into(),
        binding: "move_to_configuration".into(),
        params: json!({ "target": 3 }),
    };
    assert!(matches!(
        Registry::feeding().instantiate(&tree(bad_params), 1),
        Err(BtError::InvalidParams { .. })
    ));
}

#[test]
fn definitions_round_trip_through_json() {
    let def = tree(seq(
        "root",
        vec![
            deco("retry", DecoratorKind::Retry { attempts: 3 }, leaf("a", "S")),
            fallback("fb", vec![leaf("b", "F"), leaf("c", "S")]),
        ],
    ));
    let text = serde_json::to_string(&def).unwrap();
    let back: TreeDefinition = serde_json::from_str(&text).unwrap();
    assert_eq!(back, def);
}

#[test]
fn feeding_trees_bind() {
    let r = Registry::feeding();
    let env = Env::new();
    let mut plate = env.world.plate.clone();
    plate.push(crate::world::FoodItem {
        id: "g1".into(),
        food_class: "grape".into(),
        pose: crate::world::Pose::from_translation(0.3, 0.35, 0.012),
        major_axis: nalgebra::Vector3::x(),
        size: nalgebra::Vector3::repeat(0.024),
        resistance: 180.0,
        ground_truth_success: BTreeMap::new(),
    });
    let args = TreeArgs {
        food_id: Some("g1".into()),
        action_index: Some(3),
    };
    for name in TreeName::ALL {
        let def = build_tree(name, &args, &plate).unwrap();
        assert_eq!(TreeName::parse(&def.name).unwrap(), name);
        r.instantiate(&def, 1).unwrap();
    }
    assert_eq!(
        build_acquire_food_tree("nope", 0, &plate).unwrap_err(),
        BtError::UnknownFood("nope".into())
    );
    assert_eq!(
        build_acquire_food_tree("g1", NUM_ACTIONS, &plate).unwrap_err(),
        BtError::ActionIndexOutOfRange(NUM_ACTIONS)
    );
    assert!(build_tree(TreeName::AcquireFood, &TreeArgs::default(), &plate).is_err());
    assert!(TreeName::parse("dance").is_err());
}

#[test]
fn app_state_table() {
    use AppState::*;
    let expected = [
        (Home, None),
        (BiteSelection, None),
        (MovingAbovePlate, Some(TreeName::MoveAbovePlate)),
        (Acquiring, Some(TreeName::AcquireFood)),
        (MovingToStaging, Some(TreeName::MoveToStaging)),
        (AwaitingReady, None),
        (MovingToMouth, Some(TreeName::MoveToMouth)),
        (InMouthTransfer, Some(TreeName::MoveToMouth)),
        (Retracting, Some(TreeName::Retract)),
        (Stowing, Some(TreeName::Stow)),
        (Settings, None),
    ];
    assert_eq!(expected.len(), AppState::ALL.len());
    for (state, tree) in expected {
        assert_eq!(app_state_tree(state), tree, "{state:?}");
    }
}

#[test]
fn second_command_in_a_tick_is_dropped() {
    struct Twice;
    impl Behavior for Twice {
        fn tick(&mut self, ctx: &mut TickContext<'_, '_>) -> NodeStatus {
            ctx.command(ControlIntent::Hold);
            let gate = ctx.gate;
            ctx.command(ControlIntent::Velocity {
                v: Joints::repeat(1.0),
                gate,
            });
            NodeStatus::Running
        }
        fn reset(&mut self) {}
    }
    let mut r = registry();
    r.register_action("twice", |_| Ok(Box::new(Twice)));
    let env = Env::new();
    let def = tree(NodeDef::Action {
        id: "t".into(),
        binding: "twice".into(),
        params: json!({}),
    });
    let mut ex = r.instantiate(&def, 1).unwrap();
    assert_eq!(ex.tick(&env.inputs(0.0)).unwrap().intent, Some(ControlIntent::Hold));
}
