use super::*;
use crate::circuit::{LeafDistribution, Node};
use crate::knowledge::{parse_live_interaction, DistributionSpec, KnowledgeKind, PriorEntry};
use crate::objectives::MixedSynthetic;
use crate::space::{HyperparameterDef, Value};
use serde_json::json;

fn mixed_space() -> SearchSpace {
    MixedSynthetic::new().space().clone()
}

fn peaked(n: usize, at: usize, rest: f64) -> LeafDistribution {
    let mut probs = vec![rest; n];
    probs[at] = 1.0 - rest * (n - 1) as f64;
    LeafDistribution::Categorical { probs }
}

/// Two components over (C, K, x, score): `(a, 3, 0.2)` with high scores and
/// `(c, 0, 0.5)` with low scores.
fn two_component_surrogate(space: &SearchSpace, rest: f64) -> Surrogate {
    let enc = Encoder::new(space);
    let mut nodes = Vec::new();
    let mut component = |c: usize, k: usize, x: f64, f: f64| {
        let base = nodes.len();
        nodes.push(Node::Leaf {
            var: 0,
            dist: peaked(3, c, rest),
        });
        nodes.push(Node::Leaf {
            var: 1,
            dist: peaked(10, k, rest),
        });
        nodes.push(Node::Leaf {
            var: 2,
            dist: LeafDistribution::Gaussian { mean: x, std: 1e-3 },
        });
        nodes.push(Node::Leaf {
            var: 3,
            dist: LeafDistribution::Gaussian { mean: f, std: 0.3 },
        });
        nodes.push(Node::Product {
            children: (base..base + 4).collect(),
        });
        base + 4
    };
    let good = component(0, 3, 0.2, 2.0);
    let bad = component(2, 0, 0.5, -2.0);
    nodes.push(Node::Sum {
        children: vec![(good, 0.5), (bad, 0.5)],
    });
    let root = nodes.len() - 1;
    let circuit = Circuit::new(enc.variables(), nodes, root, Some(space.score_name())).unwrap();
    Surrogate {
        circuit,
        scale: ScoreScale { mean: 0.0, sd: 1.0 },
        fitted_at: 5,
        prior_weight: 0.0,
    }
}

fn knowledge(space: &SearchSpace, doc: serde_json::Value) -> UserKnowledge {
    match parse_live_interaction(&doc, space).unwrap() {
        Interaction::Set(k) => k,
        Interaction::Clear { .. } => panic!("expected knowledge"),
    }
}

#[test]
fn gate_probability_examples() {
    let mut state = DecayState::new(0.9, 1.0);
    state.knowledge = Some(UserKnowledge::point([("K".to_string(), Value::Int(1))], 10));
    state.since = 10;
    assert_eq!(gate_probability(&state, 10), 1.0);
    assert!((gate_probability(&state, 17) - 0.4782969).abs() < 1e-12);
    let flat = DecayState {
        gamma: 1.0,
        rho: 0.5,
        ..state.clone()
    };
    assert_eq!(gate_probability(&flat, 10), 0.5);
    assert_eq!(gate_probability(&flat, 1000), 0.5);
    assert_eq!(gate_probability(&DecayState::new(0.9, 1.0), 3), 0.0);
}

#[test]
fn refit_schedule() {
    let p = OptimizerParams::default();
    let refits: Vec<usize> = (0..100).filter(|&t| p.is_refit_iteration(t)).collect();
    assert_eq!(refits, vec![5, 25, 45, 65, 85]);
}

#[test]
fn params_are_validated() {
    for bad in [
        OptimizerParams {
            init_samples: 0,
            ..Default::default()
        },
        OptimizerParams {
            gamma: 0.0,
            ..Default::default()
        },
        OptimizerParams {
            rho: 1.5,
            ..Default::default()
        },
        OptimizerParams {
            n_conditions: 0,
            ..Default::default()
        },
    ] {
        assert!(matches!(
            Optimizer::new(&mixed_space(), bad),
            Err(OptimizerError::Params(_))
        ));
    }
}

#[test]
fn dominant_component_is_selected() {
    let space = mixed_space();
    let enc = Encoder::new(&space);
    let s = two_component_surrogate(&space, 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut hits = 0;
    for _ in 0..10_000 {
        let (c, _) = select_without_knowledge(&s, &enc, 2.0, &mut rng).unwrap();
        assert!(space.validate(&c).is_ok());
        hits += usize::from(c.get("C") == Some(&Value::Label("a".into())));
    }
    assert!(hits >= 9_990, "{hits}");
}

#[test]
fn degenerate_surrogate_returns_its_mode() {
    let space = mixed_space();
    let enc = Encoder::new(&space);
    let s = two_component_surrogate(&space, 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (c, _) = select_without_knowledge(&s, &enc, 2.0, &mut rng).unwrap();
    assert_eq!(c.get("C"), Some(&Value::Label("a".into())));
    assert_eq!(c.get("K"), Some(&Value::Int(3)));
    assert!((c.get("x").unwrap().as_f64().unwrap() - 0.2).abs() < 0.01);
}

#[test]
fn point_mass_is_always_respected() {
    let space = mixed_space();
    let enc = Encoder::new(&space);
    let s = two_component_surrogate(&space, 1e-4);
    let k = knowledge(&space, json!({"kind": "point", "intervention": {"C": "b", "x": 0.9}}));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let (c, _) = select_with_knowledge(&s, &enc, 2.0, &k, 20, 1, &mut rng).unwrap();
        assert_eq!(c.get("C"), Some(&Value::Label("b".into())));
        assert_eq!(c.get("x"), Some(&Value::Real(0.9)));
        assert!(space.validate(&c).is_ok());
    }
}

#[test]
fn categorical_prior_frequency_is_matched() {
    let space = mixed_space();
    let enc = Encoder::new(&space);
    let s = two_component_surrogate(&space, 1e-4);
    let k = knowledge(
        &space,
        json!({"kind": "dist", "intervention": {"C": {"dist": "cat", "parameters": [1e4, 1.0], "values": ["a", "b"]}}}),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 1000;
    let a = (0..n)
        .filter(|_| {
            let (c, _) = select_with_knowledge(&s, &enc, 2.0, &k, 20, 1, &mut rng).unwrap();
            c.get("C") == Some(&Value::Label("a".into()))
        })
        .count();
    let expected = 1e4 / (1e4 + 1.0);
    assert!((a as f64 / n as f64 - expected).abs() <= 0.02);
}

#[test]
fn single_sample_per_condition_is_the_draw() {
    // With B = 1 the survivor of each condition is its only draw, so the
    // selection consumes exactly the same random stream as plain sampling.
    let space = mixed_space();
    let enc = Encoder::new(&space);
    let s = two_component_surrogate(&space, 1e-4);
    let k = knowledge(&space, json!({"kind": "point", "intervention": {"C": "c"}}));
    let mut a = ChaCha8Rng::seed_from_u64(5);
    let mut b = a.clone();
    let (picked, draws) = select_with_knowledge(&s, &enc, 2.0, &k, 1, 1, &mut a).unwrap();
    let mut values = enc.encode_partial(&sample_prior(&k, &space, &mut b));
    values[enc.score_index()] = Some(2.0);
    let ev = s.circuit.evidence_from_values(values).unwrap();
    let x = s.circuit.conditional_sample(&ev, &mut b);
    assert_eq!(draws[0], x[..enc.score_index()].to_vec());
    assert_eq!(picked, enc.decode(&x));
}

#[test]
fn knowledge_sets_are_checked_and_replaced() {
    let space = mixed_space();
    let mut opt = Optimizer::new(&space, OptimizerParams::default()).unwrap();
    let obj = MixedSynthetic::new();
    for _ in 0..15 {
        opt.step(&obj).unwrap();
    }
    let a = knowledge(&space, json!({"kind": "point", "intervention": {"C": "a"}}));
    let b = knowledge(&space, json!({"kind": "point", "intervention": {"C": "b"}}));
    opt.inject(Interaction::Set(a)).unwrap();
    assert_eq!(opt.gate_probability(), 1.0);
    assert_eq!(opt.decay().since, 15);
    opt.step(&obj).unwrap();
    opt.inject(Interaction::Set(b.clone())).unwrap();
    assert_eq!(opt.decay().knowledge.as_ref().unwrap().entries, b.entries);
    assert_eq!(opt.decay().since, 16);
    opt.inject(Interaction::Clear { at: 0, polarity: None }).unwrap();
    for _ in 0..30 {
        assert!(!opt.step(&obj).unwrap().used_knowledge);
    }
}

#[test]
fn unknown_knowledge_names_are_rejected() {
    let mut opt = Optimizer::new(&mixed_space(), OptimizerParams::default()).unwrap();
    let k = UserKnowledge::point([("nope".to_string(), Value::Int(1))], 0);
    assert!(opt.inject(Interaction::Set(k)).is_err());
}

#[test]
fn trial_flags_and_incumbent() {
    let space = mixed_space();
    let obj = MixedSynthetic::new();
    let mut opt = Optimizer::new(
        &space,
        OptimizerParams {
            max_iterations: 60,
            seed: 9,
            ..Default::default()
        },
    )
    .unwrap();
    while !opt.is_finished() {
        opt.step(&obj).unwrap();
    }
    let trials = opt.history().trials();
    assert_eq!(trials.len(), 60);
    assert!(trials.iter().all(|t| !t.used_knowledge));
    let refits: Vec<usize> = trials.iter().filter(|t| t.refit_flag).map(|t| t.iteration).collect();
    assert_eq!(refits, vec![5, 25, 45]);
    let mut best = f64::NEG_INFINITY;
    for t in trials {
        best = best.max(t.score.unwrap());
        assert_eq!(t.incumbent_score, Some(best));
        assert!(space.validate(&t.config).is_ok());
        assert_eq!(t.sampling_variance_per_hyperparameter.len(), 3);
    }
    assert_eq!(opt.history().incumbent_score(), Some(best));
    assert_eq!(opt.refits().len(), 3);
    assert!(opt
        .refits()
        .iter()
        .all(|r| r.error.is_none() && r.ei_lower_bound.is_some()));
}

#[test]
fn failed_trials_are_recorded_but_not_learned() {
    let space = mixed_space();
    let mut opt = Optimizer::new(&space, OptimizerParams::default()).unwrap();
    for i in 0..30 {
        opt.suggest().unwrap();
        let outcome = if i % 3 == 0 {
            Err("boom".to_string())
        } else {
            Ok(Evaluation {
                score: i as f64,
                cost: 1.0,
            })
        };
        let t = opt.observe(outcome).unwrap();
        assert_eq!(t.failed, i % 3 == 0);
    }
    assert_eq!(opt.history().observations().count(), 20);
    assert_eq!(opt.history().incumbent_score(), Some(29.0));
    assert_eq!(opt.history().cumulative_cost(), 20.0);
}

#[test]
fn all_failures_fall_back_to_uniform() {
    let space = mixed_space();
    let mut opt = Optimizer::new(&space, OptimizerParams::default()).unwrap();
    for _ in 0..10 {
        opt.suggest().unwrap();
        opt.observe(Err("down".into())).unwrap();
    }
    assert!(opt.surrogate().is_none());
    assert!(opt.refits()[0].error.is_some());
}

#[test]
fn suggest_is_idempotent_until_observed() {
    let mut opt = Optimizer::new(&mixed_space(), OptimizerParams::default()).unwrap();
    let a = opt.suggest().unwrap();
    assert_eq!(opt.suggest().unwrap(), a);
    opt.observe(Ok(Evaluation { score: 0.0, cost: 0.0 })).unwrap();
    assert_eq!(opt.suggest().unwrap().iteration, 1);
}

#[test]
fn runs_are_deterministic() {
    let space = mixed_space();
    let obj = MixedSynthetic::new();
    let run = || {
        let mut opt = Optimizer::new(
            &space,
            OptimizerParams {
                max_iterations: 40,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        while !opt.is_finished() {
            opt.step(&obj).unwrap();
        }
        serde_json::to_string(opt.history().trials()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn quadratic_improves_on_initial_design() {
    let space = SearchSpace::new(vec![HyperparameterDef::continuous("x", -5.0, 5.0)]).unwrap();
    struct Quadratic(SearchSpace);
    impl Objective for Quadratic {
        fn name(&self) -> &str {
            "quadratic"
        }
        fn space(&self) -> &SearchSpace {
            &self.0
        }
        fn evaluate(&self, c: &Configuration) -> Result<Evaluation, crate::error::ObjectiveError> {
            let x = c.get("x").unwrap().as_f64().unwrap();
            Ok(Evaluation {
                score: -(x - 1.0).powi(2),
                cost: 0.0,
            })
        }
    }
    let obj = Quadratic(space.clone());
    for seed in 0..100 {
        let mut opt = Optimizer::new(
            &space,
            OptimizerParams {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        while !opt.is_finished() {
            opt.step(&obj).unwrap();
        }
        let trials = opt.history().trials();
        let init = trials[..5]
            .iter()
            .filter_map(|t| t.score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(opt.history().incumbent_score().unwrap() >= init);
    }
}

#[test]
fn prior_entries_expose_kind() {
    let space = mixed_space();
    let k = knowledge(
        &space,
        json!({"kind": "dist", "intervention": {"x": {"dist": "normal", "parameters": [0.5, 0.1]}}}),
    );
    assert_eq!(k.kind, KnowledgeKind::Prior);
    assert!(matches!(
        k.entries["x"],
        PriorEntry::Dist(DistributionSpec::Normal { .. })
    ));
}
