use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safedagger_core::nn::Network;
use safedagger_core::perception::observe;
use safedagger_core::policies::{
    calibrate_tau, deviation, mixture_act, optimal_safety_label, primary_spec, safe_strategy_act, safety_spec, slot,
    PolicyBundle, PrimaryPolicy, QueryLedger, Safety, SafetyPolicy, Strategy,
};
use safedagger_core::sim::{step, Action, ControllerTag, TrackSet, WorldState};

fn world(seed: u64) -> WorldState {
    let tracks = TrackSet::builtin();
    WorldState::spawn(Arc::clone(&tracks.train[0]), 6, seed).unwrap()
}

fn constant_safety(p_safe: f64) -> SafetyPolicy {
    let mut net = Network::zeros(safety_spec(0)).unwrap();
    let n = net.params.len();
    net.params[n - 1] = (p_safe / (1.0 - p_safe)).ln();
    SafetyPolicy::new(net, 0.0025).unwrap()
}

fn random_primary(seed: u64) -> PrimaryPolicy {
    PrimaryPolicy::new(Network::init(primary_spec(seed)).unwrap()).unwrap()
}

#[test]
fn zero_primary_decodes_to_brake() {
    let p = PrimaryPolicy::new(Network::zeros(primary_spec(0)).unwrap()).unwrap();
    let out = p.act(&observe(&world(1)));
    assert_eq!(out.action.steer(), 0.0);
    assert!(out.action.brake());
    assert_eq!(out.features.len(), 64);
}

#[test]
fn saturated_steer_head() {
    let mut net = Network::zeros(primary_spec(0)).unwrap();
    let last = net.spec.layer_offsets().pop().unwrap();
    net.params[last.biases + slot::STEER] = 50.0;
    let p = PrimaryPolicy::new(net).unwrap();
    let out = p.act(&observe(&world(1)));
    assert!((out.action.steer() - 1.0).abs() < 1e-12);
}

#[test]
fn primary_is_pure() {
    let p = random_primary(3);
    let obs = observe(&world(2));
    assert_eq!(p.act(&obs), p.act(&obs));
}

#[test]
fn safe_strategy_gates_on_probability() {
    let p = random_primary(4);
    let w = world(3);
    let obs = observe(&w);
    let mut ledger = QueryLedger::new();
    let (a, tag) = safe_strategy_act(&p, &constant_safety(0.9), &obs, &w, &mut ledger);
    assert_eq!(tag, ControllerTag::Primary);
    assert_eq!(a, p.act(&obs).action);
    assert_eq!(ledger.total(), 0);
    let (_, tag) = safe_strategy_act(&p, &constant_safety(0.2), &obs, &w, &mut ledger);
    assert_eq!(tag, ControllerTag::Reference);
    assert_eq!(ledger.takeover_queries(), 1);
}

fn drive(bundle: &PolicyBundle, strategy: Strategy, steps: usize) -> (Vec<Action>, QueryLedger, usize) {
    let mut w = world(5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ledger = QueryLedger::new();
    let mut actions = Vec::new();
    let mut reference_steps = 0;
    for _ in 0..steps {
        if !w.is_running() {
            break;
        }
        let out = bundle.act(strategy, &w, None, &mut rng, &mut ledger).unwrap();
        reference_steps += usize::from(out.tag == ControllerTag::Reference);
        actions.push(out.action);
        w = step(&w, out.action).unwrap();
    }
    (actions, ledger, reference_steps)
}

#[test]
fn always_safe_gate_matches_naive_driving() {
    let p = random_primary(6);
    let naive = PolicyBundle::naive(p.clone());
    let gated = PolicyBundle { safety: Some(Safety::Learned(constant_safety(0.99))), ..naive.clone() };
    let (a, la, _) = drive(&naive, Strategy::Naive, 200);
    let (b, lb, _) = drive(&gated, Strategy::Safe, 200);
    assert_eq!(a, b);
    assert_eq!((la.total(), lb.total()), (0, 0));
}

#[test]
fn takeover_queries_equal_reference_steps() {
    let p = random_primary(7);
    let bundle = PolicyBundle::safe(p, constant_safety(0.3));
    let (_, ledger, reference_steps) = drive(&bundle, Strategy::Safe, 150);
    assert!(reference_steps > 0);
    assert_eq!(ledger.takeover_queries(), reference_steps as u64);
    assert_eq!(ledger.label_queries(), 0);
}

#[test]
fn missing_safety_policy_is_an_error() {
    let bundle = PolicyBundle::naive(random_primary(1));
    let w = world(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(bundle.act(Strategy::Safe, &w, None, &mut rng, &mut QueryLedger::new()).is_err());
}

#[test]
fn mixture_extremes_and_frequency() {
    let p = random_primary(8);
    let w = world(9);
    let obs = observe(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut ledger = QueryLedger::new();
    for _ in 0..50 {
        assert_eq!(mixture_act(&p, 1.0, &obs, &w, &mut rng, &mut ledger).1, ControllerTag::Reference);
    }
    assert_eq!(ledger.takeover_queries(), 50);
    let mut ledger = QueryLedger::new();
    for _ in 0..50 {
        assert_eq!(mixture_act(&p, 0.0, &obs, &w, &mut rng, &mut ledger).1, ControllerTag::Primary);
    }
    assert_eq!(ledger.total(), 0);

    let mut ledger = QueryLedger::new();
    let n = 10_000;
    let hits = (0..n)
        .filter(|_| mixture_act(&p, 0.5, &obs, &w, &mut rng, &mut ledger).1 == ControllerTag::Reference)
        .count();
    let frac = hits as f64 / n as f64;
    // binomial sd is sqrt(0.25 / 10_000) = 0.005, so the band is four sd wide each side
    assert!((0.48..=0.52).contains(&frac), "{frac}");
    assert_eq!(ledger.takeover_queries(), hits as u64);
}

#[test]
fn calibration_hits_target_on_continuous_deviations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d: Vec<f64> = (0..3000).map(|_| rng.random::<f64>().powi(4) * 0.05).collect();
    let c = calibrate_tau(&d, 0.777).unwrap();
    assert!((c.safe_fraction - 0.777).abs() < 0.01);
    let brute = d.iter().filter(|&&e| optimal_safety_label(e, c.tau) == 1).count() as f64 / d.len() as f64;
    assert_eq!(brute, c.safe_fraction);
}

proptest! {
    #[test]
    fn label_agrees_with_threshold(s1 in -1.0f64..1.0, s2 in -1.0f64..1.0, b1: bool, b2: bool, tau in 1e-6f64..1.0) {
        let eps = deviation(Action::new(s1, b1), Action::new(s2, b2));
        prop_assert_eq!(optimal_safety_label(eps, tau) == 1, eps <= tau);
        prop_assert_eq!(eps, deviation(Action::new(s1, !b1), Action::new(s2, b2)));
    }

    #[test]
    fn calibration_is_monotone(
        d in prop::collection::vec(0.0f64..1.0, 1..200),
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t_lo = calibrate_tau(&d, lo).unwrap();
        let t_hi = calibrate_tau(&d, hi).unwrap();
        prop_assert!(t_lo.tau <= t_hi.tau);
        prop_assert!(t_lo.safe_fraction >= lo - 1e-9);
        // τ is the smallest observed value reaching the target
        let below = d.iter().filter(|&&e| e < t_lo.tau).count() as f64 / d.len() as f64;
        prop_assert!(below < lo - 1e-9 || t_lo.tau == f64::MIN_POSITIVE);
    }
}
