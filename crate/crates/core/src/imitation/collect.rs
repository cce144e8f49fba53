use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::perception::{extract_labels, observe, Observation};
use crate::policies::{
    deviation, optimal_safety_label, PolicyBundle, PrimaryPolicy, QueryKind, QueryLedger, SafetyPolicy, Strategy,
};
use crate::reference::query_reference;
use crate::sim::{step, ControllerTag, Track, WorldState};
use crate::{Error, Result};

use super::dataset::{LabeledExample, Lookahead};
use super::derive_seed;

/// How states are gathered: episode shape and traffic.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectConfig {
    pub n_examples: usize,
    /// Traffic cars per episode.
    pub traffic: usize,
    /// Record every `frame_stride`-th timestep.
    pub frame_stride: usize,
    /// Episodes end after this many timesteps (or on an off-road halt) and restart at a new spawn.
    pub episode_steps: usize,
    /// Also capture the state this many steps after each recorded one (0: off).
    pub lookahead_steps: usize,
    pub seed: u64,
}

/// A recorded state awaiting (or skipping) a label.
#[derive(Clone, Debug)]
pub struct CollectedState {
    pub observation: Observation,
    pub state: WorldState,
    pub tag: ControllerTag,
    pub episode: u64,
    pub step: u32,
    /// p(safe) when a learned safety policy was consulted.
    pub p_safe: Option<f64>,
    pub future: Option<WorldState>,
}

#[derive(Clone, Debug, Default)]
pub struct Collection {
    pub states: Vec<CollectedState>,
    pub episodes: u64,
    /// Timesteps driven, and how many of them by the reference.
    pub steps: u64,
    pub reference_steps: u64,
    pub off_road_halts: u64,
}

impl Collection {
    /// Share of driven timesteps controlled by the reference.
    pub fn takeover_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.reference_steps as f64 / self.steps as f64
        }
    }
}

/// Drives episodes round-robin over `tracks` until `cfg.n_examples` states are recorded.
pub fn collect(
    bundle: &PolicyBundle,
    strategy: Strategy,
    tracks: &[Arc<Track>],
    cfg: &CollectConfig,
    ledger: &mut QueryLedger,
) -> Result<Collection> {
    bundle.check(strategy)?;
    if tracks.is_empty() {
        return Err(Error::Empty("training tracks"));
    }
    if cfg.n_examples == 0 || cfg.frame_stride == 0 || cfg.episode_steps == 0 {
        return Err(Error::InvalidArgument("n_examples, frame_stride and episode_steps must be positive".into()));
    }
    let needs_obs = bundle.needs_observation(strategy);
    let mut out = Collection::default();
    let mut episode = 0u64;
    while out.states.len() < cfg.n_examples {
        let track = &tracks[(episode % tracks.len() as u64) as usize];
        let mut world = WorldState::spawn(Arc::clone(track), cfg.traffic, derive_seed(cfg.seed, "spawn", episode))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "mixture", episode));
        // indices into out.states still waiting for their lookahead snapshot, with the due step
        let mut pending: VecDeque<(usize, usize)> = VecDeque::new();
        for t in 0..cfg.episode_steps {
            if cfg.lookahead_steps > 0 {
                while let Some(&(i, due)) = pending.front() {
                    if due != t {
                        break;
                    }
                    out.states[i].future = Some(world.clone());
                    pending.pop_front();
                }
            }
            let record = t % cfg.frame_stride == 0 && out.states.len() < cfg.n_examples;
            if !record && out.states.len() >= cfg.n_examples && pending.is_empty() {
                break;
            }
            let obs = (needs_obs || record).then(|| observe(&world));
            let outcome = bundle.act(strategy, &world, obs.as_ref(), &mut rng, ledger)?;
            if record {
                if cfg.lookahead_steps > 0 {
                    pending.push_back((out.states.len(), t + cfg.lookahead_steps));
                }
                out.states.push(CollectedState {
                    observation: obs.expect("observed when recording"),
                    state: world.clone(),
                    tag: outcome.tag,
                    episode,
                    step: t as u32,
                    p_safe: outcome.p_safe,
                    future: None,
                });
            }
            out.steps += 1;
            out.reference_steps += u64::from(outcome.tag == ControllerTag::Reference);
            world = step(&world, outcome.action)?;
            if !world.is_running() {
                out.off_road_halts += 1;
                break;
            }
        }
        episode += 1;
    }
    out.episodes = episode;
    Ok(out)
}

/// States the safety policy classifies unsafe (0) for this primary.
pub fn subset_select(states: &[CollectedState], primary: &PrimaryPolicy, safety: &SafetyPolicy) -> Vec<CollectedState> {
    states.iter().filter(|s| safety.classify(&primary.act(&s.observation).features) == 0).cloned().collect()
}

/// Queries the reference once per state (twice with a lookahead snapshot) and builds examples.
pub fn label_with_reference(
    states: &[CollectedState],
    source_iteration: u32,
    ledger: &mut QueryLedger,
) -> Vec<LabeledExample> {
    states
        .iter()
        .map(|s| {
            let action = query_reference(&s.state, ledger, QueryKind::Label);
            let lookahead = s.future.as_ref().map(|f| Lookahead {
                observation: observe(f),
                action: query_reference(f, ledger, QueryKind::Label),
            });
            LabeledExample {
                observation: s.observation.clone(),
                action,
                labels: extract_labels(&s.state).with_control(action),
                source_iteration,
                tag: s.tag,
                episode: s.episode,
                step: s.step,
                lookahead,
            }
        })
        .collect()
}

/// Optimal safety labels for this primary at threshold τ. With `lookahead_steps > 0`
/// the deviation is taken at the lookahead snapshot; examples without one are
/// dropped. Returns (index into `examples`, label).
pub fn make_safety_labels(
    examples: &[LabeledExample],
    primary: &PrimaryPolicy,
    tau: f64,
    lookahead_steps: usize,
) -> Vec<(usize, u8)> {
    examples
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let (obs, reference) = if lookahead_steps == 0 {
                (&e.observation, e.action)
            } else {
                let l = e.lookahead.as_ref()?;
                (&l.observation, l.action)
            };
            let eps = deviation(primary.act(obs).action, reference);
            Some((i, optimal_safety_label(eps, tau)))
        })
        .collect()
}
