use crate::nn::{Head, HeadKind, LossKind, LossSpec, LossTerm, Model, NetSpec, Network};
use crate::perception::{LabelVector, Observation, OBS_LEN};
use crate::sim::Action;
use crate::{Error, Result};

/// Shared trunk widths of the primary network.
pub const PRIMARY_HIDDEN: [usize; 2] = [128, 64];
/// Weight of the ten auxiliary heads in the supervised loss.
pub const AUX_WEIGHT: f64 = 0.5;

/// Output slots of the primary network, one unit each.
pub mod slot {
    pub const STEER: usize = 0;
    pub const BRAKE: usize = 1;
    /// I_ll, I_lr, I_cl, I_cm, I_cr
    pub const INDICATORS: [usize; 5] = [2, 3, 4, 5, 6];
    /// D_cl, D_cm, D_cr
    pub const DISTANCES: [usize; 3] = [7, 8, 9];
    pub const LANE_POSITION: usize = 10;
    pub const ANGLE: usize = 11;
    pub const COUNT: usize = 12;
}

/// Network shape of a primary policy: 864 → 128 → 64, then steer (tanh),
/// brake and five indicators (sigmoid), three distances, lane position and
/// angle (linear).
pub fn primary_spec(seed: u64) -> NetSpec {
    let mut heads = vec![Head::new(HeadKind::Tanh, 1), Head::new(HeadKind::Sigmoid, 1)];
    heads.extend([Head::new(HeadKind::Sigmoid, 1); 5]);
    heads.extend([Head::new(HeadKind::Linear, 1); 5]);
    NetSpec { input: OBS_LEN, hidden: PRIMARY_HIDDEN.to_vec(), heads, seed }
}

/// Composite supervised loss: squared steering error and brake cross-entropy
/// at full weight, the auxiliary heads at `aux_weight`.
pub fn supervised_loss_spec(aux_weight: f64) -> LossSpec {
    let mut terms = vec![
        LossTerm { head: slot::STEER, kind: LossKind::SquaredError, weight: 1.0 },
        LossTerm { head: slot::BRAKE, kind: LossKind::BinaryCrossEntropy, weight: 1.0 },
    ];
    terms.extend(slot::INDICATORS.map(|h| LossTerm { head: h, kind: LossKind::BinaryCrossEntropy, weight: aux_weight }));
    terms.extend(slot::DISTANCES.map(|h| LossTerm { head: h, kind: LossKind::SquaredError, weight: aux_weight }));
    terms.extend(
        [slot::LANE_POSITION, slot::ANGLE].map(|h| LossTerm { head: h, kind: LossKind::SquaredError, weight: aux_weight }),
    );
    LossSpec { terms }
}

/// Training target of one example, in output-slot order.
pub fn primary_target(labels: &LabelVector) -> [f64; slot::COUNT] {
    [
        labels.s_c, labels.i_b, labels.i_ll, labels.i_lr, labels.i_cl, labels.i_cm, labels.i_cr, labels.d_cl, labels.d_cm,
        labels.d_cr, labels.p_c, labels.a_c,
    ]
}

/// Everything the primary produces for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimaryOutput {
    pub action: Action,
    /// Decoded label estimate; indicators thresholded at 0.5, reals clamped to their ranges.
    pub aux: LabelVector,
    /// Activations of the last shared layer.
    pub features: Vec<f64>,
    /// Raw head outputs.
    pub raw: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimaryPolicy {
    pub net: Network,
}

impl PrimaryPolicy {
    pub fn new(net: Network) -> Result<PrimaryPolicy> {
        let expected = primary_spec(net.spec.seed);
        if net.spec != expected {
            return Err(Error::NetSpec(format!("not a primary network:\n{}", net.spec)));
        }
        Ok(PrimaryPolicy { net })
    }

    pub fn to_model(&self) -> Model {
        let meta = [("role".to_string(), "primary".to_string())].into();
        Model { net: self.net.clone(), meta }
    }

    pub fn from_model(model: Model) -> Result<PrimaryPolicy> {
        match model.meta.get("role").map(String::as_str) {
            Some("primary") | None => PrimaryPolicy::new(model.net),
            Some(other) => Err(Error::NetSpec(format!("expected a primary model, found role {other:?}"))),
        }
    }

    pub fn act(&self, obs: &Observation) -> PrimaryOutput {
        let fwd = self.net.forward(obs.as_slice()).expect("observation width matches the primary spec");
        let y = &fwd.outputs;
        let ind = |k: usize| f64::from(u8::from(y[k] >= 0.5));
        let action = Action::new(y[slot::STEER], y[slot::BRAKE] >= 0.5);
        let [il, ir, cl, cm, cr] = slot::INDICATORS;
        let [dl, dm, dr] = slot::DISTANCES;
        let aux = LabelVector {
            i_ll: ind(il),
            i_lr: ind(ir),
            i_cl: ind(cl),
            i_cm: ind(cm),
            i_cr: ind(cr),
            d_cl: y[dl].clamp(0.0, 1.0),
            d_cm: y[dm].clamp(0.0, 1.0),
            d_cr: y[dr].clamp(0.0, 1.0),
            p_c: y[slot::LANE_POSITION].clamp(-1.0, 1.0),
            a_c: y[slot::ANGLE].clamp(-1.0, 1.0),
            s_c: 0.0,
            i_b: 0.0,
        }
        .with_control(action);
        PrimaryOutput { action, aux, features: fwd.features().to_vec(), raw: fwd.outputs }
    }
}

/// `primary_act`: action, auxiliary estimate and features.
pub fn primary_act(policy: &PrimaryPolicy, obs: &Observation) -> PrimaryOutput {
    policy.act(obs)
}
