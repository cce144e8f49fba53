//! Labeled examples and the dataset file.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "SDGDATA1"
//! version      u32      1
//! count        u64      number of records
//! obs_len      u32      observation length (864)
//! lookahead    u8       1 if every record carries a lookahead block
//! records      count x record
//!
//! record:
//!   observation       obs_len x f32
//!   steer             f64      reference action
//!   brake             u8
//!   labels            12 x f64 (I_ll ... I_b)
//!   source_iteration  u32
//!   tag               u8       0 primary, 1 reference
//!   episode           u64
//!   step              u32
//!   [lookahead block: observation obs_len x f32, steer f64, brake u8]
//! ```

use std::io::{Read, Write};

use crate::nn::Samples;
use crate::perception::{LabelVector, Observation, OBS_LEN};
use crate::policies::{primary_target, slot};
use crate::sim::{Action, ControllerTag};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"SDGDATA1";
pub const DATASET_VERSION: u32 = 1;

/// Observation and reference action at `lookahead_steps` after the example's state.
#[derive(Clone, Debug, PartialEq)]
pub struct Lookahead {
    pub observation: Observation,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub observation: Observation,
    /// The reference action at the recorded state.
    pub action: Action,
    /// State descriptors with the control fields taken from `action`.
    pub labels: LabelVector,
    pub source_iteration: u32,
    /// Who was driving when the state was recorded.
    pub tag: ControllerTag,
    pub episode: u64,
    pub step: u32,
    pub lookahead: Option<Lookahead>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>) -> Dataset {
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Multiset union; provenance fields are kept as they are.
    pub fn union(&self, other: &Dataset) -> Dataset {
        let mut examples = self.examples.clone();
        examples.extend_from_slice(&other.examples);
        Dataset { examples }
    }

    pub fn extend(&mut self, other: &Dataset) {
        self.examples.extend_from_slice(&other.examples);
    }

    /// Training samples for the primary network.
    pub fn primary_samples(&self) -> Samples {
        let mut s = Samples::new(OBS_LEN, slot::COUNT);
        s.inputs.reserve(self.len() * OBS_LEN);
        for e in &self.examples {
            s.push(e.observation.as_slice(), &primary_target(&e.labels)).expect("fixed widths");
        }
        s
    }

    /// Count of examples per source iteration, ascending.
    pub fn iteration_counts(&self) -> Vec<(u32, usize)> {
        let mut m = std::collections::BTreeMap::new();
        for e in &self.examples {
            *m.entry(e.source_iteration).or_insert(0) += 1;
        }
        m.into_iter().collect()
    }

    /// Records in a canonical order (by serialized bytes), for multiset comparison.
    pub fn canonical_records(&self) -> Vec<Vec<u8>> {
        let lookahead = self.examples.iter().any(|e| e.lookahead.is_some());
        let mut recs: Vec<Vec<u8>> = self
            .examples
            .iter()
            .map(|e| {
                let mut b = Vec::new();
                encode_record(&mut b, e, lookahead);
                b
            })
            .collect();
        recs.sort();
        recs
    }
}

fn put_obs(buf: &mut Vec<u8>, obs: &Observation) {
    for v in obs.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_action(buf: &mut Vec<u8>, a: Action) {
    buf.extend_from_slice(&a.steer().to_le_bytes());
    buf.push(u8::from(a.brake()));
}

fn encode_record(buf: &mut Vec<u8>, e: &LabeledExample, lookahead: bool) {
    put_obs(buf, &e.observation);
    put_action(buf, e.action);
    for v in e.labels.to_array() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&e.source_iteration.to_le_bytes());
    buf.push(match e.tag {
        ControllerTag::Primary => 0,
        ControllerTag::Reference => 1,
    });
    buf.extend_from_slice(&e.episode.to_le_bytes());
    buf.extend_from_slice(&e.step.to_le_bytes());
    if lookahead {
        match &e.lookahead {
            Some(l) => {
                put_obs(buf, &l.observation);
                put_action(buf, l.action);
            }
            None => unreachable!("lookahead files require lookahead on every record"),
        }
    }
}

pub fn write_dataset<W: Write>(mut out: W, data: &Dataset) -> Result<()> {
    let with = data.examples.iter().filter(|e| e.lookahead.is_some()).count();
    if with != 0 && with != data.len() {
        return Err(Error::InvalidArgument("lookahead must be present on all examples or none".into()));
    }
    let lookahead = with != 0;
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    out.write_all(&(OBS_LEN as u32).to_le_bytes())?;
    out.write_all(&[u8::from(lookahead)])?;
    let mut buf = Vec::with_capacity(record_len(lookahead));
    for e in &data.examples {
        buf.clear();
        encode_record(&mut buf, e, lookahead);
        out.write_all(&buf)?;
    }
    Ok(())
}

fn record_len(lookahead: bool) -> usize {
    let base = OBS_LEN * 4 + 9 + 12 * 8 + 4 + 1 + 8 + 4;
    if lookahead {
        base + OBS_LEN * 4 + 9
    } else {
        base
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let b: [u8; N] = self.buf[self.at..self.at + N].try_into().expect("record length checked");
        self.at += N;
        b
    }

    fn obs(&mut self) -> Result<Observation> {
        let v: Vec<f32> = (0..OBS_LEN).map(|_| f32::from_le_bytes(self.take())).collect();
        Observation::from_vec(v).ok_or_else(|| Error::Format("observation length".into()))
    }

    fn action(&mut self) -> Result<Action> {
        let steer = f64::from_le_bytes(self.take());
        let brake = match self.take::<1>()[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("brake byte {b}"))),
        };
        let a = Action::new(steer, brake);
        if a.steer().to_bits() != steer.to_bits() {
            return Err(Error::Format(format!("steer {steer} out of range")));
        }
        Ok(a)
    }
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset> {
    let mut head = [0u8; 8 + 4 + 8 + 4 + 1];
    input.read_exact(&mut head)?;
    if &head[..8] != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let count = u64::from_le_bytes(head[12..20].try_into().expect("8 bytes")) as usize;
    let obs_len = u32::from_le_bytes(head[20..24].try_into().expect("4 bytes")) as usize;
    if obs_len != OBS_LEN {
        return Err(Error::Format(format!("observation length {obs_len}, expected {OBS_LEN}")));
    }
    let lookahead = match head[24] {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("lookahead flag {b}"))),
    };
    let len = record_len(lookahead);
    let mut rec = vec![0u8; len];
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut rec)?;
        let mut c = Cursor { buf: &rec, at: 0 };
        let observation = c.obs()?;
        let action = c.action()?;
        let mut labels = [0.0; 12];
        for l in &mut labels {
            *l = f64::from_le_bytes(c.take());
        }
        let source_iteration = u32::from_le_bytes(c.take());
        let tag = match c.take::<1>()[0] {
            0 => ControllerTag::Primary,
            1 => ControllerTag::Reference,
            b => return Err(Error::Format(format!("controller tag {b}"))),
        };
        let episode = u64::from_le_bytes(c.take());
        let step = u32::from_le_bytes(c.take());
        let lookahead = if lookahead { Some(Lookahead { observation: c.obs()?, action: c.action()? }) } else { None };
        examples.push(LabeledExample {
            observation,
            action,
            labels: LabelVector::from_array(labels),
            source_iteration,
            tag,
            episode,
            step,
            lookahead,
        });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after records".into()));
    }
    Ok(Dataset { examples })
}
