//! Model file layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "SDGMODL1"
//! header_len u32
//! header     header_len bytes of UTF-8: the NetSpec `key = value` lines,
//!            then optional `meta.<key> = <value>` lines
//! count      u64       number of parameters
//! params     count x f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{NetSpec, Network};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SDGMODL1";

/// A network plus free-form string metadata (for example a safety threshold).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: Network,
    pub meta: BTreeMap<String, String>,
}

pub fn write_model<W: Write>(mut out: W, model: &Model) -> Result<()> {
    let mut header = model.net.spec.to_string();
    for (k, v) in &model.meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::InvalidArgument(format!("metadata entry {k:?} cannot be stored")));
        }
        header.push_str(&format!("meta.{k} = {v}\n"));
    }
    let len = u32::try_from(header.len()).map_err(|_| Error::InvalidArgument("model header too large".into()))?;
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    out.write_all(&(model.net.params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(model.net.params.len() * 8);
    for p in &model.net.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    input.read_exact(&mut header)?;
    let header = String::from_utf8(header).map_err(|_| Error::Format("model header is not UTF-8".into()))?;

    let mut spec_text = String::new();
    let mut meta = BTreeMap::new();
    for line in header.lines() {
        match line.strip_prefix("meta.") {
            Some(rest) => {
                let (k, v) = rest.split_once(" = ").ok_or_else(|| Error::Format(format!("bad metadata line {line:?}")))?;
                meta.insert(k.to_string(), v.to_string());
            }
            None => {
                spec_text.push_str(line);
                spec_text.push('\n');
            }
        }
    }
    let spec: NetSpec = spec_text.parse()?;

    let mut count = [0u8; 8];
    input.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    if count != spec.param_count() {
        return Err(Error::Format(format!("spec needs {} parameters, file holds {count}", spec.param_count())));
    }
    let mut raw = vec![0u8; count * 8];
    input.read_exact(&mut raw)?;
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Ok(Model { net: Network::from_params(spec, params)?, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Head, HeadKind};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = NetSpec { input: 5, hidden: vec![4], heads: vec![Head::new(HeadKind::Softmax, 2)], seed: 9 };
        let mut net = Network::init(spec).unwrap();
        net.params[0] = 0.1 + 0.2;
        net.params[1] = -1e-300;
        let mut meta = BTreeMap::new();
        meta.insert("tau".to_string(), 0.0025f64.to_string());
        let model = Model { net, meta };
        let mut bytes = Vec::new();
        write_model(&mut bytes, &model).unwrap();
        let back = read_model(bytes.as_slice()).unwrap();
        assert_eq!(back, model);
        let bits: Vec<u64> = back.net.params.iter().map(|p| p.to_bits()).collect();
        let orig: Vec<u64> = model.net.params.iter().map(|p| p.to_bits()).collect();
        assert_eq!(bits, orig);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(read_model(&b"NOTAMODL...."[..]), Err(Error::Format(_))));
        let spec = NetSpec { input: 2, hidden: vec![], heads: vec![Head::new(HeadKind::Linear, 1)], seed: 0 };
        let model = Model { net: Network::zeros(spec).unwrap(), meta: BTreeMap::new() };
        let mut bytes = Vec::new();
        write_model(&mut bytes, &model).unwrap();
        bytes.pop();
        assert!(read_model(bytes.as_slice()).is_err());
    }
}
