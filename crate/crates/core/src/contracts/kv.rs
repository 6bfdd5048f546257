//! Minimal key-value application contract used as sidechain business state.

use std::collections::BTreeMap;

use super::ContractError;
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KvOp {
    Put { key: String, value: Vec<u8> },
}

impl KvOp {
    pub(super) fn op_name(&self) -> &'static str {
        "kv_put"
    }

    pub(super) fn encode_args(&self, w: &mut Writer) {
        let KvOp::Put { key, value } = self;
        w.put(key).bytes(value);
    }

    pub(super) fn decode_args(_name: &str, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(KvOp::Put {
            key: r.get()?,
            value: r.bytes()?.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvStore {
    entries: BTreeMap<String, Vec<u8>>,
}

impl KvStore {
    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn execute(&mut self, op: &KvOp) -> Result<(), ContractError> {
        let KvOp::Put { key, value } = op;
        self.entries.insert(key.clone(), value.clone());
        Ok(())
    }
}

impl Encode for KvStore {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.entries.len() as u32);
        for (k, v) in &self.entries {
            w.put(k).bytes(v);
        }
    }
}

impl Decode for KvStore {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = r.u32()?;
        let mut entries = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..n {
            let k: String = r.get()?;
            if last.as_ref().is_some_and(|p| *p >= k) {
                return Err(DecodeError::NonCanonical("kv keys out of order"));
            }
            let v = r.bytes()?.to_vec();
            last = Some(k.clone());
            entries.insert(k, v);
        }
        Ok(KvStore { entries })
    }
}
