use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TpmError;
use crate::crypto::codec::Writer;
use crate::crypto::{hash, hash_concat, Digest};

pub const PCR_COUNT: usize = 24;

/// `new = H(old || measurement)`.
pub fn extend_value(old: &Digest, measurement: &Digest) -> Digest {
    hash_concat(&[old.as_bytes(), measurement.as_bytes()])
}

/// Hash of the concatenated register values, in the order given.
pub fn composite_of<'a>(values: impl IntoIterator<Item = &'a Digest>) -> Digest {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(v.as_bytes());
    }
    hash(&buf)
}

pub(crate) fn check_index(index: usize) -> Result<(), TpmError> {
    if index < PCR_COUNT {
        Ok(())
    } else {
        Err(TpmError::BadIndex(index))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcrBank {
    registers: [Digest; PCR_COUNT],
}

impl Default for PcrBank {
    fn default() -> Self {
        Self::new()
    }
}

impl PcrBank {
    pub fn new() -> Self {
        Self { registers: [Digest::ZERO; PCR_COUNT] }
    }

    pub fn read(&self, index: usize) -> Result<Digest, TpmError> {
        check_index(index)?;
        Ok(self.registers[index])
    }

    pub fn extend(&mut self, index: usize, value: &Digest) -> Result<Digest, TpmError> {
        check_index(index)?;
        let new = extend_value(&self.registers[index], value);
        self.registers[index] = new;
        Ok(new)
    }

    pub fn registers(&self) -> &[Digest; PCR_COUNT] {
        &self.registers
    }

    /// Composite over `selection` in ascending index order.
    pub fn composite(&self, selection: &BTreeSet<usize>) -> Result<Digest, TpmError> {
        for &i in selection {
            check_index(i)?;
        }
        Ok(composite_of(selection.iter().map(|&i| &self.registers[i])))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementEvent {
    pub sequence_no: u64,
    pub pcr_index: usize,
    pub component_name: String,
    pub code_digest: Digest,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementLog {
    pub events: Vec<MeasurementEvent>,
}

impl MeasurementLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub(crate) fn append(&mut self, pcr_index: usize, component_name: &str, code_digest: Digest) -> MeasurementEvent {
        let event = MeasurementEvent {
            sequence_no: self.events.len() as u64 + 1,
            pcr_index,
            component_name: component_name.to_owned(),
            code_digest,
        };
        self.events.push(event.clone());
        event
    }

    /// Recomputes a bank by extending a reset bank with every event in order.
    pub fn replay(&self) -> Result<PcrBank, TpmError> {
        let mut bank = PcrBank::new();
        for e in &self.events {
            bank.extend(e.pcr_index, &e.code_digest)?;
        }
        Ok(bank)
    }
}

/// Registers a key or blob is bound to, with the values they must hold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct PcrPolicy {
    required: BTreeMap<usize, Digest>,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    selection: Vec<usize>,
    required_values: Vec<Digest>,
}

impl TryFrom<PolicyRepr> for PcrPolicy {
    type Error = TpmError;

    fn try_from(r: PolicyRepr) -> Result<Self, Self::Error> {
        if r.selection.len() != r.required_values.len() {
            return Err(TpmError::BadPolicy("selection and values differ in length".into()));
        }
        let required: BTreeMap<_, _> = r.selection.into_iter().zip(r.required_values).collect();
        PcrPolicy::new(required)
    }
}

impl From<PcrPolicy> for PolicyRepr {
    fn from(p: PcrPolicy) -> Self {
        PolicyRepr {
            selection: p.required.keys().copied().collect(),
            required_values: p.required.values().copied().collect(),
        }
    }
}

impl PcrPolicy {
    pub fn new(required: BTreeMap<usize, Digest>) -> Result<Self, TpmError> {
        if required.is_empty() {
            return Err(TpmError::BadPolicy("empty PCR selection".into()));
        }
        for &i in required.keys() {
            check_index(i).map_err(|_| TpmError::BadPolicy(format!("PCR index {i} out of range")))?;
        }
        Ok(Self { required })
    }

    /// Snapshot of the bank's current values over `selection`.
    pub fn from_bank(bank: &PcrBank, selection: &BTreeSet<usize>) -> Result<Self, TpmError> {
        let mut required = BTreeMap::new();
        for &i in selection {
            let v = bank.read(i).map_err(|_| TpmError::BadPolicy(format!("PCR index {i} out of range")))?;
            required.insert(i, v);
        }
        Self::new(required)
    }

    pub fn selection(&self) -> BTreeSet<usize> {
        self.required.keys().copied().collect()
    }

    pub fn required_values(&self) -> &BTreeMap<usize, Digest> {
        &self.required
    }

    /// First selected register whose value differs, if any.
    pub fn first_mismatch(&self, bank: &PcrBank) -> Option<usize> {
        self.required.iter().find(|(&i, v)| bank.registers[i] != **v).map(|(&i, _)| i)
    }

    pub fn composite(&self) -> Digest {
        composite_of(self.required.values())
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.u64(self.required.len() as u64);
        for (&i, v) in &self.required {
            w.u8(i as u8).bytes(v.as_bytes());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_bank_is_zero() {
        let bank = PcrBank::new();
        assert!(bank.registers().iter().all(|r| *r == Digest::ZERO));
        assert_eq!(bank.read(24), Err(TpmError::BadIndex(24)));
    }

    #[test]
    fn policy_requires_nonempty_in_range_selection() {
        assert!(matches!(PcrPolicy::new(BTreeMap::new()), Err(TpmError::BadPolicy(_))));
        assert!(matches!(PcrPolicy::new(BTreeMap::from([(24, Digest::ZERO)])), Err(TpmError::BadPolicy(_))));
    }

    #[test]
    fn policy_json_round_trip_rejects_empty() {
        let p = PcrPolicy::new(BTreeMap::from([(10, hash(b"x")), (3, Digest::ZERO)])).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<PcrPolicy>(&json).unwrap(), p);
        let empty = r#"{"selection":[],"required_values":[]}"#;
        assert!(serde_json::from_str::<PcrPolicy>(empty).is_err());
    }

    #[test]
    fn mismatch_reports_first_differing_register() {
        let mut bank = PcrBank::new();
        let p = PcrPolicy::from_bank(&bank, &BTreeSet::from([2, 5, 9])).unwrap();
        assert_eq!(p.first_mismatch(&bank), None);
        bank.extend(9, &hash(b"a")).unwrap();
        bank.extend(5, &hash(b"b")).unwrap();
        assert_eq!(p.first_mismatch(&bank), Some(5));
    }
}
