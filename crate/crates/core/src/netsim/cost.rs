use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Simulated seconds.
pub type SimTime = f64;

/// Per-primitive latencies in simulated seconds.
///
/// The defaults sum to 30 s for a Scenario-1 push with a fresh AIK:
/// channel 4 + AIK generation 7 + PCA round trip 7 + attestation 8 +
/// key exchange 2 + sealing 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub aik_generation: SimTime,
    pub remote_attestation: SimTime,
    pub pca_roundtrip: SimTime,
    pub channel_setup: SimTime,
    pub key_exchange: SimTime,
    pub seal_op: SimTime,
    pub per_kilobyte: SimTime,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            aik_generation: 7.0,
            remote_attestation: 8.0,
            pca_roundtrip: 7.0,
            channel_setup: 4.0,
            key_exchange: 2.0,
            seal_op: 2.0,
            per_kilobyte: 0.0,
        }
    }
}

/// Partial table; present fields replace the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aik_generation: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote_attestation: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca_roundtrip: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_setup: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_exchange: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seal_op: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_kilobyte: Option<SimTime>,
}

impl CostTable {
    pub fn with_overrides(&self, o: &CostOverrides) -> Self {
        Self {
            aik_generation: o.aik_generation.unwrap_or(self.aik_generation),
            remote_attestation: o.remote_attestation.unwrap_or(self.remote_attestation),
            pca_roundtrip: o.pca_roundtrip.unwrap_or(self.pca_roundtrip),
            channel_setup: o.channel_setup.unwrap_or(self.channel_setup),
            key_exchange: o.key_exchange.unwrap_or(self.key_exchange),
            seal_op: o.seal_op.unwrap_or(self.seal_op),
            per_kilobyte: o.per_kilobyte.unwrap_or(self.per_kilobyte),
        }
    }

    pub fn get(&self, name: CostName) -> SimTime {
        match name {
            CostName::AikGeneration => self.aik_generation,
            CostName::RemoteAttestation => self.remote_attestation,
            CostName::PcaRoundtrip => self.pca_roundtrip,
            CostName::ChannelSetup => self.channel_setup,
            CostName::KeyExchange => self.key_exchange,
            CostName::SealOp => self.seal_op,
        }
    }

    /// Names of fields that are negative or not finite.
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let fields = [
            ("aik_generation", self.aik_generation),
            ("remote_attestation", self.remote_attestation),
            ("pca_roundtrip", self.pca_roundtrip),
            ("channel_setup", self.channel_setup),
            ("key_exchange", self.key_exchange),
            ("seal_op", self.seal_op),
            ("per_kilobyte", self.per_kilobyte),
        ];
        fields.into_iter().filter(|(_, v)| !(v.is_finite() && *v >= 0.0)).map(|(n, _)| n).collect()
    }

    /// Transmission cost: whole KiB rounded up, one KiB minimum for any
    /// non-empty payload, nothing for empty control messages.
    pub fn transmission(&self, size: usize) -> SimTime {
        let kib = size.div_ceil(1024);
        self.per_kilobyte * kib as f64
    }
}

/// Chargeable primitive (every [`CostTable`] field except `per_kilobyte`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostName {
    AikGeneration,
    RemoteAttestation,
    PcaRoundtrip,
    ChannelSetup,
    KeyExchange,
    SealOp,
}

impl CostName {
    pub const ALL: [CostName; 6] = [
        CostName::AikGeneration,
        CostName::RemoteAttestation,
        CostName::PcaRoundtrip,
        CostName::ChannelSetup,
        CostName::KeyExchange,
        CostName::SealOp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CostName::AikGeneration => "aik_generation",
            CostName::RemoteAttestation => "remote_attestation",
            CostName::PcaRoundtrip => "pca_roundtrip",
            CostName::ChannelSetup => "channel_setup",
            CostName::KeyExchange => "key_exchange",
            CostName::SealOp => "seal_op",
        }
    }

    /// Costs that belong to attestation or the PCA rather than to moving
    /// and storing data.
    pub fn is_trust_establishment(self) -> bool {
        matches!(self, CostName::AikGeneration | CostName::RemoteAttestation | CostName::PcaRoundtrip)
    }
}

impl fmt::Display for CostName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CostName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CostName::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| s.to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transmission_rounding() {
        let t = CostTable { per_kilobyte: 0.5, ..CostTable::default() };
        assert_eq!(t.transmission(0), 0.0);
        assert_eq!(t.transmission(1), 0.5);
        assert_eq!(t.transmission(1024), 0.5);
        assert_eq!(t.transmission(1025), 1.0);
    }

    #[test]
    fn overrides_apply_field_by_field() {
        let o: CostOverrides = serde_json::from_str(r#"{"remote_attestation": 3.5}"#).unwrap();
        let t = CostTable::default().with_overrides(&o);
        assert_eq!(t.remote_attestation, 3.5);
        assert_eq!(t.aik_generation, 7.0);
        assert!(serde_json::from_str::<CostOverrides>(r#"{"bogus": 1}"#).is_err());
        let neg = CostTable { seal_op: -1.0, ..CostTable::default() };
        assert_eq!(neg.invalid_fields(), vec!["seal_op"]);
    }

    #[test]
    fn cost_names_parse() {
        for c in CostName::ALL {
            assert_eq!(c.as_str().parse::<CostName>().unwrap(), c);
        }
        assert!("per_kilobyte".parse::<CostName>().is_err());
    }
}
