use serde::{Deserialize, Serialize};

use super::ProtocolError;

/// Association methods, ordered weakest to strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMethod {
    JustWorks,
    PasskeyEntry,
    NumericComparison,
    SecureConnections,
}

impl PairingMethod {
    pub const ALL: [PairingMethod; 4] = [
        PairingMethod::JustWorks,
        PairingMethod::PasskeyEntry,
        PairingMethod::NumericComparison,
        PairingMethod::SecureConnections,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairingMethod::JustWorks => "just_works",
            PairingMethod::PasskeyEntry => "passkey_entry",
            PairingMethod::NumericComparison => "numeric_comparison",
            PairingMethod::SecureConnections => "secure_connections",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            PairingMethod::JustWorks => 0,
            PairingMethod::PasskeyEntry => 1,
            PairingMethod::NumericComparison => 2,
            PairingMethod::SecureConnections => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        PairingMethod::ALL.get(code as usize).copied()
    }

    /// Methods whose key agreement does not rest on a guessable TK.
    pub fn is_secure_connections_based(self) -> bool {
        matches!(self, PairingMethod::NumericComparison | PairingMethod::SecureConnections)
    }

    /// Whether pairing with this method authenticates the peer (MITM protection).
    pub fn is_authenticated(self) -> bool {
        self != PairingMethod::JustWorks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressPolicy {
    Static,
    Rotating { period_s: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntiReplay {
    None,
    Timestamp { window_ms: u64 },
    Nonce,
}

impl AntiReplay {
    pub const DEFAULT_WINDOW_MS: u64 = 5000;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadioClass {
    Wearable,
    Smartphone,
    Laptop,
}

impl RadioClass {
    /// Hard delivery cutoff in meters.
    pub fn max_range_m(self) -> f64 {
        match self {
            RadioClass::Wearable => 10.0,
            RadioClass::Smartphone => 10.0,
            RadioClass::Laptop => 100.0,
        }
    }

    pub fn tx_power_dbm(self) -> i8 {
        match self {
            RadioClass::Wearable => 0,
            RadioClass::Smartphone => 4,
            RadioClass::Laptop => 20,
        }
    }
}

/// A device's defensive configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityProfile {
    /// For a peripheral, the association method it offers; for a central, the
    /// strongest method it can perform.
    pub pairing_method: PairingMethod,
    /// Application traffic is encrypted after pairing and ATT access on an
    /// unencrypted link is refused.
    pub link_encryption: bool,
    pub address_policy: AddressPolicy,
    /// Writes must carry an authentication tag keyed by the owner app's key.
    pub write_auth_required: bool,
    pub anti_replay: AntiReplay,
    /// L2CAP echo requests admitted per second.
    #[serde(default)]
    pub echo_rate_limit: Option<u32>,
    pub discoverable: bool,
    pub radio_class: RadioClass,
}

impl SecurityProfile {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if let AntiReplay::Timestamp { window_ms: 0 } = self.anti_replay {
            return Err(ProtocolError::InvalidProfile("anti_replay.timestamp.window_ms must be > 0".into()));
        }
        if self.echo_rate_limit == Some(0) {
            return Err(ProtocolError::InvalidProfile("echo_rate_limit must be > 0".into()));
        }
        if let AddressPolicy::Rotating { period_s: 0 } = self.address_policy {
            return Err(ProtocolError::InvalidProfile("address_policy.rotating.period_s must be > 0".into()));
        }
        Ok(())
    }

    /// Profile of an owner's phone: capable of every method, no extra defenses.
    pub fn phone() -> Self {
        Self {
            pairing_method: PairingMethod::SecureConnections,
            link_encryption: false,
            address_policy: AddressPolicy::Static,
            write_auth_required: false,
            anti_replay: AntiReplay::None,
            echo_rate_limit: None,
            discoverable: false,
            radio_class: RadioClass::Smartphone,
        }
    }

    /// Profile an attacker gives a cloned peripheral: accepts anything.
    pub fn permissive(radio_class: RadioClass) -> Self {
        Self {
            pairing_method: PairingMethod::JustWorks,
            link_encryption: false,
            address_policy: AddressPolicy::Static,
            write_auth_required: false,
            anti_replay: AntiReplay::None,
            echo_rate_limit: None,
            discoverable: true,
            radio_class,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_match_radio_classes() {
        assert_eq!(RadioClass::Wearable.max_range_m(), 10.0);
        assert_eq!(RadioClass::Smartphone.max_range_m(), 10.0);
        assert_eq!(RadioClass::Laptop.max_range_m(), 100.0);
    }

    #[test]
    fn validation_rejects_degenerate_values() {
        let mut profile = SecurityProfile::phone();
        assert!(profile.validate().is_ok());
        profile.anti_replay = AntiReplay::Timestamp { window_ms: 0 };
        assert!(profile.validate().is_err());
        profile.anti_replay = AntiReplay::Nonce;
        profile.echo_rate_limit = Some(0);
        assert!(profile.validate().is_err());
    }

    #[test]
    fn profile_toml_shape() {
        let text = r#"
            pairing_method = "passkey_entry"
            link_encryption = true
            address_policy = { rotating = { period_s = 900 } }
            write_auth_required = false
            anti_replay = { timestamp = { window_ms = 5000 } }
            echo_rate_limit = 10
            discoverable = true
            radio_class = "wearable"
        "#;
        let profile: SecurityProfile = toml::from_str(text).unwrap();
        assert_eq!(profile.address_policy, AddressPolicy::Rotating { period_s: 900 });
        assert_eq!(profile.anti_replay, AntiReplay::Timestamp { window_ms: 5000 });
        let back: SecurityProfile = toml::from_str(&toml::to_string(&profile).unwrap()).unwrap();
        assert_eq!(back, profile);
        assert!(toml::from_str::<SecurityProfile>(&format!("{text}\nbogus = 1")).is_err());
    }

    #[test]
    fn method_codes_roundtrip() {
        for m in PairingMethod::ALL {
            assert_eq!(PairingMethod::from_code(m.code()), Some(m));
        }
        assert_eq!(PairingMethod::from_code(9), None);
    }
}
