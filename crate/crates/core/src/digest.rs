//! Fixed-width identifiers and the 256-bit digest used for hash linking.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// A 32-byte digest. Block hashes, commitments and sidechain ids all use it.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Deserialize)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub const ZERO: Hash32 = Hash32([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Short prefix for log and table output.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({})", self.short())
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// 20-byte account identifier (truncated digest of a notional public key).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Deserialize)]
pub struct AccountId(pub [u8; 20]);

impl AccountId {
    /// Derives an account id from a label: the last 20 bytes of its digest.
    /// Stands in for key generation; scenario participants are named, not keyed.
    pub fn derive(label: &str) -> AccountId {
        let d = digest(label.as_bytes());
        let mut out = [0u8; 20];
        out.copy_from_slice(&d.0[12..]);
        AccountId(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccountId({})", hex::encode(&self.0[..4]))
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

impl Serialize for AccountId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", self.to_hex()))
    }
}

/// Contracts live at account-shaped addresses.
pub type Address = AccountId;

/// Identifies a sidechain (or any chain that pins). Derived from its name.
pub type SidechainId = Hash32;

pub fn digest(bytes: &[u8]) -> Hash32 {
    let out = Sha256::digest(bytes);
    let mut h = [0u8; 32];
    h.copy_from_slice(&out);
    Hash32(h)
}

/// Digest over the concatenation of several byte slices.
pub fn digest_parts(parts: &[&[u8]]) -> Hash32 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    let out = hasher.finalize();
    let mut h = [0u8; 32];
    h.copy_from_slice(&out);
    Hash32(h)
}

pub fn sidechain_id(name: &str) -> SidechainId {
    digest_parts(&[b"sidechain:", name.as_bytes()])
}

/// Commitment used by masked participants: digest(salt || account).
pub fn participant_commitment(salt: &[u8], account: &AccountId) -> Hash32 {
    digest_parts(&[salt, &account.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_deterministic_and_distinct() {
        assert_eq!(digest(b"abc"), digest(b"abc"));
        assert_ne!(digest(b"abc"), digest(b"abd"));
        assert_eq!(digest_parts(&[b"ab", b"c"]), digest(b"abc"));
    }

    #[test]
    fn account_derivation_truncates_to_twenty_bytes() {
        let a = AccountId::derive("alice");
        assert_eq!(&a.0[..], &digest(b"alice").0[12..]);
        assert_ne!(a, AccountId::derive("bob"));
    }
}
