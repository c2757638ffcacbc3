//! Identifiers and value types shared by the engines and the wire format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, ErrorCode, Result};

/// Seconds since an arbitrary epoch, as reported by a [`crate::Clock`].
pub type Timestamp = u64;

/// Human-readable agent identifier: 1 to 64 characters from `[A-Za-z0-9_-]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub const MAX_LEN: usize = 64;

    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() || value.len() > Self::MAX_LEN {
            return Err(Error::new(
                ErrorCode::MalformedRequest,
                format!("agent id must be 1..={} chars, got {}", Self::MAX_LEN, value.len()),
            ));
        }
        if let Some(bad) = value.chars().find(|c| !is_id_char(*c)) {
            return Err(Error::new(
                ErrorCode::MalformedRequest,
                format!("agent id {value:?} contains invalid character {bad:?}"),
            ));
        }
        Ok(AgentId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Characters allowed in an [`AgentId`].
pub fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

impl TryFrom<String> for AgentId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        AgentId::new(value)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> String {
        id.0
    }
}

impl FromStr for AgentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AgentId::new(s)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Opaque thread identifier (UUID-shaped when generated by the engine).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreadId(String);

impl ThreadId {
    pub fn generate() -> Self {
        ThreadId(uuid::Uuid::new_v4().to_string())
    }

    pub fn from_string(value: impl Into<String>) -> Self {
        ThreadId(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Opaque token-type identifier, e.g. `"USDC"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MintId(String);

impl MintId {
    pub fn new(value: impl Into<String>) -> Self {
        MintId(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

macro_rules! base58_bytes {
    ($name:ident, $len:expr, $what:literal) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn to_base58(&self) -> String {
                bs58::encode(&self.0).into_string()
            }

            pub fn from_base58(s: &str) -> Result<Self> {
                let bytes = bs58::decode(s).into_vec().map_err(|e| {
                    Error::new(ErrorCode::MalformedRequest, format!("{}: {e}", $what))
                })?;
                Self::from_slice(&bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_base58())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_base58())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_base58())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $name::from_base58(&s).map_err(serde::de::Error::custom)
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                $name::from_base58(s)
            }
        }
    };
}

/// 32-byte wallet address, rendered base58.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WalletAddress([u8; 32]);

base58_bytes!(WalletAddress, 32, "wallet address");

impl WalletAddress {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        WalletAddress(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| {
            Error::new(
                ErrorCode::MalformedRequest,
                format!("wallet address must be 32 bytes, got {}", bytes.len()),
            )
        })?;
        Ok(WalletAddress(arr))
    }

    /// Deterministic address derived from a label, used for session vaults
    /// and the simulated mint authority.
    pub fn derive(label: &str) -> Self {
        WalletAddress(Sha256::digest(label.as_bytes()).into())
    }
}

/// Ed25519 public key. Construction checks that the bytes decode to a curve point.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; 32]);

base58_bytes!(PublicKey, 32, "public key");

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| {
            Error::new(
                ErrorCode::BadSignature,
                format!("public key must be 32 bytes, got {}", bytes.len()),
            )
        })?;
        ed25519_dalek::VerifyingKey::from_bytes(&arr)
            .map_err(|_| Error::new(ErrorCode::BadSignature, "public key is not a valid Ed25519 point"))?;
        Ok(PublicKey(arr))
    }

    pub fn verifying_key(&self) -> ed25519_dalek::VerifyingKey {
        // Validated at construction.
        ed25519_dalek::VerifyingKey::from_bytes(&self.0).expect("validated key")
    }

    /// Checks an Ed25519 signature over `message`.
    pub fn verify(&self, message: &[u8], signature: &SignatureBytes) -> Result<()> {
        use ed25519_dalek::Verifier;
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        self.verifying_key()
            .verify(message, &sig)
            .map_err(|_| Error::new(ErrorCode::BadSignature, "signature does not verify"))
    }
}

impl From<ed25519_dalek::VerifyingKey> for PublicKey {
    fn from(key: ed25519_dalek::VerifyingKey) -> Self {
        PublicKey(key.to_bytes())
    }
}

/// Raw 64-byte Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignatureBytes([u8; 64]);

base58_bytes!(SignatureBytes, 64, "signature");

impl SignatureBytes {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; 64] = bytes.try_into().map_err(|_| {
            Error::new(
                ErrorCode::BadSignature,
                format!("signature must be 64 bytes, got {}", bytes.len()),
            )
        })?;
        Ok(SignatureBytes(arr))
    }
}

impl From<ed25519_dalek::Signature> for SignatureBytes {
    fn from(sig: ed25519_dalek::Signature) -> Self {
        SignatureBytes(sig.to_bytes())
    }
}

/// Amount in minor token units (1 USDC = 1_000_000). Serialized as a decimal string.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenAmount(u64);

impl TokenAmount {
    pub const ZERO: TokenAmount = TokenAmount(0);

    pub const fn new(units: u64) -> Self {
        TokenAmount(units)
    }

    pub const fn units(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: TokenAmount) -> Result<TokenAmount> {
        self.0
            .checked_add(other.0)
            .map(TokenAmount)
            .ok_or_else(|| Error::new(ErrorCode::Overflow, format!("{self} + {other} overflows")))
    }

    pub fn checked_sub(self, other: TokenAmount) -> Result<TokenAmount> {
        self.0
            .checked_sub(other.0)
            .map(TokenAmount)
            .ok_or_else(|| Error::new(ErrorCode::Overflow, format!("{self} - {other} underflows")))
    }
}

impl fmt::Display for TokenAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for TokenAmount {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::new(
                ErrorCode::MalformedRequest,
                format!("token amount {s:?} is not a decimal integer"),
            ));
        }
        s.parse::<u64>()
            .map(TokenAmount)
            .map_err(|_| Error::new(ErrorCode::Overflow, format!("token amount {s} exceeds u64")))
    }
}

impl Serialize for TokenAmount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for TokenAmount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
