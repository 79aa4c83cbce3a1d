//! Hash, keyed-MAC and signature services shared by every party.
//!
//! Everything here is a pure function of its inputs. SHA-256 is the only
//! hash, so every digest in the system is 32 bytes wide, and signatures are
//! deterministic ECDSA over P-256 (RFC 6979 nonces) so that scenario traces
//! are byte-reproducible.

use std::fmt;

use hmac::{Hmac, Mac};
use p256::ecdsa::signature::{Signer, Verifier};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::encoding::ALG_SHA256;

pub const DIGEST_LEN: usize = 32;
pub const NAME_LEN: usize = 2 + DIGEST_LEN;
pub const SIGNATURE_LEN: usize = 64;
pub const NONCE_LEN: usize = 16;

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

/// The all-zero digest that seeds PCRs, policy sessions and audit sessions.
pub const ZERO_DIGEST: Digest = Digest([0u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Digest)
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// TPM-style object name: hash-algorithm id followed by the digest of the
/// object's canonical public area.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Name(pub [u8; NAME_LEN]);

impl Name {
    pub fn as_bytes(&self) -> &[u8; NAME_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Name)
    }
}

impl AsRef<[u8]> for Name {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Name({})", self.to_hex())
    }
}

/// Name = alg-id (0x000B) || SHA-256(public_area).
pub fn compute_name(public_area: &[u8]) -> Name {
    let mut out = [0u8; NAME_LEN];
    out[..2].copy_from_slice(&ALG_SHA256.to_be_bytes());
    out[2..].copy_from_slice(&hash(public_area).0);
    Name(out)
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Symmetric key shared by the orchestrator and exactly one attestation agent.
#[derive(Clone, PartialEq, Eq)]
pub struct HmacKey(pub [u8; 32]);

impl fmt::Debug for HmacKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("HmacKey(<redacted>)")
    }
}

pub fn hmac(key: &HmacKey, data: &[u8]) -> Digest {
    hmac_raw(&key.0, &[data])
}

/// HMAC-SHA-256 with an arbitrary-length key over concatenated parts.
pub fn hmac_raw(key: &[u8], parts: &[&[u8]]) -> Digest {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    Digest(mac.finalize().into_bytes().into())
}

/// 16-byte challenge or session nonce.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Nonce)
    }
}

impl AsRef<[u8]> for Nonce {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

/// Fixed-width `r || s` ECDSA signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Signature)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..16])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureScheme {
    EcdsaP256Sha256,
}

/// A signing key pair. The secret half never leaves this type except through
/// [`SigningKeyPair::secret_bytes`], which only the vTPM sealing code calls.
#[derive(Clone)]
pub struct SigningKeyPair {
    signing: p256::ecdsa::SigningKey,
    public: PublicKeyBytes,
}

/// SEC1-compressed P-256 point (33 bytes).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKeyBytes(pub Vec<u8>);

impl fmt::Debug for PublicKeyBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0))
    }
}

impl SigningKeyPair {
    /// Derives a key pair from 32 bytes of seed material. The seed is hashed
    /// with a counter until it lands on a valid non-zero scalar.
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        let mut counter: u32 = 0;
        loop {
            let candidate = hash_parts(&[b"blindtrust-keygen", seed, &counter.to_be_bytes()]);
            if let Some(kp) = Self::from_secret_bytes(&candidate.0) {
                return kp;
            }
            counter += 1;
        }
    }

    pub fn from_secret_bytes(secret: &[u8; 32]) -> Option<Self> {
        let signing = p256::ecdsa::SigningKey::from_bytes(secret.into()).ok()?;
        let public = PublicKeyBytes(
            signing
                .verifying_key()
                .to_encoded_point(true)
                .as_bytes()
                .to_vec(),
        );
        Some(SigningKeyPair { signing, public })
    }

    pub fn public(&self) -> &PublicKeyBytes {
        &self.public
    }

    pub fn scheme(&self) -> SignatureScheme {
        SignatureScheme::EcdsaP256Sha256
    }

    pub(crate) fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        let sig: p256::ecdsa::Signature = self.signing.sign(message);
        let mut out = [0u8; SIGNATURE_LEN];
        out.copy_from_slice(&sig.to_bytes());
        Signature(out)
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// Returns false for malformed keys, malformed signatures and forgeries alike.
pub fn verify(public: &PublicKeyBytes, message: &[u8], signature: &Signature) -> bool {
    let Ok(key) = p256::ecdsa::VerifyingKey::from_sec1_bytes(&public.0) else {
        return false;
    };
    let Ok(sig) = p256::ecdsa::Signature::from_slice(&signature.0) else {
        return false;
    };
    key.verify(message, &sig).is_ok()
}

macro_rules! hex_serde {
    ($ty:ty, $from:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.as_ref()))
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
                let f: fn(&[u8]) -> Option<$ty> = $from;
                f(&bytes).ok_or_else(|| {
                    serde::de::Error::custom(format!(
                        "wrong length {} for {}",
                        bytes.len(),
                        stringify!($ty)
                    ))
                })
            }
        }
    };
}

impl AsRef<[u8]> for Signature {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl AsRef<[u8]> for PublicKeyBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// `#[serde(with = "hex_bytes")]` for variable-length byte strings.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

hex_serde!(Digest, Digest::from_slice);
hex_serde!(Name, Name::from_slice);
hex_serde!(Signature, Signature::from_slice);
hex_serde!(Nonce, Nonce::from_slice);
hex_serde!(PublicKeyBytes, |b| Some(PublicKeyBytes(b.to_vec())));
