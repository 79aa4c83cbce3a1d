//! Public areas, attestation structures and tickets, with their canonical
//! encodings. Names are always computed over these encodings.

use serde::{Deserialize, Serialize};

use crate::crypto::{compute_name, Digest, Name, PublicKeyBytes};
use crate::encoding::{
    DecodeError, Reader, Writer, ALG_ECC, ALG_SHA256, ST_ATTEST_CREATION, ST_ATTEST_NV,
    ST_ATTEST_SESSION_AUDIT, TPM_GENERATED,
};

/// TPMA_OBJECT bits used by this model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct ObjectAttributes(pub u32);

impl ObjectAttributes {
    pub const FIXED_TPM: u32 = 0x0000_0002;
    pub const FIXED_PARENT: u32 = 0x0000_0010;
    pub const SENSITIVE_DATA_ORIGIN: u32 = 0x0000_0020;
    pub const USER_WITH_AUTH: u32 = 0x0000_0040;
    pub const ADMIN_WITH_POLICY: u32 = 0x0000_0080;
    pub const RESTRICTED: u32 = 0x0001_0000;
    pub const DECRYPT: u32 = 0x0002_0000;
    pub const SIGN: u32 = 0x0004_0000;

    pub fn has(self, bit: u32) -> bool {
        self.0 & bit == bit
    }

    pub fn storage_key() -> Self {
        ObjectAttributes(
            Self::FIXED_TPM
                | Self::FIXED_PARENT
                | Self::SENSITIVE_DATA_ORIGIN
                | Self::USER_WITH_AUTH
                | Self::RESTRICTED
                | Self::DECRYPT,
        )
    }

    pub fn endorsement_key() -> Self {
        ObjectAttributes(
            Self::FIXED_TPM
                | Self::FIXED_PARENT
                | Self::SENSITIVE_DATA_ORIGIN
                | Self::USER_WITH_AUTH
                | Self::RESTRICTED
                | Self::SIGN,
        )
    }

    /// Unrestricted signing key whose use is gated purely by policy.
    pub fn attestation_key() -> Self {
        ObjectAttributes(
            Self::FIXED_TPM | Self::FIXED_PARENT | Self::SENSITIVE_DATA_ORIGIN | Self::SIGN,
        )
    }
}

/// TPMA_NV bits used by this model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct NvAttributes(pub u32);

impl NvAttributes {
    pub const PPWRITE: u32 = 0x0000_0001;
    pub const AUTHWRITE: u32 = 0x0000_0004;
    /// TPM_NT_EXTEND in the type nibble.
    pub const NT_EXTEND: u32 = 0x0000_0040;
    pub const POLICY_DELETE: u32 = 0x0000_0400;
    pub const PPREAD: u32 = 0x0001_0000;
    pub const AUTHREAD: u32 = 0x0004_0000;
    pub const NO_DA: u32 = 0x0200_0000;
    pub const WRITTEN: u32 = 0x2000_0000;
    pub const PLATFORM_CREATE: u32 = 0x4000_0000;

    pub fn has(self, bit: u32) -> bool {
        self.0 & bit == bit
    }

    pub fn with(self, bit: u32) -> Self {
        NvAttributes(self.0 | bit)
    }

    pub fn without(self, bit: u32) -> Self {
        NvAttributes(self.0 & !bit)
    }

    /// Extend-only, platform-created, deletable only through policy.
    pub fn nv_pcr() -> Self {
        NvAttributes(
            Self::PPWRITE
                | Self::AUTHWRITE
                | Self::NT_EXTEND
                | Self::POLICY_DELETE
                | Self::PPREAD
                | Self::AUTHREAD
                | Self::NO_DA
                | Self::PLATFORM_CREATE,
        )
    }
}

/// Template an object is created from: everything but the key and policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    pub attributes: ObjectAttributes,
}

impl ObjectTemplate {
    pub fn attestation_key() -> Self {
        ObjectTemplate { attributes: ObjectAttributes::attestation_key() }
    }

    pub fn encode(&self) -> Vec<u8> {
        Writer::new()
            .u16(ALG_ECC)
            .u16(ALG_SHA256)
            .u32(self.attributes.0)
            .finish()
    }
}

/// Public area of an ECC key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPublic {
    pub attributes: ObjectAttributes,
    pub auth_policy: Digest,
    pub public_key: PublicKeyBytes,
}

impl ObjectPublic {
    pub fn encode(&self) -> Vec<u8> {
        Writer::new()
            .u16(ALG_ECC)
            .u16(ALG_SHA256)
            .u32(self.attributes.0)
            .sized(&self.auth_policy.0)
            .sized(&self.public_key.0)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let ty = r.u16()?;
        if ty != ALG_ECC {
            return Err(DecodeError::BadValue { field: "type", value: ty.into() });
        }
        let alg = r.u16()?;
        if alg != ALG_SHA256 {
            return Err(DecodeError::BadValue { field: "nameAlg", value: alg.into() });
        }
        let attributes = ObjectAttributes(r.u32()?);
        let policy = r.sized()?;
        let auth_policy = Digest::from_slice(policy).ok_or(DecodeError::BadValue {
            field: "authPolicy.size",
            value: policy.len() as u32,
        })?;
        let public_key = PublicKeyBytes(r.sized()?.to_vec());
        r.finish()?;
        Ok(ObjectPublic { attributes, auth_policy, public_key })
    }

    pub fn name(&self) -> Name {
        compute_name(&self.encode())
    }
}

/// NV template sent by the orchestrator; excludes the handle, the policy and
/// the WRITTEN flag, all of which the vTPM fills in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NvTemplate {
    pub attributes: NvAttributes,
    pub data_size: u16,
}

impl NvTemplate {
    pub fn nv_pcr() -> Self {
        NvTemplate { attributes: NvAttributes::nv_pcr(), data_size: 32 }
    }

    /// The public area an index built from this template has, written or not.
    pub fn public(&self, handle: u32, auth_policy: Digest, written: bool) -> NvPublic {
        let attributes = if written {
            self.attributes.with(NvAttributes::WRITTEN)
        } else {
            self.attributes.without(NvAttributes::WRITTEN)
        };
        NvPublic { handle, attributes, auth_policy, data_size: self.data_size }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NvPublic {
    pub handle: u32,
    pub attributes: NvAttributes,
    pub auth_policy: Digest,
    pub data_size: u16,
}

impl NvPublic {
    pub fn encode(&self) -> Vec<u8> {
        Writer::new()
            .u32(self.handle)
            .u16(ALG_SHA256)
            .u32(self.attributes.0)
            .sized(&self.auth_policy.0)
            .u16(self.data_size)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let handle = r.u32()?;
        let alg = r.u16()?;
        if alg != ALG_SHA256 {
            return Err(DecodeError::BadValue { field: "nameAlg", value: alg.into() });
        }
        let attributes = NvAttributes(r.u32()?);
        let policy = r.sized()?;
        let auth_policy = Digest::from_slice(policy).ok_or(DecodeError::BadValue {
            field: "authPolicy.size",
            value: policy.len() as u32,
        })?;
        let data_size = r.u16()?;
        r.finish()?;
        Ok(NvPublic { handle, attributes, auth_policy, data_size })
    }

    pub fn name(&self) -> Name {
        compute_name(&self.encode())
    }
}

/// Body of a TPM-generated attestation structure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Attest {
    Creation {
        object_name: Name,
        creation_hash: Digest,
        auth_policy: Digest,
        attributes: ObjectAttributes,
    },
    Nv {
        object_name: Name,
        offset: u16,
        nv_contents: Digest,
    },
    SessionAudit {
        exclusive: bool,
        session_digest: Digest,
    },
}

impl Attest {
    /// magic || structure tag || body. Always starts with TPM_GENERATED.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(TPM_GENERATED);
        match self {
            Attest::Creation { object_name, creation_hash, auth_policy, attributes } => {
                w.u16(ST_ATTEST_CREATION)
                    .sized(&object_name.0)
                    .sized(&creation_hash.0)
                    .sized(&auth_policy.0)
                    .u32(attributes.0);
            }
            Attest::Nv { object_name, offset, nv_contents } => {
                w.u16(ST_ATTEST_NV)
                    .sized(&object_name.0)
                    .u16(*offset)
                    .sized(&nv_contents.0);
            }
            Attest::SessionAudit { exclusive, session_digest } => {
                w.u16(ST_ATTEST_SESSION_AUDIT)
                    .u8(u8::from(*exclusive))
                    .sized(&session_digest.0);
            }
        }
        w.finish()
    }

    /// Parses and checks the magic. A decoded value is not yet authentic;
    /// callers must still verify the signature over the raw bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let (magic, out) = Self::decode_any_magic(bytes)?;
        if magic != TPM_GENERATED {
            return Err(DecodeError::BadValue { field: "magic", value: magic });
        }
        Ok(out)
    }

    /// Like [`Attest::decode`] but returns the magic instead of checking it,
    /// for verifiers that report a bad magic in a fixed check order.
    pub fn decode_any_magic(bytes: &[u8]) -> Result<(u32, Self), DecodeError> {
        let mut r = Reader::new(bytes);
        let magic = r.u32()?;
        let tag = r.u16()?;
        let name = |r: &mut Reader| -> Result<Name, DecodeError> {
            let b = r.sized()?;
            Name::from_slice(b).ok_or(DecodeError::BadValue { field: "name.size", value: b.len() as u32 })
        };
        let digest = |r: &mut Reader, field| -> Result<Digest, DecodeError> {
            let b = r.sized()?;
            Digest::from_slice(b).ok_or(DecodeError::BadValue { field, value: b.len() as u32 })
        };
        let out = match tag {
            ST_ATTEST_CREATION => Attest::Creation {
                object_name: name(&mut r)?,
                creation_hash: digest(&mut r, "creationHash.size")?,
                auth_policy: digest(&mut r, "authPolicy.size")?,
                attributes: ObjectAttributes(r.u32()?),
            },
            ST_ATTEST_NV => Attest::Nv {
                object_name: name(&mut r)?,
                offset: r.u16()?,
                nv_contents: digest(&mut r, "nvContents.size")?,
            },
            ST_ATTEST_SESSION_AUDIT => Attest::SessionAudit {
                exclusive: r.u8()? != 0,
                session_digest: digest(&mut r, "sessionDigest.size")?,
            },
            other => return Err(DecodeError::BadValue { field: "attest.type", value: other.into() }),
        };
        r.finish()?;
        Ok((magic, out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TicketTag {
    Creation,
    Verified,
}

/// HMAC under the minting TPM's hierarchy proof.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub tag: TicketTag,
    pub digest: Digest,
}

/// Secret half of a created key, wrapped under the parent's storage seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedSecret {
    pub ciphertext: Digest,
    pub integrity: Digest,
}

/// Output of `TPM2_Create`: public area plus sealed private part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectBlob {
    pub public: ObjectPublic,
    pub sealed: SealedSecret,
}
