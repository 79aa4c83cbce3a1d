//! Canonical byte encodings for everything that gets hashed or signed.
//!
//! Command codes, handles and response codes are 4-byte big-endian; length
//! prefixes and algorithm ids are 2-byte big-endian. See `docs/encoding.md`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ALG_SHA256: u16 = 0x000B;
pub const ALG_ECC: u16 = 0x0023;

/// TPM_RC_SUCCESS, as it enters rpHash.
pub const RC_SUCCESS: u32 = 0;

/// TPM_GENERATED_VALUE, the magic prefix of every attestation structure.
pub const TPM_GENERATED: u32 = 0xff54_4347;

pub const ST_ATTEST_CREATION: u16 = 0x801A;
pub const ST_ATTEST_NV: u16 = 0x8014;
pub const ST_ATTEST_SESSION_AUDIT: u16 = 0x8016;
pub const ST_CREATION: u16 = 0x8021;
pub const ST_VERIFIED: u16 = 0x8022;

/// TPM_RH_PLATFORM, the authorization handle that enters the deletion cpHash.
pub const RH_PLATFORM: u32 = 0x4000_000C;

/// A TPM 2.0 command code.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommandCode(pub u32);

impl CommandCode {
    pub const NV_UNDEFINE_SPACE_SPECIAL: CommandCode = CommandCode(0x0000_011F);
    pub const EVICT_CONTROL: CommandCode = CommandCode(0x0000_0120);
    pub const NV_DEFINE_SPACE: CommandCode = CommandCode(0x0000_012A);
    pub const NV_EXTEND: CommandCode = CommandCode(0x0000_0136);
    pub const POLICY_NV: CommandCode = CommandCode(0x0000_0149);
    pub const CERTIFY_CREATION: CommandCode = CommandCode(0x0000_014A);
    pub const GET_SESSION_AUDIT_DIGEST: CommandCode = CommandCode(0x0000_014D);
    pub const NV_READ: CommandCode = CommandCode(0x0000_014E);
    pub const CREATE: CommandCode = CommandCode(0x0000_0153);
    pub const LOAD: CommandCode = CommandCode(0x0000_0157);
    pub const SIGN: CommandCode = CommandCode(0x0000_015D);
    pub const POLICY_SIGNED: CommandCode = CommandCode(0x0000_0160);
    pub const FLUSH_CONTEXT: CommandCode = CommandCode(0x0000_0165);
    pub const LOAD_EXTERNAL: CommandCode = CommandCode(0x0000_0167);
    pub const POLICY_AUTHORIZE: CommandCode = CommandCode(0x0000_016A);
    pub const POLICY_COMMAND_CODE: CommandCode = CommandCode(0x0000_016C);
    pub const START_AUTH_SESSION: CommandCode = CommandCode(0x0000_0176);
    pub const VERIFY_SIGNATURE: CommandCode = CommandCode(0x0000_0177);
    pub const PCR_READ: CommandCode = CommandCode(0x0000_017E);
    pub const POLICY_PCR: CommandCode = CommandCode(0x0000_017F);
    pub const PCR_EXTEND: CommandCode = CommandCode(0x0000_0182);
    pub const NV_CERTIFY: CommandCode = CommandCode(0x0000_0184);

    const TABLE: &'static [(CommandCode, &'static str)] = &[
        (Self::NV_UNDEFINE_SPACE_SPECIAL, "TPM2_NV_UndefineSpaceSpecial"),
        (Self::EVICT_CONTROL, "TPM2_EvictControl"),
        (Self::NV_DEFINE_SPACE, "TPM2_NV_DefineSpace"),
        (Self::NV_EXTEND, "TPM2_NV_Extend"),
        (Self::POLICY_NV, "TPM2_PolicyNV"),
        (Self::CERTIFY_CREATION, "TPM2_CertifyCreation"),
        (Self::GET_SESSION_AUDIT_DIGEST, "TPM2_GetSessionAuditDigest"),
        (Self::NV_READ, "TPM2_NV_Read"),
        (Self::CREATE, "TPM2_Create"),
        (Self::LOAD, "TPM2_Load"),
        (Self::SIGN, "TPM2_Sign"),
        (Self::POLICY_SIGNED, "TPM2_PolicySigned"),
        (Self::FLUSH_CONTEXT, "TPM2_FlushContext"),
        (Self::LOAD_EXTERNAL, "TPM2_LoadExternal"),
        (Self::POLICY_AUTHORIZE, "TPM2_PolicyAuthorize"),
        (Self::POLICY_COMMAND_CODE, "TPM2_PolicyCommandCode"),
        (Self::START_AUTH_SESSION, "TPM2_StartAuthSession"),
        (Self::VERIFY_SIGNATURE, "TPM2_VerifySignature"),
        (Self::PCR_READ, "TPM2_PCR_Read"),
        (Self::POLICY_PCR, "TPM2_PolicyPCR"),
        (Self::PCR_EXTEND, "TPM2_PCR_Extend"),
        (Self::NV_CERTIFY, "TPM2_NV_Certify"),
    ];

    pub fn to_bytes(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }

    pub fn mnemonic(self) -> &'static str {
        Self::TABLE
            .iter()
            .find(|(cc, _)| *cc == self)
            .map(|(_, n)| *n)
            .unwrap_or("TPM2_Unknown")
    }

    pub fn from_mnemonic(name: &str) -> Option<CommandCode> {
        Self::TABLE.iter().find(|(_, n)| *n == name).map(|(cc, _)| *cc)
    }
}

impl fmt::Debug for CommandCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(0x{:08x})", self.mnemonic(), self.0)
    }
}

impl fmt::Display for CommandCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

pub fn enc_u32(v: u32) -> [u8; 4] {
    v.to_be_bytes()
}

pub fn enc_u16(v: u16) -> [u8; 2] {
    v.to_be_bytes()
}

/// PCR selection: count byte, then each index as 4-byte big-endian.
/// Callers are responsible for passing a strictly ascending list.
pub fn enc_pcr_selection(indices: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + 4 * indices.len());
    out.push(indices.len() as u8);
    for i in indices {
        out.extend_from_slice(&i.to_be_bytes());
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after structure")]
    TrailingBytes(usize),
    #[error("unexpected value 0x{value:x} for {field}")]
    BadValue { field: &'static str, value: u32 },
}

/// Append-only big-endian writer.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// 2-byte length prefix followed by the bytes.
    pub fn sized(&mut self, bytes: &[u8]) -> &mut Self {
        debug_assert!(bytes.len() <= u16::MAX as usize);
        self.u16(bytes.len() as u16);
        self.raw(bytes)
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated(self.pos))?;
        let out = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated(self.pos))?;
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn sized(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    pub fn expect_u32(&mut self, field: &'static str, want: u32) -> Result<(), DecodeError> {
        let value = self.u32()?;
        if value != want {
            return Err(DecodeError::BadValue { field, value });
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}
