//! Configuration store plus the keyed measurement over file bytes and
//! metadata.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::crypto::{hash, hmac, Digest, HmacKey};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    #[serde(with = "crate::crypto::hex_bytes")]
    pub content: Vec<u8>,
    /// Changes whenever the file is replaced outside the deploy path.
    pub generation: u64,
    pub version: u64,
}

#[derive(Clone, Debug)]
pub struct Tracer {
    hk: HmacKey,
    files: BTreeMap<String, FileEntry>,
}

impl Tracer {
    pub fn new(hk: HmacKey) -> Self {
        Tracer { hk, files: BTreeMap::new() }
    }

    /// Legitimate deployment: new content, next version.
    pub fn deploy(&mut self, path: &str, content: &[u8]) {
        let e = self.files.entry(path.to_string()).or_insert(FileEntry {
            content: Vec::new(),
            generation: 0,
            version: 0,
        });
        e.content = content.to_vec();
        e.version += 1;
    }

    /// Out-of-band write. Even rewriting identical bytes bumps the
    /// generation, so the measurement changes.
    pub fn tamper(&mut self, path: &str, content: &[u8]) {
        let e = self.files.entry(path.to_string()).or_insert(FileEntry {
            content: Vec::new(),
            generation: 0,
            version: 0,
        });
        e.content = content.to_vec();
        e.generation += 1;
    }

    /// Deploys every entry of a `path -> hex content` manifest.
    pub fn load_manifest(&mut self, manifest: &BTreeMap<String, String>) -> Result<(), hex::FromHexError> {
        for (path, content) in manifest {
            self.deploy(path, &hex::decode(content)?);
        }
        Ok(())
    }

    pub(crate) fn key_bytes(&self) -> [u8; 32] {
        self.hk.0
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files.get(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    /// content || generation (BE8) || version (BE8).
    pub fn measured_bytes(&self, path: &str) -> Option<Vec<u8>> {
        let e = self.files.get(path)?;
        let mut out = e.content.clone();
        out.extend_from_slice(&e.generation.to_be_bytes());
        out.extend_from_slice(&e.version.to_be_bytes());
        Some(out)
    }

    pub fn measure(&self, path: &str) -> Option<Digest> {
        self.measured_bytes(path).map(|b| hmac(&self.hk, &hash(&b).0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_enters_the_measurement() {
        let mut a = Tracer::new(HmacKey([1; 32]));
        let mut b = a.clone();
        a.deploy("/f", b"x");
        b.deploy("/f", b"x");
        assert_eq!(a.measure("/f"), b.measure("/f"));
        b.tamper("/f", b"x");
        assert_ne!(a.measure("/f"), b.measure("/f"));
        a.deploy("/f", b"x");
        assert_ne!(a.measure("/f"), b.measure("/f"));
    }

    #[test]
    fn manifest_is_hex() {
        let mut t = Tracer::new(HmacKey([1; 32]));
        let m = BTreeMap::from([("/a".to_string(), "6869".to_string())]);
        t.load_manifest(&m).unwrap();
        assert_eq!(t.file("/a").unwrap().content, b"hi");
        assert_eq!(t.file("/a").unwrap().version, 1);
        let bad = BTreeMap::from([("/b".to_string(), "zz".to_string())]);
        assert!(t.load_manifest(&bad).is_err());
    }

    #[test]
    fn key_matters() {
        let mut a = Tracer::new(HmacKey([1; 32]));
        let mut b = Tracer::new(HmacKey([2; 32]));
        a.deploy("/f", b"x");
        b.deploy("/f", b"x");
        assert_eq!(a.measured_bytes("/f"), b.measured_bytes("/f"));
        assert_ne!(a.measure("/f"), b.measure("/f"));
        assert!(a.measure("/missing").is_none());
    }
}
