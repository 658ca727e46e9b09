//! Platform-independent hashing used for seed derivation, cache keys and the mock oracle.
//!
//! Every field is length-prefixed before it enters SHA-256, so `("ab", "c")` and
//! `("a", "bc")` never collide structurally.

use sha2::{Digest, Sha256};

#[derive(Clone, Default)]
pub struct StableHasher {
    inner: Sha256,
}

impl StableHasher {
    pub fn new(domain: &str) -> Self {
        let mut h = StableHasher {
            inner: Sha256::new(),
        };
        h.push_bytes(domain.as_bytes());
        h
    }

    fn push_bytes(&mut self, bytes: &[u8]) {
        self.inner.update((bytes.len() as u64).to_le_bytes());
        self.inner.update(bytes);
    }

    pub fn str(mut self, s: &str) -> Self {
        self.push_bytes(s.as_bytes());
        self
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.push_bytes(b);
        self
    }

    pub fn u64(mut self, n: u64) -> Self {
        self.push_bytes(&n.to_le_bytes());
        self
    }

    pub fn f64(self, x: f64) -> Self {
        self.u64(x.to_bits())
    }

    pub fn finish_bytes(self) -> [u8; 32] {
        let out = self.inner.finalize();
        let mut buf = [0u8; 32];
        buf.copy_from_slice(&out);
        buf
    }

    pub fn finish_hex(self) -> String {
        hex::encode(self.finish_bytes())
    }

    pub fn finish_u64(self) -> u64 {
        let b = self.finish_bytes();
        u64::from_le_bytes(b[..8].try_into().expect("8 bytes"))
    }

    /// Uniform value in `[0, 1)` with 53 bits of resolution.
    pub fn finish_unit(self) -> f64 {
        (self.finish_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// SHA-256 of raw bytes as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
