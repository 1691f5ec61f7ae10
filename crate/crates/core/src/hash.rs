//! Content hashing and seed derivation.
//!
//! Every hash is SHA-256 over length-prefixed fields, so `("ab", "c")` and
//! `("a", "bc")` never collide.

use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A 256-bit content hash.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of_fields<'a>(fields: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut hasher = Sha256::new();
        for field in fields {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field);
        }
        let out = hasher.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&out);
        ContentHash(bytes)
    }

    pub fn of_str(text: &str) -> Self {
        Self::of_fields([text.as_bytes()])
    }

    /// First eight bytes as a little-endian integer.
    pub fn as_u64(&self) -> u64 {
        let mut head = [0u8; 8];
        head.copy_from_slice(&self.0[..8]);
        u64::from_le_bytes(head)
    }

    /// Uniform draw in `[0, 1)` from the top 53 bits.
    pub fn as_unit(&self) -> f64 {
        (self.as_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({self})")
    }
}

/// 64-bit hash of a text.
pub fn text_hash(text: &str) -> u64 {
    ContentHash::of_str(text).as_u64()
}

/// Derive an independent sub-seed for a named stage.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    ContentHash::of_fields([&base.to_le_bytes()[..], tag.as_bytes(), &index.to_le_bytes()[..]]).as_u64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn framing_separates_fields() {
        let a = ContentHash::of_fields([&b"ab"[..], &b"c"[..]]);
        let b = ContentHash::of_fields([&b"a"[..], &b"bc"[..]]);
        assert_ne!(a, b);
    }

    #[test]
    fn hex_display_is_64_chars() {
        let h = ContentHash::of_str("x").to_string();
        assert_eq!(h.len(), 64);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_eq!(derive_seed(7, "kmeans", 3), derive_seed(7, "kmeans", 3));
    }

    #[test]
    fn unit_draw_in_range() {
        for i in 0..100u64 {
            let u = ContentHash::of_fields([&i.to_le_bytes()[..]]).as_unit();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
