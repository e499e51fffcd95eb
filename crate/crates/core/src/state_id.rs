//! Content digests identifying a conditions configuration.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use sha2::{Digest, Sha256};

use crate::time::Timestamp;

const DOMAIN: &[u8] = b"petastore.state-id.v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateIdError {
    /// Namespaces must be strictly increasing; duplicates count as unsorted.
    #[error("revision bindings are not strictly sorted by namespace (at `{0}`)")]
    UnsortedBindings(String),
    #[error("state id must be 64 hex digits")]
    BadHex,
}

/// 256-bit digest over a configuration's canonical form.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub [u8; 32]);

impl fmt::Debug for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateId({self})")
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl FromStr for StateId {
    type Err = StateIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.as_bytes();
        if s.len() != 64 {
            return Err(StateIdError::BadHex);
        }
        let nibble = |c: u8| match c {
            b'0'..=b'9' => Ok(c - b'0'),
            b'a'..=b'f' => Ok(c - b'a' + 10),
            b'A'..=b'F' => Ok(c - b'A' + 10),
            _ => Err(StateIdError::BadHex),
        };
        let mut out = [0u8; 32];
        for (i, pair) in s.chunks_exact(2).enumerate() {
            out[i] = (nibble(pair[0])? << 4) | nibble(pair[1])?;
        }
        Ok(StateId(out))
    }
}

fn put_str(h: &mut Sha256, s: &str) {
    h.update((s.len() as u64).to_be_bytes());
    h.update(s.as_bytes());
}

/// Digest of `(name, cutoff, bindings)`. Every variable-length field is
/// length-prefixed so distinct inputs cannot share a serialization.
pub fn compute_state_id<N: AsRef<str>, R: AsRef<str>>(
    configuration_name: &str,
    insertion_cutoff: Timestamp,
    revision_bindings: &[(N, R)],
) -> Result<StateId, StateIdError> {
    for pair in revision_bindings.windows(2) {
        if pair[0].0.as_ref() >= pair[1].0.as_ref() {
            return Err(StateIdError::UnsortedBindings(pair[1].0.as_ref().into()));
        }
    }
    let mut h = Sha256::new();
    h.update(DOMAIN);
    put_str(&mut h, configuration_name);
    h.update(insertion_cutoff.as_millis().to_be_bytes());
    h.update((revision_bindings.len() as u64).to_be_bytes());
    for (ns, rev) in revision_bindings {
        put_str(&mut h, ns.as_ref());
        put_str(&mut h, rev.as_ref());
    }
    Ok(StateId(h.finalize().into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;

    fn bindings() -> Vec<(String, String)> {
        vec![
            ("/calib".to_string(), "prod-r3".to_string()),
            ("/calib/drift".to_string(), "reproc".to_string()),
            ("/geom".to_string(), "v2".to_string()),
        ]
    }

    #[test]
    fn deterministic() {
        let a = compute_state_id("physics", Timestamp(1000), &bindings()).unwrap();
        let b = compute_state_id("physics", Timestamp(1000), &bindings()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cutoff_change_changes_digest() {
        let a = compute_state_id("physics", Timestamp::from_secs(10), &bindings()).unwrap();
        let b = compute_state_id("physics", Timestamp::from_secs(11), &bindings()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn permuted_then_resorted_is_identical() {
        let mut shuffled = bindings();
        shuffled.reverse();
        shuffled.swap(0, 1);
        assert!(matches!(
            compute_state_id("physics", Timestamp(5), &shuffled),
            Err(StateIdError::UnsortedBindings(_))
        ));
        shuffled.sort();
        assert_eq!(
            compute_state_id("physics", Timestamp(5), &shuffled).unwrap(),
            compute_state_id("physics", Timestamp(5), &bindings()).unwrap()
        );
    }

    #[test]
    fn duplicate_namespace_is_unsorted() {
        let b = [("/a", "x"), ("/a", "y")];
        assert_eq!(
            compute_state_id("c", Timestamp(0), &b),
            Err(StateIdError::UnsortedBindings("/a".into()))
        );
    }

    #[test]
    fn field_boundaries_are_unambiguous() {
        let a = compute_state_id("ab", Timestamp(0), &[("/c", "d")]).unwrap();
        let b = compute_state_id("a", Timestamp(0), &[("b/c", "d")]).unwrap();
        let c = compute_state_id("ab", Timestamp(0), &[("/cd", "")]).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn hex_round_trip() {
        let id = compute_state_id("x", Timestamp(1), &[] as &[(&str, &str)]).unwrap();
        let text = id.to_string();
        assert_eq!(text.len(), 64);
        assert_eq!(text.parse::<StateId>().unwrap(), id);
        assert_eq!("zz".parse::<StateId>(), Err(StateIdError::BadHex));
    }
}
