//! Binary event-header encoding.
//!
//! ```text
//! magic(2) | version(1) | event_id(8) | run(4) | bitmap(1)
//!   then, for each set bit in ascending order:
//!   kind(1) | file_id(8) | offset(8) | length(4)
//! ```
//!
//! All integers are big-endian. A header carrying all eight components is
//! 184 bytes; the hard ceiling is [`MAX_ENCODED_LEN`].

use alloc::vec::Vec;

use crate::model::{ComponentKind, EventHeader, Locator};

pub const MAGIC: [u8; 2] = *b"EH";
pub const VERSION: u8 = 1;
pub const FIXED_LEN: usize = 16;
pub const LOCATOR_LEN: usize = 21;
pub const MAX_ENCODED_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum HeaderError {
    #[error("malformed event header: {0}")]
    Malformed(&'static str),
}

pub fn encoded_len(h: &EventHeader) -> usize {
    FIXED_LEN + LOCATOR_LEN * h.component_count()
}

pub fn encode_event_header(h: &EventHeader) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(h));
    encode_into(h, &mut out);
    out
}

pub fn encode_into(h: &EventHeader, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&h.event_id.to_be_bytes());
    out.extend_from_slice(&h.run_number.to_be_bytes());
    let bitmap = h
        .components()
        .fold(0u8, |acc, (kind, _)| acc | (1 << kind.code()));
    out.push(bitmap);
    for (kind, loc) in h.components() {
        out.push(kind.code());
        out.extend_from_slice(&loc.file_id.to_be_bytes());
        out.extend_from_slice(&loc.offset.to_be_bytes());
        out.extend_from_slice(&loc.length.to_be_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], HeaderError> {
        if self.buf.len() < N {
            return Err(HeaderError::Malformed("truncated"));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        let mut out = [0u8; N];
        out.copy_from_slice(head);
        Ok(out)
    }
}

pub fn decode_event_header(b: &[u8]) -> Result<EventHeader, HeaderError> {
    let mut r = Reader { buf: b };
    if r.take::<2>()
        .map_err(|_| HeaderError::Malformed("missing magic"))?
        != MAGIC
    {
        return Err(HeaderError::Malformed("bad magic"));
    }
    if r.take::<1>()?[0] != VERSION {
        return Err(HeaderError::Malformed("unsupported version"));
    }
    let event_id = u64::from_be_bytes(r.take()?);
    let run_number = u32::from_be_bytes(r.take()?);
    let bitmap = r.take::<1>()?[0];
    let mut header = EventHeader::new(event_id, run_number);
    for kind in ComponentKind::ALL {
        if bitmap & (1 << kind.code()) == 0 {
            continue;
        }
        if r.take::<1>()?[0] != kind.code() {
            return Err(HeaderError::Malformed("component code does not match bitmap"));
        }
        let locator = Locator {
            file_id: u64::from_be_bytes(r.take()?),
            offset: u64::from_be_bytes(r.take()?),
            length: u32::from_be_bytes(r.take()?),
        };
        header.set_component(kind, Some(locator));
    }
    if !r.buf.is_empty() {
        return Err(HeaderError::Malformed("trailing bytes"));
    }
    Ok(header)
}
