//! Conditions store persistence.
//!
//! ```text
//! <dir>/records.bin          "CDBR" | version(1) | string table | rows
//! <dir>/configs.tsv          name \t cutoff_ms \t state \t prefix=rev,...
//! <dir>/payloads/<id>.pst    payload segments as stored files
//! ```
//!
//! The string table is `count(4)` then `len(2) | utf-8` per string, with the
//! store tag first. Rows are fixed width, all big-endian:
//! `path(4) type(4) revision(4) begin(8) end(8) inserted(8) seq(8)
//! origin_tag(4) origin_seq(8) payload_file(8) payload_offset(8)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use petastore_core::conditions::{
    ConditionKey, ConditionStore, ConfigurationRecord, Interval, IovRecord, Origin, PayloadArena, PayloadRef,
};
use petastore_core::storage::CodecId;
use petastore_core::Timestamp;

use crate::files::{read_packed, write_atomic, write_packed};

const MAGIC: &[u8; 4] = b"CDBR";
const VERSION: u8 = 1;
pub const ROW_LEN: usize = 72;

#[derive(Default)]
struct Strings {
    list: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Strings {
    fn id(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.list.len() as u32;
        self.list.push(s.into());
        self.index.insert(s.into(), i);
        i
    }
}

pub fn encode_records(store: &ConditionStore) -> Vec<u8> {
    let mut strings = Strings::default();
    strings.id(store.tag());
    let mut rows = Vec::with_capacity(store.len() * ROW_LEN);
    for r in store.records() {
        let ids = [
            strings.id(&r.key.path),
            strings.id(&r.key.condition_type),
            strings.id(&r.revision),
        ];
        for i in ids {
            rows.extend_from_slice(&i.to_be_bytes());
        }
        for v in [r.validity.begin, r.validity.end, r.inserted_at.as_millis(), r.seq] {
            rows.extend_from_slice(&v.to_be_bytes());
        }
        rows.extend_from_slice(&strings.id(&r.origin.tag).to_be_bytes());
        for v in [r.origin.seq, r.payload.file_id, r.payload.offset] {
            rows.extend_from_slice(&v.to_be_bytes());
        }
    }
    let mut out = Vec::with_capacity(rows.len() + 64);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(strings.list.len() as u32).to_be_bytes());
    for s in &strings.list {
        out.extend_from_slice(&(s.len() as u16).to_be_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    out.extend_from_slice(&(store.len() as u64).to_be_bytes());
    out.extend_from_slice(&rows);
    out
}

/// Returns the store tag and the rows.
pub fn decode_records(bytes: &[u8]) -> Result<(String, Vec<IovRecord>)> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(at..at + n)
            .ok_or_else(|| anyhow!("records.bin truncated"))?;
        at += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        bail!("records.bin: bad magic");
    }
    if take(1)?[0] != VERSION {
        bail!("records.bin: unsupported version");
    }
    let n = u32::from_be_bytes(take(4)?.try_into()?) as usize;
    let mut strings = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u16::from_be_bytes(take(2)?.try_into()?) as usize;
        strings.push(std::str::from_utf8(take(len)?)?.to_string());
    }
    let tag = strings
        .first()
        .cloned()
        .ok_or_else(|| anyhow!("records.bin: no tag"))?;
    let count = u64::from_be_bytes(take(8)?.try_into()?) as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let row = take(ROW_LEN)?;
        let u32_at = |o: usize| u32::from_be_bytes(row[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_be_bytes(row[o..o + 8].try_into().unwrap());
        let s = |i: usize| {
            strings
                .get(i)
                .cloned()
                .ok_or_else(|| anyhow!("bad string index {i}"))
        };
        let (begin, end) = (u64_at(12), u64_at(20));
        records.push(IovRecord {
            key: ConditionKey::new(&s(u32_at(0))?, &s(u32_at(4))?)?,
            revision: s(u32_at(8))?,
            validity: Interval::new(begin, end).ok_or_else(|| anyhow!("empty interval [{begin}, {end})"))?,
            inserted_at: Timestamp(u64_at(28)),
            seq: u64_at(36),
            origin: Origin {
                tag: s(u32_at(44))?,
                seq: u64_at(48),
            },
            payload: PayloadRef {
                file_id: u64_at(56),
                offset: u64_at(64),
            },
        });
    }
    if at != bytes.len() {
        bail!("records.bin: trailing bytes");
    }
    Ok((tag, records))
}

pub fn render_configs<'a>(configs: impl IntoIterator<Item = &'a ConfigurationRecord>) -> String {
    configs
        .into_iter()
        .map(|c| {
            let b: Vec<String> = c.bindings.iter().map(|(p, r)| format!("{p}={r}")).collect();
            format!(
                "{}\t{}\t{}\t{}\n",
                c.name,
                c.insertion_cutoff.as_millis(),
                c.state,
                b.join(",")
            )
        })
        .collect()
}

pub fn parse_configs(text: &str) -> Result<Vec<ConfigurationRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let [name, cutoff, state, bindings] = f[..] else {
            bail!("configs.tsv:{}: expected 4 fields", n + 1);
        };
        let bindings = bindings
            .split(',')
            .filter(|b| !b.is_empty())
            .map(|b| {
                b.split_once('=')
                    .map(|(p, r)| (p.to_string(), r.to_string()))
                    .ok_or_else(|| anyhow!("configs.tsv:{}: bad binding {b}", n + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let c = ConfigurationRecord::new(name, bindings, Timestamp(cutoff.parse()?))?;
        if c.state.to_string() != state {
            bail!("configs.tsv:{}: state id mismatch for {name}", n + 1);
        }
        out.push(c);
    }
    Ok(out)
}

pub fn save(dir: &Path, store: &ConditionStore) -> Result<()> {
    let pay = dir.join("payloads");
    fs::create_dir_all(&pay)?;
    for (id, seg) in store.payloads().segments() {
        write_packed(&pay.join(format!("{id}.pst")), seg, CodecId::REFERENCE_LZ)?;
    }
    write_atomic(&dir.join("records.bin"), &encode_records(store))?;
    write_atomic(
        &dir.join("configs.tsv"),
        render_configs(store.configs()).as_bytes(),
    )
}

/// Loads a store, or creates an empty one tagged `default_tag` if `dir`
/// holds none yet.
pub fn load(dir: &Path, default_tag: &str) -> Result<ConditionStore> {
    let recs = dir.join("records.bin");
    if !recs.exists() {
        return Ok(ConditionStore::new(default_tag));
    }
    let (tag, records) = decode_records(&fs::read(&recs)?)?;
    let mut arena = PayloadArena::default();
    let pay = dir.join("payloads");
    if pay.exists() {
        for entry in fs::read_dir(&pay)? {
            let p = entry?.path();
            if p.extension().and_then(|e| e.to_str()) != Some("pst") {
                continue;
            }
            let id: u64 = p
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| anyhow!("unexpected payload file {}", p.display()))?;
            arena.load_segment(id, read_packed(&p)?);
        }
    }
    let configs = match fs::read_to_string(dir.join("configs.tsv")) {
        Ok(t) => parse_configs(&t)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    ConditionStore::restore(&tag, arena, records, configs)
        .with_context(|| format!("loading {}", dir.display()))
}
