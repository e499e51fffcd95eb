//! Scenario traces: TSV, one event per line, `time_ms \t actor \t event \t
//! args` where args are space-separated `key=value` pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, Result};
use petastore_core::Timestamp;

#[derive(Debug, Default, Clone)]
pub struct Trace {
    text: String,
    lines: usize,
}

impl Trace {
    pub fn emit(&mut self, at: Timestamp, actor: &str, event: &str, args: &[(&str, &dyn std::fmt::Display)]) {
        let _ = write!(self.text, "{}\t{actor}\t{event}\t", at.as_millis());
        for (i, (k, v)) in args.iter().enumerate() {
            if i > 0 {
                self.text.push(' ');
            }
            let _ = write!(self.text, "{k}={v}");
        }
        self.text.push('\n');
        self.lines += 1;
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: u64,
    pub actor: String,
    pub event: String,
    pub args: BTreeMap<String, String>,
}

impl TraceEvent {
    pub fn arg(&self, k: &str) -> Option<&str> {
        self.args.get(k).map(String::as_str)
    }

    pub fn num(&self, k: &str) -> Option<u64> {
        self.arg(k).and_then(|v| v.parse().ok())
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let bad = || anyhow!("trace line {}: malformed", n + 1);
            let mut f = l.splitn(4, '\t');
            let time = f.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            let actor = f.next().ok_or_else(bad)?.to_string();
            let event = f.next().ok_or_else(bad)?.to_string();
            let mut args = BTreeMap::new();
            for kv in f.next().unwrap_or("").split(' ').filter(|s| !s.is_empty()) {
                let (k, v) = kv.split_once('=').ok_or_else(bad)?;
                args.insert(k.to_string(), v.to_string());
            }
            Ok(TraceEvent {
                time,
                actor,
                event,
                args,
            })
        })
        .collect()
}
