use alloc::format;
use alloc::string::String;
use core::time::Duration;

use super::Load;

const DAY_MS: u64 = 86_400_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub w_conn: f64,
    pub w_files: f64,
    pub w_rate: f64,
    /// Values at which each load term reaches 1.0.
    pub conn_norm: f64,
    pub files_norm: f64,
    pub rate_norm: f64,
    /// Accesses within `window` that make a file hot.
    pub replicate_threshold: u32,
    pub hot_load_threshold: f64,
    pub purge_idle_days: u32,
    pub high_pct: u8,
    pub low_pct: u8,
    pub window: Duration,
    /// A slave silent for longer than this is treated as offline.
    pub liveness: Duration,
    pub replica_cap: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            w_conn: 0.5,
            w_files: 0.2,
            w_rate: 0.3,
            conn_norm: 100.0,
            files_norm: 100.0,
            rate_norm: 100e6,
            replicate_threshold: 50,
            hot_load_threshold: 0.7,
            purge_idle_days: 3,
            high_pct: 90,
            low_pct: 70,
            window: Duration::from_secs(600),
            liveness: Duration::from_secs(15),
            replica_cap: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("policy: {0}")]
pub struct PolicyError(pub String);

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError(m.into()));
        if !(0 < self.low_pct && self.low_pct < self.high_pct && self.high_pct <= 100) {
            return bad("need 0 < low_pct < high_pct <= 100");
        }
        if self.purge_idle_days == 0 {
            return bad("purge_idle_days must be positive");
        }
        let weights = [self.w_conn, self.w_files, self.w_rate];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("weights must be finite and non-negative");
        }
        let norms = [self.conn_norm, self.files_norm, self.rate_norm];
        if norms.iter().any(|n| !n.is_finite() || *n <= 0.0) {
            return bad("normalizers must be positive");
        }
        if self.replica_cap == 0 {
            return bad("replica_cap must be positive");
        }
        Ok(())
    }

    pub fn load_score(&self, l: &Load) -> f64 {
        self.w_conn * f64::from(l.active_connections) / self.conn_norm
            + self.w_files * f64::from(l.open_files) / self.files_norm
            + self.w_rate * l.bytes_rate as f64 / self.rate_norm
    }

    pub fn idle_threshold(&self) -> Duration {
        Duration::from_millis(u64::from(self.purge_idle_days) * DAY_MS)
    }

    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    /// Durations are in seconds.
    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        let mut p = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| PolicyError(format!("line {}: {m}", n + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            let f = || v.parse::<f64>().map_err(|_| err("bad number"));
            let u = || v.parse::<u64>().map_err(|_| err("bad integer"));
            match k {
                "w_conn" => p.w_conn = f()?,
                "w_files" => p.w_files = f()?,
                "w_rate" => p.w_rate = f()?,
                "conn_norm" => p.conn_norm = f()?,
                "files_norm" => p.files_norm = f()?,
                "rate_norm" => p.rate_norm = f()?,
                "replicate_threshold" => p.replicate_threshold = u()? as u32,
                "hot_load_threshold" => p.hot_load_threshold = f()?,
                "purge_idle_days" => p.purge_idle_days = u()? as u32,
                "high_pct" => p.high_pct = u()?.min(255) as u8,
                "low_pct" => p.low_pct = u()?.min(255) as u8,
                "window_s" => p.window = Duration::from_secs(u()?),
                "liveness_s" => p.liveness = Duration::from_secs(u()?),
                "replica_cap" => p.replica_cap = u()? as usize,
                _ => return Err(err("unknown key")),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        format!(
            "w_conn={}\nw_files={}\nw_rate={}\nconn_norm={}\nfiles_norm={}\nrate_norm={}\n\
             replicate_threshold={}\nhot_load_threshold={}\npurge_idle_days={}\nhigh_pct={}\n\
             low_pct={}\nwindow_s={}\nliveness_s={}\nreplica_cap={}\n",
            self.w_conn,
            self.w_files,
            self.w_rate,
            self.conn_norm,
            self.files_norm,
            self.rate_norm,
            self.replicate_threshold,
            self.hot_load_threshold,
            self.purge_idle_days,
            self.high_pct,
            self.low_pct,
            self.window.as_secs(),
            self.liveness.as_secs(),
            self.replica_cap,
        )
    }
}
