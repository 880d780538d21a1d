//! Output rendering: JSONL event log, per-hop metrics CSV, snapshot JSON.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::events::{HopRecord, HopStatus};
use super::world::RunOutput;

pub const EVENT_LOG: &str = "events.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SNAPSHOT_JSON: &str = "snapshot.json";

#[derive(Serialize)]
struct MetricsRow<'a> {
    origin_tx_id: &'a str,
    origin_chain: &'a str,
    kind: String,
    hop: u32,
    from: &'a str,
    to: &'a str,
    start_tick: u64,
    sent_tick: u64,
    decided_tick: Option<u64>,
    duration: Option<u64>,
    envelopes: u32,
    status: HopStatus,
    body_matches_origin: Option<bool>,
}

impl<'a> From<&'a HopRecord> for MetricsRow<'a> {
    fn from(h: &'a HopRecord) -> Self {
        MetricsRow {
            origin_tx_id: &h.origin_tx_id.0,
            origin_chain: h.origin_chain.as_str(),
            kind: format!("{:?}", h.kind),
            hop: h.hop,
            from: h.from.as_str(),
            to: h.to.as_str(),
            start_tick: h.start_tick,
            sent_tick: h.sent_tick,
            decided_tick: h.decided_tick,
            duration: h.duration(),
            envelopes: h.envelopes,
            status: h.status,
            body_matches_origin: h.body_matches_origin,
        }
    }
}

const HEADER: [&str; 13] = [
    "origin_tx_id",
    "origin_chain",
    "kind",
    "hop",
    "from",
    "to",
    "start_tick",
    "sent_tick",
    "decided_tick",
    "duration",
    "envelopes",
    "status",
    "body_matches_origin",
];

impl RunOutput {
    pub fn event_log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    /// One row per verification hop. The header is written even when no
    /// hop happened.
    pub fn metrics_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory csv write");
        for h in &self.hops {
            w.serialize(MetricsRow::from(h)).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
    }

    pub fn snapshot_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.snapshot).expect("snapshot serializes");
        s.push('\n');
        s
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(EVENT_LOG), self.event_log_jsonl())?;
        fs::write(dir.join(METRICS_CSV), self.metrics_csv())?;
        fs::write(dir.join(SNAPSHOT_JSON), self.snapshot_json())
    }
}
