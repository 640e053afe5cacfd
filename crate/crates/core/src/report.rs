//! Session-log metrics: request totals, the session-length histogram,
//! per-length volume means, attack-category counts, and exploit capture.
//! Aggregation is a pure function of the logs; CSV and text renderings are
//! deterministic.

use std::collections::BTreeMap;
use std::path::Path;

use crate::attacker::CampaignLog;
use crate::evaluator::label_category;
use crate::store::{CloseReason, SessionRecord, StoreError};

/// Histogram buckets for session length: 1–6 exact, then everything ≥ 7.
pub const BUCKET_LABELS: [&str; 7] = ["1", "2", "3", "4", "5", "6", "7+"];

#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub bucket: &'static str,
    pub count: u64,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRow {
    pub session_length: u64,
    pub sessions: u64,
    /// Mean of volume_bytes (raw request bytes) over sessions of this length.
    pub mean_volume_bytes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRow {
    pub category: String,
    pub sessions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub total_sessions: u64,
    pub total_requests: u64,
    /// Distinct source IP addresses.
    pub distinct_peers: u64,
    pub histogram: Vec<BucketRow>,
    pub volume: Vec<VolumeRow>,
    /// Ground-truth attack categories; empty without a campaign log.
    pub categories: Vec<CategoryRow>,
    /// Sessions the honeypot closed as ExploitDetected.
    pub exploits_detected: u64,
    /// Exploits the ground truth says were actually delivered.
    pub exploits_sent: Option<u64>,
    /// exploits_detected / exploits_sent.
    pub capture_rate: Option<f64>,
    pub empty_log: bool,
}

pub fn bucket_index(session_length: u64) -> usize {
    (session_length.clamp(1, 7) - 1) as usize
}

/// Aggregate a session log (and optional attacker ground truth) into the
/// four metric families.
pub fn build_report(
    sessions: &[SessionRecord],
    ground_truth: Option<&CampaignLog>,
) -> MetricsReport {
    let total_sessions = sessions.len() as u64;
    let total_requests: u64 = sessions.iter().map(|s| s.session_length).sum();
    let distinct_peers = sessions
        .iter()
        .map(|s| s.peer_ip.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len() as u64;

    let mut counts = [0u64; 7];
    for session in sessions {
        counts[bucket_index(session.session_length)] += 1;
    }
    let histogram = BUCKET_LABELS
        .iter()
        .zip(counts)
        .map(|(label, count)| BucketRow {
            bucket: label,
            count,
            percentage: if total_sessions == 0 {
                0.0
            } else {
                count as f64 * 100.0 / total_sessions as f64
            },
        })
        .collect();

    let mut by_length: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for session in sessions {
        let (n, sum) = by_length.entry(session.session_length).or_insert((0, 0));
        *n += 1;
        *sum += session.volume_bytes;
    }
    let volume = by_length
        .into_iter()
        .map(|(session_length, (n, sum))| VolumeRow {
            session_length,
            sessions: n,
            mean_volume_bytes: sum as f64 / n as f64,
        })
        .collect();

    let categories = match ground_truth {
        Some(log) => {
            let mut by_category: BTreeMap<String, u64> = BTreeMap::new();
            for outcome in &log.outcomes {
                let name = label_category(&outcome.attack_label)
                    .map(|c| c.name().to_string())
                    .unwrap_or_else(|| "Unknown".to_string());
                *by_category.entry(name).or_insert(0) += 1;
            }
            by_category
                .into_iter()
                .map(|(category, sessions)| CategoryRow {
                    category,
                    sessions,
                })
                .collect()
        }
        None => Vec::new(),
    };

    let exploits_detected = sessions
        .iter()
        .filter(|s| s.closed_reason == CloseReason::ExploitDetected)
        .count() as u64;
    let exploits_sent =
        ground_truth.map(|log| log.outcomes.iter().filter(|o| o.exploit_sent).count() as u64);
    let capture_rate = exploits_sent.map(|sent| {
        if sent == 0 {
            0.0
        } else {
            exploits_detected as f64 / sent as f64
        }
    });

    MetricsReport {
        total_sessions,
        total_requests,
        distinct_peers,
        histogram,
        volume,
        categories,
        exploits_detected,
        exploits_sent,
        capture_rate,
        empty_log: sessions.is_empty(),
    }
}

impl MetricsReport {
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bucket,count,percentage\n");
        for row in &self.histogram {
            out.push_str(&format!("{},{},{}\n", row.bucket, row.count, row.percentage));
        }
        out
    }

    pub fn volume_csv(&self) -> String {
        // volume here is raw request bytes, and the header says so
        let mut out = String::from("session_length,sessions,mean_volume_raw_request_bytes\n");
        for row in &self.volume {
            out.push_str(&format!(
                "{},{},{}\n",
                row.session_length, row.sessions, row.mean_volume_bytes
            ));
        }
        out
    }

    pub fn categories_csv(&self) -> String {
        let mut out = String::from("category,sessions\n");
        for row in &self.categories {
            out.push_str(&format!("{},{}\n", row.category, row.sessions));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("total_sessions,{}\n", self.total_sessions));
        out.push_str(&format!("total_requests,{}\n", self.total_requests));
        out.push_str(&format!("distinct_peers,{}\n", self.distinct_peers));
        out.push_str(&format!("exploits_detected,{}\n", self.exploits_detected));
        if let Some(sent) = self.exploits_sent {
            out.push_str(&format!("exploits_sent,{sent}\n"));
        }
        if let Some(rate) = self.capture_rate {
            out.push_str(&format!("capture_rate,{rate}\n"));
        }
        out
    }

    pub fn text_summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "sessions: {}  requests: {}  distinct peers: {}\n",
            self.total_sessions, self.total_requests, self.distinct_peers
        ));
        out.push_str("session length histogram:\n");
        for row in &self.histogram {
            out.push_str(&format!(
                "  {:>2}: {:>6}  ({:.2}%)\n",
                row.bucket, row.count, row.percentage
            ));
        }
        out.push_str("mean volume by session length (raw request bytes):\n");
        for row in &self.volume {
            out.push_str(&format!(
                "  len {:>3}: {:>10.1} over {} sessions\n",
                row.session_length, row.mean_volume_bytes, row.sessions
            ));
        }
        if !self.categories.is_empty() {
            out.push_str("attack categories (ground truth):\n");
            for row in &self.categories {
                out.push_str(&format!("  {}: {}\n", row.category, row.sessions));
            }
        }
        out.push_str(&format!("exploits detected: {}", self.exploits_detected));
        if let (Some(sent), Some(rate)) = (self.exploits_sent, self.capture_rate) {
            out.push_str(&format!("  sent: {sent}  capture rate: {rate:.4}"));
        }
        out.push('\n');
        if self.empty_log {
            out.push_str("warning: empty session log, all metrics are zero\n");
        }
        out
    }

    /// Write histogram.csv, volume.csv, categories.csv, summary.csv, and
    /// summary.txt into the directory.
    pub fn write_files(&self, out_dir: &Path) -> Result<(), StoreError> {
        let write = |name: &str, text: String| -> Result<(), StoreError> {
            let path = out_dir.join(name);
            std::fs::write(&path, text).map_err(|e| StoreError::Io {
                path: path.clone(),
                source: e,
            })
        };
        write("histogram.csv", self.histogram_csv())?;
        write("volume.csv", self.volume_csv())?;
        write("categories.csv", self.categories_csv())?;
        write("summary.csv", self.summary_csv())?;
        write("summary.txt", self.text_summary())?;
        Ok(())
    }
}
