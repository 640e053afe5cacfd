//! Emulated IoT device farm: in-process responders that answer OOV requests.
//!
//! Trusted requests are broadcast to every local device; Untrusted requests
//! are forwarded to the simulated internet-exposed devices, where a seeded
//! per-device delay is drawn and compared against the farm timeout. Every
//! gathered response is appended to the datastore with its provenance.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::NormalizedRequest;
use crate::store::{read_jsonl, NewRecord, RecordSource, ReqResStore, ResponseDoc, StoreError};

#[derive(Debug, Error)]
pub enum FarmError {
    #[error("duplicate device_id {0:?}")]
    DuplicateDeviceId(String),
    #[error("device {device_id}: empty delay range {min_ms}..{max_ms}")]
    BadDelayRange {
        device_id: String,
        min_ms: u64,
        max_ms: u64,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A stored response with `{1}`, `{2}`, … placeholders standing for the
/// route's wildcard captures, substitutable in header values and body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTemplate {
    pub status: u16,
    pub reason: String,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default)]
    pub body: String,
}

impl ResponseTemplate {
    pub fn render(&self, captures: &[String]) -> ResponseDoc {
        let fill = |text: &str| {
            let mut out = text.to_string();
            for (i, cap) in captures.iter().enumerate() {
                out = out.replace(&format!("{{{}}}", i + 1), cap);
            }
            out
        };
        let headers: Vec<(String, String)> = self
            .headers
            .iter()
            .map(|(name, value)| (name.clone(), fill(value)))
            .collect();
        let header_refs: Vec<(&str, &str)> = headers
            .iter()
            .map(|(n, v)| (n.as_str(), v.as_str()))
            .collect();
        ResponseDoc::new(self.status, &self.reason, &header_refs, fill(&self.body).as_bytes())
    }
}

/// One routing rule: exact method plus a path pattern whose `*` segments
/// each match (and capture) a single path segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub method: String,
    pub pattern: String,
    pub template: ResponseTemplate,
}

impl Route {
    /// Segment-wise match; returns the wildcard captures in order.
    pub fn matches(&self, method: &str, path: &str) -> Option<Vec<String>> {
        if !self.method.eq_ignore_ascii_case(method) {
            return None;
        }
        let pattern: Vec<&str> = self.pattern.split('/').collect();
        let segments: Vec<&str> = path.split('/').collect();
        if pattern.len() != segments.len() {
            return None;
        }
        let mut captures = Vec::new();
        for (p, s) in pattern.iter().zip(&segments) {
            if *p == "*" {
                if s.is_empty() {
                    return None;
                }
                captures.push(s.to_string());
            } else if p != s {
                return None;
            }
        }
        Some(captures)
    }
}

/// Uniform response delay bounds in milliseconds, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DelayParams {
    pub min_ms: u64,
    pub max_ms: u64,
}

impl DelayParams {
    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        rng.random_range(self.min_ms..=self.max_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub vendor: String,
    #[serde(default)]
    pub routes: Vec<Route>,
    pub default_response: ResponseTemplate,
    #[serde(default)]
    pub delay: DelayParams,
}

/// First matching route's template, rendered; otherwise the profile default.
/// Pure in (profile, request).
pub fn respond(profile: &DeviceProfile, request: &NormalizedRequest) -> ResponseDoc {
    for route in &profile.routes {
        if let Some(captures) = route.matches(&request.method, &request.path) {
            return route.template.render(&captures);
        }
    }
    profile.default_response.render(&[])
}

#[derive(Debug, Clone)]
pub struct DeviceFarm {
    pub local: Vec<DeviceProfile>,
    pub internet: Vec<DeviceProfile>,
    pub timeout_ms: u64,
}

impl DeviceFarm {
    pub fn new(
        local: Vec<DeviceProfile>,
        internet: Vec<DeviceProfile>,
        timeout_ms: u64,
    ) -> Result<DeviceFarm, FarmError> {
        let mut seen = std::collections::BTreeSet::new();
        for profile in local.iter().chain(&internet) {
            if !seen.insert(profile.device_id.as_str()) {
                return Err(FarmError::DuplicateDeviceId(profile.device_id.clone()));
            }
            if profile.delay.min_ms > profile.delay.max_ms {
                return Err(FarmError::BadDelayRange {
                    device_id: profile.device_id.clone(),
                    min_ms: profile.delay.min_ms,
                    max_ms: profile.delay.max_ms,
                });
            }
        }
        Ok(DeviceFarm {
            local,
            internet,
            timeout_ms,
        })
    }

    /// Load profiles from line-delimited JSON files (one profile per line).
    pub fn load(
        local_path: &Path,
        internet_path: &Path,
        timeout_ms: u64,
    ) -> Result<DeviceFarm, FarmError> {
        let local = read_jsonl(local_path)?;
        let internet = read_jsonl(internet_path)?;
        DeviceFarm::new(local, internet, timeout_ms)
    }
}

pub fn save_profiles(profiles: &[DeviceProfile], path: &Path) -> Result<(), StoreError> {
    let mut text = String::new();
    for profile in profiles {
        text.push_str(&serde_json::to_string(profile).expect("profiles serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// A gathered device answer, already persisted as `record_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmResponse {
    pub device_id: String,
    pub record_id: u64,
    pub response: ResponseDoc,
}

/// One response per local device, each appended with source LocalBroadcast.
pub fn broadcast_local(
    farm: &DeviceFarm,
    request: &NormalizedRequest,
    store: &mut ReqResStore,
    now: u64,
) -> Result<Vec<FarmResponse>, StoreError> {
    let mut out = Vec::with_capacity(farm.local.len());
    for profile in &farm.local {
        let response = respond(profile, request);
        let record_id = store.append_record(NewRecord {
            request_key: request.request_key.clone(),
            response: response.clone(),
            source: RecordSource::LocalBroadcast,
            device_id: Some(profile.device_id.clone()),
            created_at: now,
        })?;
        out.push(FarmResponse {
            device_id: profile.device_id.clone(),
            record_id,
            response,
        });
    }
    Ok(out)
}

/// Responses from internet devices whose sampled delay fits the timeout;
/// one delay is drawn per device in profile order regardless of outcome,
/// so the consumed random stream is a pure function of the farm.
pub fn forward_internet(
    farm: &DeviceFarm,
    request: &NormalizedRequest,
    store: &mut ReqResStore,
    rng: &mut impl Rng,
    now: u64,
) -> Result<Vec<FarmResponse>, StoreError> {
    let mut out = Vec::new();
    for profile in &farm.internet {
        let delay_ms = profile.delay.sample(rng);
        if delay_ms > farm.timeout_ms {
            continue;
        }
        let response = respond(profile, request);
        let record_id = store.append_record(NewRecord {
            request_key: request.request_key.clone(),
            response: response.clone(),
            source: RecordSource::InternetForward,
            device_id: Some(profile.device_id.clone()),
            created_at: now,
        })?;
        out.push(FarmResponse {
            device_id: profile.device_id.clone(),
            record_id,
            response,
        });
    }
    Ok(out)
}
