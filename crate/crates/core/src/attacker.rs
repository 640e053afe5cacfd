//! Deterministic attacker population reproducing the IoT attack life cycle:
//! scan, pre-check probes with expected-response verification, then the
//! exploit launch. Campaigns are seedable and emit a ground-truth log next
//! to whatever the honeypot records for itself.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::ResponseDoc;

#[derive(Debug, Error)]
pub enum AttackerError {
    #[error("invalid population: {0}")]
    InvalidSpec(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Connection-level failure reported by an endpoint.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct EndpointError(pub String);

/// Anything an attacker can talk to: the in-process engine wrapper or a
/// real TCP client.
pub trait Endpoint {
    fn exchange(
        &mut self,
        raw: &[u8],
        peer_ip: &str,
        peer_port: u16,
    ) -> Result<Vec<u8>, EndpointError>;
    /// The attacker hangs up; sessions close immediately on this signal.
    fn close_peer(&mut self, peer_ip: &str, peer_port: u16);
}

/// What the attacker expects of a probe's response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expect {
    StatusEquals(u16),
    BodyContains(String),
    Always,
    Never,
}

impl Expect {
    pub fn eval(&self, response: &[u8]) -> bool {
        match self {
            Expect::Always => true,
            Expect::Never => false,
            Expect::StatusEquals(want) => ResponseDoc::parse_status_and_body(response)
                .is_some_and(|(status, _)| status == *want),
            Expect::BodyContains(token) => ResponseDoc::parse_status_and_body(response)
                .is_some_and(|(_, body)| String::from_utf8_lossy(&body).contains(token)),
        }
    }
}

/// One pre-check: a raw request and the response that keeps the attacker
/// interested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStep {
    pub request: String,
    pub expect: Expect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerPolicy {
    pub policy_id: String,
    pub probes: Vec<ProbeStep>,
    /// Probability of quitting when a probe's expectation is unmet.
    pub quit_probability: f64,
    /// Raw exploit request; sent only when every probe expectation held.
    pub exploit: Option<String>,
    /// Extra sessions the attacker retries after quitting early.
    #[serde(default)]
    pub persistence: u64,
    /// Ground-truth label for category reporting (NSL-KDD label set).
    pub attack_label: String,
}

impl AttackerPolicy {
    pub fn validate(&self) -> Result<(), AttackerError> {
        if !(0.0..=1.0).contains(&self.quit_probability) {
            return Err(AttackerError::InvalidSpec(format!(
                "policy {}: quit_probability {} outside [0, 1]",
                self.policy_id, self.quit_probability
            )));
        }
        if let Some(payload) = &self.exploit {
            if payload.is_empty() {
                return Err(AttackerError::InvalidSpec(format!(
                    "policy {}: empty exploit payload",
                    self.policy_id
                )));
            }
        }
        Ok(())
    }
}

/// A weighted policy mix plus campaign-level knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub mix: Vec<(AttackerPolicy, f64)>,
    pub sessions: u64,
    pub seed: u64,
    /// Number of distinct synthetic source addresses to draw from.
    pub address_pool: u32,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), AttackerError> {
        if self.mix.is_empty() {
            return Err(AttackerError::InvalidSpec("empty policy mix".into()));
        }
        if self.sessions == 0 {
            return Err(AttackerError::InvalidSpec("sessions must be >= 1".into()));
        }
        if self.address_pool == 0 {
            return Err(AttackerError::InvalidSpec("address pool must be >= 1".into()));
        }
        for (policy, weight) in &self.mix {
            policy.validate()?;
            if *weight <= 0.0 || !weight.is_finite() {
                return Err(AttackerError::InvalidSpec(format!(
                    "policy {}: weight {} must be positive",
                    policy.policy_id, weight
                )));
            }
        }
        Ok(())
    }
}

/// Ground truth for one attacker session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_id: u64,
    pub policy_id: String,
    pub peer_ip: String,
    pub peer_port: u16,
    pub requests_sent: u64,
    pub exploit_sent: bool,
    /// Index of the first probe whose expectation failed, if any.
    pub failed_probe: Option<usize>,
    pub connection_error: bool,
    pub attack_label: String,
}

/// Run one attack life cycle against the endpoint. Probes go out in order;
/// an unmet expectation quits with `quit_probability` (one rng draw per
/// miss); the exploit fires only when every expectation held.
pub fn run_session<E: Endpoint>(
    policy: &AttackerPolicy,
    endpoint: &mut E,
    peer_ip: &str,
    peer_port: u16,
    rng: &mut impl Rng,
) -> SessionOutcome {
    let mut outcome = SessionOutcome {
        session_id: 0,
        policy_id: policy.policy_id.clone(),
        peer_ip: peer_ip.to_string(),
        peer_port,
        requests_sent: 0,
        exploit_sent: false,
        failed_probe: None,
        connection_error: false,
        attack_label: policy.attack_label.clone(),
    };
    let mut quit = false;
    for (i, probe) in policy.probes.iter().enumerate() {
        match endpoint.exchange(probe.request.as_bytes(), peer_ip, peer_port) {
            Ok(response) => {
                outcome.requests_sent += 1;
                if !probe.expect.eval(&response) {
                    if outcome.failed_probe.is_none() {
                        outcome.failed_probe = Some(i);
                    }
                    let draw: f64 = rng.random();
                    if draw < policy.quit_probability {
                        quit = true;
                        break;
                    }
                }
            }
            Err(_) => {
                outcome.connection_error = true;
                return outcome;
            }
        }
    }
    if !quit && outcome.failed_probe.is_none() {
        if let Some(payload) = &policy.exploit {
            match endpoint.exchange(payload.as_bytes(), peer_ip, peer_port) {
                Ok(_) => {
                    outcome.requests_sent += 1;
                    outcome.exploit_sent = true;
                }
                Err(_) => {
                    outcome.connection_error = true;
                    return outcome;
                }
            }
        }
    }
    endpoint.close_peer(peer_ip, peer_port);
    outcome
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignLog {
    pub outcomes: Vec<SessionOutcome>,
}

impl CampaignLog {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("session_id,policy_id,requests_sent,exploit_sent,attack_label\n");
        for o in &self.outcomes {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                o.session_id, o.policy_id, o.requests_sent, o.exploit_sent, o.attack_label
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), AttackerError> {
        std::fs::write(path, self.to_csv()).map_err(|e| AttackerError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

fn pick_weighted<'a>(
    mix: &'a [(AttackerPolicy, f64)],
    rng: &mut impl Rng,
) -> &'a AttackerPolicy {
    let total: f64 = mix.iter().map(|(_, w)| w).sum();
    let mut draw = rng.random_range(0.0..total);
    for (policy, weight) in mix {
        if draw < *weight {
            return policy;
        }
        draw -= weight;
    }
    &mix.last().expect("mix validated non-empty").0
}

fn pool_ip(index: u32) -> String {
    format!(
        "10.{}.{}.{}",
        (index >> 16) & 0xff,
        (index >> 8) & 0xff,
        index & 0xff
    )
}

/// Run `spec.sessions` attacker sessions. Each session gets its own rng
/// seeded from the master stream, so policy and address draws never depend
/// on what the honeypot answered. An attacker that quits early re-enters
/// (same policy and address) for up to `persistence` follow-up sessions,
/// all counted against the session budget. A connection error aborts the
/// campaign with the partial log.
pub fn run_campaign<E: Endpoint>(
    spec: &PopulationSpec,
    endpoint: &mut E,
) -> Result<CampaignLog, AttackerError> {
    spec.validate()?;
    let mut master = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut log = CampaignLog::default();
    // (policy index, ip, retries left) for an early quitter coming back
    let mut retry: Option<(usize, String, u64)> = None;
    for session_id in 1..=spec.sessions {
        let session_seed: u64 = master.random();
        let mut rng = ChaCha20Rng::seed_from_u64(session_seed);
        let (policy_idx, peer_ip) = match retry.take() {
            Some((idx, ip, left)) => {
                if left > 1 {
                    retry = Some((idx, ip.clone(), left - 1));
                }
                (idx, ip)
            }
            None => {
                let policy = pick_weighted(&spec.mix, &mut rng);
                let idx = spec
                    .mix
                    .iter()
                    .position(|(p, _)| std::ptr::eq(p, policy))
                    .expect("picked from mix");
                let ip = pool_ip(rng.random_range(0..spec.address_pool));
                (idx, ip)
            }
        };
        let policy = &spec.mix[policy_idx].0;
        let peer_port = 40000 + (session_id % 20000) as u16;
        let mut outcome = run_session(policy, endpoint, &peer_ip, peer_port, &mut rng);
        outcome.session_id = session_id;
        let aborted = outcome.connection_error;
        let quit_early = !aborted && outcome.failed_probe.is_some() && !outcome.exploit_sent;
        if quit_early && retry.is_none() && policy.persistence > 0 {
            retry = Some((policy_idx, peer_ip, policy.persistence));
        }
        log.outcomes.push(outcome);
        if aborted {
            break;
        }
    }
    Ok(log)
}

/// Read a policy mix from a line-delimited JSON file of
/// `{"policy": …, "weight": …}` documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyWeight {
    pub policy: AttackerPolicy,
    pub weight: f64,
}

pub fn load_mix(path: &Path) -> Result<Vec<(AttackerPolicy, f64)>, AttackerError> {
    let rows: Vec<PolicyWeight> =
        crate::store::read_jsonl(path).map_err(|e| AttackerError::InvalidSpec(e.to_string()))?;
    Ok(rows.into_iter().map(|r| (r.policy, r.weight)).collect())
}

pub fn save_mix(mix: &[(AttackerPolicy, f64)], path: &Path) -> Result<(), AttackerError> {
    let mut text = String::new();
    for (policy, weight) in mix {
        let row = PolicyWeight {
            policy: policy.clone(),
            weight: *weight,
        };
        text.push_str(&serde_json::to_string(&row).expect("policies serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| AttackerError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
