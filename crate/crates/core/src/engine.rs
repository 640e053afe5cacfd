//! The honeypot decision engine: per-peer session tracking, scorer → RL
//! selection for known requests, the evaluator → farm path for OOV ones,
//! passive exploit detection, and online learning from closed sessions.
//!
//! The engine is transport-free: callers hand it raw request bytes, a peer
//! key, and the current clock, and get response bytes back. The TCP server
//! and the in-process simulator both sit on top of this seam.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::evaluator::{featurize_http, EvaluatorModel, SignatureList, Trust};
use crate::farm::{broadcast_local, forward_internet, DeviceFarm, FarmResponse};
use crate::normalize::{normalize, NormalizedRequest};
use crate::rl::{action_set, assign_rewards, QTable, RlError, TransitionCounts};
use crate::scorer::ScorerModel;
use crate::store::{
    CloseReason, NewRecord, RecordSource, ReqResStore, ResponseDoc, SessionLog, SessionRecord,
    StoreError, Transition,
};

/// How the engine picks among candidate actions for a known request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    /// ε-greedy over the learned Q-table (the adaptive honeypot).
    Adaptive,
    /// Uniform over the action set, no learning (comparison baseline).
    RandomSelect,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub idle_timeout_secs: u64,
    pub policy: SelectionPolicy,
    pub seed: u64,
    /// Served for malformed requests and whenever no stored or gathered
    /// response is available; every request gets exactly one response.
    pub default_response: ResponseDoc,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            idle_timeout_secs: 30,
            policy: SelectionPolicy::Adaptive,
            seed: 0,
            default_response: ResponseDoc::new(
                404,
                "Not Found",
                &[("Content-Type", "text/plain")],
                b"not found",
            ),
        }
    }
}

/// An open attacker conversation, keyed by (IP, port).
#[derive(Debug, Clone)]
pub struct LiveSession {
    pub peer_ip: String,
    pub peer_port: u16,
    pub transitions: Vec<Transition>,
    pub opened_at: u64,
    pub last_activity: u64,
    pub exploit_detected: bool,
}

/// What handle_request did, alongside the bytes to send back.
#[derive(Debug, Clone)]
pub struct HandledRequest {
    pub response: Vec<u8>,
    /// None when the request didn't parse.
    pub request_key: Option<String>,
    /// The request missed the scorer's known keys (or all actions were
    /// pruned) and went through the evaluator → farm path.
    pub oov: bool,
    /// Chosen action id; 0 when the reply came from the farm or default.
    pub action: u64,
    pub exploit: bool,
}

pub struct Engine {
    store: ReqResStore,
    session_log: SessionLog,
    scorer: ScorerModel,
    evaluator: Option<EvaluatorModel>,
    farm: DeviceFarm,
    qtable: QTable,
    counts: TransitionCounts,
    signatures: SignatureList,
    config: EngineConfig,
    live: BTreeMap<(String, u16), LiveSession>,
    rng: ChaCha20Rng,
    next_session_id: u64,
}

impl Engine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: ReqResStore,
        session_log: SessionLog,
        scorer: ScorerModel,
        evaluator: Option<EvaluatorModel>,
        farm: DeviceFarm,
        qtable: QTable,
        signatures: SignatureList,
        config: EngineConfig,
    ) -> Engine {
        let next_session_id = session_log.len() as u64 + 1;
        let rng = ChaCha20Rng::seed_from_u64(config.seed);
        Engine {
            store,
            session_log,
            scorer,
            evaluator,
            farm,
            qtable,
            counts: TransitionCounts::new(),
            signatures,
            config,
            live: BTreeMap::new(),
            rng,
            next_session_id,
        }
    }

    pub fn store(&self) -> &ReqResStore {
        &self.store
    }

    pub fn session_log(&self) -> &SessionLog {
        &self.session_log
    }

    pub fn qtable(&self) -> &QTable {
        &self.qtable
    }

    pub fn counts(&self) -> &TransitionCounts {
        &self.counts
    }

    pub fn live_sessions(&self) -> usize {
        self.live.len()
    }

    /// The full pipeline for one incoming request. Always yields a response;
    /// malformed requests get the default and touch no session state.
    pub fn handle_request(
        &mut self,
        raw: &[u8],
        peer_ip: &str,
        peer_port: u16,
        now: u64,
    ) -> HandledRequest {
        let request = match normalize(raw) {
            Ok(r) => r,
            Err(_) => {
                return HandledRequest {
                    response: self.config.default_response.to_bytes(),
                    request_key: None,
                    oov: false,
                    action: 0,
                    exploit: false,
                }
            }
        };
        let exploit = self.signatures.matches(raw);

        let (response, action, response_record, oov) =
            match self.pick_response(&request, raw, now) {
                Ok(parts) => parts,
                Err(_) => (self.config.default_response.clone(), 0, 0, true),
            };

        let key = (peer_ip.to_string(), peer_port);
        let session = self.live.entry(key).or_insert_with(|| LiveSession {
            peer_ip: peer_ip.to_string(),
            peer_port,
            transitions: Vec::new(),
            opened_at: now,
            last_activity: now,
            exploit_detected: false,
        });
        session.transitions.push(Transition {
            state: request.request_key.clone(),
            action,
            request_bytes: raw.len() as u64,
            response_record,
            timestamp: now,
        });
        session.last_activity = now;
        if exploit {
            session.exploit_detected = true;
        }

        HandledRequest {
            response: response.to_bytes(),
            request_key: Some(request.request_key),
            oov,
            action,
            exploit,
        }
    }

    /// (response, action, served record id, went-OOV)
    fn pick_response(
        &mut self,
        request: &NormalizedRequest,
        raw: &[u8],
        now: u64,
    ) -> Result<(ResponseDoc, u64, u64, bool), StoreError> {
        if self.scorer.knows_key(&request.request_key) {
            let candidates = self.scorer.score_candidates(request);
            let actions = action_set(&candidates, self.qtable.params.threshold);
            let pairs: Vec<(u64, f64)> = actions
                .iter()
                .map(|a| {
                    let prob = candidates
                        .iter()
                        .find(|c| c.action == *a)
                        .map(|c| c.probability)
                        .unwrap_or(0.0);
                    (*a, prob)
                })
                .collect();
            let chosen = match self.config.policy {
                SelectionPolicy::Adaptive => {
                    self.qtable
                        .select_action(&request.request_key, &pairs, &mut self.rng)
                }
                SelectionPolicy::RandomSelect if pairs.is_empty() => {
                    Err(RlError::AllActionsPruned)
                }
                SelectionPolicy::RandomSelect => {
                    let idx = self.rng.random_range(0..pairs.len());
                    Ok(pairs[idx].0)
                }
            };
            match chosen {
                Ok(action) => {
                    if let Some(record) = self.store.get(action) {
                        return Ok((record.response.clone(), action, action, false));
                    }
                    // stale scorer snapshot: the id is not in this store
                    return Ok((self.config.default_response.clone(), 0, 0, false));
                }
                // everything pruned for this state: fall through to the
                // OOV path so the farm can produce fresh material
                Err(RlError::AllActionsPruned) => {}
                Err(_) => return Ok((self.config.default_response.clone(), 0, 0, false)),
            }
        }

        // OOV path: remember the unseen request, then consult the farm
        self.store.append_record(NewRecord {
            request_key: request.request_key.clone(),
            response: ResponseDoc::empty(),
            source: RecordSource::Pending,
            device_id: None,
            created_at: now,
        })?;
        let trusted = match &self.evaluator {
            Some(model) => {
                let features = featurize_http(request, raw, &self.signatures);
                matches!(model.classify(&features), Ok(Trust::Trusted))
            }
            // no trained evaluator: trust exactly the requests that carry
            // no known exploit pattern
            None => !self.signatures.matches(raw),
        };
        let gathered = if trusted {
            broadcast_local(&self.farm, request, &mut self.store, now)?
        } else {
            forward_internet(&self.farm, request, &mut self.store, &mut self.rng, now)?
        };
        match self.best_farm_response(&request.request_key, &gathered) {
            Some(best) => Ok((best.response.clone(), 0, best.record_id, true)),
            None => Ok((self.config.default_response.clone(), 0, 0, true)),
        }
    }

    /// Highest post-hoc scorer similarity between the request key and the
    /// response body; ties go to the smallest device_id.
    fn best_farm_response<'a>(
        &self,
        request_key: &str,
        gathered: &'a [FarmResponse],
    ) -> Option<&'a FarmResponse> {
        let mut best: Option<(&FarmResponse, f64)> = None;
        for candidate in gathered {
            let body = String::from_utf8_lossy(&candidate.response.body);
            let similarity = self.scorer.text_similarity(request_key, &body);
            let better = match best {
                None => true,
                Some((current, best_sim)) => {
                    similarity > best_sim
                        || (similarity == best_sim && candidate.device_id < current.device_id)
                }
            };
            if better {
                best = Some((candidate, similarity));
            }
        }
        best.map(|(candidate, _)| candidate)
    }

    /// Convert every live session past its idle deadline into a closed
    /// SessionRecord, persist it, and learn from it.
    pub fn close_idle_sessions(&mut self, now: u64) -> Result<Vec<SessionRecord>, StoreError> {
        let timeout = self.config.idle_timeout_secs;
        let expired: Vec<(String, u16)> = self
            .live
            .iter()
            .filter(|(_, s)| now > s.last_activity + timeout)
            .map(|(k, _)| k.clone())
            .collect();
        let mut closed = Vec::with_capacity(expired.len());
        for key in expired {
            let session = self.live.remove(&key).expect("key collected above");
            closed.push(self.close_session(session, CloseReason::IdleTimeout)?);
        }
        Ok(closed)
    }

    /// The peer hung up; close its session immediately if one is open.
    pub fn peer_closed(
        &mut self,
        peer_ip: &str,
        peer_port: u16,
        _now: u64,
    ) -> Result<Option<SessionRecord>, StoreError> {
        match self.live.remove(&(peer_ip.to_string(), peer_port)) {
            Some(session) => Ok(Some(self.close_session(session, CloseReason::PeerClose)?)),
            None => Ok(None),
        }
    }

    /// Force-close everything still live (server shutdown).
    pub fn shutdown(&mut self, _now: u64) -> Result<Vec<SessionRecord>, StoreError> {
        let keys: Vec<(String, u16)> = self.live.keys().cloned().collect();
        let mut closed = Vec::with_capacity(keys.len());
        for key in keys {
            let session = self.live.remove(&key).expect("key collected above");
            closed.push(self.close_session(session, CloseReason::PeerClose)?);
        }
        Ok(closed)
    }

    /// Rebuild a Q-table (and transition counts) from a persisted session log.
    ///
    /// Replays exactly what online learning did: each transition whose state
    /// the scorer knows re-seeds that state's action set with the scorer
    /// probabilities (seeding is idempotent and time-independent, so doing it
    /// per session preserves the live first-touch values), then the session's
    /// credited rewards are applied and ε decayed, in log order.
    pub fn replay_log(
        scorer: &ScorerModel,
        sessions: &[SessionRecord],
        params: crate::rl::RlParams,
    ) -> Result<(QTable, TransitionCounts), RlError> {
        let mut qtable = QTable::new(params)?;
        let mut counts = TransitionCounts::new();
        for session in sessions {
            for transition in &session.transitions {
                if !scorer.knows_key(&transition.state) {
                    continue;
                }
                let candidates = scorer.score_key(&transition.state);
                for action in action_set(&candidates, qtable.params.threshold) {
                    let prob = candidates
                        .iter()
                        .find(|c| c.action == action)
                        .map(|c| c.probability)
                        .unwrap_or(0.0);
                    qtable.seed(&transition.state, action, prob);
                }
            }
            let rewards = assign_rewards(session, &qtable.params);
            qtable.replay_session(&mut counts, &rewards);
            qtable.decay_epsilon();
        }
        Ok((qtable, counts))
    }

    fn close_session(
        &mut self,
        session: LiveSession,
        default_reason: CloseReason,
    ) -> Result<SessionRecord, StoreError> {
        let reason = if session.exploit_detected {
            CloseReason::ExploitDetected
        } else {
            default_reason
        };
        let record = SessionRecord::close(
            self.next_session_id,
            session.peer_ip,
            session.peer_port,
            session.transitions,
            reason,
        );
        self.next_session_id += 1;
        self.session_log.append_session(record.clone())?;
        if self.config.policy == SelectionPolicy::Adaptive {
            let rewards = assign_rewards(&record, &self.qtable.params);
            self.qtable.replay_session(&mut self.counts, &rewards);
            self.qtable.decay_epsilon();
        }
        Ok(record)
    }
}
