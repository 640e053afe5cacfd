//! In-process experiment harness: a virtual-clock endpoint wrapping the
//! engine, plus orchestration that assembles the synthetic fixtures, runs a
//! campaign against them, and hands back every artifact the reports need.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::attacker::{
    run_campaign, AttackerError, AttackerPolicy, CampaignLog, Endpoint, EndpointError,
    PopulationSpec,
};
use crate::engine::{Engine, EngineConfig, SelectionPolicy};
use crate::evaluator::{
    featurize_http, train_svm, EvaluatorError, EvaluatorModel, FeatureSchema, TrainConfig,
};
use crate::normalize::normalize;
use crate::rl::{QTable, RlError, RlParams};
use crate::scorer::{train_scorer, ScorerConfig, ScorerError};
use crate::store::{ReqResStore, SessionLog, StoreError};
use crate::synth;

/// Virtual-clock origin for simulated runs.
pub const CLOCK_BASE: u64 = 1_700_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Attacker(#[from] AttackerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error(transparent)]
    Rl(#[from] RlError),
}

/// Drives an [`Engine`] through the attacker [`Endpoint`] trait, advancing a
/// virtual clock one second per event so idle logic stays testable without
/// wall time.
pub struct InProcEndpoint {
    engine: Engine,
    now: u64,
    fault: Option<String>,
}

impl InProcEndpoint {
    pub fn new(engine: Engine) -> Self {
        InProcEndpoint {
            engine,
            now: CLOCK_BASE,
            fault: None,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn into_engine(self) -> Engine {
        self.engine
    }
}

impl Endpoint for InProcEndpoint {
    fn exchange(
        &mut self,
        raw: &[u8],
        peer_ip: &str,
        peer_port: u16,
    ) -> Result<Vec<u8>, EndpointError> {
        if let Some(message) = &self.fault {
            return Err(EndpointError(message.clone()));
        }
        self.now += 1;
        Ok(self
            .engine
            .handle_request(raw, peer_ip, peer_port, self.now)
            .response)
    }

    fn close_peer(&mut self, peer_ip: &str, peer_port: u16) {
        self.now += 1;
        // a close that cannot persist poisons the endpoint; the campaign
        // sees it as a connection error on the next exchange
        if let Err(e) = self.engine.peer_closed(peer_ip, peer_port, self.now) {
            self.fault.get_or_insert(e.to_string());
        }
    }
}

/// Everything a finished run leaves behind.
pub struct ExperimentRun {
    pub engine: Engine,
    pub campaign: CampaignLog,
}

/// Run `sessions` attacker sessions against an assembled engine. Any session
/// the campaign leaves open (it normally hangs up every peer) is force-closed
/// before returning so the log is complete.
pub fn run_experiment(
    engine: Engine,
    mix: Vec<(AttackerPolicy, f64)>,
    sessions: u64,
    campaign_seed: u64,
    address_pool: u32,
) -> Result<ExperimentRun, SimError> {
    let spec = PopulationSpec {
        mix,
        sessions,
        seed: campaign_seed,
        address_pool,
    };
    let mut endpoint = InProcEndpoint::new(engine);
    let campaign = run_campaign(&spec, &mut endpoint)?;
    let shutdown_at = endpoint.now() + 1;
    let mut engine = endpoint.into_engine();
    engine.shutdown(shutdown_at)?;
    Ok(ExperimentRun { engine, campaign })
}

/// Settings for a self-contained synthetic run.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub policy: SelectionPolicy,
    pub seed: u64,
    pub sessions: u64,
    pub address_pool: u32,
    pub rl: RlParams,
    pub scorer: ScorerConfig,
}

impl ExperimentSpec {
    pub fn new(policy: SelectionPolicy, seed: u64, sessions: u64) -> Self {
        ExperimentSpec {
            policy,
            seed,
            sessions,
            address_pool: 64,
            rl: RlParams::default(),
            scorer: ScorerConfig::default(),
        }
    }
}

/// Split one experiment seed into independent engine and campaign streams.
pub fn derive_seeds(seed: u64) -> (u64, u64) {
    let mut root = ChaCha20Rng::seed_from_u64(seed);
    (root.random(), root.random())
}

/// The evaluator used by synthetic runs; trained on a fixed corpus so the
/// adaptive and baseline arms of an experiment share one classifier.
pub fn synthetic_evaluator() -> Result<EvaluatorModel, EvaluatorError> {
    let signatures = synth::signatures();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (raw, is_attack) in synth::http_training_set(400, 5) {
        let request = normalize(&raw).expect("synthetic requests are well-formed");
        features.push(featurize_http(&request, &raw, &signatures));
        labels.push(is_attack);
    }
    train_svm(
        &features,
        &labels,
        FeatureSchema::HttpHeuristic,
        &TrainConfig::default(),
    )
}

/// Assemble an engine over the synthetic fixtures, optionally persisting the
/// store and session log to the given sinks.
pub fn synthetic_engine(
    spec: &ExperimentSpec,
    store: ReqResStore,
    session_log: SessionLog,
) -> Result<Engine, SimError> {
    let scorer = train_scorer(store.records(), &spec.scorer)?;
    let evaluator = synthetic_evaluator()?;
    let qtable = QTable::new(spec.rl)?;
    let (engine_seed, _) = derive_seeds(spec.seed);
    let config = EngineConfig {
        policy: spec.policy,
        seed: engine_seed,
        ..EngineConfig::default()
    };
    Ok(Engine::new(
        store,
        session_log,
        scorer,
        Some(evaluator),
        synth::farm(),
        qtable,
        synth::signatures(),
        config,
    ))
}

/// A complete synthetic experiment: seed corpus, default population, and a
/// campaign of `spec.sessions` sessions. Identical specs yield identical
/// artifacts, byte for byte.
pub fn run_synthetic(spec: &ExperimentSpec) -> Result<ExperimentRun, SimError> {
    let engine = synthetic_engine(spec, synth::seed_store(), SessionLog::in_memory())?;
    let (_, campaign_seed) = derive_seeds(spec.seed);
    run_experiment(
        engine,
        synth::population(),
        spec.sessions,
        campaign_seed,
        spec.address_pool,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::CloseReason;

    fn sessions_jsonl(run: &ExperimentRun) -> String {
        run.engine
            .session_log()
            .sessions()
            .iter()
            .map(|s| serde_json::to_string(s).unwrap())
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn every_campaign_session_reaches_the_log() {
        let spec = ExperimentSpec::new(SelectionPolicy::Adaptive, 11, 40);
        let run = run_synthetic(&spec).unwrap();
        assert_eq!(run.campaign.outcomes.len(), 40);
        assert_eq!(run.engine.session_log().len(), 40);
        assert_eq!(run.engine.live_sessions(), 0);
    }

    #[test]
    fn session_lengths_match_requests_sent() {
        let spec = ExperimentSpec::new(SelectionPolicy::Adaptive, 3, 60);
        let run = run_synthetic(&spec).unwrap();
        // campaign outcomes are ordered by session id; the engine log closes
        // sessions in the same order because every attacker hangs up before
        // the next one connects
        for (outcome, record) in run
            .campaign
            .outcomes
            .iter()
            .zip(run.engine.session_log().sessions())
        {
            assert_eq!(outcome.session_id, record.session_id);
            assert_eq!(outcome.requests_sent, record.session_length);
            assert_eq!(outcome.peer_ip, record.peer_ip);
        }
    }

    #[test]
    fn exploit_sessions_close_as_detected() {
        let spec = ExperimentSpec::new(SelectionPolicy::Adaptive, 7, 80);
        let run = run_synthetic(&spec).unwrap();
        for (outcome, record) in run
            .campaign
            .outcomes
            .iter()
            .zip(run.engine.session_log().sessions())
        {
            if outcome.exploit_sent {
                assert_eq!(record.closed_reason, CloseReason::ExploitDetected);
            } else {
                assert_eq!(record.closed_reason, CloseReason::PeerClose);
            }
        }
    }

    #[test]
    fn equal_seeds_reproduce_artifacts_byte_for_byte() {
        let spec = ExperimentSpec::new(SelectionPolicy::Adaptive, 42, 50);
        let a = run_synthetic(&spec).unwrap();
        let b = run_synthetic(&spec).unwrap();
        assert_eq!(a.campaign.to_csv(), b.campaign.to_csv());
        assert_eq!(sessions_jsonl(&a), sessions_jsonl(&b));
        assert_eq!(a.engine.qtable(), b.engine.qtable());
    }

    #[test]
    fn different_seeds_diverge() {
        let a = run_synthetic(&ExperimentSpec::new(SelectionPolicy::Adaptive, 1, 50)).unwrap();
        let b = run_synthetic(&ExperimentSpec::new(SelectionPolicy::Adaptive, 2, 50)).unwrap();
        assert_ne!(sessions_jsonl(&a), sessions_jsonl(&b));
    }

    #[test]
    fn baseline_never_touches_the_qtable() {
        let spec = ExperimentSpec::new(SelectionPolicy::RandomSelect, 9, 60);
        let run = run_synthetic(&spec).unwrap();
        assert_eq!(run.engine.qtable().len(), 0);
        assert_eq!(run.engine.session_log().len(), 60);
    }

    #[test]
    fn virtual_clock_advances_monotonically() {
        let spec = ExperimentSpec::new(SelectionPolicy::Adaptive, 13, 30);
        let run = run_synthetic(&spec).unwrap();
        let mut last = CLOCK_BASE;
        for session in run.engine.session_log().sessions() {
            for t in &session.transitions {
                assert!(t.timestamp > last, "timestamps strictly increase");
                last = t.timestamp;
            }
        }
    }

    #[test]
    fn ground_truth_is_response_independent() {
        // the same seed under the two selection policies must assign the
        // same policy and source address to every session id
        let adaptive =
            run_synthetic(&ExperimentSpec::new(SelectionPolicy::Adaptive, 21, 80)).unwrap();
        let baseline =
            run_synthetic(&ExperimentSpec::new(SelectionPolicy::RandomSelect, 21, 80)).unwrap();
        for (a, b) in adaptive
            .campaign
            .outcomes
            .iter()
            .zip(baseline.campaign.outcomes.iter())
        {
            assert_eq!(a.session_id, b.session_id);
            assert_eq!(a.policy_id, b.policy_id);
            assert_eq!(a.peer_ip, b.peer_ip);
            assert_eq!(a.attack_label, b.attack_label);
        }
    }
}
