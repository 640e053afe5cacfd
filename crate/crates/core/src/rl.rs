//! Tabular Q-learning over normalized request states and stored-response
//! actions: action-set construction with the scorer threshold, ε-greedy
//! selection seeded by scorer probabilities, session-length rewards,
//! reverse-order replay of closed sessions, empirical transition counting,
//! and negative-reward pruning.

use std::collections::BTreeMap;
use std::ops::Bound::Included;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorer::ScoredCandidate;
use crate::store::{CloseReason, SessionRecord, StoreError};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("every candidate action for this state is pruned")]
    AllActionsPruned,
    #[error("no observations recorded for this state/action pair")]
    NoObservations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Starting exploration rate; the live rate decays per closed session.
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Scorer match threshold for action-set membership.
    pub threshold: f64,
    pub prune_threshold: f64,
    pub prune_min_visits: u64,
    pub exploit_bonus: f64,
    pub exploit_bonus_enabled: bool,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams {
            alpha: 0.3,
            gamma: 0.9,
            epsilon: 0.3,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
            threshold: 0.5,
            prune_threshold: -0.5,
            prune_min_visits: 3,
            exploit_bonus: 10.0,
            exploit_bonus_enabled: true,
        }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(RlError::InvalidParams(format!("alpha {} not in (0,1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(RlError::InvalidParams(format!("gamma {} not in [0,1)", self.gamma)));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("epsilon_decay", self.epsilon_decay),
            ("epsilon_min", self.epsilon_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(RlError::InvalidParams(format!("{name} {v} not in [0,1]")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(RlError::InvalidParams(format!(
                "threshold {} not in (0,1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub q: f64,
    pub visits: u64,
    pub pruned: bool,
}

/// The Q lookup table plus its live exploration rate.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    entries: BTreeMap<(String, u64), QEntry>,
    pub epsilon: f64,
    pub params: RlParams,
}

/// One credited transition of a closed session; `next == None` is the
/// terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardedTransition {
    pub state: String,
    pub action: u64,
    pub reward: f64,
    pub next: Option<String>,
}

/// Empirical transition counts C(s, a, s'); `None` keys count terminal ends.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionCounts {
    counts: BTreeMap<(String, u64), BTreeMap<Option<String>, u64>>,
}

impl TransitionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&mut self, state: &str, action: u64, next: Option<&str>) {
        *self
            .counts
            .entry((state.to_string(), action))
            .or_default()
            .entry(next.map(str::to_string))
            .or_default() += 1;
    }

    /// T(s,a,·) as exact observed frequencies.
    pub fn estimate(&self, state: &str, action: u64) -> Result<Vec<(Option<String>, f64)>, RlError> {
        let per_next = self
            .counts
            .get(&(state.to_string(), action))
            .ok_or(RlError::NoObservations)?;
        let total: u64 = per_next.values().sum();
        if total == 0 {
            return Err(RlError::NoObservations);
        }
        Ok(per_next
            .iter()
            .map(|(next, c)| (next.clone(), *c as f64 / total as f64))
            .collect())
    }

    pub fn observed_pairs(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|((s, a), _)| (s.as_str(), *a))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Actions whose scorer match clears the threshold; when none do but the
/// scorer returned candidates, fall back to the single top-probability one.
/// An empty scored list stays empty (the OOV path).
pub fn action_set(scored: &[ScoredCandidate], threshold: f64) -> Vec<u64> {
    let passing: Vec<u64> = scored
        .iter()
        .filter(|c| c.match_strength >= threshold)
        .map(|c| c.action)
        .collect();
    if !passing.is_empty() {
        return passing;
    }
    scored
        .iter()
        .max_by(|a, b| {
            a.probability
                .partial_cmp(&b.probability)
                .unwrap()
                .then(b.action.cmp(&a.action))
        })
        .map(|c| c.action)
        .into_iter()
        .collect()
}

/// Credit a closed session of length L: every non-final transition earns +L
/// with the next request's state as successor; the final transition earns −1
/// into the terminal state, or +L+B when the session ended in a detected
/// exploit and the bonus is enabled.
pub fn assign_rewards(session: &SessionRecord, params: &RlParams) -> Vec<RewardedTransition> {
    let length = session.transitions.len();
    let l = length as f64;
    session
        .transitions
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i + 1 < length {
                RewardedTransition {
                    state: t.state.clone(),
                    action: t.action,
                    reward: l,
                    next: Some(session.transitions[i + 1].state.clone()),
                }
            } else {
                let exploited = session.closed_reason == CloseReason::ExploitDetected;
                let reward = if exploited && params.exploit_bonus_enabled {
                    l + params.exploit_bonus
                } else {
                    -1.0
                };
                RewardedTransition {
                    state: t.state.clone(),
                    action: t.action,
                    reward,
                    next: None,
                }
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct QEntryRow {
    state: String,
    action: u64,
    q: f64,
    visits: u64,
    pruned: bool,
}

#[derive(Serialize, Deserialize)]
struct QTableSnapshot {
    params: RlParams,
    epsilon: f64,
    entries: Vec<QEntryRow>,
}

const SNAPSHOT_KIND: &str = "qtable";

impl QTable {
    pub fn new(params: RlParams) -> Result<Self, RlError> {
        params.validate()?;
        Ok(QTable {
            entries: BTreeMap::new(),
            epsilon: params.epsilon,
            params,
        })
    }

    pub fn entry(&self, state: &str, action: u64) -> Option<&QEntry> {
        self.entries.get(&(state.to_string(), action))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64, &QEntry)> {
        self.entries.iter().map(|((s, a), e)| (s.as_str(), *a, e))
    }

    /// Initialize a fresh (state, action) pair with the scorer probability;
    /// existing entries are left alone.
    pub fn seed(&mut self, state: &str, action: u64, initial_q: f64) {
        self.entries
            .entry((state.to_string(), action))
            .or_insert(QEntry {
                q: initial_q,
                visits: 0,
                pruned: false,
            });
    }

    fn max_unpruned(&self, state: &str) -> f64 {
        self.entries
            .range((
                Included((state.to_string(), u64::MIN)),
                Included((state.to_string(), u64::MAX)),
            ))
            .filter(|(_, e)| !e.pruned)
            .map(|(_, e)| e.q)
            .fold(None, |acc: Option<f64>, q| {
                Some(acc.map_or(q, |m| m.max(q)))
            })
            .unwrap_or(0.0)
    }

    /// ε-greedy selection over the candidate actions. Each candidate comes
    /// with its scorer probability, used to seed unseen pairs. Consumes one
    /// rng draw for the explore/exploit branch and, when exploring, one more
    /// for the uniform index.
    pub fn select_action<R: Rng + ?Sized>(
        &mut self,
        state: &str,
        candidates: &[(u64, f64)],
        rng: &mut R,
    ) -> Result<u64, RlError> {
        for (action, prob) in candidates {
            self.seed(state, *action, *prob);
        }
        let mut live: Vec<u64> = candidates
            .iter()
            .map(|(a, _)| *a)
            .filter(|a| {
                self.entries
                    .get(&(state.to_string(), *a))
                    .is_none_or(|e| !e.pruned)
            })
            .collect();
        live.sort();
        live.dedup();
        if live.is_empty() {
            return Err(RlError::AllActionsPruned);
        }
        let explore: f64 = rng.random();
        if explore < self.epsilon {
            let idx = rng.random_range(0..live.len());
            return Ok(live[idx]);
        }
        let mut best = live[0];
        let mut best_q = self.entries[&(state.to_string(), best)].q;
        for a in &live[1..] {
            let q = self.entries[&(state.to_string(), *a)].q;
            if q > best_q {
                best = *a;
                best_q = q;
            }
        }
        Ok(best)
    }

    /// One tabular Q-learning update:
    /// Q(s,a) ← Q(s,a) + α(r + γ·max_unpruned Q(s',·) − Q(s,a)).
    /// The bootstrap term is 0 at the terminal state or when s' has no
    /// unpruned actions. Visits increment; entries falling below the prune
    /// threshold after enough visits are masked.
    pub fn update(&mut self, state: &str, action: u64, reward: f64, next: Option<&str>) {
        let max_next = next.map(|s| self.max_unpruned(s)).unwrap_or(0.0);
        let params = self.params;
        let entry = self
            .entries
            .entry((state.to_string(), action))
            .or_insert(QEntry {
                q: 0.0,
                visits: 0,
                pruned: false,
            });
        entry.q += params.alpha * (reward + params.gamma * max_next - entry.q);
        entry.visits += 1;
        if entry.visits >= params.prune_min_visits && entry.q < params.prune_threshold {
            entry.pruned = true;
        }
    }

    /// Replay a closed session's credited transitions in reverse order so
    /// terminal values propagate backward in one pass; every transition also
    /// lands in the empirical counts.
    pub fn replay_session(&mut self, counts: &mut TransitionCounts, rewards: &[RewardedTransition]) {
        for rt in rewards.iter().rev() {
            self.update(&rt.state, rt.action, rt.reward, rt.next.as_deref());
            counts.increment(&rt.state, rt.action, rt.next.as_deref());
        }
    }

    /// ε ← max(ε_min, ε · decay); applied once per closed session.
    pub fn decay_epsilon(&mut self) {
        self.epsilon = (self.epsilon * self.params.epsilon_decay).max(self.params.epsilon_min);
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let snapshot = QTableSnapshot {
            params: self.params,
            epsilon: self.epsilon,
            entries: self
                .entries
                .iter()
                .map(|((state, action), e)| QEntryRow {
                    state: state.clone(),
                    action: *action,
                    q: e.q,
                    visits: e.visits,
                    pruned: e.pruned,
                })
                .collect(),
        };
        crate::store::save_snapshot(path, SNAPSHOT_KIND, &snapshot)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let snapshot: QTableSnapshot = crate::store::load_snapshot(path, SNAPSHOT_KIND)?;
        Ok(QTable {
            entries: snapshot
                .entries
                .into_iter()
                .map(|row| {
                    (
                        (row.state, row.action),
                        QEntry {
                            q: row.q,
                            visits: row.visits,
                            pruned: row.pruned,
                        },
                    )
                })
                .collect(),
            epsilon: snapshot.epsilon,
            params: snapshot.params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{SessionRecord, Transition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn cand(action: u64, probability: f64, match_strength: f64) -> ScoredCandidate {
        ScoredCandidate {
            action,
            record_ids: vec![action],
            probability,
            match_strength,
            request_key: "k".into(),
        }
    }

    fn session(states: &[&str], reason: CloseReason) -> SessionRecord {
        let transitions = states
            .iter()
            .enumerate()
            .map(|(i, s)| Transition {
                state: s.to_string(),
                action: i as u64 + 1,
                request_bytes: 10,
                response_record: i as u64 + 1,
                timestamp: i as u64,
            })
            .collect();
        SessionRecord::close(1, "10.0.0.1".into(), 1234, transitions, reason)
    }

    #[test]
    fn action_set_threshold_examples() {
        // one candidate clears 0.5
        let scored = vec![cand(1, 0.7, 0.7), cand(2, 0.2, 0.2), cand(3, 0.1, 0.1)];
        assert_eq!(action_set(&scored, 0.5), vec![1]);

        // none clears 0.5 — verified exhaustively — so fall back to top-1
        let scored = vec![cand(1, 0.4, 0.4), cand(2, 0.35, 0.35), cand(3, 0.25, 0.25)];
        for c in &scored {
            assert!(c.probability < 0.5 && c.match_strength < 0.5);
        }
        assert_eq!(action_set(&scored, 0.5), vec![1]);

        // OOV propagation
        assert!(action_set(&[], 0.5).is_empty());
    }

    #[test]
    fn action_set_fallback_breaks_ties_low() {
        let scored = vec![cand(9, 0.3, 0.1), cand(4, 0.3, 0.1), cand(7, 0.2, 0.1)];
        assert_eq!(action_set(&scored, 0.5), vec![4]);
    }

    #[test]
    fn action_set_keeps_all_passing() {
        let scored = vec![cand(1, 0.16, 0.9), cand(2, 0.16, 0.9), cand(3, 0.16, 0.4)];
        assert_eq!(action_set(&scored, 0.5), vec![1, 2]);
    }

    #[test]
    fn select_greedy_on_seeds() {
        let mut q = QTable::new(RlParams {
            epsilon: 0.0,
            ..RlParams::default()
        })
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let chosen = q
            .select_action("s", &[(1, 0.6), (2, 0.4)], &mut rng)
            .unwrap();
        assert_eq!(chosen, 1);
        // seeded entries exist with scorer probabilities
        assert_eq!(q.entry("s", 2).unwrap().q, 0.4);
    }

    #[test]
    fn select_explores_uniformly() {
        let mut q = QTable::new(RlParams {
            epsilon: 1.0,
            ..RlParams::default()
        })
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..100 {
            seen.insert(q.select_action("s", &[(1, 0.5), (2, 0.5)], &mut rng).unwrap());
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn select_skips_pruned() {
        let mut q = QTable::new(RlParams {
            epsilon: 0.0,
            ..RlParams::default()
        })
        .unwrap();
        q.seed("s", 1, -0.5);
        q.seed("s", 2, 0.1);
        // drive entry 1 below the prune threshold
        for _ in 0..3 {
            q.update("s", 1, -1.0, None);
        }
        assert!(q.entry("s", 1).unwrap().pruned);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let chosen = q.select_action("s", &[(1, 0.9), (2, 0.1)], &mut rng).unwrap();
        assert_eq!(chosen, 2);
    }

    #[test]
    fn all_pruned_is_error() {
        let mut q = QTable::new(RlParams::default()).unwrap();
        for _ in 0..3 {
            q.update("s", 1, -1.0, None);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert!(matches!(
            q.select_action("s", &[(1, 0.9)], &mut rng),
            Err(RlError::AllActionsPruned)
        ));
    }

    #[test]
    fn rewards_for_single_request_session() {
        let params = RlParams::default();
        let rewards = assign_rewards(&session(&["s1"], CloseReason::IdleTimeout), &params);
        assert_eq!(rewards.len(), 1);
        assert_eq!(rewards[0].reward, -1.0);
        assert_eq!(rewards[0].next, None);
    }

    #[test]
    fn rewards_for_three_request_session() {
        let params = RlParams::default();
        let rewards = assign_rewards(&session(&["s1", "s2", "s3"], CloseReason::PeerClose), &params);
        let values: Vec<f64> = rewards.iter().map(|r| r.reward).collect();
        assert_eq!(values, vec![3.0, 3.0, -1.0]);
        assert_eq!(rewards[0].next.as_deref(), Some("s2"));
        assert_eq!(rewards[1].next.as_deref(), Some("s3"));
        assert_eq!(rewards[2].next, None);
    }

    #[test]
    fn exploit_bonus_on_final_transition() {
        let params = RlParams {
            exploit_bonus: 10.0,
            exploit_bonus_enabled: true,
            ..RlParams::default()
        };
        let rewards = assign_rewards(&session(&["s1", "s2"], CloseReason::ExploitDetected), &params);
        let values: Vec<f64> = rewards.iter().map(|r| r.reward).collect();
        assert_eq!(values, vec![2.0, 12.0]);

        let disabled = RlParams {
            exploit_bonus_enabled: false,
            ..params
        };
        let rewards = assign_rewards(&session(&["s1", "s2"], CloseReason::ExploitDetected), &disabled);
        assert_eq!(rewards[1].reward, -1.0);
    }

    #[test]
    fn q_update_direct_evaluation() {
        let mut q = QTable::new(RlParams {
            alpha: 0.5,
            gamma: 0.9,
            ..RlParams::default()
        })
        .unwrap();
        q.seed("next", 1, 2.0);
        q.update("s", 1, 5.0, Some("next"));
        // Q = 0 + 0.5·(5 + 0.9·2 − 0) = 3.4
        assert!((q.entry("s", 1).unwrap().q - 3.4).abs() < 1e-12);
    }

    #[test]
    fn q_update_terminal_max_is_zero() {
        let mut q = QTable::new(RlParams {
            alpha: 1.0,
            ..RlParams::default()
        })
        .unwrap();
        q.seed("s", 1, 1.0);
        q.update("s", 1, -1.0, None);
        assert_eq!(q.entry("s", 1).unwrap().q, -1.0);
    }

    #[test]
    fn q_update_alpha_zero_is_identity() {
        // alpha = 0 is outside the valid range for training, so exercise the
        // identity property through the update arithmetic with a direct check
        let params = RlParams::default();
        let q0 = 1.25_f64;
        let alpha = 0.0;
        let updated = q0 + alpha * (7.0 + params.gamma * 3.0 - q0);
        assert_eq!(updated, q0);
    }

    #[test]
    fn unknown_next_state_bootstraps_zero() {
        let mut q = QTable::new(RlParams {
            alpha: 1.0,
            gamma: 0.9,
            ..RlParams::default()
        })
        .unwrap();
        q.update("s", 1, 2.0, Some("never-seen"));
        assert_eq!(q.entry("s", 1).unwrap().q, 2.0);
    }

    #[test]
    fn replay_applies_reverse_and_counts() {
        let mut q = QTable::new(RlParams {
            alpha: 1.0,
            gamma: 0.9,
            epsilon: 0.0,
            ..RlParams::default()
        })
        .unwrap();
        let mut counts = TransitionCounts::new();
        let params = q.params;
        let rewards = assign_rewards(&session(&["s1", "s2"], CloseReason::IdleTimeout), &params);
        q.replay_session(&mut counts, &rewards);
        assert_eq!(q.len(), 2);
        assert_eq!(counts.len(), 2);
        // reverse order: the terminal update lands first, so the non-final
        // transition bootstraps from the already-updated successor
        let terminal_q = q.entry("s2", 2).unwrap().q;
        assert_eq!(terminal_q, -1.0);
        let first_q = q.entry("s1", 1).unwrap().q;
        assert!((first_q - (2.0 + 0.9 * terminal_q)).abs() < 1e-12);
    }

    #[test]
    fn repeated_replay_gamma_zero_fixes_reward() {
        let mut q = QTable::new(RlParams {
            alpha: 1.0,
            gamma: 0.0,
            ..RlParams::default()
        })
        .unwrap();
        let mut counts = TransitionCounts::new();
        let rewards = vec![RewardedTransition {
            state: "s".into(),
            action: 1,
            reward: 4.0,
            next: Some("t".into()),
        }];
        for _ in 0..5 {
            q.replay_session(&mut counts, &rewards);
        }
        assert_eq!(q.entry("s", 1).unwrap().q, 4.0);
    }

    // Fixed 3-state, 2-action deterministic MDP used for the convergence
    // check; rewards all positive so pruning stays inert.
    type Mdp = [((&'static str, u64), (&'static str, f64)); 6];
    const MDP: Mdp = [
        (("S0", 0), ("S1", 1.0)),
        (("S0", 1), ("S2", 0.0)),
        (("S1", 0), ("S2", 2.0)),
        (("S1", 1), ("S0", 0.5)),
        (("S2", 0), ("S0", 3.0)),
        (("S2", 1), ("S2", 1.0)),
    ];

    /// Independent brute-force value iteration on the Bellman optimality
    /// equation; the test oracle for Q convergence.
    fn value_iteration_oracle(gamma: f64) -> std::collections::BTreeMap<(&'static str, u64), f64> {
        let mut q: std::collections::BTreeMap<(&str, u64), f64> =
            MDP.iter().map(|(k, _)| (*k, 0.0)).collect();
        for _ in 0..100_000 {
            let mut delta = 0.0_f64;
            for ((s, a), (s2, r)) in MDP {
                let v2 = q[&(s2, 0)].max(q[&(s2, 1)]);
                let newv = r + gamma * v2;
                delta = delta.max((newv - q[&(s, a)]).abs());
                q.insert((s, a), newv);
            }
            if delta < 1e-14 {
                break;
            }
        }
        q
    }

    #[test]
    fn replay_converges_to_value_iteration_oracle() {
        let oracle = value_iteration_oracle(0.9);
        // Cross-check two oracle values against an external computation.
        assert!((oracle[&("S0", 0)] - 19.298_892_988_93).abs() < 1e-9);
        assert!((oracle[&("S2", 0)] - 20.369_003_690_037).abs() < 1e-9);

        let mut q = QTable::new(RlParams {
            alpha: 1.0,
            gamma: 0.9,
            ..RlParams::default()
        })
        .unwrap();
        let mut counts = TransitionCounts::new();
        let rewards: Vec<RewardedTransition> = MDP
            .iter()
            .map(|((s, a), (s2, r))| RewardedTransition {
                state: s.to_string(),
                action: *a,
                reward: *r,
                next: Some(s2.to_string()),
            })
            .collect();
        for _ in 0..400 {
            q.replay_session(&mut counts, &rewards);
        }
        for ((s, a), expected) in &oracle {
            let got = q.entry(s, *a).unwrap().q;
            assert!(
                (got - expected).abs() < 1e-6,
                "Q({s},{a}) = {got}, oracle {expected}"
            );
        }
    }

    #[test]
    fn estimate_transition_frequencies() {
        let mut counts = TransitionCounts::new();
        for _ in 0..3 {
            counts.increment("s", 1, Some("a"));
        }
        counts.increment("s", 1, Some("b"));
        let dist = counts.estimate("s", 1).unwrap();
        let map: BTreeMap<_, _> = dist.into_iter().collect();
        assert_eq!(map[&Some("a".to_string())], 0.75);
        assert_eq!(map[&Some("b".to_string())], 0.25);

        counts.increment("t", 2, None);
        let dist = counts.estimate("t", 2).unwrap();
        assert_eq!(dist, vec![(None, 1.0)]);

        assert!(matches!(counts.estimate("x", 9), Err(RlError::NoObservations)));
    }

    #[test]
    fn epsilon_decay_with_floor() {
        let mut q = QTable::new(RlParams {
            epsilon: 0.5,
            epsilon_decay: 0.99,
            epsilon_min: 0.05,
            ..RlParams::default()
        })
        .unwrap();
        q.decay_epsilon();
        assert!((q.epsilon - 0.495).abs() < 1e-12);
        // 0.5·0.99^1000 < 0.05, so a long run pins the floor
        for _ in 0..1000 {
            q.decay_epsilon();
        }
        assert_eq!(q.epsilon, 0.05);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(QTable::new(RlParams {
            gamma: 1.0,
            ..RlParams::default()
        })
        .is_err());
        assert!(QTable::new(RlParams {
            alpha: 0.0,
            ..RlParams::default()
        })
        .is_err());
        assert!(QTable::new(RlParams {
            epsilon: 1.5,
            ..RlParams::default()
        })
        .is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qtable.json");
        let mut q = QTable::new(RlParams::default()).unwrap();
        q.save(&path).unwrap();
        let empty = QTable::load(&path).unwrap();
        assert_eq!(q, empty);

        q.seed("GET /", 1, 0.5);
        q.update("GET /", 1, 5.0, Some("GET /status"));
        q.decay_epsilon();
        q.save(&path).unwrap();
        let loaded = QTable::load(&path).unwrap();
        assert_eq!(q, loaded);
        assert_eq!(loaded.entry("GET /", 1).unwrap().q, q.entry("GET /", 1).unwrap().q);
    }

    use proptest::prelude::*;

    proptest! {
        // Transition estimates are distributions.
        #[test]
        fn estimates_sum_to_one(raw in proptest::collection::vec(("[a-c]", 1u64..50), 1..20)) {
            let mut counts = TransitionCounts::new();
            for (next, n) in &raw {
                for _ in 0..*n {
                    counts.increment("s", 1, Some(next));
                }
            }
            let dist = counts.estimate("s", 1).unwrap();
            let sum: f64 = dist.iter().map(|(_, p)| p).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(dist.iter().all(|(_, p)| *p >= 0.0));
        }

        // Greedy choice is invariant under positive affine maps of Q.
        #[test]
        fn greedy_affine_invariance(qs in proptest::collection::vec(-10.0f64..10.0, 2..6), scale in 0.1f64..5.0, shift in -3.0f64..3.0) {
            let mut a = QTable::new(RlParams { epsilon: 0.0, ..RlParams::default() }).unwrap();
            let mut b = QTable::new(RlParams { epsilon: 0.0, ..RlParams::default() }).unwrap();
            let candidates: Vec<(u64, f64)> = (0..qs.len() as u64).map(|i| (i, 0.0)).collect();
            for (i, q0) in qs.iter().enumerate() {
                a.seed("s", i as u64, *q0);
                b.seed("s", i as u64, scale * q0 + shift);
            }
            let mut rng_a = ChaCha20Rng::seed_from_u64(0);
            let mut rng_b = ChaCha20Rng::seed_from_u64(0);
            let pick_a = a.select_action("s", &candidates, &mut rng_a).unwrap();
            let pick_b = b.select_action("s", &candidates, &mut rng_b).unwrap();
            prop_assert_eq!(pick_a, pick_b);
        }

        // Pruned actions never come back from selection.
        #[test]
        fn pruned_never_selected(seed in 0u64..500) {
            let mut q = QTable::new(RlParams { epsilon: 0.5, ..RlParams::default() }).unwrap();
            for _ in 0..3 { q.update("s", 1, -1.0, None); }
            prop_assert!(q.entry("s", 1).unwrap().pruned);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let got = q.select_action("s", &[(1, 0.8), (2, 0.2)], &mut rng).unwrap();
                prop_assert_eq!(got, 2);
            }
        }
    }
}
