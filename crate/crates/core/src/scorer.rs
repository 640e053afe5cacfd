//! Retrieval scorer: TF-IDF cosine similarity over stored request keys with
//! a temperature softmax on top.
//!
//! Produces, for an incoming request, an ordered list of candidate response
//! groups with probabilities — the distribution the selection engine seeds
//! its Q-values from. Records sharing a request key form one stored request;
//! within it, byte-identical responses collapse into one group whose
//! probability share grows with its duplicate count.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{tokenize_text, NormalizedRequest, Vocabulary};
use crate::store::{load_snapshot, save_snapshot, RecordSource, ReqResRecord, StoreError};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("cannot train a scorer on an empty record set")]
    EmptyCorpus,
}

const SNAPSHOT_KIND: &str = "scorer";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    /// Softmax temperature τ; smaller is sharper.
    pub temperature: f64,
    /// Number of stored requests kept after similarity ranking.
    pub top_k: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            temperature: 0.5,
            top_k: 16,
        }
    }
}

/// Records with byte-identical responses under one stored request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGroup {
    /// Smallest record_id in the group; doubles as the action id.
    pub anchor: u64,
    pub record_ids: Vec<u64>,
}

/// One distinct request_key with its TF-IDF vector and linked responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRequest {
    pub request_key: String,
    /// Sparse (token id, tf·idf weight), sorted by token id.
    vector: Vec<(u32, f64)>,
    norm: f64,
    /// Response groups sorted by anchor.
    pub groups: Vec<ResponseGroup>,
    /// Total records linked to this key.
    pub record_count: usize,
    min_record: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub vocab: Vocabulary,
    /// (token id, idf weight), sorted by token id.
    idf: Vec<(u32, f64)>,
    /// Stored requests sorted by their smallest linked record_id.
    docs: Vec<StoredRequest>,
    pub temperature: f64,
    pub top_k: usize,
}

/// One candidate response group proposed for a request.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    /// Action id = the group's anchor record_id.
    pub action: u64,
    pub record_ids: Vec<u64>,
    /// Softmax probability share; sums to 1 across the returned list.
    pub probability: f64,
    /// Raw cosine similarity of the parent stored request, in [0, 1].
    pub match_strength: f64,
    /// request_key of the parent stored request.
    pub request_key: String,
}

/// Build a scorer from the record set. `Pending` placeholders are skipped;
/// a set with nothing trainable is an `EmptyCorpus` error.
pub fn train_scorer(
    records: &[ReqResRecord],
    config: &ScorerConfig,
) -> Result<ScorerModel, ScorerError> {
    let mut by_key: BTreeMap<&str, Vec<&ReqResRecord>> = BTreeMap::new();
    for rec in records {
        if rec.source == RecordSource::Pending {
            continue;
        }
        by_key.entry(&rec.request_key).or_default().push(rec);
    }
    if by_key.is_empty() {
        return Err(ScorerError::EmptyCorpus);
    }

    let vocab = Vocabulary::build(
        by_key
            .keys()
            .flat_map(|k| tokenize_text(k))
            .collect::<Vec<_>>()
            .iter()
            .map(|s| s.as_str()),
    );

    // Document frequency over distinct keys, then smoothed idf.
    let doc_count = by_key.len();
    let mut df: BTreeMap<u32, usize> = BTreeMap::new();
    for key in by_key.keys() {
        let mut seen: Vec<u32> = tokenize_text(key).iter().map(|t| vocab.id(t)).collect();
        seen.sort();
        seen.dedup();
        for id in seen {
            *df.entry(id).or_default() += 1;
        }
    }
    let idf: Vec<(u32, f64)> = df
        .into_iter()
        .map(|(id, d)| {
            let w = ((1 + doc_count) as f64 / (1 + d) as f64).ln() + 1.0;
            (id, w)
        })
        .collect();
    let idf_of = |id: u32| -> Option<f64> {
        idf.binary_search_by_key(&id, |(i, _)| *i)
            .ok()
            .map(|pos| idf[pos].1)
    };

    let mut docs = Vec::with_capacity(doc_count);
    for (key, mut recs) in by_key {
        recs.sort_by_key(|r| r.record_id);
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for tok in tokenize_text(key) {
            *tf.entry(vocab.id(&tok)).or_default() += 1.0;
        }
        let vector: Vec<(u32, f64)> = tf
            .into_iter()
            .filter_map(|(id, count)| idf_of(id).map(|w| (id, count * w)))
            .collect();
        let norm = vector.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();

        // Byte-identical responses collapse into one group.
        let mut groups: BTreeMap<Vec<u8>, Vec<u64>> = BTreeMap::new();
        for rec in &recs {
            groups
                .entry(rec.response.to_bytes())
                .or_default()
                .push(rec.record_id);
        }
        let mut groups: Vec<ResponseGroup> = groups
            .into_values()
            .map(|mut ids| {
                ids.sort();
                ResponseGroup {
                    anchor: ids[0],
                    record_ids: ids,
                }
            })
            .collect();
        groups.sort_by_key(|g| g.anchor);

        docs.push(StoredRequest {
            request_key: key.to_string(),
            vector,
            norm,
            record_count: recs.len(),
            min_record: recs[0].record_id,
            groups,
        });
    }
    docs.sort_by_key(|d| d.min_record);

    Ok(ScorerModel {
        vocab,
        idf,
        docs,
        temperature: config.temperature,
        top_k: config.top_k,
    })
}

impl ScorerModel {
    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    /// Whether this exact key was in the training corpus — the vocabulary
    /// test that routes requests to the selection path vs the OOV path.
    pub fn knows_key(&self, request_key: &str) -> bool {
        self.docs.iter().any(|d| d.request_key == request_key)
    }

    fn idf_of(&self, id: u32) -> Option<f64> {
        self.idf
            .binary_search_by_key(&id, |(i, _)| *i)
            .ok()
            .map(|pos| self.idf[pos].1)
    }

    fn vectorize(&self, text: &str) -> Vec<(u32, f64)> {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for tok in tokenize_text(text) {
            if self.vocab.contains(&tok) {
                *tf.entry(self.vocab.id(&tok)).or_default() += 1.0;
            }
        }
        tf.into_iter()
            .filter_map(|(id, count)| self.idf_of(id).map(|w| (id, count * w)))
            .collect()
    }

    pub fn score_candidates(&self, request: &NormalizedRequest) -> Vec<ScoredCandidate> {
        self.score_key(&request.request_key)
    }

    /// Rank stored requests by cosine similarity to the query key, soft-max
    /// the top-K, and spread each stored request's mass over its response
    /// groups in proportion to group size. Empty output means no stored
    /// request shares a token with the query (the OOV signal).
    pub fn score_key(&self, request_key: &str) -> Vec<ScoredCandidate> {
        let query = self.vectorize(request_key);
        let qnorm = query.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if qnorm == 0.0 {
            return Vec::new();
        }

        let mut sims: Vec<(usize, f64)> = Vec::new();
        for (idx, doc) in self.docs.iter().enumerate() {
            if doc.norm == 0.0 {
                continue;
            }
            let dot = sparse_dot(&query, &doc.vector);
            if dot > 0.0 {
                let sim = (dot / (qnorm * doc.norm)).min(1.0);
                sims.push((idx, sim));
            }
        }
        if sims.is_empty() {
            return Vec::new();
        }
        sims.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then(self.docs[a.0].min_record.cmp(&self.docs[b.0].min_record))
        });
        sims.truncate(self.top_k);

        let exps: Vec<f64> = sims
            .iter()
            .map(|(_, s)| (s / self.temperature).exp())
            .collect();
        let total: f64 = exps.iter().sum();

        let mut out = Vec::new();
        for ((idx, sim), exp) in sims.iter().zip(&exps) {
            let doc = &self.docs[*idx];
            let mass = exp / total;
            for group in &doc.groups {
                out.push(ScoredCandidate {
                    action: group.anchor,
                    record_ids: group.record_ids.clone(),
                    probability: mass * group.record_ids.len() as f64
                        / doc.record_count as f64,
                    match_strength: *sim,
                    request_key: doc.request_key.clone(),
                });
            }
        }
        out.sort_by(|a, b| {
            b.probability
                .partial_cmp(&a.probability)
                .unwrap()
                .then(a.action.cmp(&b.action))
        });
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        save_snapshot(path, SNAPSHOT_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        load_snapshot(path, SNAPSHOT_KIND)
    }

    /// Cosine similarity between two arbitrary texts under this model's
    /// vocabulary and idf weights; used to rank farm responses post hoc.
    pub fn text_similarity(&self, a: &str, b: &str) -> f64 {
        let va = self.vectorize(a);
        let vb = self.vectorize(b);
        let na = va.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        let nb = vb.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (sparse_dot(&va, &vb) / (na * nb)).min(1.0)
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ResponseDoc;
    use proptest::prelude::*;

    fn rec(id: u64, key: &str, body: &[u8]) -> ReqResRecord {
        ReqResRecord {
            record_id: id,
            request_key: key.to_string(),
            response: ResponseDoc::new(200, "OK", &[], body),
            source: RecordSource::SeedCorpus,
            device_id: None,
            created_at: 0,
        }
    }

    fn toy_corpus() -> Vec<ReqResRecord> {
        vec![
            rec(1, "GET /login", b"login page"),
            rec(2, "GET /status", b"status page"),
            rec(3, "POST /login", b"posted"),
        ]
    }

    fn toy_model() -> ScorerModel {
        train_scorer(
            &toy_corpus(),
            &ScorerConfig {
                temperature: 1.0,
                top_k: 3,
            },
        )
        .unwrap()
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            train_scorer(&[], &ScorerConfig::default()),
            Err(ScorerError::EmptyCorpus)
        ));
        // pending-only sets are empty for training purposes
        let mut pending = rec(1, "GET /x", b"");
        pending.source = RecordSource::Pending;
        assert!(matches!(
            train_scorer(&[pending], &ScorerConfig::default()),
            Err(ScorerError::EmptyCorpus)
        ));
    }

    #[test]
    fn stored_vector_counts() {
        let one = train_scorer(&[rec(1, "GET /a", b"x")], &ScorerConfig::default()).unwrap();
        assert_eq!(one.doc_count(), 1);
        let two = train_scorer(
            &[rec(1, "GET /a", b"x"), rec(2, "GET /b", b"y")],
            &ScorerConfig::default(),
        )
        .unwrap();
        assert_eq!(two.doc_count(), 2);
    }

    #[test]
    fn singleton_exact_match_probability_one() {
        let model = train_scorer(&[rec(1, "GET /only", b"x")], &ScorerConfig::default()).unwrap();
        let scored = model.score_key("GET /only");
        assert_eq!(scored.len(), 1);
        assert!((scored[0].probability - 1.0).abs() < 1e-12);
        assert!((scored[0].match_strength - 1.0).abs() < 1e-12);
        assert_eq!(scored[0].action, 1);
    }

    #[test]
    fn disjoint_query_scores_empty() {
        let model = toy_model();
        assert!(model.score_key("DELETE /unknown").is_empty());
    }

    // Frozen values from an independent brute-force TF-IDF/softmax oracle
    // over the 3-pair corpus (τ=1, K=3): idf = ln((1+N)/(1+df)) + 1 with
    // N=3; cosines and softmax shares computed externally.
    const ORACLE_IDF_GET: f64 = 1.287_682_072_451_780_8;
    const ORACLE_IDF_POST: f64 = 1.693_147_180_559_945_4;

    #[test]
    fn idf_matches_oracle() {
        let model = toy_model();
        let get_id = model.vocab.id("get");
        let post_id = model.vocab.id("post");
        let login_id = model.vocab.id("login");
        let status_id = model.vocab.id("status");
        let idf: BTreeMap<u32, f64> = model.idf.iter().copied().collect();
        assert!((idf[&get_id] - ORACLE_IDF_GET).abs() < 1e-12);
        assert!((idf[&login_id] - ORACLE_IDF_GET).abs() < 1e-12);
        assert!((idf[&post_id] - ORACLE_IDF_POST).abs() < 1e-12);
        assert!((idf[&status_id] - ORACLE_IDF_POST).abs() < 1e-12);
    }

    #[test]
    fn scores_match_oracle_exact_query() {
        let model = toy_model();
        let scored = model.score_key("GET /login");
        let expect = [
            (1u64, 1.0, 0.469_738_726_313_635_95),
            (2u64, 0.428_046_035_063_118_56, 0.265_130_636_843_182),
            (3u64, 0.428_046_035_063_118_56, 0.265_130_636_843_182),
        ];
        assert_eq!(scored.len(), 3);
        for (cand, (action, sim, prob)) in scored.iter().zip(expect) {
            assert_eq!(cand.action, action);
            assert!((cand.match_strength - sim).abs() < 1e-9, "{cand:?}");
            assert!((cand.probability - prob).abs() < 1e-9, "{cand:?}");
        }
    }

    #[test]
    // hand-computed oracle values, kept verbatim (the first similarity
    // happens to be 1/√2 for this corpus)
    #[allow(clippy::approx_constant, clippy::excessive_precision)]
    fn scores_match_oracle_partial_query() {
        let model = toy_model();
        let scored = model.score_key("GET /");
        let expect = [
            (1u64, 0.707_106_781_186_547_57, 0.525_417_639_287_409_48),
            (2u64, 0.605_348_508_106_291_59, 0.474_582_360_712_590_63),
        ];
        assert_eq!(scored.len(), 2);
        for (cand, (action, sim, prob)) in scored.iter().zip(expect) {
            assert_eq!(cand.action, action);
            assert!((cand.match_strength - sim).abs() < 1e-9);
            assert!((cand.probability - prob).abs() < 1e-9);
        }
    }

    #[test]
    fn probabilities_normalized() {
        let model = toy_model();
        for query in ["GET /login", "GET /", "POST /login", "GET /status"] {
            let scored = model.score_key(query);
            assert!(!scored.is_empty());
            let sum: f64 = scored.iter().map(|c| c.probability).sum();
            assert!((sum - 1.0).abs() < 1e-9, "query {query}: sum {sum}");
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scorer.json");
        let model = toy_model();
        model.save(&path).unwrap();
        let loaded = ScorerModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn duplicate_responses_group_and_upweight() {
        let records = vec![
            rec(1, "GET /x", b"same"),
            rec(2, "GET /x", b"same"),
            rec(3, "GET /x", b"different"),
        ];
        let model = train_scorer(&records, &ScorerConfig::default()).unwrap();
        let scored = model.score_key("GET /x");
        assert_eq!(scored.len(), 2);
        assert_eq!(scored[0].action, 1);
        assert_eq!(scored[0].record_ids, vec![1, 2]);
        assert!((scored[0].probability - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(scored[1].action, 3);
        assert!((scored[1].probability - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_truncates_and_renormalizes() {
        let records = vec![
            rec(1, "GET /shared/a", b"a"),
            rec(2, "GET /shared/b", b"b"),
            rec(3, "GET /shared/c", b"c"),
        ];
        let model = train_scorer(
            &records,
            &ScorerConfig {
                temperature: 1.0,
                top_k: 2,
            },
        )
        .unwrap();
        let scored = model.score_key("GET /shared/a");
        assert_eq!(scored.len(), 2);
        let sum: f64 = scored.iter().map(|c| c.probability).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn permutation_invariance_exact() {
        let mut records = toy_corpus();
        records.push(rec(4, "GET /login", b"another login body"));
        let cfg = ScorerConfig {
            temperature: 1.0,
            top_k: 16,
        };
        let model_a = train_scorer(&records, &cfg).unwrap();
        records.reverse();
        let model_b = train_scorer(&records, &cfg).unwrap();
        assert_eq!(model_a, model_b);
    }

    #[test]
    fn text_similarity_ranks_overlap() {
        let model = toy_model();
        let high = model.text_similarity("GET /login", "login get");
        let low = model.text_similarity("GET /login", "status");
        assert!(high > low);
        assert_eq!(model.text_similarity("GET /login", "zzz"), 0.0);
    }

    proptest! {
        // Exact-match dominance: the stored request equal to the query gets
        // maximal similarity.
        #[test]
        fn exact_match_dominates(extra in proptest::collection::vec("[a-z]{2,8}", 1..6), pick in 0usize..6) {
            let mut records = vec![rec(1, "GET /target/path", b"t")];
            for (i, word) in extra.iter().enumerate() {
                records.push(rec(2 + i as u64, &format!("GET /{word}"), b"x"));
            }
            let model = train_scorer(&records, &ScorerConfig { temperature: 1.0, top_k: 16 }).unwrap();
            let query = if pick == 0 { "GET /target/path".to_string() } else {
                format!("GET /{}", extra[(pick - 1) % extra.len()])
            };
            if model.knows_key(&query) {
                let scored = model.score_key(&query);
                let best = scored.iter().map(|c| c.match_strength).fold(0.0_f64, f64::max);
                let own = scored.iter().find(|c| c.request_key == query).map(|c| c.match_strength).unwrap();
                prop_assert!((own - best).abs() < 1e-12);
                prop_assert!((own - 1.0).abs() < 1e-9);
            }
        }

        // Probabilities are a distribution whenever the list is non-empty.
        #[test]
        fn probabilities_form_distribution(keys in proptest::collection::vec("[a-z]{2,6}( [a-z]{2,6}){0,2}", 1..8), query in "[a-z]{2,6}") {
            let records: Vec<ReqResRecord> = keys.iter().enumerate()
                .map(|(i, k)| rec(i as u64 + 1, k, k.as_bytes()))
                .collect();
            let model = train_scorer(&records, &ScorerConfig::default()).unwrap();
            let scored = model.score_key(&query);
            if !scored.is_empty() {
                let sum: f64 = scored.iter().map(|c| c.probability).sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                for c in &scored {
                    prop_assert!(c.probability >= 0.0 && c.probability <= 1.0 + 1e-12);
                    prop_assert!(c.match_strength >= 0.0 && c.match_strength <= 1.0);
                }
            }
        }
    }
}
