//! Request evaluator: a linear hinge-loss classifier that decides whether an
//! OOV request is Trusted (looks like normal traffic) or Untrusted.
//!
//! Two feature schemas share the classifier: the NSL-KDD flow schema
//! (z-scored numerics plus one-hot protocol/service/flag) for offline
//! training and category reporting, and a heuristic live-HTTP schema built
//! from the request itself. Training is plain seeded stochastic subgradient
//! descent on the L2-regularized hinge objective.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::NormalizedRequest;
use crate::store::StoreError;

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    ParseRow {
        path: String,
        line: usize,
        message: String,
    },
    #[error("dataset contains a single class; cannot train a separator")]
    DegenerateDataset,
    #[error("feature schema mismatch: model expects {expected} dims, got {got}")]
    SchemaMismatch { expected: usize, got: usize },
}

/// NSL-KDD attack categories plus Normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackCategory {
    Normal,
    DoS,
    Probe,
    R2L,
    U2R,
}

impl AttackCategory {
    pub fn name(&self) -> &'static str {
        match self {
            AttackCategory::Normal => "Normal",
            AttackCategory::DoS => "DoS",
            AttackCategory::Probe => "Probe",
            AttackCategory::R2L => "R2L",
            AttackCategory::U2R => "U2R",
        }
    }
}

/// The standard NSL-KDD label → category map. Labels outside the known set
/// yield `None`; callers decide how to report them.
pub fn label_category(label: &str) -> Option<AttackCategory> {
    use AttackCategory::*;
    let cat = match label {
        "normal" => Normal,
        "back" | "land" | "neptune" | "pod" | "smurf" | "teardrop" | "apache2" | "udpstorm"
        | "processtable" | "worm" | "mailbomb" => DoS,
        "satan" | "ipsweep" | "nmap" | "portsweep" | "mscan" | "saint" => Probe,
        "guess_passwd" | "ftp_write" | "imap" | "phf" | "multihop" | "warezmaster"
        | "warezclient" | "spy" | "xlock" | "xsnoop" | "snmpguess" | "snmpgetattack"
        | "httptunnel" | "sendmail" | "named" => R2L,
        "buffer_overflow" | "loadmodule" | "rootkit" | "perl" | "sqlattack" | "xterm" | "ps" => {
            U2R
        }
        _ => return None,
    };
    Some(cat)
}

/// Number of numeric features in the 41-column NSL-KDD schema (the other
/// three — protocol_type, service, flag — are categorical).
pub const NSL_NUMERIC_DIM: usize = 38;
/// Column indices (0-based) of the categorical features.
const COL_PROTOCOL: usize = 1;
const COL_SERVICE: usize = 2;
const COL_FLAG: usize = 3;

/// One parsed NSL-KDD connection record.
#[derive(Debug, Clone, PartialEq)]
pub struct NslRow {
    /// The 38 numeric features, in schema order.
    pub numeric: Vec<f64>,
    pub protocol: String,
    pub service: String,
    pub flag: String,
    pub label: String,
    pub is_attack: bool,
    pub category: Option<AttackCategory>,
}

/// Parse NSL-KDD CSV text: 41 feature fields + label, with an optional
/// trailing difficulty field that is ignored.
pub fn parse_nslkdd(text: &str, source_name: &str) -> Result<Vec<NslRow>, EvaluatorError> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 42 && fields.len() != 43 {
            return Err(EvaluatorError::ParseRow {
                path: source_name.to_string(),
                line: lineno + 1,
                message: format!("expected 42 or 43 fields, found {}", fields.len()),
            });
        }
        let mut numeric = Vec::with_capacity(NSL_NUMERIC_DIM);
        for (col, field) in fields[..41].iter().enumerate() {
            if col == COL_PROTOCOL || col == COL_SERVICE || col == COL_FLAG {
                continue;
            }
            let value: f64 = field.parse().map_err(|_| EvaluatorError::ParseRow {
                path: source_name.to_string(),
                line: lineno + 1,
                message: format!("column {}: not a number: {field:?}", col + 1),
            })?;
            numeric.push(value);
        }
        let label = fields[41].to_string();
        rows.push(NslRow {
            numeric,
            protocol: fields[COL_PROTOCOL].to_string(),
            service: fields[COL_SERVICE].to_string(),
            flag: fields[COL_FLAG].to_string(),
            is_attack: label != "normal",
            category: label_category(&label),
            label,
        });
    }
    Ok(rows)
}

pub fn ingest_nslkdd(path: &Path) -> Result<Vec<NslRow>, EvaluatorError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvaluatorError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_nslkdd(&text, &path.display().to_string())
}

/// Normalization statistics fitted on a training split: per-feature mean and
/// standard deviation plus the observed categorical vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NslStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub protocols: Vec<String>,
    pub services: Vec<String>,
    pub flags: Vec<String>,
}

impl NslStats {
    pub fn fit(rows: &[NslRow]) -> NslStats {
        let n = rows.len().max(1) as f64;
        let mut means = vec![0.0; NSL_NUMERIC_DIM];
        for row in rows {
            for (m, v) in means.iter_mut().zip(&row.numeric) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut stds = vec![0.0; NSL_NUMERIC_DIM];
        for row in rows {
            for ((s, v), m) in stds.iter_mut().zip(&row.numeric).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0; // constant column: leave it centered at zero
            }
        }
        let collect = |f: fn(&NslRow) -> &String| -> Vec<String> {
            rows.iter()
                .map(f)
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        NslStats {
            means,
            stds,
            protocols: collect(|r| &r.protocol),
            services: collect(|r| &r.service),
            flags: collect(|r| &r.flag),
        }
    }

    pub fn dim(&self) -> usize {
        NSL_NUMERIC_DIM + self.protocols.len() + self.services.len() + self.flags.len()
    }

    /// Z-scored numerics followed by one-hot categoricals; a categorical
    /// value unseen at fit time encodes as all zeros.
    pub fn featurize(&self, row: &NslRow) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for ((v, m), s) in row.numeric.iter().zip(&self.means).zip(&self.stds) {
            out.push((v - m) / s);
        }
        for (list, value) in [
            (&self.protocols, &row.protocol),
            (&self.services, &row.service),
            (&self.flags, &row.flag),
        ] {
            for item in list {
                out.push(if item == value { 1.0 } else { 0.0 });
            }
        }
        out
    }
}

/// Which feature space a model was trained in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureSchema {
    NslKdd(NslStats),
    HttpHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trust {
    Trusted,
    Untrusted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub schema: FeatureSchema,
    pub lambda: f64,
}

const SNAPSHOT_KIND: &str = "evaluator";

impl EvaluatorModel {
    pub fn decision(&self, features: &[f64]) -> Result<f64, EvaluatorError> {
        if features.len() != self.weights.len() {
            return Err(EvaluatorError::SchemaMismatch {
                expected: self.weights.len(),
                got: features.len(),
            });
        }
        Ok(dot(&self.weights, features) + self.bias)
    }

    /// Positive decision margin means the normal-trained side: Trusted.
    /// An exact zero resolves to Trusted.
    pub fn classify(&self, features: &[f64]) -> Result<Trust, EvaluatorError> {
        Ok(if self.decision(features)? >= 0.0 {
            Trust::Trusted
        } else {
            Trust::Untrusted
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        crate::store::save_snapshot(path, SNAPSHOT_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        crate::store::load_snapshot(path, SNAPSHOT_KIND)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            epochs: 20,
            seed: 0,
            learning_rate: 0.1,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch L2-regularized hinge objective:
/// J(w, b) = λ/2·‖w‖² + (1/n)·Σ max(0, 1 − yᵢ(w·xᵢ + b)).
pub fn hinge_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * dot(w, w);
    let n = xs.len().max(1) as f64;
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    reg + data / n
}

/// Analytic subgradient of [`hinge_objective`]; the same expression training
/// follows per sample.
pub fn hinge_gradient(
    w: &[f64],
    b: f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    lambda: f64,
) -> (Vec<f64>, f64) {
    let n = xs.len().max(1) as f64;
    let mut gw: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
    let mut gb = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        if y * (dot(w, x) + b) < 1.0 {
            for (g, xi) in gw.iter_mut().zip(x) {
                *g -= y * xi / n;
            }
            gb -= y / n;
        }
    }
    (gw, gb)
}

/// Train a linear SVM with seeded stochastic subgradient descent.
/// `labels` marks attacks; the model is trained with normal = +1 so its
/// positive side is the Trusted class. Both classes must be present.
pub fn train_svm(
    features: &[Vec<f64>],
    labels: &[bool],
    schema: FeatureSchema,
    config: &TrainConfig,
) -> Result<EvaluatorModel, EvaluatorError> {
    let n = features.len();
    let attacks = labels.iter().filter(|l| **l).count();
    if n == 0 || attacks == 0 || attacks == n {
        return Err(EvaluatorError::DegenerateDataset);
    }
    let dim = features[0].len();
    let ys: Vec<f64> = labels.iter().map(|l| if *l { -1.0 } else { 1.0 }).collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t: u64 = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = config.learning_rate / (1.0 + config.lambda * t as f64);
            let x = &features[i];
            let y = ys[i];
            let margin = y * (dot(&w, x) + b);
            if margin < 1.0 {
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi -= eta * (config.lambda * *wi - y * xi);
                }
                b += eta * y;
            } else {
                for wi in w.iter_mut() {
                    *wi -= eta * config.lambda * *wi;
                }
            }
            t += 1;
        }
    }
    Ok(EvaluatorModel {
        weights: w,
        bias: b,
        schema,
        lambda: config.lambda,
    })
}

/// Binary accuracy of a model over a labeled feature set.
pub fn accuracy(model: &EvaluatorModel, features: &[Vec<f64>], labels: &[bool]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(x, is_attack)| {
            let trust = model.classify(x).expect("dims fixed by caller");
            (trust == Trust::Untrusted) == **is_attack
        })
        .count();
    correct as f64 / features.len() as f64
}

/// Known-exploit patterns: lowercase substrings matched against raw bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureList {
    patterns: Vec<String>,
}

impl SignatureList {
    pub fn from_patterns<S: AsRef<str>>(patterns: &[S]) -> SignatureList {
        SignatureList {
            patterns: patterns
                .iter()
                .map(|p| p.as_ref().to_lowercase())
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    /// Load from a plain-text file, one pattern per line; blank lines and
    /// `#` comments are skipped.
    pub fn load(path: &Path) -> Result<SignatureList, EvaluatorError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvaluatorError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(SignatureList::from_patterns(
            &text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect::<Vec<_>>(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), EvaluatorError> {
        let mut text = self.patterns.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| EvaluatorError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Number of distinct patterns present in the payload.
    pub fn match_count(&self, raw: &[u8]) -> usize {
        let hay = String::from_utf8_lossy(raw).to_lowercase();
        self.patterns.iter().filter(|p| hay.contains(p.as_str())).count()
    }

    pub fn matches(&self, raw: &[u8]) -> bool {
        self.match_count(raw) > 0
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Shannon entropy of a byte string in bits per byte (plug-in estimator);
/// empty input is defined as 0.
pub fn shannon_entropy_bits(data: &[u8]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut counts = [0u64; 256];
    for byte in data {
        counts[*byte as usize] += 1;
    }
    let n = data.len() as f64;
    counts
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Dimensionality of the live-HTTP heuristic schema.
pub const HTTP_FEATURE_DIM: usize = 8;

/// Heuristic features for a live request, each scaled to [0, 1]:
/// request size, path depth, body entropy, signature hits, and four anomaly
/// flags (missing Host, unusual method, path traversal, binary body).
pub fn featurize_http(
    request: &NormalizedRequest,
    raw: &[u8],
    signatures: &SignatureList,
) -> Vec<f64> {
    let body = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .map(|p| &raw[p + 4..])
        .unwrap_or(&[]);

    let size = (raw.len() as f64 / 2048.0).min(1.0);
    let depth = request.path.split('/').filter(|s| !s.is_empty()).count();
    let depth = (depth as f64 / 8.0).min(1.0);
    let entropy = shannon_entropy_bits(body) / 8.0;
    let signature_hits = (signatures.match_count(raw) as f64 / 4.0).min(1.0);

    let no_host = if request
        .selected_headers
        .iter()
        .any(|(name, _)| name == "host")
    {
        0.0
    } else {
        1.0
    };
    let odd_method = if matches!(request.method.as_str(), "GET" | "POST" | "HEAD") {
        0.0
    } else {
        1.0
    };
    let traversal = if request.path.contains("..") { 1.0 } else { 0.0 };
    let binary_body = if body
        .iter()
        .any(|b| !(matches!(b, 0x09..=0x0d) || matches!(b, 0x20..=0x7e)))
    {
        1.0
    } else {
        0.0
    };

    vec![
        size,
        depth,
        entropy,
        signature_hits,
        no_host,
        odd_method,
        traversal,
        binary_body,
    ]
}
