//! One function per subcommand; each prints a one-line summary on success.

use std::fs;
use std::path::Path;
use std::time::Duration;

use lurepot_core::attacker::{CampaignLog, SessionOutcome};
use lurepot_core::engine::{Engine, EngineConfig, SelectionPolicy};
use lurepot_core::evaluator::{
    accuracy, parse_nslkdd, train_svm, EvaluatorModel, FeatureSchema, NslStats, SignatureList,
    TrainConfig,
};
use lurepot_core::normalize::normalize;
use lurepot_core::report::build_report;
use lurepot_core::rl::QTable;
use lurepot_core::scorer::{train_scorer as fit_scorer, ScorerModel};
use lurepot_core::sim::{run_synthetic, ExperimentSpec};
use lurepot_core::store::{NewRecord, RecordSource, ReqResStore, SeedEntry, SessionLog};
use lurepot_core::synth;

use crate::config::Config;
use crate::server::HttpServer;
use crate::{data, internal, CliError, Paths};

pub fn ingest(paths: &Paths, input: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(input)
        .map_err(|e| data(format!("cannot read {}: {e}", input.display())))?;
    let mut store = ReqResStore::open(&paths.store()).map_err(data)?;
    let mut appended = 0u64;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: SeedEntry = serde_json::from_str(line)
            .map_err(|e| data(format!("{} line {}: {e}", input.display(), i + 1)))?;
        let request = normalize(&entry.request)
            .map_err(|e| data(format!("{} line {}: {e}", input.display(), i + 1)))?;
        store
            .append_record(NewRecord {
                request_key: request.request_key,
                response: entry.response,
                source: RecordSource::SeedCorpus,
                device_id: None,
                created_at: 0,
            })
            .map_err(internal)?;
        appended += 1;
    }
    println!(
        "ingested {appended} records ({} total in {})",
        store.len(),
        paths.store().display()
    );
    Ok(())
}

pub fn train_scorer(paths: &Paths, config: &Config) -> Result<(), CliError> {
    let store = ReqResStore::open(&paths.store()).map_err(data)?;
    let model = fit_scorer(store.records(), &config.scorer)
        .map_err(|e| data(format!("{}: {e}", paths.store().display())))?;
    model.save(&paths.scorer()).map_err(internal)?;
    let keys: std::collections::BTreeSet<&str> = store
        .records()
        .iter()
        .filter(|r| r.source != RecordSource::Pending)
        .map(|r| r.request_key.as_str())
        .collect();
    println!(
        "trained scorer on {} records ({} request keys, vocabulary {}) -> {}",
        store.len(),
        keys.len(),
        model.vocab.len(),
        paths.scorer().display()
    );
    Ok(())
}

pub fn train_evaluator(paths: &Paths, dataset: &Path, seed: u64) -> Result<(), CliError> {
    let text = fs::read_to_string(dataset)
        .map_err(|e| data(format!("cannot read {}: {e}", dataset.display())))?;
    let rows = parse_nslkdd(&text, &dataset.display().to_string()).map_err(data)?;
    let stats = NslStats::fit(&rows);
    let features: Vec<Vec<f64>> = rows.iter().map(|r| stats.featurize(r)).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.is_attack).collect();
    let model = train_svm(
        &features,
        &labels,
        FeatureSchema::NslKdd(stats),
        &TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    )
    .map_err(|e| data(format!("{}: {e}", dataset.display())))?;
    let train_accuracy = accuracy(&model, &features, &labels);
    model.save(&paths.evaluator()).map_err(internal)?;
    println!(
        "trained evaluator on {} rows, training accuracy {train_accuracy:.3} -> {}",
        rows.len(),
        paths.evaluator().display()
    );
    Ok(())
}

pub fn serve(
    paths: &Paths,
    config: &Config,
    bind: Option<&str>,
    policy: SelectionPolicy,
    seed: u64,
) -> Result<(), CliError> {
    let store = ReqResStore::open(&paths.store()).map_err(data)?;
    let scorer_path = paths.scorer();
    let scorer = ScorerModel::load(&scorer_path).map_err(|e| {
        data(format!(
            "scorer snapshot {}: {e}; run train-scorer first",
            scorer_path.display()
        ))
    })?;
    let evaluator = match paths.evaluator() {
        p if p.exists() => Some(EvaluatorModel::load(&p).map_err(data)?),
        _ => None,
    };
    let signatures = match paths.signatures() {
        p if p.exists() => SignatureList::load(&p).map_err(data)?,
        _ => synth::signatures(),
    };
    let qtable = match paths.qtable() {
        p if p.exists() => QTable::load(&p).map_err(data)?,
        _ => QTable::new(config.rl).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let farm = config
        .farm
        .build()
        .map_err(|e| CliError::Usage(format!("config farm section: {e}")))?;
    let session_log = SessionLog::open(&paths.sessions()).map_err(data)?;
    let engine = Engine::new(
        store,
        session_log,
        scorer,
        evaluator,
        farm,
        qtable,
        signatures,
        EngineConfig {
            idle_timeout_secs: config.server.idle_timeout_secs,
            policy,
            seed,
            ..EngineConfig::default()
        },
    );
    let address = bind.unwrap_or(&config.server.bind);
    let server = HttpServer::bind(
        address,
        engine,
        Duration::from_millis(config.server.sweep_interval_ms),
    )
    .map_err(|e| internal(format!("cannot bind {address}: {e}")))?;
    println!("listening on {}", server.local_addr().map_err(internal)?);
    crate::server::install_signal_handlers();
    let engine = server.run(crate::server::stop_flag()).map_err(internal)?;
    engine.qtable().save(&paths.qtable()).map_err(internal)?;
    println!(
        "shutdown: {} sessions logged, {} q-table entries -> {}",
        engine.session_log().len(),
        engine.qtable().len(),
        paths.qtable().display()
    );
    Ok(())
}

pub fn simulate(
    paths: &Paths,
    config: &Config,
    policy: SelectionPolicy,
    sessions: u64,
    seed: u64,
) -> Result<(), CliError> {
    if sessions == 0 {
        return Err(CliError::Usage("--sessions must be >= 1".to_string()));
    }
    let spec = ExperimentSpec {
        rl: config.rl,
        scorer: config.scorer,
        ..ExperimentSpec::new(policy, seed, sessions)
    };
    let run = run_synthetic(&spec).map_err(internal)?;

    let mut log_lines = String::new();
    for session in run.engine.session_log().sessions() {
        log_lines.push_str(&serde_json::to_string(session).map_err(internal)?);
        log_lines.push('\n');
    }
    fs::write(paths.sessions(), log_lines).map_err(internal)?;
    fs::write(paths.ground_truth(), run.campaign.to_csv()).map_err(internal)?;
    let report = build_report(run.engine.session_log().sessions(), Some(&run.campaign));
    report.write_files(&paths.out_dir).map_err(internal)?;
    if policy == SelectionPolicy::Adaptive {
        run.engine.qtable().save(&paths.qtable()).map_err(internal)?;
    }
    let mean_length = if report.total_sessions == 0 {
        0.0
    } else {
        report.total_requests as f64 / report.total_sessions as f64
    };
    println!(
        "simulated {} sessions (policy {:?}, seed {seed}): mean length {mean_length:.2}, capture rate {}; reports in {}",
        report.total_sessions,
        policy,
        report
            .capture_rate
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "n/a".to_string()),
        paths.out_dir.display()
    );
    Ok(())
}

pub fn report(
    paths: &Paths,
    sessions: Option<&Path>,
    ground_truth: Option<&Path>,
) -> Result<(), CliError> {
    let log_path = sessions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| paths.sessions());
    let log = SessionLog::open(&log_path).map_err(data)?;
    let campaign = match ground_truth {
        Some(p) => Some(parse_ground_truth(
            &fs::read_to_string(p).map_err(|e| data(format!("cannot read {}: {e}", p.display())))?,
            &p.display().to_string(),
        )?),
        None => None,
    };
    if log.sessions().is_empty() {
        eprintln!(
            "warning: empty session log {}; report contains zeros",
            log_path.display()
        );
    }
    let report = build_report(log.sessions(), campaign.as_ref());
    report.write_files(&paths.out_dir).map_err(internal)?;
    print!("{}", report.text_summary());
    Ok(())
}

pub fn assets(paths: &Paths, rows: usize, seed: u64) -> Result<(), CliError> {
    if rows == 0 {
        return Err(CliError::Usage("--rows must be >= 1".to_string()));
    }
    let entries = synth::seed_entries();
    let mut seeds = String::new();
    for entry in &entries {
        seeds.push_str(&serde_json::to_string(entry).map_err(internal)?);
        seeds.push('\n');
    }
    fs::write(paths.seeds(), seeds).map_err(internal)?;
    fs::write(paths.dataset(), synth::synth_nslkdd(rows, seed)).map_err(internal)?;
    let signatures = synth::signatures();
    signatures.save(&paths.signatures()).map_err(internal)?;
    println!(
        "wrote {} ({} entries), {} ({rows} rows), {} ({} patterns)",
        paths.seeds().display(),
        entries.len(),
        paths.dataset().display(),
        paths.signatures().display(),
        signatures.len()
    );
    Ok(())
}

/// Parse a ground-truth CSV produced by `simulate` back into a campaign log.
/// Columns beyond the five written ones never existed, so they default.
fn parse_ground_truth(text: &str, source: &str) -> Result<CampaignLog, CliError> {
    const HEADER: &str = "session_id,policy_id,requests_sent,exploit_sent,attack_label";
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim_end() == HEADER => {}
        other => {
            return Err(data(format!(
                "{source}: expected header {HEADER:?}, found {:?}",
                other.unwrap_or_default()
            )))
        }
    }
    let mut outcomes = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(data(format!(
                "{source} line {}: expected 5 fields, found {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_error =
            |what: &str| data(format!("{source} line {}: bad {what} {:?}", i + 2, fields));
        outcomes.push(SessionOutcome {
            session_id: fields[0].parse().map_err(|_| parse_error("session_id"))?,
            policy_id: fields[1].to_string(),
            peer_ip: String::new(),
            peer_port: 0,
            requests_sent: fields[2].parse().map_err(|_| parse_error("requests_sent"))?,
            exploit_sent: fields[3].parse().map_err(|_| parse_error("exploit_sent"))?,
            failed_probe: None,
            connection_error: false,
            attack_label: fields[4].to_string(),
        });
    }
    Ok(CampaignLog { outcomes })
}
