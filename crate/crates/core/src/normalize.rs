//! Raw HTTP request canonicalization.
//!
//! Every request the honeypot sees is reduced to a deterministic
//! `request_key` so that equivalent requests land on the same state: method
//! uppercased, path percent-decoded and query-stripped, query parameter
//! names sorted, a small set of bucketed headers, and a capped token view of
//! the body. Header and query order never influence the key.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved id for padding.
pub const PAD_TOKEN: u32 = 0;
/// Reserved id for tokens absent from a vocabulary.
pub const OOV_TOKEN: u32 = 1;

/// Body token count kept in the key; guards the state space against
/// adversarially long bodies.
const BODY_TOKEN_CAP: usize = 64;

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("malformed request line: {0:?}")]
    MalformedRequest(String),
}

/// Canonical view of one HTTP request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedRequest {
    pub method: String,
    pub path: String,
    /// Sorted, deduplicated query parameter names (values dropped).
    pub query_keys: Vec<String>,
    /// Sorted (name, bucketed value) pairs for the host / user-agent /
    /// content-type header classes; other headers are ignored.
    pub selected_headers: Vec<(String, String)>,
    /// Lowercased alphanumeric runs from the body, capped at [`BODY_TOKEN_CAP`].
    pub body_tokens: Vec<String>,
    /// Canonical single-line serialization of all fields above.
    pub request_key: String,
}

/// Parse and canonicalize a raw HTTP/1.x request.
pub fn normalize(raw: &[u8]) -> Result<NormalizedRequest, NormalizeError> {
    let (head, body) = split_head_body(raw);
    let head_text = String::from_utf8_lossy(head);
    let mut lines = head_text.split("\r\n").flat_map(|l| l.split('\n'));

    let request_line = lines.next().unwrap_or("").trim();
    let parts: Vec<&str> = request_line.split_whitespace().collect();
    if parts.len() < 3 || !parts[parts.len() - 1].starts_with("HTTP/") {
        return Err(NormalizeError::MalformedRequest(request_line.to_string()));
    }
    let method_raw = parts[0];
    if method_raw.is_empty()
        || !method_raw
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return Err(NormalizeError::MalformedRequest(request_line.to_string()));
    }
    let method = method_raw.to_ascii_uppercase();
    // Targets with unencoded spaces still parse: everything between the
    // method and the version is the target.
    let target = parts[1..parts.len() - 1].join(" ");

    let (path_part, query_part) = match target.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (target.as_str(), None),
    };
    let path = percent_decode(path_part);

    let mut query_keys: Vec<String> = query_part
        .map(|q| {
            q.split('&')
                .filter_map(|pair| {
                    let name = pair.split('=').next().unwrap_or("");
                    let name = percent_decode(name);
                    (!name.is_empty()).then_some(name)
                })
                .collect()
        })
        .unwrap_or_default();
    query_keys.sort();
    query_keys.dedup();

    let mut selected: BTreeMap<&'static str, String> = BTreeMap::new();
    for line in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        match name.trim().to_ascii_lowercase().as_str() {
            "host" => {
                selected.insert("host", bucket_host(value));
            }
            "user-agent" => {
                selected.insert("user-agent", bucket_user_agent(value));
            }
            "content-type" => {
                selected.insert("content-type", bucket_content_type(value));
            }
            _ => {}
        }
    }
    let selected_headers: Vec<(String, String)> = selected
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();

    let mut body_tokens = tokenize_text(&String::from_utf8_lossy(body));
    body_tokens.truncate(BODY_TOKEN_CAP);

    let request_key = build_key(&method, &path, &query_keys, &selected_headers, &body_tokens);

    Ok(NormalizedRequest {
        method,
        path,
        query_keys,
        selected_headers,
        body_tokens,
        request_key,
    })
}

fn build_key(
    method: &str,
    path: &str,
    query_keys: &[String],
    headers: &[(String, String)],
    body_tokens: &[String],
) -> String {
    let mut key = format!("{method} {path}");
    if !query_keys.is_empty() {
        key.push_str(" ?");
        key.push_str(&query_keys.join(","));
    }
    for (name, value) in headers {
        key.push(' ');
        key.push_str(name);
        key.push('=');
        key.push_str(value);
    }
    if !body_tokens.is_empty() {
        key.push_str(" |");
        key.push_str(&body_tokens.join(" "));
    }
    key
}

fn split_head_body(raw: &[u8]) -> (&[u8], &[u8]) {
    if let Some(pos) = find(raw, b"\r\n\r\n") {
        (&raw[..pos], &raw[pos + 4..])
    } else if let Some(pos) = find(raw, b"\n\n") {
        (&raw[..pos], &raw[pos + 2..])
    } else {
        (raw, &[])
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|window| window == needle)
}

fn percent_decode(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let decoded = if bytes[i] == b'%' {
            match (
                bytes.get(i + 1).and_then(|b| (*b as char).to_digit(16)),
                bytes.get(i + 2).and_then(|b| (*b as char).to_digit(16)),
            ) {
                (Some(hi), Some(lo)) => Some((hi * 16 + lo) as u8),
                _ => None, // invalid escape stays literal
            }
        } else {
            None
        };
        match decoded {
            Some(byte) => {
                out.push(byte);
                i += 3;
            }
            None => {
                out.push(bytes[i]);
                i += 1;
            }
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Host values lose their port and case: `Device.local:8080` → `device.local`.
fn bucket_host(value: &str) -> String {
    let lower = value.to_ascii_lowercase();
    match lower.rsplit_once(':') {
        Some((host, port)) if !port.is_empty() && port.chars().all(|c| c.is_ascii_digit()) => {
            host.to_string()
        }
        _ => lower,
    }
}

/// User-Agent values reduce to the product family: `Mozilla/5.0 (...)` → `mozilla`.
fn bucket_user_agent(value: &str) -> String {
    let first = value.split_whitespace().next().unwrap_or("");
    let family = first.split('/').next().unwrap_or("");
    family.to_ascii_lowercase()
}

/// Content-Type values reduce to the media type: `text/html; charset=utf-8` → `text/html`.
fn bucket_content_type(value: &str) -> String {
    value
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase()
}

/// Lowercased alphanumeric runs; everything else is a boundary.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for low in ch.to_lowercase() {
                current.push(low);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token → dense id map with reserved padding and OOV slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Vocabulary {
    map: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Build from a token stream; ids are assigned in sorted token order so
    /// the vocabulary is independent of corpus ordering.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let unique: std::collections::BTreeSet<&str> = tokens.into_iter().collect();
        let map = unique
            .into_iter()
            .enumerate()
            .map(|(i, tok)| (tok.to_string(), OOV_TOKEN + 1 + i as u32))
            .collect();
        Vocabulary { map }
    }

    pub fn id(&self, token: &str) -> u32 {
        self.map.get(token).copied().unwrap_or(OOV_TOKEN)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.map.contains_key(token)
    }

    /// Number of known tokens, excluding the reserved ids.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Map text onto vocabulary ids; unknown tokens become [`OOV_TOKEN`].
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    tokenize_text(text).iter().map(|t| vocab.id(t)).collect()
}
