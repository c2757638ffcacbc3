//! Runtime onboarding of external text endpoints as proxy agents.
//!
//! Each settings entry becomes an agent that waits for mentions, POSTs the
//! mention text to its endpoint and answers in the same thread with the
//! response body, or with an error line when the endpoint fails.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use coral_core::types::is_id_char;
use coral_core::{AgentId, AgentRecord, ErrorCode, MentionEvent, WalletAddress};
use ed25519_dalek::SigningKey;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::task::JoinHandle;

use crate::client::{ClientError, CoralClient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsEntry {
    pub name: AgentId,
    pub endpoint_url: String,
    #[serde(default)]
    pub auth_header: Option<String>,
    /// Seconds.
    pub timeout: f64,
    #[serde(default)]
    pub description: String,
}

impl SettingsEntry {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoraliserSettings {
    pub entries: Vec<SettingsEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("settings parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("DuplicateAgent: {name:?} appears more than once")]
    DuplicateName { name: AgentId },
    #[error("entry {name:?}: invalid endpoint_url {url:?}: {reason}")]
    InvalidUrl { name: AgentId, url: String, reason: String },
    #[error("entry {name:?}: timeout must be a positive number of seconds")]
    InvalidTimeout { name: AgentId },
}

impl SettingsError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SettingsError::DuplicateName { .. } => ErrorCode::DuplicateAgent,
            SettingsError::Io { .. } => ErrorCode::Internal,
            _ => ErrorCode::MalformedRequest,
        }
    }
}

pub fn load_settings(path: impl AsRef<Path>) -> Result<CoraliserSettings, SettingsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SettingsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_settings(&text)
}

pub fn parse_settings(text: &str) -> Result<CoraliserSettings, SettingsError> {
    if text.trim().is_empty() {
        let warning = "coraliser settings file is empty; no proxies will be started".to_string();
        tracing::warn!("{warning}");
        return Ok(CoraliserSettings {
            entries: Vec::new(),
            warnings: vec![warning],
        });
    }
    let entries: Vec<SettingsEntry> = serde_json::from_str(text).map_err(|e| SettingsError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.name.clone()) {
            return Err(SettingsError::DuplicateName { name: e.name.clone() });
        }
        let invalid = |reason: String| SettingsError::InvalidUrl {
            name: e.name.clone(),
            url: e.endpoint_url.clone(),
            reason,
        };
        let url = url::Url::parse(&e.endpoint_url).map_err(|err| invalid(err.to_string()))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(invalid(format!("unsupported scheme {:?}", url.scheme())));
        }
        if !(e.timeout.is_finite() && e.timeout > 0.0) {
            return Err(SettingsError::InvalidTimeout { name: e.name.clone() });
        }
    }
    let mut warnings = Vec::new();
    if entries.is_empty() {
        let warning = "coraliser settings list no entries".to_string();
        tracing::warn!("{warning}");
        warnings.push(warning);
    }
    Ok(CoraliserSettings { entries, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProxyStatus {
    Validating,
    Live,
    Unreachable,
}

pub struct ProxyAgent {
    pub entry: SettingsEntry,
    pub record: Option<AgentRecord>,
    status: Arc<Mutex<ProxyStatus>>,
    task: Option<JoinHandle<()>>,
}

impl ProxyAgent {
    pub fn status(&self) -> ProxyStatus {
        *self.status.lock()
    }
}

impl Drop for ProxyAgent {
    fn drop(&mut self) {
        if let Some(t) = self.task.take() {
            t.abort();
        }
    }
}

/// Any HTTP response counts as reachable; only transport failures do not.
pub async fn probe(http: &reqwest::Client, entry: &SettingsEntry) -> Result<(), String> {
    http.get(&entry.endpoint_url)
        .timeout(entry.timeout())
        .send()
        .await
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Probes the endpoint and, when it answers, registers the proxy agent and
/// starts its wait-forward-reply loop. `existing_token` adopts an agent
/// already registered under `entry.name` (after a restart).
pub async fn spawn_proxy_agent(
    entry: SettingsEntry,
    server: &CoralClient,
    existing_token: Option<String>,
) -> Result<ProxyAgent, ClientError> {
    let status = Arc::new(Mutex::new(ProxyStatus::Validating));
    let http = reqwest::Client::new();
    if let Err(reason) = probe(&http, &entry).await {
        tracing::warn!(agent = %entry.name, %reason, "endpoint unreachable; proxy not registered");
        *status.lock() = ProxyStatus::Unreachable;
        return Ok(ProxyAgent {
            entry,
            record: None,
            status,
            task: None,
        });
    }
    let (client, record) = match existing_token {
        Some(token) => (server.clone().with_token(token), None),
        None => {
            let key = SigningKey::generate(&mut rand::rngs::OsRng);
            let wallet = WalletAddress::from_bytes(key.verifying_key().to_bytes());
            let (c, r) = server
                .register_agent(&entry.name, &key, &entry.description, &wallet)
                .await?;
            (c, Some(r))
        }
    };
    *status.lock() = ProxyStatus::Live;
    let task = tokio::spawn(run_loop(entry.clone(), client, http));
    Ok(ProxyAgent {
        entry,
        record,
        status,
        task: Some(task),
    })
}

async fn run_loop(entry: SettingsEntry, client: CoralClient, http: reqwest::Client) {
    loop {
        let events = match client.wait_for_mentions(Duration::from_secs(30)).await {
            Ok(ev) => ev,
            Err(e) if e.code() == Some(ErrorCode::Timeout) => continue,
            Err(e) => {
                tracing::warn!(agent = %entry.name, error = %e, "wait_for_mentions failed");
                tokio::time::sleep(Duration::from_millis(500)).await;
                continue;
            }
        };
        for ev in events {
            handle_mention(&entry, &client, &http, &ev).await;
        }
    }
}

async fn handle_mention(entry: &SettingsEntry, client: &CoralClient, http: &reqwest::Client, ev: &MentionEvent) {
    let request = strip_mention(&ev.message.body, &entry.name);
    let reply = match forward(http, entry, request).await {
        Ok(text) => text,
        Err(err) => err,
    };
    let args = json!({
        "thread": ev.message.thread,
        "body": reply,
        "mentions": [ev.message.sender],
    });
    if let Err(e) = client.call("send_message", args).await {
        tracing::warn!(agent = %entry.name, error = %e, "could not post reply");
    }
}

/// POSTs `text` and returns the response body, or an error line suitable for
/// posting into the thread.
pub async fn forward(http: &reqwest::Client, entry: &SettingsEntry, text: String) -> Result<String, String> {
    let mut rb = http
        .post(&entry.endpoint_url)
        .timeout(entry.timeout())
        .header(reqwest::header::CONTENT_TYPE, "text/plain; charset=utf-8")
        .body(text);
    if let Some(auth) = &entry.auth_header {
        rb = rb.header(reqwest::header::AUTHORIZATION, auth);
    }
    let resp = rb.send().await.map_err(|e| describe(entry, &e))?;
    let status = resp.status();
    let body = resp.text().await.map_err(|e| describe(entry, &e))?;
    if status.is_success() {
        Ok(body)
    } else {
        Err(format!("error: endpoint returned HTTP {}: {}", status.as_u16(), body.trim()))
    }
}

fn describe(entry: &SettingsEntry, e: &reqwest::Error) -> String {
    if e.is_timeout() {
        format!("error: Timeout: endpoint gave no answer within {}s", entry.timeout)
    } else {
        format!("error: endpoint request failed: {e}")
    }
}

/// Removes the first `@name` token addressed to the proxy.
pub fn strip_mention(body: &str, name: &AgentId) -> String {
    let token = format!("@{name}");
    let mut search = 0;
    while let Some(pos) = body[search..].find(&token).map(|p| p + search) {
        let end = pos + token.len();
        let before_ok = body[..pos].chars().next_back().is_none_or(|c| !is_id_char(c));
        let after_ok = body[end..].chars().next().is_none_or(|c| !is_id_char(c));
        if before_ok && after_ok {
            let mut out = String::with_capacity(body.len());
            out.push_str(body[..pos].trim_end());
            let rest = body[end..].trim_start();
            if !out.is_empty() && !rest.is_empty() {
                out.push(' ');
            }
            out.push_str(rest);
            return out;
        }
        search = end;
    }
    body.to_string()
}

#[derive(Debug, Clone, Serialize)]
pub struct ProxyStatusView {
    pub name: AgentId,
    pub status: ProxyStatus,
}

/// The proxies started from one settings file.
pub struct Coraliser {
    proxies: Vec<ProxyAgent>,
}

impl Coraliser {
    /// Starts one proxy per entry. `token_of` returns the token of an agent
    /// that already exists on the node.
    pub async fn start(
        settings: &CoraliserSettings,
        server: &CoralClient,
        token_of: impl Fn(&AgentId) -> Option<String>,
    ) -> Result<Self, ClientError> {
        let mut proxies = Vec::new();
        for entry in &settings.entries {
            let existing = token_of(&entry.name);
            proxies.push(spawn_proxy_agent(entry.clone(), server, existing).await?);
        }
        Ok(Coraliser { proxies })
    }

    pub fn proxies(&self) -> &[ProxyAgent] {
        &self.proxies
    }

    pub fn statuses(&self) -> Vec<ProxyStatusView> {
        self.proxies
            .iter()
            .map(|p| ProxyStatusView {
                name: p.entry.name.clone(),
                status: p.status(),
            })
            .collect()
    }
}
