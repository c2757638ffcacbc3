//! Minimal async client for a node's HTTP binding.

use std::time::Duration;

use coral_core::{AgentId, AgentRecord, ErrorCode, MentionEvent, StreamEvent, WalletAddress};
use ed25519_dalek::SigningKey;
use eventsource_stream::Eventsource;
use futures::{Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{code}: {message}")]
    Tool {
        status: u16,
        code: ErrorCode,
        message: String,
    },
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Tool { code, .. } => Some(*code),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    #[serde(default)]
    message: String,
}

#[derive(Clone, Debug)]
pub struct CoralClient {
    base: url::Url,
    http: reqwest::Client,
    token: Option<String>,
}

impl CoralClient {
    /// `base` is e.g. `http://127.0.0.1:5555`.
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let base = url::Url::parse(base).map_err(|e| ClientError::Protocol(format!("bad server url: {e}")))?;
        Ok(CoralClient {
            base,
            http: reqwest::Client::new(),
            token: None,
        })
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn base(&self) -> &url::Url {
        &self.base
    }

    fn url(&self, path: &str) -> url::Url {
        self.base.join(path).expect("static paths join")
    }

    fn authed(&self, rb: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    /// Sends one tool call. `caller` names a wallet for escrow tools.
    pub async fn call_with(
        &self,
        tool: &str,
        args: Value,
        caller: Option<&str>,
        request_id: Option<&str>,
    ) -> Result<Value, ClientError> {
        let mut envelope = json!({ "args": args });
        if let Some(c) = caller {
            envelope["caller"] = json!(c);
        }
        if let Some(r) = request_id {
            envelope["request_id"] = json!(r);
        }
        let rb = self.http.post(self.url(&format!("tools/{tool}"))).json(&envelope);
        let resp = self.authed(rb).send().await?;
        let status = resp.status().as_u16();
        let text = resp.text().await?;
        decode(status, &text)
    }

    pub async fn call(&self, tool: &str, args: Value) -> Result<Value, ClientError> {
        self.call_with(tool, args, None, None).await
    }

    /// Registers `id` with a key pair and returns a client holding its token.
    pub async fn register_agent(
        &self,
        id: &AgentId,
        key: &SigningKey,
        capabilities: &str,
        payment_wallet: &WalletAddress,
    ) -> Result<(CoralClient, AgentRecord), ClientError> {
        let args = json!({
            "id": id,
            "public_key": bs58::encode(key.verifying_key().as_bytes()).into_string(),
            "capabilities": capabilities,
            "payment_wallet": payment_wallet,
        });
        let v = self.call("register_agent", args).await?;
        let token = v["token"]
            .as_str()
            .ok_or_else(|| ClientError::Protocol("register_agent reply has no token".into()))?
            .to_string();
        let record: AgentRecord =
            serde_json::from_value(v["agent"].clone()).map_err(|e| ClientError::Protocol(e.to_string()))?;
        Ok((self.clone().with_token(token), record))
    }

    pub async fn wait_for_mentions(&self, timeout: Duration) -> Result<Vec<MentionEvent>, ClientError> {
        let v = self
            .call("wait_for_mentions", json!({ "timeout": timeout.as_secs_f64() }))
            .await?;
        serde_json::from_value(v["events"].clone()).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub async fn health(&self) -> Result<Value, ClientError> {
        let resp = self.http.get(self.url("health")).send().await?;
        let status = resp.status().as_u16();
        decode(status, &resp.text().await?)
    }

    pub async fn audit_csv(&self, session: Option<&str>) -> Result<String, ClientError> {
        let mut url = self.url("audit");
        if let Some(s) = session {
            url.query_pairs_mut().append_pair("session", s);
        }
        let resp = self.http.get(url).send().await?;
        if !resp.status().is_success() {
            let status = resp.status().as_u16();
            return Err(decode(status, &resp.text().await?).unwrap_err());
        }
        Ok(resp.text().await?)
    }

    pub async fn get_thread(&self, thread: &str) -> Result<Value, ClientError> {
        let resp = self.authed(self.http.get(self.url(&format!("threads/{thread}")))).send().await?;
        let status = resp.status().as_u16();
        decode(status, &resp.text().await?)
    }

    /// Test-mode routes.
    pub async fn advance_clock(&self, seconds: u64) -> Result<Value, ClientError> {
        self.post_json("test/clock", json!({ "seconds": seconds })).await
    }

    pub async fn test_mint(&self, to: &WalletAddress, mint: &str, amount: u64) -> Result<Value, ClientError> {
        self.post_json("test/mint", json!({ "to": to, "mint": mint, "amount": amount.to_string() }))
            .await
    }

    pub async fn state_dump(&self) -> Result<Value, ClientError> {
        let resp = self.http.get(self.url("test/state")).send().await?;
        let status = resp.status().as_u16();
        decode(status, &resp.text().await?)
    }

    async fn post_json(&self, path: &str, body: Value) -> Result<Value, ClientError> {
        let resp = self.http.post(self.url(path)).json(&body).send().await?;
        let status = resp.status().as_u16();
        decode(status, &resp.text().await?)
    }

    /// Opens the agent's event stream after `last_event_id`. Heartbeats are
    /// dropped; the stream ends when the connection does.
    pub async fn events(
        &self,
        agent: &AgentId,
        last_event_id: u64,
    ) -> Result<impl Stream<Item = Result<StreamEvent, ClientError>>, ClientError> {
        let rb = self
            .http
            .get(self.url(&format!("agents/{agent}/events")))
            .header("Last-Event-ID", last_event_id.to_string());
        let resp = self.authed(rb).send().await?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(decode(status, &resp.text().await?).unwrap_err());
        }
        let events = resp.bytes_stream().eventsource().filter_map(|item| async move {
            match item {
                Err(e) => Some(Err(ClientError::Protocol(e.to_string()))),
                Ok(ev) if ev.event == "heartbeat" => None,
                Ok(ev) => Some(parse_event(&ev.event, &ev.id, &ev.data)),
            }
        });
        Ok(events)
    }
}

fn parse_event(name: &str, id: &str, data: &str) -> Result<StreamEvent, ClientError> {
    let id: u64 = id
        .parse()
        .map_err(|_| ClientError::Protocol(format!("event without numeric id: {id:?}")))?;
    let notification = serde_json::from_value(json!({ "type": name, "data": serde_json::from_str::<Value>(data).map_err(|e| ClientError::Protocol(e.to_string()))? }))
        .map_err(|e| ClientError::Protocol(format!("unknown event {name:?}: {e}")))?;
    Ok(StreamEvent { id, notification })
}

fn decode(status: u16, text: &str) -> Result<Value, ClientError> {
    if (200..300).contains(&status) {
        return serde_json::from_str(text).map_err(|e| ClientError::Protocol(format!("{e}: {text}")));
    }
    match serde_json::from_str::<ErrorBody>(text) {
        Ok(b) => Err(ClientError::Tool {
            status,
            code: ErrorCode::parse(&b.error).unwrap_or(ErrorCode::Internal),
            message: b.message,
        }),
        Err(_) => Err(ClientError::Protocol(format!("HTTP {status}: {text}"))),
    }
}
