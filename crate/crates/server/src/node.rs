//! The node: both engines, the clock and the event log behind one tool-call
//! entry point.
//!
//! Every state-changing tool call is turned into an [`Op`], applied to the
//! engines and appended to the event log while the commit lock is held
//! exclusively; reads take the same lock shared. A client therefore never
//! observes state whose record is not yet in the log. Replaying the log
//! through the same [`Node::apply`] path rebuilds identical state.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use coral_core::escrow::ClaimedEvent;
use coral_core::{
    AgentId, Clock, Error, ErrorCode, EscrowConfig, EscrowEngine, InitSession, MintId, Notification,
    PublicKey, SignatureBytes, StreamEvent, ThreadEngine, ThreadEngineConfig, ThreadId, Timestamp,
    TokenAmount, WalletAddress,
};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Notify;

use crate::wal::{EventLog, LogError, Replayed};

/// A state transition as written to the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    RegisterAgent {
        id: AgentId,
        public_key: PublicKey,
        capabilities: String,
        payment_wallet: WalletAddress,
        token: String,
    },
    CreateThread {
        id: ThreadId,
        creator: AgentId,
        participants: Vec<AgentId>,
    },
    AddParticipant {
        thread: ThreadId,
        caller: AgentId,
        agent: AgentId,
    },
    RemoveParticipant {
        thread: ThreadId,
        caller: AgentId,
        agent: AgentId,
    },
    SendMessage {
        thread: ThreadId,
        sender: AgentId,
        body: String,
        #[serde(default)]
        mentions: Option<Vec<AgentId>>,
    },
    CloseThread {
        thread: ThreadId,
        caller: AgentId,
        #[serde(default)]
        summary: Option<String>,
    },
    /// `wait_for_mentions` handed `count` queued events to `agent`.
    ConsumeMentions { agent: AgentId, count: usize },
    InitSession(InitSession),
    Deposit {
        depositor: WalletAddress,
        session_id: String,
        amount: TokenAmount,
        #[serde(default)]
        mint: Option<MintId>,
    },
    Claim {
        session_id: String,
        agent_id: AgentId,
        amount: TokenAmount,
        signature: SignatureBytes,
    },
    RefundLeftover {
        caller: WalletAddress,
        session_id: String,
    },
    Mint {
        to: WalletAddress,
        mint: MintId,
        amount: TokenAmount,
    },
    AdvanceClock { seconds: u64 },
}

/// Response stored alongside a record so duplicate request ids survive restarts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub key: String,
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub index: u64,
    pub at: Timestamp,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<CachedResponse>,
}

/// Envelope of a tool call.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ToolRequest {
    #[serde(default)]
    pub tool: Option<String>,
    #[serde(default)]
    pub args: Value,
    /// Agent id or base58 wallet, depending on the tool.
    #[serde(default)]
    pub caller: Option<String>,
    #[serde(default)]
    pub request_id: Option<String>,
}

/// Serialized reply: HTTP status plus JSON body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResponse {
    pub status: u16,
    pub body: String,
}

impl ToolResponse {
    fn ok(value: &Value) -> Self {
        ToolResponse {
            status: 200,
            body: value.to_string(),
        }
    }

    pub fn error(err: &Error) -> Self {
        ToolResponse {
            status: status_for(err.code),
            body: json!({ "error": err.code.as_str(), "message": err.detail }).to_string(),
        }
    }
}

pub fn status_for(code: ErrorCode) -> u16 {
    use ErrorCode::*;
    match code {
        UnknownAgent | UnknownThread | UnknownSession | UnknownTool => 404,
        Unauthorized => 401,
        Timeout => 408,
        DuplicateAgent | DuplicateSession | AlreadyClaimed | AlreadyRefunded | ThreadClosed => 409,
        Internal => 500,
        _ => 400,
    }
}

/// Tool names served by [`Node::route_tool_call`].
pub const TOOLS: [&str; 14] = [
    "register_agent",
    "list_agents",
    "create_thread",
    "add_participant",
    "remove_participant",
    "send_message",
    "wait_for_mentions",
    "close_thread",
    "init_session",
    "deposit",
    "claim",
    "refund_leftover",
    "get_session",
    "audit_log",
];

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub threads: ThreadEngineConfig,
    pub escrow: EscrowConfig,
    pub idempotency_capacity: usize,
    /// Upper bound on a single `wait_for_mentions` call.
    pub max_wait: Duration,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            threads: ThreadEngineConfig::default(),
            escrow: EscrowConfig::default(),
            idempotency_capacity: 65_536,
            max_wait: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OpenError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("event log record #{record} at byte offset {offset} does not replay: {error}")]
    Replay { record: u64, offset: u64, error: Error },
}

#[derive(Default)]
struct IdempotencyCache {
    entries: HashMap<String, ToolResponse>,
    order: VecDeque<String>,
    capacity: usize,
}

impl IdempotencyCache {
    fn get(&self, key: &str) -> Option<&ToolResponse> {
        self.entries.get(key)
    }

    fn insert(&mut self, key: String, resp: ToolResponse) {
        if self.entries.insert(key.clone(), resp).is_none() {
            self.order.push_back(key);
            while self.order.len() > self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.entries.remove(&old);
                }
            }
        }
    }
}

struct Commit {
    log: Box<dyn EventLog>,
    next_index: u64,
    idempotency: IdempotencyCache,
    tokens: HashMap<AgentId, String>,
    halted: bool,
}

pub struct Node {
    config: NodeConfig,
    threads: ThreadEngine,
    escrow: EscrowEngine,
    clock: Arc<dyn Clock>,
    commit: RwLock<Commit>,
}

enum Caller {
    Agent(AgentId),
    Wallet(WalletAddress),
    Anonymous,
}

impl Caller {
    fn key(&self) -> String {
        match self {
            Caller::Agent(a) => format!("agent:{a}"),
            Caller::Wallet(w) => format!("wallet:{w}"),
            Caller::Anonymous => "anonymous".into(),
        }
    }
}

fn malformed(e: impl std::fmt::Display) -> Error {
    Error::new(ErrorCode::MalformedRequest, e.to_string())
}

fn parse_args<T: serde::de::DeserializeOwned>(args: Value) -> Result<T, Error> {
    let args = if args.is_null() { json!({}) } else { args };
    serde_json::from_value(args).map_err(|e| {
        // surface typed errors (bad key, bad id) with their own code
        let msg = e.to_string();
        for code in [ErrorCode::BadSignature, ErrorCode::Overflow] {
            if msg.starts_with(code.as_str()) {
                return Error::new(code, msg);
            }
        }
        malformed(msg)
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("domain types serialize")
}

#[derive(Deserialize)]
struct RegisterArgs {
    id: AgentId,
    public_key: String,
    #[serde(default)]
    capabilities: String,
    payment_wallet: WalletAddress,
}

#[derive(Deserialize)]
struct CreateThreadArgs {
    #[serde(default)]
    participants: Vec<AgentId>,
}

#[derive(Deserialize)]
struct ParticipantArgs {
    thread: ThreadId,
    agent: AgentId,
}

#[derive(Deserialize)]
struct SendArgs {
    thread: ThreadId,
    body: String,
    #[serde(default)]
    mentions: Option<Vec<AgentId>>,
}

#[derive(Deserialize)]
struct WaitArgs {
    #[serde(default = "default_wait")]
    timeout: f64,
}

fn default_wait() -> f64 {
    30.0
}

#[derive(Deserialize)]
struct CloseArgs {
    thread: ThreadId,
    #[serde(default)]
    summary: Option<String>,
}

#[derive(Deserialize)]
struct InitSessionArgs {
    #[serde(default)]
    operator: Option<WalletAddress>,
    session_id: String,
    mint: MintId,
    #[serde(default)]
    vault_mint: Option<MintId>,
    agent_ids: Vec<AgentId>,
    payment_wallets: Vec<WalletAddress>,
    developer_pubkeys: Vec<PublicKey>,
    max_caps: Vec<TokenAmount>,
}

#[derive(Deserialize)]
struct DepositArgs {
    session_id: String,
    amount: TokenAmount,
    #[serde(default)]
    mint: Option<MintId>,
}

#[derive(Deserialize)]
struct ClaimArgs {
    session_id: String,
    agent_id: AgentId,
    amount: TokenAmount,
    signature: SignatureBytes,
}

#[derive(Deserialize)]
struct SessionArgs {
    session_id: String,
}

#[derive(Deserialize)]
struct AuditArgs {
    #[serde(default)]
    session_id: Option<String>,
}

impl Node {
    pub fn new(config: NodeConfig, clock: Arc<dyn Clock>, log: Box<dyn EventLog>) -> Self {
        let capacity = config.idempotency_capacity;
        Node {
            threads: ThreadEngine::new(config.threads),
            escrow: EscrowEngine::new(config.escrow),
            clock,
            commit: RwLock::new(Commit {
                log,
                next_index: 0,
                idempotency: IdempotencyCache {
                    capacity,
                    ..Default::default()
                },
                tokens: HashMap::new(),
                halted: false,
            }),
            config,
        }
    }

    /// Builds a node and replays `records` into it before it serves anything.
    pub fn recover(
        config: NodeConfig,
        clock: Arc<dyn Clock>,
        log: Box<dyn EventLog>,
        records: Vec<Replayed>,
    ) -> Result<Self, OpenError> {
        let node = Node::new(config, clock, log);
        {
            let mut commit = node.commit.write();
            for r in records {
                let Replayed { offset, record } = r;
                node.apply(&mut commit, &record.op, record.at).map_err(|error| OpenError::Replay {
                    record: record.index,
                    offset,
                    error,
                })?;
                if let Some(cached) = record.response {
                    commit.idempotency.insert(
                        cached.key,
                        ToolResponse {
                            status: cached.status,
                            body: cached.body,
                        },
                    );
                }
                commit.next_index = record.index + 1;
            }
        }
        Ok(node)
    }

    pub fn threads(&self) -> &ThreadEngine {
        &self.threads
    }

    pub fn escrow(&self) -> &EscrowEngine {
        &self.escrow
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    /// Number of records written so far.
    pub fn log_len(&self) -> u64 {
        self.commit.read().next_index
    }

    /// Applies one op. Shared by live calls and replay, so both produce
    /// the same state and the same response body.
    fn apply(&self, commit: &mut Commit, op: &Op, at: Timestamp) -> Result<Value, Error> {
        match op {
            Op::RegisterAgent {
                id,
                public_key,
                capabilities,
                payment_wallet,
                token,
            } => {
                let record = self.threads.register_agent(
                    id.clone(),
                    public_key.as_bytes(),
                    capabilities.clone(),
                    *payment_wallet,
                    at,
                )?;
                commit.tokens.insert(id.clone(), token.clone());
                Ok(json!({ "agent": record, "token": token }))
            }
            Op::CreateThread { id, creator, participants } => {
                let t = self.threads.create_thread_with_id(id.clone(), creator, participants, at)?;
                Ok(to_value(&t))
            }
            Op::AddParticipant { thread, caller, agent } => {
                let set = self.threads.add_participant(thread, caller, agent)?;
                Ok(json!({ "thread": thread, "participants": set }))
            }
            Op::RemoveParticipant { thread, caller, agent } => {
                let set = self.threads.remove_participant(thread, caller, agent)?;
                Ok(json!({ "thread": thread, "participants": set }))
            }
            Op::SendMessage {
                thread,
                sender,
                body,
                mentions,
            } => {
                let m = self.threads.send_message(thread, sender, body.clone(), mentions.clone(), at)?;
                Ok(to_value(&m))
            }
            Op::CloseThread { thread, caller, summary } => {
                let t = self.threads.close_thread(thread, caller, summary.clone())?;
                Ok(to_value(&t))
            }
            Op::ConsumeMentions { agent, count } => {
                let events = self.threads.take_mentions(agent)?;
                if events.len() != *count {
                    return Err(Error::new(
                        ErrorCode::Internal,
                        format!("expected {count} queued mentions for {agent}, found {}", events.len()),
                    ));
                }
                Ok(json!({ "events": events }))
            }
            Op::InitSession(req) => Ok(to_value(&self.escrow.init_session(req.clone(), at)?)),
            Op::Deposit {
                depositor,
                session_id,
                amount,
                mint,
            } => Ok(to_value(&self.escrow.deposit(*depositor, session_id, *amount, mint.as_ref(), at)?)),
            Op::Claim {
                session_id,
                agent_id,
                amount,
                signature,
            } => {
                let receipt = self.escrow.claim(session_id, agent_id, *amount, signature, at)?;
                self.publish_claim(&receipt.event);
                Ok(to_value(&receipt.entry))
            }
            Op::RefundLeftover { caller, session_id } => {
                Ok(to_value(&self.escrow.refund_leftover(*caller, session_id, at)?))
            }
            Op::Mint { to, mint, amount } => Ok(to_value(&self.escrow.mint(*to, mint, *amount, at)?)),
            Op::AdvanceClock { seconds } => {
                if !self.clock.advance(*seconds) {
                    return Err(Error::new(ErrorCode::Unauthorized, "clock is not simulated"));
                }
                Ok(json!({ "now": self.clock.now() }))
            }
        }
    }

    fn publish_claim(&self, event: &ClaimedEvent) {
        // Agents named in a session need not be registered on this node.
        let _ = self.threads.notify(&event.agent_id, Notification::Claimed(event.clone()));
    }

    /// Applies `op` and writes its record under the exclusive commit lock.
    fn commit(&self, op: Op, idempotency_key: Option<String>) -> ToolResponse {
        let mut commit = self.commit.write();
        self.commit_locked(&mut commit, op, idempotency_key)
    }

    fn commit_locked(&self, commit: &mut Commit, op: Op, idempotency_key: Option<String>) -> ToolResponse {
        if let Some(key) = &idempotency_key {
            if let Some(cached) = commit.idempotency.get(key) {
                return cached.clone();
            }
        }
        if commit.halted {
            return ToolResponse::error(&Error::new(
                ErrorCode::Internal,
                "node halted after an event log failure",
            ));
        }
        let at = self.clock.now();
        let value = match self.apply(commit, &op, at) {
            Ok(v) => v,
            Err(e) => return ToolResponse::error(&e),
        };
        let resp = ToolResponse::ok(&value);
        let record = LogRecord {
            index: commit.next_index,
            at,
            op,
            response: idempotency_key.as_ref().map(|key| CachedResponse {
                key: key.clone(),
                status: resp.status,
                body: resp.body.clone(),
            }),
        };
        if let Err(e) = commit.log.append(&record) {
            tracing::error!(error = %e, "event log append failed; halting writes");
            commit.halted = true;
            return ToolResponse::error(&Error::new(ErrorCode::Internal, e.to_string()));
        }
        commit.next_index += 1;
        if let Some(key) = idempotency_key {
            commit.idempotency.insert(key, resp.clone());
        }
        resp
    }

    fn authenticate(&self, bearer: Option<&str>, claimed: Option<&str>) -> Result<AgentId, Error> {
        let token = bearer.ok_or_else(|| Error::new(ErrorCode::Unauthorized, "missing bearer token"))?;
        let commit = self.commit.read();
        let agent = commit
            .tokens
            .iter()
            .find(|(_, t)| t.as_str() == token)
            .map(|(a, _)| a.clone())
            .ok_or_else(|| Error::new(ErrorCode::Unauthorized, "unknown bearer token"))?;
        if let Some(c) = claimed {
            if c != agent.as_str() {
                return Err(Error::new(
                    ErrorCode::Unauthorized,
                    format!("token belongs to {agent}, not {c}"),
                ));
            }
        }
        Ok(agent)
    }

    /// Token issued to `agent` at registration.
    pub fn token_of(&self, agent: &AgentId) -> Option<String> {
        self.commit.read().tokens.get(agent).cloned()
    }

    /// Resolves the bearer token of a registered agent.
    pub fn agent_for_token(&self, token: &str) -> Option<AgentId> {
        self.authenticate(Some(token), None).ok()
    }

    fn wallet_caller(caller: Option<&str>) -> Result<WalletAddress, Error> {
        let c = caller.ok_or_else(|| malformed("caller wallet is required for this tool"))?;
        WalletAddress::from_base58(c)
    }

    /// Dispatches one tool call and renders the reply.
    pub async fn route_tool_call(&self, tool: &str, req: ToolRequest, bearer: Option<&str>) -> ToolResponse {
        match self.dispatch(tool, req, bearer).await {
            Ok(resp) => resp,
            Err(e) => ToolResponse::error(&e),
        }
    }

    async fn dispatch(&self, tool: &str, req: ToolRequest, bearer: Option<&str>) -> Result<ToolResponse, Error> {
        if let Some(t) = &req.tool {
            if t != tool {
                return Err(malformed(format!("envelope names tool {t:?} but was sent to {tool:?}")));
            }
        }
        let caller_hint = req.caller.as_deref();
        let key_for = |caller: &Caller| req.request_id.as_ref().map(|id| format!("{}|{id}", caller.key()));
        match tool {
            "list_agents" => {
                let _read = self.commit.read();
                Ok(ToolResponse::ok(&json!({ "agents": self.threads.list_agents() })))
            }
            "get_session" => {
                let args: SessionArgs = parse_args(req.args)?;
                let _read = self.commit.read();
                Ok(ToolResponse::ok(&to_value(&self.escrow.get_session(&args.session_id)?)))
            }
            "audit_log" => {
                let args: AuditArgs = parse_args(req.args)?;
                let _read = self.commit.read();
                Ok(ToolResponse::ok(&json!({ "entries": self.escrow.audit_log(args.session_id.as_deref()) })))
            }
            "register_agent" => {
                let args: RegisterArgs = parse_args(req.args)?;
                let key_bytes = bs58::decode(&args.public_key)
                    .into_vec()
                    .map_err(|e| Error::new(ErrorCode::BadSignature, format!("public key: {e}")))?;
                let public_key = PublicKey::from_slice(&key_bytes)?;
                let key = key_for(&Caller::Agent(args.id.clone()));
                let op = Op::RegisterAgent {
                    id: args.id,
                    public_key,
                    capabilities: args.capabilities,
                    payment_wallet: args.payment_wallet,
                    token: uuid::Uuid::new_v4().simple().to_string(),
                };
                Ok(self.commit(op, key))
            }
            "create_thread" => {
                let creator = self.authenticate(bearer, caller_hint)?;
                let args: CreateThreadArgs = parse_args(req.args)?;
                let key = key_for(&Caller::Agent(creator.clone()));
                let op = Op::CreateThread {
                    id: ThreadId::generate(),
                    creator,
                    participants: args.participants,
                };
                Ok(self.commit(op, key))
            }
            "add_participant" | "remove_participant" => {
                let caller = self.authenticate(bearer, caller_hint)?;
                let args: ParticipantArgs = parse_args(req.args)?;
                let key = key_for(&Caller::Agent(caller.clone()));
                let op = if tool == "add_participant" {
                    Op::AddParticipant {
                        thread: args.thread,
                        caller,
                        agent: args.agent,
                    }
                } else {
                    Op::RemoveParticipant {
                        thread: args.thread,
                        caller,
                        agent: args.agent,
                    }
                };
                Ok(self.commit(op, key))
            }
            "send_message" => {
                let sender = self.authenticate(bearer, caller_hint)?;
                let args: SendArgs = parse_args(req.args)?;
                let key = key_for(&Caller::Agent(sender.clone()));
                let op = Op::SendMessage {
                    thread: args.thread,
                    sender,
                    body: args.body,
                    mentions: args.mentions,
                };
                Ok(self.commit(op, key))
            }
            "close_thread" => {
                let caller = self.authenticate(bearer, caller_hint)?;
                let args: CloseArgs = parse_args(req.args)?;
                let key = key_for(&Caller::Agent(caller.clone()));
                Ok(self.commit(
                    Op::CloseThread {
                        thread: args.thread,
                        caller,
                        summary: args.summary,
                    },
                    key,
                ))
            }
            "wait_for_mentions" => {
                let agent = self.authenticate(bearer, caller_hint)?;
                let args: WaitArgs = parse_args(req.args)?;
                if !args.timeout.is_finite() || args.timeout < 0.0 {
                    return Err(malformed("timeout must be a non-negative number of seconds"));
                }
                let timeout = Duration::from_secs_f64(args.timeout).min(self.config.max_wait);
                let key = key_for(&Caller::Agent(agent.clone()));
                self.wait_for_mentions(agent, timeout, key).await
            }
            "init_session" => {
                let authority = Self::wallet_caller(caller_hint)?;
                let args: InitSessionArgs = parse_args(req.args)?;
                let key = key_for(&Caller::Wallet(authority));
                let op = Op::InitSession(InitSession {
                    authority,
                    operator: args.operator.unwrap_or(authority),
                    session_id: args.session_id,
                    mint: args.mint,
                    vault_mint: args.vault_mint,
                    agent_ids: args.agent_ids,
                    payment_wallets: args.payment_wallets,
                    developer_pubkeys: args.developer_pubkeys,
                    max_caps: args.max_caps,
                });
                Ok(self.commit(op, key))
            }
            "deposit" => {
                let depositor = Self::wallet_caller(caller_hint)?;
                let args: DepositArgs = parse_args(req.args)?;
                let key = key_for(&Caller::Wallet(depositor));
                Ok(self.commit(
                    Op::Deposit {
                        depositor,
                        session_id: args.session_id,
                        amount: args.amount,
                        mint: args.mint,
                    },
                    key,
                ))
            }
            "claim" => {
                let args: ClaimArgs = parse_args(req.args)?;
                let key = key_for(&Caller::Anonymous)
                    .map(|k| format!("claim:{}:{}|{k}", args.session_id, args.agent_id));
                Ok(self.commit(
                    Op::Claim {
                        session_id: args.session_id,
                        agent_id: args.agent_id,
                        amount: args.amount,
                        signature: args.signature,
                    },
                    key,
                ))
            }
            "refund_leftover" => {
                let caller = Self::wallet_caller(caller_hint)?;
                let args: SessionArgs = parse_args(req.args)?;
                let key = key_for(&Caller::Wallet(caller));
                Ok(self.commit(
                    Op::RefundLeftover {
                        caller,
                        session_id: args.session_id,
                    },
                    key,
                ))
            }
            other => Err(Error::new(ErrorCode::UnknownTool, format!("no tool named {other:?}"))),
        }
    }

    async fn wait_for_mentions(
        &self,
        agent: AgentId,
        timeout: Duration,
        key: Option<String>,
    ) -> Result<ToolResponse, Error> {
        let signal = self.threads.signal(&agent)?;
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let notified = signal.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            {
                let mut commit = self.commit.write();
                if let Some(k) = &key {
                    if let Some(cached) = commit.idempotency.get(k) {
                        return Ok(cached.clone());
                    }
                }
                let count = self.threads.pending_mentions(&agent)?;
                if count > 0 {
                    let op = Op::ConsumeMentions {
                        agent: agent.clone(),
                        count,
                    };
                    return Ok(self.commit_locked(&mut commit, op, key));
                }
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return Err(Error::new(
                    ErrorCode::Timeout,
                    format!("no mention for {agent} within {timeout:?}"),
                ));
            }
        }
    }

    /// Test-only: moves the simulated clock forward.
    pub fn advance_clock(&self, seconds: u64) -> ToolResponse {
        self.commit(Op::AdvanceClock { seconds }, None)
    }

    /// Test-only: credits a wallet from the simulated mint.
    pub fn mint(&self, to: WalletAddress, mint: MintId, amount: TokenAmount) -> ToolResponse {
        self.commit(Op::Mint { to, mint, amount }, None)
    }

    /// Thread read for `GET /threads/<id>`.
    pub fn read_thread(&self, thread: &ThreadId, bearer: Option<&str>) -> ToolResponse {
        let result = self.authenticate(bearer, None).and_then(|agent| {
            let _read = self.commit.read();
            self.threads.read_thread(thread, &agent)
        });
        match result {
            Ok(t) => ToolResponse::ok(&to_value(&t)),
            Err(e) => ToolResponse::error(&e),
        }
    }

    pub fn audit_entries(&self, session_id: Option<&str>) -> Vec<coral_core::LedgerEntry> {
        let _read = self.commit.read();
        self.escrow.audit_log(session_id)
    }

    /// Checks that `agent` exists and `bearer` belongs to it.
    pub fn authorize_stream(&self, agent: &AgentId, bearer: Option<&str>) -> Result<(), Error> {
        if self.threads.agent(agent).is_none() {
            return Err(Error::new(ErrorCode::UnknownAgent, format!("agent {agent} is not registered")));
        }
        self.authenticate(bearer, Some(agent.as_str())).map(|_| ())
    }

    pub fn stream_after(&self, agent: &AgentId, after: u64) -> Result<Vec<StreamEvent>, Error> {
        let _read = self.commit.read();
        self.threads.stream_after(agent, after)
    }

    pub fn last_event_id(&self, agent: &AgentId) -> Result<u64, Error> {
        let _read = self.commit.read();
        self.threads.last_event_id(agent)
    }

    pub fn signal(&self, agent: &AgentId) -> Result<Arc<Notify>, Error> {
        self.threads.signal(agent)
    }

    /// Canonical dump of all durable state, used to compare a node before
    /// and after a restart.
    pub fn state_dump(&self) -> Value {
        let commit = self.commit.read();
        let tokens: BTreeMap<&AgentId, &String> = commit.tokens.iter().collect();
        let balances: Vec<Value> = self
            .escrow
            .balances()
            .into_iter()
            .map(|(w, m, v)| json!({ "wallet": w, "mint": m, "amount": v }))
            .collect();
        let mut dump = json!({
            "log_len": commit.next_index,
            "agents": self.threads.list_agents(),
            "tokens": tokens,
            "threads": self.threads.threads(),
            "mailboxes": self.threads.mailboxes(),
            "sessions": self.escrow.sessions(),
            "ledger": self.escrow.audit_log(None),
            "balances": balances,
        });
        if self.clock.is_simulated() {
            dump["clock"] = json!(self.clock.now());
        }
        dump
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wal::NullLog;
    use coral_core::SimClock;
    use ed25519_dalek::{Signer, SigningKey};

    #[derive(Clone, Default)]
    struct MemLog(Arc<parking_lot::Mutex<Vec<LogRecord>>>);

    impl EventLog for MemLog {
        fn append(&mut self, record: &LogRecord) -> Result<(), LogError> {
            self.0.lock().push(record.clone());
            Ok(())
        }
    }

    struct BrokenLog;

    impl EventLog for BrokenLog {
        fn append(&mut self, _record: &LogRecord) -> Result<(), LogError> {
            Err(LogError::Io {
                path: "broken".into(),
                source: std::io::Error::other("disk full"),
            })
        }
    }

    fn node_with(log: impl EventLog + 'static) -> Node {
        Node::new(NodeConfig::default(), Arc::new(SimClock::new(0)), Box::new(log))
    }

    fn key(n: u8) -> SigningKey {
        SigningKey::from_bytes(&[n; 32])
    }

    fn body(resp: &ToolResponse) -> Value {
        serde_json::from_str(&resp.body).unwrap()
    }

    async fn call(node: &Node, tool: &str, args: Value, bearer: Option<&str>) -> ToolResponse {
        let req = ToolRequest {
            args,
            ..Default::default()
        };
        node.route_tool_call(tool, req, bearer).await
    }

    async fn register(node: &Node, id: &str, n: u8) -> String {
        let args = json!({
            "id": id,
            "public_key": bs58::encode(key(n).verifying_key().as_bytes()).into_string(),
            "payment_wallet": WalletAddress::derive(id),
        });
        let r = call(node, "register_agent", args, None).await;
        assert_eq!(r.status, 200, "{}", r.body);
        body(&r)["token"].as_str().unwrap().to_string()
    }

    #[tokio::test]
    async fn mention_round_trip_and_replay_equivalence() {
        let log = MemLog::default();
        let node = node_with(log.clone());
        let alice = register(&node, "alice", 1).await;
        let bob = register(&node, "bob", 2).await;
        let t = call(&node, "create_thread", json!({ "participants": ["bob"] }), Some(&alice)).await;
        let thread = body(&t)["id"].as_str().unwrap().to_string();
        let sent = call(
            &node,
            "send_message",
            json!({ "thread": thread, "body": "hi @bob" }),
            Some(&alice),
        )
        .await;
        assert_eq!(body(&sent)["mentions"], json!(["bob"]));
        let got = call(&node, "wait_for_mentions", json!({ "timeout": 1 }), Some(&bob)).await;
        assert_eq!(got.status, 200);
        assert_eq!(body(&got)["events"][0]["message"]["body"], "hi @bob");
        let empty = call(&node, "wait_for_mentions", json!({ "timeout": 0.01 }), Some(&bob)).await;
        assert_eq!(empty.status, 408);
        assert_eq!(body(&empty)["error"], "Timeout");

        let records: Vec<Replayed> = log
            .0
            .lock()
            .iter()
            .map(|r| Replayed {
                offset: 0,
                record: r.clone(),
            })
            .collect();
        assert_eq!(records.len(), 5);
        let again = Node::recover(
            NodeConfig::default(),
            Arc::new(SimClock::new(0)),
            Box::new(MemLog::default()),
            records,
        )
        .unwrap();
        assert_eq!(node.state_dump(), again.state_dump());
    }

    #[tokio::test]
    async fn request_id_replays_first_response() {
        let log = MemLog::default();
        let node = node_with(log.clone());
        let alice = register(&node, "alice", 1).await;
        let req = ToolRequest {
            args: json!({}),
            request_id: Some("r1".into()),
            ..Default::default()
        };
        let a = node.route_tool_call("create_thread", req.clone(), Some(&alice)).await;
        let b = node.route_tool_call("create_thread", req, Some(&alice)).await;
        assert_eq!(a, b);
        assert_eq!(node.threads().threads().len(), 1);
        assert_eq!(log.0.lock().len(), 2);
        assert_eq!(log.0.lock()[1].response.as_ref().unwrap().body, a.body);
    }

    #[tokio::test]
    async fn auth_and_dispatch_errors() {
        let node = node_with(NullLog);
        let alice = register(&node, "alice", 1).await;
        let r = call(&node, "create_thread", json!({}), None).await;
        assert_eq!((r.status, body(&r)["error"].clone()), (401, json!("Unauthorized")));
        let r = call(&node, "create_thread", json!({}), Some("nope")).await;
        assert_eq!(r.status, 401);
        let req = ToolRequest {
            caller: Some("bob".into()),
            ..Default::default()
        };
        assert_eq!(node.route_tool_call("create_thread", req, Some(&alice)).await.status, 401);
        let r = call(&node, "fly", json!({}), None).await;
        assert_eq!((r.status, body(&r)["error"].clone()), (404, json!("UnknownTool")));
        let r = call(&node, "send_message", json!({ "thread": 3 }), Some(&alice)).await;
        assert_eq!(body(&r)["error"], "MalformedRequest");
        let bad_key = json!({ "id": "eve", "public_key": "111", "payment_wallet": WalletAddress::derive("e") });
        let r = call(&node, "register_agent", bad_key, None).await;
        assert_eq!(body(&r)["error"], "BadSignature");
        let req = ToolRequest {
            tool: Some("list_agents".into()),
            ..Default::default()
        };
        assert_eq!(node.route_tool_call("create_thread", req, Some(&alice)).await.status, 400);
    }

    #[tokio::test]
    async fn log_failure_halts_writes() {
        let node = node_with(BrokenLog);
        let args = json!({
            "id": "alice",
            "public_key": bs58::encode(key(1).verifying_key().as_bytes()).into_string(),
            "payment_wallet": WalletAddress::derive("alice"),
        });
        let r = call(&node, "register_agent", args.clone(), None).await;
        assert_eq!(r.status, 500);
        let r = call(&node, "register_agent", args, None).await;
        assert_eq!(body(&r)["message"], "node halted after an event log failure");
    }

    #[tokio::test]
    async fn claim_is_pushed_to_the_agent_stream() {
        let node = node_with(NullLog);
        register(&node, "alice", 1).await;
        let authority = WalletAddress::derive("authority");
        let usdc = MintId::new("USDC");
        node.mint(authority, usdc.clone(), TokenAmount::new(100_000_000));
        let init = ToolRequest {
            caller: Some(authority.to_string()),
            args: json!({
                "session_id": "s1",
                "mint": "USDC",
                "agent_ids": ["alice"],
                "payment_wallets": [WalletAddress::derive("alice")],
                "developer_pubkeys": [bs58::encode(key(1).verifying_key().as_bytes()).into_string()],
                "max_caps": ["50000000"],
            }),
            ..Default::default()
        };
        assert_eq!(node.route_tool_call("init_session", init, None).await.status, 200);
        let dep = ToolRequest {
            caller: Some(authority.to_string()),
            args: json!({ "session_id": "s1", "amount": "50000000" }),
            ..Default::default()
        };
        assert_eq!(node.route_tool_call("deposit", dep, None).await.status, 200);
        let amount = TokenAmount::new(40_000_000);
        let alice = AgentId::new("alice").unwrap();
        let sig = key(1).sign(&coral_core::escrow::claim_message("s1", &alice, amount, &usdc));
        let r = call(
            &node,
            "claim",
            json!({
                "session_id": "s1",
                "agent_id": "alice",
                "amount": "40000000",
                "signature": bs58::encode(sig.to_bytes()).into_string(),
            }),
            None,
        )
        .await;
        assert_eq!(r.status, 200, "{}", r.body);
        let events = node.stream_after(&alice, 0).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].notification.event_name(), "claimed");
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_for(ErrorCode::UnknownSession), 404);
        assert_eq!(status_for(ErrorCode::AlreadyClaimed), 409);
        assert_eq!(status_for(ErrorCode::CapExceeded), 400);
        assert_eq!(status_for(ErrorCode::Timeout), 408);
    }
}
