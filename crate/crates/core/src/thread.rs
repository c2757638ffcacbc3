//! Agents, threads, messages and the notifications they produce.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::escrow::ClaimedEvent;
use crate::types::{AgentId, PublicKey, ThreadId, Timestamp, WalletAddress};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: AgentId,
    pub public_key: PublicKey,
    pub capabilities: String,
    pub payment_wallet: WalletAddress,
    pub registered_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub thread: ThreadId,
    /// Dense per thread, starting at 1.
    pub seq: u64,
    pub sender: AgentId,
    pub body: String,
    pub mentions: Vec<AgentId>,
    pub sent_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreadState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub id: ThreadId,
    pub creator: AgentId,
    pub participants: BTreeSet<AgentId>,
    pub messages: Vec<Message>,
    pub state: ThreadState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    pub created_at: Timestamp,
    /// Former participants and the last seq they may read.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub departed: BTreeMap<AgentId, u64>,
}

impl Thread {
    pub fn is_open(&self) -> bool {
        self.state == ThreadState::Open
    }

    pub fn last_seq(&self) -> u64 {
        self.messages.last().map_or(0, |m| m.seq)
    }
}

/// A message delivered to one of the agents it mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionEvent {
    pub recipient: AgentId,
    /// Per-recipient arrival number; also the SSE event id.
    pub event_id: u64,
    pub message: Message,
}

/// Anything pushed to an agent's event stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum Notification {
    Mention(MentionEvent),
    Claimed(ClaimedEvent),
}

impl Notification {
    /// SSE `event:` name.
    pub fn event_name(&self) -> &'static str {
        match self {
            Notification::Mention(_) => "mention",
            Notification::Claimed(_) => "claimed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub id: u64,
    pub notification: Notification,
}
