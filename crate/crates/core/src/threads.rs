//! Agent registry, thread lifecycle and mention-routed delivery.
//!
//! Locking: the registry and the thread map each sit behind an `RwLock`;
//! every thread has its own `Mutex`, so sends to different threads run in
//! parallel while sends to one thread are totally ordered. Mailboxes are
//! locked last.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use tokio::sync::Notify;

use crate::error::{Error, ErrorCode, Result};
use crate::mention::parse_mentions;
use crate::thread::{
    AgentRecord, MentionEvent, Message, Notification, StreamEvent, Thread, ThreadState,
};
use crate::types::{AgentId, PublicKey, ThreadId, Timestamp, WalletAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThreadEngineConfig {
    pub max_body_bytes: usize,
    /// Stream events kept per agent for SSE resume.
    pub retained_events: usize,
}

impl Default for ThreadEngineConfig {
    fn default() -> Self {
        ThreadEngineConfig {
            max_body_bytes: 64 * 1024,
            retained_events: 1024,
        }
    }
}

#[derive(Debug, Default)]
struct Mailbox {
    pending: VecDeque<MentionEvent>,
    retained: VecDeque<StreamEvent>,
    next_id: u64,
}

#[derive(Debug)]
struct AgentSlot {
    record: AgentRecord,
    mailbox: Mutex<Mailbox>,
    signal: Arc<Notify>,
}

/// Snapshot of one agent's undelivered mentions and stream cursor.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct MailboxSnapshot {
    pub agent: AgentId,
    pub pending: Vec<MentionEvent>,
    pub retained: Vec<StreamEvent>,
    pub next_id: u64,
}

#[derive(Debug, Default)]
pub struct ThreadEngine {
    config: ThreadEngineConfig,
    agents: RwLock<HashMap<AgentId, Arc<AgentSlot>>>,
    threads: RwLock<HashMap<ThreadId, Arc<Mutex<Thread>>>>,
}

impl ThreadEngine {
    pub fn new(config: ThreadEngineConfig) -> Self {
        ThreadEngine {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> ThreadEngineConfig {
        self.config
    }

    pub fn register_agent(
        &self,
        id: AgentId,
        public_key: &[u8],
        capabilities: String,
        payment_wallet: WalletAddress,
        now: Timestamp,
    ) -> Result<AgentRecord> {
        let mut agents = self.agents.write();
        if agents.contains_key(&id) {
            return Err(Error::new(ErrorCode::DuplicateAgent, format!("agent {id} already registered")));
        }
        let public_key = PublicKey::from_slice(public_key)?;
        let record = AgentRecord {
            id: id.clone(),
            public_key,
            capabilities,
            payment_wallet,
            registered_at: now,
        };
        agents.insert(
            id,
            Arc::new(AgentSlot {
                record: record.clone(),
                mailbox: Mutex::new(Mailbox {
                    next_id: 1,
                    ..Default::default()
                }),
                signal: Arc::new(Notify::new()),
            }),
        );
        Ok(record)
    }

    /// All agents, ordered by registration time then id.
    pub fn list_agents(&self) -> Vec<AgentRecord> {
        let mut out: Vec<AgentRecord> = self.agents.read().values().map(|s| s.record.clone()).collect();
        out.sort_by(|a, b| a.registered_at.cmp(&b.registered_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn agent(&self, id: &AgentId) -> Option<AgentRecord> {
        self.agents.read().get(id).map(|s| s.record.clone())
    }

    fn slot(&self, id: &AgentId) -> Result<Arc<AgentSlot>> {
        self.agents
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::new(ErrorCode::UnknownAgent, format!("agent {id} is not registered")))
    }

    fn thread_handle(&self, id: &ThreadId) -> Result<Arc<Mutex<Thread>>> {
        self.threads
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::new(ErrorCode::UnknownThread, format!("thread {id} does not exist")))
    }

    pub fn create_thread(
        &self,
        creator: &AgentId,
        participants: &[AgentId],
        now: Timestamp,
    ) -> Result<Thread> {
        self.create_thread_with_id(ThreadId::generate(), creator, participants, now)
    }

    /// Like [`create_thread`](Self::create_thread) with a caller-chosen id,
    /// used when replaying a log.
    pub fn create_thread_with_id(
        &self,
        id: ThreadId,
        creator: &AgentId,
        participants: &[AgentId],
        now: Timestamp,
    ) -> Result<Thread> {
        {
            let agents = self.agents.read();
            for agent in std::iter::once(creator).chain(participants) {
                if !agents.contains_key(agent) {
                    return Err(Error::new(
                        ErrorCode::UnknownAgent,
                        format!("agent {agent} is not registered"),
                    ));
                }
            }
        }
        let mut members: BTreeSet<AgentId> = participants.iter().cloned().collect();
        members.insert(creator.clone());
        let thread = Thread {
            id: id.clone(),
            creator: creator.clone(),
            participants: members,
            messages: Vec::new(),
            state: ThreadState::Open,
            summary: None,
            created_at: now,
            departed: Default::default(),
        };
        let mut threads = self.threads.write();
        if threads.contains_key(&id) {
            return Err(Error::new(ErrorCode::MalformedRequest, format!("thread id {id} already in use")));
        }
        threads.insert(id, Arc::new(Mutex::new(thread.clone())));
        Ok(thread)
    }

    fn open_thread_for<'a>(thread: &'a mut Thread, caller: &AgentId) -> Result<&'a mut Thread> {
        if !thread.is_open() {
            return Err(Error::new(ErrorCode::ThreadClosed, format!("thread {} is closed", thread.id)));
        }
        if !thread.participants.contains(caller) {
            return Err(Error::new(
                ErrorCode::NotParticipant,
                format!("{caller} is not a participant of thread {}", thread.id),
            ));
        }
        Ok(thread)
    }

    pub fn add_participant(
        &self,
        thread: &ThreadId,
        caller: &AgentId,
        agent: &AgentId,
    ) -> Result<BTreeSet<AgentId>> {
        let handle = self.thread_handle(thread)?;
        let mut guard = handle.lock();
        let t = Self::open_thread_for(&mut guard, caller)?;
        if !self.agents.read().contains_key(agent) {
            return Err(Error::new(ErrorCode::UnknownAgent, format!("agent {agent} is not registered")));
        }
        if t.participants.insert(agent.clone()) {
            t.departed.remove(agent);
        }
        Ok(t.participants.clone())
    }

    pub fn remove_participant(
        &self,
        thread: &ThreadId,
        caller: &AgentId,
        agent: &AgentId,
    ) -> Result<BTreeSet<AgentId>> {
        let handle = self.thread_handle(thread)?;
        let mut guard = handle.lock();
        let t = Self::open_thread_for(&mut guard, caller)?;
        if !t.participants.contains(agent) {
            return Err(Error::new(
                ErrorCode::NotParticipant,
                format!("{agent} is not a participant of thread {}", t.id),
            ));
        }
        if t.participants.len() == 1 {
            return Err(Error::new(
                ErrorCode::EmptyAgents,
                "an open thread must keep at least one participant",
            ));
        }
        t.participants.remove(agent);
        let seen = t.last_seq();
        t.departed.insert(agent.clone(), seen);
        Ok(t.participants.clone())
    }

    /// Appends a message and enqueues one [`MentionEvent`] per mentioned agent.
    /// When `mentions` is `None` they are parsed from the body.
    pub fn send_message(
        &self,
        thread: &ThreadId,
        sender: &AgentId,
        body: String,
        mentions: Option<Vec<AgentId>>,
        now: Timestamp,
    ) -> Result<Message> {
        let handle = self.thread_handle(thread)?;
        let mut guard = handle.lock();
        let t = Self::open_thread_for(&mut guard, sender)?;
        if body.len() > self.config.max_body_bytes {
            return Err(Error::new(
                ErrorCode::InvalidInputLength,
                format!("message body is {} bytes, limit {}", body.len(), self.config.max_body_bytes),
            ));
        }
        let mentions = match mentions {
            None => parse_mentions(&body, &t.participants),
            Some(explicit) => {
                let mut unique: Vec<AgentId> = Vec::with_capacity(explicit.len());
                for m in explicit {
                    if !t.participants.contains(&m) {
                        return Err(Error::new(
                            ErrorCode::NotParticipant,
                            format!("mentioned agent {m} is not a participant of thread {}", t.id),
                        ));
                    }
                    if !unique.contains(&m) {
                        unique.push(m);
                    }
                }
                unique
            }
        };
        let message = Message {
            thread: t.id.clone(),
            seq: t.last_seq() + 1,
            sender: sender.clone(),
            body,
            mentions,
            sent_at: now,
        };
        t.messages.push(message.clone());

        // Still holding the thread lock, so recipients see this thread's
        // messages in seq order.
        let agents = self.agents.read();
        for recipient in &message.mentions {
            if let Some(slot) = agents.get(recipient) {
                let mut mailbox = slot.mailbox.lock();
                let event_id = mailbox.next_id;
                let event = MentionEvent {
                    recipient: recipient.clone(),
                    event_id,
                    message: message.clone(),
                };
                mailbox.pending.push_back(event.clone());
                self.retain(&mut mailbox, Notification::Mention(event));
                drop(mailbox);
                slot.signal.notify_waiters();
            }
        }
        Ok(message)
    }

    fn retain(&self, mailbox: &mut Mailbox, notification: Notification) -> u64 {
        let id = mailbox.next_id;
        mailbox.next_id += 1;
        mailbox.retained.push_back(StreamEvent { id, notification });
        while mailbox.retained.len() > self.config.retained_events {
            mailbox.retained.pop_front();
        }
        id
    }

    /// Pushes a non-mention notification onto an agent's event stream.
    pub fn notify(&self, agent: &AgentId, notification: Notification) -> Result<u64> {
        let slot = self.slot(agent)?;
        let id = self.retain(&mut slot.mailbox.lock(), notification);
        slot.signal.notify_waiters();
        Ok(id)
    }

    pub fn close_thread(
        &self,
        thread: &ThreadId,
        caller: &AgentId,
        summary: Option<String>,
    ) -> Result<Thread> {
        let handle = self.thread_handle(thread)?;
        let mut guard = handle.lock();
        let t = Self::open_thread_for(&mut guard, caller)?;
        t.state = ThreadState::Closed;
        t.summary = summary;
        Ok(t.clone())
    }

    /// Thread as visible to `caller`: participants see everything, former
    /// participants see history up to their removal.
    pub fn read_thread(&self, thread: &ThreadId, caller: &AgentId) -> Result<Thread> {
        let handle = self.thread_handle(thread)?;
        let t = handle.lock();
        if t.participants.contains(caller) {
            return Ok(t.clone());
        }
        if let Some(&upto) = t.departed.get(caller) {
            let mut view = t.clone();
            view.messages.retain(|m| m.seq <= upto);
            return Ok(view);
        }
        Err(Error::new(
            ErrorCode::NotParticipant,
            format!("{caller} has no access to thread {}", t.id),
        ))
    }

    pub fn thread(&self, thread: &ThreadId) -> Result<Thread> {
        Ok(self.thread_handle(thread)?.lock().clone())
    }

    /// All threads, sorted by id.
    pub fn threads(&self) -> Vec<Thread> {
        let handles: Vec<_> = self.threads.read().values().cloned().collect();
        let mut out: Vec<Thread> = handles.iter().map(|h| h.lock().clone()).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Removes and returns every queued mention for `agent` without blocking.
    pub fn take_mentions(&self, agent: &AgentId) -> Result<Vec<MentionEvent>> {
        let slot = self.slot(agent)?;
        let mut mailbox = slot.mailbox.lock();
        Ok(mailbox.pending.drain(..).collect())
    }

    /// Number of queued mentions for `agent`.
    pub fn pending_mentions(&self, agent: &AgentId) -> Result<usize> {
        Ok(self.slot(agent)?.mailbox.lock().pending.len())
    }

    /// Wake-up handle fired whenever something is pushed to `agent`'s mailbox.
    pub fn signal(&self, agent: &AgentId) -> Result<Arc<Notify>> {
        Ok(self.slot(agent)?.signal.clone())
    }

    /// Returns queued mentions at once, or waits for the next one. Waiting
    /// is driven by a notification, never by polling. An expired wait is
    /// [`ErrorCode::Timeout`], not an empty list.
    pub async fn wait_for_mentions(&self, agent: &AgentId, timeout: Duration) -> Result<Vec<MentionEvent>> {
        let signal = self.signal(agent)?;
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let notified = signal.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            let events = self.take_mentions(agent)?;
            if !events.is_empty() {
                return Ok(events);
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return Err(Error::new(
                    ErrorCode::Timeout,
                    format!("no mention for {agent} within {timeout:?}"),
                ));
            }
        }
    }

    /// Retained stream events with id greater than `after`.
    pub fn stream_after(&self, agent: &AgentId, after: u64) -> Result<Vec<StreamEvent>> {
        let slot = self.slot(agent)?;
        let mailbox = slot.mailbox.lock();
        Ok(mailbox.retained.iter().filter(|e| e.id > after).cloned().collect())
    }

    /// Id of the most recent stream event for `agent` (0 if none).
    pub fn last_event_id(&self, agent: &AgentId) -> Result<u64> {
        Ok(self.slot(agent)?.mailbox.lock().next_id - 1)
    }

    /// Mailbox contents for every agent, sorted by agent id.
    pub fn mailboxes(&self) -> Vec<MailboxSnapshot> {
        let slots: Vec<_> = self.agents.read().values().cloned().collect();
        let mut out: Vec<MailboxSnapshot> = slots
            .iter()
            .map(|s| {
                let m = s.mailbox.lock();
                MailboxSnapshot {
                    agent: s.record.id.clone(),
                    pending: m.pending.iter().cloned().collect(),
                    retained: m.retained.iter().cloned().collect(),
                    next_id: m.next_id,
                }
            })
            .collect();
        out.sort_by(|a, b| a.agent.cmp(&b.agent));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ed25519_dalek::SigningKey;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn key(seed: u8) -> [u8; 32] {
        SigningKey::from_bytes(&[seed; 32]).verifying_key().to_bytes()
    }

    fn engine_with(agents: &[&str]) -> ThreadEngine {
        let e = ThreadEngine::default_config();
        for (i, a) in agents.iter().enumerate() {
            e.register_agent(id(a), &key(i as u8), format!("{a} agent"), WalletAddress::derive(a), 0)
                .unwrap();
        }
        e
    }

    impl ThreadEngine {
        fn default_config() -> Self {
            ThreadEngine::new(ThreadEngineConfig::default())
        }
    }

    fn names(set: &BTreeSet<AgentId>) -> Vec<&str> {
        set.iter().map(AgentId::as_str).collect()
    }

    #[test]
    fn register_and_duplicate() {
        let e = ThreadEngine::default_config();
        let rec = e
            .register_agent(id("reviewer"), &key(1), "static analysis".into(), WalletAddress::derive("w1"), 7)
            .unwrap();
        assert_eq!(rec.id.as_str(), "reviewer");
        assert_eq!(rec.registered_at, 7);
        let err = e
            .register_agent(id("reviewer"), &key(2), String::new(), WalletAddress::derive("w2"), 8)
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::DuplicateAgent);
    }

    #[test]
    fn register_rejects_malformed_key() {
        let e = ThreadEngine::default_config();
        let err = e
            .register_agent(id("a"), &[0u8; 5], String::new(), WalletAddress::derive("a"), 0)
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::BadSignature);
        assert!(e.list_agents().is_empty());
    }

    #[test]
    fn hundred_registrations_all_listed() {
        let e = ThreadEngine::default_config();
        for i in 0..100u8 {
            e.register_agent(id(&format!("agent-{i:03}")), &key(i), String::new(), WalletAddress::derive("w"), i as u64)
                .unwrap();
        }
        let listed = e.list_agents();
        assert_eq!(listed.len(), 100);
        let expected: Vec<String> = (0..100).map(|i| format!("agent-{i:03}")).collect();
        let got: Vec<String> = listed.iter().map(|r| r.id.to_string()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn list_order_breaks_timestamp_ties_by_id() {
        let e = ThreadEngine::default_config();
        assert!(e.list_agents().is_empty());
        e.register_agent(id("b"), &key(1), String::new(), WalletAddress::derive("b"), 5).unwrap();
        e.register_agent(id("a"), &key(2), String::new(), WalletAddress::derive("a"), 5).unwrap();
        let got: Vec<String> = e.list_agents().iter().map(|r| r.id.to_string()).collect();
        assert_eq!(got, ["a", "b"]);
    }

    #[test]
    fn create_thread_cases() {
        let e = engine_with(&["planner", "researcher", "a"]);
        let t = e.create_thread(&id("planner"), &[id("researcher")], 1).unwrap();
        assert_eq!(names(&t.participants), ["planner", "researcher"]);
        assert!(t.messages.is_empty());
        assert!(t.is_open());
        let solo = e.create_thread(&id("a"), &[], 1).unwrap();
        assert_eq!(names(&solo.participants), ["a"]);
        assert_ne!(solo.id, t.id);
        let err = e.create_thread(&id("a"), &[id("ghost")], 1).unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownAgent);
    }

    #[test]
    fn participant_changes() {
        let e = engine_with(&["planner", "researcher", "tester", "outsider"]);
        let t = e.create_thread(&id("planner"), &[id("researcher")], 0).unwrap();
        let set = e.add_participant(&t.id, &id("planner"), &id("tester")).unwrap();
        assert_eq!(names(&set), ["planner", "researcher", "tester"]);
        let again = e.add_participant(&t.id, &id("researcher"), &id("tester")).unwrap();
        assert_eq!(again, set);
        assert_eq!(
            e.add_participant(&t.id, &id("outsider"), &id("tester")).unwrap_err().code,
            ErrorCode::NotParticipant
        );
        assert_eq!(
            e.add_participant(&t.id, &id("planner"), &id("ghost")).unwrap_err().code,
            ErrorCode::UnknownAgent
        );
        assert_eq!(
            e.add_participant(&ThreadId::from_string("nope"), &id("planner"), &id("tester"))
                .unwrap_err()
                .code,
            ErrorCode::UnknownThread
        );
        let set = e.remove_participant(&t.id, &id("planner"), &id("tester")).unwrap();
        assert_eq!(names(&set), ["planner", "researcher"]);
        assert_eq!(
            e.remove_participant(&t.id, &id("planner"), &id("tester")).unwrap_err().code,
            ErrorCode::NotParticipant
        );
        e.close_thread(&t.id, &id("planner"), None).unwrap();
        assert_eq!(
            e.add_participant(&t.id, &id("planner"), &id("tester")).unwrap_err().code,
            ErrorCode::ThreadClosed
        );
    }

    #[test]
    fn cannot_remove_last_participant() {
        let e = engine_with(&["a", "tester"]);
        let t = e.create_thread(&id("a"), &[id("tester")], 0).unwrap();
        let set = e.remove_participant(&t.id, &id("a"), &id("tester")).unwrap();
        assert_eq!(names(&set), ["a"]);
        let err = e.remove_participant(&t.id, &id("a"), &id("a")).unwrap_err();
        assert_eq!(err.code, ErrorCode::EmptyAgents);
    }

    #[test]
    fn mention_routing() {
        let e = engine_with(&["AgentA", "AgentB", "AgentC"]);
        let t = e.create_thread(&id("AgentA"), &[id("AgentB"), id("AgentC")], 0).unwrap();
        let m = e
            .send_message(&t.id, &id("AgentA"), "hey @AgentB can you look?".into(), None, 3)
            .unwrap();
        assert_eq!(m.seq, 1);
        assert_eq!(m.mentions, vec![id("AgentB")]);
        let got = e.take_mentions(&id("AgentB")).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].message, m);
        assert!(e.take_mentions(&id("AgentC")).unwrap().is_empty());

        let plain = e.send_message(&t.id, &id("AgentB"), "no tags".into(), None, 4).unwrap();
        assert_eq!(plain.seq, 2);
        assert!(plain.mentions.is_empty());
        assert!(e.mailboxes().iter().all(|m| m.pending.is_empty()));
    }

    #[test]
    fn explicit_mentions_are_authoritative() {
        let e = engine_with(&["a", "b", "c", "z"]);
        let t = e.create_thread(&id("a"), &[id("b"), id("c")], 0).unwrap();
        let m = e
            .send_message(&t.id, &id("a"), "@b".into(), Some(vec![id("c"), id("c")]), 0)
            .unwrap();
        assert_eq!(m.mentions, vec![id("c")]);
        let err = e
            .send_message(&t.id, &id("a"), "x".into(), Some(vec![id("z")]), 0)
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::NotParticipant);
        assert_eq!(e.thread(&t.id).unwrap().messages.len(), 1);
        let err = e.send_message(&t.id, &id("z"), "x".into(), None, 0).unwrap_err();
        assert_eq!(err.code, ErrorCode::NotParticipant);
    }

    #[test]
    fn oversized_body_rejected() {
        let e = engine_with(&["a"]);
        let t = e.create_thread(&id("a"), &[], 0).unwrap();
        assert!(e.send_message(&t.id, &id("a"), "x".repeat(65_536), None, 0).is_ok());
        let err = e.send_message(&t.id, &id("a"), "x".repeat(65_537), None, 0).unwrap_err();
        assert_eq!(err.code, ErrorCode::InvalidInputLength);
    }

    #[test]
    fn close_freezes_thread() {
        let e = engine_with(&["a", "b"]);
        let t = e.create_thread(&id("a"), &[id("b")], 0).unwrap();
        e.send_message(&t.id, &id("a"), "hi".into(), None, 0).unwrap();
        let closed = e.close_thread(&t.id, &id("b"), Some("done".into())).unwrap();
        assert_eq!(closed.state, ThreadState::Closed);
        assert_eq!(closed.summary.as_deref(), Some("done"));
        let before = serde_json::to_vec(&e.thread(&t.id).unwrap()).unwrap();
        assert_eq!(
            e.send_message(&t.id, &id("a"), "late".into(), None, 1).unwrap_err().code,
            ErrorCode::ThreadClosed
        );
        assert_eq!(e.close_thread(&t.id, &id("a"), None).unwrap_err().code, ErrorCode::ThreadClosed);
        assert_eq!(serde_json::to_vec(&e.thread(&t.id).unwrap()).unwrap(), before);
        assert_eq!(e.read_thread(&t.id, &id("a")).unwrap().messages.len(), 1);
    }

    #[test]
    fn removed_participant_reads_history_up_to_removal() {
        let e = engine_with(&["a", "b", "c"]);
        let t = e.create_thread(&id("a"), &[id("b")], 0).unwrap();
        e.send_message(&t.id, &id("a"), "one @b".into(), None, 0).unwrap();
        e.remove_participant(&t.id, &id("a"), &id("b")).unwrap();
        e.send_message(&t.id, &id("a"), "two".into(), None, 0).unwrap();
        assert_eq!(e.read_thread(&t.id, &id("b")).unwrap().messages.len(), 1);
        assert_eq!(e.read_thread(&t.id, &id("a")).unwrap().messages.len(), 2);
        assert_eq!(e.read_thread(&t.id, &id("c")).unwrap_err().code, ErrorCode::NotParticipant);
        // the mention delivered before removal is still deliverable
        assert_eq!(e.take_mentions(&id("b")).unwrap().len(), 1);
    }

    #[tokio::test]
    async fn wait_returns_queued_events_immediately() {
        let e = engine_with(&["a", "b"]);
        let t = e.create_thread(&id("a"), &[id("b")], 0).unwrap();
        e.send_message(&t.id, &id("a"), "@b".into(), None, 0).unwrap();
        let got = e.wait_for_mentions(&id("b"), Duration::from_secs(1)).await.unwrap();
        assert_eq!(got.len(), 1);
    }

    #[tokio::test(start_paused = true)]
    async fn wait_times_out_with_timeout_error() {
        let e = engine_with(&["a"]);
        let err = e.wait_for_mentions(&id("a"), Duration::from_secs(1)).await.unwrap_err();
        assert_eq!(err.code, ErrorCode::Timeout);
        let err = e.wait_for_mentions(&id("ghost"), Duration::from_secs(1)).await.unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownAgent);
    }

    #[tokio::test]
    async fn wait_wakes_on_send() {
        let e = Arc::new(engine_with(&["a", "b"]));
        let t = e.create_thread(&id("a"), &[id("b")], 0).unwrap();
        let waiter = {
            let e = e.clone();
            tokio::spawn(async move { e.wait_for_mentions(&id("b"), Duration::from_secs(10)).await })
        };
        tokio::time::sleep(Duration::from_millis(20)).await;
        e.send_message(&t.id, &id("a"), "@b wake".into(), None, 0).unwrap();
        let got = waiter.await.unwrap().unwrap();
        assert_eq!(got[0].message.body, "@b wake");
    }

    #[test]
    fn arrival_order_across_threads() {
        let e = engine_with(&["a", "b", "r"]);
        let t1 = e.create_thread(&id("a"), &[id("r")], 0).unwrap();
        let t2 = e.create_thread(&id("b"), &[id("r")], 0).unwrap();
        let sent = [
            e.send_message(&t1.id, &id("a"), "@r 1".into(), None, 1).unwrap(),
            e.send_message(&t2.id, &id("b"), "@r 2".into(), None, 2).unwrap(),
            e.send_message(&t1.id, &id("a"), "@r 3".into(), None, 3).unwrap(),
        ];
        let got = e.take_mentions(&id("r")).unwrap();
        let bodies: Vec<&str> = got.iter().map(|ev| ev.message.body.as_str()).collect();
        assert_eq!(bodies, sent.iter().map(|m| m.body.as_str()).collect::<Vec<_>>());
        let ids: Vec<u64> = got.iter().map(|ev| ev.event_id).collect();
        assert_eq!(ids, [1, 2, 3]);
    }

    #[test]
    fn stream_retention_is_bounded() {
        let e = ThreadEngine::new(ThreadEngineConfig {
            retained_events: 3,
            ..Default::default()
        });
        for (i, a) in ["a", "b"].iter().enumerate() {
            e.register_agent(id(a), &key(i as u8), String::new(), WalletAddress::derive(a), 0).unwrap();
        }
        let t = e.create_thread(&id("a"), &[id("b")], 0).unwrap();
        for i in 0..5 {
            e.send_message(&t.id, &id("a"), format!("@b {i}"), None, 0).unwrap();
        }
        let ids: Vec<u64> = e.stream_after(&id("b"), 0).unwrap().iter().map(|s| s.id).collect();
        assert_eq!(ids, [3, 4, 5]);
        let ids: Vec<u64> = e.stream_after(&id("b"), 4).unwrap().iter().map(|s| s.id).collect();
        assert_eq!(ids, [5]);
        assert_eq!(e.last_event_id(&id("b")).unwrap(), 5);
        // pending is not trimmed by retention
        assert_eq!(e.take_mentions(&id("b")).unwrap().len(), 5);
    }
}
