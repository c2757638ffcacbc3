//! Domain model and engines of a Coral coordination node.
//!
//! * [`threads::ThreadEngine`] keeps the agent registry and the threads agents
//!   talk in, and routes `@mentions` to per-agent mailboxes.
//! * [`escrow::EscrowEngine`] holds task budgets in session vaults over a
//!   simulated token ledger.
//!
//! Neither engine does I/O. Time comes from the caller as integer seconds,
//! usually read from a [`Clock`].

pub mod clock;
pub mod error;
pub mod escrow;
pub mod ledger;
pub mod mention;
pub mod thread;
pub mod threads;
pub mod types;

pub use clock::{Clock, SimClock, SystemClock};
pub use error::{Error, ErrorCode, Result};
pub use escrow::{EscrowConfig, EscrowEngine, InitSession, SessionVault};
pub use ledger::{EntryKind, LedgerEntry};
pub use mention::parse_mentions;
pub use thread::{AgentRecord, MentionEvent, Message, Notification, StreamEvent, Thread, ThreadState};
pub use threads::{ThreadEngine, ThreadEngineConfig};
pub use types::{AgentId, MintId, PublicKey, SignatureBytes, ThreadId, Timestamp, TokenAmount, WalletAddress};
