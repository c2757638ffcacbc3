//! Session-vault escrow.
//!
//! An authority opens a session naming up to `max_agents` agents, each with a
//! payout wallet, a developer key and a withdrawal cap. Anyone may deposit
//! into the session's single vault. Each agent may claim once, strictly
//! before the claim deadline, by signing the canonical claim message. From
//! the deadline on, the authority or its operator can sweep what is left back
//! to the authority.
//!
//! ```text
//!   init_session ──► deposit* ──► claim (≤1 per agent, now < deadline)
//!                                   │
//!                                   ▼
//!                     refund_leftover (now ≥ deadline) ──► closed
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorCode, Result};
use crate::ledger::{mint_authority, EntryKind, Ledger, LedgerEntry, Transfer};
use crate::types::{AgentId, MintId, PublicKey, SignatureBytes, Timestamp, TokenAmount, WalletAddress};

pub const MAX_AGENTS: usize = 32;
pub const MIN_CAP_LAMPORTS: TokenAmount = TokenAmount::new(1_000);
/// Six hours.
pub const DEFAULT_CLAIM_WINDOW_SECONDS: u64 = 21_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowConfig {
    pub max_agents: usize,
    pub min_cap: TokenAmount,
    pub claim_window: u64,
}

impl Default for EscrowConfig {
    fn default() -> Self {
        EscrowConfig {
            max_agents: MAX_AGENTS,
            min_cap: MIN_CAP_LAMPORTS,
            claim_window: DEFAULT_CLAIM_WINDOW_SECONDS,
        }
    }
}

/// Arguments of `init_session`. The five per-agent lists are parallel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitSession {
    pub authority: WalletAddress,
    pub operator: WalletAddress,
    pub session_id: String,
    pub mint: MintId,
    /// Mint of the vault token account supplied with the call; defaults to `mint`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vault_mint: Option<MintId>,
    pub agent_ids: Vec<AgentId>,
    pub payment_wallets: Vec<WalletAddress>,
    pub developer_pubkeys: Vec<PublicKey>,
    pub max_caps: Vec<TokenAmount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionVault {
    pub session_id: String,
    pub authority: WalletAddress,
    pub operator: WalletAddress,
    pub mint: MintId,
    /// Ledger address holding the session's funds.
    pub vault: WalletAddress,
    pub created_at: Timestamp,
    pub claim_deadline: Timestamp,
    pub agent_ids: Vec<AgentId>,
    pub payment_wallets: Vec<WalletAddress>,
    pub developer_pubkeys: Vec<PublicKey>,
    pub max_caps: Vec<TokenAmount>,
    pub claimed: Vec<bool>,
    pub vault_balance: TokenAmount,
    pub deposited_total: TokenAmount,
    pub claimed_total: TokenAmount,
    pub refunded: bool,
    pub refunded_amount: TokenAmount,
}

impl SessionVault {
    pub fn agent_index(&self, agent: &AgentId) -> Option<usize> {
        self.agent_ids.iter().position(|a| a == agent)
    }
}

/// Emitted on every successful claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimedEvent {
    pub session_id: String,
    pub agent_id: AgentId,
    pub amount: TokenAmount,
    pub to: WalletAddress,
    pub ledger_index: u64,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimReceipt {
    pub entry: LedgerEntry,
    pub event: ClaimedEvent,
}

/// Bytes an agent's developer key signs to authorize a claim:
/// `coral-claim|<session_id>|<agent_id>|<amount>|<mint>`.
pub fn claim_message(session_id: &str, agent_id: &AgentId, amount: TokenAmount, mint: &MintId) -> Vec<u8> {
    format!("coral-claim|{session_id}|{agent_id}|{amount}|{mint}").into_bytes()
}

/// Ledger address of a session's vault.
pub fn vault_address(session_id: &str) -> WalletAddress {
    WalletAddress::derive(&format!("coral-vault|{session_id}"))
}

#[derive(Debug, Default)]
pub struct EscrowEngine {
    config: EscrowConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionVault>>>>,
    ledger: Mutex<Ledger>,
}

impl EscrowEngine {
    pub fn new(config: EscrowConfig) -> Self {
        EscrowEngine {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> EscrowConfig {
        self.config
    }

    fn session(&self, session_id: &str) -> Result<Arc<Mutex<SessionVault>>> {
        self.sessions
            .read()
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::new(ErrorCode::UnknownSession, format!("session {session_id:?} does not exist")))
    }

    /// Opens a session vault. Checks run in a fixed order: list lengths,
    /// emptiness, agent limit, vault mint, then per cap zero before minimum.
    pub fn init_session(&self, req: InitSession, now: Timestamp) -> Result<SessionVault> {
        if req.session_id.is_empty() {
            return Err(Error::new(ErrorCode::MalformedRequest, "session_id must not be empty"));
        }
        let mut sessions = self.sessions.write();
        if sessions.contains_key(&req.session_id) {
            return Err(Error::new(
                ErrorCode::DuplicateSession,
                format!("session {:?} already exists", req.session_id),
            ));
        }
        let claim_deadline = now
            .checked_add(self.config.claim_window)
            .ok_or_else(|| Error::new(ErrorCode::Overflow, "claim deadline overflows"))?;
        let n = req.agent_ids.len();
        if n != req.payment_wallets.len() || n != req.developer_pubkeys.len() || n != req.max_caps.len() {
            return Err(Error::new(
                ErrorCode::InvalidInputLength,
                format!(
                    "list lengths differ: agent_ids {n}, payment_wallets {}, developer_pubkeys {}, max_caps {}",
                    req.payment_wallets.len(),
                    req.developer_pubkeys.len(),
                    req.max_caps.len()
                ),
            ));
        }
        if n == 0 {
            return Err(Error::new(ErrorCode::EmptyAgents, "a session needs at least one agent"));
        }
        if n > self.config.max_agents {
            return Err(Error::new(
                ErrorCode::TooManyAgents,
                format!("{n} agents exceeds the limit of {}", self.config.max_agents),
            ));
        }
        if let Some(vault_mint) = &req.vault_mint {
            if vault_mint != &req.mint {
                return Err(Error::new(
                    ErrorCode::InvalidVaultMint,
                    format!("vault mint {vault_mint} does not match session mint {}", req.mint),
                ));
            }
        }
        for (i, cap) in req.max_caps.iter().enumerate() {
            if cap.is_zero() {
                return Err(Error::new(ErrorCode::ZeroCap, format!("max_caps[{i}] is zero")));
            }
            if *cap < self.config.min_cap {
                return Err(Error::new(
                    ErrorCode::CapTooSmall,
                    format!("max_caps[{i}] = {cap} is below the minimum {}", self.config.min_cap),
                ));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = req.agent_ids.iter().find(|a| !seen.insert(*a)) {
            return Err(Error::new(
                ErrorCode::DuplicateAgent,
                format!("agent {dup} listed twice in session"),
            ));
        }

        let vault = SessionVault {
            vault: vault_address(&req.session_id),
            session_id: req.session_id,
            authority: req.authority,
            operator: req.operator,
            mint: req.mint,
            created_at: now,
            claim_deadline,
            claimed: vec![false; n],
            agent_ids: req.agent_ids,
            payment_wallets: req.payment_wallets,
            developer_pubkeys: req.developer_pubkeys,
            max_caps: req.max_caps,
            vault_balance: TokenAmount::ZERO,
            deposited_total: TokenAmount::ZERO,
            claimed_total: TokenAmount::ZERO,
            refunded: false,
            refunded_amount: TokenAmount::ZERO,
        };
        sessions.insert(vault.session_id.clone(), Arc::new(Mutex::new(vault.clone())));
        Ok(vault)
    }

    /// Moves `amount` from `depositor` into the session vault. `source_mint`
    /// is the mint of the depositor's token account; `None` means the
    /// session mint.
    pub fn deposit(
        &self,
        depositor: WalletAddress,
        session_id: &str,
        amount: TokenAmount,
        source_mint: Option<&MintId>,
        now: Timestamp,
    ) -> Result<LedgerEntry> {
        if amount.is_zero() {
            return Err(Error::new(ErrorCode::ZeroAmount, "deposit amount must be positive"));
        }
        let handle = self.session(session_id)?;
        let mut s = handle.lock();
        if s.refunded {
            return Err(Error::new(
                ErrorCode::AlreadyRefunded,
                format!("session {session_id:?} has been refunded and is closed"),
            ));
        }
        if let Some(m) = source_mint {
            if m != &s.mint {
                return Err(Error::new(
                    ErrorCode::InvalidVaultMint,
                    format!("depositor token account mint {m} does not match session mint {}", s.mint),
                ));
            }
        }
        let new_balance = s.vault_balance.checked_add(amount)?;
        let new_total = s.deposited_total.checked_add(amount)?;
        let entry = self.ledger.lock().transfer(Transfer {
            kind: EntryKind::Deposit,
            session_id: Some(session_id),
            from: depositor,
            to: s.vault,
            mint: &s.mint,
            amount,
            timestamp: now,
            signature: None,
        })?;
        s.vault_balance = new_balance;
        s.deposited_total = new_total;
        Ok(entry)
    }

    /// Pays `amount` (≤ the agent's cap) to the agent's payment wallet.
    /// Each agent can claim once; the rest of its cap is left for the refund.
    pub fn claim(
        &self,
        session_id: &str,
        agent_id: &AgentId,
        amount: TokenAmount,
        signature: &SignatureBytes,
        now: Timestamp,
    ) -> Result<ClaimReceipt> {
        let handle = self.session(session_id)?;
        let mut s = handle.lock();
        if now >= s.claim_deadline {
            return Err(Error::new(
                ErrorCode::DeadlinePassed,
                format!("claims closed at {}, now {now}", s.claim_deadline),
            ));
        }
        let i = s.agent_index(agent_id).ok_or_else(|| {
            Error::new(
                ErrorCode::UnknownAgent,
                format!("agent {agent_id} is not part of session {session_id:?}"),
            )
        })?;
        if s.claimed[i] {
            return Err(Error::new(
                ErrorCode::AlreadyClaimed,
                format!("agent {agent_id} already claimed from session {session_id:?}"),
            ));
        }
        if amount.is_zero() {
            return Err(Error::new(ErrorCode::ZeroAmount, "claim amount must be positive"));
        }
        if amount > s.max_caps[i] {
            return Err(Error::new(
                ErrorCode::CapExceeded,
                format!("claim {amount} exceeds cap {}", s.max_caps[i]),
            ));
        }
        s.developer_pubkeys[i].verify(&claim_message(session_id, agent_id, amount, &s.mint), signature)?;
        if amount > s.vault_balance {
            return Err(Error::new(
                ErrorCode::InsufficientVault,
                format!("vault holds {}, claim is {amount}", s.vault_balance),
            ));
        }
        let new_balance = s.vault_balance.checked_sub(amount)?;
        let new_claimed = s.claimed_total.checked_add(amount)?;
        let to = s.payment_wallets[i];
        let entry = self.ledger.lock().transfer(Transfer {
            kind: EntryKind::Claim,
            session_id: Some(session_id),
            from: s.vault,
            to,
            mint: &s.mint,
            amount,
            timestamp: now,
            signature: Some(*signature),
        })?;
        s.claimed[i] = true;
        s.vault_balance = new_balance;
        s.claimed_total = new_claimed;
        let event = ClaimedEvent {
            session_id: session_id.to_string(),
            agent_id: agent_id.clone(),
            amount,
            to,
            ledger_index: entry.index,
            timestamp: now,
        };
        Ok(ClaimReceipt { entry, event })
    }

    /// Returns the whole vault balance to the authority and closes the session.
    pub fn refund_leftover(&self, caller: WalletAddress, session_id: &str, now: Timestamp) -> Result<LedgerEntry> {
        let handle = self.session(session_id)?;
        let mut s = handle.lock();
        if s.refunded {
            return Err(Error::new(
                ErrorCode::AlreadyRefunded,
                format!("session {session_id:?} was already refunded"),
            ));
        }
        if caller != s.authority && caller != s.operator {
            return Err(Error::new(
                ErrorCode::Unauthorized,
                format!("{caller} is neither authority nor operator of session {session_id:?}"),
            ));
        }
        if now < s.claim_deadline {
            return Err(Error::new(
                ErrorCode::DeadlineNotReached,
                format!("refund opens at {}, now {now}", s.claim_deadline),
            ));
        }
        let amount = s.vault_balance;
        let entry = self.ledger.lock().transfer(Transfer {
            kind: EntryKind::Refund,
            session_id: Some(session_id),
            from: s.vault,
            to: s.authority,
            mint: &s.mint,
            amount,
            timestamp: now,
            signature: None,
        })?;
        s.vault_balance = TokenAmount::ZERO;
        s.refunded = true;
        s.refunded_amount = amount;
        Ok(entry)
    }

    /// Test fixture: credits `to` with freshly minted tokens.
    pub fn mint(&self, to: WalletAddress, mint: &MintId, amount: TokenAmount, now: Timestamp) -> Result<LedgerEntry> {
        if amount.is_zero() {
            return Err(Error::new(ErrorCode::ZeroAmount, "mint amount must be positive"));
        }
        self.ledger.lock().transfer(Transfer {
            kind: EntryKind::Mint,
            session_id: None,
            from: mint_authority(),
            to,
            mint,
            amount,
            timestamp: now,
            signature: None,
        })
    }

    pub fn get_session(&self, session_id: &str) -> Result<SessionVault> {
        Ok(self.session(session_id)?.lock().clone())
    }

    /// All sessions, sorted by id.
    pub fn sessions(&self) -> Vec<SessionVault> {
        let handles: Vec<_> = self.sessions.read().values().cloned().collect();
        let mut out: Vec<SessionVault> = handles.iter().map(|h| h.lock().clone()).collect();
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        out
    }

    /// Ledger entries in index order, optionally only those of one session.
    pub fn audit_log(&self, session_id: Option<&str>) -> Vec<LedgerEntry> {
        let ledger = self.ledger.lock();
        match session_id {
            None => ledger.entries().to_vec(),
            Some(id) => {
                let memo = crate::ledger::session_memo(id);
                ledger.entries().iter().filter(|e| e.memo == memo).cloned().collect()
            }
        }
    }

    pub fn balance(&self, wallet: &WalletAddress, mint: &MintId) -> TokenAmount {
        self.ledger.lock().balance(wallet, mint)
    }

    /// Every non-zero balance, ordered by (wallet, mint).
    pub fn balances(&self) -> Vec<(WalletAddress, MintId, TokenAmount)> {
        self.ledger
            .lock()
            .balances()
            .map(|(w, m, v)| (*w, m.clone(), v))
            .collect()
    }
}
