//! Deterministic in-memory token ledger with an append-only audit trail.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorCode, Result};
use crate::types::{MintId, SignatureBytes, Timestamp, TokenAmount, WalletAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntryKind {
    Mint,
    Deposit,
    Claim,
    Refund,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Mint => "Mint",
            EntryKind::Deposit => "Deposit",
            EntryKind::Claim => "Claim",
            EntryKind::Refund => "Refund",
        }
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EntryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Mint" => Ok(EntryKind::Mint),
            "Deposit" => Ok(EntryKind::Deposit),
            "Claim" => Ok(EntryKind::Claim),
            "Refund" => Ok(EntryKind::Refund),
            other => Err(Error::new(ErrorCode::MalformedRequest, format!("unknown entry kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub index: u64,
    pub kind: EntryKind,
    #[serde(default)]
    pub session_id: Option<String>,
    pub from: WalletAddress,
    pub to: WalletAddress,
    pub mint: MintId,
    pub amount: TokenAmount,
    pub memo: String,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureBytes>,
}

/// Memo attached to every entry that belongs to an escrow session.
pub fn session_memo(session_id: &str) -> String {
    format!("session:{session_id}")
}

/// Source address recorded on fixture mints.
pub fn mint_authority() -> WalletAddress {
    WalletAddress::derive("coral-mint-authority")
}

pub(crate) struct Transfer<'a> {
    pub kind: EntryKind,
    pub session_id: Option<&'a str>,
    pub from: WalletAddress,
    pub to: WalletAddress,
    pub mint: &'a MintId,
    pub amount: TokenAmount,
    pub timestamp: Timestamp,
    pub signature: Option<SignatureBytes>,
}

#[derive(Debug, Default, Clone)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
    balances: BTreeMap<(WalletAddress, MintId), TokenAmount>,
}

impl Ledger {
    pub fn balance(&self, wallet: &WalletAddress, mint: &MintId) -> TokenAmount {
        self.balances
            .get(&(*wallet, mint.clone()))
            .copied()
            .unwrap_or_default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Non-zero balances, ordered by (wallet, mint).
    pub fn balances(&self) -> impl Iterator<Item = (&WalletAddress, &MintId, TokenAmount)> {
        self.balances
            .iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|((w, m), v)| (w, m, *v))
    }

    /// Moves `amount` and appends the entry. Mints credit without a debit.
    /// Either both balances change and the entry is appended, or nothing does.
    pub(crate) fn transfer(&mut self, t: Transfer<'_>) -> Result<LedgerEntry> {
        let debit = t.kind != EntryKind::Mint;
        if debit {
            let have = self.balance(&t.from, t.mint);
            if have < t.amount {
                return Err(Error::new(
                    ErrorCode::InsufficientVault,
                    format!("{} holds {have} {}, needs {}", t.from, t.mint, t.amount),
                ));
            }
        }
        if !debit || t.from != t.to {
            let credited = self.balance(&t.to, t.mint).checked_add(t.amount)?;
            if debit {
                let debited = self.balance(&t.from, t.mint).checked_sub(t.amount)?;
                self.balances.insert((t.from, t.mint.clone()), debited);
            }
            self.balances.insert((t.to, t.mint.clone()), credited);
        }
        let entry = LedgerEntry {
            index: self.entries.len() as u64,
            kind: t.kind,
            session_id: t.session_id.map(str::to_owned),
            from: t.from,
            to: t.to,
            mint: t.mint.clone(),
            amount: t.amount,
            memo: match t.session_id {
                Some(id) => session_memo(id),
                None => "mint".to_string(),
            },
            timestamp: t.timestamp,
            signature: t.signature,
        };
        self.entries.push(entry.clone());
        Ok(entry)
    }
}
