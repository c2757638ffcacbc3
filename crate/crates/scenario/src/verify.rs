//! Offline check of an audit CSV: per-session conservation recomputed from
//! the rows alone, optionally compared with expected totals.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
struct Row {
    index: u64,
    kind: String,
    session_id: String,
    from: String,
    to: String,
    amount: u64,
    memo: String,
    timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTotals {
    pub deposited: u64,
    pub claimed: u64,
    pub refunded: u64,
    /// Whether a refund row closed the session.
    pub closed: bool,
}

/// Expected totals per session; missing fields are not checked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    #[serde(default)]
    pub deposited: Option<u64>,
    #[serde(default)]
    pub claimed: Option<u64>,
    #[serde(default)]
    pub refunded: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectations {
    #[serde(default)]
    pub sessions: BTreeMap<String, Expectation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Report {
    pub sessions: BTreeMap<String, SessionTotals>,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("cannot read audit CSV: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed audit CSV row {row}: {reason}")]
    Malformed { row: u64, reason: String },
}

/// Checks every session in `csv`, or only `session` when given.
pub fn verify_audit<R: Read>(
    csv: R,
    session: Option<&str>,
    expectations: &Expectations,
) -> Result<Report, VerifyError> {
    let mut reader = csv::Reader::from_reader(csv);
    let headers = reader
        .headers()
        .map_err(|e| VerifyError::Malformed {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // row numbers count data rows from 1, header excluded
        let row = i as u64 + 1;
        let malformed = |reason: String| VerifyError::Malformed { row, reason };
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let r: Row = rec.deserialize(Some(&headers)).map_err(|e| malformed(e.to_string()))?;
        if !matches!(r.kind.as_str(), "Mint" | "Deposit" | "Claim" | "Refund") {
            return Err(malformed(format!("unknown kind {:?}", r.kind)));
        }
        rows.push((row, r));
    }

    let mut report = Report::default();
    let mut last_index: Option<u64> = None;
    for (row, r) in &rows {
        if last_index.is_some_and(|p| r.index <= p) {
            report
                .violations
                .push(format!("row {row}: index {} does not increase", r.index));
        }
        last_index = Some(r.index);
    }

    let wanted = |sid: &str| session.is_none_or(|s| s == sid);
    let mut claimed_to: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut claim_times: BTreeMap<&str, u64> = BTreeMap::new();
    let mut vault_of: BTreeMap<&str, &str> = BTreeMap::new();
    for (row, r) in &rows {
        if r.kind == "Mint" {
            if !r.session_id.is_empty() {
                report.violations.push(format!("row {row}: mint row carries session {}", r.session_id));
            }
            continue;
        }
        let sid = r.session_id.as_str();
        if sid.is_empty() {
            report.violations.push(format!("row {row}: {} row without session", r.kind));
            continue;
        }
        if !wanted(sid) {
            continue;
        }
        if r.memo != format!("session:{sid}") {
            report
                .violations
                .push(format!("row {row}: memo {:?} does not name session {sid}", r.memo));
        }
        let totals = report.sessions.entry(sid.to_string()).or_default();
        if totals.closed {
            report.violations.push(format!("row {row}: {} after session {sid} was refunded", r.kind));
        }
        let vault = match r.kind.as_str() {
            "Deposit" => r.to.as_str(),
            _ => r.from.as_str(),
        };
        if *vault_of.entry(sid).or_insert(vault) != vault {
            report.violations.push(format!("row {row}: session {sid} moves funds through a second vault"));
        }
        match r.kind.as_str() {
            "Deposit" => totals.deposited += r.amount,
            "Claim" => {
                totals.claimed += r.amount;
                if !claimed_to.entry(sid).or_default().insert(r.to.as_str()) {
                    report
                        .violations
                        .push(format!("row {row}: single-claim violated, {} claimed twice in {sid}", r.to));
                }
                let t = claim_times.entry(sid).or_default();
                *t = (*t).max(r.timestamp);
            }
            _ => {
                totals.refunded += r.amount;
                totals.closed = true;
                if claim_times.get(sid).is_some_and(|&t| t >= r.timestamp) {
                    report
                        .violations
                        .push(format!("row {row}: refund at {} does not follow every claim", r.timestamp));
                }
            }
        }
        if totals.claimed + totals.refunded > totals.deposited {
            report.violations.push(format!(
                "row {row}: vault of {sid} overdrawn: paid out {} of {} deposited",
                totals.claimed + totals.refunded,
                totals.deposited
            ));
        }
    }

    for (sid, t) in &report.sessions {
        if t.closed && t.deposited != t.claimed + t.refunded {
            report.violations.push(format!(
                "conservation violated for session {sid}: deposited {} != claimed {} + refunded {}",
                t.deposited, t.claimed, t.refunded
            ));
        }
        if !t.closed {
            report.warnings.push(format!(
                "session {sid} not refunded yet; {} still in the vault",
                t.deposited - t.claimed.min(t.deposited)
            ));
        }
    }
    if let Some(s) = session {
        if !report.sessions.contains_key(s) {
            report.warnings.push(format!("no rows for session {s}; nothing to check"));
        }
    }
    for (sid, e) in &expectations.sessions {
        if !wanted(sid) {
            continue;
        }
        let Some(t) = report.sessions.get(sid) else {
            report.violations.push(format!("expected session {sid} has no rows"));
            continue;
        };
        for (what, want, got) in [
            ("deposited", e.deposited, t.deposited),
            ("claimed", e.claimed, t.claimed),
            ("refunded", e.refunded, t.refunded),
        ] {
            if let Some(w) = want {
                if w != got {
                    report
                        .violations
                        .push(format!("session {sid}: {what} is {got}, expected {w}"));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "index,kind,session_id,from,to,amount,memo,timestamp\n";

    fn walkthrough() -> String {
        HEADER.to_string()
            + "0,Mint,,M,A,100000000,mint,0\n"
            + "1,Deposit,s1,A,V,100000000,session:s1,0\n"
            + "2,Claim,s1,V,R,40000000,session:s1,0\n"
            + "3,Refund,s1,V,A,60000000,session:s1,21600\n"
    }

    #[test]
    fn walkthrough_conserves() {
        let r = verify_audit(walkthrough().as_bytes(), None, &Expectations::default()).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        let t = &r.sessions["s1"];
        assert_eq!((t.deposited, t.claimed, t.refunded), (100_000_000, 40_000_000, 60_000_000));
    }

    #[test]
    fn tampered_amount_fails_conservation() {
        let csv = walkthrough().replace("60000000,session:s1,21600", "61000000,session:s1,21600");
        let r = verify_audit(csv.as_bytes(), None, &Expectations::default()).unwrap();
        assert!(!r.passed());
        assert!(r.violations.iter().any(|v| v.contains("conservation violated")), "{:?}", r.violations);
    }

    #[test]
    fn expectations_compared() {
        let mut e = Expectations::default();
        e.sessions.insert(
            "s1".into(),
            Expectation {
                claimed: Some(39_000_000),
                ..Default::default()
            },
        );
        let r = verify_audit(walkthrough().as_bytes(), None, &e).unwrap();
        assert_eq!(r.violations, ["session s1: claimed is 40000000, expected 39000000"]);
    }

    #[test]
    fn unknown_session_is_vacuous_pass_with_warning() {
        let r = verify_audit(walkthrough().as_bytes(), Some("nope"), &Expectations::default()).unwrap();
        assert!(r.passed());
        assert!(r.sessions.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let csv = walkthrough() + "4,Claim,s1,V,R,lots,session:s1,5\n";
        match verify_audit(csv.as_bytes(), None, &Expectations::default()).unwrap_err() {
            VerifyError::Malformed { row, .. } => assert_eq!(row, 5),
            other => panic!("{other}"),
        }
        let csv = walkthrough() + "4,Claim,s1\n";
        assert!(matches!(
            verify_audit(csv.as_bytes(), None, &Expectations::default()),
            Err(VerifyError::Malformed { row: 5, .. })
        ));
    }

    #[test]
    fn double_claim_and_late_claim_flagged() {
        let csv = walkthrough().replace(
            "3,Refund",
            "3,Claim,s1,V,R,1,session:s1,1\n4,Refund",
        );
        let r = verify_audit(csv.as_bytes(), None, &Expectations::default()).unwrap();
        assert!(r.violations.iter().any(|v| v.contains("single-claim")));
        let csv = walkthrough() + "4,Claim,s1,V,Q,1,session:s1,30000\n";
        let r = verify_audit(csv.as_bytes(), None, &Expectations::default()).unwrap();
        assert!(r.violations.iter().any(|v| v.contains("after session s1 was refunded")));
    }
}
