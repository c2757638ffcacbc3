//! CSV export of the ledger audit trail.

use std::io::Write;

use coral_core::LedgerEntry;

pub const HEADER: [&str; 8] = ["index", "kind", "session_id", "from", "to", "amount", "memo", "timestamp"];

pub fn write_csv<W: Write>(entries: &[LedgerEntry], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for e in entries {
        w.write_record([
            e.index.to_string(),
            e.kind.to_string(),
            e.session_id.clone().unwrap_or_default(),
            e.from.to_string(),
            e.to.to_string(),
            e.amount.units().to_string(),
            e.memo.clone(),
            e.timestamp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
