//! `@<agent-id>` mention extraction.

use std::collections::BTreeSet;

use crate::types::{is_id_char, AgentId};

/// Returns the participants mentioned in `body`, in order of first occurrence.
///
/// A mention is `@` followed by the longest run of id characters, where the
/// `@` is not itself preceded by an id character (so `bob@example` is not a
/// mention). Tokens naming non-participants are ignored.
pub fn parse_mentions(body: &str, participants: &BTreeSet<AgentId>) -> Vec<AgentId> {
    let mut found: Vec<AgentId> = Vec::new();
    let mut prev: Option<char> = None;
    let mut chars = body.char_indices().peekable();
    while let Some((idx, c)) = chars.next() {
        if c == '@' && !prev.is_some_and(is_id_char) {
            let start = idx + 1;
            let mut end = start;
            while let Some(&(j, next)) = chars.peek() {
                if !is_id_char(next) {
                    break;
                }
                end = j + next.len_utf8();
                prev = Some(next);
                chars.next();
            }
            if end > start {
                if let Some(id) = participants.iter().find(|p| p.as_str() == &body[start..end]) {
                    if !found.contains(id) {
                        found.push(id.clone());
                    }
                }
                continue;
            }
        }
        prev = Some(c);
    }
    found
}
