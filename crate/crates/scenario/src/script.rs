//! Scenario script format.
//!
//! ```json
//! {
//!   "name": "payment-walkthrough",
//!   "seed": 7,
//!   "steps": [
//!     { "actor": "reviewer", "tool": "register_agent", "args": {} },
//!     { "actor": "authority", "tool": "refund_leftover",
//!       "args": { "session_id": "demo" },
//!       "clock_advance": 21600,
//!       "expect_json": { "/amount": "60000000" } }
//!   ]
//! }
//! ```
//!
//! Strings in `args` may reference `${name}` (a value saved by an earlier
//! step), `${wallet:actor}` or `${pubkey:actor}`.

use std::path::Path;

use coral_core::ErrorCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub name: String,
    /// Seed for the actors' deterministic key pairs.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub actor: String,
    pub tool: String,
    #[serde(default)]
    pub args: Value,
    #[serde(default)]
    pub expected: Expected,
    /// Seconds to move the server clock forward before the call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_advance: Option<u64>,
    /// Variables to capture from the response, as `name -> JSON pointer`.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub save: serde_json::Map<String, Value>,
    /// JSON pointer -> value the response must contain.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub expect_json: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Expected {
    #[default]
    Success,
    Error(ErrorCode),
}

impl Serialize for Expected {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Expected::Success => s.serialize_str("success"),
            Expected::Error(code) => {
                use serde::ser::SerializeMap;
                let mut m = s.serialize_map(Some(1))?;
                m.serialize_entry("error", code.as_str())?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Expected {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Error { error: String },
        }
        let name = match Raw::deserialize(d)? {
            Raw::Word(w) if w == "success" => return Ok(Expected::Success),
            Raw::Word(w) | Raw::Error { error: w } => w,
        };
        ErrorCode::parse(&name)
            .map(Expected::Error)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown error code {name:?}")))
    }
}

impl std::fmt::Display for Expected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expected::Success => f.write_str("success"),
            Expected::Error(c) => write!(f, "error {c}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
}

impl Script {
    pub fn parse(text: &str) -> Result<Script, ScriptError> {
        serde_json::from_str(text).map_err(|e| ScriptError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Script, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Script::parse(&text)
    }
}
