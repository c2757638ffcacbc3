//! Executes a [`Script`] step by step against a live node.

use std::collections::BTreeMap;

use coral_core::escrow::claim_message;
use coral_core::{AgentId, ErrorCode, MintId, TokenAmount, WalletAddress};
use coral_server::{ClientError, CoralClient};
use ed25519_dalek::{Signer, SigningKey};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::script::{Expected, Script, Step};

/// Deterministic key pair for `actor` under `seed`.
pub fn actor_key(seed: u64, actor: &str) -> SigningKey {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(actor.as_bytes());
    SigningKey::from_bytes(&h.finalize().into())
}

/// Payment wallet of `actor`: the raw public key bytes.
pub fn actor_wallet(seed: u64, actor: &str) -> WalletAddress {
    WalletAddress::from_bytes(actor_key(seed, actor).verifying_key().to_bytes())
}

pub fn actor_pubkey(seed: u64, actor: &str) -> String {
    bs58::encode(actor_key(seed, actor).verifying_key().as_bytes()).into_string()
}

/// Accepts `host:port` or a full URL.
pub fn normalize_server(addr: &str) -> String {
    if addr.starts_with("http://") || addr.starts_with("https://") {
        addr.trim_end_matches('/').to_string()
    } else {
        format!("http://{addr}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub step: usize,
    pub actor: String,
    pub tool: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clock: Option<Value>,
    pub request: Value,
    /// `"ok"` or the error name.
    pub outcome: String,
    pub response: Value,
    /// Events handed to the actor by this step.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Value>,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub transcript: Vec<TranscriptEntry>,
    pub audit_csv: String,
}

impl RunReport {
    pub fn transcript_jsonl(&self) -> String {
        self.transcript
            .iter()
            .map(|e| serde_json::to_string(e).expect("transcript serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("step {step} ({actor} {tool}): expected {expected}, got {got}")]
    Mismatch {
        step: usize,
        actor: String,
        tool: String,
        expected: Expected,
        got: String,
    },
    #[error("step {step} ({actor} {tool}): response {pointer} is {got}, expected {want}")]
    JsonMismatch {
        step: usize,
        actor: String,
        tool: String,
        pointer: String,
        want: Value,
        got: Value,
    },
    #[error("step {step}: {message}")]
    Script { step: usize, message: String },
    #[error("step {step}: transport failure: {source}")]
    Transport {
        step: usize,
        #[source]
        source: ClientError,
    },
}

impl RunError {
    pub fn step(&self) -> usize {
        match self {
            RunError::Mismatch { step, .. }
            | RunError::JsonMismatch { step, .. }
            | RunError::Script { step, .. }
            | RunError::Transport { step, .. } => *step,
        }
    }
}

/// A failed run still carries the transcript up to the failing step.
#[derive(Debug)]
pub struct Failed {
    pub error: RunError,
    pub report: RunReport,
}

struct Runner<'a> {
    script: &'a Script,
    server: CoralClient,
    tokens: BTreeMap<String, String>,
    vars: BTreeMap<String, Value>,
}

impl Runner<'_> {
    fn substitute(&self, step: usize, v: &Value) -> Result<Value, RunError> {
        Ok(match v {
            Value::String(s) => self.substitute_str(step, s)?,
            Value::Array(a) => Value::Array(a.iter().map(|x| self.substitute(step, x)).collect::<Result<_, _>>()?),
            Value::Object(o) => Value::Object(
                o.iter()
                    .map(|(k, x)| Ok((k.clone(), self.substitute(step, x)?)))
                    .collect::<Result<_, RunError>>()?,
            ),
            other => other.clone(),
        })
    }

    fn lookup(&self, step: usize, name: &str) -> Result<Value, RunError> {
        let seed = self.script.seed;
        if let Some(actor) = name.strip_prefix("wallet:") {
            return Ok(json!(actor_wallet(seed, actor)));
        }
        if let Some(actor) = name.strip_prefix("pubkey:") {
            return Ok(json!(actor_pubkey(seed, actor)));
        }
        self.vars.get(name).cloned().ok_or_else(|| RunError::Script {
            step,
            message: format!("undefined variable ${{{name}}}"),
        })
    }

    fn substitute_str(&self, step: usize, s: &str) -> Result<Value, RunError> {
        // a lone reference keeps the saved value's JSON type
        if let Some(name) = s.strip_prefix("${").and_then(|r| r.strip_suffix('}')) {
            if !name.contains("${") {
                return self.lookup(step, name);
            }
        }
        let mut out = String::new();
        let mut rest = s;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let end = rest[start..].find('}').ok_or_else(|| RunError::Script {
                step,
                message: format!("unterminated reference in {s:?}"),
            })? + start;
            match self.lookup(step, &rest[start + 2..end])? {
                Value::String(v) => out.push_str(&v),
                other => out.push_str(&other.to_string()),
            }
            rest = &rest[end + 1..];
        }
        out.push_str(rest);
        Ok(Value::String(out))
    }

    /// Fills in what the harness knows about the actor.
    async fn complete_args(&self, step: usize, s: &Step, mut args: Value) -> Result<Value, RunError> {
        if args.is_null() {
            args = json!({});
        }
        let obj = args.as_object_mut().ok_or_else(|| RunError::Script {
            step,
            message: "args must be an object".into(),
        })?;
        let seed = self.script.seed;
        match s.tool.as_str() {
            "register_agent" => {
                obj.entry("id").or_insert_with(|| json!(s.actor));
                obj.entry("public_key").or_insert_with(|| json!(actor_pubkey(seed, &s.actor)));
                obj.entry("payment_wallet")
                    .or_insert_with(|| json!(actor_wallet(seed, &s.actor)));
            }
            "claim" => {
                obj.entry("agent_id").or_insert_with(|| json!(s.actor));
                if !obj.contains_key("signature") {
                    let sid = obj.get("session_id").and_then(Value::as_str).unwrap_or_default().to_string();
                    let agent = obj.get("agent_id").and_then(Value::as_str).unwrap_or_default();
                    let amount = obj.get("amount").and_then(Value::as_str).unwrap_or_default();
                    // the session's mint is part of the signed message
                    let session = self
                        .server
                        .call("get_session", json!({ "session_id": sid }))
                        .await
                        .ok();
                    let mint = session
                        .as_ref()
                        .and_then(|v| v["mint"].as_str())
                        .unwrap_or("USDC")
                        .to_string();
                    if let (Ok(agent), Ok(units)) = (AgentId::new(agent), amount.parse::<u64>()) {
                        let msg = claim_message(&sid, &agent, TokenAmount::new(units), &MintId::new(mint));
                        let sig = actor_key(seed, &s.actor).sign(&msg);
                        obj.insert("signature".into(), json!(bs58::encode(sig.to_bytes()).into_string()));
                    }
                }
            }
            _ => {}
        }
        Ok(args)
    }

    async fn call(&self, step: usize, s: &Step, args: Value) -> Result<Result<Value, (ErrorCode, String)>, RunError> {
        let transport = |source| RunError::Transport { step, source };
        let r = match s.tool.as_str() {
            "test_mint" => {
                let to = args["to"].as_str().unwrap_or_default();
                let to = to.parse::<WalletAddress>().map_err(|e| RunError::Script {
                    step,
                    message: format!("test_mint: {e}"),
                })?;
                let amount = args["amount"]
                    .as_str()
                    .and_then(|a| a.parse::<u64>().ok())
                    .or_else(|| args["amount"].as_u64())
                    .unwrap_or(0);
                self.server
                    .test_mint(&to, args["mint"].as_str().unwrap_or("USDC"), amount)
                    .await
            }
            tool => {
                let client = match self.tokens.get(&s.actor) {
                    Some(t) => self.server.clone().with_token(t.clone()),
                    None => self.server.clone(),
                };
                let wallet = actor_wallet(self.script.seed, &s.actor).to_string();
                let caller = matches!(tool, "init_session" | "deposit" | "refund_leftover").then_some(wallet.as_str());
                client.call_with(tool, args, caller, None).await
            }
        };
        match r {
            Ok(v) => Ok(Ok(v)),
            Err(ClientError::Tool { code, message, .. }) => Ok(Err((code, message))),
            Err(e) => Err(transport(e)),
        }
    }
}

/// Runs every step in order and stops at the first mismatch.
pub async fn run_scenario(script: &Script, server: &str) -> Result<RunReport, Failed> {
    let mut report = RunReport::default();
    let server = match CoralClient::new(&normalize_server(server)) {
        Ok(c) => c,
        Err(source) => {
            return Err(Failed {
                error: RunError::Transport { step: 0, source },
                report,
            })
        }
    };
    let mut runner = Runner {
        script,
        server,
        tokens: BTreeMap::new(),
        vars: BTreeMap::new(),
    };
    for (i, s) in script.steps.iter().enumerate() {
        if let Err(error) = run_step(&mut runner, &mut report, i, s).await {
            return Err(Failed { error, report });
        }
    }
    if !script.steps.is_empty() {
        match runner.server.audit_csv(None).await {
            Ok(csv) => report.audit_csv = csv,
            Err(source) => {
                return Err(Failed {
                    error: RunError::Transport {
                        step: script.steps.len(),
                        source,
                    },
                    report,
                })
            }
        }
    }
    Ok(report)
}

async fn run_step(runner: &mut Runner<'_>, report: &mut RunReport, i: usize, s: &Step) -> Result<(), RunError> {
    let transport = |source| RunError::Transport { step: i, source };
    let clock = match s.clock_advance {
        Some(secs) => Some(runner.server.advance_clock(secs).await.map_err(transport)?["now"].clone()),
        None => None,
    };
    let args = runner.substitute(i, &s.args)?;
    let args = runner.complete_args(i, s, args).await?;
    let outcome = runner.call(i, s, args.clone()).await?;
    let (outcome_name, response) = match &outcome {
        Ok(v) => ("ok".to_string(), v.clone()),
        Err((code, message)) => (code.to_string(), json!({ "error": code.as_str(), "message": message })),
    };
    let events = response["events"].as_array().cloned().unwrap_or_default();
    report.transcript.push(TranscriptEntry {
        step: i,
        actor: s.actor.clone(),
        tool: s.tool.clone(),
        clock,
        request: args,
        outcome: outcome_name.clone(),
        response: response.clone(),
        events,
    });
    let matches = match (&s.expected, &outcome) {
        (Expected::Success, Ok(_)) => true,
        (Expected::Error(want), Err((got, _))) => want == got,
        _ => false,
    };
    if !matches {
        let got = match &outcome {
            Ok(_) => "success".to_string(),
            Err((code, msg)) => format!("error {code} ({msg})"),
        };
        return Err(RunError::Mismatch {
            step: i,
            actor: s.actor.clone(),
            tool: s.tool.clone(),
            expected: s.expected,
            got,
        });
    }
    for (pointer, want) in &s.expect_json {
        let want = runner.substitute(i, want)?;
        let got = response.pointer(pointer).cloned().unwrap_or(Value::Null);
        if got != want {
            return Err(RunError::JsonMismatch {
                step: i,
                actor: s.actor.clone(),
                tool: s.tool.clone(),
                pointer: pointer.clone(),
                want,
                got,
            });
        }
    }
    if let Ok(v) = &outcome {
        if s.tool == "register_agent" {
            if let Some(t) = v["token"].as_str() {
                runner.tokens.insert(s.actor.clone(), t.to_string());
            }
        }
        for (name, pointer) in &s.save {
            let pointer = pointer.as_str().ok_or_else(|| RunError::Script {
                step: i,
                message: format!("save target for {name} must be a JSON pointer string"),
            })?;
            let value = v.pointer(pointer).cloned().ok_or_else(|| RunError::Script {
                step: i,
                message: format!("response has nothing at {pointer}"),
            })?;
            runner.vars.insert(name.clone(), value);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_deterministic_per_seed_and_actor() {
        assert_eq!(actor_pubkey(1, "a"), actor_pubkey(1, "a"));
        assert_ne!(actor_pubkey(1, "a"), actor_pubkey(2, "a"));
        assert_ne!(actor_pubkey(1, "a"), actor_pubkey(1, "b"));
        assert_eq!(actor_wallet(3, "x").to_string(), actor_pubkey(3, "x"));
    }

    #[test]
    fn server_address_forms() {
        assert_eq!(normalize_server("127.0.0.1:5555"), "http://127.0.0.1:5555");
        assert_eq!(normalize_server("http://h:1/"), "http://h:1");
    }

    #[test]
    fn substitution() {
        let script = Script {
            name: "t".into(),
            seed: 0,
            steps: vec![],
        };
        let mut r = Runner {
            script: &script,
            server: CoralClient::new("http://127.0.0.1:1").unwrap(),
            tokens: BTreeMap::new(),
            vars: BTreeMap::new(),
        };
        r.vars.insert("n".into(), json!(5));
        r.vars.insert("t".into(), json!("abc"));
        let got = r
            .substitute(0, &json!({ "a": "${n}", "b": "x-${t}-${n}", "c": ["${wallet:bob}"] }))
            .unwrap();
        assert_eq!(got["a"], json!(5));
        assert_eq!(got["b"], json!("x-abc-5"));
        assert_eq!(got["c"][0], json!(actor_wallet(0, "bob")));
        assert!(matches!(r.substitute(0, &json!("${missing}")), Err(RunError::Script { .. })));
    }
}
