//! Kills a real server process with SIGKILL and checks that the restarted
//! process reports identical state.

mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

use coral_server::CoralClient;
use serde_json::json;

fn spawn(log: &Path) -> (Child, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_coral-server"))
        .args(["--port", "0", "--enable-test-clock", "--log"])
        .arg(log)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn coral-server");
    let stdout = child.stdout.take().unwrap();
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    let url = line
        .trim()
        .strip_prefix("coral-server listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    (child, url)
}

#[tokio::test]
async fn sigkill_then_restart_preserves_state() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.ndjson");
    let (mut child, url) = spawn(&log);
    let anon = CoralClient::new(&url).unwrap();
    let alice = common::agent(&anon, "alice", 1).await;
    common::agent(&anon, "bob", 2).await;
    let t = alice.call("create_thread", json!({ "participants": ["bob"] })).await.unwrap();
    for i in 0..20 {
        alice
            .call("send_message", json!({ "thread": t["id"], "body": format!("@bob step {i}") }))
            .await
            .unwrap();
        anon.advance_clock(1).await.unwrap();
    }
    let first = alice
        .call_with("create_thread", json!({}), None, Some("once"))
        .await
        .unwrap();
    let before = anon.state_dump().await.unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    let (mut child, url) = spawn(&log);
    let anon = CoralClient::new(&url).unwrap();
    let after = anon.state_dump().await.unwrap();
    assert_eq!(before, after);
    let alice = anon.clone().with_token(alice.token().unwrap());
    let again = alice
        .call_with("create_thread", json!({}), None, Some("once"))
        .await
        .unwrap();
    assert_eq!(first, again);
    child.kill().unwrap();
    child.wait().unwrap();
}
