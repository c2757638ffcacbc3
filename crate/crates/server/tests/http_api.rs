mod common;

use std::time::Duration;

use clap::Parser;
use coral_core::{AgentId, ErrorCode, Notification};
use coral_server::{serve, CoralClient, ServerConfig};
use futures::StreamExt;
use serde_json::json;

#[tokio::test]
async fn threads_over_http() {
    let server = common::start(&[]).await;
    let anon = CoralClient::new(&server.url()).unwrap();
    let alice = common::agent(&anon, "alice", 1).await;
    let bob = common::agent(&anon, "bob", 2).await;

    let listed = anon.call("list_agents", json!({})).await.unwrap();
    assert_eq!(listed["agents"].as_array().unwrap().len(), 2);

    let t = alice.call("create_thread", json!({ "participants": ["bob"] })).await.unwrap();
    let thread = t["id"].as_str().unwrap().to_string();
    alice
        .call("send_message", json!({ "thread": thread, "body": "@bob ping" }))
        .await
        .unwrap();
    let events = bob.wait_for_mentions(Duration::from_secs(2)).await.unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].message.sender.as_str(), "alice");

    let err = bob.wait_for_mentions(Duration::from_millis(50)).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::Timeout));

    let view = bob.get_thread(&thread).await.unwrap();
    assert_eq!(view["messages"].as_array().unwrap().len(), 1);

    bob.call("close_thread", json!({ "thread": thread, "summary": "done" }))
        .await
        .unwrap();
    let err = alice
        .call("send_message", json!({ "thread": thread, "body": "late" }))
        .await
        .unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::ThreadClosed));

    let err = anon.call("create_thread", json!({})).await.unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::Unauthorized));
    server.shutdown().await;
}

#[tokio::test]
async fn waiting_call_is_woken_by_a_later_message() {
    let server = common::start(&[]).await;
    let anon = CoralClient::new(&server.url()).unwrap();
    let alice = common::agent(&anon, "alice", 1).await;
    let bob = common::agent(&anon, "bob", 2).await;
    let t = alice.call("create_thread", json!({ "participants": ["bob"] })).await.unwrap();
    let thread = t["id"].as_str().unwrap().to_string();
    let waiter = tokio::spawn(async move { bob.wait_for_mentions(Duration::from_secs(5)).await });
    tokio::time::sleep(Duration::from_millis(100)).await;
    alice
        .call("send_message", json!({ "thread": thread, "body": "@bob wake" }))
        .await
        .unwrap();
    let events = waiter.await.unwrap().unwrap();
    assert_eq!(events[0].message.body, "@bob wake");
    server.shutdown().await;
}

#[tokio::test]
async fn sse_delivers_and_resumes_from_last_event_id() {
    let server = common::start(&[]).await;
    let anon = CoralClient::new(&server.url()).unwrap();
    let alice = common::agent(&anon, "alice", 1).await;
    let bob = common::agent(&anon, "bob", 2).await;
    let bob_id = AgentId::new("bob").unwrap();
    let t = alice.call("create_thread", json!({ "participants": ["bob"] })).await.unwrap();
    let thread = t["id"].as_str().unwrap().to_string();

    let mut stream = Box::pin(bob.events(&bob_id, 0).await.unwrap());
    for i in 0..3 {
        alice
            .call("send_message", json!({ "thread": thread, "body": format!("@bob {i}") }))
            .await
            .unwrap();
    }
    let mut ids = Vec::new();
    for _ in 0..3 {
        let ev = tokio::time::timeout(Duration::from_secs(5), stream.next())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        assert!(matches!(ev.notification, Notification::Mention(_)));
        ids.push(ev.id);
    }
    assert_eq!(ids, [1, 2, 3]);
    drop(stream);

    let mut resumed = Box::pin(bob.events(&bob_id, 2).await.unwrap());
    let ev = tokio::time::timeout(Duration::from_secs(5), resumed.next())
        .await
        .unwrap()
        .unwrap()
        .unwrap();
    assert_eq!(ev.id, 3);

    // the stream does not consume: the poll path still sees all three
    let polled = bob.wait_for_mentions(Duration::from_secs(1)).await.unwrap();
    assert_eq!(polled.len(), 3);

    let ghost = AgentId::new("ghost").unwrap();
    let err = bob.events(&ghost, 0).await.err().unwrap();
    assert_eq!(err.code(), Some(ErrorCode::UnknownAgent));
    let err = anon.events(&bob_id, 0).await.err().unwrap();
    assert_eq!(err.code(), Some(ErrorCode::Unauthorized));
    server.shutdown().await;
}

#[tokio::test]
async fn malformed_envelope_and_unknown_tool() {
    let server = common::start(&[]).await;
    let http = reqwest::Client::new();
    let resp = http
        .post(format!("{}/tools/list_agents", server.url()))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(body["error"], "MalformedRequest");
    let resp = http
        .post(format!("{}/tools/teleport", server.url()))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 404);
    server.shutdown().await;
}

#[tokio::test]
async fn audit_csv_and_test_routes() {
    let server = common::start(&[]).await;
    let anon = CoralClient::new(&server.url()).unwrap();
    let w = coral_core::WalletAddress::derive("w");
    anon.test_mint(&w, "USDC", 500).await.unwrap();
    let now = anon.advance_clock(30).await.unwrap();
    assert_eq!(now["now"], 30);
    let csv = anon.audit_csv(None).await.unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "index,kind,session_id,from,to,amount,memo,timestamp");
    assert!(lines[1].starts_with("0,Mint,,"));
    let state = anon.state_dump().await.unwrap();
    assert_eq!(state["clock"], 30);
    assert_eq!(state["log_len"], 2);
    server.shutdown().await;
}

#[tokio::test]
async fn test_routes_absent_without_test_clock() {
    let server = serve(ServerConfig::parse_from(["coral-server", "--port", "0"])).await.unwrap();
    let resp = reqwest::Client::new()
        .post(format!("{}/test/clock", server.url()))
        .json(&json!({ "seconds": 1 }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 404);
    server.shutdown().await;
}

#[tokio::test]
async fn test_clock_refuses_public_bind() {
    let cfg = ServerConfig::parse_from(["coral-server", "--port", "0", "--bind", "0.0.0.0", "--enable-test-clock"]);
    let err = serve(cfg).await.err().unwrap();
    assert!(err.to_string().contains("loopback"), "{err}");
}

#[tokio::test]
async fn restart_replays_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.ndjson");
    let log_arg = log.to_str().unwrap();
    let server = common::start(&["--log", log_arg]).await;
    let anon = CoralClient::new(&server.url()).unwrap();
    let alice = common::agent(&anon, "alice", 1).await;
    common::agent(&anon, "bob", 2).await;
    let t = alice.call("create_thread", json!({ "participants": ["bob"] })).await.unwrap();
    alice
        .call("send_message", json!({ "thread": t["id"], "body": "@bob hello" }))
        .await
        .unwrap();
    anon.advance_clock(99).await.unwrap();
    let before = anon.state_dump().await.unwrap();
    server.shutdown().await;

    let server = common::start(&["--log", log_arg]).await;
    let anon = CoralClient::new(&server.url()).unwrap();
    let after = anon.state_dump().await.unwrap();
    assert_eq!(before, after);
    // the old token still works
    let alice = CoralClient::new(&server.url()).unwrap().with_token(alice.token().unwrap());
    alice.call("create_thread", json!({})).await.unwrap();
    server.shutdown().await;
}

#[tokio::test]
async fn corrupt_log_refuses_startup_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.ndjson");
    let log_arg = log.to_str().unwrap();
    let server = common::start(&["--log", log_arg]).await;
    let anon = CoralClient::new(&server.url()).unwrap();
    for i in 0..4 {
        anon.advance_clock(i + 1).await.unwrap();
    }
    server.shutdown().await;
    let mut bytes = std::fs::read(&log).unwrap();
    let second_line = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    let at = second_line + 30;
    bytes[at] ^= 0x01;
    std::fs::write(&log, bytes).unwrap();
    let err = serve(ServerConfig::parse_from([
        "coral-server",
        "--port",
        "0",
        "--enable-test-clock",
        "--log",
        log_arg,
    ]))
    .await
    .err()
    .unwrap();
    let msg = format!("{err:#}");
    assert!(msg.contains("record #1"), "{msg}");
    assert!(msg.contains(&format!("offset {second_line}")), "{msg}");
}
