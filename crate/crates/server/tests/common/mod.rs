#![allow(dead_code)]

use clap::Parser;
use coral_core::{AgentId, WalletAddress};
use coral_server::{serve, CoralClient, ServerConfig, ServerHandle};
use ed25519_dalek::SigningKey;

pub async fn start(extra: &[&str]) -> ServerHandle {
    let mut args = vec!["coral-server", "--port", "0", "--enable-test-clock", "--heartbeat-secs", "1"];
    args.extend_from_slice(extra);
    serve(ServerConfig::parse_from(args)).await.expect("server starts")
}

pub fn key(n: u8) -> SigningKey {
    SigningKey::from_bytes(&[n; 32])
}

pub async fn agent(server: &CoralClient, id: &str, n: u8) -> CoralClient {
    let id = AgentId::new(id).unwrap();
    let (c, _) = server
        .register_agent(&id, &key(n), "test agent", &WalletAddress::derive(id.as_str()))
        .await
        .expect("register");
    c
}
