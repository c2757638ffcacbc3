//! Scripted end-to-end scenarios against a live Coral node, and an offline
//! verifier for the audit CSVs they produce.
//!
//! A scenario is a JSON [`Script`]: ordered tool calls, each made by a named
//! actor and each with an expected outcome. Actors get deterministic key
//! pairs from the script seed, so two runs against fresh nodes write
//! byte-identical audit CSVs.

pub mod runner;
pub mod script;
pub mod verify;

pub use runner::{actor_key, actor_pubkey, actor_wallet, run_scenario, Failed, RunError, RunReport, TranscriptEntry};
pub use script::{Expected, Script, Step};
pub use verify::{verify_audit, Expectation, Expectations, Report, VerifyError};

/// Scripts shipped with the crate.
pub mod scripts {
    pub const PAYMENT_WALKTHROUGH: &str = include_str!("../scenarios/payment_walkthrough.json");
    pub const TESTING_PIPELINE: &str = include_str!("../scenarios/testing_pipeline.json");
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/threads.md")]
    mod threads {}
    #[doc = include_str!("../../../book/src/escrow.md")]
    mod escrow {}
    #[doc = include_str!("../../../book/src/node.md")]
    mod node {}
    #[doc = include_str!("../../../book/src/streaming.md")]
    mod streaming {}
    #[doc = include_str!("../../../book/src/coraliser.md")]
    mod coraliser {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
