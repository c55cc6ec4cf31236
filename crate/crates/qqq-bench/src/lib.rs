//! Fixtures shared by the benchmarks.

use qqq_core::{CircuitParams, ProtocolConfig};
use std::path::PathBuf;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn protocol(name: &str) -> ProtocolConfig {
    ProtocolConfig::load(&configs_dir().join(name)).expect("shipped config")
}

pub fn circuit(name: &str) -> CircuitParams {
    let text = std::fs::read_to_string(configs_dir().join(name)).expect("shipped circuit");
    serde_json::from_str(&text).expect("valid circuit")
}

/// Shipped config with decoherence switched off.
pub fn closed(name: &str) -> ProtocolConfig {
    let mut c = protocol(name);
    c.collapse = Some(None);
    c
}
