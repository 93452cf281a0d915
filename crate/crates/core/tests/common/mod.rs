#![allow(dead_code)]

pub mod oracle;

use attnscope::{Mode, Model, ModelConfig, TokenizedInput};
use serde_json::Value;

pub const FOX_TEXT: &str = "The quick, brown fox jumps over the lazy";
pub const PAIR_A: &str = "the cat sat on the mat";
pub const PAIR_B: &str = "the cat lay on the rug";

pub fn fixture_config(mode: Mode) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: 64,
        max_seq: 16,
        mode,
    }
}

pub fn fixture_model(mode: Mode) -> Model {
    Model::synthetic(fixture_config(mode), 42).unwrap()
}

pub fn raw_input(ids: &[u32], mode: Mode) -> TokenizedInput {
    TokenizedInput {
        display: ids.iter().map(|i| format!("#{i}")).collect(),
        ids: ids.to_vec(),
        segments: vec![0; ids.len()],
        mode,
    }
}

/// Values produced by `fixtures/oracle.py`.
pub fn python_oracle() -> Value {
    serde_json::from_str(include_str!("../fixtures/oracle_out.json")).unwrap()
}
