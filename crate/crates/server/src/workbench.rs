//! Request-level operations shared by the HTTP handlers and the CLI, so
//! both produce the same bytes for the same input.

use attnscope::analysis::summarize_trace;
use attnscope::wire::{neuron_json, summaries_json, to_canonical_bytes, trace_json};
use attnscope::{
    neuron_detail, tokenize, AttentionTrace, Error, HeadSummary, HeadThumbnail, Model, Result,
    Thresholds, Vocabulary, DEFAULT_THUMBNAIL_RESOLUTION,
};
use serde_json::json;

#[derive(Debug, Clone)]
pub struct Workbench {
    model: Model,
    vocab: Vocabulary,
    thresholds: Thresholds,
    max_request_len: usize,
}

impl Workbench {
    /// `max_request_len` defaults to the model's `max_seq` and may not
    /// exceed it.
    pub fn new(
        model: Model,
        vocab: Vocabulary,
        thresholds: Thresholds,
        max_request_len: Option<usize>,
    ) -> Result<Self> {
        let max_seq = model.config.max_seq;
        let max_request_len = max_request_len.unwrap_or(max_seq);
        if max_request_len == 0 || max_request_len > max_seq {
            return Err(Error::Config(format!(
                "max request length {max_request_len} must be in 1..={max_seq}"
            )));
        }
        if vocab.len() > model.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but the model only embeds {}",
                vocab.len(),
                model.config.vocab_size
            )));
        }
        Ok(Self {
            model,
            vocab,
            thresholds,
            max_request_len,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn descriptor(&self) -> Vec<u8> {
        let c = &self.model.config;
        to_canonical_bytes(&json!({
            "layers": c.n_layers,
            "heads": c.n_heads,
            "d_head": c.d_head(),
            "mode": c.mode.as_str(),
            "vocab_size": c.vocab_size,
            "max_seq": c.max_seq,
        }))
    }

    pub fn run(&self, text: &str, text_b: Option<&str>) -> Result<AttentionTrace> {
        let input = tokenize(
            text,
            text_b,
            self.model.config.mode,
            &self.vocab,
            self.max_request_len,
        )?;
        self.model.forward(&input)
    }

    pub fn trace(&self, text: &str, text_b: Option<&str>, include_qk: bool) -> Result<Vec<u8>> {
        let trace = self.run(text, text_b)?;
        Ok(to_canonical_bytes(&trace_json(&trace, include_qk)))
    }

    pub fn neuron(
        &self,
        text: &str,
        text_b: Option<&str>,
        layer: usize,
        head: usize,
        token_index: usize,
    ) -> Result<Vec<u8>> {
        let trace = self.run(text, text_b)?;
        let detail = neuron_detail(&trace, layer, head, token_index)?;
        Ok(to_canonical_bytes(&neuron_json(&detail, &trace)))
    }

    pub fn summaries(
        &self,
        text: &str,
        text_b: Option<&str>,
    ) -> Result<Vec<(HeadSummary, HeadThumbnail)>> {
        let trace = self.run(text, text_b)?;
        summarize_trace(&trace, &self.thresholds, DEFAULT_THUMBNAIL_RESOLUTION)
    }

    pub fn heads(&self, text: &str, text_b: Option<&str>) -> Result<Vec<u8>> {
        Ok(to_canonical_bytes(&summaries_json(
            &self.summaries(text, text_b)?,
        )))
    }
}
