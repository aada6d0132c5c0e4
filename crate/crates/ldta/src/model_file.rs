//! Versioned JSON model files.
//!
//! Floats are written in shortest round-trip form, so save → load → save is
//! byte-identical and reloaded parameters are bit-identical.

use std::path::Path;
use std::sync::Arc;

use ldta_core::{DTParams, Matrix, ModelParams, TreeTopology};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{read_text, write_text};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// `vi` or `ep`.
    pub backend: String,
    pub iterations: usize,
    pub converged: bool,
    /// Final ELBO (VI) or log-evidence sum (EP).
    pub objective: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub k: usize,
    pub v: usize,
    /// `[child, parent]` pairs in branch order.
    pub edges: Vec<[String; 2]>,
    pub xi: Vec<f64>,
    /// `V` rows of `K` topic probabilities.
    pub word_topic: Vec<Vec<f64>>,
    pub vocab_sha256: Option<String>,
    pub metadata: Option<TrainingMetadata>,
}

impl ModelFile {
    pub fn from_params(params: &ModelParams, vocab_sha256: Option<String>, metadata: Option<TrainingMetadata>) -> Self {
        let topo = params.prior.topology();
        ModelFile {
            format_version: FORMAT_VERSION,
            k: params.topics(),
            v: params.vocab_size(),
            edges: topo.edges().into_iter().map(|(c, p)| [c, p]).collect(),
            xi: params.prior.xi().to_vec(),
            word_topic: (0..params.vocab_size()).map(|r| params.word_topic.row(r).to_vec()).collect(),
            vocab_sha256,
            metadata,
        }
    }

    pub fn to_params(&self) -> CliResult<ModelParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::Input(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let edges: Vec<(String, String)> = self.edges.iter().map(|[c, p]| (c.clone(), p.clone())).collect();
        let topo = TreeTopology::from_edges(&edges).map_err(|e| CliError::Input(format!("model tree: {e}")))?;
        if topo.leaf_count() != self.k || self.word_topic.len() != self.v {
            return Err(CliError::Input(format!(
                "model declares K={} V={} but stores K={} V={}",
                self.k,
                self.v,
                topo.leaf_count(),
                self.word_topic.len()
            )));
        }
        let prior = DTParams::new(Arc::new(topo), self.xi.clone()).map_err(|e| CliError::Input(format!("model prior: {e}")))?;
        let word_topic = Matrix::from_rows(&self.word_topic).map_err(|e| CliError::Input(format!("model word-topic matrix: {e}")))?;
        ModelParams::new(prior, word_topic).map_err(|e| CliError::Input(format!("model: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::format(path, e.line(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_json(&read_text(path)?, path)
    }
}
