//! Model-quality metrics: held-out perplexity, UMass coherence and topic
//! diversity.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::dtree::DTParams;
use crate::ep::EPDocState;
use crate::linalg::Matrix;
use crate::math::{exp, ln, CompensatedSum};
use crate::mfvi::VIDocState;
use crate::model::{Corpus, ModelParams};
use crate::{Error, Result};

/// Top words per topic used by coherence and diversity unless overridden.
pub const DEFAULT_TOP_WORDS: usize = 10;

/// Anything that carries a per-document posterior over `θ`.
pub trait Posterior {
    fn posterior(&self) -> &DTParams;
}

impl Posterior for DTParams {
    fn posterior(&self) -> &DTParams {
        self
    }
}

impl Posterior for VIDocState {
    fn posterior(&self) -> &DTParams {
        &self.zeta
    }
}

impl Posterior for EPDocState {
    fn posterior(&self) -> &DTParams {
        &self.zeta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub perplexity: f64,
    /// Mean of the defined per-topic scores.
    pub coherence: f64,
    pub diversity: f64,
    /// `None` for a topic none of whose pairs could be scored.
    pub topic_coherence: Vec<Option<f64>>,
}

/// `exp(−Σ_m Σ_v n_{mv} log Σ_k φ_{vk} E_{q_m}[θ_k] / Σ_m Σ_v n_{mv})`.
pub fn perplexity<S: Posterior>(params: &ModelParams, states: &[S], corpus: &Corpus) -> Result<f64> {
    if states.len() != corpus.len() {
        return Err(Error::DimensionMismatch {
            what: "posterior states",
            expected: corpus.len(),
            found: states.len(),
        });
    }
    let mut log_lik = CompensatedSum::default();
    let mut tokens = 0.0;
    for (m, (doc, state)) in corpus.docs().iter().zip(states).enumerate() {
        params.check_doc(doc)?;
        let mean = state.posterior().expected_theta();
        if mean.len() != params.topics() {
            return Err(Error::DimensionMismatch {
                what: "posterior topics",
                expected: params.topics(),
                found: mean.len(),
            });
        }
        for (w, n) in doc.iter() {
            let p: f64 = params.word_topic.row(w).iter().zip(&mean).map(|(a, b)| a * b).sum();
            if !(p > 0.0) {
                return Err(Error::ZeroPredictiveMass { doc: m, word: w });
            }
            log_lik.add(n as f64 * ln(p));
            tokens += n as f64;
        }
    }
    Ok(exp(-log_lik.value() / tokens))
}

/// The `n` most probable words of every topic, best first; ties go to the
/// lower word id.
pub fn top_words(word_topic: &Matrix, n: usize) -> Result<Vec<Vec<usize>>> {
    let v = word_topic.rows();
    if n == 0 || n > v {
        return Err(Error::InvalidArgument("top-word count must lie in 1..=V"));
    }
    Ok((0..word_topic.cols())
        .map(|k| {
            let mut ids: Vec<usize> = (0..v).collect();
            // Stable sort keeps ascending ids among equal probabilities.
            ids.sort_by(|&a, &b| word_topic[(b, k)].total_cmp(&word_topic[(a, k)]));
            ids.truncate(n);
            ids
        })
        .collect())
}

/// `U / (K·N)` with `U` the number of distinct words over all top lists.
pub fn diversity(word_topic: &Matrix, n_top: usize) -> Result<f64> {
    let lists = top_words(word_topic, n_top)?;
    let unique: BTreeSet<usize> = lists.iter().flatten().copied().collect();
    Ok(unique.len() as f64 / (lists.len() * n_top) as f64)
}

/// UMass coherence: per topic, the mean over ranked top-word pairs `i > j`
/// of `log((D(w_i, w_j) + 1) / D(w_j))`, with `D` counting documents.
/// Returns the mean over topics with at least one scored pair, and the
/// per-topic values.
pub fn coherence_umass(word_topic: &Matrix, corpus: &Corpus, n_top: usize) -> Result<(f64, Vec<Option<f64>>)> {
    if word_topic.rows() != corpus.vocab_size() {
        return Err(Error::DimensionMismatch {
            what: "vocabulary",
            expected: word_topic.rows(),
            found: corpus.vocab_size(),
        });
    }
    let lists = top_words(word_topic, n_top)?;
    let wanted: BTreeSet<usize> = lists.iter().flatten().copied().collect();
    // Sorted document ids per top word.
    let mut postings: BTreeMap<usize, Vec<usize>> = wanted.iter().map(|&w| (w, Vec::new())).collect();
    for (m, doc) in corpus.docs().iter().enumerate() {
        for &w in doc.words() {
            if let Some(p) = postings.get_mut(&w) {
                p.push(m);
            }
        }
    }
    let per_topic: Vec<Option<f64>> = lists
        .iter()
        .map(|list| {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 1..list.len() {
                for j in 0..i {
                    let dj = postings[&list[j]].len();
                    if dj == 0 {
                        log::debug!("word {} never occurs; skipping its pairs", list[j]);
                        continue;
                    }
                    let joint = co_occurrences(&postings[&list[i]], &postings[&list[j]]);
                    total += ln((joint as f64 + 1.0) / dj as f64);
                    pairs += 1;
                }
            }
            (pairs > 0).then(|| total / pairs as f64)
        })
        .collect();
    let defined: Vec<f64> = per_topic.iter().flatten().copied().collect();
    let mean = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok((mean, per_topic))
}

fn co_occurrences(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// All three metrics; coherence is measured on `corpus` itself.
pub fn evaluate<S: Posterior>(params: &ModelParams, states: &[S], corpus: &Corpus, n_top: usize) -> Result<MetricReport> {
    let perplexity = perplexity(params, states, corpus)?;
    let (coherence, topic_coherence) = coherence_umass(&params.word_topic, corpus, n_top)?;
    Ok(MetricReport {
        perplexity,
        coherence,
        diversity: diversity(&params.word_topic, n_top)?,
        topic_coherence,
    })
}
