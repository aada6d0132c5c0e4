//! The generative model: corpus types, synthetic generation, joint density,
//! evidence oracles and the matrix forms of Bayes' rule and the inner power.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::dtree::{self, DTParams, DensityForm};
use crate::linalg::Matrix;
use crate::math::{exp, lgamma, ln, log_sum_exp, sqrt};
use crate::{Error, Result};

/// Column-sum tolerance of the word-topic matrix.
pub const COLUMN_TOL: f64 = 1e-10;

/// Sparse bag of words. `words` is strictly increasing, `counts` are ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    words: Vec<usize>,
    counts: Vec<u32>,
}

impl Document {
    /// Merges repeated ids and drops zero counts.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut map: BTreeMap<usize, u32> = BTreeMap::new();
        for (w, c) in pairs {
            if c > 0 {
                *map.entry(w).or_insert(0) += c;
            }
        }
        Document {
            words: map.keys().copied().collect(),
            counts: map.values().copied().collect(),
        }
    }

    /// Dense counts over a vocabulary of size `v`, ignoring zeros.
    pub fn from_dense(counts: &[u32]) -> Self {
        Self::from_pairs(counts.iter().enumerate().map(|(w, &c)| (w, c)))
    }

    pub fn words(&self) -> &[usize] {
        &self.words
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of distinct words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `N = Σ n_v`.
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.words.iter().copied().zip(self.counts.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab_size: usize,
    docs: Vec<Document>,
    vocab: Option<Vec<String>>,
}

impl Corpus {
    pub fn new(vocab_size: usize, docs: Vec<Document>) -> Result<Self> {
        for (m, doc) in docs.iter().enumerate() {
            if doc.is_empty() {
                return Err(Error::EmptyDocument { doc: m });
            }
            if let Some(&word) = doc.words.last().filter(|&&w| w >= vocab_size) {
                return Err(Error::WordOutOfRange { word, vocab_size });
            }
        }
        Ok(Corpus {
            vocab_size,
            docs,
            vocab: None,
        })
    }

    pub fn with_vocab(mut self, vocab: Vec<String>) -> Result<Self> {
        if vocab.len() != self.vocab_size {
            return Err(Error::DimensionMismatch {
                what: "vocabulary",
                expected: self.vocab_size,
                found: vocab.len(),
            });
        }
        self.vocab = Some(vocab);
        Ok(self)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn vocab(&self) -> Option<&[String]> {
        self.vocab.as_deref()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Splits off the last `n` documents.
    pub fn split_tail(&self, n: usize) -> (Corpus, Corpus) {
        let cut = self.docs.len().saturating_sub(n);
        let head = Corpus {
            vocab_size: self.vocab_size,
            docs: self.docs[..cut].to_vec(),
            vocab: self.vocab.clone(),
        };
        let tail = Corpus {
            vocab_size: self.vocab_size,
            docs: self.docs[cut..].to_vec(),
            vocab: self.vocab.clone(),
        };
        (head, tail)
    }
}

/// Prior `ξ` plus the `V × K` word-topic matrix `φ` with columns on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub prior: DTParams,
    pub word_topic: Matrix,
}

impl ModelParams {
    pub fn new(prior: DTParams, word_topic: Matrix) -> Result<Self> {
        let k = prior.topology().leaf_count();
        if word_topic.cols() != k {
            return Err(Error::DimensionMismatch {
                what: "word-topic columns",
                expected: k,
                found: word_topic.cols(),
            });
        }
        for r in 0..word_topic.rows() {
            for c in 0..k {
                if !(word_topic[(r, c)] >= 0.0) {
                    return Err(Error::InvalidArgument("word-topic entries must be nonnegative"));
                }
            }
        }
        for sum in word_topic.column_sums() {
            if (sum - 1.0).abs() > COLUMN_TOL {
                return Err(Error::NotSimplex {
                    what: "word-topic column",
                    sum,
                });
            }
        }
        Ok(ModelParams { prior, word_topic })
    }

    pub fn topics(&self) -> usize {
        self.word_topic.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.word_topic.rows()
    }

    pub(crate) fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if corpus.vocab_size() != self.vocab_size() {
            return Err(Error::DimensionMismatch {
                what: "corpus vocabulary",
                expected: self.vocab_size(),
                found: corpus.vocab_size(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_doc(&self, doc: &Document) -> Result<()> {
        if doc.is_empty() {
            return Err(Error::EmptyDocument { doc: 0 });
        }
        if let Some(&word) = doc.words().last().filter(|&&w| w >= self.vocab_size()) {
            return Err(Error::WordOutOfRange {
                word,
                vocab_size: self.vocab_size(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    pub doc_count: usize,
    pub mean_length: f64,
    pub seed: u64,
}

/// Observations plus the latents that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub corpus: Corpus,
    pub thetas: Vec<Vec<f64>>,
    /// Per document, tokens drawn from each topic.
    pub topic_counts: Vec<Vec<u32>>,
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Per document: `N ~ Poisson(μ)` redrawn while zero, `θ ~ DT(ξ)`, then for
/// every token `z ~ Mult(θ)` and `w ~ Mult(φ_{·z})`.
pub fn generate_corpus(params: &ModelParams, cfg: &GenerationConfig) -> Result<GeneratedCorpus> {
    if cfg.doc_count == 0 {
        return Err(Error::InvalidArgument("doc_count must be at least 1"));
    }
    let poisson =
        Poisson::new(cfg.mean_length).map_err(|_| Error::InvalidArgument("mean_length must be positive"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (v, k) = (params.vocab_size(), params.topics());
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|c| cumulative((0..v).map(|r| params.word_topic[(r, c)])))
        .collect();

    let mut docs = Vec::with_capacity(cfg.doc_count);
    let mut thetas = Vec::with_capacity(cfg.doc_count);
    let mut topic_counts = Vec::with_capacity(cfg.doc_count);
    for _ in 0..cfg.doc_count {
        let n = loop {
            let n = poisson.sample(&mut rng) as u64;
            if n > 0 {
                break n;
            }
        };
        let theta = params.prior.sample_theta(&mut rng).into_vec();
        let theta_cum = cumulative(theta.iter().copied());
        let mut counts = vec![0u32; v];
        let mut z_counts = vec![0u32; k];
        for _ in 0..n {
            let z = draw(&theta_cum, &mut rng);
            z_counts[z] += 1;
            counts[draw(&columns[z], &mut rng)] += 1;
        }
        docs.push(Document::from_dense(&counts));
        thetas.push(theta);
        topic_counts.push(z_counts);
    }
    Ok(GeneratedCorpus {
        corpus: Corpus::new(v, docs)?,
        thetas,
        topic_counts,
    })
}

/// `V × K` matrix whose columns are independent seeded `Dirichlet(1, …, 1)` draws.
pub fn random_word_topic(v: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(v, k);
    for c in 0..k {
        let logs: Vec<f64> = (0..v).map(|_| dtree::sample_log_gamma(1.0, &mut rng)).collect();
        let norm = log_sum_exp(&logs);
        for (r, l) in logs.iter().enumerate() {
            m[(r, c)] = exp(l - norm);
        }
    }
    m
}

/// `t_v(θ) = Σ_k φ_{vk} θ_k`.
pub fn mixture_word_probs(params: &ModelParams, theta: &[f64]) -> Result<Vec<f64>> {
    params.word_topic.mul_vec(theta)
}

/// `log DT(θ|ξ) + Σ n_{vk} (log φ_{vk} + log θ_k)`; `-inf` when a count sits on
/// a zero of `φ`.
pub fn log_joint(params: &ModelParams, theta: &[f64], topic_counts: &Matrix) -> Result<f64> {
    let (v, k) = (params.vocab_size(), params.topics());
    if topic_counts.rows() != v || topic_counts.cols() != k {
        return Err(Error::DimensionMismatch {
            what: "topic counts",
            expected: v * k,
            found: topic_counts.rows() * topic_counts.cols(),
        });
    }
    let mut total = dtree::log_density(
        params.prior.topology(),
        params.prior.xi(),
        theta,
        DensityForm::Node,
    )?;
    for r in 0..v {
        for c in 0..k {
            let n = topic_counts[(r, c)];
            if n == 0.0 {
                continue;
            }
            let phi = params.word_topic[(r, c)];
            if phi == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += n * (ln(phi) + ln(theta[c]));
        }
    }
    Ok(total)
}

/// Limits on exhaustive evidence enumeration, which costs `O(K^N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvidenceBudget {
    pub max_tokens: u64,
    pub max_topics: usize,
}

impl Default for EvidenceBudget {
    fn default() -> Self {
        EvidenceBudget {
            max_tokens: 8,
            max_topics: 4,
        }
    }
}

/// Every way to split `n` tokens over `k` topics.
fn compositions(n: u32, k: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == k {
        prefix.push(n);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in 0..=n {
        prefix.push(first);
        compositions(n - first, k, prefix, out);
        prefix.pop();
    }
}

/// `log p(w | φ, ξ) = log ∫ DT(θ|ξ) ∏_v t_v(θ)^{n_v} dθ` by expanding every
/// power multinomially and integrating each monomial in closed form.
///
/// This is the probability of the token sequence; the bag-of-words
/// probability adds `log N!/∏ n_v!`.
pub fn exact_log_evidence(params: &ModelParams, doc: &Document, budget: EvidenceBudget) -> Result<f64> {
    params.check_doc(doc)?;
    let k = params.topics();
    let n_total = doc.total();
    if n_total > budget.max_tokens || k > budget.max_topics {
        return Err(Error::BudgetExceeded {
            tokens: n_total as usize,
            topics: k,
        });
    }
    let log_fact: Vec<f64> = (0..=n_total).map(|i| lgamma(i as f64 + 1.0)).collect();

    // Topic-count vector -> accumulated coefficient.
    let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    acc.insert(vec![0; k], 1.0);
    let mut splits = Vec::new();
    for (w, n) in doc.iter() {
        splits.clear();
        compositions(n, k, &mut Vec::with_capacity(k), &mut splits);
        let terms: Vec<(&Vec<u32>, f64)> = splits
            .iter()
            .filter_map(|split| {
                let mut log_c = log_fact[n as usize];
                for (c, &m) in split.iter().enumerate() {
                    if m == 0 {
                        continue;
                    }
                    let phi = params.word_topic[(w, c)];
                    if phi == 0.0 {
                        return None;
                    }
                    log_c += m as f64 * ln(phi) - log_fact[m as usize];
                }
                Some((split, exp(log_c)))
            })
            .collect();
        let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (key, weight) in &acc {
            for (split, coef) in &terms {
                let merged: Vec<u32> = key.iter().zip(split.iter()).map(|(a, b)| a + b).collect();
                *next.entry(merged).or_insert(0.0) += weight * coef;
            }
        }
        acc = next;
    }

    let log_g = params.prior.log_normalizer();
    let logs: Vec<f64> = acc
        .iter()
        .filter(|(_, &w)| w > 0.0)
        .map(|(counts, &w)| {
            let n: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let post = dtree::add_counts(params.prior.topology(), params.prior.xi(), &n);
            ln(w) + dtree::log_normalizer(params.prior.topology(), &post) - log_g
        })
        .collect();
    Ok(log_sum_exp(&logs))
}

/// [`exact_log_evidence`] with the default budget, exponentiated.
pub fn exact_evidence(params: &ModelParams, doc: &Document) -> Result<f64> {
    exact_log_evidence(params, doc, EvidenceBudget::default()).map(exp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Plain Monte-Carlo average of `∏ t_v(θ)^{n_v}` over prior draws.
pub fn mc_evidence(params: &ModelParams, doc: &Document, samples: usize, seed: u64) -> Result<McEstimate> {
    params.check_doc(doc)?;
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..samples {
        let theta = params.prior.sample_theta(&mut rng);
        let log_lik: f64 = doc
            .iter()
            .map(|(w, n)| {
                let t: f64 = params
                    .word_topic
                    .row(w)
                    .iter()
                    .zip(theta.as_slice())
                    .map(|(p, t)| p * t)
                    .sum();
                n as f64 * ln(t)
            })
            .sum();
        let x = exp(log_lik);
        sum += x;
        sq += x * x;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: sqrt(var / n),
    })
}

/// Matrix Bayes rule. `cond[(a, b)] = p(a|b)` with columns on the simplex;
/// returns `p(b|a)` laid out as `[(b, a)]`, i.e. `M(p_b) condᵀ M(p_a)⁻¹`.
pub fn bayes_matrix_flip(cond: &Matrix, marg_b: &[f64], marg_a: &[f64]) -> Result<Matrix> {
    let (na, nb) = (cond.rows(), cond.cols());
    if marg_b.len() != nb || marg_a.len() != na {
        return Err(Error::DimensionMismatch {
            what: "marginals",
            expected: na + nb,
            found: marg_a.len() + marg_b.len(),
        });
    }
    for (index, &m) in marg_a.iter().chain(marg_b).enumerate() {
        if !(m > 0.0) {
            return Err(Error::ZeroMarginal { index });
        }
    }
    for sum in cond.column_sums() {
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::NotSimplex {
                what: "conditional column",
                sum,
            });
        }
    }
    let implied = cond.mul_vec(marg_b)?;
    let max_error = implied
        .iter()
        .zip(marg_a)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if max_error > 1e-8 {
        return Err(Error::InconsistentMarginals { max_error });
    }
    let mut out = Matrix::zeros(nb, na);
    for b in 0..nb {
        for a in 0..na {
            out[(b, a)] = marg_b[b] * cond[(a, b)] / marg_a[a];
        }
    }
    Ok(out)
}

/// `c_{mn} = ∏_l a_{ml}^{b_{ln}}`, evaluated as `exp(log(A)·B)`.
pub fn matrix_inner_power(base: &Matrix, exponent: &Matrix) -> Result<Matrix> {
    if base.cols() != exponent.rows() {
        return Err(Error::DimensionMismatch {
            what: "inner power",
            expected: base.cols(),
            found: exponent.rows(),
        });
    }
    let mut log_base = Matrix::zeros(base.rows(), base.cols());
    for r in 0..base.rows() {
        for c in 0..base.cols() {
            let a = base[(r, c)];
            if !(a > 0.0) {
                return Err(Error::NonPositiveBase { row: r, col: c });
            }
            log_base[(r, c)] = ln(a);
        }
    }
    let mut out = log_base.matmul(exponent)?;
    for r in 0..out.rows() {
        for x in out.row_mut(r) {
            *x = exp(*x);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtree::{make_dirichlet_prior, make_generalized_dirichlet_prior};
    use proptest::prelude::*;
    use rand::Rng;

    fn phi_identity(k: usize) -> Matrix {
        Matrix::identity(k)
    }

    fn random_phi(v: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(v, k);
        for c in 0..k {
            let col: Vec<f64> = (0..v).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = col.iter().sum();
            for r in 0..v {
                m[(r, c)] = col[r] / s;
            }
        }
        m
    }

    fn tiny_model(seed: u64, v: usize, k: usize) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(0.3..3.0)).collect();
        let prior = make_dirichlet_prior(k, &alpha).unwrap();
        ModelParams::new(prior, random_phi(v, k, &mut rng)).unwrap()
    }

    #[test]
    fn document_merges_pairs() {
        let d = Document::from_pairs([(3, 1), (0, 2), (3, 2), (5, 0)]);
        assert_eq!(d.words(), [0, 3]);
        assert_eq!(d.counts(), [2, 3]);
        assert_eq!(d.total(), 5);
    }

    #[test]
    fn corpus_validation() {
        assert!(matches!(
            Corpus::new(3, vec![Document::from_pairs([(3, 1)])]),
            Err(Error::WordOutOfRange { word: 3, .. })
        ));
        assert!(matches!(
            Corpus::new(3, vec![Document::from_pairs([])]),
            Err(Error::EmptyDocument { doc: 0 })
        ));
    }

    #[test]
    fn model_params_validation() {
        let prior = make_dirichlet_prior(2, &[1.0, 1.0]).unwrap();
        let bad = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.6, 0.5]]).unwrap();
        assert!(matches!(ModelParams::new(prior.clone(), bad), Err(Error::NotSimplex { .. })));
        let wrong_k = Matrix::filled(2, 3, 0.5);
        assert!(ModelParams::new(prior, wrong_k).is_err());
    }

    #[test]
    fn mixture_examples() {
        let prior = make_dirichlet_prior(3, &[1.0; 3]).unwrap();
        let params = ModelParams::new(prior, phi_identity(3)).unwrap();
        assert_eq!(mixture_word_probs(&params, &[0.2, 0.3, 0.5]).unwrap(), [0.2, 0.3, 0.5]);

        let params = tiny_model(1, 4, 3);
        let t = mixture_word_probs(&params, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(t, params.word_topic.col(1));
        let theta = [0.1, 0.6, 0.3];
        let t = mixture_word_probs(&params, &theta).unwrap();
        for v in 0..4 {
            let mut s = 0.0;
            for k in 0..3 {
                s += params.word_topic[(v, k)] * theta[k];
            }
            assert!((t[v] - s).abs() < 1e-15);
        }
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn log_joint_cases() {
        let prior = make_dirichlet_prior(2, &[1.0, 1.0]).unwrap();
        let phi = Matrix::from_rows(&[vec![0.25, 1.0], vec![0.75, 0.0]]).unwrap();
        let params = ModelParams::new(prior, phi).unwrap();
        let theta = [0.4, 0.6];
        let zero = Matrix::zeros(2, 2);
        assert!(log_joint(&params, &theta, &zero).unwrap().abs() < 1e-15);

        let counts = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 0.0]]).unwrap();
        // Uniform prior density 1, then (.25·.4)(1·.6)²(.75·.4).
        let want = (0.25f64 * 0.4).ln() + 2.0 * 0.6f64.ln() + (0.75f64 * 0.4).ln();
        assert!((log_joint(&params, &theta, &counts).unwrap() - want).abs() < 1e-14);

        let impossible = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(log_joint(&params, &theta, &impossible).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn exact_evidence_examples() {
        // One word: Σ_k φ_vk E[θ_k].
        let params = tiny_model(2, 3, 3);
        let doc = Document::from_pairs([(1, 1)]);
        let mean = params.prior.expected_theta();
        let want: f64 = (0..3).map(|k| params.word_topic[(1, k)] * mean[k]).sum();
        assert!((exact_evidence(&params, &doc).unwrap() - want).abs() < 1e-15);

        // φ = I, words 1 and 2 once each: the sequence probability is E[θ1θ2] = 1/6.
        let prior = make_dirichlet_prior(2, &[1.0, 1.0]).unwrap();
        let params = ModelParams::new(prior, phi_identity(2)).unwrap();
        let doc = Document::from_pairs([(0, 1), (1, 1)]);
        assert!((exact_evidence(&params, &doc).unwrap() - 1.0 / 6.0).abs() < 1e-15);

        let big = Document::from_pairs([(0, 5), (1, 4)]);
        assert!(matches!(exact_evidence(&params, &big), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn exact_evidence_by_brute_force_over_assignments() {
        // Independent oracle: sum over every per-token topic assignment.
        let params = ModelParams::new(
            make_generalized_dirichlet_prior(3, &[0.7, 1.4], &[2.0, 0.5]).unwrap(),
            random_phi(3, 3, &mut ChaCha8Rng::seed_from_u64(8)),
        )
        .unwrap();
        let tokens = [0usize, 2, 2, 1, 0];
        let doc = Document::from_pairs(tokens.iter().map(|&w| (w, 1)));
        let mut total = 0.0;
        for code in 0..3usize.pow(tokens.len() as u32) {
            let mut c = code;
            let mut n = [0.0; 3];
            let mut w = 1.0;
            for &tok in &tokens {
                let z = c % 3;
                c /= 3;
                n[z] += 1.0;
                w *= params.word_topic[(tok, z)];
            }
            total += w * params.prior.expected_monomial(&n).unwrap();
        }
        let exact = exact_evidence(&params, &doc).unwrap();
        assert!((exact - total).abs() < 1e-14 * total.max(1e-300) * 10.0);
    }

    #[test]
    fn exact_evidence_matches_monte_carlo() {
        let params = tiny_model(3, 3, 2);
        let doc = Document::from_pairs([(0, 2), (1, 1), (2, 3)]);
        let exact = exact_evidence(&params, &doc).unwrap();
        let mc = mc_evidence(&params, &doc, 100_000, 11).unwrap();
        assert!((mc.estimate - exact).abs() < 3.0 * mc.std_error);
        let small = mc_evidence(&params, &doc, 1_000, 11).unwrap();
        assert!(mc.std_error < small.std_error / 5.0);
        assert_eq!(mc, mc_evidence(&params, &doc, 100_000, 11).unwrap());
    }

    #[test]
    fn evidence_is_relabeling_invariant() {
        let params = tiny_model(4, 4, 3);
        let doc = Document::from_pairs([(0, 2), (1, 1), (3, 2)]);
        let perm = [2usize, 0, 3, 1];
        let mut phi = Matrix::zeros(4, 3);
        for v in 0..4 {
            for k in 0..3 {
                phi[(perm[v], k)] = params.word_topic[(v, k)];
            }
        }
        let permuted = ModelParams::new(params.prior.clone(), phi).unwrap();
        let pdoc = Document::from_pairs(doc.iter().map(|(w, n)| (perm[w], n)));
        let a = exact_log_evidence(&params, &doc, EvidenceBudget::default()).unwrap();
        let b = exact_log_evidence(&permuted, &pdoc, EvidenceBudget::default()).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn generation_support_and_determinism() {
        // Disjoint one-hot columns: every document only contains words 0 and 3.
        let prior = make_dirichlet_prior(2, &[1.0, 1.0]).unwrap();
        let phi = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let params = ModelParams::new(prior, phi).unwrap();
        let cfg = GenerationConfig {
            doc_count: 30,
            mean_length: 5.0,
            seed: 7,
        };
        let g = generate_corpus(&params, &cfg).unwrap();
        for (m, doc) in g.corpus.docs().iter().enumerate() {
            assert!(doc.words().iter().all(|&w| w == 0 || w == 3));
            assert!(doc.total() >= 1);
            // Topic 0 emits word 0 only.
            let zero = doc.iter().find(|&(w, _)| w == 0).map_or(0, |(_, n)| n);
            assert_eq!(zero, g.topic_counts[m][0]);
        }
        assert_eq!(g, generate_corpus(&params, &cfg).unwrap());
    }

    #[test]
    fn long_document_frequencies_follow_mixture() {
        let params = tiny_model(5, 6, 3);
        let g = generate_corpus(
            &params,
            &GenerationConfig {
                doc_count: 1,
                mean_length: 1e4,
                seed: 3,
            },
        )
        .unwrap();
        let doc = &g.corpus.docs()[0];
        let n = doc.total() as f64;
        let t = mixture_word_probs(&params, &g.thetas[0]).unwrap();
        let mut dense = vec![0.0; 6];
        for (w, c) in doc.iter() {
            dense[w] = c as f64;
        }
        for v in 0..6 {
            let se = (t[v] * (1.0 - t[v]) / n).sqrt();
            assert!((dense[v] / n - t[v]).abs() < 3.0 * se, "word {v}");
        }
    }

    #[test]
    fn bayes_flip_cases() {
        // Independence: every column of cond equals marg_a.
        let marg_a = [0.2, 0.5, 0.3];
        let marg_b = [0.6, 0.4];
        let cond = Matrix::from_rows(&[vec![0.2, 0.2], vec![0.5, 0.5], vec![0.3, 0.3]]).unwrap();
        let flip = bayes_matrix_flip(&cond, &marg_b, &marg_a).unwrap();
        for a in 0..3 {
            assert!((flip[(0, a)] - 0.6).abs() < 1e-15 && (flip[(1, a)] - 0.4).abs() < 1e-15);
        }

        // 2×2 by hand: p(a=0|b=0) = .9, p(a=0|b=1) = .2, p(b) = (.3, .7).
        let cond = Matrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap();
        let pa0 = 0.9 * 0.3 + 0.2 * 0.7;
        let marg_a = [pa0, 1.0 - pa0];
        let flip = bayes_matrix_flip(&cond, &[0.3, 0.7], &marg_a).unwrap();
        assert!((flip[(0, 0)] - 0.27 / 0.41).abs() < 1e-15);
        assert!((flip[(1, 1)] - 0.56 / 0.59).abs() < 1e-15);

        assert!(matches!(
            bayes_matrix_flip(&cond, &[0.3, 0.7], &[0.5, 0.5]),
            Err(Error::InconsistentMarginals { .. })
        ));
        assert!(matches!(
            bayes_matrix_flip(&cond, &[1.0, 0.0], &[0.9, 0.1]),
            Err(Error::ZeroMarginal { .. })
        ));
    }

    #[test]
    fn inner_power_basics() {
        let base = Matrix::from_rows(&[vec![2.0, 3.0], vec![0.5, 4.0]]).unwrap();
        assert!(matrix_inner_power(&base, &Matrix::identity(2)).unwrap().max_abs_diff(&base) < 1e-15);
        let a = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.5]]).unwrap();
        assert!((matrix_inner_power(&a, &b).unwrap()[(0, 0)] - 3f64.powf(2.5)).abs() < 1e-13);
        let zero = Matrix::from_rows(&[vec![0.0]]).unwrap();
        assert!(matches!(
            matrix_inner_power(&zero, &b),
            Err(Error::NonPositiveBase { row: 0, col: 0 })
        ));
    }

    proptest! {
        #[test]
        fn double_flip_is_identity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cond = random_phi(4, 3, &mut rng);
            let mb: Vec<f64> = {
                let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            };
            let ma = cond.mul_vec(&mb).unwrap();
            let flip = bayes_matrix_flip(&cond, &mb, &ma).unwrap();
            for s in flip.column_sums() {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            let back = bayes_matrix_flip(&flip, &ma, &mb).unwrap();
            prop_assert!(back.max_abs_diff(&cond) < 1e-10);
        }

        #[test]
        fn inner_power_composes(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = |lo: f64, hi: f64| {
                let rows: Vec<Vec<f64>> = (0..3)
                    .map(|_| (0..3).map(|_| rng.random_range(lo..hi)).collect())
                    .collect();
                Matrix::from_rows(&rows).unwrap()
            };
            let (phi, a, b) = (m(0.5, 2.0), m(-1.0, 1.0), m(-1.0, 1.0));
            let lhs = matrix_inner_power(&phi, &a.matmul(&b).unwrap()).unwrap();
            let rhs = matrix_inner_power(&matrix_inner_power(&phi, &a).unwrap(), &b).unwrap();
            let scale = lhs.as_slice().iter().fold(1.0f64, |s, x| s.max(x.abs()));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12 * scale);
        }
    }
}
