//! Expectation Propagation for a single document, and the EM loop that uses it
//! as the E-step.
//!
//! Word `v` contributes the factor `(φ_{v·}ᵀθ)^{n_v}`. EP replaces each factor
//! with a Dirichlet-Tree site `s_v ∏_k θ_k^{T_{kv}}`, where `T` is the
//! transition matrix. The approximate posterior is
//! `ζ = ξ ⊕ T n`; removing one copy of a site gives the cavity `ζ^{\v}`. A
//! sweep matches the moments of every tilted distribution
//! `∝ DT(θ|ζ^{\v}) φ_{v·}ᵀθ` against the current cavities and then replaces
//! all columns at once.

use alloc::vec::Vec;

use crate::dtree::{self, DTParams};
use crate::exec::DocRunner;
use crate::linalg::Matrix;
use crate::math::ln;
use crate::mfvi::{self, relative_change, FitConfig, FitReport};
use crate::model::{Corpus, Document, ModelParams};
use crate::moment_match;
use crate::{Error, Result};

/// Backtracking steps toward the previous columns when a sweep would leave
/// `ζ` outside the parameter domain.
const MAX_SHRINKS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EPConfig {
    pub max_sweeps: usize,
    /// Max-abs change of the transition matrix that ends a document.
    pub tol: f64,
    /// `1.0` replaces columns outright; smaller values blend in the old column.
    pub damping: f64,
    /// Rescale every updated column to sum to one. Off by default: an
    /// uninformative word has a constant site whose leaf part is near zero,
    /// and rescaling it to unit mass makes the sweep unstable.
    pub normalize: bool,
}

impl Default for EPConfig {
    fn default() -> Self {
        EPConfig {
            max_sweeps: 200,
            tol: 1e-4,
            damping: 1.0,
            normalize: false,
        }
    }
}

impl EPConfig {
    fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidArgument("EP needs at least one sweep"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("EP tolerance must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument("damping must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Cavity parameters per present word; `None` where removing the site leaves
/// a nonpositive branch.
#[derive(Debug, Clone, PartialEq)]
pub struct CavitySet {
    pub cavities: Vec<Option<DTParams>>,
}

impl CavitySet {
    pub fn valid_count(&self) -> usize {
        self.cavities.iter().filter(|c| c.is_some()).count()
    }
}

/// Everything derived from a transition matrix in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Essentials {
    pub zeta: DTParams,
    pub cavities: CavitySet,
    /// `z_v = φ_{v·}ᵀ E_{ζ^{\v}}[θ]`.
    pub z: Vec<f64>,
    /// `log s_v = log z_v + log g(ζ^{\v}) − log g(ζ)`.
    pub log_sync: Vec<f64>,
    /// `K × L` topic posteriors of one token under the tilted distribution,
    /// `φ_{vk} E_{ζ^{\v}}[θ_k] / z_v`.
    pub resp: Matrix,
    pub log_evidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EPDocState {
    /// `K × L`, one column per distinct word. Entries may be negative; columns
    /// sum to one only under [`EPConfig::normalize`].
    pub trans: Matrix,
    pub zeta: DTParams,
    pub z: Vec<f64>,
    pub log_sync: Vec<f64>,
    /// Tilted token-topic posteriors; see [`Essentials::resp`].
    pub resp: Matrix,
    pub log_evidence: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Word updates rejected by the moment match over all sweeps.
    pub failed_updates: usize,
    /// Word updates skipped for an invalid cavity over all sweeps.
    pub skipped_updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EPFit {
    pub params: ModelParams,
    pub states: Vec<EPDocState>,
    pub report: FitReport,
}

fn column_weights(params: &ModelParams, word: usize, mean: &[f64]) -> Result<Vec<f64>> {
    let row = params.word_topic.row(word);
    let w: Vec<f64> = row.iter().zip(mean).map(|(p, m)| p * m).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ImpossibleWord { word });
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// `ζ`, cavities, `z`, `s` and the evidence estimate for a transition matrix.
///
/// A word with an invalid cavity is scored against `ζ` itself so the
/// evidence stays defined.
pub fn ep_essential(params: &ModelParams, doc: &Document, trans: &Matrix) -> Result<Essentials> {
    params.check_doc(doc)?;
    let k = params.topics();
    if trans.rows() != k || trans.cols() != doc.len() {
        return Err(Error::DimensionMismatch {
            what: "transition matrix",
            expected: k * doc.len(),
            found: trans.rows() * trans.cols(),
        });
    }
    let counts: Vec<f64> = doc.counts().iter().map(|&n| n as f64).collect();
    let zeta = params.prior.bayesian_add(&trans.mul_vec(&counts)?)?;
    let log_g = zeta.log_normalizer();

    let mut cavities = Vec::with_capacity(doc.len());
    let mut z = Vec::with_capacity(doc.len());
    let mut resp = Matrix::zeros(k, doc.len());
    let mut log_sync = Vec::with_capacity(doc.len());
    let mut log_evidence = log_g - params.prior.log_normalizer();
    for (j, (w, n)) in doc.iter().enumerate() {
        let cavity = zeta.bayesian_sub(&trans.col(j)).ok();
        let base = cavity.as_ref().unwrap_or(&zeta);
        let mean = base.expected_theta();
        let zv: f64 = params.word_topic.row(w).iter().zip(&mean).map(|(p, m)| p * m).sum();
        if !(zv > 0.0) {
            return Err(Error::ImpossibleWord { word: w });
        }
        let ls = match &cavity {
            Some(c) => ln(zv) + c.log_normalizer() - log_g,
            None => {
                log::debug!("word {w}: invalid cavity, scoring against the full approximation");
                ln(zv)
            }
        };
        log_evidence += n as f64 * ls;
        cavities.push(cavity);
        for (c, (p, m)) in params.word_topic.row(w).iter().zip(&mean).enumerate() {
            resp[(c, j)] = p * m / zv;
        }
        z.push(zv);
        log_sync.push(ls);
    }
    Ok(Essentials {
        zeta,
        cavities: CavitySet { cavities },
        z,
        log_sync,
        resp,
        log_evidence,
    })
}

/// `E[u]` under `∝ DT(θ|ζ^{\v}) φ_{v·}ᵀθ`: the mixture of base posteriors with
/// weights `∝ φ_{vk} E_{ζ^{\v}}[θ_k]`.
pub fn tilted_expected_stats(params: &ModelParams, cavity: &DTParams, word: usize) -> Result<Vec<f64>> {
    let w = column_weights(params, word, &cavity.expected_theta())?;
    let stats = cavity.expected_sufficient_stats();
    Ok(dtree::mixture_base_stats(cavity.topology(), cavity.xi(), &stats, &w))
}

/// New column for one word: moment match the tilted distribution (warm
/// started at `cavity ⊕ old`), keep the leaf-branch part of the difference,
/// damp toward `old`, then normalize if configured.
pub fn ep_update_word(
    params: &ModelParams,
    cavity: &DTParams,
    word: usize,
    old: &[f64],
    cfg: &EPConfig,
) -> Result<Vec<f64>> {
    let target = tilted_expected_stats(params, cavity, word)?;
    let warm = cavity.bayesian_add(old).ok();
    let sep = moment_match::match_tree(cavity.topology(), &target, warm.as_ref())?;
    let raw = leaf_difference(&sep, cavity);
    let damped: Vec<f64> = old.iter().zip(&raw).map(|(o, n)| o + cfg.damping * (n - o)).collect();
    if cfg.normalize {
        normalize_column(damped)
    } else if damped.iter().all(|x| x.is_finite()) {
        Ok(damped)
    } else {
        Err(Error::InvalidArgument("moment-matched column is not finite"))
    }
}

/// Leaf-branch components of `sep − cavity`; internal branches are dropped.
fn leaf_difference(sep: &DTParams, cavity: &DTParams) -> Vec<f64> {
    let topo = cavity.topology();
    let raw: Vec<f64> = topo
        .leaves()
        .iter()
        .map(|&node| {
            let d = topo.node_branch(node);
            sep.xi()[d] - cavity.xi()[d]
        })
        .collect();
    if log::log_enabled!(log::Level::Trace) {
        // Internal branches of a consistent update equal the leaf sums below them.
        let implied = topo.select(&raw);
        let gap = (0..implied.len())
            .map(|d| (sep.xi()[d] - cavity.xi()[d] - implied[d]).abs())
            .fold(0.0, f64::max);
        log::trace!("internal-branch discrepancy {gap:e}");
    }
    raw
}

fn normalize_column(raw: Vec<f64>) -> Result<Vec<f64>> {
    let sum: f64 = raw.iter().sum();
    log::trace!("pre-normalization column sum {sum}");
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::InvalidArgument("moment-matched column has no positive mass"));
    }
    Ok(raw.into_iter().map(|x| x / sum).collect())
}

fn blend(old: &Matrix, new: &Matrix, step: f64) -> Matrix {
    let data = old
        .as_slice()
        .iter()
        .zip(new.as_slice())
        .map(|(o, n)| o + step * (n - o))
        .collect();
    Matrix::from_vec(old.rows(), old.cols(), data).expect("same shape")
}

fn zeta_is_valid(params: &ModelParams, doc: &Document, trans: &Matrix) -> bool {
    let counts: Vec<f64> = doc.counts().iter().map(|&n| n as f64).collect();
    let leaf = trans.mul_vec(&counts).expect("shape checked by caller");
    let xi = dtree::add_counts(params.prior.topology(), params.prior.xi(), &leaf);
    dtree::check_params(params.prior.topology(), &xi).is_ok()
}

/// Synchronous EP sweeps from `init` (default: every column `1/K`).
pub fn ep_infer_document(params: &ModelParams, doc: &Document, init: Option<&Matrix>, cfg: &EPConfig) -> Result<EPDocState> {
    cfg.validate()?;
    params.check_doc(doc)?;
    let k = params.topics();
    let mut trans = match init {
        Some(t) if t.rows() == k && t.cols() == doc.len() && zeta_is_valid(params, doc, t) => t.clone(),
        _ => Matrix::filled(k, doc.len(), 1.0 / k as f64),
    };
    let (mut failed, mut skipped) = (0, 0);
    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 1..=cfg.max_sweeps {
        sweeps = sweep;
        let ess = ep_essential(params, doc, &trans)?;
        let mut proposal = trans.clone();
        // A sweep with rejected or skipped words cannot certify a fixed point.
        let mut clean = true;
        for (j, &w) in doc.words().iter().enumerate() {
            let Some(cavity) = &ess.cavities.cavities[j] else {
                skipped += 1;
                clean = false;
                continue;
            };
            match ep_update_word(params, cavity, w, &trans.col(j), cfg) {
                Ok(col) => proposal.set_col(j, &col),
                Err(e) => {
                    log::debug!("word {w}: keeping the previous column ({e})");
                    failed += 1;
                    clean = false;
                }
            }
        }
        let mut step = 1.0;
        let mut next = proposal.clone();
        let mut shrinks = 0;
        while !zeta_is_valid(params, doc, &next) {
            shrinks += 1;
            if shrinks > MAX_SHRINKS {
                next = trans.clone();
                break;
            }
            step *= 0.5;
            next = blend(&trans, &proposal, step);
        }
        let change = next.max_abs_diff(&trans);
        trans = next;
        if clean && change < cfg.tol {
            converged = true;
            break;
        }
    }
    let ess = ep_essential(params, doc, &trans)?;
    if !ess.log_evidence.is_finite() {
        return Err(Error::NoConvergence {
            solver: "EP evidence",
            iterations: sweeps,
        });
    }
    Ok(EPDocState {
        trans,
        zeta: ess.zeta,
        z: ess.z,
        log_sync: ess.log_sync,
        resp: ess.resp,
        log_evidence: ess.log_evidence,
        sweeps,
        converged,
        failed_updates: failed,
        skipped_updates: skipped,
    })
}

/// `ξ` by moment matching the mean statistics of the `ζ_m`, and `φ` from the
/// pseudo-counts `Σ_m r_{kv} n_v` of the tilted token posteriors.
pub fn ep_m_step(corpus: &Corpus, states: &[EPDocState], current: &ModelParams) -> Result<ModelParams> {
    let k = current.topics();
    let word_topic = mfvi::word_topic_from_pseudo_counts(corpus, states.iter().map(|s| &s.resp), k);
    let prior = mfvi::m_step_prior(states.iter().map(|s| &s.zeta), &current.prior)?;
    ModelParams::new(prior, word_topic)
}

/// EM with EP as the E-step. The trace holds the sum of per-document log
/// evidence estimates; EP gives no monotonicity guarantee for it.
pub fn fit_ep<R: DocRunner>(
    corpus: &Corpus,
    init: ModelParams,
    cfg: &FitConfig,
    ep: &EPConfig,
    runner: &R,
    observer: &mut dyn FnMut(usize, f64),
) -> Result<EPFit> {
    cfg.validate()?;
    ep.validate()?;
    init.check_corpus(corpus)?;
    let k = init.topics();
    let mut params = init;
    let mut states: Vec<EPDocState> = Vec::new();
    let mut report = FitReport::default();

    for iter in 1..=cfg.max_iters {
        let prev = &states;
        let p = &params;
        let next: Vec<Result<EPDocState>> = runner.map_docs(corpus.len(), |m| {
            ep_infer_document(p, &corpus.docs()[m], prev.get(m).map(|s| &s.trans), ep)
        });
        states = next.into_iter().collect::<Result<_>>()?;
        let objective: f64 = states.iter().map(|s| s.log_evidence).sum();
        report.unconverged_docs = states.iter().filter(|s| !s.converged).count();
        report.iterations = iter;
        observer(iter, objective);
        let done = report
            .objective_trace
            .last()
            .is_some_and(|&prev| relative_change(prev, objective) < cfg.tol);
        report.objective_trace.push(objective);
        if done {
            report.converged = true;
            break;
        }
        if iter == cfg.max_iters {
            break;
        }

        if cfg.learn_word_topic {
            params.word_topic = mfvi::word_topic_from_pseudo_counts(corpus, states.iter().map(|s| &s.resp), k);
        }
        if cfg.learn_prior {
            match mfvi::m_step_prior(states.iter().map(|s| &s.zeta), &params.prior) {
                Ok(prior) => params.prior = prior,
                Err(e) => {
                    log::warn!("prior update failed, keeping the current prior: {e}");
                    report.prior_failures += 1;
                }
            }
        }
    }
    Ok(EPFit {
        params,
        states,
        report,
    })
}

/// Transition matrix implied by `φ` rows that are one-hot: column `v` is the
/// indicator of the topic that owns word `v`, or `None` if some row is not.
pub fn conjugate_transitions(params: &ModelParams, doc: &Document) -> Option<Matrix> {
    let k = params.topics();
    let mut t = Matrix::zeros(k, doc.len());
    for (j, &w) in doc.words().iter().enumerate() {
        let row = params.word_topic.row(w);
        let mut owners = row.iter().enumerate().filter(|(_, &p)| p > 0.0);
        match (owners.next(), owners.next()) {
            (Some((c, _)), None) => t[(c, j)] = 1.0,
            _ => return None,
        }
    }
    Some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtree::{make_beta_liouville_prior, make_dirichlet_prior};
    use crate::exec::Sequential;
    use crate::math::{exp, lgamma};
    use crate::model::{exact_log_evidence, random_word_topic, EvidenceBudget};
    use crate::tree::tests::random_tree;
    use alloc::sync::Arc;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_with(prior: DTParams, rows: &[Vec<f64>]) -> ModelParams {
        ModelParams::new(prior, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    /// Words 0..V, word `v` owned by topic `v % K` with probability mass spread
    /// evenly over the words of that topic.
    fn one_hot_model(prior: DTParams, v: usize) -> ModelParams {
        let k = prior.topology().leaf_count();
        let mut phi = Matrix::zeros(v, k);
        for w in 0..v {
            let owned = (0..v).filter(|x| x % k == w % k).count();
            phi[(w, w % k)] = 1.0 / owned as f64;
        }
        ModelParams::new(prior, phi).unwrap()
    }

    fn random_doc(v: usize, max_total: u32, rng: &mut ChaCha8Rng) -> Document {
        let total = rng.random_range(1..=max_total);
        Document::from_pairs((0..total).map(|_| (rng.random_range(0..v), 1)))
    }

    #[test]
    fn uniform_init_gives_prior_plus_counts_over_k() {
        let prior = make_beta_liouville_prior(3, 1.0, 2.0, &[0.5, 1.5]).unwrap();
        let params = ModelParams::new(prior.clone(), random_word_topic(4, 3, 1)).unwrap();
        let doc = Document::from_pairs([(0, 2), (3, 1)]);
        let ess = ep_essential(&params, &doc, &Matrix::filled(3, 2, 1.0 / 3.0)).unwrap();
        let expected = prior.bayesian_add(&[1.0; 3]).unwrap();
        for (a, b) in ess.zeta.xi().iter().zip(expected.xi()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn one_word_document_has_exact_cavity_and_evidence() {
        let prior = make_beta_liouville_prior(3, 0.7, 1.3, &[2.0, 0.4]).unwrap();
        let params = ModelParams::new(prior.clone(), random_word_topic(3, 3, 2)).unwrap();
        let doc = Document::from_pairs([(1, 1)]);
        let trans = Matrix::from_rows(&[vec![0.2], vec![0.5], vec![0.3]]).unwrap();
        let ess = ep_essential(&params, &doc, &trans).unwrap();
        let cavity = ess.cavities.cavities[0].as_ref().unwrap();
        for (a, b) in cavity.xi().iter().zip(prior.xi()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mean = prior.expected_theta();
        let z: f64 = (0..3).map(|k| params.word_topic[(1, k)] * mean[k]).sum();
        assert!((ess.z[0] - z).abs() < 1e-15);
        let exact = exact_log_evidence(&params, &doc, EvidenceBudget::default()).unwrap();
        assert!((ess.log_evidence - exact).abs() < 1e-12);
    }

    #[test]
    fn one_hot_row_gives_base_posterior_stats() {
        let prior = make_beta_liouville_prior(4, 1.5, 0.5, &[1.0, 2.0, 3.0]).unwrap();
        let params = params_with(prior.clone(), &[vec![0.0, 0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0, 1.0]]);
        let stats = tilted_expected_stats(&params, &prior, 0).unwrap();
        let base = prior.bayesian_add(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        for (a, b) in stats.iter().zip(base.expected_sufficient_stats()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(stats.iter().all(|&u| u < 0.0));
    }

    #[test]
    fn tilted_weights_ignore_row_scale() {
        let prior = make_dirichlet_prior(3, &[0.5, 1.0, 2.0]).unwrap();
        let a = params_with(prior.clone(), &[vec![0.1, 0.2, 0.3], vec![0.9, 0.8, 0.7]]);
        let b = params_with(prior.clone(), &[vec![0.05, 0.1, 0.15], vec![0.95, 0.9, 0.85]]);
        assert_eq!(
            tilted_expected_stats(&a, &prior, 0).unwrap(),
            tilted_expected_stats(&b, &prior, 0).unwrap()
        );
    }

    #[test]
    fn impossible_word_is_an_error() {
        let prior = make_dirichlet_prior(2, &[1.0, 1.0]).unwrap();
        let params = params_with(prior.clone(), &[vec![1.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(
            tilted_expected_stats(&params, &prior, 1),
            Err(Error::ImpossibleWord { word: 1 })
        );
    }

    /// `∫₀¹ f(θ) dθ` by composite Simpson after `θ = s²`, which tames the
    /// logarithmic end point.
    fn integrate(f: impl Fn(f64) -> f64) -> f64 {
        let n = 20_000;
        let h = 1.0 / n as f64;
        let g = |s: f64| if s == 0.0 { 0.0 } else { f(s * s) * 2.0 * s };
        let mut acc = g(0.0) + g(1.0);
        for i in 1..n {
            acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn tilted_stats_match_quadrature() {
        let beta_pdf = |a: f64, b: f64, t: f64| {
            libm::pow(t, a - 1.0) * libm::pow(1.0 - t, b - 1.0) * exp(lgamma(a + b) - lgamma(a) - lgamma(b))
        };
        for &(a, b, p, q) in &[(1.0, 1.0, 0.5, 0.5), (1.0, 1.0, 0.9, 0.1), (2.5, 1.5, 0.2, 0.6), (1.2, 4.0, 0.7, 0.05)] {
            let prior = make_dirichlet_prior(2, &[a, b]).unwrap();
            let params = params_with(prior.clone(), &[vec![p, q], vec![1.0 - p, 1.0 - q]]);
            let stats = tilted_expected_stats(&params, &prior, 0).unwrap();
            let tilt = |t: f64| (p * t + q * (1.0 - t)) * beta_pdf(a, b, t);
            let norm = integrate(tilt);
            let e1 = integrate(|t| ln(t) * tilt(t)) / norm;
            // Mirror so the singular end point is again at zero.
            let e2 = integrate(|t| ln(t) * tilt(1.0 - t)) / norm;
            assert!((stats[0] - e1).abs() < 1e-6, "{} vs {}", stats[0], e1);
            assert!((stats[1] - e2).abs() < 1e-6, "{} vs {}", stats[1], e2);
        }
        // Uniform tilt of a uniform cavity: E[log θ] = −1.
        let prior = make_dirichlet_prior(2, &[1.0, 1.0]).unwrap();
        let params = params_with(prior.clone(), &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let stats = tilted_expected_stats(&params, &prior, 0).unwrap();
        assert!(stats.iter().all(|&u| (u + 1.0).abs() < 1e-14));
    }

    #[test]
    fn one_hot_row_update_is_one_hot() {
        let prior = make_beta_liouville_prior(3, 1.0, 2.0, &[0.5, 1.5]).unwrap();
        let params = params_with(prior.clone(), &[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]);
        let col = ep_update_word(&params, &prior, 0, &[1.0 / 3.0; 3], &EPConfig::default()).unwrap();
        for (k, c) in col.iter().enumerate() {
            assert!((c - if k == 1 { 1.0 } else { 0.0 }).abs() < 1e-8, "{col:?}");
        }
    }

    #[test]
    fn symmetric_instance_has_equal_column_entries() {
        // Rows constant across topics make each likelihood term a constant, so
        // the sites carry no leaf mass and the evidence is exact.
        let prior = make_dirichlet_prior(3, &[1.2; 3]).unwrap();
        let params = params_with(prior, &[vec![0.4; 3], vec![0.6; 3]]);
        let doc = Document::from_pairs([(0, 2), (1, 3)]);
        let s = ep_infer_document(&params, &doc, None, &EPConfig::default()).unwrap();
        assert!(s.converged);
        assert!(s.trans.as_slice().iter().all(|&t| t.abs() < 1e-9));
        let exact = 2.0 * 0.4f64.ln() + 3.0 * 0.6f64.ln();
        assert!((s.log_evidence - exact).abs() < 1e-9);
    }

    #[test]
    fn separable_vocabulary_is_exact_after_one_sweep() {
        let prior = make_beta_liouville_prior(3, 0.8, 1.7, &[1.1, 0.6]).unwrap();
        let params = one_hot_model(prior.clone(), 6);
        let doc = Document::from_pairs([(0, 2), (1, 1), (4, 3), (5, 1)]);
        let s = ep_infer_document(&params, &doc, None, &EPConfig::default()).unwrap();
        assert!(s.converged);
        assert!(s.sweeps <= 2, "{} sweeps", s.sweeps);
        let target = conjugate_transitions(&params, &doc).unwrap();
        assert!(s.trans.max_abs_diff(&target) < 1e-9);
        let exact = exact_log_evidence(&params, &doc, EvidenceBudget { max_tokens: 16, max_topics: 4 }).unwrap();
        assert!((s.log_evidence - exact).abs() < 1e-9, "{} vs {exact}", s.log_evidence);
        let mapped = prior.bayesian_add(&[2.0, 4.0, 1.0]).unwrap();
        for (a, b) in s.zeta.xi().iter().zip(mapped.xi()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn moment_match_postcondition_holds() {
        let prior = make_beta_liouville_prior(4, 1.0, 1.5, &[0.5, 2.0, 1.0]).unwrap();
        let params = ModelParams::new(prior.clone(), random_word_topic(5, 4, 3)).unwrap();
        let target = tilted_expected_stats(&params, &prior, 2).unwrap();
        let sep = moment_match::match_tree(prior.topology(), &target, Some(&prior)).unwrap();
        for (a, b) in sep.expected_sufficient_stats().iter().zip(&target) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn m_step_shares_the_word_topic_path() {
        let prior = make_dirichlet_prior(2, &[1.0, 1.0]).unwrap();
        let params = ModelParams::new(prior.clone(), random_word_topic(3, 2, 4)).unwrap();
        let corpus = Corpus::new(3, vec![Document::from_pairs([(0, 2), (2, 1)])]).unwrap();
        let trans = Matrix::from_rows(&[vec![0.7, 0.1], vec![0.3, 0.9]]).unwrap();
        let state = EPDocState {
            zeta: prior.bayesian_add(&[1.5, 1.5]).unwrap(),
            trans: trans.clone(),
            z: vec![],
            log_sync: vec![],
            resp: trans.clone(),
            log_evidence: 0.0,
            sweeps: 1,
            converged: true,
            failed_updates: 0,
            skipped_updates: 0,
        };
        let next = ep_m_step(&corpus, &[state.clone(), state.clone()], &params).unwrap();
        assert_eq!(next.word_topic, mfvi::word_topic_from_pseudo_counts(&corpus, [&trans, &trans], 2));
        for (a, b) in next.prior.xi().iter().zip(state.zeta.xi()) {
            assert!((a - b).abs() / b < 1e-7);
        }
    }

    #[test]
    fn conjugate_corpus_converges_in_two_iterations() {
        let prior = make_dirichlet_prior(2, &[1.0, 1.0]).unwrap();
        // φ already equals the per-topic word frequencies of the one document.
        let params = params_with(prior, &[vec![2.0 / 3.0, 0.0], vec![1.0 / 3.0, 0.0], vec![0.0, 1.0]]);
        let corpus = Corpus::new(3, vec![Document::from_pairs([(0, 2), (1, 1), (2, 4)])]).unwrap();
        let cfg = FitConfig {
            learn_prior: false,
            ..FitConfig::default()
        };
        let fit = fit_ep(&corpus, params, &cfg, &EPConfig::default(), &Sequential, &mut |_, _| {}).unwrap();
        assert!(fit.report.converged);
        assert!(fit.report.iterations <= 2);
    }

    #[test]
    fn ep_fit_is_deterministic() {
        let prior = make_dirichlet_prior(3, &[1.0; 3]).unwrap();
        let init = ModelParams::new(prior, random_word_topic(6, 3, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let docs = (0..8).map(|_| random_doc(6, 10, &mut rng)).collect();
        let corpus = Corpus::new(6, docs).unwrap();
        let cfg = FitConfig { max_iters: 4, ..FitConfig::default() };
        let a = fit_ep(&corpus, init.clone(), &cfg, &EPConfig::default(), &Sequential, &mut |_, _| {}).unwrap();
        let b = fit_ep(&corpus, init, &cfg, &EPConfig::default(), &Sequential, &mut |_, _| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.report, b.report);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cavities_reconstitute_the_approximation(seed in any::<u64>()) {
            let topo = Arc::new(random_tree(seed, 5));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
            let xi: Vec<f64> = (0..topo.branch_count()).map(|_| rng.random_range(0.5..3.0)).collect();
            let prior = DTParams::new(topo, xi).unwrap();
            let k = prior.topology().leaf_count();
            let params = ModelParams::new(prior, random_word_topic(5, k, seed)).unwrap();
            let doc = random_doc(5, 10, &mut rng);
            let s = ep_infer_document(&params, &doc, None, &EPConfig { max_sweeps: 5, ..EPConfig::default() }).unwrap();
            let ess = ep_essential(&params, &doc, &s.trans).unwrap();
            for (j, cav) in ess.cavities.cavities.iter().enumerate() {
                if let Some(cav) = cav {
                    let back = cav.bayesian_add(&s.trans.col(j)).unwrap();
                    for (a, b) in back.xi().iter().zip(ess.zeta.xi()) {
                        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                    }
                    let sync = ln(ess.z[j]) + cav.log_normalizer() - ess.zeta.log_normalizer();
                    prop_assert!((sync - ess.log_sync[j]).abs() < 1e-13);
                }
            }
            let product: f64 = doc.counts().iter().zip(&ess.log_sync).map(|(&n, l)| n as f64 * l).sum::<f64>()
                + ess.zeta.log_normalizer() - params.prior.log_normalizer();
            prop_assert!((product - ess.log_evidence).abs() < 1e-12);
        }

        #[test]
        fn evidence_is_close_on_small_instances(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let alpha = [rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)];
            let params = ModelParams::new(make_dirichlet_prior(2, &alpha).unwrap(), random_word_topic(3, 2, seed)).unwrap();
            let doc = random_doc(3, 6, &mut rng);
            let s = ep_infer_document(&params, &doc, None, &EPConfig::default()).unwrap();
            let exact = exact_log_evidence(&params, &doc, EvidenceBudget::default()).unwrap();
            prop_assert!((s.log_evidence - exact).abs() / exact.abs() < 0.05, "{} vs {}", s.log_evidence, exact);
        }

        #[test]
        fn normalized_columns_sum_to_one(seed in any::<u64>()) {
            let topo = Arc::new(random_tree(seed, 5));
            let prior = DTParams::uniform(topo, 1.0).unwrap();
            let k = prior.topology().leaf_count();
            let params = ModelParams::new(prior, random_word_topic(6, k, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let doc = random_doc(6, 12, &mut rng);
            let cfg = EPConfig { normalize: true, damping: 0.7, ..EPConfig::default() };
            let s = ep_infer_document(&params, &doc, None, &cfg).unwrap();
            for j in 0..doc.len() {
                prop_assert!((s.trans.col(j).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            prop_assert!(s.z.iter().all(|&z| z > 0.0));
            prop_assert!(s.log_evidence.is_finite());
        }
    }
}
