//! Mean-field variational inference.
//!
//! Each document gets `q(θ) = DT(θ|ζ)` and per-word topic responsibilities
//! `r_{kv}`. Given `ζ`, the optimal responsibilities are
//! `r_{kv} ∝ φ_{vk} exp(E_ζ[log θ_k])`; given `r`, the optimal `ζ` is the
//! conjugate update `ξ ⊕ (r·n)`. The EM loop alternates these E-steps over the
//! corpus with closed-form M-steps for `φ` and a moment match for `ξ`.

use alloc::vec;
use core::time::Duration;
use alloc::vec::Vec;

use crate::dtree::{self, DTParams};
use crate::exec::DocRunner;
use crate::linalg::Matrix;
use crate::math::{exp, ln, log_sum_exp};
use crate::model::{Corpus, Document, ModelParams};
use crate::moment_match;
use crate::{Error, Result};

/// Floor for `φ` inside logarithms. Exact zeros take the error path instead.
pub const PHI_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepConfig {
    pub max_iters: usize,
    /// Relative ELBO change that ends the inner loop.
    pub tol: f64,
}

impl Default for EStepConfig {
    fn default() -> Self {
        EStepConfig {
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

/// Settings shared by both EM fitters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Relative objective change that ends the outer loop.
    pub tol: f64,
    pub e_step: EStepConfig,
    /// Seed of the random `φ` initialization.
    pub seed: u64,
    pub learn_prior: bool,
    pub learn_word_topic: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 100,
            tol: 1e-4,
            e_step: EStepConfig::default(),
            seed: 0,
            learn_prior: true,
            learn_word_topic: true,
        }
    }
}

impl FitConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.e_step.max_iters == 0 {
            return Err(Error::InvalidArgument("iteration caps must be positive"));
        }
        if !(self.tol > 0.0) || !(self.e_step.tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VIDocState {
    pub zeta: DTParams,
    /// `K × L` responsibilities, one column per distinct word of the document.
    pub resp: Matrix,
    pub elbo: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    /// Corpus objective after every E-step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Documents whose inner loop hit its cap in the last E-step.
    pub unconverged_docs: usize,
    /// M-steps for `ξ` that failed and kept the previous prior.
    pub prior_failures: usize,
    /// Left at zero here; filled in by callers that own a clock.
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VIFit {
    pub params: ModelParams,
    pub states: Vec<VIDocState>,
    pub report: FitReport,
}

fn check_words(params: &ModelParams, doc: &Document) -> Result<()> {
    params.check_doc(doc)?;
    for &w in doc.words() {
        if params.word_topic.row(w).iter().all(|&p| p == 0.0) {
            return Err(Error::ImpossibleWord { word: w });
        }
    }
    Ok(())
}

/// `Σ_j n_j r_{kj}`: expected topic counts.
pub fn pseudo_counts(doc: &Document, resp: &Matrix) -> Vec<f64> {
    let mut c = vec![0.0; resp.rows()];
    for (j, &n) in doc.counts().iter().enumerate() {
        for (k, ck) in c.iter_mut().enumerate() {
            *ck += resp[(k, j)] * n as f64;
        }
    }
    c
}

/// `[ξ − ζ + D(r·n)]ᵀ E_ζ[u] + log g(ζ) − log g(ξ)
///  + Σ_v n_v Σ_k r_{kv} (log φ_{vk} − log r_{kv})`.
pub fn elbo_document(params: &ModelParams, doc: &Document, zeta: &DTParams, resp: &Matrix) -> Result<f64> {
    let topo = params.prior.topology();
    let k = params.topics();
    if resp.rows() != k || resp.cols() != doc.len() {
        return Err(Error::DimensionMismatch {
            what: "responsibilities",
            expected: k * doc.len(),
            found: resp.rows() * resp.cols(),
        });
    }
    let stats = zeta.expected_sufficient_stats();
    let sel = topo.select(&pseudo_counts(doc, resp));
    let mut total: f64 = (0..stats.len())
        .map(|d| (params.prior.xi()[d] - zeta.xi()[d] + sel[d]) * stats[d])
        .sum();
    total += zeta.log_normalizer() - params.prior.log_normalizer();
    for (j, (w, n)) in doc.iter().enumerate() {
        let mut word = 0.0;
        for c in 0..k {
            let r = resp[(c, j)];
            if r == 0.0 {
                continue;
            }
            let phi = params.word_topic[(w, c)];
            if phi == 0.0 {
                return Err(Error::ZeroLikelihood { word: w });
            }
            word += r * (ln(phi.max(PHI_LOG_FLOOR)) - ln(r));
        }
        total += n as f64 * word;
    }
    Ok(total)
}

/// Optimal responsibilities given `ζ`.
pub fn update_resp(params: &ModelParams, doc: &Document, zeta: &DTParams) -> Matrix {
    let k = params.topics();
    let elog = zeta.expected_log_theta();
    let mut resp = Matrix::zeros(k, doc.len());
    let mut logits = vec![0.0; k];
    for (j, &w) in doc.words().iter().enumerate() {
        for c in 0..k {
            let phi = params.word_topic[(w, c)];
            logits[c] = if phi > 0.0 {
                ln(phi) + elog[c]
            } else {
                f64::NEG_INFINITY
            };
        }
        let norm = log_sum_exp(&logits);
        for c in 0..k {
            resp[(c, j)] = exp(logits[c] - norm);
        }
    }
    resp
}

/// Optimal `ζ = ξ ⊕ (r·n)` given responsibilities.
pub fn update_zeta(params: &ModelParams, doc: &Document, resp: &Matrix) -> DTParams {
    let xi = dtree::add_counts(params.prior.topology(), params.prior.xi(), &pseudo_counts(doc, resp));
    DTParams::new(params.prior.topology().clone(), xi).expect("adding nonnegative counts keeps ξ positive")
}

/// Coordinate ascent for one document. Without `init`, starts from uniform
/// responsibilities and `ζ = ξ ⊕ n/K`; with `init`, from that state's `ζ`.
pub fn e_step_document(
    params: &ModelParams,
    doc: &Document,
    init: Option<&VIDocState>,
    cfg: &EStepConfig,
) -> Result<VIDocState> {
    check_words(params, doc)?;
    let k = params.topics();
    let (mut zeta, mut resp) = match init {
        Some(s) if s.resp.cols() == doc.len() && s.zeta.topology() == params.prior.topology() => {
            (s.zeta.clone(), s.resp.clone())
        }
        _ => {
            let resp = Matrix::filled(k, doc.len(), 1.0 / k as f64);
            (update_zeta(params, doc, &resp), resp)
        }
    };
    // The starting responsibilities may put mass where φ is zero, so the bound
    // is first evaluated after a responsibility update.
    let mut elbo = f64::NEG_INFINITY;
    for iter in 1..=cfg.max_iters {
        resp = update_resp(params, doc, &zeta);
        zeta = update_zeta(params, doc, &resp);
        let next = elbo_document(params, doc, &zeta, &resp)?;
        let done = elbo.is_finite() && relative_change(elbo, next) < cfg.tol;
        elbo = next;
        if done {
            return Ok(VIDocState {
                zeta,
                resp,
                elbo,
                iterations: iter,
                converged: true,
            });
        }
    }
    Ok(VIDocState {
        zeta,
        resp,
        elbo,
        iterations: cfg.max_iters,
        converged: false,
    })
}

/// `φ_{vk} ∝ Σ_m Σ_{j: w_j = v} T_{kj}^{(m)} n_j^{(m)}`, shared by both fitters.
///
/// Negative accumulations are clamped to zero; a column without mass becomes
/// uniform.
pub fn word_topic_from_pseudo_counts<'a>(
    corpus: &Corpus,
    transitions: impl IntoIterator<Item = &'a Matrix>,
    k: usize,
) -> Matrix {
    let v = corpus.vocab_size();
    let mut acc = Matrix::zeros(v, k);
    for (doc, t) in corpus.docs().iter().zip(transitions) {
        for (j, (w, n)) in doc.iter().enumerate() {
            for c in 0..k {
                acc[(w, c)] += t[(c, j)] * n as f64;
            }
        }
    }
    for r in 0..v {
        for x in acc.row_mut(r) {
            *x = x.max(0.0);
        }
    }
    let sums = acc.column_sums();
    for (c, &s) in sums.iter().enumerate() {
        if s > 0.0 {
            for r in 0..v {
                acc[(r, c)] /= s;
            }
        } else {
            log::warn!("topic {c} received no mass; resetting its word distribution to uniform");
            for r in 0..v {
                acc[(r, c)] = 1.0 / v as f64;
            }
        }
    }
    acc
}

pub fn m_step_word_topic(corpus: &Corpus, states: &[VIDocState], k: usize) -> Matrix {
    word_topic_from_pseudo_counts(corpus, states.iter().map(|s| &s.resp), k)
}

/// Prior maximizing `Σ_m [ξᵀ E_{ζ_m}[u] − log g(ξ)]`: the moment match of the
/// averaged expected statistics, warm-started at `current`.
pub fn m_step_prior<'a>(
    zetas: impl IntoIterator<Item = &'a DTParams>,
    current: &DTParams,
) -> Result<DTParams> {
    let topo = current.topology();
    let mut mean = vec![0.0; topo.branch_count()];
    let mut count = 0usize;
    for z in zetas {
        for (m, s) in mean.iter_mut().zip(z.expected_sufficient_stats()) {
            *m += s;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("prior update needs at least one document"));
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    moment_match::match_tree(topo, &mean, Some(current))
}

pub(crate) fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Variational EM. `observer` sees `(iteration, corpus ELBO)` after every E-step.
pub fn fit_vi<R: DocRunner>(
    corpus: &Corpus,
    init: ModelParams,
    cfg: &FitConfig,
    runner: &R,
    observer: &mut dyn FnMut(usize, f64),
) -> Result<VIFit> {
    cfg.validate()?;
    init.check_corpus(corpus)?;
    let k = init.topics();
    let mut params = init;
    let mut states: Vec<VIDocState> = Vec::new();
    let mut report = FitReport::default();

    for iter in 1..=cfg.max_iters {
        let prev = &states;
        let p = &params;
        let next: Vec<Result<VIDocState>> = runner.map_docs(corpus.len(), |m| {
            e_step_document(p, &corpus.docs()[m], prev.get(m), &cfg.e_step)
        });
        states = next.into_iter().collect::<Result<_>>()?;
        let objective: f64 = states.iter().map(|s| s.elbo).sum();
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
            params.word_topic = m_step_word_topic(corpus, &states, k);
        }
        if cfg.learn_prior {
            match m_step_prior(states.iter().map(|s| &s.zeta), &params.prior) {
                Ok(prior) => params.prior = prior,
                Err(e) => {
                    log::warn!("prior update failed, keeping the current prior: {e}");
                    report.prior_failures += 1;
                }
            }
        }
    }
    Ok(VIFit {
        params,
        states,
        report,
    })
}
