//! The Dirichlet-Tree distribution.
//!
//! A Dirichlet-Tree over a topology places an independent Dirichlet on the
//! branch probabilities `ρ_s` of every internal node `s` and maps them to the
//! leaf simplex by multiplying along root-to-leaf paths. It is an exponential
//! family with sufficient statistics `u_{t|s} = log Θ_t − log Θ_s` (one per
//! branch), natural parameters `η_{t|s} = ξ_{t|s} − l(t)` and log-normalizer
//! `log g = Σ_s log B(ξ_s)`.
//!
//! Hot paths work on `(&TreeTopology, &[f64])` pairs through the free
//! functions; [`DTParams`] wraps a validated pair with an owned topology handle.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;
use crate::math::{exp, lgamma, ln, log_sum_exp, sqrt};
use crate::moment_match::digamma;
use crate::tree::TreeTopology;
use crate::{Error, Result};

/// Tolerance on `Σθ = 1` for [`Simplex`] and on every `ρ_s`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Floor applied to node masses before taking logs of sufficient statistics.
pub const THETA_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityForm {
    /// Product of per-node Dirichlets with the change-of-variables factor.
    Node,
    /// Leaf powers times internal-node mass corrections.
    General,
    /// `exp(ηᵀu(θ) − log g)`.
    Exponential,
}

/// A point of the leaf simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    theta: Vec<f64>,
}

impl Simplex {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = theta.iter().enumerate().find(|(_, &x)| !(x >= 0.0)) {
            return Err(Error::NonPositiveTheta { index, value });
        }
        let sum: f64 = theta.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotSimplex { what: "theta", sum });
        }
        Ok(Simplex { theta })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalForm {
    pub eta: Vec<f64>,
    pub log_g: f64,
}

/// Validated Dirichlet-Tree parameters `ξ`, indexed by branch.
#[derive(Debug, Clone, PartialEq)]
pub struct DTParams {
    topo: Arc<TreeTopology>,
    xi: Vec<f64>,
}

impl DTParams {
    pub fn new(topo: Arc<TreeTopology>, xi: Vec<f64>) -> Result<Self> {
        check_params(&topo, &xi)?;
        Ok(DTParams { topo, xi })
    }

    /// Every branch set to `value`.
    pub fn uniform(topo: Arc<TreeTopology>, value: f64) -> Result<Self> {
        let xi = vec![value; topo.branch_count()];
        Self::new(topo, xi)
    }

    pub fn topology(&self) -> &Arc<TreeTopology> {
        &self.topo
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn into_xi(self) -> Vec<f64> {
        self.xi
    }

    /// `ξ_{*|s}` for every node, zero at leaves.
    pub fn node_sums(&self) -> Vec<f64> {
        node_sums(&self.topo, &self.xi)
    }

    pub fn log_normalizer(&self) -> f64 {
        log_normalizer(&self.topo, &self.xi)
    }

    pub fn natural_form(&self) -> NaturalForm {
        NaturalForm {
            eta: (0..self.xi.len())
                .map(|d| self.xi[d] - self.topo.leaves_under(self.topo.branch_node(d)) as f64)
                .collect(),
            log_g: self.log_normalizer(),
        }
    }

    /// `E[u_{t|s}] = ψ(ξ_{t|s}) − ψ(ξ_{*|s})`.
    pub fn expected_sufficient_stats(&self) -> Vec<f64> {
        expected_sufficient_stats(&self.topo, &self.xi)
    }

    /// `E[log θ_k]`: path sums of the expected sufficient statistics.
    pub fn expected_log_theta(&self) -> Vec<f64> {
        self.topo.path_sum(&self.expected_sufficient_stats())
    }

    pub fn expected_theta(&self) -> Vec<f64> {
        expected_theta(&self.topo, &self.xi)
    }

    /// `E[∏ θ_k^{n_k}] = g(ξ ⊕ n) / g(ξ)`.
    pub fn expected_monomial(&self, n: &[f64]) -> Result<f64> {
        let post = self.bayesian_add(n)?;
        Ok(exp(post.log_normalizer() - self.log_normalizer()))
    }

    /// Conjugate update `ξ' = ξ + D n`; `n` may be any real vector that keeps `ξ'` positive.
    pub fn bayesian_add(&self, n: &[f64]) -> Result<DTParams> {
        self.check_leaf_len(n)?;
        let xi = add_counts(&self.topo, &self.xi, n);
        DTParams::new(self.topo.clone(), xi)
    }

    /// `bayesian_add(-n)`.
    pub fn bayesian_sub(&self, n: &[f64]) -> Result<DTParams> {
        self.check_leaf_len(n)?;
        let sel = self.topo.select(n);
        let xi = self.xi.iter().zip(&sel).map(|(x, s)| x - s).collect();
        DTParams::new(self.topo.clone(), xi)
    }

    /// The `K` posteriors after one observation of each leaf.
    pub fn base_posteriors(&self) -> Vec<DTParams> {
        let k = self.topo.leaf_count();
        (0..k)
            .map(|j| {
                let mut onehot = vec![0.0; k];
                onehot[j] = 1.0;
                self.bayesian_add(&onehot)
                    .expect("adding a positive count keeps parameters positive")
            })
            .collect()
    }

    /// `D × K` matrix whose row `d` is `E[θ]` under the derived distribution
    /// `∝ u_d(θ)·DT(θ|ξ)`.
    pub fn derived_expectation_matrix(&self) -> Matrix {
        let (dim, k) = (self.topo.branch_count(), self.topo.leaf_count());
        let mean = self.expected_theta();
        let stats = self.expected_sufficient_stats();
        let base = base_posterior_stats(&self.topo, &self.xi, &stats);
        let mut m = Matrix::zeros(dim, k);
        for d in 0..dim {
            for j in 0..k {
                m[(d, j)] = mean[j] * base[(d, j)] / stats[d];
            }
        }
        m
    }

    pub fn log_density(&self, theta: &Simplex, form: DensityForm) -> Result<f64> {
        log_density(&self.topo, &self.xi, theta.as_slice(), form)
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Simplex {
        Simplex {
            theta: sample_theta(&self.topo, &self.xi, rng),
        }
    }

    fn check_leaf_len(&self, n: &[f64]) -> Result<()> {
        if n.len() != self.topo.leaf_count() {
            return Err(Error::DimensionMismatch {
                what: "leaf counts",
                expected: self.topo.leaf_count(),
                found: n.len(),
            });
        }
        Ok(())
    }
}

pub fn check_params(topo: &TreeTopology, xi: &[f64]) -> Result<()> {
    if xi.len() != topo.branch_count() {
        return Err(Error::DimensionMismatch {
            what: "branch parameters",
            expected: topo.branch_count(),
            found: xi.len(),
        });
    }
    match xi.iter().enumerate().find(|(_, &x)| !(x > 0.0 && x.is_finite())) {
        Some((branch, &value)) => Err(Error::NonPositiveParameter { branch, value }),
        None => Ok(()),
    }
}

pub fn node_sums(topo: &TreeTopology, xi: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; topo.node_count()];
    for &s in topo.internal_nodes() {
        sums[s] = topo.child_branches(s).map(|d| xi[d]).sum();
    }
    sums
}

/// `ξ + D n` without validation.
pub fn add_counts(topo: &TreeTopology, xi: &[f64], n: &[f64]) -> Vec<f64> {
    let sel = topo.select(n);
    xi.iter().zip(&sel).map(|(x, s)| x + s).collect()
}

/// `Σ_s [Σ_{t|s} log Γ(ξ_{t|s}) − log Γ(ξ_{*|s})]`.
pub fn log_normalizer(topo: &TreeTopology, xi: &[f64]) -> f64 {
    topo.internal_nodes()
        .iter()
        .map(|&s| {
            let mut total = 0.0;
            let mut lg = 0.0;
            for d in topo.child_branches(s) {
                total += xi[d];
                lg += lgamma(xi[d]);
            }
            lg - lgamma(total)
        })
        .sum()
}

pub fn expected_sufficient_stats(topo: &TreeTopology, xi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xi.len()];
    for &s in topo.internal_nodes() {
        let psi_total = digamma(topo.child_branches(s).map(|d| xi[d]).sum());
        for d in topo.child_branches(s) {
            out[d] = digamma(xi[d]) - psi_total;
        }
    }
    out
}

/// Products of `ξ_{t|s} / ξ_{*|s}` along each leaf path.
pub fn expected_theta(topo: &TreeTopology, xi: &[f64]) -> Vec<f64> {
    let sums = node_sums(topo, xi);
    let mut mass = vec![1.0; topo.node_count()];
    for v in 1..topo.node_count() {
        let s = topo.parent(v).expect("non-root node has a parent");
        mass[v] = mass[s] * xi[v - 1] / sums[s];
    }
    topo.leaves().iter().map(|&v| mass[v]).collect()
}

/// `E_{base_k}[u_d]` for every branch `d` and leaf `k`, using `ψ(x+1) = ψ(x) + 1/x`.
pub fn base_posterior_stats(topo: &TreeTopology, xi: &[f64], stats: &[f64]) -> Matrix {
    let sums = node_sums(topo, xi);
    let k = topo.leaf_count();
    let mut m = Matrix::zeros(xi.len(), k);
    for d in 0..xi.len() {
        let t = topo.branch_node(d);
        let s = topo.branch_parent(d);
        let on_branch = topo.leaf_range(t);
        for j in 0..k {
            // Every leaf path runs through the root; below it only the subtree of s.
            let mut v = stats[d];
            if topo.leaf_range(s).contains(&j) {
                v -= 1.0 / sums[s];
            }
            if on_branch.contains(&j) {
                v += 1.0 / xi[d];
            }
            m[(d, j)] = v;
        }
    }
    m
}

/// `Σ_k w_k E_{base_k}[u]` for normalized weights `w`, in `O(D)`.
pub fn mixture_base_stats(topo: &TreeTopology, xi: &[f64], stats: &[f64], w: &[f64]) -> Vec<f64> {
    let sums = node_sums(topo, xi);
    let sel = topo.select(w);
    let total: f64 = w.iter().sum();
    (0..xi.len())
        .map(|d| {
            let s = topo.branch_parent(d);
            let w_parent = if s == topo.root() { total } else { sel[s - 1] };
            stats[d] + sel[d] / xi[d] - w_parent / sums[s]
        })
        .collect()
}

/// Node masses `Θ_s` from leaf values, by one bottom-up pass.
pub fn node_masses(topo: &TreeTopology, theta: &[f64]) -> Vec<f64> {
    let mut mass = vec![0.0; topo.node_count()];
    for (k, &v) in topo.leaves().iter().enumerate() {
        mass[v] = theta[k];
    }
    for s in (0..topo.node_count()).rev() {
        if !topo.is_leaf(s) {
            mass[s] = topo.children(s).iter().map(|&t| mass[t]).sum();
        }
    }
    mass
}

/// `u_d(θ) = log Θ_t − log Θ_s`, with node masses floored at [`THETA_FLOOR`].
pub fn sufficient_stats(topo: &TreeTopology, theta: &[f64]) -> Vec<f64> {
    let mass = node_masses(topo, theta);
    let log_mass: Vec<f64> = mass.iter().map(|&m| ln(m.max(THETA_FLOOR))).collect();
    (0..topo.branch_count())
        .map(|d| log_mass[d + 1] - log_mass[topo.branch_parent(d)])
        .collect()
}

/// `θ_ω = ∏ ρ_{t|s}` along the path of `ω`. `rho` is indexed by branch.
pub fn theta_from_branch_probs(topo: &TreeTopology, rho: &[f64]) -> Result<Simplex> {
    if rho.len() != topo.branch_count() {
        return Err(Error::DimensionMismatch {
            what: "branch probabilities",
            expected: topo.branch_count(),
            found: rho.len(),
        });
    }
    for &s in topo.internal_nodes() {
        let mut sum = 0.0;
        for d in topo.child_branches(s) {
            if !(rho[d] >= 0.0) {
                return Err(Error::NotSimplex {
                    what: "branch probabilities",
                    sum: rho[d],
                });
            }
            sum += rho[d];
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotSimplex {
                what: "branch probabilities",
                sum,
            });
        }
    }
    let mut mass = vec![1.0; topo.node_count()];
    for v in 1..topo.node_count() {
        mass[v] = mass[topo.parent(v).unwrap()] * rho[v - 1];
    }
    let theta: Vec<f64> = topo.leaves().iter().map(|&v| mass[v]).collect();
    // Renormalize away path-product rounding.
    let sum: f64 = theta.iter().sum();
    Simplex::new(theta.into_iter().map(|t| t / sum).collect())
}

/// `ρ_{t|s} = Θ_t / Θ_s`, indexed by branch.
pub fn branch_probs_from_theta(topo: &TreeTopology, theta: &Simplex) -> Result<Vec<f64>> {
    if theta.len() != topo.leaf_count() {
        return Err(Error::DimensionMismatch {
            what: "theta",
            expected: topo.leaf_count(),
            found: theta.len(),
        });
    }
    let mass = node_masses(topo, theta.as_slice());
    let mut rho = vec![0.0; topo.branch_count()];
    for &s in topo.internal_nodes() {
        if mass[s] <= 0.0 {
            return Err(Error::ZeroNodeMass {
                node: topo.name(s).into(),
            });
        }
        for d in topo.child_branches(s) {
            rho[d] = mass[d + 1] / mass[s];
        }
    }
    Ok(rho)
}

pub fn log_density(topo: &TreeTopology, xi: &[f64], theta: &[f64], form: DensityForm) -> Result<f64> {
    check_params(topo, xi)?;
    if theta.len() != topo.leaf_count() {
        return Err(Error::DimensionMismatch {
            what: "theta",
            expected: topo.leaf_count(),
            found: theta.len(),
        });
    }
    if let Some((index, &value)) = theta.iter().enumerate().find(|(_, &t)| !(t > 0.0)) {
        return Err(Error::NonPositiveTheta { index, value });
    }
    let log_mass: Vec<f64> = node_masses(topo, theta).iter().map(|&m| ln(m)).collect();
    let sums = node_sums(topo, xi);
    let log_beta = |s: usize| -> f64 {
        topo.child_branches(s).map(|d| lgamma(xi[d])).sum::<f64>() - lgamma(sums[s])
    };

    let value = match form {
        DensityForm::Node => topo
            .internal_nodes()
            .iter()
            .map(|&s| {
                let jac = (topo.child_count(s) as f64 - 1.0) * log_mass[s];
                let body: f64 = topo
                    .child_branches(s)
                    .map(|d| (xi[d] - 1.0) * (log_mass[d + 1] - log_mass[s]))
                    .sum();
                body - log_beta(s) - jac
            })
            .sum(),
        DensityForm::General => {
            let leaves: f64 = topo
                .leaves()
                .iter()
                .map(|&v| (xi[v - 1] - 1.0) * log_mass[v])
                .sum();
            let nodes: f64 = topo
                .internal_nodes()
                .iter()
                .map(|&s| {
                    let correction = if s == topo.root() {
                        0.0
                    } else {
                        (xi[s - 1] - sums[s]) * log_mass[s]
                    };
                    correction - log_beta(s)
                })
                .sum();
            leaves + nodes
        }
        DensityForm::Exponential => {
            let dot: f64 = (0..xi.len())
                .map(|d| {
                    let t = d + 1;
                    let eta = xi[d] - topo.leaves_under(t) as f64;
                    eta * (log_mass[t] - log_mass[topo.branch_parent(d)])
                })
                .sum();
            dot - log_normalizer(topo, xi)
        }
    };
    Ok(value)
}

/// `log X` for `X ~ Gamma(shape, 1)` by Marsaglia–Tsang, with the
/// `X = Y·U^{1/shape}`, `Y ~ Gamma(shape + 1)` boost for `shape < 1`.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>();
        return sample_log_gamma(shape + 1.0, rng) + ln(u) / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / sqrt(9.0 * d);
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || ln(u) < 0.5 * x2 + d * (1.0 - v + ln(v)) {
            return ln(d) + ln(v);
        }
    }
}

/// Independent Dirichlet draws per internal node, composed along paths in log space.
pub fn sample_theta<R: Rng + ?Sized>(topo: &TreeTopology, xi: &[f64], rng: &mut R) -> Vec<f64> {
    let mut log_rho = vec![0.0; topo.branch_count()];
    let mut buf = Vec::new();
    for &s in topo.internal_nodes() {
        buf.clear();
        buf.extend(topo.child_branches(s).map(|d| sample_log_gamma(xi[d], rng)));
        let norm = log_sum_exp(&buf);
        for (d, lg) in topo.child_branches(s).zip(&buf) {
            log_rho[d] = lg - norm;
        }
    }
    let log_theta = topo.path_sum(&log_rho);
    let norm = log_sum_exp(&log_theta);
    log_theta.iter().map(|&l| exp(l - norm)).collect()
}

fn check_family_params(values: &[f64]) -> Result<()> {
    match values.iter().enumerate().find(|(_, &x)| !(x > 0.0 && x.is_finite())) {
        Some((branch, &value)) => Err(Error::NonPositiveParameter { branch, value }),
        None => Ok(()),
    }
}

/// Flat tree: the ordinary Dirichlet.
pub fn make_dirichlet_prior(k: usize, alpha: &[f64]) -> Result<DTParams> {
    if alpha.len() != k {
        return Err(Error::DimensionMismatch {
            what: "dirichlet parameters",
            expected: k,
            found: alpha.len(),
        });
    }
    check_family_params(alpha)?;
    DTParams::new(Arc::new(TreeTopology::flat(k)?), alpha.to_vec())
}

/// Root splits into a Beta over (leaves `1..K−1`, leaf `K`) with parameters
/// `(alpha, beta)`; the left child is a Dirichlet over `K−1` leaves.
pub fn make_beta_liouville_prior(k: usize, alpha: f64, beta: f64, alphas: &[f64]) -> Result<DTParams> {
    if k < 3 {
        return Err(Error::InvalidArgument("beta-liouville needs at least three leaves"));
    }
    if alphas.len() != k - 1 {
        return Err(Error::DimensionMismatch {
            what: "beta-liouville leaf parameters",
            expected: k - 1,
            found: alphas.len(),
        });
    }
    let mut edges = vec![(alloc::string::String::from("inner"), "root".into())];
    edges.extend((1..k).map(|i| (alloc::format!("t{i}"), "inner".into())));
    edges.push((alloc::format!("t{k}"), "root".into()));
    let topo = TreeTopology::from_edges(&edges)?;
    // Preorder: inner, t1..t_{K-1}, t_K.
    let mut xi = Vec::with_capacity(k + 1);
    xi.push(alpha);
    xi.extend_from_slice(alphas);
    xi.push(beta);
    check_family_params(&xi)?;
    DTParams::new(Arc::new(topo), xi)
}

/// Right cascade: level `k` holds leaf `k` (`alpha_k`) and the rest (`kappa_k`);
/// the last level holds leaves `K−1` and `K`.
pub fn make_generalized_dirichlet_prior(k: usize, alphas: &[f64], kappas: &[f64]) -> Result<DTParams> {
    if k < 2 {
        return Err(Error::InvalidArgument("a tree needs at least two leaves"));
    }
    for (what, v) in [("gd alphas", alphas), ("gd kappas", kappas)] {
        if v.len() != k - 1 {
            return Err(Error::DimensionMismatch {
                what,
                expected: k - 1,
                found: v.len(),
            });
        }
    }
    let mut edges = Vec::new();
    let mut xi = Vec::new();
    for i in 1..k {
        let level = alloc::format!("g{i}");
        edges.push((alloc::format!("t{i}"), level.clone()));
        xi.push(alphas[i - 1]);
        let rest = if i + 1 < k {
            alloc::format!("g{}", i + 1)
        } else {
            alloc::format!("t{k}")
        };
        edges.push((rest, level));
        xi.push(kappas[i - 1]);
    }
    check_family_params(&xi)?;
    DTParams::new(Arc::new(TreeTopology::from_edges(&edges)?), xi)
}
