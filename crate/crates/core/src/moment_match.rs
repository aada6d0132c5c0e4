//! Digamma family and recovery of Dirichlet-Tree parameters from target
//! expectations of the sufficient statistics.
//!
//! For one internal node with child parameters `α` the statistics are
//! `E[log ρ_k] = ψ(α_k) − ψ(α₀)`, `α₀ = Σ α`. Nodes are independent, so a
//! tree-wide solve is a loop of per-node solves.

use alloc::vec;
use alloc::vec::Vec;

use crate::dtree::DTParams;
use crate::linalg::Matrix;
use crate::math::{exp, ln};
use crate::tree::TreeTopology;
use crate::{Error, Result};

use alloc::sync::Arc;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Below this, both series are shifted up with the recurrence.
const ASYMPTOTIC_FROM: f64 = 6.0;

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITERS: usize = 100;
const MAX_HALVINGS: usize = 40;
pub const FIXED_POINT_MAX_ITERS: usize = 20_000;

/// ψ(x). Returns NaN for `x ≤ 0` or NaN input.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x.is_infinite() {
        return x;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    // Bernoulli terms B_2n / (2n x^2n), n = 1..7, Horner in 1/x².
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0
                    - r * (1.0 / 240.0
                        - r * (1.0 / 132.0 - r * (691.0 / 32760.0 - r * (1.0 / 12.0)))))));
    acc + ln(x) - 0.5 / x - series
}

/// ψ′(x). Returns NaN for `x ≤ 0` or NaN input.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    // B_2n / x^(2n+1), n = 1..7.
    let series = r
        * (1.0 / 6.0
            - r * (1.0 / 30.0
                - r * (1.0 / 42.0
                    - r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * (691.0 / 2730.0 - r * (7.0 / 6.0)))))))
        / x;
    acc + 1.0 / x + 0.5 * r + series
}

/// The positive `x` with `ψ(x) = y`.
pub fn inverse_digamma(y: f64) -> f64 {
    let mut x = if y >= -2.22 {
        exp(y) + 0.5
    } else {
        -1.0 / (y + EULER_GAMMA)
    };
    for _ in 0..5 {
        let step = (digamma(x) - y) / trigamma(x);
        let next = x - step;
        x = if next > 0.0 { next } else { 0.5 * x };
        if step.abs() <= 1e-15 * x {
            break;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSolution {
    pub alpha: Vec<f64>,
    pub iterations: usize,
}

/// `d_k = ψ(α_k) − ψ(α₀) − u_k`.
pub fn node_residual(alpha: &[f64], u: &[f64]) -> Vec<f64> {
    let psi0 = digamma(alpha.iter().sum());
    alpha
        .iter()
        .zip(u)
        .map(|(&a, &uk)| digamma(a) - psi0 - uk)
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_node_inputs(u: &[f64], init: &[f64]) -> Result<()> {
    if u.len() != init.len() {
        return Err(Error::DimensionMismatch {
            what: "node target",
            expected: init.len(),
            found: u.len(),
        });
    }
    if u.len() < 2 {
        return Err(Error::InvalidArgument("a node needs at least two children"));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("target statistics must be finite"));
    }
    if let Some((branch, &value)) = init.iter().enumerate().find(|(_, &a)| !(a > 0.0)) {
        return Err(Error::NonPositiveParameter { branch, value });
    }
    Ok(())
}

/// Jacobian of the residual: `diag(ψ′(α)) − ψ′(α₀) 11ᵀ`.
pub fn jacobian(alpha: &[f64]) -> Matrix {
    let c = alpha.len();
    let t0 = trigamma(alpha.iter().sum());
    let mut j = Matrix::filled(c, c, -t0);
    for (k, &a) in alpha.iter().enumerate() {
        j[(k, k)] += trigamma(a);
    }
    j
}

/// Closed-form inverse of [`jacobian`]: `diag(π) − ππᵀ/σ` with `π_k = 1/ψ′(α_k)`
/// and `σ = Σπ − 1/ψ′(α₀)`.
pub fn inverse_jacobian(alpha: &[f64]) -> Matrix {
    let pi: Vec<f64> = alpha.iter().map(|&a| 1.0 / trigamma(a)).collect();
    let sigma = pi.iter().sum::<f64>() - 1.0 / trigamma(alpha.iter().sum());
    let c = alpha.len();
    let mut inv = Matrix::zeros(c, c);
    for i in 0..c {
        for j in 0..c {
            inv[(i, j)] = -pi[i] * pi[j] / sigma;
        }
        inv[(i, i)] += pi[i];
    }
    inv
}

fn newton_step(alpha: &[f64], d: &[f64]) -> Vec<f64> {
    let pi: Vec<f64> = alpha.iter().map(|&a| 1.0 / trigamma(a)).collect();
    let sigma = pi.iter().sum::<f64>() - 1.0 / trigamma(alpha.iter().sum());
    let pd: f64 = pi.iter().zip(d).map(|(p, x)| p * x).sum();
    pi.iter()
        .zip(d)
        .map(|(&p, &x)| p * (x - pd / sigma))
        .collect()
}

/// Newton–Raphson on the residual with the rank-one inverse Jacobian.
///
/// A step that leaves the positive orthant, or does not decrease `‖d‖∞`, is
/// halved. Once `‖d‖∞ < NEWTON_TOL` one more full step is taken when it does
/// not increase the residual: the Jacobian can be ill-conditioned enough that
/// a residual of `1e-10` still leaves parameter error near `1e-7`.
pub fn match_node_newton(u: &[f64], init: &[f64]) -> Result<NodeSolution> {
    check_node_inputs(u, init)?;
    let mut alpha = init.to_vec();
    let mut d = node_residual(&alpha, u);
    let mut norm = inf_norm(&d);
    let mut trial = vec![0.0; alpha.len()];

    for iter in 0..NEWTON_MAX_ITERS {
        let step = newton_step(&alpha, &d);
        if norm < NEWTON_TOL {
            for ((t, a), s) in trial.iter_mut().zip(&alpha).zip(&step) {
                *t = a - s;
            }
            if trial.iter().all(|&a| a > 0.0) && inf_norm(&node_residual(&trial, u)) <= norm {
                alpha.copy_from_slice(&trial);
            }
            return Ok(NodeSolution {
                alpha,
                iterations: iter,
            });
        }

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            for ((t, a), s) in trial.iter_mut().zip(&alpha).zip(&step) {
                *t = a - scale * s;
            }
            if trial.iter().all(|&a| a > 0.0 && a.is_finite()) {
                let d_trial = node_residual(&trial, u);
                let n_trial = inf_norm(&d_trial);
                if n_trial < norm {
                    alpha.copy_from_slice(&trial);
                    d = d_trial;
                    norm = n_trial;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::PositivityLost);
        }
    }
    if norm < NEWTON_TOL {
        return Ok(NodeSolution {
            alpha,
            iterations: NEWTON_MAX_ITERS,
        });
    }
    Err(Error::NoConvergence {
        solver: "newton",
        iterations: NEWTON_MAX_ITERS,
    })
}

/// Fixed-point iteration `α_k ← ψ⁻¹(ψ(α₀) + u_k)`.
pub fn match_node_fixed_point(u: &[f64], init: &[f64]) -> Result<NodeSolution> {
    check_node_inputs(u, init)?;
    let mut alpha = init.to_vec();
    for iter in 0..FIXED_POINT_MAX_ITERS {
        if inf_norm(&node_residual(&alpha, u)) < NEWTON_TOL {
            return Ok(NodeSolution {
                alpha,
                iterations: iter,
            });
        }
        let psi0 = digamma(alpha.iter().sum());
        for (a, &uk) in alpha.iter_mut().zip(u) {
            *a = inverse_digamma(psi0 + uk);
        }
    }
    Err(Error::NoConvergence {
        solver: "fixed-point",
        iterations: FIXED_POINT_MAX_ITERS,
    })
}

/// Newton first; on failure restart from `init` with the fixed-point solver.
pub fn match_node(u: &[f64], init: &[f64]) -> Result<NodeSolution> {
    match match_node_newton(u, init) {
        Ok(sol) => Ok(sol),
        Err(e @ (Error::DimensionMismatch { .. }
        | Error::InvalidArgument(_)
        | Error::NonPositiveParameter { .. })) => Err(e),
        Err(e) => {
            log::debug!("newton failed ({e}); falling back to fixed-point iteration");
            match_node_fixed_point(u, init)
        }
    }
}

/// Branch parameters whose expected sufficient statistics equal `u`, one
/// independent solve per internal node. `init` defaults to all ones.
pub fn match_tree_xi(topo: &TreeTopology, u: &[f64], init: Option<&[f64]>) -> Result<Vec<f64>> {
    let dim = topo.branch_count();
    if u.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "target statistics",
            expected: dim,
            found: u.len(),
        });
    }
    if let Some(init) = init {
        if init.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "initial parameters",
                expected: dim,
                found: init.len(),
            });
        }
    }
    let mut xi = vec![0.0; dim];
    let mut u_node = Vec::new();
    let mut a_node = Vec::new();
    for &s in topo.internal_nodes() {
        u_node.clear();
        a_node.clear();
        for d in topo.child_branches(s) {
            u_node.push(u[d]);
            a_node.push(init.map_or(1.0, |x| x[d]));
        }
        let sol = match_node(&u_node, &a_node).map_err(|e| Error::NodeSolve {
            node: topo.name(s).into(),
            source: alloc::boxed::Box::new(e),
        })?;
        for (d, a) in topo.child_branches(s).zip(sol.alpha) {
            xi[d] = a;
        }
    }
    Ok(xi)
}

pub fn match_tree(
    topo: &Arc<TreeTopology>,
    u: &[f64],
    init: Option<&DTParams>,
) -> Result<DTParams> {
    let xi = match_tree_xi(topo, u, init.map(DTParams::xi))?;
    DTParams::new(topo.clone(), xi)
}
