//! Task loss, counterfactual constraint loss and their analytic gradients.
//!
//! The objective for one minibatch is
//!
//! ```text
//! L = L_task + w_u * L_u + w_b * L_b
//! L_u = 1/m * sum_i [ D(c_i, f_i) - lambda * sum_{j != i} D(c_j, f_i) ]
//! D(a, b) = -exp(a . b / tau)
//! ```
//!
//! where `f_i` / `c_i` are the row-normalized factual / counterfactual
//! embeddings of the i-th distinct user in the minibatch (`L_b` is the same
//! over the minibatch's distinct positive bundles). `L_task` is BPR on the
//! factual view.

use serde::{Deserialize, Serialize};

use crate::encoder::{row_normalize, PropagatedEmbeddings};
use crate::error::{Error, Result};
use crate::graph::NodeType;
use crate::linalg::{axpy, dot, norm, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub omega_u: f64,
    pub omega_b: f64,
    /// `None` uses `1 / (rows - 1)` for the block at hand.
    pub lambda_u: Option<f64>,
    pub lambda_b: Option<f64>,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            omega_u: 0.1,
            omega_b: 0.1,
            lambda_u: None,
            lambda_b: None,
            tau: 1.0,
        }
    }
}

impl LossConfig {
    /// Task loss only.
    pub fn without_constraint() -> Self {
        LossConfig {
            omega_u: 0.0,
            omega_b: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("loss.omega_u", self.omega_u),
            ("loss.omega_b", self.omega_b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be finite and >= 0"));
            }
        }
        for (key, v) in [
            ("loss.lambda_u", self.lambda_u),
            ("loss.lambda_b", self.lambda_b),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::config(key, "must be finite and >= 0"));
                }
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("loss.tau", "must be > 0"));
        }
        Ok(())
    }

    pub fn constraint_active(&self) -> bool {
        self.omega_u > 0.0 || self.omega_b > 0.0
    }
}

/// Default unrestraint multiplier: average over the other rows of the block.
pub fn default_lambda(rows: usize) -> f64 {
    if rows > 1 {
        1.0 / (rows as f64 - 1.0)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_task: f64,
    pub l_u: f64,
    pub l_b: f64,
    pub total: f64,
}

pub fn total_loss(task: f64, l_u: f64, l_b: f64, cfg: &LossConfig) -> LossBreakdown {
    LossBreakdown {
        l_task: task,
        l_u,
        l_b,
        total: task + cfg.omega_u * l_u + cfg.omega_b * l_b,
    }
}

#[inline]
pub fn distance(a: &[f64], b: &[f64], tau: f64) -> f64 {
    -(dot(a, b) / tau).exp()
}

fn check_blocks(view: &Matrix, factual: &Matrix) -> Result<()> {
    view.check_same_shape(factual, "constraint blocks")?;
    if view.rows() == 0 {
        return Err(Error::EmptyInput("constraint block"));
    }
    Ok(())
}

/// Constraint loss over one block of rows (already normalized).
pub fn constraint_loss(view: &Matrix, factual: &Matrix, lambda: f64, tau: f64) -> Result<f64> {
    check_blocks(view, factual)?;
    let m = view.rows();
    let mut sum = 0.0;
    for i in 0..m {
        let fi = factual.row(i);
        let mut unrestraint = 0.0;
        for j in 0..m {
            if j != i {
                unrestraint += distance(view.row(j), fi, tau);
            }
        }
        sum += distance(view.row(i), fi, tau) - lambda * unrestraint;
    }
    Ok(sum / m as f64)
}

/// Constraint loss and its gradients with respect to the normalized view and
/// factual blocks.
pub fn constraint_loss_grad(
    view: &Matrix,
    factual: &Matrix,
    lambda: f64,
    tau: f64,
) -> Result<(f64, Matrix, Matrix)> {
    check_blocks(view, factual)?;
    let m = view.rows();
    let inv_m = 1.0 / m as f64;
    let mut grad_view = Matrix::zeros(m, view.cols());
    let mut grad_factual = Matrix::zeros(m, view.cols());
    let mut sum = 0.0;
    for i in 0..m {
        let fi = factual.row(i);
        let mut row_loss = 0.0;
        let mut unrestraint = 0.0;
        for j in 0..m {
            let cj = view.row(j);
            let e = (dot(cj, fi) / tau).exp();
            // coefficient of D(c_j, f_i) in the loss
            let coef = if i == j {
                row_loss -= e;
                inv_m
            } else {
                unrestraint -= e;
                -lambda * inv_m
            };
            // dD/dc_j = -e/tau * f_i, dD/df_i = -e/tau * c_j
            let w = -coef * e / tau;
            axpy(w, fi, grad_view.row_mut(j));
            axpy(w, cj, grad_factual.row_mut(i));
        }
        sum += row_loss - lambda * unrestraint;
    }
    Ok((sum * inv_m, grad_view, grad_factual))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-ln(sigmoid(pos - neg))` over aligned score pairs.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() {
        return Err(Error::EmptyInput("bpr scores"));
    }
    if pos_scores.len() != neg_scores.len() {
        return Err(Error::DimensionMismatch {
            what: "bpr score lists",
            expected: pos_scores.len(),
            found: neg_scores.len(),
        });
    }
    let sum: f64 = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(p, n)| softplus(n - p))
        .sum();
    Ok(sum / pos_scores.len() as f64)
}

/// (user, positive bundle, negative bundle), local ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Gradient of the full minibatch objective with respect to the propagated
/// tables of the factual view and (when the constraint is active) the
/// counterfactual view.
#[derive(Clone, Debug)]
pub struct ObjectiveGradient {
    pub breakdown: LossBreakdown,
    pub factual: Matrix,
    pub view: Option<Matrix>,
}

/// Distinct values in order of first appearance.
pub(crate) fn distinct(ids: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    ids.filter(|x| seen.insert(*x)).collect()
}

/// Backpropagates a gradient taken at `x / |x|` to `x`.
fn normalization_backward(raw: &Matrix, grad_normalized: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(raw.rows(), raw.cols());
    for i in 0..raw.rows() {
        let x = raw.row(i);
        let r = norm(x);
        if r == 0.0 {
            continue;
        }
        let g = grad_normalized.row(i);
        let gn = dot(g, x) / r;
        for ((o, gk), xk) in out.row_mut(i).iter_mut().zip(g).zip(x) {
            *o = (gk - gn * xk / r) / r;
        }
    }
    out
}

struct SideGradient {
    loss: f64,
    view: Matrix,
    factual: Matrix,
}

fn constraint_side(
    factual: &PropagatedEmbeddings,
    view: &PropagatedEmbeddings,
    globals: &[usize],
    lambda: Option<f64>,
    tau: f64,
) -> Result<SideGradient> {
    let raw_f = factual.values().gather(globals);
    let raw_c = view.values().gather(globals);
    let lambda = lambda.unwrap_or_else(|| default_lambda(globals.len()));
    let (loss, g_c, g_f) =
        constraint_loss_grad(&row_normalize(&raw_c), &row_normalize(&raw_f), lambda, tau)?;
    Ok(SideGradient {
        loss,
        view: normalization_backward(&raw_c, &g_c),
        factual: normalization_backward(&raw_f, &g_f),
    })
}

/// Loss breakdown and gradients for one minibatch.
///
/// The constraint terms are only evaluated when a view is given and their
/// weight is positive; otherwise they contribute (and report) zero.
pub fn loss_gradients(
    triples: &[BprTriple],
    factual: &PropagatedEmbeddings,
    view: Option<&PropagatedEmbeddings>,
    cfg: &LossConfig,
) -> Result<ObjectiveGradient> {
    if triples.is_empty() {
        return Err(Error::EmptyInput("minibatch"));
    }
    let space = factual.space();
    let dim = factual.dim();
    let n = triples.len() as f64;
    let mut grad_f = Matrix::zeros(space.total(), dim);

    let mut task = 0.0;
    for t in triples {
        let ug = space.global(NodeType::User, t.user);
        let pg = space.global(NodeType::Bundle, t.pos);
        let ng = space.global(NodeType::Bundle, t.neg);
        let (u, p, q) = (
            factual.values().row(ug),
            factual.values().row(pg),
            factual.values().row(ng),
        );
        let x = dot(u, p) - dot(u, q);
        task += softplus(-x);
        // d/dx softplus(-x) = -sigmoid(-x)
        let c = -sigmoid(-x) / n;
        let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
        let u = u.to_vec();
        axpy(c, &diff, grad_f.row_mut(ug));
        axpy(c, &u, grad_f.row_mut(pg));
        axpy(-c, &u, grad_f.row_mut(ng));
    }
    task /= n;

    let (mut l_u, mut l_b) = (0.0, 0.0);
    let mut grad_c = None;
    if let Some(view) = view {
        if view.space() != space || view.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "counterfactual embeddings",
                expected: space.total() * dim,
                found: view.space().total() * view.dim(),
            });
        }
        let mut gc = Matrix::zeros(space.total(), dim);
        let mut touched = false;
        if cfg.omega_u > 0.0 {
            let users: Vec<usize> = distinct(triples.iter().map(|t| t.user))
                .into_iter()
                .map(|u| space.global(NodeType::User, u))
                .collect();
            let side = constraint_side(factual, view, &users, cfg.lambda_u, cfg.tau)?;
            l_u = side.loss;
            grad_f.scatter_add(&users, &side.factual, cfg.omega_u);
            gc.scatter_add(&users, &side.view, cfg.omega_u);
            touched = true;
        }
        if cfg.omega_b > 0.0 {
            let bundles: Vec<usize> = distinct(triples.iter().map(|t| t.pos))
                .into_iter()
                .map(|b| space.global(NodeType::Bundle, b))
                .collect();
            let side = constraint_side(factual, view, &bundles, cfg.lambda_b, cfg.tau)?;
            l_b = side.loss;
            grad_f.scatter_add(&bundles, &side.factual, cfg.omega_b);
            gc.scatter_add(&bundles, &side.view, cfg.omega_b);
            touched = true;
        }
        if touched {
            grad_c = Some(gc);
        }
    }

    Ok(ObjectiveGradient {
        breakdown: total_loss(task, l_u, l_b, cfg),
        factual: grad_f,
        view: grad_c,
    })
}
