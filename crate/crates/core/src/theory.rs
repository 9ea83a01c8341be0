//! PAC sample-complexity bound for a noisy edge sampler, and empirical checks
//! of the two identities behind the constraint loss.
//!
//! The bound: an ERM edge-ranking model over a finite hypothesis class `H`,
//! trained on samples whose labels are flipped with probability `eta`, is
//! `epsilon`-accurate with probability `1 - delta` once the sample count
//! exceeds
//!
//! ```text
//! 2 ln(2|H| / delta) / (epsilon^2 (1 - 2 eta)^2)
//! ```
//!
//! (natural log).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleComplexityQuery {
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub hypothesis_count: f64,
}

impl Default for SampleComplexityQuery {
    fn default() -> Self {
        SampleComplexityQuery {
            epsilon: 0.1,
            delta: 0.05,
            eta: 0.1,
            hypothesis_count: 1e6,
        }
    }
}

impl SampleComplexityQuery {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.epsilon) {
            return Err(Error::OutOfDomain(format!(
                "epsilon = {} not in (0, 1)",
                self.epsilon
            )));
        }
        if !open_unit(self.delta) {
            return Err(Error::OutOfDomain(format!(
                "delta = {} not in (0, 1)",
                self.delta
            )));
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::OutOfDomain(format!(
                "eta = {} not in (0, 0.5)",
                self.eta
            )));
        }
        if !(self.hypothesis_count >= 1.0 && self.hypothesis_count.is_finite()) {
            return Err(Error::OutOfDomain(format!(
                "|H| = {} must be >= 1",
                self.hypothesis_count
            )));
        }
        Ok(())
    }
}

/// The real-valued bound, before rounding up.
pub fn sample_complexity_bound(q: &SampleComplexityQuery) -> Result<f64> {
    q.validate()?;
    let log_term = std::f64::consts::LN_2 + q.hypothesis_count.ln() - q.delta.ln();
    let margin = 1.0 - 2.0 * q.eta;
    Ok(2.0 * log_term / (q.epsilon * q.epsilon * margin * margin))
}

/// Minimum number of samples, `ceil` of [`sample_complexity_bound`].
pub fn sample_complexity(q: &SampleComplexityQuery) -> Result<u64> {
    Ok(sample_complexity_bound(q)?.ceil() as u64)
}

const UNIT_TOL: f64 = 1e-6;

fn check_unit_rows(block: &Matrix) -> Result<()> {
    for i in 0..block.rows() {
        let n = norm(block.row(i));
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotNormalized { row: i, norm: n });
        }
    }
    Ok(())
}

/// `|sum_i |c_i - f_i|^2 - 2m - 2 sum_i D_lin(c_i, f_i)|` with
/// `D_lin(a, b) = -a.b`; zero (up to rounding) for unit rows.
pub fn consistency_identity_residual(view: &Matrix, factual: &Matrix) -> Result<f64> {
    view.check_same_shape(factual, "identity blocks")?;
    let mut squared = 0.0;
    let mut linear = 0.0;
    for i in 0..view.rows() {
        let (c, f) = (view.row(i), factual.row(i));
        squared += c.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        linear -= dot(c, f);
    }
    Ok((squared - 2.0 * view.rows() as f64 - 2.0 * linear).abs())
}

/// Unrestraint term `1/m * sum_i sum_{j != i} exp(c_j . f_i / tau)`.
pub fn unrestraint_term(view: &Matrix, factual: &Matrix, tau: f64) -> Result<f64> {
    view.check_same_shape(factual, "unrestraint blocks")?;
    let m = view.rows();
    if m == 0 {
        return Err(Error::EmptyInput("unrestraint block"));
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                sum += (dot(view.row(j), factual.row(i)) / tau).exp();
            }
        }
    }
    Ok(sum / m as f64)
}

/// Eigen-spectrum of the (uncentered) second-moment matrix `U^T U`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    /// Equals the row count for unit rows.
    pub trace: f64,
    pub eigenvalues: Vec<f64>,
    /// `D ln(trace / D) - sum ln(lambda_i)`: zero iff all eigenvalues are
    /// equal, infinite when one vanishes.
    pub log_det_gap: f64,
}

pub fn spectrum(block: &Matrix) -> Spectrum {
    let d = block.cols();
    let u = DMatrix::from_row_slice(block.rows(), d, block.as_slice());
    let second_moment = u.transpose() * &u;
    let trace = second_moment.trace();
    let mut eigenvalues: Vec<f64> = second_moment
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let log_sum: f64 = eigenvalues.iter().map(|l| l.max(0.0).ln()).sum();
    let log_det_gap = d as f64 * (trace / d as f64).ln() - log_sum;
    Spectrum {
        trace,
        eigenvalues,
        log_det_gap,
    }
}

/// `m` unit rows spread evenly over an arc of `arc_degrees` in the plane of
/// the first two coordinates.
pub fn arc_batch(rows: usize, dim: usize, arc_degrees: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, dim.max(2));
    let step = if rows > 1 {
        arc_degrees.to_radians() / (rows - 1) as f64
    } else {
        0.0
    };
    for i in 0..rows {
        let theta = step * i as f64;
        let r = m.row_mut(i);
        r[0] = theta.cos();
        r[1] = theta.sin();
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewDiagnostics {
    pub identity_residual: f64,
    pub view_spectrum: Spectrum,
    pub unrestraint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub rows: usize,
    pub factual_spectrum: Spectrum,
    pub views: Vec<ViewDiagnostics>,
    /// Unrestraint of a same-size batch packed into a 10 degree arc.
    pub clustered_unrestraint: f64,
    /// Whether every view's unrestraint is below the clustered control.
    pub views_more_uniform_than_control: bool,
}

/// Diagnostics over unit-normalized factual and per-view blocks (same rows).
pub fn lemma_oracles(factual: &Matrix, views: &[Matrix], tau: f64) -> Result<LemmaReport> {
    if views.len() < 2 {
        return Err(Error::EmptyInput("lemma oracles need at least two views"));
    }
    check_unit_rows(factual)?;
    let mut out = Vec::with_capacity(views.len());
    for view in views {
        check_unit_rows(view)?;
        out.push(ViewDiagnostics {
            identity_residual: consistency_identity_residual(view, factual)?,
            view_spectrum: spectrum(view),
            unrestraint: unrestraint_term(view, factual, tau)?,
        });
    }
    let control = arc_batch(factual.rows(), factual.cols(), 10.0);
    let clustered_unrestraint = unrestraint_term(&control, &control, tau)?;
    Ok(LemmaReport {
        rows: factual.rows(),
        factual_spectrum: spectrum(factual),
        views_more_uniform_than_control: out.iter().all(|v| v.unrestraint < clustered_unrestraint),
        views: out,
        clustered_unrestraint,
    })
}
