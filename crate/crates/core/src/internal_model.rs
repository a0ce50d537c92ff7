//! Two-module time-varying internal model.
//!
//! Module 1 is a copy of the plant driven by the total control `u2`; module 2
//! is reparameterized every sample from the solution `(q, p)` of a small
//! coefficient-level Sylvester system so that the cascade regenerates the
//! reference.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::plant::{CanonicalForm, PlantDT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InternalModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Sylvester system singular and inconsistent (residual {0:e})")]
    SingularSystem(f64),
    #[error("plant has no observer canonical form attached")]
    MissingCanonical,
}

/// Coefficient operators of the Sylvester system, each `(2 rho - 1) x rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionOps {
    pub o_s: DMatrix<f64>,
    pub o_phi1: DMatrix<f64>,
    pub c_psi1: DMatrix<f64>,
}

/// Banded Toeplitz operator of the product `c(z) [1; q](z)` with the monic
/// leading row removed: column `j` is `[1, c_1, ..., c_rho]` starting one row
/// above row `j`, so column 0 is `[c_1, ..., c_rho, 0, ...]`.
fn banded(coeffs: &[f64], rho: usize) -> DMatrix<f64> {
    let rows = 2 * rho - 1;
    let mut m = DMatrix::zeros(rows, rho);
    for j in 0..rho {
        if j > 0 {
            m[(j - 1, j)] = 1.0;
        }
        for (i, &c) in coeffs.iter().enumerate() {
            m[(j + i, j)] = c;
        }
    }
    m
}

/// `alpha` holds the exosystem polynomial coefficients `[a_1, ..., a_rho]`;
/// the plant supplies its characteristic coefficients and canonical input
/// column.
pub fn build_convolution_ops(
    alpha: &[f64],
    canon: &CanonicalForm,
) -> Result<ConvolutionOps, InternalModelError> {
    let rho = alpha.len();
    if canon.coeffs.len() != rho || canon.h.len() != rho {
        return Err(InternalModelError::DimensionMismatch(format!(
            "exosystem order {rho}, plant order {}",
            canon.coeffs.len()
        )));
    }
    let rows = 2 * rho - 1;
    let mut c_psi1 = DMatrix::zeros(rows, rho);
    for j in 0..rho {
        for i in 0..rho {
            c_psi1[(i + j, j)] = canon.h[i];
        }
    }
    Ok(ConvolutionOps {
        o_s: banded(alpha, rho),
        o_phi1: banded(canon.coeffs.as_slice(), rho),
        c_psi1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SylvesterSolution {
    /// Coefficients of the monic module-2 denominator `z^(rho-1) + q_1 ...`.
    pub q: DVector<f64>,
    /// Numerator coefficients, highest power first.
    pub p: DVector<f64>,
    pub residual: f64,
}

/// Residual `|[O_phi1 C_psi1][1; q; p] - O_s [1; q]|`.
pub fn sylvester_residual(ops: &ConvolutionOps, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let rho = ops.o_s.ncols();
    let mut one_q = DVector::zeros(rho);
    one_q[0] = 1.0;
    for i in 0..rho - 1 {
        one_q[i + 1] = q[i];
    }
    (&ops.o_phi1 * &one_q + &ops.c_psi1 * p - &ops.o_s * &one_q).norm()
}

/// Minimal-norm solution of the Sylvester system for `(q, p)`.
pub fn solve_sylvester(ops: &ConvolutionOps) -> Result<SylvesterSolution, InternalModelError> {
    let rho = ops.o_s.ncols();
    let rows = 2 * rho - 1;
    let unknowns = 2 * rho - 1;
    let diff = &ops.o_phi1 - &ops.o_s;
    let mut m = DMatrix::zeros(rows, unknowns);
    for j in 1..rho {
        m.set_column(j - 1, &diff.column(j));
    }
    for j in 0..rho {
        m.set_column(rho - 1 + j, &ops.c_psi1.column(j));
    }
    let rhs = -diff.column(0);
    let scale = m.abs().max().max(rhs.abs().max()).max(f64::MIN_POSITIVE);
    // the q and p columns differ by orders of magnitude (p scales with the
    // plant's input gain); equilibrate before the SVD
    let norms: Vec<f64> = m
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 { n } else { 1.0 }
        })
        .collect();
    let mut ms = m.clone();
    for (j, n) in norms.iter().enumerate() {
        ms.column_mut(j).scale_mut(1.0 / n);
    }
    let svd = ms.svd(true, true);
    let smax = svd.singular_values.max();
    let y = svd
        .solve(&rhs, 1e-12 * smax.max(f64::MIN_POSITIVE))
        .map_err(|_| InternalModelError::SingularSystem(f64::NAN))?;
    let sol = DVector::from_fn(unknowns, |i, _| y[i] / norms[i]);
    let q = DVector::from_fn(rho - 1, |i, _| sol[i]);
    let p = DVector::from_fn(rho, |i, _| sol[rho - 1 + i]);
    let residual = sylvester_residual(ops, &q, &p);
    if !(residual <= 1e-8 * scale.max(1.0)) {
        return Err(InternalModelError::SingularSystem(residual));
    }
    Ok(SylvesterSolution { q, p, residual })
}

/// Module-2 realization in controller canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct Module2 {
    pub phi2: DMatrix<f64>,
    pub psi2: DVector<f64>,
    pub gamma2: RowDVector<f64>,
    pub d2: f64,
}

/// `p(z) / q(z) = D2 + Gamma2 (zI - Phi2)^-1 Psi2` with `q` monic.
pub fn assemble_module2(q: &DVector<f64>, p: &DVector<f64>) -> Module2 {
    let m = q.len();
    assert_eq!(p.len(), m + 1, "numerator degree must equal denominator degree");
    let mut phi2 = DMatrix::zeros(m, m);
    for i in 0..m.saturating_sub(1) {
        phi2[(i, i + 1)] = 1.0;
    }
    for j in 0..m {
        // last row: -q_m, ..., -q_1
        phi2[(m - 1, j)] = -q[m - 1 - j];
    }
    let mut psi2 = DVector::zeros(m);
    if m > 0 {
        psi2[m - 1] = 1.0;
    }
    let d2 = p[0];
    // remainder r_i = p_i - d2 q_i, i = 1..m, mapped to ascending powers
    let gamma2 = RowDVector::from_fn(m, |_, j| p[m - j] - d2 * q[m - 1 - j]);
    Module2 { phi2, psi2, gamma2, d2 }
}

/// Runtime internal model for one slave axis.
#[derive(Debug, Clone)]
pub struct InternalModel {
    pub phi1: DMatrix<f64>,
    pub psi1: DVector<f64>,
    pub gamma1: RowDVector<f64>,
    pub module2: Module2,
    pub xi1: DVector<f64>,
    pub xi2: DVector<f64>,
}

impl InternalModel {
    /// Zero-state model whose module 1 copies `plant`'s own realization.
    pub fn new(plant: &PlantDT, rho: usize) -> Self {
        let m = rho - 1;
        Self {
            phi1: plant.g.clone(),
            psi1: plant.h.clone(),
            gamma1: plant.c.clone(),
            module2: assemble_module2(&DVector::zeros(m), &DVector::zeros(m + 1)),
            xi1: DVector::zeros(plant.order()),
            xi2: DVector::zeros(m),
        }
    }

    pub fn set_parameters(&mut self, module2: Module2) {
        self.module2 = module2;
    }

    /// Module-1 output `u_r = Gamma1 xi1`.
    pub fn u_r(&self) -> f64 {
        self.gamma1.dot(&self.xi1.transpose())
    }

    /// `u_im = Gamma2 xi2 - D2 u_r` at the current sample. Depends only on
    /// the current states, so it can be formed before `u2` is known.
    pub fn output(&self) -> f64 {
        self.module2.gamma2.dot(&self.xi2.transpose()) - self.module2.d2 * self.u_r()
    }

    /// Advance both modules with the applied control `u2`.
    pub fn advance(&mut self, u2: f64) {
        let ur = self.u_r();
        let m = &self.module2;
        self.xi2 = &m.phi2 * &self.xi2 - &m.psi2 * ur;
        self.xi1 = &self.phi1 * &self.xi1 + &self.psi1 * u2;
    }

    /// Output then advance; returns `u_im(k)`.
    pub fn step(&mut self, u2: f64) -> f64 {
        let u = self.output();
        self.advance(u2);
        u
    }
}

/// Root of the module-2 denominator farthest from the origin; module 2 is
/// only usable when this is below one.
pub fn module2_radius(q: &DVector<f64>) -> f64 {
    if q.is_empty() {
        return 0.0;
    }
    let md = assemble_module2(q, &DVector::zeros(q.len() + 1));
    crate::plant::spectral_radius(&md.phi2)
}
