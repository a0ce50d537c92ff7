//! Gain-scheduled stabilizer: augmented target system, polytope grid over the
//! master coordinate, poly-quadratic LMI synthesis and the reduced-order
//! observer feedback.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::sdp::{self, AffineMatrix, LmiProblem, MarginReport, ProblemBuilder, SdpError, SolverSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilizerError {
    #[error("{x} outside grid [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("LMI synthesis failed: {0}")]
    Synthesis(#[from] SdpError),
    #[error("observer placement failed: {0}")]
    ObserverPlacementFailure(String),
    #[error("bad grid: {0}")]
    BadGrid(String),
}

/// `A = [[-alpha, I], [0, 0]]` (first column `-alpha` padded with zeros,
/// identity in the upper right).
pub fn augmented_a(alpha: &[f64], n: usize) -> DMatrix<f64> {
    assert!(alpha.len() <= n, "exosystem order exceeds state dimension");
    let mut a = DMatrix::zeros(n, n);
    for (i, v) in alpha.iter().enumerate() {
        a[(i, 0)] = -v;
    }
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    a
}

/// Partition around the measured first state.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBlocks {
    pub a11: f64,
    pub a12: RowDVector<f64>,
    pub a21: DVector<f64>,
    pub a22: DMatrix<f64>,
    pub b1: f64,
    pub b2: DVector<f64>,
}

impl SplitBlocks {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let n = a.nrows();
        let m = n - 1;
        Self {
            a11: a[(0, 0)],
            a12: a.view((0, 1), (1, m)).into_owned().row(0).into_owned(),
            a21: a.view((1, 0), (m, 1)).column(0).into_owned(),
            a22: a.view((1, 1), (m, m)).into_owned(),
            b1: b[0],
            b2: b.rows(1, m).into_owned(),
        }
    }

    pub fn recompose(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.a22.nrows();
        let mut a = DMatrix::zeros(m + 1, m + 1);
        a[(0, 0)] = self.a11;
        a.view_mut((0, 1), (1, m)).copy_from(&self.a12);
        a.view_mut((1, 0), (m, 1)).copy_from(&self.a21);
        a.view_mut((1, 1), (m, m)).copy_from(&self.a22);
        let mut b = DVector::zeros(m + 1);
        b[0] = self.b1;
        b.rows_mut(1, m).copy_from(&self.b2);
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeGrid {
    pub vertices: Vec<f64>,
    pub a: Vec<DMatrix<f64>>,
}

impl PolytopeGrid {
    /// `n_vertices` evenly spaced points over `range` widened by `pad` of
    /// its span on both sides; vertex matrices from `alpha_at`.
    pub fn build(
        range: (f64, f64),
        n_vertices: usize,
        pad: f64,
        n: usize,
        alpha_at: impl Fn(f64) -> Vec<f64>,
    ) -> Result<Self, StabilizerError> {
        if n_vertices < 2 {
            return Err(StabilizerError::BadGrid(format!("need at least 2 vertices, got {n_vertices}")));
        }
        let (lo, hi) = range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(StabilizerError::BadGrid(format!("bad range [{lo}, {hi}]")));
        }
        let span = hi - lo;
        let widen = if span > 0.0 { pad * span } else { pad * lo.abs().max(1.0) };
        let (lo, hi) = (lo - widen, hi + widen);
        let vertices: Vec<f64> = (0..n_vertices)
            .map(|i| lo + (hi - lo) * i as f64 / (n_vertices - 1) as f64)
            .collect();
        let a = vertices.iter().map(|&x| augmented_a(&alpha_at(x), n)).collect();
        Ok(Self { vertices, a })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.vertices[0], *self.vertices.last().expect("non-empty grid"))
    }

    /// Interpolated system matrix for weights `sigma`.
    pub fn a_of(&self, sigma: &[f64]) -> DMatrix<f64> {
        let n = self.a[0].nrows();
        let mut out = DMatrix::zeros(n, n);
        for (s, a) in sigma.iter().zip(&self.a) {
            if *s != 0.0 {
                out += a * *s;
            }
        }
        out
    }
}

/// Piecewise-linear weights over the bracketing vertex pair.
pub fn sigma_weights(x: f64, grid: &PolytopeGrid) -> Result<Vec<f64>, StabilizerError> {
    let (lo, hi) = grid.range();
    if !(x >= lo && x <= hi) {
        return Err(StabilizerError::OutOfRange { x, lo, hi });
    }
    let v = &grid.vertices;
    let mut out = vec![0.0; v.len()];
    // index of the right vertex of the bracketing pair
    let r = v.partition_point(|&p| p < x).clamp(1, v.len() - 1);
    let l = r - 1;
    if x == v[l] {
        out[l] = 1.0;
    } else if x == v[r] {
        out[r] = 1.0;
    } else {
        let wl = (v[r] - x) / (v[r] - v[l]);
        out[l] = wl;
        out[r] = 1.0 - wl;
    }
    Ok(out)
}

/// Matrix variables of one vertex in the poly-quadratic LMI.
#[derive(Debug, Clone)]
pub struct VertexVars {
    pub q: AffineMatrix,
    pub g: AffineMatrix,
    pub r: AffineMatrix,
}

/// Poly-quadratic stabilization LMIs for vertices `a` and common input `b`:
/// `Q_i > 0` and `[[G_i + G_i' - Q_i, (A_i G_i + B R_i)'], [A_i G_i + B R_i, Q_j]] > 0`
/// for all `(i, j)`.
pub fn build_lmi(a: &[DMatrix<f64>], b: &DVector<f64>, tau: f64, box_bound: f64) -> (LmiProblem, Vec<VertexVars>) {
    let n = b.len();
    let mut pb = ProblemBuilder::new();
    let vars: Vec<VertexVars> = a
        .iter()
        .map(|_| VertexVars { q: pb.symmetric(n), g: pb.general(n, n), r: pb.general(1, n) })
        .collect();
    let bm = DMatrix::from_column_slice(n, 1, b.as_slice());
    for (i, vi) in vars.iter().enumerate() {
        pb.require_pd(&vi.q, format!("Q{i}"));
        let top = vi.g.add(&vi.g.transpose()).sub(&vi.q);
        let cl = vi.g.left_mul(&a[i]).add(&vi.r.left_mul(&bm));
        let cl_t = cl.transpose();
        for (j, vj) in vars.iter().enumerate() {
            pb.require_pd(&AffineMatrix::block2(&top, &cl_t, &cl, &vj.q), format!("V{i},{j}"));
        }
    }
    (pb.build(tau, box_bound), vars)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisSettings {
    pub margin_target: f64,
    pub box_bound: f64,
    pub observer_radius: f64,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        Self { margin_target: 1e-8, box_bound: 1e9, observer_radius: 0.2 }
    }
}

#[derive(Debug, Clone)]
pub struct StabilizerSchedule {
    pub grid: PolytopeGrid,
    pub b: DVector<f64>,
    /// Per-vertex solution, expressed for the original `b`.
    pub q: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
    pub r: Vec<RowDVector<f64>>,
    pub k: Vec<RowDVector<f64>>,
    pub h: DVector<f64>,
    pub margins: MarginReport,
    pub solver_margin: f64,
    pub newton_steps: usize,
}

/// `H` with `A22 - H A12` having all eigenvalues at `radius`; requires the
/// shift structure of the augmented system.
pub fn place_observer(a22: &DMatrix<f64>, a12: &RowDVector<f64>, radius: f64) -> Result<DVector<f64>, StabilizerError> {
    let m = a22.nrows();
    let mut shift = DMatrix::zeros(m, m);
    for i in 0..m.saturating_sub(1) {
        shift[(i, i + 1)] = 1.0;
    }
    let mut e1 = RowDVector::zeros(m);
    if m > 0 {
        e1[0] = 1.0;
    }
    if (a22 - &shift).abs().max() > 0.0 || (a12 - &e1).abs().max() > 0.0 {
        return Err(StabilizerError::ObserverPlacementFailure(
            "A22/A12 do not have the augmented shift structure".into(),
        ));
    }
    if !(radius.abs() < 1.0) {
        return Err(StabilizerError::ObserverPlacementFailure(format!("radius {radius} not inside unit circle")));
    }
    // A22 - H e1' is a companion matrix with characteristic polynomial
    // z^m + h_1 z^(m-1) + ... ; match (z - radius)^m
    let mut binom = 1.0;
    let h = DVector::from_fn(m, |i, _| {
        let k = i + 1;
        binom = binom * (m + 1 - k) as f64 / k as f64;
        binom * (-radius).powi(k as i32)
    });
    Ok(h)
}

pub fn synthesize_gains(
    grid: PolytopeGrid,
    b: &DVector<f64>,
    settings: &SynthesisSettings,
) -> Result<StabilizerSchedule, StabilizerError> {
    let n = b.len();
    let bnorm = b.norm();
    if !(bnorm > 0.0) {
        return Err(StabilizerError::Synthesis(SdpError::Infeasible { margin: 0.0, target: settings.margin_target }));
    }
    let bhat = b / bnorm;
    let (problem, vars) = build_lmi(&grid.a, &bhat, settings.margin_target, settings.box_bound);
    let sol = sdp::solve_lmi_with(&problem, &SolverSettings::default())?;
    let mut q = Vec::new();
    let mut g = Vec::new();
    let mut r = Vec::new();
    let mut k = Vec::new();
    for v in &vars {
        let gi = v.g.eval(&sol.x);
        let ri = v.r.eval(&sol.x).row(0).into_owned() / bnorm;
        let ginv = gi.clone().try_inverse().ok_or_else(|| {
            StabilizerError::Synthesis(SdpError::NumericalBreakdown("singular G at a vertex".into()))
        })?;
        k.push(&ri * ginv);
        q.push(v.q.eval(&sol.x));
        g.push(gi);
        r.push(ri);
    }
    let split = SplitBlocks::new(&grid.a[0], b);
    let h = place_observer(&split.a22, &split.a12, settings.observer_radius)?;
    debug_assert_eq!(h.len(), n - 1);
    Ok(StabilizerSchedule {
        grid,
        b: b.clone(),
        q,
        g,
        r,
        k,
        h,
        margins: sol.report,
        solver_margin: sol.margin,
        newton_steps: sol.newton_steps,
    })
}

impl StabilizerSchedule {
    /// Scheduled gain `sum_i sigma_i R_i G_i^-1`.
    pub fn gain_for(&self, sigma: &[f64]) -> RowDVector<f64> {
        let mut out = RowDVector::zeros(self.b.len());
        for (s, k) in sigma.iter().zip(&self.k) {
            if *s != 0.0 {
                out += k * *s;
            }
        }
        out
    }

    pub fn gain(&self, x: f64) -> Result<RowDVector<f64>, StabilizerError> {
        Ok(self.gain_for(&sigma_weights(x, &self.grid)?))
    }

    /// Closed-loop matrix `A(sigma) + B K(sigma)`.
    pub fn closed_loop(&self, sigma: &[f64]) -> DMatrix<f64> {
        self.grid.a_of(sigma) + &self.b * self.gain_for(sigma)
    }

    /// `x' (sum_i sigma_i Q_i^-1) x`, a parameter-dependent Lyapunov
    /// function certified by the LMIs.
    pub fn lyapunov(&self, sigma: &[f64], x: &DVector<f64>) -> f64 {
        let mut p = DMatrix::zeros(x.len(), x.len());
        for (s, q) in sigma.iter().zip(&self.q) {
            if *s != 0.0 {
                p += q.clone().try_inverse().expect("Q positive definite") * *s;
            }
        }
        (x.transpose() * p * x)[0]
    }

    /// Observer error matrix `A22 - H A12`.
    pub fn observer_matrix(&self) -> DMatrix<f64> {
        let split = SplitBlocks::new(&self.grid.a[0], &self.b);
        &split.a22 - &self.h * &split.a12
    }
}

/// `u_st = K(x1) [x_o1; x_b_hat]`.
pub fn stabilizer_output(
    sched: &StabilizerSchedule,
    x_o1: f64,
    xb_hat: &DVector<f64>,
    x1: f64,
) -> Result<f64, StabilizerError> {
    let k = sched.gain(x1)?;
    Ok(k[0] * x_o1 + k.columns(1, xb_hat.len()).dot(&xb_hat.transpose()))
}

/// Reduced-order observer state `z`; the estimate is `z + H e2`.
#[derive(Debug, Clone)]
pub struct ReducedObserver {
    pub z: DVector<f64>,
    pub h: DVector<f64>,
}

impl ReducedObserver {
    pub fn new(h: DVector<f64>) -> Self {
        Self { z: DVector::zeros(h.len()), h }
    }

    pub fn estimate(&self, e2: f64) -> DVector<f64> {
        &self.z + &self.h * e2
    }

    /// `z(k+1) = (A22 - H A12) z + (B2 - H B1) u_st + ((A22 - H A12) H + A21 - H A11) e2`.
    pub fn advance(&mut self, blocks: &SplitBlocks, e2: f64, u_st: f64) {
        let f = &blocks.a22 - &self.h * &blocks.a12;
        let drive = &f * &self.h + &blocks.a21 - &self.h * blocks.a11;
        self.z = &f * &self.z + (&blocks.b2 - &self.h * blocks.b1) * u_st + drive * e2;
    }
}

/// One observer update: returns the estimate for the current sample and
/// advances the state.
pub fn observer_step(obs: &mut ReducedObserver, blocks: &SplitBlocks, e2: f64, u_st: f64) -> DVector<f64> {
    let est = obs.estimate(e2);
    obs.advance(blocks, e2, u_st);
    est
}
