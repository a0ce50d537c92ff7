//! Position-domain generator of the slave reference and its per-sample
//! discrete transitions.
//!
//! The state is `w = [f(m); m + offset]` with `m` the master coordinate. Its
//! generator is `S(m) = (l'/l) I + eta' J` where `l = |w|`, `eta` is the polar
//! angle of `w` and `J = [[0, -1], [1, 0]]`.

use nalgebra::{Complex, Matrix2, RowVector2, Vector2};
use thiserror::Error;

use crate::contour_signals::SlaveFn;

pub const MIN_L: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExosystemError {
    #[error("l(x1) = {l} < {MIN_L} at x1 = {x}")]
    DegenerateL { x: f64, l: f64 },
    #[error("matrix deviates from a I + b J by {0}")]
    StructureViolation(f64),
    #[error("need at least {needed} master samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

pub fn j_matrix() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

#[derive(Clone)]
pub struct ExosystemCT {
    pub slave: SlaveFn,
    pub offset: f64,
}

impl std::fmt::Debug for ExosystemCT {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExosystemCT").field("offset", &self.offset).finish()
    }
}

impl ExosystemCT {
    pub fn state(&self, m: f64) -> Vector2<f64> {
        Vector2::new((self.slave.f)(m), m + self.offset)
    }

    pub fn l(&self, m: f64) -> f64 {
        self.state(m).norm()
    }

    /// `dl/dm = (x + f f') / l` with `x = m + offset`.
    pub fn l_prime(&self, m: f64) -> f64 {
        let w = self.state(m);
        (w[1] + w[0] * (self.slave.df)(m)) / w.norm()
    }

    /// `d eta/dm = (f - x f') / l^2`.
    pub fn rotation_rate(&self, m: f64) -> f64 {
        let w = self.state(m);
        (w[0] - w[1] * (self.slave.df)(m)) / w.norm_squared()
    }

    pub fn s_matrix(&self, m: f64) -> Matrix2<f64> {
        let a = self.l_prime(m) / self.l(m);
        let b = self.rotation_rate(m);
        Matrix2::identity() * a + j_matrix() * b
    }

    pub fn q(&self) -> RowVector2<f64> {
        RowVector2::new(1.0, 0.0)
    }
}

/// Offset that keeps `m + offset >= 1` over `range` when `l` would otherwise
/// come close to zero or the shifted coordinate would not be positive.
pub fn choose_offset(slave: &SlaveFn, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    let min_l = sample_range(lo, hi, 2001)
        .map(|m| Vector2::new((slave.f)(m), m).norm())
        .fold(f64::INFINITY, f64::min);
    if lo > 0.0 && min_l > 1e-3 {
        0.0
    } else {
        1.0 - lo
    }
}

fn sample_range(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

pub fn build_exosystem_ct(
    slave: SlaveFn,
    offset: f64,
    range: (f64, f64),
) -> Result<ExosystemCT, ExosystemError> {
    let exo = ExosystemCT { slave, offset };
    for m in sample_range(range.0, range.1, 2001) {
        let l = exo.l(m);
        if !(l >= MIN_L) {
            return Err(ExosystemError::DegenerateL { x: m, l });
        }
    }
    Ok(exo)
}

/// Time-domain generator `x1dot * S(m)`.
pub fn exosystem_to_time(exo: &ExosystemCT, x1dot: f64, m: f64) -> Matrix2<f64> {
    exo.s_matrix(m) * x1dot
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discretization {
    Exact,
    Euler,
}

/// Split `a I + b J`, failing if the matrix is not of that form.
pub fn split_structure(s: &Matrix2<f64>) -> Result<(f64, f64), ExosystemError> {
    let dev = (s[(0, 0)] - s[(1, 1)]).abs() + (s[(0, 1)] + s[(1, 0)]).abs();
    if !(dev <= 1e-12 * s.norm().max(1.0)) {
        return Err(ExosystemError::StructureViolation(dev));
    }
    Ok((0.5 * (s[(0, 0)] + s[(1, 1)]), 0.5 * (s[(1, 0)] - s[(0, 1)])))
}

pub fn discretize_exosystem(
    sbar: &Matrix2<f64>,
    ts: f64,
    method: Discretization,
) -> Result<Matrix2<f64>, ExosystemError> {
    let (a, b) = split_structure(sbar)?;
    Ok(match method {
        Discretization::Exact => Increment { log_gain: a * ts, angle: b * ts }.transition(),
        Discretization::Euler => Matrix2::identity() + sbar * ts,
    })
}

/// One-sample transition `exp(log_gain) (cos(angle) I + sin(angle) J)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increment {
    pub log_gain: f64,
    pub angle: f64,
}

impl Increment {
    /// Exact transition carrying `w_from` onto `w_to`.
    pub fn between(w_from: &Vector2<f64>, w_to: &Vector2<f64>) -> Self {
        let cross = w_from[0] * w_to[1] - w_from[1] * w_to[0];
        let dot = w_from.dot(w_to);
        Self { log_gain: (w_to.norm() / w_from.norm()).ln(), angle: cross.atan2(dot) }
    }

    pub fn transition(&self) -> Matrix2<f64> {
        let g = self.log_gain.exp();
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(g * c, -g * s, g * s, g * c)
    }

    /// Eigenvalue `exp(log_gain + i angle)` of the transition.
    pub fn eigenvalue(&self) -> Complex<f64> {
        Complex::from_polar(self.log_gain.exp(), self.angle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// Characteristic polynomial of the current transition only.
    Frozen,
    /// Coefficients of the time-varying observer canonical form of the
    /// transition pair `(k, k+1)`; `stall_tol` regularizes samples where the
    /// rotation per sample nearly vanishes.
    TimeVarying { stall_tol: f64 },
}

impl Default for AlphaMode {
    fn default() -> Self {
        AlphaMode::TimeVarying { stall_tol: 1e-9 }
    }
}

/// `[a1, a0]` of `z^2 + a1 z + a0`, the characteristic polynomial of one
/// transition.
pub fn alpha_frozen(inc: &Increment) -> [f64; 2] {
    let lam = inc.eigenvalue();
    [-2.0 * lam.re, lam.norm_sqr()]
}

/// `[a1, a0]` with `f(k+2) + a1 f(k+1) + a0 f(k) = 0` for the transitions
/// `inc_k` (k to k+1) and `inc_next` (k+1 to k+2).
pub fn alpha_time_varying(inc_k: &Increment, inc_next: &Increment, stall_tol: f64) -> [f64; 2] {
    let lam = inc_k.eigenvalue();
    let delta = inc_next.eigenvalue() - lam;
    let cross = lam * delta;
    let inv_im = lam.im / (lam.im * lam.im + stall_tol * stall_tol);
    let d1 = -cross.im * inv_im;
    let d0 = -cross.re - d1 * lam.re;
    let [a1, a0] = alpha_frozen(inc_k);
    [a1 + d1, a0 + d0]
}

/// Per-sample discrete exosystem along a sampled master trajectory.
#[derive(Debug, Clone)]
pub struct ExosystemDT {
    /// `increments[k]` carries `w(k)` to `w(k+1)`.
    pub increments: Vec<Increment>,
    pub alpha: Vec<[f64; 2]>,
}

impl ExosystemDT {
    pub fn transition(&self, k: usize) -> Matrix2<f64> {
        self.increments[k].transition()
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Build the schedule for `coords.len() - 2` samples from master coordinates
/// `coords[0..]`, which must extend two samples past the last scheduled one.
pub fn exosystem_schedule(
    exo: &ExosystemCT,
    coords: &[f64],
    mode: AlphaMode,
) -> Result<ExosystemDT, ExosystemError> {
    if coords.len() < 3 {
        return Err(ExosystemError::TooFewSamples { needed: 3, got: coords.len() });
    }
    let states: Vec<Vector2<f64>> = coords.iter().map(|&m| exo.state(m)).collect();
    for (w, &m) in states.iter().zip(coords) {
        if !(w.norm() >= MIN_L) {
            return Err(ExosystemError::DegenerateL { x: m, l: w.norm() });
        }
    }
    let increments: Vec<Increment> =
        states.windows(2).map(|p| Increment::between(&p[0], &p[1])).collect();
    let alpha = increments
        .windows(2)
        .map(|p| match mode {
            AlphaMode::Frozen => alpha_frozen(&p[0]),
            AlphaMode::TimeVarying { stall_tol } => alpha_time_varying(&p[0], &p[1], stall_tol),
        })
        .collect();
    Ok(ExosystemDT { increments, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine() -> SlaveFn {
        SlaveFn::new(f64::sin, f64::cos)
    }

    #[test]
    fn l_and_slope_at_quarter_period() {
        let exo = build_exosystem_ct(sine(), 0.0, (1.0, 2.0)).unwrap();
        let x = PI / 2.0;
        let l = (PI * PI / 4.0 + 1.0).sqrt();
        assert!((exo.l(x) - l).abs() < 1e-15);
        assert!((exo.l_prime(x) - x / l).abs() < 1e-15);
        let s = exo.s_matrix(x);
        assert!((s[(0, 0)] - x / (l * l)).abs() < 1e-15);
        assert!((s[(1, 0)] - 1.0 / (l * l)).abs() < 1e-15);
        assert!((s[(0, 1)] + 1.0 / (l * l)).abs() < 1e-15);
    }

    #[test]
    fn zero_reference_generator() {
        let exo = build_exosystem_ct(SlaveFn::new(|_| 0.0, |_| 0.0), 0.0, (0.5, 2.0)).unwrap();
        assert_eq!(exo.l(1.0), 1.0);
        assert_eq!(exo.l_prime(1.0), 1.0);
        // w = [0; x] grows along its own direction and never rotates
        assert_eq!(exo.s_matrix(1.0), Matrix2::identity());
    }

    #[test]
    fn degenerate_l() {
        let r = build_exosystem_ct(SlaveFn::new(|_| 0.0, |_| 0.0), 0.0, (-1.0, 1.0));
        assert!(matches!(r, Err(ExosystemError::DegenerateL { .. })));
        let off = choose_offset(&sine(), (0.0, 7.0));
        assert_eq!(off, 1.0);
        assert!(build_exosystem_ct(sine(), off, (0.0, 7.0)).is_ok());
    }

    #[test]
    fn state_equation_reproduces_slope() {
        // w' = S w must equal [f'; 1]
        let exo = build_exosystem_ct(sine(), 1.0, (0.0, 10.0)).unwrap();
        for i in 0..100 {
            let m = 0.1 * i as f64;
            let d = exo.s_matrix(m) * exo.state(m);
            assert!((d[0] - m.cos()).abs() < 1e-12);
            assert!((d[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn time_domain_scaling() {
        let exo = build_exosystem_ct(sine(), 0.0, (1.0, 2.0)).unwrap();
        let x = PI / 2.0;
        assert_eq!(exosystem_to_time(&exo, 0.0, x), Matrix2::zeros());
        assert_eq!(exosystem_to_time(&exo, 1.0, x), exo.s_matrix(x));
        assert_eq!(exosystem_to_time(&exo, 2.0, x), exo.s_matrix(x) * 2.0);
    }

    #[test]
    fn closed_form_discretization() {
        let id = discretize_exosystem(&Matrix2::zeros(), 1e-4, Discretization::Exact).unwrap();
        assert_eq!(id, Matrix2::identity());
        let ts = 1e-4;
        let rot = discretize_exosystem(&(j_matrix() * (PI / 2.0 / ts)), ts, Discretization::Exact).unwrap();
        assert!((rot - j_matrix()).norm() < 1e-12);
        let g = discretize_exosystem(&Matrix2::identity(), ts, Discretization::Exact).unwrap();
        assert!((g - Matrix2::identity() * ts.exp()).norm() < 1e-15);
        let bad = Matrix2::new(1.0, 0.0, 0.0, 2.0);
        assert!(matches!(
            discretize_exosystem(&bad, ts, Discretization::Exact),
            Err(ExosystemError::StructureViolation(_))
        ));
    }

    #[test]
    fn euler_converges_quadratically() {
        let s = Matrix2::identity() * 0.7 + j_matrix() * 3.0;
        let gap = |ts: f64| {
            let e = discretize_exosystem(&s, ts, Discretization::Exact).unwrap();
            let u = discretize_exosystem(&s, ts, Discretization::Euler).unwrap();
            (e - u).norm()
        };
        let ratio = gap(1e-3) / gap(5e-4);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn increments_transport_state() {
        let exo = build_exosystem_ct(sine(), 1.0, (0.0, 3.0)).unwrap();
        let (a, b) = (exo.state(0.3), exo.state(0.31));
        let w = Increment::between(&a, &b).transition() * a;
        assert!((w - b).norm() < 1e-15);
        assert!(((exo.q() * w)[0] - 0.31f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn time_varying_alpha_annihilates_reference() {
        let exo = build_exosystem_ct(sine(), 1.0, (0.0, 3.0)).unwrap();
        let ms: Vec<f64> = (0..200).map(|k| 0.05 * k as f64 + 0.01 * (k as f64).sin()).collect();
        let sched = exosystem_schedule(&exo, &ms, AlphaMode::TimeVarying { stall_tol: 0.0 }).unwrap();
        for k in 0..sched.len() {
            let f = |i: usize| (exo.slave.f)(ms[i]);
            let [a1, a0] = sched.alpha[k];
            let r = f(k + 2) + a1 * f(k + 1) + a0 * f(k);
            assert!(r.abs() < 1e-12, "k {k}: {r}");
        }
    }

    #[test]
    fn frozen_alpha_is_characteristic_polynomial() {
        let inc = Increment { log_gain: 0.01, angle: 0.2 };
        let t = inc.transition();
        let [a1, a0] = alpha_frozen(&inc);
        assert!((a1 + t.trace()).abs() < 1e-15);
        assert!((a0 - t.determinant()).abs() < 1e-15);
        // equal consecutive transitions: both modes agree
        let tv = alpha_time_varying(&inc, &inc, 1e-9);
        assert!((tv[0] - a1).abs() < 1e-15 && (tv[1] - a0).abs() < 1e-15);
    }
}
