//! Contour definitions, rotational-to-angle conversion and assumption checks.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Clamp tolerance for `x1 / R` before `arccos`.
pub const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContourError {
    #[error("x1/R = {0} outside [-1, 1] beyond clamp tolerance")]
    Domain(f64),
    #[error("no interval increment restores monotonicity at sample {k} (theta_prev = {prev}, candidate = {candidate})")]
    MonotonicityViolation { k: usize, prev: f64, candidate: f64 },
    #[error("evaluation point {x} out of range for slave {slave}")]
    EvalOutOfRange { x: f64, slave: usize },
    #[error("non-finite derivative at {x} for slave {slave}")]
    NonFiniteDerivative { x: f64, slave: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContourKind {
    Monotonic,
    Rotational { amplitude: Option<f64>, direction: Direction },
}

/// A slave reference `r = f(m)` of the master coordinate and its derivative.
#[derive(Clone)]
pub struct SlaveFn {
    pub f: RealFn,
    pub df: RealFn,
}

impl SlaveFn {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { f: Arc::new(f), df: Arc::new(df) }
    }
}

/// A contour: a master reference plus slave functions of the master
/// coordinate. The master coordinate is `x1` itself for the monotonic kind and
/// the unwrapped angle `theta` (with `x1 = R cos theta`) for the rotational
/// kind.
#[derive(Clone)]
pub struct ContourSpec {
    pub name: String,
    pub kind: ContourKind,
    /// `t -> ` reference master coordinate.
    pub param_ref: RealFn,
    pub slaves: Vec<SlaveFn>,
    /// Maps `[x1, y_1, ..., y_m]` to contour coordinates. `None` is identity.
    pub composition: Option<DMatrix<f64>>,
    /// Master coordinates where the contour is not smooth (excluded from
    /// metrics and from Newton refinement).
    pub singular: Option<Arc<dyn Fn(f64) -> bool + Send + Sync>>,
}

impl fmt::Debug for ContourSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContourSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("slaves", &self.slaves.len())
            .field("composition", &self.composition)
            .finish()
    }
}

impl ContourSpec {
    /// Nominal amplitude used to map the master coordinate to `x1`.
    pub fn amplitude(&self) -> f64 {
        match self.kind {
            ContourKind::Rotational { amplitude: Some(r), .. } => r,
            _ => 1.0,
        }
    }

    /// Master axis position for master coordinate `m`.
    pub fn master_position(&self, m: f64) -> f64 {
        match self.kind {
            ContourKind::Monotonic => m,
            ContourKind::Rotational { .. } => self.amplitude() * m.cos(),
        }
    }

    pub fn master_ref(&self, t: f64) -> f64 {
        self.master_position((self.param_ref)(t))
    }

    pub fn is_rotational(&self) -> bool {
        matches!(self.kind, ContourKind::Rotational { .. })
    }

    pub fn is_singular(&self, m: f64) -> bool {
        self.singular.as_ref().is_some_and(|s| s(m))
    }

    /// Axis positions `[x1, r_1, ..., r_m]` at master coordinate `m`.
    pub fn axis_positions(&self, m: f64) -> Vec<f64> {
        std::iter::once(self.master_position(m))
            .chain(self.slaves.iter().map(|s| (s.f)(m)))
            .collect()
    }

    /// Contour coordinates of the axis position vector.
    pub fn compose(&self, axes: &[f64]) -> Vec<f64> {
        match &self.composition {
            None => axes.to_vec(),
            Some(m) => (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * axes[j]).sum())
                .collect(),
        }
    }

    /// Point on the geometric contour at master coordinate `m`.
    pub fn curve_point(&self, m: f64) -> Vec<f64> {
        self.compose(&self.axis_positions(m))
    }

    /// Derivative of the curve point with respect to `m`; `None` where a
    /// slave derivative is not finite.
    pub fn curve_tangent(&self, m: f64) -> Option<Vec<f64>> {
        let dm = match self.kind {
            ContourKind::Monotonic => 1.0,
            ContourKind::Rotational { .. } => -self.amplitude() * m.sin(),
        };
        let mut d = vec![dm];
        for s in &self.slaves {
            let v = (s.df)(m);
            if !v.is_finite() {
                return None;
            }
            d.push(v);
        }
        Some(self.compose(&d))
    }
}

/// `s pi + (pi/2)(1 - (-1)^s) + (-1)^s acos(x/R)`, valid for any integer `s`.
pub fn reconstruct_angle(s: i64, x_over_r: f64) -> Result<f64, ContourError> {
    if !x_over_r.is_finite() || x_over_r.abs() > 1.0 + CLAMP_TOL {
        return Err(ContourError::Domain(x_over_r));
    }
    let c = x_over_r.clamp(-1.0, 1.0);
    let even = s.rem_euclid(2) == 0;
    let sf = s as f64;
    Ok(if even { sf * PI + c.acos() } else { sf * PI + PI - c.acos() })
}

/// Streaming state of the rotational-to-angle conversion.
#[derive(Debug, Clone)]
pub struct UnwrapState {
    pub s: i64,
    pub theta_prev: Option<f64>,
    theta_prev2: Option<f64>,
    pub k: usize,
    pub r: f64,
    pub direction: Direction,
}

impl UnwrapState {
    pub fn new(r: f64, direction: Direction) -> Self {
        Self { s: 0, theta_prev: None, theta_prev2: None, k: 0, r, direction }
    }

    fn ordered(&self, candidate: f64, prev: f64) -> bool {
        match self.direction {
            Direction::Increasing => candidate > prev,
            Direction::Decreasing => candidate < prev,
        }
    }

    /// Convert one sample. At most one interval increment per sample.
    pub fn push(&mut self, x1: f64) -> Result<f64, ContourError> {
        let xr = x1 / self.r;
        let step: i64 = match self.direction {
            Direction::Increasing => 1,
            Direction::Decreasing => -1,
        };
        let mut theta = reconstruct_angle(self.s, xr)?;
        if let Some(prev) = self.theta_prev {
            if !self.ordered(theta, prev) {
                let candidate = reconstruct_angle(self.s + step, xr)?;
                if !self.ordered(candidate, prev) {
                    return Err(ContourError::MonotonicityViolation { k: self.k, prev, candidate });
                }
                self.s += step;
                theta = candidate;
            } else if let Some(prev2) = self.theta_prev2 {
                // near an extremum both branches can look monotone; keep the
                // one that continues the recent slope
                let candidate = reconstruct_angle(self.s + step, xr)?;
                let predicted = 2.0 * prev - prev2;
                if self.ordered(candidate, prev)
                    && (candidate - predicted).abs() < (theta - predicted).abs()
                {
                    self.s += step;
                    theta = candidate;
                }
            }
        }
        self.theta_prev2 = self.theta_prev;
        self.theta_prev = Some(theta);
        self.k += 1;
        Ok(theta)
    }
}

pub fn unwrap_rotational(
    x1_samples: &[f64],
    r: f64,
    direction: Direction,
) -> Result<Vec<f64>, ContourError> {
    let mut st = UnwrapState::new(r, direction);
    x1_samples.iter().map(|&x| st.push(x)).collect()
}

/// Slave reference and its slope at master coordinate `m`.
pub fn eval_contour(spec: &ContourSpec, m: f64, slave: usize) -> Result<(f64, f64), ContourError> {
    let s = spec
        .slaves
        .get(slave)
        .ok_or(ContourError::EvalOutOfRange { x: m, slave })?;
    let r = (s.f)(m);
    if !r.is_finite() {
        return Err(ContourError::EvalOutOfRange { x: m, slave });
    }
    let d = (s.df)(m);
    if !d.is_finite() {
        return Err(ContourError::NonFiniteDerivative { x: m, slave });
    }
    Ok((r, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// Master coordinate (x1, or the unwrapped angle) strictly monotone.
    pub monotone: bool,
    /// Smallest |increment| of the master coordinate per sample.
    pub min_step: f64,
    pub derivatives_finite: bool,
    /// `|x1| <= R` (rotational only; always true otherwise).
    pub within_amplitude: bool,
    pub detail: Option<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.monotone && self.derivatives_finite && self.within_amplitude
    }
}

/// Check the framework's assumptions on sampled master positions.
pub fn check_assumptions_on(spec: &ContourSpec, x1: &[f64]) -> AssumptionReport {
    let mut detail = None;
    let mut within_amplitude = true;
    let coords: Vec<f64> = match spec.kind {
        ContourKind::Monotonic => x1.to_vec(),
        ContourKind::Rotational { amplitude, direction } => {
            let r = amplitude.unwrap_or_else(|| estimate_amplitude(x1));
            within_amplitude = x1.iter().all(|x| x.abs() <= r * (1.0 + CLAMP_TOL));
            match unwrap_rotational(x1, r, direction) {
                Ok(th) => th,
                Err(e) => {
                    detail = Some(e.to_string());
                    Vec::new()
                }
            }
        }
    };
    let sign = match spec.kind {
        ContourKind::Rotational { direction, .. } => direction.sign(),
        ContourKind::Monotonic => {
            if coords.len() >= 2 && coords[coords.len() - 1] < coords[0] {
                -1.0
            } else {
                1.0
            }
        }
    };
    let mut monotone = !coords.is_empty() || x1.is_empty();
    let mut min_step = f64::INFINITY;
    for w in coords.windows(2) {
        let d = (w[1] - w[0]) * sign;
        if !(d > 0.0) {
            monotone = false;
        }
        min_step = min_step.min(d.abs());
    }
    if !monotone && detail.is_none() {
        detail = Some("master coordinate not strictly monotone".into());
    }
    let mut derivatives_finite = true;
    'outer: for &m in &coords {
        for (i, s) in spec.slaves.iter().enumerate() {
            if !(s.f)(m).is_finite() || !(s.df)(m).is_finite() {
                derivatives_finite = false;
                detail.get_or_insert_with(|| format!("slave {i} not finite at {m}"));
                break 'outer;
            }
        }
    }
    AssumptionReport { monotone, min_step, derivatives_finite, within_amplitude, detail }
}

/// Check assumptions on the reference master trajectory over `[0, horizon]`.
pub fn check_assumptions(spec: &ContourSpec, horizon: f64, ts: f64) -> AssumptionReport {
    let n = (horizon / ts).floor() as usize;
    let x1: Vec<f64> = (0..=n).map(|k| spec.master_ref(k as f64 * ts)).collect();
    check_assumptions_on(spec, &x1)
}

/// Supremum estimate of |x1| with a small slack.
pub fn estimate_amplitude(x1: &[f64]) -> f64 {
    x1.iter().fold(0.0f64, |a, x| a.max(x.abs())) + 1e-12
}
