//! Axis models: continuous and discrete state space, ZOH discretization,
//! observer canonical form.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("(C, G) pair is not observable")]
    NotObservable,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sampling period must be positive, got {0}")]
    BadSamplingPeriod(f64),
}

/// Continuous single-input single-output model `x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantCT {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
}

/// Observer canonical realization of a discrete plant.
///
/// `g` has `-coeffs` in its first column and an identity block in the upper
/// right; `c = [1 0 ... 0]`. `transform` maps original states to canonical
/// ones (`x_o = T x`).
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalForm {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub c: RowDVector<f64>,
    pub transform: DMatrix<f64>,
    /// `[d1, ..., dn]` of `z^n + d1 z^(n-1) + ... + dn`.
    pub coeffs: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantDT {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub c: RowDVector<f64>,
    pub ts: f64,
    pub canon: Option<CanonicalForm>,
}

impl PlantCT {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: RowDVector<f64>) -> Result<Self, PlantError> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.len() != n {
            return Err(PlantError::DimensionMismatch(format!(
                "A {}x{}, B {}, C {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Second-order position servo `y'' = -k y - c y' + gain u`.
    pub fn second_order(stiffness: f64, damping: f64, gain: f64) -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -stiffness, -damping]),
            b: DVector::from_vec(vec![0.0, gain]),
            c: RowDVector::from_vec(vec![1.0, 0.0]),
        }
    }
}

impl PlantDT {
    pub fn new(
        g: DMatrix<f64>,
        h: DVector<f64>,
        c: RowDVector<f64>,
        ts: f64,
    ) -> Result<Self, PlantError> {
        let n = g.nrows();
        if g.ncols() != n || h.len() != n || c.len() != n {
            return Err(PlantError::DimensionMismatch(format!(
                "G {}x{}, H {}, C {}",
                g.nrows(),
                g.ncols(),
                h.len(),
                c.len()
            )));
        }
        if !(ts > 0.0) {
            return Err(PlantError::BadSamplingPeriod(ts));
        }
        Ok(Self { g, h, c, ts, canon: None })
    }

    pub fn order(&self) -> usize {
        self.g.nrows()
    }

    /// `C G^j H` for `j = 0..count`.
    pub fn markov_parameters(&self, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        let mut v = self.h.clone();
        for _ in 0..count {
            out.push(self.c.dot(&v.transpose()));
            v = &self.g * v;
        }
        out
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.g)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// One step `x(k+1) = G x(k) + H u(k)`.
    pub fn step(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        &self.g * x + &self.h * u
    }

    pub fn output(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(&x.transpose())
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Exact zero-order-hold discretization through the exponential of the
/// augmented matrix `[[A, B], [0, 0]] Ts`.
pub fn discretize_plant_zoh(plant: &PlantCT, ts: f64) -> Result<PlantDT, PlantError> {
    if !(ts > 0.0) {
        return Err(PlantError::BadSamplingPeriod(ts));
    }
    let n = plant.order();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&(&plant.a * ts));
    m.view_mut((0, n), (n, 1)).copy_from(&(&plant.b * ts));
    let e = m.exp();
    let g = e.view((0, 0), (n, n)).into_owned();
    let h = e.view((0, n), (n, 1)).column(0).into_owned();
    PlantDT::new(g, h, plant.c.clone(), ts)
}

fn observability_matrix(g: &DMatrix<f64>, c: &RowDVector<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mut o = DMatrix::zeros(n, n);
    let mut row = c.clone();
    for i in 0..n {
        o.set_row(i, &row);
        row = &row * g;
    }
    o
}

fn companion_observer(coeffs: &DVector<f64>) -> DMatrix<f64> {
    let n = coeffs.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, 0)] = -coeffs[i];
        if i + 1 < n {
            a[(i, i + 1)] = 1.0;
        }
    }
    a
}

fn unit_row(n: usize) -> RowDVector<f64> {
    let mut c = RowDVector::zeros(n);
    c[0] = 1.0;
    c
}

/// Characteristic coefficients from `C G^n + d1 C G^(n-1) + ... + dn C = 0`.
fn characteristic_coeffs(g: &DMatrix<f64>, obs: &DMatrix<f64>, c: &RowDVector<f64>) -> Option<DVector<f64>> {
    let n = g.nrows();
    let mut cgn = c.clone();
    for _ in 0..n {
        cgn = &cgn * g;
    }
    // r O = -C G^n with r = [dn, ..., d1]
    let rhs = -cgn.transpose();
    let r = obs.transpose().lu().solve(&rhs)?;
    Some(DVector::from_fn(n, |i, _| r[n - 1 - i]))
}

/// Transform to observer canonical form. The plant's original realization is
/// kept; the canonical one is stored alongside.
pub fn to_observer_canonical(plant: &PlantDT) -> Result<PlantDT, PlantError> {
    let n = plant.order();
    let obs = observability_matrix(&plant.g, &plant.c);
    let sv = obs.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(PlantError::NotObservable);
    }
    let coeffs = characteristic_coeffs(&plant.g, &obs, &plant.c).ok_or(PlantError::NotObservable)?;
    let g_o = companion_observer(&coeffs);
    let c_o = unit_row(n);
    let obs_o = observability_matrix(&g_o, &c_o);
    // obs_o is unit lower triangular
    let t = obs_o
        .solve_lower_triangular(&obs)
        .ok_or(PlantError::NotObservable)?;
    let h_o = &t * &plant.h;
    let mut out = plant.clone();
    out.canon = Some(CanonicalForm { g: g_o, h: h_o, c: c_o, transform: t, coeffs });
    Ok(out)
}

/// Raise the order to `target` by multiplying numerator and denominator with
/// `(z - pole)`. Transfer behaviour is unchanged; the extra mode is stable
/// when `|pole| < 1` and uncontrollable. The result is in observer canonical
/// form.
pub fn augment_order(plant: &PlantDT, target: usize, pole: f64) -> Result<PlantDT, PlantError> {
    let base = match &plant.canon {
        Some(_) => plant.clone(),
        None => to_observer_canonical(plant)?,
    };
    let canon = base.canon.as_ref().expect("canonical form present");
    if target <= base.order() {
        return Ok(base);
    }
    // monic denominator [1, d1..dn] and numerator [0, b1..bn] (same degree)
    let mut den: Vec<f64> = std::iter::once(1.0).chain(canon.coeffs.iter().copied()).collect();
    let mut num: Vec<f64> = std::iter::once(0.0).chain(canon.h.iter().copied()).collect();
    while den.len() - 1 < target {
        den = poly_mul_linear(&den, pole);
        num = poly_mul_linear(&num, pole);
    }
    let m = den.len() - 1;
    let coeffs = DVector::from_fn(m, |i, _| den[i + 1]);
    let h = DVector::from_fn(m, |i, _| num[i + 1]);
    let g = companion_observer(&coeffs);
    let c = unit_row(m);
    Ok(PlantDT {
        g: g.clone(),
        h: h.clone(),
        c: c.clone(),
        ts: plant.ts,
        canon: Some(CanonicalForm { g, h, c, transform: DMatrix::identity(m, m), coeffs }),
    })
}

/// Coefficients (highest power first) times `(z - pole)`.
fn poly_mul_linear(p: &[f64], pole: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + 1];
    for (i, &c) in p.iter().enumerate() {
        out[i] += c;
        out[i + 1] -= pole * c;
    }
    out
}

/// The printed X1 (master) and X2 (slave) stage models at Ts = 1e-4 s.
pub fn printed_plants() -> (PlantDT, PlantDT) {
    let ts = 1e-4;
    let c = RowDVector::from_vec(vec![1.0, 0.0]);
    let master = PlantDT::new(
        DMatrix::from_row_slice(2, 2, &[1.00, 9.99e-5, -0.79, 1.00]),
        DVector::from_vec(vec![3.97e-6, 0.08]),
        c.clone(),
        ts,
    )
    .expect("static dimensions");
    let slave = PlantDT::new(
        DMatrix::from_row_slice(2, 2, &[1.00, 9.98e-5, -2.10, 1.00]),
        DVector::from_vec(vec![1.04e-5, 0.21]),
        c,
        ts,
    )
    .expect("static dimensions");
    (master, slave)
}

/// Continuous second-order models whose ZOH discretization at 10 kHz matches
/// the printed stage matrices to their printed precision.
pub fn fitted_stage_models() -> (PlantCT, PlantCT) {
    (
        PlantCT::second_order(7900.0, 20.0, 800.0),
        PlantCT::second_order(21000.0, 40.0, 2080.0),
    )
}

/// Fitted stage models discretized at `ts`.
pub fn stage_plants(ts: f64) -> Result<(PlantDT, PlantDT), PlantError> {
    let (m, s) = fitted_stage_models();
    Ok((discretize_plant_zoh(&m, ts)?, discretize_plant_zoh(&s, ts)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zoh_integrator() {
        let p = PlantCT::new(
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![1.0]),
            RowDVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let d = discretize_plant_zoh(&p, 1e-4).unwrap();
        assert!(close(d.g[(0, 0)], 1.0, 1e-15));
        assert!(close(d.h[0], 1e-4, 1e-18));
    }

    #[test]
    fn zoh_double_integrator() {
        let p = PlantCT::second_order(0.0, 0.0, 1.0);
        let ts = 1e-4;
        let d = discretize_plant_zoh(&p, ts).unwrap();
        assert!(close(d.g[(0, 1)], ts, 1e-18));
        assert!(close(d.g[(1, 0)], 0.0, 1e-18));
        assert!(close(d.h[0], ts * ts / 2.0, 1e-20));
        assert!(close(d.h[1], ts, 1e-18));
    }

    #[test]
    fn fitted_models_match_printed_matrices() {
        let (pm, ps) = printed_plants();
        let (m, s) = stage_plants(1e-4).unwrap();
        for (fit, printed, digits) in [(&m, &pm, 2.0), (&s, &ps, 2.0)] {
            for i in 0..2 {
                for j in 0..2 {
                    let p = printed.g[(i, j)];
                    let f = fit.g[(i, j)];
                    // printed with three significant digits
                    assert!((p - f).abs() <= 0.5 * 10f64.powf(-digits) * p.abs().max(1e-300) + 1e-12,
                        "G[{i},{j}] fit {f} printed {p}");
                }
                let p = printed.h[i];
                let f = fit.h[i];
                assert!((p - f).abs() <= 0.02 * p.abs(), "H[{i}] fit {f} printed {p}");
            }
        }
    }

    #[test]
    fn canonical_coeffs_are_trace_and_det() {
        let (_, slave) = printed_plants();
        let c = to_observer_canonical(&slave).unwrap();
        let canon = c.canon.unwrap();
        let tr = slave.g.trace();
        let det = slave.g.determinant();
        assert!(close(canon.coeffs[0], -tr, 1e-12));
        assert!(close(canon.coeffs[1], det, 1e-12));
        assert!(close(det, 1.0 + 2.10 * 9.98e-5, 1e-12));
    }

    #[test]
    fn canonical_of_canonical_is_identity() {
        let p = PlantDT::new(
            DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -0.5, 0.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            RowDVector::from_vec(vec![1.0, 0.0]),
            0.1,
        )
        .unwrap();
        let c = to_observer_canonical(&p).unwrap().canon.unwrap();
        assert!((c.transform - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn unobservable_is_rejected() {
        let p = PlantDT::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]),
            DVector::from_vec(vec![1.0, 1.0]),
            RowDVector::from_vec(vec![1.0, 0.0]),
            0.1,
        )
        .unwrap();
        assert_eq!(to_observer_canonical(&p), Err(PlantError::NotObservable));
    }

    #[test]
    fn augmentation_keeps_markov_parameters() {
        let (_, slave) = stage_plants(1e-4).unwrap();
        let aug = augment_order(&slave, 3, 0.0).unwrap();
        assert_eq!(aug.order(), 3);
        let a = slave.markov_parameters(8);
        let b = aug.markov_parameters(8);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-6), "{x} vs {y}");
        }
        assert!(aug.spectral_radius() < 1.0);
    }

    #[test]
    fn printed_plants_stability_report() {
        let (m, s) = printed_plants();
        let (rm, rs) = (m.spectral_radius(), s.spectral_radius());
        // undamped as printed: eigenvalues 1 +- i sqrt(0.79 * 9.99e-5)
        assert!(close(rm, (1.0 + 0.79 * 9.99e-5f64).sqrt(), 1e-12));
        assert!(close(rs, (1.0 + 2.10 * 9.98e-5f64).sqrt(), 1e-12));
        assert_eq!(m.is_stable(), rm < 1.0);
        assert!(!s.is_stable());
        let (fm, fs) = stage_plants(1e-4).unwrap();
        assert!(fm.is_stable() && fs.is_stable());
    }
}
