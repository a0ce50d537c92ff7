//! Axial PID and cross-coupled (CCC) baselines.

use super::scenario::{CccGains, PidGains};

/// Positional PID memory.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
}

/// `u = Kp e + Ki I + Kd (e - e_prev) / Ts` with the trapezoidal integral
/// `I += Ts (e + e_prev) / 2`. The error before the first sample is zero.
pub fn pid_step(state: &mut PidState, e: f64, ts: f64, gains: &PidGains) -> f64 {
    state.integral += 0.5 * ts * (e + state.prev_error);
    let de = (e - state.prev_error) / ts;
    state.prev_error = e;
    gains.kp * e + gains.ki * state.integral + gains.kd * de
}

/// Linearized contour error `-e_x sin(phi) + e_y cos(phi)` and the axis
/// corrections `(-Kx eps sin(phi), Ky eps cos(phi))`.
pub fn ccc_step(e_x: f64, e_y: f64, phi: f64, gains: &CccGains) -> (f64, f64) {
    let (s, c) = phi.sin_cos();
    let eps = -e_x * s + e_y * c;
    (-gains.kx * eps * s, gains.ky * eps * c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pid_examples() {
        let g = PidGains::default();
        let mut st = PidState::default();
        for _ in 0..5 {
            assert_eq!(pid_step(&mut st, 0.0, 1e-4, &g), 0.0);
        }
        let mut st = PidState::default();
        let u = pid_step(&mut st, 1.0, 1e-4, &g);
        assert!((u - (2.6 + 11.4 * 0.5e-4 + 0.1 / 1e-4)).abs() < 1e-12);
        // constant error afterwards: derivative vanishes, integral grows by Ts
        let u2 = pid_step(&mut st, 1.0, 1e-4, &g);
        assert!((u2 - (2.6 + 11.4 * 1.5e-4)).abs() < 1e-12);
    }

    #[test]
    fn ccc_examples() {
        let g = CccGains::default();
        assert_eq!(ccc_step(0.0, 0.0, 0.3, &g), (0.0, 0.0));
        let (dx, dy) = ccc_step(0.0, 1.0, 0.0, &g);
        assert_eq!(dx, 0.0);
        assert_eq!(dy, 30.0);
        // error along the tangent is not a contour error
        let phi = 0.7f64;
        let (dx, dy) = ccc_step(phi.cos(), phi.sin(), phi, &g);
        assert!(dx.abs() < 1e-15 && dy.abs() < 1e-15);
    }
}
