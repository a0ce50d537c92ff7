//! Per-tick traces, CSV output and contour metrics.

use std::io::{self, Write};

use nalgebra::RowDVector;

/// Signals of one slave axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlaveTrace {
    pub r2: Vec<f64>,
    pub y2: Vec<f64>,
    pub e2: Vec<f64>,
    pub u2: Vec<f64>,
    pub u_im: Vec<f64>,
    pub u_st: Vec<f64>,
}

impl SlaveTrace {
    pub fn with_capacity(n: usize) -> Self {
        let v = || Vec::with_capacity(n);
        Self { r2: v(), y2: v(), e2: v(), u2: v(), u_im: v(), u_st: v() }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, r2: f64, y2: f64, u2: f64, u_im: f64, u_st: f64) {
        self.r2.push(r2);
        self.y2.push(y2);
        self.e2.push(y2 - r2);
        self.u2.push(u2);
        self.u_im.push(u_im);
        self.u_st.push(u_st);
    }
}

/// Stabilizer design and internal-model statistics of one slave.
#[derive(Debug, Clone, PartialEq)]
pub struct SlaveSynthesis {
    pub vertices: Vec<f64>,
    pub gains: Vec<RowDVector<f64>>,
    pub observer_gain: Vec<f64>,
    pub lmi_min_eigenvalue: f64,
    pub solver_margin: f64,
    pub newton_steps: usize,
    pub sylvester_max_residual: f64,
    pub sylvester_mean_residual: f64,
    pub module2_max_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub scenario: String,
    pub controller: String,
    pub hash: String,
    pub ts: f64,
    /// Empty for the baselines.
    pub synthesis: Vec<SlaveSynthesis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub meta: TraceMeta,
    pub x1_ref: Vec<f64>,
    pub x1: Vec<f64>,
    pub slaves: Vec<SlaveTrace>,
    pub contour_error: Vec<f64>,
    /// Rows near non-smooth contour points, left out of the metrics.
    pub excluded: Vec<bool>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.x1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.meta.ts
    }

    pub fn columns(&self) -> Vec<String> {
        let mut c: Vec<String> = ["k", "t", "x1_ref", "x1"].iter().map(|s| s.to_string()).collect();
        let names = ["r2", "y2", "e2", "u2", "u_im", "u_st"];
        if self.slaves.len() == 1 {
            c.extend(names.iter().map(|s| s.to_string()));
        } else {
            for j in 0..self.slaves.len() {
                c.extend(names.iter().map(|s| format!("{s}_{}", j + 1)));
            }
        }
        c.push("contour_error".into());
        c
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = io::BufWriter::new(w);
        writeln!(w, "{}", self.columns().join(","))?;
        for k in 0..self.len() {
            write!(w, "{k},{:e},{:e},{:e}", self.t(k), self.x1_ref[k], self.x1[k])?;
            for s in &self.slaves {
                write!(w, ",{:e},{:e},{:e},{:e},{:e},{:e}", s.r2[k], s.y2[k], s.e2[k], s.u2[k], s.u_im[k], s.u_st[k])?;
            }
            writeln!(w, ",{:e}", self.contour_error[k])?;
        }
        w.flush()
    }

    /// First row of the steady-state window covering the final `fraction`.
    pub fn window_start(&self, fraction: f64) -> usize {
        let n = self.len();
        n - ((n as f64 * fraction).round() as usize).clamp(1, n)
    }

    pub fn metrics(&self, window: f64, threshold: f64) -> ContourMetrics {
        contour_metrics(&self.contour_error, &self.excluded, self.window_start(window), threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourMetrics {
    pub rms: f64,
    pub max: f64,
    /// First row after which |contour error| stays below the threshold.
    pub settling_index: Option<usize>,
}

/// RMS and max over `errors[start..]` skipping excluded rows; settling over
/// the whole series.
pub fn contour_metrics(errors: &[f64], excluded: &[bool], start: usize, threshold: f64) -> ContourMetrics {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut n = 0usize;
    for (e, &x) in errors[start..].iter().zip(&excluded[start..]) {
        if x {
            continue;
        }
        sum += e * e;
        max = max.max(e.abs());
        n += 1;
    }
    let rms = if n > 0 { (sum / n as f64).sqrt() } else { 0.0 };
    let mut settling_index = Some(0);
    for (k, (e, &x)) in errors.iter().zip(excluded).enumerate().rev() {
        if !x && !(e.abs() < threshold) {
            settling_index = if k + 1 < errors.len() { Some(k + 1) } else { None };
            break;
        }
    }
    ContourMetrics { rms: rms.min(max), max, settling_index }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_examples() {
        let e = [1.0, -0.5, 1e-9, 0.0];
        let m = contour_metrics(&e, &[false; 4], 0, 1e-6);
        assert_eq!(m.max, 1.0);
        assert!((m.rms - (1.25f64 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(m.settling_index, Some(2));
        let never = contour_metrics(&[0.0, 1.0], &[false; 2], 0, 1e-6);
        assert_eq!(never.settling_index, None);
        let skip = contour_metrics(&[0.0, 5.0, 0.0], &[false, true, false], 0, 1e-6);
        assert_eq!((skip.rms, skip.max, skip.settling_index), (0.0, 0.0, Some(0)));
    }
}
