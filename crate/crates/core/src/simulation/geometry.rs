//! Nearest-point distance to a contour: dense polyline search in a window
//! around the current master coordinate, then a Newton step on the curve.

use crate::contour_signals::ContourSpec;

const COARSE: usize = 32;

#[derive(Debug, Clone)]
pub struct ContourLocator {
    spec: ContourSpec,
    m0: f64,
    h: f64,
    dim: usize,
    points: Vec<f64>,
    window: usize,
    refine: bool,
}

impl ContourLocator {
    /// Polyline over `range` with parameter step `h`; searches cover
    /// `+-window` in the master coordinate.
    pub fn new(spec: &ContourSpec, range: (f64, f64), h: f64, window: f64) -> Self {
        let (lo, hi) = range;
        let count = (((hi - lo) / h).ceil() as usize).max(1) + 1;
        let dim = spec.curve_point(lo).len();
        let mut points = Vec::with_capacity(count * dim);
        for i in 0..count {
            points.extend(spec.curve_point(lo + i as f64 * h));
        }
        Self {
            spec: spec.clone(),
            m0: lo,
            h,
            dim,
            points,
            window: ((window / h).ceil() as usize).max(2),
            refine: true,
        }
    }

    /// Polyline distance only (used as the brute-force reference).
    pub fn without_refinement(mut self) -> Self {
        self.refine = false;
        self
    }

    fn count(&self) -> usize {
        self.points.len() / self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared distance from `p` to segment `i` and the foot position in
    /// `[0, 1]`.
    fn segment(&self, i: usize, j: usize, p: &[f64]) -> (f64, f64) {
        let (a, b) = (self.point(i), self.point(j));
        let mut ab2 = 0.0;
        let mut ap_ab = 0.0;
        for d in 0..self.dim {
            let ab = b[d] - a[d];
            ab2 += ab * ab;
            ap_ab += (p[d] - a[d]) * ab;
        }
        let lam = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
        let mut d2 = 0.0;
        for d in 0..self.dim {
            let q = a[d] + lam * (b[d] - a[d]);
            d2 += (p[d] - q) * (p[d] - q);
        }
        (d2, lam)
    }

    /// Nearest curve parameter and distance, searching around `center`.
    pub fn nearest(&self, p: &[f64], center: f64) -> (f64, f64) {
        let last = self.count() - 1;
        let c = ((center - self.m0) / self.h).round().clamp(0.0, last as f64) as usize;
        let lo = c.saturating_sub(self.window);
        let hi = (c + self.window).min(last);
        if lo == hi {
            let d2: f64 = self.point(lo).iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
            return (self.m0 + lo as f64 * self.h, d2.sqrt());
        }
        // coarse chords first, then the fine segments around the best one
        let mut best = (f64::INFINITY, lo);
        let mut i = lo;
        while i < hi {
            let j = (i + COARSE).min(hi);
            let (d2, _) = self.segment(i, j, p);
            if d2 < best.0 {
                best = (d2, i);
            }
            i = j;
        }
        let flo = best.1.saturating_sub(COARSE).max(lo);
        let fhi = (best.1 + 2 * COARSE).min(hi);
        let mut fine = (f64::INFINITY, flo, 0.0);
        for i in flo..fhi {
            let (d2, lam) = self.segment(i, i + 1, p);
            if d2 < fine.0 {
                fine = (d2, i, lam);
            }
        }
        let m = self.m0 + (fine.1 as f64 + fine.2) * self.h;
        let dist = fine.0.sqrt();
        if !self.refine || dist == 0.0 {
            return (m, dist);
        }
        // both candidates are true curve points; keep the closer one
        let foot: f64 =
            self.spec.curve_point(m).iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        match self.newton(p, m) {
            Some((m2, d2)) if d2 <= foot => (m2, d2),
            _ => (m, foot),
        }
    }

    pub fn distance(&self, p: &[f64], center: f64) -> f64 {
        self.nearest(p, center).1
    }

    /// One Newton step on `|c(m) - p|^2 / 2`, kept only when it stays
    /// within two polyline steps and the curve is smooth there.
    fn newton(&self, p: &[f64], m: f64) -> Option<(f64, f64)> {
        if self.spec.is_singular(m) {
            return None;
        }
        let c = self.spec.curve_point(m);
        let d1 = self.spec.curve_tangent(m)?;
        let dp = self.spec.curve_tangent(m + self.h)?;
        let dm = self.spec.curve_tangent(m - self.h)?;
        let mut g = 0.0;
        let mut hess = 0.0;
        for k in 0..self.dim {
            let r = c[k] - p[k];
            let d2 = (dp[k] - dm[k]) / (2.0 * self.h);
            g += r * d1[k];
            hess += d1[k] * d1[k] + r * d2;
        }
        if !(hess > 0.0) {
            return None;
        }
        let step = -g / hess;
        if !(step.abs() <= 2.0 * self.h) {
            return None;
        }
        let m2 = m + step;
        let c2 = self.spec.curve_point(m2);
        let dist: f64 = c2.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        dist.is_finite().then_some((m2, dist))
    }
}

/// Distance from `point` to the contour over `range`, searched globally on a
/// polyline of step `h`.
pub fn contour_error(point: &[f64], spec: &ContourSpec, range: (f64, f64), h: f64) -> f64 {
    let loc = ContourLocator::new(spec, range, h, range.1 - range.0);
    loc.distance(point, 0.5 * (range.0 + range.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::scenario::builtin_contour;

    #[test]
    fn on_curve_is_zero() {
        let spec = builtin_contour("sinusoid", 1.0).unwrap();
        let loc = ContourLocator::new(&spec, (0.0, 5.0), 1e-3, 0.5);
        for m in [0.1, 1.2345, 3.0] {
            let p = spec.curve_point(m);
            assert!(loc.distance(&p, m) < 1e-14);
        }
    }

    #[test]
    fn circle_radial_offset() {
        let spec = builtin_contour("circle", 1.0).unwrap();
        let d = contour_error(&[1.1, 0.0], &spec, (-1.0, 7.0), 1e-3);
        assert!((d - 0.1).abs() < 1e-12, "{d}");
        let d = contour_error(&[0.0, 0.5], &spec, (-1.0, 7.0), 1e-3);
        assert!((d - 0.5).abs() < 1e-12, "{d}");
    }
}
