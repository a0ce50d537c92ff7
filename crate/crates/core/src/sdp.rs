//! Small dense LMI feasibility solver.
//!
//! Maximizes a uniform margin `t` subject to `F_k(x) - t I >= 0` for every
//! block and `|x_i| <= box`, by a primal log-barrier path-following method
//! with dense Newton steps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("LMI infeasible (maximized margin {margin:e}, target {target:e})")]
    Infeasible { margin: f64, target: f64 },
    #[error("iteration limit {0} reached")]
    MaxIterations(usize),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Matrix expression affine in the problem variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineMatrix {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(&i, m)| (i, f(m))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn left_mul(&self, a: &DMatrix<f64>) -> Self {
        self.map(|m| a * m)
    }

    pub fn right_mul(&self, a: &DMatrix<f64>) -> Self {
        self.map(|m| m * a)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|m| m * c)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&i, m) in &other.terms {
            out.terms
                .entry(i)
                .and_modify(|e| *e += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// `[[a11, a12], [a21, a22]]`.
    pub fn block2(a11: &Self, a12: &Self, a21: &Self, a22: &Self) -> Self {
        let (r1, c1) = a11.shape();
        let (r2, c2) = a22.shape();
        let place = |parts: [(&DMatrix<f64>, usize, usize); 4]| {
            let mut m = DMatrix::zeros(r1 + r2, c1 + c2);
            for (p, r, c) in parts {
                m.view_mut((r, c), p.shape()).copy_from(p);
            }
            m
        };
        let zero = |r, c| DMatrix::zeros(r, c);
        let mut keys: Vec<usize> = [a11, a12, a21, a22]
            .iter()
            .flat_map(|a| a.terms.keys().copied())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let get = |a: &Self, i: usize, r: usize, c: usize| a.terms.get(&i).cloned().unwrap_or_else(|| zero(r, c));
        let terms = keys
            .into_iter()
            .map(|i| {
                let (m11, m12, m21, m22) =
                    (get(a11, i, r1, c1), get(a12, i, r1, c2), get(a21, i, r2, c1), get(a22, i, r2, c2));
                (i, place([(&m11, 0, 0), (&m12, 0, c1), (&m21, r1, 0), (&m22, r1, c1)]))
            })
            .collect();
        let constant = place([
            (&a11.constant, 0, 0),
            (&a12.constant, 0, c1),
            (&a21.constant, r1, 0),
            (&a22.constant, r1, c1),
        ]);
        Self { constant, terms }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (&i, c) in &self.terms {
            m += c * x[i];
        }
        m
    }
}

/// One constraint `constant + sum_i x_i coeffs_i > 0` (symmetric).
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub label: String,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (i, c) in &self.terms {
            m += c * x[*i];
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub nvars: usize,
    pub blocks: Vec<LmiBlock>,
    pub margin_target: f64,
    pub box_bound: f64,
}

/// Variable allocation and constraint collection.
#[derive(Debug, Default)]
pub struct ProblemBuilder {
    nvars: usize,
    blocks: Vec<LmiBlock>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Symmetric `n x n` matrix variable (`n (n + 1) / 2` scalars).
    pub fn symmetric(&mut self, n: usize) -> AffineMatrix {
        let mut e = AffineMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut c = DMatrix::zeros(n, n);
                c[(i, j)] = 1.0;
                c[(j, i)] = 1.0;
                e.terms.insert(self.nvars, c);
                self.nvars += 1;
            }
        }
        e
    }

    /// Unstructured `rows x cols` matrix variable.
    pub fn general(&mut self, rows: usize, cols: usize) -> AffineMatrix {
        let mut e = AffineMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let mut c = DMatrix::zeros(rows, cols);
                c[(i, j)] = 1.0;
                e.terms.insert(self.nvars, c);
                self.nvars += 1;
            }
        }
        e
    }

    /// Require `expr > 0`; the expression is symmetrized.
    pub fn require_pd(&mut self, expr: &AffineMatrix, label: impl Into<String>) {
        let sym = |m: &DMatrix<f64>| (m + m.transpose()) * 0.5;
        self.blocks.push(LmiBlock {
            label: label.into(),
            constant: sym(&expr.constant),
            terms: expr.terms.iter().map(|(&i, m)| (i, sym(m))).collect(),
        });
    }

    pub fn build(self, margin_target: f64, box_bound: f64) -> LmiProblem {
        LmiProblem { nvars: self.nvars, blocks: self.blocks, margin_target, box_bound }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub per_block: Vec<f64>,
    pub global_min: f64,
}

impl MarginReport {
    pub fn passes(&self, tau: f64) -> bool {
        self.global_min >= tau
    }
}

/// Minimum eigenvalue of every block at `x`, computed from scratch.
pub fn check_solution(problem: &LmiProblem, x: &[f64]) -> MarginReport {
    let per_block: Vec<f64> = problem
        .blocks
        .iter()
        .map(|b| {
            let m = b.eval(x);
            let m = (&m + m.transpose()) * 0.5;
            m.symmetric_eigenvalues().min()
        })
        .collect();
    let global_min = per_block.iter().copied().fold(f64::INFINITY, f64::min);
    MarginReport { per_block, global_min }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    /// Margin reached by the solver (in problem units).
    pub margin: f64,
    pub newton_steps: usize,
    pub report: MarginReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_newton_steps: usize,
    /// Barrier parameter growth per outer iteration.
    pub growth: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    /// Newton steps allowed per centering before it counts as stalled.
    pub centering_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_newton_steps: 2000, growth: 8.0, abs_gap: 1e-9, rel_gap: 1e-4, centering_steps: 200 }
    }
}

/// Scaled copy of the problem data used by the barrier iterations.
struct Normalized {
    n: usize,
    blocks: Vec<LmiBlock>,
    scale: f64,
    degree: f64,
}

impl Normalized {
    fn new(p: &LmiProblem) -> Result<Self, SdpError> {
        if !(p.box_bound > 0.0) {
            return Err(SdpError::Malformed("box bound must be positive".into()));
        }
        let mut scale = 0.0f64;
        for b in &p.blocks {
            let d = b.dim();
            if b.constant.ncols() != d {
                return Err(SdpError::Malformed(format!("block {} not square", b.label)));
            }
            scale = scale.max(b.constant.abs().max());
            for (i, c) in &b.terms {
                if *i >= p.nvars || c.shape() != (d, d) {
                    return Err(SdpError::Malformed(format!("bad term in block {}", b.label)));
                }
                scale = scale.max(p.box_bound * c.abs().max());
            }
        }
        if !(scale > 0.0) || !scale.is_finite() {
            scale = 1.0;
        }
        let blocks = p
            .blocks
            .iter()
            .map(|b| LmiBlock {
                label: b.label.clone(),
                constant: &b.constant / scale,
                terms: b.terms.iter().map(|(i, c)| (*i, c * (p.box_bound / scale))).collect(),
            })
            .collect::<Vec<_>>();
        let degree = blocks.iter().map(|b| b.dim() as f64).sum::<f64>() + 2.0 * p.nvars as f64;
        Ok(Self { n: p.nvars, blocks, scale, degree })
    }

    /// Barrier value, or `None` outside the strict interior.
    fn barrier(&self, y: &[f64], t: f64, s: f64) -> Option<f64> {
        let mut v = -s * t;
        for yi in y {
            if !(yi.abs() < 1.0) {
                return None;
            }
            v -= (1.0 - yi).ln() + (1.0 + yi).ln();
        }
        for b in &self.blocks {
            let mut m = b.eval(y);
            for i in 0..b.dim() {
                m[(i, i)] -= t;
            }
            let ch = m.cholesky()?;
            let l = ch.l_dirty();
            v -= 2.0 * (0..b.dim()).map(|i| l[(i, i)].ln()).sum::<f64>();
        }
        Some(v)
    }

    /// Gradient and Hessian in `(y, t)`; `t` is the last coordinate.
    fn derivatives(&self, y: &[f64], t: f64, s: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.n;
        let mut g = DVector::zeros(n + 1);
        let mut h = DMatrix::zeros(n + 1, n + 1);
        g[n] = -s;
        for (i, yi) in y.iter().enumerate() {
            g[i] += 1.0 / (1.0 - yi) - 1.0 / (1.0 + yi);
            h[(i, i)] += 1.0 / (1.0 - yi).powi(2) + 1.0 / (1.0 + yi).powi(2);
        }
        for b in &self.blocks {
            let d = b.dim();
            let mut m = b.eval(y);
            for i in 0..d {
                m[(i, i)] -= t;
            }
            let w = m.cholesky()?.inverse();
            // W F_u for every variable in the block, with F_t = -I
            let mut idx: Vec<usize> = b.terms.iter().map(|(i, _)| *i).collect();
            let mut prods: Vec<DMatrix<f64>> = b.terms.iter().map(|(_, c)| &w * c).collect();
            idx.push(n);
            prods.push(-&w);
            for (a, pa) in prods.iter().enumerate() {
                g[idx[a]] -= pa.trace();
                for (bb, pb) in prods.iter().enumerate().skip(a) {
                    let v = pa.dot(&pb.transpose());
                    h[(idx[a], idx[bb])] += v;
                    if a != bb {
                        h[(idx[bb], idx[a])] += v;
                    }
                }
            }
        }
        Some((g, h))
    }

    fn min_eig(&self, y: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.eval(y).symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Maximize the uniform margin; succeed only if it reaches the target.
pub fn solve_lmi_feasibility(problem: &LmiProblem) -> Result<SdpSolution, SdpError> {
    solve_lmi_with(problem, &SolverSettings::default())
}

pub fn solve_lmi_with(problem: &LmiProblem, settings: &SolverSettings) -> Result<SdpSolution, SdpError> {
    let norm = Normalized::new(problem)?;
    let n = norm.n;
    let mut y = vec![0.0; n];
    let mut t = if norm.blocks.is_empty() { 0.0 } else { norm.min_eig(&y) - 1.0 };
    if norm.blocks.is_empty() {
        return Err(SdpError::Malformed("no constraints".into()));
    }
    let mut s = 1.0;
    let mut steps = 0usize;
    let target = problem.margin_target / norm.scale;
    let mut breakdown: Option<String> = None;
    'outer: loop {
        // centering
        let start = steps;
        loop {
            if steps - start >= settings.centering_steps {
                // the iterate crowds the box; accept once the margin is met
                if t >= target && check_solution(problem, &scaled(&y, problem.box_bound)).passes(problem.margin_target) {
                    break 'outer;
                }
            }
            if steps >= settings.max_newton_steps {
                return Err(SdpError::MaxIterations(steps));
            }
            steps += 1;
            let Some((g, h)) = norm.derivatives(&y, t, s) else {
                breakdown = Some("iterate left the interior".into());
                break 'outer;
            };
            let Some(ch) = h.cholesky() else {
                breakdown = Some("Hessian not positive definite".into());
                break 'outer;
            };
            let dir = ch.solve(&(-&g));
            let decrement = -g.dot(&dir);
            if !decrement.is_finite() {
                breakdown = Some("non-finite Newton decrement".into());
                break 'outer;
            }
            if decrement < 1e-10 {
                break;
            }
            let f0 = norm.barrier(&y, t, s).expect("current iterate is interior");
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let yt: Vec<f64> = (0..n).map(|i| y[i] + alpha * dir[i]).collect();
                let tt = t + alpha * dir[n];
                if let Some(f1) = norm.barrier(&yt, tt, s) {
                    if f1 <= f0 - 0.25 * alpha * decrement {
                        y = yt;
                        t = tt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no further progress at this barrier weight
                break;
            }
        }
        let gap = norm.degree / s;
        if gap <= settings.abs_gap + settings.rel_gap * t.abs() {
            break;
        }
        s *= settings.growth;
    }
    let x = scaled(&y, problem.box_bound);
    let report = check_solution(problem, &x);
    let margin = t * norm.scale;
    if report.passes(problem.margin_target) && t >= target {
        return Ok(SdpSolution { x, margin, newton_steps: steps, report });
    }
    if let Some(msg) = breakdown {
        if t + norm.degree / s > settings.abs_gap {
            return Err(SdpError::NumericalBreakdown(msg));
        }
    }
    Err(SdpError::Infeasible { margin: report.global_min.min(margin), target: problem.margin_target })
}

fn scaled(y: &[f64], box_bound: f64) -> Vec<f64> {
    y.iter().map(|v| v * box_bound).collect()
}

impl LmiProblem {
    /// Plain-text dump: header lines, then one section per block with
    /// row-major numbers.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lmi");
        let _ = writeln!(out, "vars {}", self.nvars);
        let _ = writeln!(out, "margin {:e}", self.margin_target);
        let _ = writeln!(out, "box {:e}", self.box_bound);
        let row = |m: &DMatrix<f64>, out: &mut String| {
            for i in 0..m.nrows() {
                let line: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        };
        for b in &self.blocks {
            let _ = writeln!(out, "block {} {}", b.dim(), b.label);
            let _ = writeln!(out, "const");
            row(&b.constant, &mut out);
            for (i, c) in &b.terms {
                let _ = writeln!(out, "coef {i}");
                row(c, &mut out);
            }
        }
        out
    }

    pub fn load(text: &str) -> Result<Self, SdpError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let mut cur = Cursor { lines: &lines, pos: 0 };
        cur.keyword("lmi")?;
        let nvars = cur.keyword("vars")?.parse::<usize>().map_err(|_| cur.err("bad variable count"))?;
        let margin_target = cur.keyword("margin")?.parse::<f64>().map_err(|_| cur.err("bad margin"))?;
        let box_bound = cur.keyword("box")?.parse::<f64>().map_err(|_| cur.err("bad box"))?;
        let mut blocks = Vec::new();
        while !cur.done() {
            let rest = cur.keyword("block")?;
            let (d, label) = rest.split_once(' ').unwrap_or((rest.as_str(), ""));
            let d = d.parse::<usize>().map_err(|_| cur.err("bad block size"))?;
            let label = label.to_string();
            cur.keyword("const")?;
            let constant = cur.matrix(d)?;
            let mut terms = Vec::new();
            while cur.peek().is_some_and(|l| l.starts_with("coef")) {
                let i = cur
                    .keyword("coef")?
                    .parse::<usize>()
                    .ok()
                    .filter(|&i| i < nvars)
                    .ok_or_else(|| cur.err("bad variable index"))?;
                terms.push((i, cur.matrix(d)?));
            }
            blocks.push(LmiBlock { label, constant, terms });
        }
        Ok(Self { nvars, blocks, margin_target, box_bound })
    }
}

struct Cursor<'a> {
    lines: &'a [(usize, &'a str)],
    pos: usize,
}

impl Cursor<'_> {
    fn done(&self) -> bool {
        self.pos >= self.lines.len()
    }

    fn peek(&self) -> Option<&str> {
        self.lines.get(self.pos).map(|(_, l)| *l)
    }

    fn err(&self, msg: &str) -> SdpError {
        let line = self.lines.get(self.pos.saturating_sub(1)).map_or(0, |(n, _)| *n);
        SdpError::Parse { line, msg: msg.into() }
    }

    fn next(&mut self) -> Result<&str, SdpError> {
        let l = self.lines.get(self.pos).map(|(_, l)| *l);
        self.pos += 1;
        l.ok_or_else(|| self.err("unexpected end of input"))
    }

    /// Consume a line starting with `key`; return the rest.
    fn keyword(&mut self, key: &str) -> Result<String, SdpError> {
        let l = self.next()?;
        match l.split_once(char::is_whitespace) {
            Some((k, rest)) if k == key => Ok(rest.trim().to_string()),
            None if l == key => Ok(String::new()),
            _ => Err(self.err(&format!("expected `{key}`"))),
        }
    }

    fn matrix(&mut self, d: usize) -> Result<DMatrix<f64>, SdpError> {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            let vals: Vec<f64> = self
                .next()?
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<_, _>>()
                .map_err(|_| self.err("bad number"))?;
            if vals.len() != d {
                return Err(self.err("wrong row length"));
            }
            for (j, v) in vals.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positive_scalar() -> LmiProblem {
        let mut b = ProblemBuilder::new();
        let x = b.general(1, 1);
        b.require_pd(&x, "x");
        b.build(1e-8, 1e9)
    }

    /// Poly-quadratic stabilization blocks for scalar vertex systems.
    fn scalar_polytope(a: &[f64], bgain: f64) -> LmiProblem {
        let mut b = ProblemBuilder::new();
        let vars: Vec<_> = a.iter().map(|_| (b.symmetric(1), b.general(1, 1), b.general(1, 1))).collect();
        for (i, (q, g, r)) in vars.iter().enumerate() {
            b.require_pd(q, format!("Q{i}"));
            let top = g.add(&g.transpose()).sub(q);
            let x = g.scale(a[i]).add(&r.scale(bgain));
            for (j, (qj, _, _)) in vars.iter().enumerate() {
                b.require_pd(&AffineMatrix::block2(&top, &x.transpose(), &x, qj), format!("{i},{j}"));
            }
        }
        b.build(1e-8, 1e9)
    }

    #[test]
    fn positive_scalar_goes_to_box() {
        let p = positive_scalar();
        let s = solve_lmi_feasibility(&p).unwrap();
        assert!(s.x[0] > 0.99e9 && s.x[0] <= 1e9, "{}", s.x[0]);
        let zero = check_solution(&p, &[0.0]);
        assert_eq!(zero.global_min, 0.0);
        assert!(!zero.passes(1e-8));
    }

    #[test]
    fn hand_witness() {
        let p = scalar_polytope(&[0.5, 0.5], 1.0);
        // Q1, G1, R1, Q2, G2, R2 = 1, 1, 0, 1, 1, 0
        let rep = check_solution(&p, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert!((rep.global_min - 0.5).abs() < 1e-12);
        let s = solve_lmi_feasibility(&p).unwrap();
        assert!(s.report.global_min >= 1e-8);
    }

    #[test]
    fn unstable_uncontrollable_is_infeasible() {
        let p = scalar_polytope(&[2.0, 2.0], 0.0);
        assert!(matches!(solve_lmi_feasibility(&p), Err(SdpError::Infeasible { .. })));
    }

    #[test]
    fn diagonal_shift_lowers_margin_by_tau() {
        let p = scalar_polytope(&[0.5, 0.5], 1.0);
        let x = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let mut shifted = p.clone();
        let tau = 1e-3;
        for b in &mut shifted.blocks {
            for i in 0..b.dim() {
                b.constant[(i, i)] -= tau;
            }
        }
        let a = check_solution(&p, &x).global_min;
        let b = check_solution(&shifted, &x).global_min;
        assert!((a - b - tau).abs() < 1e-12);
    }

    #[test]
    fn dump_load_round_trip() {
        let p = scalar_polytope(&[0.5, -0.3], 1.0);
        let q = LmiProblem::load(&p.dump()).unwrap();
        assert_eq!(p, q);
        assert!(matches!(LmiProblem::load("lmi\nvars x\n"), Err(SdpError::Parse { .. })));
    }

    #[test]
    fn deterministic() {
        let p = scalar_polytope(&[0.9, -0.7, 1.1], 1.0);
        let a = solve_lmi_feasibility(&p).unwrap();
        let b = solve_lmi_feasibility(&p).unwrap();
        assert_eq!(a, b);
    }
}
