//! Per-slave TV-IMCC: offline stabilizer design over the master range and
//! the per-tick controller (internal model + scheduled stabilizer).

use nalgebra::{DVector, Vector2};

use crate::exosystem::{
    alpha_frozen, alpha_time_varying, build_exosystem_ct, choose_offset, exosystem_schedule, AlphaMode,
    ExosystemCT, Increment,
};
use crate::internal_model::{assemble_module2, build_convolution_ops, module2_radius, solve_sylvester, InternalModel};
use crate::plant::CanonicalForm;
use crate::stabilizer::{
    augmented_a, sigma_weights, synthesize_gains, PolytopeGrid, ReducedObserver, SplitBlocks, StabilizerSchedule,
    SynthesisSettings,
};

use super::scenario::Scenario;
use super::trace::SlaveSynthesis;
use super::SimError;

#[derive(Debug, Clone)]
pub struct SlaveDesign {
    pub exo: ExosystemCT,
    /// Schedule along the design trajectory, one entry per row.
    pub alpha: Vec<[f64; 2]>,
    pub stabilizer: StabilizerSchedule,
}

/// Linear interpolation of `alpha` against the master coordinate, with
/// constant extension past the ends.
fn alpha_lookup(coords: &[f64], alpha: &[[f64; 2]]) -> impl Fn(f64) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..alpha.len()).collect();
    idx.sort_by(|&a, &b| coords[a].total_cmp(&coords[b]));
    let xs: Vec<f64> = idx.iter().map(|&i| coords[i]).collect();
    let ys: Vec<[f64; 2]> = idx.iter().map(|&i| alpha[i]).collect();
    move |x: f64| {
        let r = xs.partition_point(|&v| v < x);
        if r == 0 {
            return ys[0].to_vec();
        }
        if r == xs.len() {
            return ys[r - 1].to_vec();
        }
        let (x0, x1) = (xs[r - 1], xs[r]);
        let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 1.0 };
        (0..2).map(|i| ys[r - 1][i] + w * (ys[r][i] - ys[r - 1][i])).collect()
    }
}

/// Design for slave `slave` from master coordinates `coords` (two samples
/// beyond the last row).
pub fn design_slave(scn: &Scenario, slave: usize, coords: &[f64]) -> Result<SlaveDesign, SimError> {
    let def = &scn.def;
    let f = scn.contour.slaves[slave].clone();
    let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let offset = choose_offset(&f, (lo, hi));
    let exo = build_exosystem_ct(f, offset, (lo, hi))?;
    let schedule = exosystem_schedule(&exo, coords, def.alpha_mode)?;
    let rows = schedule.alpha.len();
    let lookup = alpha_lookup(&coords[..rows], &schedule.alpha);
    let grid = PolytopeGrid::build((lo, hi), def.grid_n, def.grid_pad, 2, lookup)?;
    let canon = canonical(scn)?;
    let settings = SynthesisSettings {
        margin_target: def.lmi_tau,
        box_bound: def.lmi_box,
        observer_radius: def.observer_radius,
    };
    let stabilizer = synthesize_gains(grid, &canon.h, &settings)?;
    Ok(SlaveDesign { exo, alpha: schedule.alpha, stabilizer })
}

fn canonical(scn: &Scenario) -> Result<&CanonicalForm, SimError> {
    scn.slave_plant
        .canon
        .as_ref()
        .ok_or_else(|| SimError::Synthesis("slave plant has no canonical form".into()))
}

/// Runtime state of one TV-IMCC slave.
#[derive(Debug, Clone)]
pub struct TvSlave<'a> {
    design: &'a SlaveDesign,
    canon: &'a CanonicalForm,
    im: InternalModel,
    obs: ReducedObserver,
    history: Vec<Vector2<f64>>,
    residual_max: f64,
    residual_sum: f64,
    radius_max: f64,
    samples: usize,
}

impl<'a> TvSlave<'a> {
    pub fn new(scn: &'a Scenario, design: &'a SlaveDesign) -> Result<Self, SimError> {
        Ok(Self {
            design,
            canon: canonical(scn)?,
            im: InternalModel::new(&scn.slave_plant, 2),
            obs: ReducedObserver::new(design.stabilizer.h.clone()),
            history: Vec::with_capacity(3),
            residual_max: 0.0,
            residual_sum: 0.0,
            radius_max: 0.0,
            samples: 0,
        })
    }

    pub fn design_alpha(&self, k: usize) -> [f64; 2] {
        self.design.alpha[k]
    }

    /// Exosystem coefficients at row `k` from the measured master coordinate
    /// history (one- and two-step lag); the design schedule fills the first
    /// two rows.
    pub fn lagged_alpha(&mut self, k: usize, m: f64, mode: AlphaMode) -> Result<[f64; 2], SimError> {
        let w = self.design.exo.state(m);
        if !(w.norm() >= crate::exosystem::MIN_L) {
            return Err(SimError::Assumption(format!("exosystem state vanishes at master coordinate {m}")));
        }
        if self.history.len() == 3 {
            self.history.remove(0);
        }
        self.history.push(w);
        if self.history.len() < 3 {
            return Ok(self.design.alpha[k.min(self.design.alpha.len() - 1)]);
        }
        let h = &self.history;
        let inc0 = Increment::between(&h[0], &h[1]);
        let inc1 = Increment::between(&h[1], &h[2]);
        Ok(match mode {
            AlphaMode::Frozen => alpha_frozen(&inc1),
            AlphaMode::TimeVarying { stall_tol } => alpha_time_varying(&inc0, &inc1, stall_tol),
        })
    }

    /// Control for one tick: `(u2, u_im, u_st)`.
    pub fn control(&mut self, alpha: [f64; 2], m: f64, e2: f64) -> Result<(f64, f64, f64), SimError> {
        let ops = build_convolution_ops(&alpha, self.canon)?;
        let sol = solve_sylvester(&ops)?;
        let radius = module2_radius(&sol.q);
        if !(radius < 1.0) {
            return Err(SimError::Synthesis(format!(
                "internal-model module 2 unstable (pole radius {radius:.6}) at master coordinate {m}"
            )));
        }
        self.residual_max = self.residual_max.max(sol.residual);
        self.residual_sum += sol.residual;
        self.radius_max = self.radius_max.max(radius);
        self.samples += 1;
        self.im.set_parameters(assemble_module2(&sol.q, &sol.p));
        let u_im = self.im.output();

        let sched = &self.design.stabilizer;
        let (lo, hi) = sched.grid.range();
        if !(lo..=hi).contains(&m) {
            return Err(SimError::Assumption(format!(
                "master coordinate {m} left the scheduled range [{lo}, {hi}]"
            )));
        }
        let sigma = sigma_weights(m, &sched.grid)?;
        let k = sched.gain_for(&sigma);
        let xb = self.obs.estimate(e2);
        let mut state = DVector::zeros(xb.len() + 1);
        state[0] = e2;
        state.rows_mut(1, xb.len()).copy_from(&xb);
        let u_st = k.dot(&state.transpose());
        let blocks = SplitBlocks::new(&augmented_a(&alpha, 2), &self.canon.h);
        self.obs.advance(&blocks, e2, u_st);

        let u2 = u_im + u_st;
        self.im.advance(u2);
        Ok((u2, u_im, u_st))
    }

    pub fn summary(&self) -> SlaveSynthesis {
        let s = &self.design.stabilizer;
        SlaveSynthesis {
            vertices: s.grid.vertices.clone(),
            gains: s.k.clone(),
            observer_gain: s.h.iter().copied().collect(),
            lmi_min_eigenvalue: s.margins.global_min,
            solver_margin: s.solver_margin,
            newton_steps: s.newton_steps,
            sylvester_max_residual: self.residual_max,
            sylvester_mean_residual: if self.samples > 0 { self.residual_sum / self.samples as f64 } else { 0.0 },
            module2_max_radius: self.radius_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_interpolates_and_clamps() {
        let coords = [2.0, 0.0, 1.0];
        let alpha = [[2.0, 20.0], [0.0, 0.0], [1.0, 10.0]];
        let f = alpha_lookup(&coords, &alpha);
        assert_eq!(f(0.5), vec![0.5, 5.0]);
        assert_eq!(f(-1.0), vec![0.0, 0.0]);
        assert_eq!(f(3.0), vec![2.0, 20.0]);
    }
}
