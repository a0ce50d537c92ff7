//! Fixed-step closed-loop simulation of master and slave axes under TV-IMCC
//! or one of the baselines.

pub mod baselines;
pub mod geometry;
pub mod scenario;
pub mod trace;
pub mod tvimcc;

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::contour_signals::{check_assumptions_on, ContourError, ContourKind, UnwrapState};
use crate::exosystem::ExosystemError;
use crate::internal_model::InternalModelError;
use crate::plant::PlantError;
use crate::stabilizer::StabilizerError;

pub use baselines::{ccc_step, pid_step, PidState};
pub use geometry::{contour_error, ContourLocator};
pub use scenario::{builtin_scenarios, MasterMode, Scenario, ScenarioDef, SlaveController};
pub use trace::{ContourMetrics, SimulationTrace, SlaveTrace};
pub use tvimcc::{design_slave, SlaveDesign, TvSlave};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("synthesis failure: {0}")]
    Synthesis(String),
    #[error("assumption failure: {0}")]
    Assumption(String),
}

impl From<PlantError> for SimError {
    fn from(e: PlantError) -> Self {
        SimError::Config(e.to_string())
    }
}

impl From<ContourError> for SimError {
    fn from(e: ContourError) -> Self {
        SimError::Assumption(e.to_string())
    }
}

impl From<ExosystemError> for SimError {
    fn from(e: ExosystemError) -> Self {
        SimError::Assumption(e.to_string())
    }
}

impl From<InternalModelError> for SimError {
    fn from(e: InternalModelError) -> Self {
        SimError::Synthesis(e.to_string())
    }
}

impl From<StabilizerError> for SimError {
    fn from(e: StabilizerError) -> Self {
        match e {
            StabilizerError::BadGrid(m) => SimError::Config(m),
            other => SimError::Synthesis(other.to_string()),
        }
    }
}

/// Master coordinates of sampled master positions (unwrapped angle for
/// rotational contours).
pub fn master_coordinates(scn: &Scenario, x1: &[f64]) -> Result<Vec<f64>, SimError> {
    match scn.contour.kind {
        ContourKind::Monotonic => Ok(x1.to_vec()),
        ContourKind::Rotational { direction, .. } => {
            let mut st = UnwrapState::new(scn.contour.amplitude(), direction);
            x1.iter().map(|&x| st.push(x).map_err(SimError::from)).collect()
        }
    }
}

/// Design trajectory for rows `0..=K+2`: the prescribed master positions,
/// or the master reference in tracked mode.
pub fn design_positions(scn: &Scenario) -> Vec<f64> {
    let ts = scn.def.ts;
    (0..scn.steps() + 3)
        .map(|k| {
            let t = k as f64 * ts;
            match scn.def.master_mode {
                MasterMode::Prescribed => scn.contour.master_position(scn.master_param(t)),
                MasterMode::Tracked => scn.contour.master_ref(t),
            }
        })
        .collect()
}

/// Stabilizer designs for every slave along the design trajectory.
pub fn design_all(scn: &Scenario) -> Result<Vec<SlaveDesign>, SimError> {
    let x1 = design_positions(scn);
    let report = check_assumptions_on(&scn.contour, &x1);
    if !report.passed() {
        return Err(SimError::Assumption(report.detail.unwrap_or_else(|| "contour assumptions violated".into())));
    }
    let coords = master_coordinates(scn, &x1)?;
    (0..scn.contour.slaves.len()).map(|j| design_slave(scn, j, &coords)).collect()
}

fn tangent_angle(scn: &Scenario, m: f64) -> f64 {
    let t = scn.contour.curve_tangent(m).unwrap_or_else(|| {
        let d = 1e-6;
        let (a, b) = (scn.contour.curve_point(m + d), scn.contour.curve_point(m - d));
        a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * d)).collect()
    });
    t[1].atan2(t[0])
}

/// Run one scenario from zero initial states.
pub fn run_closed_loop(scn: &Scenario) -> Result<SimulationTrace, SimError> {
    let def = &scn.def;
    let ts = def.ts;
    let rows = scn.steps() + 1;
    let ns = scn.contour.slaves.len();
    let controller = def.slave_controller;
    let contour = &scn.contour;

    let design_x1 = design_positions(scn);
    let design_coords = master_coordinates(scn, &design_x1)?;
    let designs = match controller {
        SlaveController::Tvimcc => design_all(scn)?,
        _ => Vec::new(),
    };
    let mut tv: Vec<TvSlave> = designs.iter().map(|d| TvSlave::new(scn, d)).collect::<Result<_, _>>()?;

    if controller == SlaveController::Ccc && contour.curve_point(0.0).len() != 2 {
        return Err(SimError::Config("ccc needs a planar contour".into()));
    }
    let comp = contour.composition.clone().unwrap_or_else(|| nalgebra::DMatrix::identity(ns + 1, ns + 1));

    let lo = design_coords.iter().copied().fold(f64::INFINITY, f64::min) - def.search_window;
    let hi = design_coords.iter().copied().fold(f64::NEG_INFINITY, f64::max) + def.search_window;
    let max_step = design_coords.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let h = if max_step > 0.0 { max_step.min(1e-3).max((hi - lo) / 4e6) } else { 1e-3 };
    let locator = ContourLocator::new(contour, (lo, hi), h, def.search_window);

    let mut trace = SimulationTrace {
        meta: trace::TraceMeta {
            scenario: def.name.clone(),
            controller: controller.name().into(),
            hash: def.hash(),
            ts,
            synthesis: Vec::new(),
        },
        x1_ref: Vec::with_capacity(rows),
        x1: Vec::with_capacity(rows),
        slaves: vec![SlaveTrace::with_capacity(rows); ns],
        contour_error: Vec::with_capacity(rows),
        excluded: Vec::with_capacity(rows),
    };

    let n2 = scn.slave_plant.order();
    let mut xs = vec![DVector::zeros(n2); ns];
    let mut xm = DVector::zeros(scn.master_plant.order());
    let mut pids = vec![PidState::default(); ns];
    let mut master_pid = PidState::default();
    let mut unwrap = UnwrapState::new(contour.amplitude(), match contour.kind {
        ContourKind::Rotational { direction, .. } => direction,
        ContourKind::Monotonic => crate::contour_signals::Direction::Increasing,
    });
    let mut ys = vec![0.0; ns];
    let mut u = vec![0.0; ns];

    for k in 0..rows {
        let t = k as f64 * ts;
        let x1_ref = contour.master_ref(t);
        let (x1, m) = match def.master_mode {
            MasterMode::Prescribed => (design_x1[k], design_coords[k]),
            MasterMode::Tracked => {
                let x1 = scn.master_plant.output(&xm) + scn.disturbance(t);
                let m = if contour.is_rotational() { unwrap.push(x1)? } else { x1 };
                (x1, m)
            }
        };
        let m_ref = (contour.param_ref)(t);
        let ref_axes = contour.axis_positions(m_ref);
        for j in 0..ns {
            ys[j] = scn.slave_plant.output(&xs[j]);
        }

        let mut master_corr = 0.0;
        match controller {
            SlaveController::Tvimcc => {
                for j in 0..ns {
                    let alpha = match def.master_mode {
                        MasterMode::Prescribed => tv[j].design_alpha(k),
                        MasterMode::Tracked => tv[j].lagged_alpha(k, m, def.alpha_mode)?,
                    };
                    let r = (contour.slaves[j].f)(m);
                    let (u2, u_im, u_st) = tv[j].control(alpha, m, ys[j] - r)?;
                    u[j] = u2;
                    trace.slaves[j].push(r, ys[j], u2, u_im, u_st);
                }
            }
            SlaveController::Pid | SlaveController::Ccc => {
                let mut corr = vec![0.0; ns + 1];
                if controller == SlaveController::Ccc {
                    let mut actual = vec![x1];
                    actual.extend_from_slice(&ys);
                    let e_axes: Vec<f64> = ref_axes.iter().zip(&actual).map(|(r, a)| r - a).collect();
                    let e = contour.compose(&e_axes);
                    let (dx, dy) = ccc_step(e[0], e[1], tangent_angle(scn, m_ref), &def.ccc);
                    for (a, c) in corr.iter_mut().enumerate() {
                        *c = comp[(0, a)] * dx + comp[(1, a)] * dy;
                    }
                }
                master_corr = corr[0];
                for j in 0..ns {
                    let r = ref_axes[j + 1];
                    let u2 = pid_step(&mut pids[j], r - ys[j], ts, &def.pid) + corr[j + 1];
                    u[j] = u2;
                    trace.slaves[j].push(r, ys[j], u2, 0.0, 0.0);
                }
            }
        }

        let mut actual = vec![x1];
        actual.extend_from_slice(&ys);
        let point = contour.compose(&actual);
        trace.contour_error.push(locator.distance(&point, m));
        trace.excluded.push(contour.is_singular(m));
        trace.x1_ref.push(x1_ref);
        trace.x1.push(x1);

        for j in 0..ns {
            xs[j] = scn.slave_plant.step(&xs[j], u[j]);
        }
        if def.master_mode == MasterMode::Tracked {
            let um = pid_step(&mut master_pid, x1_ref - (x1 - scn.disturbance(t)), ts, &def.master_pid) + master_corr;
            xm = scn.master_plant.step(&xm, um);
        }
    }
    trace.meta.synthesis = tv.iter().map(TvSlave::summary).collect();
    Ok(trace)
}

/// Build and run each definition on a pool of `threads` workers (rayon's
/// default when `None`). Results keep the input order.
pub fn sweep(defs: &[ScenarioDef], threads: Option<usize>) -> Vec<Result<SimulationTrace, SimError>> {
    let run = |d: &ScenarioDef| Scenario::build(d.clone()).and_then(|s| run_closed_loop(&s));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    match builder.build() {
        Ok(pool) => pool.install(|| defs.par_iter().map(run).collect()),
        Err(_) => defs.iter().map(run).collect(),
    }
}

/// Worker cap from `CONTOUR_IMC_THREADS`.
pub fn threads_from_env() -> Result<Option<usize>, SimError> {
    match std::env::var("CONTOUR_IMC_THREADS") {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(SimError::Config(format!("CONTOUR_IMC_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}
