//! Scenario definitions: a flat key/value schema, the built-in contours and
//! the resolved runtime scenario.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use sha2::{Digest, Sha256};

use crate::contour_signals::{ContourKind, ContourSpec, Direction, SlaveFn};
use crate::exosystem::AlphaMode;
use crate::plant::{augment_order, printed_plants, stage_plants, to_observer_canonical, PlantDT};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MasterMode {
    /// `x1(t)` given analytically (plus the optional disturbance).
    Prescribed,
    /// PID on the master plant against the master reference.
    Tracked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlaveController {
    Tvimcc,
    Pid,
    Ccc,
}

impl SlaveController {
    pub fn name(self) -> &'static str {
        match self {
            SlaveController::Tvimcc => "tvimcc",
            SlaveController::Pid => "pid",
            SlaveController::Ccc => "ccc",
        }
    }

    pub const ALL: [SlaveController; 3] = [SlaveController::Pid, SlaveController::Ccc, SlaveController::Tvimcc];
}

impl FromStr for SlaveController {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tvimcc" => Ok(SlaveController::Tvimcc),
            "pid" => Ok(SlaveController::Pid),
            "ccc" => Ok(SlaveController::Ccc),
            _ => Err(format!("unknown controller '{s}' (expected tvimcc, pid or ccc)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantSource {
    /// Fitted continuous stage models discretized at `ts`.
    Fitted,
    /// The printed discrete matrices (only valid at `ts = 1e-4`).
    Printed,
    /// Discrete matrices from the `*.plant.*` keys.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 2.6, ki: 11.4, kd: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CccGains {
    pub kx: f64,
    pub ky: f64,
}

impl Default for CccGains {
    fn default() -> Self {
        Self { kx: 10.0, ky: 30.0 }
    }
}

/// Discrete plant given entry by entry (row-major `g`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CustomPlant {
    pub g: Option<Vec<f64>>,
    pub h: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
}

/// Everything that defines a run, in plain data. Every field is reachable
/// through a dotted key.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDef {
    pub name: String,
    pub contour: String,
    pub speed: f64,
    pub master_mode: MasterMode,
    pub disturbance_amplitude: f64,
    pub disturbance_frequency: f64,
    pub slave_controller: SlaveController,
    pub ts: f64,
    pub horizon: f64,
    pub seed: u64,
    pub plants: PlantSource,
    pub master_plant: CustomPlant,
    pub slave_plant: CustomPlant,
    pub pid: PidGains,
    pub master_pid: PidGains,
    pub ccc: CccGains,
    pub grid_n: usize,
    pub grid_pad: f64,
    pub observer_radius: f64,
    pub lmi_tau: f64,
    pub lmi_box: f64,
    pub alpha_mode: AlphaMode,
    pub metrics_window: f64,
    pub settle_threshold: f64,
    pub search_window: f64,
}

pub const CONTOURS: [&str; 5] = ["sinusoid", "circle", "heart", "four_axis", "zero"];
pub const BUILTIN: [&str; 4] = ["sinusoid", "circle", "heart", "four_axis"];

impl ScenarioDef {
    /// Defaults of a named contour.
    pub fn named(name: &str) -> Result<Self, SimError> {
        if !CONTOURS.contains(&name) {
            return Err(SimError::Config(format!(
                "unknown scenario '{name}' (expected one of {})",
                CONTOURS.join(", ")
            )));
        }
        Ok(Self {
            name: name.to_string(),
            contour: name.to_string(),
            speed: if name == "circle" { 2.0 } else { 1.0 },
            master_mode: MasterMode::Prescribed,
            disturbance_amplitude: if name == "sinusoid" { 0.1 } else { 0.0 },
            disturbance_frequency: 5.0,
            slave_controller: SlaveController::Tvimcc,
            ts: 1e-4,
            horizon: 20.0,
            seed: 0,
            plants: PlantSource::Fitted,
            master_plant: CustomPlant::default(),
            slave_plant: CustomPlant::default(),
            pid: PidGains::default(),
            master_pid: PidGains::default(),
            ccc: CccGains::default(),
            grid_n: 9,
            grid_pad: 0.05,
            observer_radius: 0.2,
            lmi_tau: 1e-8,
            lmi_box: 1e9,
            alpha_mode: AlphaMode::default(),
            metrics_window: 0.5,
            settle_threshold: 1e-6,
            search_window: 1.0,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        let bad = |what: &str| SimError::Config(format!("key '{key}': cannot parse '{value}' as {what}"));
        let num = || value.trim().parse::<f64>().map_err(|_| bad("a number"));
        let list = || parse_list(value).ok_or_else(|| bad("a list [a, b, ...]"));
        match key {
            // resets every other key to the scenario's defaults
            "scenario" => *self = Self::named(value.trim())?,
            "name" => self.name = value.trim().to_string(),
            "contour" => {
                let v = value.trim();
                if !CONTOURS.contains(&v) {
                    return Err(bad("a contour name"));
                }
                self.contour = v.to_string();
            }
            "contour.speed" => self.speed = num()?,
            "master_mode" => {
                self.master_mode = match value.trim() {
                    "prescribed" => MasterMode::Prescribed,
                    "tracked" => MasterMode::Tracked,
                    _ => return Err(bad("prescribed|tracked")),
                }
            }
            "master.disturbance.amplitude" => self.disturbance_amplitude = num()?,
            "master.disturbance.frequency" => self.disturbance_frequency = num()?,
            "slave_controller" => self.slave_controller = value.trim().parse().map_err(SimError::Config)?,
            "ts" | "Ts" => self.ts = num()?,
            "horizon" => self.horizon = num()?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad("an unsigned integer"))?,
            "plants" => {
                self.plants = match value.trim() {
                    "fitted" => PlantSource::Fitted,
                    "printed" => PlantSource::Printed,
                    "custom" => PlantSource::Custom,
                    _ => return Err(bad("fitted|printed|custom")),
                }
            }
            "master.plant.G" | "master.plant.H" | "master.plant.C" | "slave.plant.G" | "slave.plant.H"
            | "slave.plant.C" => {
                let v = list()?;
                let p = if key.starts_with("master") { &mut self.master_plant } else { &mut self.slave_plant };
                match key.as_bytes()[key.len() - 1] {
                    b'G' => p.g = Some(v),
                    b'H' => p.h = Some(v),
                    _ => p.c = Some(v),
                }
                self.plants = PlantSource::Custom;
            }
            "pid.kp" | "gains.kp" => self.pid.kp = num()?,
            "pid.ki" | "gains.ki" => self.pid.ki = num()?,
            "pid.kd" | "gains.kd" => self.pid.kd = num()?,
            "master.pid.kp" => self.master_pid.kp = num()?,
            "master.pid.ki" => self.master_pid.ki = num()?,
            "master.pid.kd" => self.master_pid.kd = num()?,
            "ccc.kx" => self.ccc.kx = num()?,
            "ccc.ky" => self.ccc.ky = num()?,
            "grid.n" => self.grid_n = value.trim().parse().map_err(|_| bad("an unsigned integer"))?,
            "grid.pad" => self.grid_pad = num()?,
            "observer.radius" => self.observer_radius = num()?,
            "lmi.tau" => self.lmi_tau = num()?,
            "lmi.box" => self.lmi_box = num()?,
            "alpha.mode" => {
                self.alpha_mode = match value.trim() {
                    "frozen" => AlphaMode::Frozen,
                    "time_varying" => AlphaMode::TimeVarying { stall_tol: self.stall_tol() },
                    _ => return Err(bad("frozen|time_varying")),
                }
            }
            "alpha.stall_tol" => {
                let v = num()?;
                if let AlphaMode::TimeVarying { stall_tol } = &mut self.alpha_mode {
                    *stall_tol = v;
                }
            }
            "metrics.window" => self.metrics_window = num()?,
            "metrics.settle_threshold" => self.settle_threshold = num()?,
            "metrics.search_window" => self.search_window = num()?,
            _ => return Err(SimError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn stall_tol(&self) -> f64 {
        match self.alpha_mode {
            AlphaMode::TimeVarying { stall_tol } => stall_tol,
            AlphaMode::Frozen => 1e-9,
        }
    }

    /// Canonical `key = value` listing (sorted by key).
    pub fn entries(&self) -> Vec<(String, String)> {
        let f = |v: f64| format!("{v:e}");
        let l = |v: &Option<Vec<f64>>| match v {
            None => "none".to_string(),
            Some(v) => format!("[{}]", v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ")),
        };
        let mut e = vec![
            ("name", self.name.clone()),
            ("contour", self.contour.clone()),
            ("contour.speed", f(self.speed)),
            (
                "master_mode",
                match self.master_mode {
                    MasterMode::Prescribed => "prescribed",
                    MasterMode::Tracked => "tracked",
                }
                .into(),
            ),
            ("master.disturbance.amplitude", f(self.disturbance_amplitude)),
            ("master.disturbance.frequency", f(self.disturbance_frequency)),
            ("slave_controller", self.slave_controller.name().into()),
            ("ts", f(self.ts)),
            ("horizon", f(self.horizon)),
            ("seed", self.seed.to_string()),
            (
                "plants",
                match self.plants {
                    PlantSource::Fitted => "fitted",
                    PlantSource::Printed => "printed",
                    PlantSource::Custom => "custom",
                }
                .into(),
            ),
            ("master.plant.G", l(&self.master_plant.g)),
            ("master.plant.H", l(&self.master_plant.h)),
            ("master.plant.C", l(&self.master_plant.c)),
            ("slave.plant.G", l(&self.slave_plant.g)),
            ("slave.plant.H", l(&self.slave_plant.h)),
            ("slave.plant.C", l(&self.slave_plant.c)),
            ("pid.kp", f(self.pid.kp)),
            ("pid.ki", f(self.pid.ki)),
            ("pid.kd", f(self.pid.kd)),
            ("master.pid.kp", f(self.master_pid.kp)),
            ("master.pid.ki", f(self.master_pid.ki)),
            ("master.pid.kd", f(self.master_pid.kd)),
            ("ccc.kx", f(self.ccc.kx)),
            ("ccc.ky", f(self.ccc.ky)),
            ("grid.n", self.grid_n.to_string()),
            ("grid.pad", f(self.grid_pad)),
            ("observer.radius", f(self.observer_radius)),
            ("lmi.tau", f(self.lmi_tau)),
            ("lmi.box", f(self.lmi_box)),
            (
                "alpha.mode",
                match self.alpha_mode {
                    AlphaMode::Frozen => "frozen",
                    AlphaMode::TimeVarying { .. } => "time_varying",
                }
                .into(),
            ),
            ("alpha.stall_tol", f(self.stall_tol())),
            ("metrics.window", f(self.metrics_window)),
            ("metrics.settle_threshold", f(self.settle_threshold)),
            ("metrics.search_window", f(self.search_window)),
        ];
        e.sort_by(|a, b| a.0.cmp(b.0));
        e.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn listing(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical listing, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.listing().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Number of steps after the initial sample.
    pub fn steps(&self) -> usize {
        (self.horizon / self.ts + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let cfg = |m: String| Err(SimError::Config(m));
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return cfg(format!("ts must be positive, got {}", self.ts));
        }
        if !(self.horizon >= 100.0 * self.ts) || !self.horizon.is_finite() {
            return cfg(format!("horizon {} shorter than 100 samples", self.horizon));
        }
        if !(self.speed > 0.0) {
            return cfg("contour.speed must be positive".into());
        }
        if self.grid_n < 2 {
            return cfg("grid.n must be at least 2".into());
        }
        if !(self.grid_pad >= 0.0) {
            return cfg("grid.pad must be non-negative".into());
        }
        if !(self.observer_radius.abs() < 1.0) {
            return cfg("observer.radius must lie inside the unit circle".into());
        }
        if !(self.lmi_tau > 0.0 && self.lmi_box > 0.0) {
            return cfg("lmi.tau and lmi.box must be positive".into());
        }
        if !(self.metrics_window > 0.0 && self.metrics_window <= 1.0) {
            return cfg("metrics.window must lie in (0, 1]".into());
        }
        if !(self.search_window > 0.0) {
            return cfg("metrics.search_window must be positive".into());
        }
        Ok(())
    }
}

fn parse_list(v: &str) -> Option<Vec<f64>> {
    let v = v.trim();
    let inner = v.strip_prefix('[')?.strip_suffix(']')?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    inner.split(',').map(|x| x.trim().parse().ok()).collect()
}

/// The four built-in scenarios with default settings.
pub fn builtin_scenarios() -> Vec<ScenarioDef> {
    BUILTIN.iter().map(|n| ScenarioDef::named(n).expect("built-in name")).collect()
}

/// Contour of a named scenario, with the master coordinate running at
/// `speed` per second.
pub fn builtin_contour(name: &str, speed: f64) -> Option<ContourSpec> {
    let rot = ContourKind::Rotational { amplitude: Some(1.0), direction: Direction::Increasing };
    let param = Arc::new(move |t: f64| speed * t);
    let spec = match name {
        "sinusoid" => ContourSpec {
            name: name.into(),
            kind: ContourKind::Monotonic,
            param_ref: param,
            slaves: vec![SlaveFn::new(f64::sin, f64::cos)],
            composition: None,
            singular: None,
        },
        "zero" => ContourSpec {
            name: name.into(),
            kind: ContourKind::Monotonic,
            param_ref: param,
            slaves: vec![SlaveFn::new(|_| 0.0, |_| 0.0)],
            composition: None,
            singular: None,
        },
        "circle" => ContourSpec {
            name: name.into(),
            kind: rot,
            param_ref: param,
            slaves: vec![SlaveFn::new(f64::sin, f64::cos)],
            composition: None,
            singular: None,
        },
        "heart" => ContourSpec {
            name: name.into(),
            kind: rot,
            param_ref: param,
            slaves: vec![SlaveFn::new(
                |th: f64| th.sin() + th.cos().abs().powf(2.0 / 3.0),
                |th: f64| {
                    let c = th.cos();
                    th.cos() - (2.0 / 3.0) * c.signum() * c.abs().powf(-1.0 / 3.0) * th.sin()
                },
            )],
            composition: None,
            singular: Some(Arc::new(|th: f64| th.cos().abs() < 1e-3)),
        },
        "four_axis" => ContourSpec {
            name: name.into(),
            kind: rot,
            param_ref: param,
            slaves: vec![
                SlaveFn::new(f64::sin, f64::cos),
                SlaveFn::new(|th: f64| 0.1 * (10.0 * th).cos(), |th: f64| -(10.0 * th).sin()),
                SlaveFn::new(|th: f64| 0.1 * (10.0 * th).sin(), |th: f64| (10.0 * th).cos()),
            ],
            composition: Some(DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0])),
            singular: None,
        },
        _ => return None,
    };
    Some(spec)
}

/// A definition resolved into contour and plants.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub def: ScenarioDef,
    pub contour: ContourSpec,
    pub master_plant: PlantDT,
    /// Shared by every slave axis; carries its observer canonical form.
    pub slave_plant: PlantDT,
}

impl Scenario {
    pub fn build(def: ScenarioDef) -> Result<Self, SimError> {
        def.validate()?;
        let contour = builtin_contour(&def.contour, def.speed)
            .ok_or_else(|| SimError::Config(format!("unknown contour '{}'", def.contour)))?;
        let (master, slave) = match def.plants {
            PlantSource::Fitted => stage_plants(def.ts)?,
            PlantSource::Printed => {
                if (def.ts - 1e-4).abs() > 1e-15 {
                    return Err(SimError::Config(format!(
                        "printed plants are sampled at ts = 1e-4, scenario has ts = {}",
                        def.ts
                    )));
                }
                printed_plants()
            }
            PlantSource::Custom => {
                let (fm, fs) = stage_plants(def.ts)?;
                (custom_plant(&def.master_plant, fm, def.ts, "master")?, custom_plant(&def.slave_plant, fs, def.ts, "slave")?)
            }
        };
        let slave = fit_order(&slave)?;
        let slave = to_observer_canonical(&slave)?;
        Ok(Self { def, contour, master_plant: master, slave_plant: slave })
    }

    pub fn steps(&self) -> usize {
        self.def.steps()
    }

    /// Master coordinate `param_ref(t) + d_a(t)`.
    pub fn master_param(&self, t: f64) -> f64 {
        (self.contour.param_ref)(t) + self.disturbance(t)
    }

    pub fn disturbance(&self, t: f64) -> f64 {
        self.def.disturbance_amplitude * (self.def.disturbance_frequency * t).sin()
    }
}

fn custom_plant(p: &CustomPlant, fallback: PlantDT, ts: f64, which: &str) -> Result<PlantDT, SimError> {
    let (g, h) = match (&p.g, &p.h) {
        (None, None) => return Ok(fallback),
        (Some(g), Some(h)) => (g, h),
        _ => return Err(SimError::Config(format!("{which}.plant needs both G and H"))),
    };
    let n = h.len();
    if n == 0 || g.len() != n * n {
        return Err(SimError::Config(format!("{which}.plant.G must hold {} entries for an order-{n} plant", n * n)));
    }
    let c = match &p.c {
        Some(c) => c.clone(),
        None => {
            let mut c = vec![0.0; n];
            c[0] = 1.0;
            c
        }
    };
    PlantDT::new(DMatrix::from_row_slice(n, n, g), DVector::from_vec(h.clone()), RowDVector::from_vec(c), ts)
        .map_err(Into::into)
}

/// The internal model is built for second-order exosystems; lower-order
/// slaves are padded with a pole at the origin.
fn fit_order(p: &PlantDT) -> Result<PlantDT, SimError> {
    match p.order() {
        2 => Ok(p.clone()),
        1 => Ok(augment_order(p, 2, 0.0)?),
        n => Err(SimError::Config(format!("slave plant order {n} unsupported (second-order exosystem)"))),
    }
}
