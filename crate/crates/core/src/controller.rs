//! Power solutions as latched state machines over the storage voltage.
//!
//! * UVLO: the regulator's own two-threshold lockout. Only `PStart` and
//!   `PClose` exist; a running node is always in task operation.
//! * PID: a continuously observing comparator adds `PGood`/`PSleep` edges.
//! * APC: the same two software thresholds, but evaluated only at ADC
//!   sampling instants `boot + k/fs`, each sample costing `e_adc`.
//!
//! Rising thresholds compare with `>=`, falling ones with `<`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::powerchain::RegulatorModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub v_pstart: f64,
    pub v_pgood: f64,
    pub v_psleep: f64,
    pub v_pclose: f64,
}

impl Thresholds {
    /// Degenerate four-threshold form of a plain UVLO regulator.
    pub fn uvlo(v_pstart: f64, v_pclose: f64) -> Self {
        Self {
            v_pstart,
            v_pgood: v_pstart,
            v_psleep: v_pclose,
            v_pclose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.v_pstart, self.v_pgood, self.v_psleep, self.v_pclose];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SimError::Domain("all thresholds must be > 0".into()));
        }
        if !(self.v_pclose <= self.v_psleep && self.v_psleep <= self.v_pgood) {
            return Err(SimError::Domain(format!(
                "need v_pclose <= v_psleep <= v_pgood, got {} / {} / {}",
                self.v_pclose, self.v_psleep, self.v_pgood
            )));
        }
        if !(self.v_pclose < self.v_pstart) {
            return Err(SimError::Domain(format!(
                "need v_pclose < v_pstart, got {} / {}",
                self.v_pclose, self.v_pstart
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Uvlo,
    Pid,
    Apc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionConfig {
    pub kind: SolutionKind,
    pub thresholds: Thresholds,
    /// ADC polling frequency (APC only).
    #[serde(default)]
    pub fs: f64,
    /// Energy per ADC sample (APC only).
    #[serde(default)]
    pub e_adc: f64,
    /// Comparator or base monitoring draw while the node is powered.
    #[serde(default)]
    pub monitor_power: f64,
    /// APC software threshold for resuming unfinished work after a checkpoint
    /// without a full shutdown. Defaults to `v_pgood`.
    #[serde(default)]
    pub v_resume: Option<f64>,
}

/// Polling base: 27.65 µW at 0.5 Hz minus 0.5 Hz × 1.29 µJ.
pub const APC_BASE_POWER: f64 = 27.005e-6;
/// Energy of one ADC sample.
pub const APC_E_ADC: f64 = 1.29e-6;
/// Comparator draw on top of the regulator: PID 28.0 µW minus UVLO 5.0 µW.
pub const PID_MONITOR_POWER: f64 = 23.0e-6;
/// UVLO regulator static draw.
pub const UVLO_STATIC_POWER: f64 = 5.0e-6;

impl SolutionConfig {
    pub fn uvlo(v_pstart: f64, v_pclose: f64) -> Self {
        Self {
            kind: SolutionKind::Uvlo,
            thresholds: Thresholds::uvlo(v_pstart, v_pclose),
            fs: 0.0,
            e_adc: 0.0,
            monitor_power: 0.0,
            v_resume: None,
        }
    }

    pub fn pid(thresholds: Thresholds) -> Self {
        Self {
            kind: SolutionKind::Pid,
            thresholds,
            fs: 0.0,
            e_adc: 0.0,
            monitor_power: PID_MONITOR_POWER,
            v_resume: None,
        }
    }

    pub fn apc(thresholds: Thresholds, fs: f64) -> Self {
        Self {
            kind: SolutionKind::Apc,
            thresholds,
            fs,
            e_adc: APC_E_ADC,
            monitor_power: 0.0,
            v_resume: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        let th = &self.thresholds;
        if self.kind == SolutionKind::Uvlo && (th.v_pgood != th.v_pstart || th.v_psleep != th.v_pclose) {
            return Err(SimError::Domain(
                "uvlo requires v_pgood = v_pstart and v_psleep = v_pclose".into(),
            ));
        }
        if self.kind == SolutionKind::Apc {
            if !(self.fs > 0.0) || !self.fs.is_finite() {
                return Err(SimError::Domain(format!("apc requires fs > 0, got {}", self.fs)));
            }
            if !(self.e_adc >= 0.0) {
                return Err(SimError::Domain(format!("e_adc must be >= 0, got {}", self.e_adc)));
            }
        }
        if !(self.monitor_power >= 0.0) {
            return Err(SimError::Domain("monitor_power must be >= 0".into()));
        }
        if let Some(v) = self.v_resume {
            if self.kind != SolutionKind::Apc {
                return Err(SimError::Domain("v_resume applies to apc only".into()));
            }
            if !(v >= th.v_psleep) {
                return Err(SimError::Domain(format!(
                    "v_resume {v} must be >= v_psleep {}",
                    th.v_psleep
                )));
            }
        }
        Ok(())
    }

    fn samples_continuously(&self) -> bool {
        self.kind == SolutionKind::Pid
    }

    fn resume_threshold(&self) -> f64 {
        self.v_resume.unwrap_or(self.thresholds.v_pgood)
    }
}

/// `fs·E_adc + P_monitor + P_quiescent`. Leakage is voltage dependent and is
/// accounted by the capacitor model instead.
pub fn static_power(config: &SolutionConfig, reg: &RegulatorModel) -> f64 {
    let polling = if config.kind == SolutionKind::Apc {
        config.fs * config.e_adc
    } else {
        0.0
    };
    polling + config.monitor_power + reg.p_quiescent
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    ColdStart,
    BuildUp,
    TaskOperation,
    Checkpoint,
    Shutdown,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ColdStart => "cold_start",
            Phase::BuildUp => "build_up",
            Phase::TaskOperation => "task_operation",
            Phase::Checkpoint => "checkpoint",
            Phase::Shutdown => "shutdown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalKind {
    PStart,
    PGood,
    PSleep,
    PClose,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::PStart => "PStart",
            SignalKind::PGood => "PGood",
            SignalKind::PSleep => "PSleep",
            SignalKind::PClose => "PClose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySignal {
    pub kind: SignalKind,
    pub t: f64,
}

/// Latched controller state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState {
    pub powered: bool,
    pub good: bool,
    /// `PSleep` seen since the last `PGood`.
    pub sleeping: bool,
    pub started_since_depletion: bool,
    /// The node has unfinished checkpointed work, so `v_resume` applies.
    pub resume_enabled: bool,
    /// Most recent APC reading since power-up.
    pub last_sample: Option<f64>,
    boot_t: f64,
    next_sample: u64,
}

impl ControllerState {
    pub fn phase(&self, kind: SolutionKind) -> Phase {
        if !self.powered {
            return if self.started_since_depletion {
                Phase::Shutdown
            } else {
                Phase::ColdStart
            };
        }
        if kind == SolutionKind::Uvlo || self.good {
            Phase::TaskOperation
        } else if self.sleeping {
            Phase::Checkpoint
        } else {
            Phase::BuildUp
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub signals: Vec<EnergySignal>,
    /// Energy drawn by monitoring hardware during this step.
    pub monitoring_energy: f64,
    /// An APC sample was taken in this step.
    pub sampled: bool,
}

#[derive(Debug, Clone)]
pub struct Controller {
    config: SolutionConfig,
    state: ControllerState,
}

impl Controller {
    pub fn new(config: SolutionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: ControllerState::default(),
        })
    }

    pub fn config(&self) -> &SolutionConfig {
        &self.config
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase(self.config.kind)
    }

    /// Tells an APC controller whether unfinished work may resume at
    /// `v_resume`; otherwise recovery needs `v_pgood`.
    pub fn set_resume_enabled(&mut self, on: bool) {
        self.state.resume_enabled = on;
    }

    /// Software gives up the task-operation latch and waits for the next
    /// `PGood`, raising its own `PSleep`. Only APC thresholds live in
    /// software; others ignore this.
    pub fn release(&mut self, t: f64) -> Option<EnergySignal> {
        if self.config.kind == SolutionKind::Apc && self.state.good {
            self.state.good = false;
            self.state.sleeping = true;
            Some(EnergySignal {
                kind: SignalKind::PSleep,
                t,
            })
        } else {
            None
        }
    }

    /// Observes the storage voltage `v` at step time `t` (step length `dt`).
    pub fn step(&mut self, v: f64, t: f64, dt: f64) -> StepOutput {
        let cfg = self.config;
        let th = cfg.thresholds;
        let st = &mut self.state;
        let mut out = StepOutput::default();
        let mut emit = |kind| out.signals.push(EnergySignal { kind, t });

        if !st.powered {
            if v <= 0.0 {
                st.started_since_depletion = false;
            }
            if v >= th.v_pstart {
                st.powered = true;
                st.started_since_depletion = true;
                st.good = false;
                st.sleeping = false;
                st.boot_t = t;
                st.next_sample = 1;
                st.last_sample = None;
                emit(SignalKind::PStart);
            } else {
                return out;
            }
        }

        let observe = match cfg.kind {
            SolutionKind::Uvlo => false,
            SolutionKind::Pid => true,
            SolutionKind::Apc => {
                let period = 1.0 / cfg.fs;
                let due = st.boot_t + st.next_sample as f64 * period;
                if t + 1e-9 * period >= due {
                    // Samples missed by a coarse step collapse into one.
                    let behind = ((t - st.boot_t) / period + 1e-9).floor() as u64;
                    st.next_sample = behind.max(st.next_sample) + 1;
                    out.sampled = true;
                    st.last_sample = Some(v);
                    true
                } else {
                    false
                }
            }
        };
        if observe {
            if st.good {
                if v < th.v_psleep {
                    st.good = false;
                    st.sleeping = true;
                    emit(SignalKind::PSleep);
                }
            } else {
                let rise = if st.sleeping && st.resume_enabled && !cfg.samples_continuously() {
                    cfg.resume_threshold()
                } else {
                    th.v_pgood
                };
                if v >= rise {
                    st.good = true;
                    st.sleeping = false;
                    emit(SignalKind::PGood);
                }
            }
        }

        if v < th.v_pclose {
            st.powered = false;
            st.good = false;
            st.sleeping = false;
            emit(SignalKind::PClose);
        }

        // Energy is charged for the step the node was powered at its start.
        out.monitoring_energy = cfg.monitor_power * dt;
        if out.sampled {
            out.monitoring_energy += cfg.e_adc;
        }
        out
    }
}

/// Stateless wrapper matching the step-function view of the controller.
pub fn controller_step(
    controller: &Controller,
    v: f64,
    t: f64,
    dt: f64,
) -> (Controller, StepOutput) {
    let mut next = controller.clone();
    let out = next.step(v, t, dt);
    (next, out)
}

pub fn classify_phase(controller: &Controller) -> Phase {
    controller.phase()
}
