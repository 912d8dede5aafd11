//! Scenario description: the JSON file schema, its validation, and the
//! built-in named scenarios. All quantities are SI base units.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{SolutionConfig, SolutionKind, Thresholds, APC_BASE_POWER, APC_E_ADC};
use crate::error::{Result, SimError};
use crate::powerchain::{RegulatorKind, RegulatorModel, DEFAULT_V_MAX};
use crate::runtime::NvStore;
use crate::sizing::{derive_apc_thresholds, voltage_for_energy};
use crate::trace::{load_trace, ExcitationSpec, PowerTrace};
use crate::workload::{
    beacon_workload, builtin_library, camera_stream_workload, periodic_beacon_workload,
    sense_transmit_workload, ImageStreamSpec, Repeat, TaskLibrary, WorkloadProgram,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorParams {
    pub capacitance: f64,
    #[serde(default)]
    pub initial_voltage: f64,
    #[serde(default)]
    pub r_leak: Option<f64>,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

fn default_v_max() -> f64 {
    DEFAULT_V_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFile {
    pub path: PathBuf,
    /// Multiplier applied to the power column.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProgramSpec {
    Beacon,
    PeriodicBeacon {
        period: f64,
    },
    SenseTransmit {
        sensor: String,
        radio: String,
    },
    Camera {
        #[serde(default = "cam_rows")]
        rows: usize,
        #[serde(default = "cam_cols")]
        cols: usize,
        #[serde(default = "cam_payload")]
        payload_bytes: usize,
    },
}

fn cam_rows() -> usize {
    121
}
fn cam_cols() -> usize {
    162
}
fn cam_payload() -> usize {
    240
}

/// Workload selector plus per-scenario overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub program: ProgramSpec,
    /// Library op run at every power-up.
    #[serde(default)]
    pub boot: Option<String>,
    #[serde(default)]
    pub sleep_power: Option<f64>,
    #[serde(default)]
    pub idle_power: Option<f64>,
    #[serde(default)]
    pub repeat: Option<Repeat>,
    #[serde(default)]
    pub max_iterations: Option<u64>,
    #[serde(default)]
    pub checkpoint_bytes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpOverride {
    pub energy: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dt: f64,
    pub duration: f64,
    /// Reserved for stochastic traces; current generators ignore it.
    #[serde(default)]
    pub seed: u64,
    /// Synthetic excitation; ignored when `trace_file` is given.
    #[serde(default)]
    pub trace: Option<ExcitationSpec>,
    #[serde(default)]
    pub trace_file: Option<TraceFile>,
    pub capacitor: CapacitorParams,
    pub regulator: RegulatorModel,
    pub solution: SolutionConfig,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub nv: NvStore,
    #[serde(default)]
    pub library: BTreeMap<String, OpOverride>,
}

/// One schema violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Input power source resolved from a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    Synthetic(ExcitationSpec),
    Recorded(PowerTrace),
}

impl TraceSource {
    /// Time span over which the source is defined.
    pub fn span(&self) -> f64 {
        match self {
            TraceSource::Synthetic(_) => f64::INFINITY,
            TraceSource::Recorded(t) => t.duration(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SimError::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut s = Self::from_json(&text)?;
        // Relative trace files resolve against the scenario's directory.
        if let (Some(tf), Some(dir)) = (s.trace_file.as_mut(), path.parent()) {
            if tf.path.is_relative() {
                tf.path = dir.join(&tf.path);
            }
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn library(&self) -> Result<TaskLibrary> {
        let mut lib = builtin_library();
        for (name, o) in &self.library {
            lib = lib.with_override(name, o.energy, o.duration)?;
        }
        Ok(lib)
    }

    pub fn build_workload(&self) -> Result<WorkloadProgram> {
        let lib = self.library()?;
        let w = &self.workload;
        let mut p = match &w.program {
            ProgramSpec::Beacon => beacon_workload(&lib)?,
            ProgramSpec::PeriodicBeacon { period } => periodic_beacon_workload(
                &lib,
                *period,
                w.checkpoint_bytes.unwrap_or(crate::workload::DEFAULT_CHECKPOINT_BYTES),
            )?,
            ProgramSpec::SenseTransmit { sensor, radio } => sense_transmit_workload(&lib, sensor, radio)?,
            ProgramSpec::Camera {
                rows,
                cols,
                payload_bytes,
            } => {
                let mut spec = ImageStreamSpec::grayscale_camera(&lib)?;
                spec.rows = *rows;
                spec.cols = *cols;
                spec.payload_bytes = *payload_bytes;
                if spec.payload_bytes == 0 || spec.image_bytes() == 0 {
                    return Err(SimError::Domain("image and payload sizes must be > 0".into()));
                }
                let stream = lib.op("ble_image_stream")?;
                let n = spec.packet_count() as f64;
                spec.per_packet.energy = stream.energy / n;
                spec.per_packet.duration = stream.duration / n;
                camera_stream_workload(&spec)?
            }
        };
        if let Some(name) = &w.boot {
            p.boot = Some(lib.op(name)?);
        }
        if let Some(v) = w.sleep_power {
            p.sleep_power = v;
            p.idle_power = v;
        }
        if let Some(v) = w.idle_power {
            p.idle_power = v;
        }
        if let Some(r) = w.repeat {
            p.repeat = r;
        }
        if w.max_iterations.is_some() {
            p.max_iterations = w.max_iterations;
        }
        if let Some(b) = w.checkpoint_bytes {
            p.checkpoint_bytes = b;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn trace_source(&self) -> Result<TraceSource> {
        match (&self.trace_file, &self.trace) {
            (Some(tf), _) => Ok(TraceSource::Recorded(load_trace(&tf.path, tf.scale)?)),
            (None, Some(spec)) => {
                spec.validate()?;
                Ok(TraceSource::Synthetic(spec.clone()))
            }
            (None, None) => Err(SimError::config("trace", "either trace or trace_file is required")),
        }
    }

    /// Every schema violation, each tagged with the field path.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |path: &str, message: String| {
            out.push(Diagnostic {
                path: path.into(),
                message,
            })
        };
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            push("dt", format!("must be > 0, got {}", self.dt));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            push("duration", format!("must be > 0, got {}", self.duration));
        } else if self.dt > 0.0 && self.dt >= self.duration {
            push("dt", format!("must be smaller than duration {}", self.duration));
        }
        match (&self.trace, &self.trace_file) {
            (None, None) => push("trace", "either trace or trace_file is required".into()),
            (Some(spec), None) => {
                if let Err(e) = spec.validate() {
                    push("trace", e.to_string());
                }
            }
            (_, Some(tf)) => {
                if !(tf.scale >= 0.0) {
                    push("trace_file.scale", format!("must be >= 0, got {}", tf.scale));
                }
            }
        }
        let c = &self.capacitor;
        if !(c.capacitance > 0.0) || !c.capacitance.is_finite() {
            push("capacitor.capacitance", format!("must be > 0, got {}", c.capacitance));
        }
        if !(c.v_max > 0.0) {
            push("capacitor.v_max", format!("must be > 0, got {}", c.v_max));
        }
        if !(c.initial_voltage >= 0.0 && c.initial_voltage <= c.v_max) {
            push(
                "capacitor.initial_voltage",
                format!("must be within [0, v_max], got {}", c.initial_voltage),
            );
        }
        if let Some(r) = c.r_leak {
            if !(r > 0.0) {
                push("capacitor.r_leak", format!("must be > 0, got {r}"));
            }
        }
        if let Err(e) = self.regulator.validate() {
            push("regulator", e.to_string());
        }
        let s = &self.solution;
        if let Err(e) = s.thresholds.validate() {
            push("solution.thresholds", e.to_string());
        } else if let Err(e) = s.validate() {
            let path = if s.kind == SolutionKind::Apc && !(s.fs > 0.0) {
                "solution.fs"
            } else if s.v_resume.is_some() && e.to_string().contains("v_resume") {
                "solution.v_resume"
            } else if e.to_string().contains("e_adc") {
                "solution.e_adc"
            } else if e.to_string().contains("monitor_power") {
                "solution.monitor_power"
            } else {
                "solution.thresholds"
            };
            push(path, e.to_string());
        }
        if s.kind == SolutionKind::Apc && s.fs > 0.0 && self.dt > 0.0 && self.dt > 1.0 / s.fs {
            push("dt", format!("must not exceed the sampling period 1/fs = {}", 1.0 / s.fs));
        }
        let mut lib_ok = true;
        for (name, o) in &self.library {
            if builtin_library().get(name).is_none() {
                push(&format!("library.{name}"), "unknown op".into());
                lib_ok = false;
            } else if !(o.energy >= 0.0) || !(o.duration > 0.0) {
                push(&format!("library.{name}"), "need energy >= 0 and duration > 0".into());
                lib_ok = false;
            }
        }
        if lib_ok {
            if let Err(e) = self.build_workload() {
                push("workload", e.to_string());
            }
        }
        let nv = &self.nv;
        if !(nv.read_energy_per_100b >= 0.0) || !(nv.write_energy_per_100b >= 0.0) {
            push("nv", "access energies must be >= 0".into());
        }
        if !(nv.access_time > 0.0) {
            push("nv.access_time", format!("must be > 0, got {}", nv.access_time));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.diagnostics();
        match d.first() {
            None => Ok(()),
            Some(first) => Err(SimError::config(first.path.clone(), first.message.clone())),
        }
    }
}

/// Diagnostics for raw JSON text: parse errors first, then semantic checks.
pub fn validate_json(text: &str) -> Vec<Diagnostic> {
    match Scenario::from_json(text) {
        Ok(s) => s.diagnostics(),
        Err(SimError::Config { path, msg }) => vec![Diagnostic { path, message: msg }],
        Err(e) => vec![Diagnostic {
            path: String::new(),
            message: e.to_string(),
        }],
    }
}

// ---------------------------------------------------------------------------
// Built-in scenarios

pub const BUILTIN_NAMES: [&str; 6] = ["beacon", "lora", "cam", "cam-wind", "bridge-uvlo", "bridge-apc"];

fn ideal_regulator(kind: RegulatorKind, v_out: f64) -> RegulatorModel {
    RegulatorModel {
        kind,
        eta: 1.0,
        p_quiescent: 0.0,
        v_out,
    }
}

fn workload(program: ProgramSpec) -> WorkloadConfig {
    WorkloadConfig {
        program,
        boot: None,
        sleep_power: None,
        idle_power: None,
        repeat: None,
        max_iterations: None,
        checkpoint_bytes: None,
    }
}

/// Push-button beacon: one press charges 2.2 µF past 6.7 V, a single
/// broadcast follows, then standby drains the node to 2.8 V.
pub fn beacon() -> Scenario {
    Scenario {
        name: "beacon".into(),
        dt: 1e-4,
        duration: 25.0,
        seed: 0,
        trace: Some(ExcitationSpec::Steps {
            steps: vec![(0.0, 154e-6), (0.45, 0.0)],
        }),
        trace_file: None,
        capacitor: CapacitorParams {
            capacitance: 2.2e-6,
            initial_voltage: 0.0,
            r_leak: None,
            v_max: DEFAULT_V_MAX,
        },
        regulator: ideal_regulator(RegulatorKind::Linear, 3.0),
        solution: SolutionConfig::uvlo(6.7, 2.8),
        workload: workload(ProgramSpec::Beacon),
        nv: NvStore::default(),
        library: BTreeMap::new(),
    }
}

/// Water-quality node: TDS sample plus a 12-byte LoRa uplink per wake-up.
/// The radio stays awake after the uplink until the storage reaches the
/// shutdown threshold, so every cycle recharges from 3.7 V.
pub fn lora() -> Scenario {
    let mut w = workload(ProgramSpec::SenseTransmit {
        sensor: "tds".into(),
        radio: "lora_tx_12B".into(),
    });
    w.idle_power = Some(LORA_AWAKE_POWER);
    let mut solution = SolutionConfig::pid(Thresholds {
        v_pstart: 4.7,
        v_pgood: 5.2,
        v_psleep: 3.7,
        v_pclose: 3.7,
    });
    // Charging powers are net of all static draw.
    solution.monitor_power = 0.0;
    Scenario {
        name: "lora".into(),
        dt: 1e-3,
        duration: 1400.0,
        seed: 0,
        trace: Some(ExcitationSpec::Steps {
            steps: vec![(0.0, 0.167e-3), (450.0, 0.227e-3)],
        }),
        trace_file: None,
        capacitor: CapacitorParams {
            capacitance: 6800e-6,
            initial_voltage: 0.0,
            r_leak: None,
            v_max: DEFAULT_V_MAX,
        },
        regulator: ideal_regulator(RegulatorKind::Buck, 3.3),
        solution,
        workload: w,
        nv: NvStore::default(),
        library: BTreeMap::new(),
    }
}

/// Draw of the LoRa node while awake and idle.
pub const LORA_AWAKE_POWER: f64 = 20e-3;

fn cam_solution() -> SolutionConfig {
    let mut s = SolutionConfig::apc(
        Thresholds {
            v_pstart: 4.7,
            v_pgood: 4.7,
            v_psleep: 2.4,
            v_pclose: 2.2,
        },
        20.0,
    );
    s.monitor_power = APC_BASE_POWER;
    s.e_adc = APC_E_ADC;
    // A checkpointed stream resumes once there is enough above the sleep
    // threshold to restore, send two packets and checkpoint again.
    let lib = builtin_library();
    let e = |n: &str| lib.get(n).map_or(0.0, |x| x.energy);
    let budget = e("nv_read_100B") + e("nv_write_100B") + 2.0 * e("ble_image_packet");
    s.v_resume = voltage_for_energy(CAM_CAPACITANCE, 2.4, budget).ok();
    s
}

const CAM_CAPACITANCE: f64 = 4700e-6;

/// Airflow-powered camera streaming 121×162 frames over BLE.
pub fn cam() -> Scenario {
    let mut w = workload(ProgramSpec::Camera {
        rows: 121,
        cols: 162,
        payload_bytes: 240,
    });
    w.boot = Some("apc_init".into());
    w.max_iterations = Some(6);
    Scenario {
        name: "cam".into(),
        dt: 1e-3,
        duration: 240.0,
        seed: 0,
        trace: Some(ExcitationSpec::Constant { p: 1.2e-3 }),
        trace_file: None,
        capacitor: CapacitorParams {
            capacitance: CAM_CAPACITANCE,
            initial_voltage: 0.0,
            r_leak: None,
            v_max: DEFAULT_V_MAX,
        },
        regulator: ideal_regulator(RegulatorKind::Buck, 3.3),
        solution: cam_solution(),
        workload: w,
        nv: NvStore::default(),
        library: BTreeMap::new(),
    }
}

/// Scripted wind profile: the first round runs until the fourth image is
/// part-way through streaming, a short gust lets two more packets out after
/// the first checkpoint, then the node shuts down until a stronger third
/// round lets it finish the frame.
pub fn cam_wind_steps() -> Vec<(f64, f64)> {
    CAM_WIND_STEPS.to_vec()
}

pub const CAM_WIND_STEPS: [(f64, f64); 5] = [
    (0.0, 1.2e-3),
    (100.5, 0.0),
    (101.5, 1.2e-3),
    (102.55, 0.0),
    (150.0, 1.8e-3),
];

pub fn cam_wind() -> Scenario {
    let mut s = cam();
    s.name = "cam-wind".into();
    s.duration = 300.0;
    s.trace = Some(ExcitationSpec::Steps {
        steps: cam_wind_steps(),
    });
    s.workload.max_iterations = Some(6);
    s
}

/// Two-burst excitation used by the bridge scenarios; see the oracle test
/// for how the burst parameters were chosen.
pub const BRIDGE_P_PEAK: f64 = 110e-6;
pub const BRIDGE_BURST_WIDTH: f64 = 1.75;
pub const BRIDGE_BASELINE: f64 = 45e-6;
pub const BRIDGE_DURATION: f64 = 24.0;

pub fn bridge_trace(p_peak: f64, burst_width: f64, baseline: f64) -> ExcitationSpec {
    ExcitationSpec::TwoBurst {
        p_peak,
        burst_width,
        gap: (BRIDGE_DURATION - 2.0 * burst_width) / 3.0,
        baseline,
    }
}

pub const BRIDGE_CHECKPOINT_BYTES: usize = 4;
/// Fixed regulator lockout shared by all bridge configurations.
pub const BRIDGE_V_PSTART: f64 = 5.0;
pub const BRIDGE_V_PCLOSE: f64 = 3.6;

fn bridge_base(name: &str, capacitance: f64, solution: SolutionConfig, boot: &str) -> Scenario {
    let mut w = workload(ProgramSpec::PeriodicBeacon { period: 0.5 });
    w.boot = Some(boot.into());
    w.checkpoint_bytes = Some(BRIDGE_CHECKPOINT_BYTES);
    let mut regulator = ideal_regulator(RegulatorKind::Buck, 3.0);
    if solution.kind == SolutionKind::Uvlo {
        regulator.p_quiescent = crate::controller::UVLO_STATIC_POWER;
    }
    Scenario {
        name: name.into(),
        dt: 1e-3,
        duration: BRIDGE_DURATION,
        seed: 0,
        trace: Some(bridge_trace(BRIDGE_P_PEAK, BRIDGE_BURST_WIDTH, BRIDGE_BASELINE)),
        trace_file: None,
        capacitor: CapacitorParams {
            capacitance,
            initial_voltage: 0.0,
            r_leak: None,
            v_max: DEFAULT_V_MAX,
        },
        regulator,
        solution,
        workload: w,
        nv: NvStore::default(),
        library: BTreeMap::new(),
    }
}

pub fn bridge_uvlo(capacitance: f64) -> Scenario {
    bridge_base(
        "bridge-uvlo",
        capacitance,
        SolutionConfig::uvlo(BRIDGE_V_PSTART, BRIDGE_V_PCLOSE),
        "uvlo_init",
    )
}

/// APC thresholds sized so that a beacon broadcast plus a checkpoint fit
/// below `v_psleep`, and a restore plus a broadcast fit above it.
pub fn bridge_apc_thresholds(capacitance: f64) -> Thresholds {
    let lib = builtin_library();
    let nv = NvStore::default();
    let e_op = lib.op("ble_beacon_init").unwrap().energy + lib.op("ble_beacon_advert").unwrap().energy;
    derive_apc_thresholds(
        capacitance,
        BRIDGE_V_PSTART,
        BRIDGE_V_PCLOSE,
        e_op,
        nv.write_op(BRIDGE_CHECKPOINT_BYTES).energy,
        nv.read_op(BRIDGE_CHECKPOINT_BYTES).energy,
    )
    .expect("bridge thresholds valid")
}

pub fn bridge_apc(fs: f64) -> Scenario {
    let c = 10e-6;
    let mut solution = SolutionConfig::apc(bridge_apc_thresholds(c), fs);
    solution.monitor_power = APC_BASE_POWER;
    bridge_base("bridge-apc", c, solution, "apc_init")
}

pub fn builtin(name: &str) -> Result<Scenario> {
    match name {
        "beacon" => Ok(beacon()),
        "lora" => Ok(lora()),
        "cam" => Ok(cam()),
        "cam-wind" => Ok(cam_wind()),
        "bridge-uvlo" => Ok(bridge_uvlo(10e-6)),
        "bridge-apc" => Ok(bridge_apc(4.0)),
        other => Err(SimError::config(
            "builtin",
            format!("unknown builtin {other:?}; expected one of {}", BUILTIN_NAMES.join(", ")),
        )),
    }
}
