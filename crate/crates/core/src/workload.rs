//! Atomic operations, the built-in energy library, and workload programs.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Duration assumed for library ops whose timing is not characterised.
pub const DEFAULT_OP_DURATION: f64 = 10e-3;

/// Indivisible unit of work. Aborting it wastes the energy already spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomicOp {
    pub name: String,
    pub energy: f64,
    pub duration: f64,
    /// `false` means all-or-nothing: once started it runs to completion
    /// unless power is lost.
    #[serde(default)]
    pub interruptible: bool,
}

impl AtomicOp {
    pub fn new(name: impl Into<String>, energy: f64, duration: f64) -> Self {
        Self {
            name: name.into(),
            energy,
            duration,
            interruptible: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy >= 0.0) || !self.energy.is_finite() {
            return Err(SimError::Domain(format!(
                "op {}: energy must be >= 0, got {}",
                self.name, self.energy
            )));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(SimError::Domain(format!(
                "op {}: duration must be > 0, got {}",
                self.name, self.duration
            )));
        }
        Ok(())
    }

    /// Average power drawn at the regulator output while the op runs.
    pub fn power(&self) -> f64 {
        self.energy / self.duration
    }
}

/// Where a library duration comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationSource {
    Measured,
    Derived,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub energy: f64,
    pub duration: f64,
    pub duration_source: DurationSource,
    /// Standby draw of the module, when characterised.
    pub static_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLibrary {
    entries: BTreeMap<String, LibraryEntry>,
}

impl TaskLibrary {
    pub fn get(&self, name: &str) -> Option<&LibraryEntry> {
        self.entries.get(name)
    }

    pub fn op(&self, name: &str) -> Result<AtomicOp> {
        self.get(name)
            .map(|e| AtomicOp::new(name, e.energy, e.duration))
            .ok_or_else(|| SimError::UnknownOp(name.to_string()))
    }

    pub fn static_power(&self, name: &str) -> Result<Option<f64>> {
        self.get(name)
            .map(|e| e.static_power)
            .ok_or_else(|| SimError::UnknownOp(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LibraryEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns a copy with `name` replaced; the entry must already exist.
    pub fn with_override(&self, name: &str, energy: f64, duration: f64) -> Result<Self> {
        AtomicOp::new(name, energy, duration).validate()?;
        let mut lib = self.clone();
        let entry = lib
            .entries
            .get_mut(name)
            .ok_or_else(|| SimError::UnknownOp(name.to_string()))?;
        entry.energy = energy;
        entry.duration = duration;
        entry.duration_source = DurationSource::Measured;
        Ok(lib)
    }
}

/// The characterised task and peripheral energies of the platform.
pub fn builtin_library() -> TaskLibrary {
    use DurationSource::*;
    let rows: [(&str, f64, f64, DurationSource, Option<f64>); 20] = [
        ("ble_beacon_tx", 18.9e-6, 0.130, Derived, Some(2.06e-6)),
        ("ble_beacon_init", 9.017e-6, DEFAULT_OP_DURATION, Default, Some(2.06e-6)),
        ("ble_beacon_advert", 9.860e-6, 0.120, Measured, Some(2.06e-6)),
        ("ble_uart_tx", 1.15e-3, DEFAULT_OP_DURATION, Default, Some(6.6e-6)),
        ("lora_tx_100B", 42.84e-3, DEFAULT_OP_DURATION, Default, Some(6.6e-6)),
        ("lora_tx_12B", 22.4e-3, DEFAULT_OP_DURATION, Default, Some(6.6e-6)),
        ("onchip_temp", 103.68e-6, DEFAULT_OP_DURATION, Default, Some(6.6e-6)),
        ("temp_hum", 673e-6, DEFAULT_OP_DURATION, Default, Some(0.2e-6)),
        ("tds", 1.46e-3, DEFAULT_OP_DURATION, Default, None),
        ("barometric", 705.6e-6, DEFAULT_OP_DURATION, Default, Some(1.65e-6)),
        ("accelerometer", 608.4e-6, DEFAULT_OP_DURATION, Default, Some(0.16e-6)),
        // Streaming takes ~4 s, about 80 % of a 5 s cycle; capture is the rest.
        ("camera_capture", 16.0e-3, 1.0, Derived, Some(200e-6)),
        ("ble_image_stream", 11.0e-3, 4.0, Measured, Some(6.6e-6)),
        ("nv_read_100B", 205.7e-6, DEFAULT_OP_DURATION, Default, Some(29.7e-6)),
        ("nv_write_100B", 206.8e-6, DEFAULT_OP_DURATION, Default, Some(29.7e-6)),
        ("uvlo_init", 50.8e-6, DEFAULT_OP_DURATION, Default, None),
        ("pid_init", 50.9e-6, DEFAULT_OP_DURATION, Default, None),
        ("apc_init", 51.09e-6, DEFAULT_OP_DURATION, Default, None),
        ("adc_sample", 1.29e-6, 1e-4, Default, None),
        ("ble_image_packet", 11.0e-3 / 82.0, 4.0 / 82.0, Derived, Some(6.6e-6)),
    ];
    let entries = rows
        .into_iter()
        .map(|(name, energy, duration, duration_source, static_power)| {
            (
                name.to_string(),
                LibraryEntry {
                    energy,
                    duration,
                    duration_source,
                    static_power,
                },
            )
        })
        .collect();
    TaskLibrary { entries }
}

/// One program step. A `marker` after a step makes the position following it
/// resumable from a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub op: AtomicOp,
    #[serde(default)]
    pub marker: bool,
    /// Image bytes carried by this step when it is a packet transmission.
    #[serde(default)]
    pub payload: Option<Range<usize>>,
}

impl Step {
    pub fn plain(op: AtomicOp) -> Self {
        Self {
            op,
            marker: false,
            payload: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Repeat {
    /// One iteration per `PGood`.
    OncePerWake,
    /// Iterate while in task operation, `period` seconds between iteration
    /// starts (0 means back-to-back).
    Continuous { period: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProgram {
    pub name: String,
    pub steps: Vec<Step>,
    /// Run once at each power-up before anything else.
    pub boot: Option<AtomicOp>,
    /// Deep-sleep draw at the regulator output.
    pub sleep_power: f64,
    /// Draw while awake with no op scheduled.
    pub idle_power: f64,
    pub repeat: Repeat,
    pub max_iterations: Option<u64>,
    /// Size of one checkpoint record.
    pub checkpoint_bytes: usize,
    /// Total bytes the receiver must reassemble, for streaming programs.
    pub image_bytes: Option<usize>,
}

/// Default checkpoint record: one NV write unit.
pub const DEFAULT_CHECKPOINT_BYTES: usize = 100;

impl WorkloadProgram {
    fn base(name: &str, steps: Vec<Step>, sleep_power: f64, repeat: Repeat) -> Self {
        Self {
            name: name.to_string(),
            steps,
            boot: None,
            sleep_power,
            idle_power: sleep_power,
            repeat,
            max_iterations: None,
            checkpoint_bytes: DEFAULT_CHECKPOINT_BYTES,
            image_bytes: None,
        }
    }

    /// Programs with progress markers keep state across power cycles.
    pub fn stateful(&self) -> bool {
        self.steps.iter().any(|s| s.marker)
    }

    pub fn marker_count(&self) -> usize {
        self.steps.iter().filter(|s| s.marker).count()
    }

    pub fn packet_count(&self) -> usize {
        self.steps.iter().filter(|s| s.payload.is_some()).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(SimError::Domain(format!("workload {} has no steps", self.name)));
        }
        for s in &self.steps {
            s.op.validate()?;
        }
        if let Some(b) = &self.boot {
            b.validate()?;
        }
        if !(self.sleep_power >= 0.0) || !(self.idle_power >= 0.0) {
            return Err(SimError::Domain("sleep/idle power must be >= 0".into()));
        }
        if let Repeat::Continuous { period } = self.repeat {
            if !(period >= 0.0) || !period.is_finite() {
                return Err(SimError::Domain(format!("period must be >= 0, got {period}")));
            }
        }
        if self.stateful() && self.checkpoint_bytes == 0 {
            return Err(SimError::Domain("checkpoint_bytes must be > 0".into()));
        }
        Ok(())
    }
}

pub fn workload_energy(program: &WorkloadProgram) -> f64 {
    program.steps.iter().map(|s| s.op.energy).sum()
}

/// Single broadcast per wake-up: init then advertise.
pub fn beacon_workload(lib: &TaskLibrary) -> Result<WorkloadProgram> {
    let steps = vec![
        Step::plain(lib.op("ble_beacon_init")?),
        Step::plain(lib.op("ble_beacon_advert")?),
    ];
    let sleep = lib.static_power("ble_beacon_tx")?.unwrap_or(0.0);
    Ok(WorkloadProgram::base("beacon", steps, sleep, Repeat::OncePerWake))
}

/// Periodic beacon whose sequence counter survives power loss through a
/// checkpoint of `checkpoint_bytes`.
pub fn periodic_beacon_workload(
    lib: &TaskLibrary,
    period: f64,
    checkpoint_bytes: usize,
) -> Result<WorkloadProgram> {
    let mut p = beacon_workload(lib)?;
    p.name = "periodic_beacon".into();
    p.repeat = Repeat::Continuous { period };
    p.steps.last_mut().expect("two steps").marker = true;
    p.checkpoint_bytes = checkpoint_bytes;
    Ok(p)
}

/// Sense then transmit, once per wake-up. Stateless.
pub fn sense_transmit_workload(
    lib: &TaskLibrary,
    sensor: &str,
    radio: &str,
) -> Result<WorkloadProgram> {
    let steps = vec![Step::plain(lib.op(sensor)?), Step::plain(lib.op(radio)?)];
    let sleep = lib.static_power(radio)?.unwrap_or(0.0);
    Ok(WorkloadProgram::base("sense_transmit", steps, sleep, Repeat::OncePerWake))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageStreamSpec {
    pub rows: usize,
    pub cols: usize,
    pub bytes_per_pixel: usize,
    pub payload_bytes: usize,
    pub capture: AtomicOp,
    pub per_packet: AtomicOp,
}

impl ImageStreamSpec {
    /// 121×162 grayscale frame in 240-byte packets; the streaming energy and
    /// time are split evenly across packets.
    pub fn grayscale_camera(lib: &TaskLibrary) -> Result<Self> {
        let mut spec = Self {
            rows: 121,
            cols: 162,
            bytes_per_pixel: 1,
            payload_bytes: 240,
            capture: lib.op("camera_capture")?,
            per_packet: lib.op("ble_image_stream")?,
        };
        let n = spec.packet_count() as f64;
        spec.per_packet.name = "ble_image_packet".into();
        spec.per_packet.energy /= n;
        spec.per_packet.duration /= n;
        Ok(spec)
    }

    pub fn image_bytes(&self) -> usize {
        self.rows * self.cols * self.bytes_per_pixel
    }

    pub fn packet_count(&self) -> usize {
        self.image_bytes().div_ceil(self.payload_bytes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_bytes() == 0 || self.payload_bytes == 0 {
            return Err(SimError::Domain("image and payload sizes must be > 0".into()));
        }
        self.capture.validate()?;
        self.per_packet.validate()
    }
}

/// Capture followed by one packet per payload, with a marker after each.
pub fn camera_stream_workload(spec: &ImageStreamSpec) -> Result<WorkloadProgram> {
    spec.validate()?;
    let total = spec.image_bytes();
    let mut steps = vec![Step {
        op: spec.capture.clone(),
        marker: true,
        payload: None,
    }];
    for k in 0..spec.packet_count() {
        let start = k * spec.payload_bytes;
        steps.push(Step {
            op: spec.per_packet.clone(),
            marker: true,
            payload: Some(start..(start + spec.payload_bytes).min(total)),
        });
    }
    let mut p = WorkloadProgram::base("camera_stream", steps, 6.6e-6, Repeat::Continuous { period: 0.0 });
    p.image_bytes = Some(total);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn library_spot_values() {
        let lib = builtin_library();
        assert_eq!(lib.op("ble_beacon_tx").unwrap().energy, 18.9e-6);
        assert_eq!(lib.op("lora_tx_100B").unwrap().energy, 42.84e-3);
        assert_eq!(lib.op("nv_write_100B").unwrap().energy, 206.8e-6);
        assert_eq!(lib.op("nv_read_100B").unwrap().energy, 205.7e-6);
        assert_eq!(lib.static_power("tds").unwrap(), None);
        assert!(matches!(lib.op("warp_drive"), Err(SimError::UnknownOp(_))));
    }

    #[test]
    fn beacon_program() {
        let p = beacon_workload(&builtin_library()).unwrap();
        assert_eq!(p.steps.len(), 2);
        assert_eq!(p.marker_count(), 0);
        assert_relative_eq!(workload_energy(&p), 18.877e-6, max_relative = 1e-12);
        assert_eq!(p.sleep_power, 2.06e-6);
    }

    #[test]
    fn sense_transmit_cycle_energy() {
        let lib = builtin_library();
        let p = sense_transmit_workload(&lib, "tds", "lora_tx_12B").unwrap();
        assert_relative_eq!(workload_energy(&p), 23.86e-3, max_relative = 1e-12);
        let p = sense_transmit_workload(&lib, "tds", "lora_tx_100B").unwrap();
        assert_relative_eq!(workload_energy(&p), 44.3e-3, max_relative = 1e-12);
        let zero = lib.with_override("tds", 0.0, 0.01).unwrap();
        let p = sense_transmit_workload(&zero, "tds", "lora_tx_12B").unwrap();
        assert_eq!(workload_energy(&p), 22.4e-3);
        assert!(sense_transmit_workload(&lib, "tds", "carrier_pigeon").is_err());
    }

    #[test]
    fn camera_program_shape() {
        let spec = ImageStreamSpec::grayscale_camera(&builtin_library()).unwrap();
        assert_eq!(spec.image_bytes(), 19_602);
        assert_eq!(spec.packet_count(), 82);
        assert_relative_eq!(spec.per_packet.energy, 134.146e-6, max_relative = 1e-5);
        let p = camera_stream_workload(&spec).unwrap();
        assert_eq!(p.steps.len(), 83);
        assert_eq!(p.marker_count(), 83);
        assert_relative_eq!(workload_energy(&p), 27.0e-3, max_relative = 1e-12);
        let bytes: usize = p.steps.iter().filter_map(|s| s.payload.clone()).map(|r| r.len()).sum();
        assert_eq!(bytes, 19_602);
        assert_eq!(p.steps.last().unwrap().payload, Some(19_440..19_602));
    }

    #[test]
    fn one_packet_image() {
        let lib = builtin_library();
        let spec = ImageStreamSpec {
            rows: 1,
            cols: 240,
            bytes_per_pixel: 1,
            payload_bytes: 240,
            capture: lib.op("camera_capture").unwrap(),
            per_packet: lib.op("ble_image_packet").unwrap(),
        };
        let p = camera_stream_workload(&spec).unwrap();
        assert_eq!(p.packet_count(), 1);
        assert_eq!(p.marker_count(), 2);
    }

    #[test]
    fn empty_energy_is_zero() {
        let mut p = beacon_workload(&builtin_library()).unwrap();
        p.steps.clear();
        assert_eq!(workload_energy(&p), 0.0);
        assert!(p.validate().is_err());
    }
}
