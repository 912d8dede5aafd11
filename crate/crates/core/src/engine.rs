//! Fixed-step simulation loop: trace → controller → runtime → load →
//! capacitor, with waveform recording and an energy audit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, EnergySignal, Phase, SignalKind, SolutionKind};
use crate::error::{Result, SimError};
use crate::powerchain::Capacitor;
use crate::runtime::{Counters, ImageRecord, IterationRecord, Outage, OutageCause, Runtime};
use crate::scenario::{Scenario, TraceSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformRow {
    pub t: f64,
    pub v_storage: f64,
    pub phase: Phase,
    pub load_power: f64,
    pub event: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub harvested: f64,
    pub delivered_to_load: f64,
    pub monitoring: f64,
    pub leaked: f64,
    pub discarded: f64,
    pub stored_initial: f64,
    pub stored_final: f64,
    pub residual: f64,
}

impl EnergyAudit {
    fn compute_residual(&self) -> f64 {
        self.harvested
            - (self.stored_final - self.stored_initial)
            - self.delivered_to_load
            - self.monitoring
            - self.leaked
            - self.discarded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutagesByCause {
    pub startup_failure: u64,
    pub mid_op_abort: u64,
    pub missed_checkpoint: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub steps: u64,
    /// First `PStart`, if any.
    pub cold_start_time: Option<f64>,
    pub boots: u64,
    pub outages: u64,
    pub outages_by_cause: OutagesByCause,
    pub checkpoints: u64,
    pub restores: u64,
    pub self_reboots: u64,
    pub tasks_completed: u64,
    pub packets_sent: u64,
    pub iterations_completed: u64,
    /// Completed workload ops, at the regulator output.
    pub task_energy: f64,
    /// Checkpoint and restore traffic.
    pub nv_energy: f64,
    pub boot_energy: f64,
    /// Energy spent on ops that never completed.
    pub aborted_energy: f64,
    pub final_voltage: f64,
    pub audit: EnergyAudit,
    pub signals: Vec<EnergySignal>,
    pub outage_log: Vec<Outage>,
    pub iterations: Vec<IterationRecord>,
    pub images: Vec<ImageRecord>,
}

impl SimReport {
    pub fn signal_times(&self, kind: SignalKind) -> Vec<f64> {
        self.signals.iter().filter(|s| s.kind == kind).map(|s| s.t).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Waveform recording options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recording {
    /// Keep every `stride`-th step; steps with events are always kept.
    pub stride: u64,
    pub enabled: bool,
}

impl Recording {
    pub const OFF: Recording = Recording {
        stride: 1,
        enabled: false,
    };

    pub fn every(stride: u64) -> Self {
        Self {
            stride: stride.max(1),
            enabled: true,
        }
    }
}

struct Sampler {
    source: TraceSource,
    cursor: usize,
}

impl Sampler {
    fn power(&mut self, t: f64) -> f64 {
        match &self.source {
            TraceSource::Synthetic(spec) => spec.power_at(t),
            TraceSource::Recorded(tr) => {
                let s = tr.samples();
                while self.cursor + 1 < s.len() && s[self.cursor + 1].t <= t {
                    self.cursor += 1;
                }
                s[self.cursor].p
            }
        }
    }
}

pub fn simulate(scenario: &Scenario) -> Result<SimReport> {
    simulate_recorded(scenario, Recording::OFF).map(|(_, r)| r)
}

/// Runs `scenario` to completion, returning the waveform and the report.
pub fn simulate_recorded(scenario: &Scenario, rec: Recording) -> Result<(Vec<WaveformRow>, SimReport)> {
    scenario.validate()?;
    let source = scenario.trace_source()?;
    if source.span() + 1e-12 < scenario.duration {
        return Err(SimError::config(
            "duration",
            format!(
                "exceeds the trace length {} s",
                source.span()
            ),
        ));
    }
    let program = scenario.build_workload()?;
    let mut sampler = Sampler { source, cursor: 0 };
    let cp = &scenario.capacitor;
    let mut cap = Capacitor::new(cp.capacitance, cp.initial_voltage, cp.r_leak, cp.v_max)?;
    let reg = scenario.regulator;
    let mut ctrl = Controller::new(scenario.solution)?;
    let mut nv = scenario.nv.clone();
    nv.checkpoint = None;
    let mut rt = Runtime::new(program, nv, scenario.solution.kind);
    rt.set_low_resume(scenario.solution.kind == SolutionKind::Apc && scenario.solution.v_resume.is_some());

    let dt = scenario.dt;
    let n_steps = (scenario.duration / dt - 1e-9).ceil().max(1.0) as u64;
    let mut audit = EnergyAudit {
        stored_initial: cap.stored_energy(),
        ..Default::default()
    };
    let mut signals = Vec::new();
    let mut rows = Vec::new();

    for k in 0..n_steps {
        let t = k as f64 * dt;
        let p_in = sampler.power(t);
        let out = ctrl.step(cap.voltage(), t, dt);
        for s in &out.signals {
            rt.on_signal(s);
        }
        if scenario.solution.kind == SolutionKind::Apc {
            // Software only knows the voltage it last sampled.
            let v_sleep = scenario.solution.thresholds.v_psleep;
            let headroom = ctrl.state().last_sample.map(|v| 0.5 * cp.capacitance * (v * v - v_sleep * v_sleep) * reg.eta);
            rt.set_headroom(headroom);
        }
        let p_load = rt.execute_tick(t, dt);
        let mut out = out;
        if rt.take_yield() {
            out.signals.extend(ctrl.release(t));
        }
        ctrl.set_resume_enabled(rt.resume_pending());
        let p_draw = if rt.powered() { reg.draw(p_load) } else { 0.0 };
        let p_mon = out.monitoring_energy / dt;
        let d = cap.integrate_step(p_in, p_draw + p_mon, dt);
        // On starvation the monitor is served first.
        let mon = d.delivered.min(out.monitoring_energy);
        audit.harvested += d.harvested;
        audit.monitoring += mon;
        audit.delivered_to_load += d.delivered - mon;
        audit.leaked += d.leaked;
        audit.discarded += d.discarded;

        let events = rt.take_events();
        if rec.enabled {
            let has_event = !out.signals.is_empty() || !events.is_empty();
            if has_event || k % rec.stride == 0 {
                let mut labels: Vec<String> = out.signals.iter().map(|s| s.kind.as_str().to_string()).collect();
                labels.extend(events.iter().map(|e| e.label()));
                rows.push(WaveformRow {
                    t,
                    v_storage: cap.voltage(),
                    phase: ctrl.phase(),
                    load_power: if rt.powered() { p_load } else { 0.0 },
                    event: labels.join(";"),
                });
            }
        }
        signals.extend(out.signals);
    }
    rt.finish();

    audit.stored_final = cap.stored_energy();
    audit.residual = audit.compute_residual();
    let mut by_cause = OutagesByCause::default();
    for o in &rt.outages {
        match o.cause {
            OutageCause::StartupFailure => by_cause.startup_failure += 1,
            OutageCause::MidOpAbort => by_cause.mid_op_abort += 1,
            OutageCause::MissedCheckpoint => by_cause.missed_checkpoint += 1,
        }
    }
    let Counters {
        boots,
        outages,
        checkpoints,
        restores,
        self_reboots,
        tasks_completed,
        packets_sent,
        iterations,
    } = rt.counters;
    let report = SimReport {
        scenario: scenario.name.clone(),
        steps: n_steps,
        cold_start_time: signals.iter().find(|s| s.kind == SignalKind::PStart).map(|s| s.t),
        boots,
        outages,
        outages_by_cause: by_cause,
        checkpoints,
        restores,
        self_reboots,
        tasks_completed,
        packets_sent,
        iterations_completed: iterations,
        task_energy: rt.task_energy,
        nv_energy: rt.nv_energy,
        boot_energy: rt.boot_energy,
        aborted_energy: rt.aborted_energy,
        final_voltage: cap.voltage(),
        audit,
        signals,
        outage_log: rt.outages.clone(),
        iterations: rt.iterations.clone(),
        images: rt.receiver.as_ref().map(|r| r.images.clone()).unwrap_or_default(),
    };
    Ok((rows, report))
}

/// Relative audit tolerance.
pub const AUDIT_TOLERANCE: f64 = 1e-3;

/// Checks energy conservation over the run and returns the residual.
pub fn energy_audit(report: &SimReport) -> Result<f64> {
    let a = &report.audit;
    let limit = AUDIT_TOLERANCE * a.harvested.max(a.stored_initial);
    if a.residual.abs() > limit {
        return Err(SimError::Audit {
            residual: a.residual,
            limit,
            breakdown: serde_json::to_string(a).expect("audit serializes"),
        });
    }
    Ok(a.residual)
}

/// Sets the numeric field at dotted `path` (e.g. `solution.fs`).
pub fn set_param(scenario: &Scenario, path: &str, value: f64) -> Result<Scenario> {
    let mut v = serde_json::to_value(scenario).expect("scenario serializes");
    let pointer = format!("/{}", path.replace('.', "/"));
    let slot = v
        .pointer_mut(&pointer)
        .ok_or_else(|| SimError::config(path, "no such scenario field"))?;
    if !(slot.is_number() || slot.is_null()) {
        return Err(SimError::config(path, "not a numeric field"));
    }
    let num = serde_json::Number::from_f64(value)
        .ok_or_else(|| SimError::config(path, format!("value {value} is not finite")))?;
    *slot = if slot.as_u64().is_some() && value.fract() == 0.0 && value >= 0.0 {
        serde_json::Value::from(value as u64)
    } else {
        serde_json::Value::Number(num)
    };
    serde_json::from_value(v).map_err(|e| SimError::config(path, e.to_string()))
}

/// One independent run per value, results in input order. `jobs = None`
/// uses all cores.
pub fn sweep(scenario: &Scenario, path: &str, values: &[f64], jobs: Option<usize>) -> Result<Vec<SimReport>> {
    let variants = values
        .iter()
        .map(|&x| {
            let s = set_param(scenario, path, x)?;
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let run = || variants.par_iter().map(simulate).collect::<Result<Vec<_>>>();
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SimError::Validation(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// `t,v_storage,phase,load_power,event` with shortest round-trip floats.
pub fn write_waveform_csv<W: Write>(rows: &[WaveformRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SimError::Validation(format!("waveform write failed: {e}"));
    w.write_record(["t", "v_storage", "phase", "load_power", "event"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.v_storage.to_string(),
            r.phase.as_str().to_string(),
            r.load_power.to_string(),
            r.event.clone(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| SimError::Validation(format!("waveform write failed: {e}")))?;
    Ok(())
}

/// Writes `waveform.csv` and `report.json` into `dir`.
pub fn write_outputs(dir: &Path, rows: &[WaveformRow], report: &SimReport) -> Result<()> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SimError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let wf = dir.join("waveform.csv");
    let f = std::fs::File::create(&wf).map_err(io(&wf))?;
    write_waveform_csv(rows, std::io::BufWriter::new(f))?;
    let rp = dir.join("report.json");
    std::fs::write(&rp, report.to_json() + "\n").map_err(io(&rp))?;
    Ok(())
}

/// Summary line per sweep value.
pub fn sweep_summary_csv(path: &str, values: &[f64], reports: &[SimReport]) -> String {
    let mut s = format!(
        "{path},cold_start_time,boots,outages,startup_failure,mid_op_abort,missed_checkpoint,checkpoints,restores,iterations_completed\n"
    );
    for (v, r) in values.iter().zip(reports) {
        let o = r.outages_by_cause;
        s.push_str(&format!(
            "{v},{},{},{},{},{},{},{},{},{}\n",
            r.cold_start_time.map(|t| t.to_string()).unwrap_or_default(),
            r.boots,
            r.outages,
            o.startup_failure,
            o.mid_op_abort,
            o.missed_checkpoint,
            r.checkpoints,
            r.restores,
            r.iterations_completed
        ));
    }
    s
}

/// Outage counts keyed by cause name, for display.
pub fn outage_map(report: &SimReport) -> BTreeMap<&'static str, u64> {
    let o = report.outages_by_cause;
    BTreeMap::from([
        ("startup_failure", o.startup_failure),
        ("mid_op_abort", o.mid_op_abort),
        ("missed_checkpoint", o.missed_checkpoint),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;
    use crate::trace::ExcitationSpec;
    use approx::assert_relative_eq;

    #[test]
    fn zero_power_run_is_silent() {
        let mut s = scenario::cam();
        s.trace = Some(ExcitationSpec::Constant { p: 0.0 });
        s.duration = 5.0;
        let (rows, r) = simulate_recorded(&s, Recording::every(1)).unwrap();
        assert!(r.signals.is_empty());
        assert_eq!(r.audit.residual, 0.0);
        assert_eq!(energy_audit(&r).unwrap(), 0.0);
        assert!(rows.iter().all(|w| w.v_storage == 0.0 && w.phase == Phase::ColdStart));
    }

    #[test]
    fn charge_only_run_conserves_exactly() {
        let mut s = scenario::cam();
        s.duration = 10.0;
        let r = simulate(&s).unwrap();
        assert_relative_eq!(r.audit.harvested, r.audit.stored_final, max_relative = 1e-12);
    }

    #[test]
    fn cam_cold_start_matches_closed_form() {
        let mut s = scenario::cam();
        s.duration = 50.0;
        let r = simulate(&s).unwrap();
        let analytic = 4700e-6 * 4.7 * 4.7 / (2.0 * 1.2e-3);
        assert!((r.cold_start_time.unwrap() - analytic).abs() / analytic < 0.02);
    }

    #[test]
    fn unknown_sweep_path_is_config_error() {
        let err = sweep(&scenario::cam(), "solution.warp", &[1.0], None).unwrap_err();
        assert!(matches!(err, SimError::Config { .. }));
    }

    #[test]
    fn stride_does_not_change_report() {
        let mut s = scenario::beacon();
        s.duration = 1.0;
        let (a, ra) = simulate_recorded(&s, Recording::every(1)).unwrap();
        let (b, rb) = simulate_recorded(&s, Recording::every(50)).unwrap();
        assert_eq!(ra, rb);
        assert!(b.len() < a.len());
        assert!(b.windows(2).all(|w| w[0].t < w[1].t));
    }
}
