//! Harvested-power traces.
//!
//! A [`PowerTrace`] is the power actually delivered to the storage capacitor
//! input, sampled at irregular instants and held constant between samples
//! (zero-order hold). Traces come either from a two-column CSV file or from
//! one of the synthetic [`ExcitationSpec`] profiles.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::Scalar;

/// One `(t, p)` point of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample<T = f64> {
    pub t: T,
    pub p: T,
}

/// Zero-order-hold power signal over `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace<T = f64> {
    samples: Vec<Sample<T>>,
    duration: T,
}

impl<T: Scalar> PowerTrace<T> {
    /// Builds a trace, checking that time starts at zero and strictly
    /// increases, that power is non-negative, and that `duration` covers the
    /// last sample.
    pub fn new(samples: Vec<Sample<T>>, duration: T) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| SimError::Validation("trace has no samples".into()))?;
        if first.t != T::zero() {
            return Err(SimError::Validation(format!(
                "trace must start at t = 0, got {}",
                first.t
            )));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(SimError::Validation(format!(
                    "non-monotonic time at sample {}",
                    i + 1
                )));
            }
        }
        if let Some(s) = samples.iter().find(|s| !(s.p >= T::zero()) || !s.p.is_finite()) {
            return Err(SimError::Validation(format!(
                "negative or non-finite power {} at t = {}",
                s.p, s.t
            )));
        }
        let last = samples[samples.len() - 1].t;
        if !(duration >= last) || !duration.is_finite() {
            return Err(SimError::Validation(format!(
                "duration {duration} is shorter than last sample time {last}"
            )));
        }
        Ok(Self { samples, duration })
    }

    /// Constant power `p` over `[0, duration]`.
    pub fn constant(p: T, duration: T) -> Result<Self> {
        Self::new(vec![Sample { t: T::zero(), p }], duration)
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn duration(&self) -> T {
        self.duration
    }

    /// Multiplies every power sample by `factor`.
    pub fn scaled(mut self, factor: T) -> Result<Self> {
        if !(factor >= T::zero()) {
            return Err(SimError::Domain(format!("negative power scale {factor}")));
        }
        for s in &mut self.samples {
            s.p = s.p * factor;
        }
        Ok(self)
    }

    fn index_at(&self, t: T) -> usize {
        self.samples.partition_point(|s| s.t <= t).saturating_sub(1)
    }

    /// Power held at time `t`: the value of the latest sample with
    /// sample time `<= t`.
    pub fn power_at(&self, t: T) -> Result<T> {
        if !(t >= T::zero() && t <= self.duration) {
            return Err(SimError::Domain(format!(
                "t = {t} outside trace span [0, {}]",
                self.duration
            )));
        }
        Ok(self.samples[self.index_at(t)].p)
    }

    /// Exact integral of the held signal over `[t0, t1]`, in joules.
    pub fn energy_between(&self, t0: T, t1: T) -> Result<T> {
        if !(t0 < t1) {
            return Err(SimError::Domain(format!("empty window [{t0}, {t1}]")));
        }
        if !(t0 >= T::zero() && t1 <= self.duration) {
            return Err(SimError::Domain(format!(
                "window [{t0}, {t1}] outside trace span [0, {}]",
                self.duration
            )));
        }
        let mut i = self.index_at(t0);
        let mut acc = T::zero();
        let mut from = t0;
        loop {
            let next_t = self
                .samples
                .get(i + 1)
                .map(|s| s.t)
                .unwrap_or(self.duration);
            let to = if next_t < t1 { next_t } else { t1 };
            acc = acc + self.samples[i].p * (to - from);
            if to >= t1 || i + 1 >= self.samples.len() {
                break;
            }
            from = to;
            i += 1;
        }
        Ok(acc)
    }

    /// Time-weighted mean power over `[t0, t1]`.
    pub fn average_power(&self, t0: T, t1: T) -> Result<T> {
        Ok(self.energy_between(t0, t1)? / (t1 - t0))
    }

    /// Reads a `t,p` CSV. The header row is optional; `scale` multiplies the
    /// power column. Line numbers in errors are physical file lines.
    pub fn read_csv<R: Read>(reader: R, scale: T) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut samples: Vec<Sample<T>> = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(idx + 1),
                msg: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
            if idx == 0 && rec.get(0) == Some("t") {
                if rec.len() != 2 || rec.get(1) != Some("p") {
                    return Err(SimError::Parse {
                        line,
                        msg: "expected header `t,p`".into(),
                    });
                }
                continue;
            }
            if rec.len() != 2 {
                return Err(SimError::Parse {
                    line,
                    msg: format!("expected 2 columns, found {}", rec.len()),
                });
            }
            let field = |k: usize| -> Result<T> {
                let raw = &rec[k];
                raw.parse::<T>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| SimError::Parse {
                        line,
                        msg: format!("`{raw}` is not a finite number"),
                    })
            };
            let t = field(0)?;
            let p = field(1)? * scale;
            if let Some(prev) = samples.last() {
                if !(t > prev.t) {
                    return Err(SimError::Validation(format!(
                        "non-monotonic time at line {line}"
                    )));
                }
            }
            if p < T::zero() {
                return Err(SimError::Validation(format!(
                    "negative power at line {line}"
                )));
            }
            samples.push(Sample { t, p });
        }
        if samples.is_empty() {
            return Err(SimError::Validation("trace file has no samples".into()));
        }
        let duration = samples[samples.len() - 1].t;
        Self::new(samples, duration)
    }

    /// Writes the trace as `t,p` CSV with a header. Values use the shortest
    /// round-trip representation, so reading back is bit-exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,p")?;
        for s in &self.samples {
            writeln!(w, "{},{}", s.t, s.p)?;
        }
        Ok(())
    }
}

/// Loads a trace file from disk. See [`PowerTrace::read_csv`].
pub fn load_trace<T: Scalar>(path: &Path, power_column_scale: T) -> Result<PowerTrace<T>> {
    let file = std::fs::File::open(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PowerTrace::read_csv(std::io::BufReader::new(file), power_column_scale)
}

pub fn save_trace<T: Scalar>(trace: &PowerTrace<T>, path: &Path) -> Result<()> {
    let io_err = |source| SimError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    trace.write_csv(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Synthetic excitation profiles. Powers in watts, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationSpec<T = f64> {
    Constant {
        p: T,
    },
    /// `cycles` repetitions of `t_on` at `p_on` followed by `t_off` at zero.
    Burst {
        p_on: T,
        t_on: T,
        t_off: T,
        cycles: u32,
    },
    /// `baseline` everywhere except two bursts of `p_peak`, each preceded
    /// by `gap` seconds: `[gap, gap + w)` and `[2 gap + w, 2 gap + 2 w)`.
    TwoBurst {
        p_peak: T,
        burst_width: T,
        gap: T,
        baseline: T,
    },
    /// Piecewise-constant script: `(start_time, power)` pairs, first at 0.
    Steps {
        steps: Vec<(T, T)>,
    },
}

impl<T: Scalar> ExcitationSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::Validation(msg));
        let nonneg = |name: &str, v: T| {
            if v >= T::zero() && v.is_finite() {
                Ok(())
            } else {
                bad(format!("{name} must be >= 0, got {v}"))
            }
        };
        let pos = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                bad(format!("{name} must be > 0, got {v}"))
            }
        };
        match self {
            ExcitationSpec::Constant { p } => nonneg("p", *p),
            ExcitationSpec::Burst {
                p_on,
                t_on,
                t_off,
                cycles,
            } => {
                nonneg("p_on", *p_on)?;
                pos("t_on", *t_on)?;
                pos("t_off", *t_off)?;
                if *cycles == 0 {
                    return bad("cycles must be > 0".into());
                }
                Ok(())
            }
            ExcitationSpec::TwoBurst {
                p_peak,
                burst_width,
                gap,
                baseline,
            } => {
                nonneg("p_peak", *p_peak)?;
                nonneg("baseline", *baseline)?;
                pos("burst_width", *burst_width)?;
                pos("gap", *gap)
            }
            ExcitationSpec::Steps { steps } => {
                let Some(first) = steps.first() else {
                    return bad("steps must not be empty".into());
                };
                if first.0 != T::zero() {
                    return bad("first step must start at t = 0".into());
                }
                for w in steps.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return bad("step start times must strictly increase".into());
                    }
                }
                steps.iter().try_for_each(|s| nonneg("step power", s.1))
            }
        }
    }

    /// Instantaneous power of the profile at `t`.
    pub fn power_at(&self, t: T) -> T {
        let eps = T::lit(1e-9);
        match self {
            ExcitationSpec::Constant { p } => *p,
            ExcitationSpec::Burst {
                p_on,
                t_on,
                t_off,
                cycles,
            } => {
                let cycle = *t_on + *t_off;
                let n = (t / cycle + eps).floor();
                let phase = t - n * cycle;
                let within = n < T::from_u32(*cycles).unwrap_or_else(T::infinity);
                if within && phase + eps * cycle < *t_on {
                    *p_on
                } else {
                    T::zero()
                }
            }
            ExcitationSpec::TwoBurst {
                p_peak,
                burst_width,
                gap,
                baseline,
            } => {
                let w = *burst_width;
                let g = *gap;
                let tol = eps * (w + g);
                let in_window = |a: T, b: T| t + tol >= a && t + tol < b;
                if in_window(g, g + w) || in_window(g + g + w, g + g + w + w) {
                    *p_peak
                } else {
                    *baseline
                }
            }
            ExcitationSpec::Steps { steps } => {
                let i = steps.partition_point(|s| s.0 <= t).saturating_sub(1);
                steps[i].1
            }
        }
    }
}

/// Uniformly sampled realization of `spec` at step `dt` over `duration`.
pub fn synth_trace<T: Scalar>(spec: &ExcitationSpec<T>, duration: T, dt: T) -> Result<PowerTrace<T>> {
    spec.validate()?;
    if !(duration > T::zero()) || !(dt > T::zero()) {
        return Err(SimError::Validation(
            "duration and dt must both be > 0".into(),
        ));
    }
    if dt >= duration {
        return Err(SimError::Validation(format!(
            "dt {dt} must be smaller than duration {duration}"
        )));
    }
    let n = (duration / dt).ceil().to_usize().unwrap_or(0).max(1);
    let samples = (0..n)
        .map(|k| {
            let t = T::from_usize(k).unwrap() * dt;
            Sample {
                t,
                p: spec.power_at(t),
            }
        })
        .filter(|s| s.t < duration)
        .collect();
    PowerTrace::new(samples, duration)
}
