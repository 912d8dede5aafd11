//! Design-time calculators: minimum storage capacitance, recharge time, APC
//! polling-band screening and threshold derivation from a task budget.

use serde::{Deserialize, Serialize};

use crate::controller::Thresholds;
use crate::error::{Result, SimError};
use crate::scalar::Scalar;

/// `C ≥ 2(E_static + E_task) / (η (V_start² − V_close²))`.
///
/// `static_energy` is the static-power integral over whatever window the
/// caller considers critical.
pub fn min_capacitance<T: Scalar>(e_task: T, static_energy: T, eta: T, v_start: T, v_close: T) -> Result<T> {
    if !(v_start > v_close) || !(v_close >= T::zero()) {
        return Err(SimError::Domain(format!(
            "need v_start > v_close >= 0, got {v_start} / {v_close}"
        )));
    }
    if !(eta > T::zero() && eta <= T::one()) {
        return Err(SimError::Domain(format!("eta must be in (0, 1], got {eta}")));
    }
    if !(e_task >= T::zero()) || !(static_energy >= T::zero()) {
        return Err(SimError::Domain("energies must be >= 0".into()));
    }
    Ok(T::two() * (static_energy + e_task) / (eta * (v_start * v_start - v_close * v_close)))
}

/// Leakage-free time to charge `capacitance` from `v_lo` to `v_hi` at a
/// constant net power `p_eff`.
pub fn recharge_time<T: Scalar>(capacitance: T, v_lo: T, v_hi: T, p_eff: T) -> Result<T> {
    if !(p_eff > T::zero()) {
        return Err(SimError::Domain(format!("p_eff must be > 0, got {p_eff}")));
    }
    if !(v_hi >= v_lo) || !(v_lo >= T::zero()) {
        return Err(SimError::Domain(format!(
            "need v_hi >= v_lo >= 0, got {v_hi} / {v_lo}"
        )));
    }
    Ok(capacitance * (v_hi * v_hi - v_lo * v_lo) / (T::two() * p_eff))
}

/// Voltage `v` above `v_lo` such that `½C(v² − v_lo²) = energy`.
pub fn voltage_for_energy<T: Scalar>(capacitance: T, v_lo: T, energy: T) -> Result<T> {
    if !(capacitance > T::zero()) || !(energy >= T::zero()) || !(v_lo >= T::zero()) {
        return Err(SimError::Domain("need C > 0, energy >= 0, v_lo >= 0".into()));
    }
    Ok((v_lo * v_lo + T::two() * energy / capacitance).sqrt())
}

/// Software thresholds sized from the task budget.
///
/// * `v_psleep` leaves enough below it to finish the largest in-flight op and
///   write a checkpoint before `v_pclose`.
/// * `v_pgood` leaves enough above `v_psleep` to restore and run that op.
pub fn derive_apc_thresholds(
    capacitance: f64,
    v_pstart: f64,
    v_pclose: f64,
    e_op: f64,
    e_checkpoint: f64,
    e_restore: f64,
) -> Result<Thresholds> {
    let v_psleep = voltage_for_energy(capacitance, v_pclose, e_op + e_checkpoint)?;
    let v_pgood = voltage_for_energy(capacitance, v_psleep, e_op + e_restore)?;
    let th = Thresholds {
        v_pstart,
        v_pgood,
        v_psleep,
        v_pclose,
    };
    th.validate()?;
    Ok(th)
}

/// Inputs to the analytic APC polling screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApcSketch {
    pub capacitance: f64,
    pub thresholds: Thresholds,
    pub e_adc: f64,
    /// Static draw excluding polling (monitoring base, regulator, sleep).
    pub base_power: f64,
    pub checkpoint_energy: f64,
    /// Fastest storage-voltage decline while operating.
    pub max_dv_dt: f64,
    /// Lowest harvested power that must sustain deep sleep.
    pub min_harvest: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandVerdict {
    Feasible,
    Oversampled,
    Undersampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    pub fs: f64,
    pub static_power: f64,
    pub verdict: BandVerdict,
}

/// Screens each candidate polling frequency. Oversampling is checked first:
/// a rate whose own draw cannot be sustained fails regardless of latency.
pub fn apc_band(sketch: &ApcSketch, fs_candidates: &[f64]) -> Result<Vec<BandEntry>> {
    sketch.thresholds.validate()?;
    let th = sketch.thresholds;
    let floor = voltage_for_energy(sketch.capacitance, th.v_pclose, sketch.checkpoint_energy)?;
    fs_candidates
        .iter()
        .map(|&fs| {
            if !(fs > 0.0) {
                return Err(SimError::Domain(format!("fs must be > 0, got {fs}")));
            }
            let static_power = fs * sketch.e_adc + sketch.base_power;
            let verdict = if static_power > sketch.min_harvest {
                BandVerdict::Oversampled
            } else if sketch.max_dv_dt / fs > th.v_psleep - floor {
                BandVerdict::Undersampled
            } else {
                BandVerdict::Feasible
            };
            Ok(BandEntry {
                fs,
                static_power,
                verdict,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn min_capacitance_examples() {
        let c = min_capacitance(69.7e-6, 0.0, 1.0, 5.0, 3.6).unwrap();
        assert_relative_eq!(c, 2.0 * 69.7e-6 / 12.04, max_relative = 1e-12);
        assert_relative_eq!(c, 11.58e-6, max_relative = 1e-3);
        assert_eq!(min_capacitance(0.0, 0.0, 1.0, 5.0, 3.6).unwrap(), 0.0);
        let c2 = min_capacitance(139.4e-6, 0.0, 1.0, 5.0, 3.6).unwrap();
        assert_relative_eq!(c2, 2.0 * c, max_relative = 1e-12);
        assert!(min_capacitance(1e-6, 0.0, 1.0, 3.6, 3.6).is_err());
        assert!(min_capacitance(1e-6, 0.0, 0.0, 5.0, 3.6).is_err());
    }

    #[test]
    fn recharge_time_examples() {
        assert_relative_eq!(recharge_time(6800e-6, 3.7, 5.2, 0.227e-3).unwrap(), 200.0, max_relative = 1e-3);
        assert_relative_eq!(recharge_time(6800e-6, 0.0, 4.7, 0.167e-3).unwrap(), 450.0, max_relative = 1e-3);
        assert_eq!(recharge_time(1e-3, 3.0, 3.0, 1e-3).unwrap(), 0.0);
        assert!(recharge_time(1e-3, 3.0, 4.0, 0.0).is_err());
    }

    #[test]
    fn recharge_time_f32() {
        let t = recharge_time(6800e-6_f32, 3.7, 5.2, 0.227e-3).unwrap();
        assert!((t - 200.0).abs() < 0.5);
    }

    #[test]
    fn derived_thresholds_hold_budget() {
        let (c, e_op, e_ck, e_rs) = (10e-6, 18.877e-6, 8.272e-6, 8.228e-6);
        let th = derive_apc_thresholds(c, 5.0, 3.6, e_op, e_ck, e_rs).unwrap();
        let below = 0.5 * c * (th.v_psleep.powi(2) - 3.6_f64.powi(2));
        let above = 0.5 * c * (th.v_pgood.powi(2) - th.v_psleep.powi(2));
        assert_relative_eq!(below, e_op + e_ck, max_relative = 1e-12);
        assert_relative_eq!(above, e_op + e_rs, max_relative = 1e-12);
    }

    fn sketch() -> ApcSketch {
        ApcSketch {
            capacitance: 10e-6,
            thresholds: Thresholds {
                v_pstart: 5.0,
                v_pgood: 4.88,
                v_psleep: 4.29,
                v_pclose: 3.6,
            },
            e_adc: 1.29e-6,
            base_power: 27.005e-6 + 2.06e-6,
            checkpoint_energy: 8.272e-6,
            max_dv_dt: 0.5,
            min_harvest: 45e-6,
        }
    }

    #[test]
    fn band_matches_polling_regimes() {
        let band = apc_band(&sketch(), &[0.5, 4.0, 20.0]).unwrap();
        let v: Vec<_> = band.iter().map(|b| b.verdict).collect();
        assert_eq!(
            v,
            vec![BandVerdict::Undersampled, BandVerdict::Feasible, BandVerdict::Oversampled]
        );
        assert_relative_eq!(band[2].static_power, 52.80e-6 + 2.06e-6, max_relative = 1e-3);
        assert!(apc_band(&sketch(), &[0.0]).is_err());
    }
}
