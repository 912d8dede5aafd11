//! Storage capacitor and regulator models.
//!
//! The capacitor is integrated in the energy domain: state is the stored
//! energy, and voltage is derived as `sqrt(2E/C)`. Constant-power charging is
//! therefore exact for any step size.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::Scalar;

/// Default input clamp of the storage node, in volts.
pub const DEFAULT_V_MAX: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacitor<T = f64> {
    capacitance: T,
    energy: T,
    /// Parallel leakage resistance; `None` is an ideal capacitor.
    r_leak: Option<T>,
    v_max: T,
}

/// Per-step energy bookkeeping returned by [`Capacitor::integrate_step`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyDelta<T = f64> {
    pub harvested: T,
    pub delivered: T,
    pub leaked: T,
    pub discarded: T,
    /// The load asked for more than was stored; delivery was truncated.
    pub starved: bool,
}

impl<T: Scalar> Capacitor<T> {
    pub fn new(capacitance: T, v: T, r_leak: Option<T>, v_max: T) -> Result<Self> {
        if !(capacitance > T::zero()) || !capacitance.is_finite() {
            return Err(SimError::Domain(format!(
                "capacitance must be > 0, got {capacitance}"
            )));
        }
        if !(v_max > T::zero()) {
            return Err(SimError::Domain(format!("v_max must be > 0, got {v_max}")));
        }
        if !(v >= T::zero() && v <= v_max) {
            return Err(SimError::Domain(format!(
                "initial voltage {v} outside [0, {v_max}]"
            )));
        }
        if let Some(r) = r_leak {
            if !(r > T::zero()) {
                return Err(SimError::Domain(format!("r_leak must be > 0, got {r}")));
            }
        }
        Ok(Self {
            capacitance,
            energy: T::half() * capacitance * v * v,
            r_leak,
            v_max,
        })
    }

    /// Ideal capacitor at zero volts with the default clamp.
    pub fn empty(capacitance: T) -> Result<Self> {
        Self::new(capacitance, T::zero(), None, T::lit(DEFAULT_V_MAX))
    }

    pub fn capacitance(&self) -> T {
        self.capacitance
    }

    pub fn v_max(&self) -> T {
        self.v_max
    }

    pub fn r_leak(&self) -> Option<T> {
        self.r_leak
    }

    pub fn voltage(&self) -> T {
        (T::two() * self.energy / self.capacitance).sqrt()
    }

    /// `½·C·v²`.
    pub fn stored_energy(&self) -> T {
        self.energy
    }

    pub fn max_energy(&self) -> T {
        T::half() * self.capacitance * self.v_max * self.v_max
    }

    /// Power currently lost through the leakage resistance.
    pub fn leak_power(&self) -> T {
        match self.r_leak {
            Some(r) => {
                let v = self.voltage();
                v * v / r
            }
            None => T::zero(),
        }
    }

    /// Advances the stored energy by one explicit-Euler step.
    ///
    /// The returned delta always satisfies
    /// `harvested - delivered - leaked - discarded == E' - E`.
    pub fn integrate_step(&mut self, p_in: T, p_out: T, dt: T) -> EnergyDelta<T> {
        debug_assert!(dt > T::zero());
        let harvested = p_in.max(T::zero()) * dt;
        let mut delivered = p_out.max(T::zero()) * dt;
        let mut leaked = self.leak_power() * dt;
        let e0 = self.energy;
        let raw = e0 + harvested - delivered - leaked;
        let e_max = self.max_energy();
        let mut delta = EnergyDelta {
            harvested,
            ..Default::default()
        };
        if raw > e_max {
            delta.discarded = raw - e_max;
            self.energy = e_max;
        } else if raw < T::zero() {
            // Leakage is taken first; the load gets what is left.
            let available = e0 + harvested;
            if leaked > available {
                leaked = available;
                delivered = T::zero();
            } else {
                delivered = available - leaked;
            }
            delta.starved = true;
            self.energy = T::zero();
        } else {
            self.energy = raw;
        }
        delta.delivered = delivered;
        delta.leaked = leaked;
        delta
    }
}

/// `½·C·(v_hi² − v_lo²)`: energy released between two voltages.
pub fn usable_energy<T: Scalar>(capacitance: T, v_hi: T, v_lo: T) -> Result<T> {
    if !(v_hi >= v_lo) || !(v_lo >= T::zero()) {
        return Err(SimError::Domain(format!(
            "need v_hi >= v_lo >= 0, got v_hi = {v_hi}, v_lo = {v_lo}"
        )));
    }
    Ok(T::half() * capacitance * (v_hi * v_hi - v_lo * v_lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegulatorKind {
    Buck,
    Boost,
    Linear,
}

/// DC-DC or linear regulator between the capacitor and the load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorModel<T = f64> {
    pub kind: RegulatorKind,
    /// Average conversion efficiency in `(0, 1]`.
    pub eta: T,
    /// Operating draw of the regulator itself while enabled.
    pub p_quiescent: T,
    /// Regulated output rail; informational only.
    pub v_out: T,
}

impl<T: Scalar> RegulatorModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > T::zero() && self.eta <= T::one()) {
            return Err(SimError::Domain(format!(
                "eta must be in (0, 1], got {}",
                self.eta
            )));
        }
        if !(self.p_quiescent >= T::zero()) {
            return Err(SimError::Domain(format!(
                "p_quiescent must be >= 0, got {}",
                self.p_quiescent
            )));
        }
        Ok(())
    }

    /// Power pulled from the capacitor to supply `p_load` at the output.
    pub fn draw(&self, p_load: T) -> T {
        p_load / self.eta + self.p_quiescent
    }
}

/// Free-function form of [`RegulatorModel::draw`].
pub fn regulator_draw<T: Scalar>(reg: &RegulatorModel<T>, p_load: T) -> T {
    reg.draw(p_load)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stored_energy_values() {
        assert_eq!(Capacitor::new(10e-6, 0.0, None, 25.0).unwrap().stored_energy(), 0.0);
        let c = Capacitor::new(4700e-6, 4.7, None, 25.0).unwrap();
        assert_relative_eq!(c.stored_energy(), 0.5 * 4.7e-3 * 4.7 * 4.7, max_relative = 1e-12);
        assert_relative_eq!(c.stored_energy(), 51.9115e-3, max_relative = 1e-4);
        let c = Capacitor::new(2.2e-6, 6.7, None, 25.0).unwrap();
        assert_relative_eq!(c.stored_energy(), 49.379e-6, max_relative = 1e-4);
    }

    #[test]
    fn usable_energy_values() {
        assert_relative_eq!(usable_energy(10e-6, 5.0, 3.6).unwrap(), 60.2e-6, max_relative = 1e-12);
        assert_eq!(usable_energy(1e-3, 3.0, 3.0).unwrap(), 0.0);
        let lora = usable_energy(6800e-6, 5.2, 3.7).unwrap();
        assert_relative_eq!(lora, 45.39e-3, max_relative = 1e-12);
        assert!(lora > 23.86e-3);
        assert!(usable_energy(1e-6, 3.0, 4.0).is_err());
    }

    #[test]
    fn constant_power_charge_matches_closed_form() {
        let mut c = Capacitor::<f64>::empty(4700e-6).unwrap();
        let p = 1.2e-3;
        let dt = 1e-3;
        let mut t = 0.0;
        while c.voltage() < 4.7 {
            c.integrate_step(p, 0.0, dt);
            t += dt;
        }
        let analytic = 4700e-6 * 4.7 * 4.7 / (2.0 * p);
        assert_relative_eq!(analytic, 43.26, max_relative = 1e-3);
        assert!((t - analytic).abs() <= 2.0 * dt);
    }

    #[test]
    fn equilibrium_holds_voltage() {
        let mut c = Capacitor::new(100e-6, 3.3, None, 25.0).unwrap();
        for _ in 0..1000 {
            c.integrate_step(1e-3, 1e-3, 1e-3);
        }
        assert_relative_eq!(c.voltage(), 3.3, max_relative = 1e-12);
    }

    #[test]
    fn clamp_discards_surplus() {
        let mut c = Capacitor::new(1e-6, 5.0, None, 5.0).unwrap();
        let d = c.integrate_step(2e-3, 0.0, 1e-3);
        assert_eq!(c.voltage(), 5.0);
        assert_relative_eq!(d.discarded, 2e-6, max_relative = 1e-12);
    }

    #[test]
    fn starvation_truncates_delivery() {
        let mut c = Capacitor::new(1e-6, 1.0, None, 5.0).unwrap();
        let d = c.integrate_step(0.0, 1.0, 1.0);
        assert!(d.starved);
        assert_eq!(c.stored_energy(), 0.0);
        assert_relative_eq!(d.delivered, 0.5e-6, max_relative = 1e-12);
    }

    #[test]
    fn leakage_drains() {
        let mut c = Capacitor::new(1e-3, 5.0, Some(1e4), 25.0).unwrap();
        let d = c.integrate_step(0.0, 0.0, 1.0);
        assert_relative_eq!(d.leaked, 25.0 / 1e4, max_relative = 1e-12);
        assert!(c.voltage() < 5.0);
    }

    #[test]
    fn regulator_draw_values() {
        let ideal = RegulatorModel {
            kind: RegulatorKind::Buck,
            eta: 1.0,
            p_quiescent: 0.0,
            v_out: 3.3,
        };
        assert_eq!(regulator_draw(&ideal, 1e-3), 1e-3);
        let lossy = RegulatorModel {
            eta: 0.8,
            p_quiescent: 5e-6,
            ..ideal
        };
        assert_eq!(lossy.draw(0.0), 5e-6);
        assert_relative_eq!(lossy.draw(1e-3), 1.255e-3, max_relative = 1e-12);
        assert!(RegulatorModel { eta: 0.0, ..ideal }.validate().is_err());
        assert!(RegulatorModel { eta: 1.1, ..ideal }.validate().is_err());
    }
}
