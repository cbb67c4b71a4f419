//! Battery physics shared by the simulator, the analytical predictor and the
//! RL environment: SoH degradation of capacity and power, the CC-CV power
//! acceptance law, and the affine pack-voltage model.
//!
//! Units: energy in kWh, power in kW, voltage in V, temperature in °C and
//! SoC/SoH as fractions in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of peak power retained by a fully degraded pack.
pub const POWER_FADE_FLOOR: f64 = 0.85;

/// Default CC→CV transition SoC.
pub const DEFAULT_S_CV: f64 = 0.8;

/// Ratio of the voltage–SoC slope to the nominal voltage.
pub const DEFAULT_BETA_RATIO: f64 = 0.2;

pub const K_TAPER_MIN: f64 = 5.0;
pub const K_TAPER_MAX: f64 = 15.0;

const T_AMB_MIN: f64 = -40.0;
const T_AMB_MAX: f64 = 60.0;

/// Nominal parameters of one vehicle platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    /// Nominal energy capacity (kWh).
    pub c_bat_nom: f64,
    /// Nominal maximum charging power (kW).
    pub p_max_nom: f64,
    /// Nominal pack voltage (V).
    pub v_nom: f64,
    /// Cable power limit (kW).
    pub p_cable: f64,
    /// Voltage–SoC slope (V per unit SoC).
    pub beta: f64,
}

impl VehicleSpec {
    /// Builds a spec with the default slope `beta = 0.2 * v_nom`.
    pub fn new(c_bat_nom: f64, p_max_nom: f64, v_nom: f64, p_cable: f64) -> Self {
        VehicleSpec {
            c_bat_nom,
            p_max_nom,
            v_nom,
            p_cable,
            beta: DEFAULT_BETA_RATIO * v_nom,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_bat_nom", self.c_bat_nom),
            ("p_max_nom", self.p_max_nom),
            ("v_nom", self.v_nom),
            ("p_cable", self.p_cable),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Domain(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Input side of a charging session; the charging time is the output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargingScenario {
    pub s_ini: f64,
    pub s_final: f64,
    /// Station power (kW).
    pub p_station: f64,
    pub soh: f64,
    /// Ambient temperature (°C).
    pub t_amb: f64,
    pub vehicle: VehicleSpec,
}

impl ChargingScenario {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        if !(self.s_ini.is_finite() && self.s_final.is_finite()) {
            return Err(Error::Domain("SoC bounds must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.s_ini) || !(0.0..=1.0).contains(&self.s_final) {
            return Err(Error::Domain(format!(
                "SoC bounds must lie in [0, 1], got {} -> {}",
                self.s_ini, self.s_final
            )));
        }
        if self.s_ini >= self.s_final {
            return Err(Error::Precondition(format!(
                "s_ini ({}) must be strictly below s_final ({})",
                self.s_ini, self.s_final
            )));
        }
        check_soh(self.soh)?;
        if !(self.p_station.is_finite() && self.p_station > 0.0) {
            return Err(Error::Domain(format!(
                "station power must be > 0, got {}",
                self.p_station
            )));
        }
        check_temperature(self.t_amb)?;
        Ok(())
    }

    pub fn limits(&self) -> Result<DegradedLimits> {
        DegradedLimits::new(&self.vehicle, self.soh)
    }
}

/// Piecewise-linear temperature efficiency, equal to one at `t_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempModel {
    pub t_ref: f64,
    pub cold_slope: f64,
    pub cold_floor: f64,
    pub hot_slope: f64,
    pub hot_floor: f64,
}

impl Default for TempModel {
    fn default() -> Self {
        TempModel {
            t_ref: 25.0,
            cold_slope: 0.006,
            cold_floor: 0.6,
            hot_slope: 0.003,
            hot_floor: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub s_cv: f64,
    pub k_taper: f64,
    pub temp_model: TempModel,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            s_cv: DEFAULT_S_CV,
            k_taper: 10.0,
            temp_model: TempModel::default(),
        }
    }
}

impl PhysicsParams {
    pub fn with_k_taper(k_taper: f64) -> Self {
        PhysicsParams {
            k_taper,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_cv > 0.0 && self.s_cv < 1.0) {
            return Err(Error::Domain(format!("s_cv must be in (0, 1), got {}", self.s_cv)));
        }
        if !(K_TAPER_MIN..=K_TAPER_MAX).contains(&self.k_taper) {
            return Err(Error::Domain(format!(
                "k_taper must be in [{K_TAPER_MIN}, {K_TAPER_MAX}], got {}",
                self.k_taper
            )));
        }
        Ok(())
    }
}

/// Capacity and power limits after SoH degradation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradedLimits {
    pub c_bat_eff: f64,
    pub p_max_eff: f64,
}

impl DegradedLimits {
    pub fn new(spec: &VehicleSpec, soh: f64) -> Result<Self> {
        Ok(DegradedLimits {
            c_bat_eff: effective_capacity(spec.c_bat_nom, soh)?,
            p_max_eff: effective_max_power(spec.p_max_nom, soh)?,
        })
    }
}

fn check_soh(soh: f64) -> Result<()> {
    if soh.is_finite() && soh > 0.0 && soh <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("SoH must be in (0, 1], got {soh}")))
    }
}

fn check_temperature(t_amb: f64) -> Result<()> {
    if (T_AMB_MIN..=T_AMB_MAX).contains(&t_amb) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "ambient temperature must be in [{T_AMB_MIN}, {T_AMB_MAX}] °C, got {t_amb}"
        )))
    }
}

/// Capacity fade: `c_nom * soh`.
pub fn effective_capacity(c_nom: f64, soh: f64) -> Result<f64> {
    if !(c_nom.is_finite() && c_nom > 0.0) {
        return Err(Error::Domain(format!("capacity must be > 0, got {c_nom}")));
    }
    check_soh(soh)?;
    Ok(c_nom * soh)
}

/// Power fade: `p_nom * (0.85 + 0.15 * soh)`.
pub fn effective_max_power(p_nom: f64, soh: f64) -> Result<f64> {
    if !(p_nom.is_finite() && p_nom > 0.0) {
        return Err(Error::Domain(format!("power must be > 0, got {p_nom}")));
    }
    check_soh(soh)?;
    Ok(power_fade_ratio(soh) * p_nom)
}

/// `P_eff / P_nom` for a given SoH, without domain checks.
#[inline]
pub fn power_fade_ratio(soh: f64) -> f64 {
    POWER_FADE_FLOOR + (1.0 - POWER_FADE_FLOOR) * soh
}

/// CV-phase multiplier: 1 below `s_cv`, `exp(-k (s - s_cv))` above.
pub fn taper_factor(s: f64, params: &PhysicsParams) -> f64 {
    if s < params.s_cv {
        1.0
    } else {
        (-params.k_taper * (s - params.s_cv)).exp()
    }
}

pub fn temperature_efficiency(t_amb: f64, params: &PhysicsParams) -> Result<f64> {
    check_temperature(t_amb)?;
    let m = &params.temp_model;
    let eta = if t_amb < m.t_ref {
        (1.0 - m.cold_slope * (m.t_ref - t_amb)).max(m.cold_floor)
    } else {
        (1.0 - m.hot_slope * (t_amb - m.t_ref)).max(m.hot_floor)
    };
    Ok(eta)
}

/// SoH-dependent vehicle power acceptance (kW), including the CV taper.
pub fn vehicle_power_acceptance(
    s: f64,
    soh: f64,
    t_amb: f64,
    spec: &VehicleSpec,
    params: &PhysicsParams,
) -> Result<f64> {
    let p_eff = effective_max_power(spec.p_max_nom, soh)?;
    let eta = temperature_efficiency(t_amb, params)?;
    Ok(p_eff * eta * taper_factor(s, params))
}

/// Delivered power: the smallest of vehicle acceptance, station and cable.
pub fn actual_power(s: f64, scenario: &ChargingScenario, params: &PhysicsParams) -> Result<f64> {
    let accept = vehicle_power_acceptance(
        s,
        scenario.soh,
        scenario.t_amb,
        &scenario.vehicle,
        params,
    )?;
    Ok(accept.min(scenario.p_station).min(scenario.vehicle.p_cable))
}

/// Affine pack voltage `v_nom + beta (s - 0.5)`.
#[inline]
pub fn pack_voltage(s: f64, spec: &VehicleSpec) -> f64 {
    spec.v_nom + spec.beta * (s - 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: f64, p: f64) -> VehicleSpec {
        VehicleSpec::new(c, p, 400.0, 200.0)
    }

    fn scenario(p_nom: f64, p_station: f64, p_cable: f64, soh: f64) -> ChargingScenario {
        ChargingScenario {
            s_ini: 0.2,
            s_final: 0.9,
            p_station,
            soh,
            t_amb: 25.0,
            vehicle: VehicleSpec::new(75.0, p_nom, 400.0, p_cable),
        }
    }

    #[test]
    fn capacity_fade_examples() {
        assert_eq!(effective_capacity(75.0, 1.0).unwrap(), 75.0);
        assert!((effective_capacity(100.0, 0.7).unwrap() - 70.0).abs() < 1e-12);
        assert!((effective_capacity(60.0, 0.85).unwrap() - 51.0).abs() < 1e-12);
        assert!(effective_capacity(0.0, 0.9).is_err());
        assert!(effective_capacity(60.0, 0.0).is_err());
        assert!(effective_capacity(60.0, 1.01).is_err());
    }

    #[test]
    fn power_fade_examples() {
        assert_eq!(effective_max_power(150.0, 1.0).unwrap(), 150.0);
        assert!((effective_max_power(150.0, 0.7).unwrap() - 143.25).abs() < 1e-9);
        // SoH = 0 is rejected, but the asymptote is the 0.85 floor.
        assert!(effective_max_power(50.0, 0.0).is_err());
        assert!((power_fade_ratio(0.0) * 50.0 - 42.5).abs() < 1e-12);
        let tiny = effective_max_power(50.0, 1e-12).unwrap();
        assert!((tiny - 42.5).abs() < 1e-9);
    }

    #[test]
    fn taper_examples() {
        let p = PhysicsParams::default();
        assert_eq!(taper_factor(0.8, &p), 1.0);
        assert!((taper_factor(0.9, &p) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((taper_factor(0.9, &p) - 0.36788).abs() < 1e-5);
        for k in [5.0, 10.0, 15.0] {
            assert_eq!(taper_factor(0.5, &PhysicsParams::with_k_taper(k)), 1.0);
        }
    }

    #[test]
    fn temperature_examples() {
        let p = PhysicsParams::default();
        assert_eq!(temperature_efficiency(25.0, &p).unwrap(), 1.0);
        assert!((temperature_efficiency(-10.0, &p).unwrap() - 0.79).abs() < 1e-12);
        assert!((temperature_efficiency(40.0, &p).unwrap() - 0.955).abs() < 1e-12);
        assert!((temperature_efficiency(-40.0, &p).unwrap() - 0.61).abs() < 1e-12);
        let cold = PhysicsParams { temp_model: TempModel { cold_slope: 0.02, ..TempModel::default() }, ..p };
        assert_eq!(temperature_efficiency(-40.0, &cold).unwrap(), 0.6);
        assert!(temperature_efficiency(-40.1, &p).is_err());
        assert!(temperature_efficiency(61.0, &p).is_err());
    }

    #[test]
    fn acceptance_examples() {
        let p = PhysicsParams::default();
        let v = spec(75.0, 150.0);
        assert_eq!(vehicle_power_acceptance(0.5, 1.0, 25.0, &v, &p).unwrap(), 150.0);
        let cv = vehicle_power_acceptance(0.9, 1.0, 25.0, &v, &p).unwrap();
        assert!((cv - 55.18).abs() < 5e-3, "{cv}");
        let aged = vehicle_power_acceptance(0.5, 0.7, 25.0, &v, &p).unwrap();
        assert!((aged - 143.25).abs() < 1e-9);
    }

    #[test]
    fn actual_power_selects_minimum() {
        let p = PhysicsParams::default();
        assert_eq!(actual_power(0.5, &scenario(150.0, 50.0, 200.0, 1.0), &p).unwrap(), 50.0);
        let cv = actual_power(0.9, &scenario(150.0, 150.0, 150.0, 1.0), &p).unwrap();
        assert!((cv - 150.0 * (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(actual_power(0.5, &scenario(150.0, 150.0, 120.0, 1.0), &p).unwrap(), 120.0);
    }

    #[test]
    fn voltage_examples() {
        let v = VehicleSpec {
            beta: 80.0,
            ..spec(75.0, 150.0)
        };
        assert_eq!(pack_voltage(0.5, &v), 400.0);
        assert_eq!(pack_voltage(1.0, &v), 440.0);
        assert_eq!(pack_voltage(0.0, &v), 360.0);
    }

    #[test]
    fn scenario_validation() {
        let mut sc = scenario(150.0, 50.0, 200.0, 1.0);
        assert!(sc.validate().is_ok());
        sc.s_final = sc.s_ini;
        assert!(matches!(sc.validate(), Err(Error::Precondition(_))));
        let mut sc = scenario(150.0, 50.0, 200.0, 1.0);
        sc.p_station = 0.0;
        assert!(sc.validate().is_err());
        let mut sc = scenario(150.0, 50.0, 200.0, 1.0);
        sc.soh = 0.0;
        assert!(sc.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn power_fade_floor_and_linearity(p in 1.0f64..500.0, a in 0.01f64..1.0, b in 0.01f64..1.0) {
                let pa = effective_max_power(p, a).unwrap();
                let pb = effective_max_power(p, b).unwrap();
                prop_assert!(pa >= 0.85 * p - 1e-9);
                // Linear in SoH: slope is constant.
                let mid = effective_max_power(p, 0.5 * (a + b)).unwrap();
                prop_assert!((mid - 0.5 * (pa + pb)).abs() < 1e-9 * p);
                let ca = effective_capacity(p, a).unwrap();
                let cm = effective_capacity(p, 0.5 * (a + b)).unwrap();
                let cb = effective_capacity(p, b).unwrap();
                prop_assert!((cm - 0.5 * (ca + cb)).abs() < 1e-9 * p);
            }

            #[test]
            fn taper_continuous_and_decreasing(k in 5.0f64..15.0, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0) {
                let p = PhysicsParams::with_k_taper(k);
                // Continuity at the CC/CV boundary.
                let left = taper_factor(p.s_cv - 1e-12, &p);
                let right = taper_factor(p.s_cv + 1e-12, &p);
                prop_assert!((left - right).abs() < 1e-9);
                let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
                if lo <= p.s_cv && hi <= p.s_cv {
                    prop_assert_eq!(taper_factor(lo, &p), 1.0);
                    prop_assert_eq!(taper_factor(hi, &p), 1.0);
                } else if lo > p.s_cv && hi > lo {
                    prop_assert!(taper_factor(hi, &p) < taper_factor(lo, &p));
                }
            }

            #[test]
            fn actual_power_monotone_in_caps(
                s in 0.0f64..1.0, ps in 5.0f64..300.0, cable in 5.0f64..300.0,
                cut in 0.1f64..1.0, soh in 0.7f64..1.0,
            ) {
                let p = PhysicsParams::default();
                let base = scenario(150.0, ps, cable, soh);
                let a = actual_power(s, &base, &p).unwrap();
                let lower_station = ChargingScenario { p_station: ps * cut, ..base };
                prop_assert!(actual_power(s, &lower_station, &p).unwrap() <= a);
                let mut lower_cable = base;
                lower_cable.vehicle.p_cable = cable * cut;
                prop_assert!(actual_power(s, &lower_cable, &p).unwrap() <= a);
                let mut lower_vehicle = base;
                lower_vehicle.vehicle.p_max_nom = 150.0 * cut;
                prop_assert!(actual_power(s, &lower_vehicle, &p).unwrap() <= a);
            }

            #[test]
            fn acceptance_monotone_in_soh(s in 0.0f64..1.0, a in 0.01f64..1.0, b in 0.01f64..1.0, t in -40.0f64..60.0) {
                let p = PhysicsParams::default();
                let v = spec(75.0, 150.0);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let plo = vehicle_power_acceptance(s, lo, t, &v, &p).unwrap();
                let phi = vehicle_power_acceptance(s, hi, t, &v, &p).unwrap();
                prop_assert!(phi >= plo);
            }

            #[test]
            fn temperature_monotone_away_from_reference(d1 in 0.0f64..35.0, d2 in 0.0f64..35.0) {
                let p = PhysicsParams::default();
                let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
                for sign in [-1.0, 1.0] {
                    let e_lo = temperature_efficiency(25.0 + sign * lo, &p).unwrap();
                    let e_hi = temperature_efficiency(25.0 + sign * hi, &p).unwrap();
                    prop_assert!(e_hi <= e_lo);
                    prop_assert!(e_hi > 0.0 && e_lo <= 1.0);
                }
            }
        }
    }
}
