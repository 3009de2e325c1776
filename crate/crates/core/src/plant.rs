//! Nonlinear cart-pole plant.
//!
//! The rod is a uniform bar of mass `m` and length `l` hinged on the cart, so
//! its centre of mass sits at `l/2` and its inertia about the pivot is
//! `m l^2 / 3`. `theta = 0` is upright and positive `theta` leans the rod
//! toward positive cart position. The motor drive is a voltage in
//! `[0, voltage_span]` interpreted bipolarly about `voltage_mid`, with a
//! symmetric dead zone and a force saturation.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Physical and actuator parameters of the rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    pub cart_mass: f64,
    pub rod_mass: f64,
    pub rod_length: f64,
    pub gravity: f64,
    /// Newtons per effective volt.
    pub motor_gain: f64,
    /// Viscous friction, N·s/m.
    pub dynamic_friction: f64,
    /// Coulomb friction magnitude, N.
    pub static_friction: f64,
    pub rail_half_length: f64,
    pub angle_limit: f64,
    pub dead_zone_volts: f64,
    pub voltage_mid: f64,
    pub voltage_span: f64,
    pub force_max: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            rod_mass: 0.1,
            rod_length: 0.5,
            gravity: 9.81,
            motor_gain: 10.0,
            dynamic_friction: 5.0,
            static_friction: 0.5,
            rail_half_length: 0.5,
            angle_limit: 0.5,
            dead_zone_volts: 0.2,
            voltage_mid: 2.5,
            voltage_span: 5.0,
            force_max: 20.0,
        }
    }
}

impl PlantParams {
    /// Returns `(field, message)` for the first violated invariant.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("rod_mass", self.rod_mass),
            ("rod_length", self.rod_length),
            ("gravity", self.gravity),
            ("rail_half_length", self.rail_half_length),
            ("voltage_span", self.voltage_span),
            ("force_max", self.force_max),
            ("motor_gain", self.motor_gain),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("dynamic_friction", self.dynamic_friction),
            ("static_friction", self.static_friction),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err((name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.dead_zone_volts >= 0.0 && self.dead_zone_volts < self.voltage_span / 2.0) {
            return Err((
                "dead_zone_volts",
                format!(
                    "must lie in [0, voltage_span/2), got {}",
                    self.dead_zone_volts
                ),
            ));
        }
        if !(self.voltage_mid.is_finite()
            && self.voltage_mid > 0.0
            && self.voltage_mid < self.voltage_span)
        {
            return Err((
                "voltage_mid",
                format!(
                    "must lie inside (0, voltage_span), got {}",
                    self.voltage_mid
                ),
            ));
        }
        if !(self.angle_limit > 0.0 && self.angle_limit < std::f64::consts::FRAC_PI_2) {
            return Err((
                "angle_limit",
                format!("must lie in (0, pi/2), got {}", self.angle_limit),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(f, m)| Error::InvalidInput(format!("plant.{f}: {m}")))
    }

    /// `m l / 2`, the coupling term between cart and rod.
    fn rod_moment(&self) -> f64 {
        self.rod_mass * self.rod_length / 2.0
    }

    /// Rod inertia about the pivot.
    fn rod_inertia(&self) -> f64 {
        self.rod_mass * self.rod_length * self.rod_length / 3.0
    }

    pub fn clamp_voltage(&self, voltage: f64) -> f64 {
        voltage.clamp(0.0, self.voltage_span)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub p: f64,
    pub p_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub t: f64,
}

impl PlantState {
    pub fn new(p: f64, p_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self {
            p,
            p_dot,
            theta,
            theta_dot,
            t: 0.0,
        }
    }

    /// `[p, p_dot, theta, theta_dot]`
    pub fn vector(&self) -> Vector4<f64> {
        Vector4::new(self.p, self.p_dot, self.theta, self.theta_dot)
    }

    pub fn from_vector(x: &Vector4<f64>, t: f64) -> Self {
        Self {
            p: x[0],
            p_dot: x[1],
            theta: x[2],
            theta_dot: x[3],
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vector().iter().all(|v| v.is_finite()) && self.t.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub offset_p: f64,
    pub offset_theta: f64,
    /// Metres per count, 0 disables quantization.
    pub quant_p: f64,
    /// Radians per count, 0 disables quantization.
    pub quant_theta: f64,
    pub noise_std_p: f64,
    pub noise_std_theta: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::rig()
    }
}

impl SensorModel {
    /// Default rig sensors: a 0.1 mm cart encoder, a 4096-count angle
    /// encoder and small white noise on both channels.
    pub fn rig() -> Self {
        Self {
            offset_p: 0.0,
            offset_theta: 0.0,
            quant_p: 1e-4,
            quant_theta: 2.0 * std::f64::consts::PI / 4096.0,
            noise_std_p: 5e-4,
            noise_std_theta: 1e-3,
        }
    }

    /// Perfect sensors.
    pub fn ideal() -> Self {
        Self {
            offset_p: 0.0,
            offset_theta: 0.0,
            quant_p: 0.0,
            quant_theta: 0.0,
            noise_std_p: 0.0,
            noise_std_theta: 0.0,
        }
    }

    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        for (name, v) in [
            ("quant_p", self.quant_p),
            ("quant_theta", self.quant_theta),
            ("noise_std_p", self.noise_std_p),
            ("noise_std_theta", self.noise_std_theta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err((name, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("offset_p", self.offset_p),
            ("offset_theta", self.offset_theta),
        ] {
            if !v.is_finite() {
                return Err((name, format!("must be finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Effective measurement variances: white noise plus uniform
    /// quantization error (`step^2 / 12`).
    pub fn variances(&self) -> (f64, f64) {
        (
            self.noise_std_p.powi(2) + self.quant_p.powi(2) / 12.0,
            self.noise_std_theta.powi(2) + self.quant_theta.powi(2) / 12.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measurement {
    pub p_meas: f64,
    pub theta_meas: f64,
    pub t: f64,
}

/// Motor force for a drive voltage already clamped to `[0, voltage_span]`.
pub fn apply_actuator(voltage: f64, params: &PlantParams) -> Result<f64> {
    if !voltage.is_finite() {
        return Err(Error::InvalidInput(format!("actuator voltage {voltage}")));
    }
    let u = voltage - params.voltage_mid;
    if u.abs() <= params.dead_zone_volts {
        return Ok(0.0);
    }
    Ok((params.motor_gain * u).clamp(-params.force_max, params.force_max))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// State derivative `[p_dot, p_ddot, theta_dot, theta_ddot]` for a given
/// horizontal motor force on the cart.
pub fn dynamics(state: &Vector4<f64>, force: f64, params: &PlantParams) -> Vector4<f64> {
    let p_dot = state[1];
    let theta = state[2];
    let theta_dot = state[3];
    let (s, c) = theta.sin_cos();

    let total_mass = params.cart_mass + params.rod_mass;
    let a = params.rod_moment();
    let j = params.rod_inertia();

    // Generalized force on the cart coordinate, including the centripetal term.
    let cart_force = force - params.dynamic_friction * p_dot - params.static_friction * sign(p_dot)
        + a * s * theta_dot * theta_dot;
    let gravity_torque = a * params.gravity * s;
    let det = total_mass * j - a * a * c * c;

    let p_ddot = (j * cart_force - a * c * gravity_torque) / det;
    let theta_ddot = (total_mass * gravity_torque - a * c * cart_force) / det;
    Vector4::new(p_dot, p_ddot, theta_dot, theta_ddot)
}

/// Total mechanical energy (kinetic + potential, zero potential at the pivot
/// height).
pub fn mechanical_energy(state: &PlantState, params: &PlantParams) -> f64 {
    let total_mass = params.cart_mass + params.rod_mass;
    let a = params.rod_moment();
    let j = params.rod_inertia();
    let c = state.theta.cos();
    0.5 * total_mass * state.p_dot * state.p_dot
        + a * c * state.p_dot * state.theta_dot
        + 0.5 * j * state.theta_dot * state.theta_dot
        + a * params.gravity * c
}

fn rk4(x: &Vector4<f64>, force: f64, params: &PlantParams, dt: f64) -> Vector4<f64> {
    let k1 = dynamics(x, force, params);
    let k2 = dynamics(&(x + k1 * (dt / 2.0)), force, params);
    let k3 = dynamics(&(x + k2 * (dt / 2.0)), force, params);
    let k4 = dynamics(&(x + k3 * dt), force, params);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

const COMPONENTS: [&str; 4] = ["p", "p_dot", "theta", "theta_dot"];

/// Advances the plant by one RK4 step with the motor force held for the
/// whole step. The cart stops dead at the rail ends.
pub fn plant_step(
    state: &PlantState,
    voltage: f64,
    params: &PlantParams,
    dt: f64,
) -> Result<PlantState> {
    if !(dt > 0.0 && dt <= 0.02) {
        return Err(Error::InvalidInput(format!(
            "step size {dt} outside (0, 0.02]"
        )));
    }
    if !voltage.is_finite() {
        return Err(Error::InvalidInput(format!("drive voltage {voltage}")));
    }
    let force = apply_actuator(params.clamp_voltage(voltage), params)?;
    let mut x = rk4(&state.vector(), force, params, dt);
    let t = state.t + dt;
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericBlowup {
            component: COMPONENTS[i],
            t,
        });
    }
    let rail = params.rail_half_length;
    if x[0].abs() > rail {
        x[0] = rail.copysign(x[0]);
        x[1] = 0.0;
    }
    Ok(PlantState::from_vector(&x, t))
}

/// Holds `voltage` for `substeps` RK4 steps spanning `period` seconds.
pub fn advance(
    state: &PlantState,
    voltage: f64,
    params: &PlantParams,
    period: f64,
    substeps: usize,
) -> Result<PlantState> {
    let dt = period / substeps as f64;
    let mut s = *state;
    for _ in 0..substeps {
        s = plant_step(&s, voltage, params, dt)?;
    }
    // keep the clock on the control grid
    s.t = state.t + period;
    Ok(s)
}

fn quantize(x: f64, step: f64) -> f64 {
    if step > 0.0 {
        (x / step).round() * step
    } else {
        x
    }
}

/// Samples the two position sensors. Noise for `p` is drawn before noise for
/// `theta`, both always consumed from the stream.
pub fn measure(state: &PlantState, sensors: &SensorModel, rng: &mut RngStream) -> Measurement {
    let np = rng.gaussian(0.0, 1.0) * sensors.noise_std_p;
    let nt = rng.gaussian(0.0, 1.0) * sensors.noise_std_theta;
    Measurement {
        p_meas: quantize(state.p + sensors.offset_p + np, sensors.quant_p),
        theta_meas: quantize(state.theta + sensors.offset_theta + nt, sensors.quant_theta),
        t: state.t,
    }
}

pub fn is_out_of_bounds(state: &PlantState, params: &PlantParams) -> bool {
    state.p.abs() >= params.rail_half_length || state.theta.abs() >= params.angle_limit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::purpose;
    use proptest::prelude::*;

    fn frictionless() -> PlantParams {
        PlantParams {
            dynamic_friction: 0.0,
            static_friction: 0.0,
            ..PlantParams::default()
        }
    }

    #[test]
    fn actuator_examples() {
        let p = PlantParams::default();
        assert_eq!(apply_actuator(2.5, &p).unwrap(), 0.0);
        assert_eq!(apply_actuator(2.6, &p).unwrap(), 0.0);
        assert_eq!(apply_actuator(5.0, &p).unwrap(), 20.0);
        assert_eq!(apply_actuator(0.0, &p).unwrap(), -20.0);
        assert!((apply_actuator(3.0, &p).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(
            apply_actuator(f64::NAN, &p),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn dead_zone_edge_is_inclusive() {
        let p = PlantParams {
            dead_zone_volts: 0.25,
            ..PlantParams::default()
        };
        assert_eq!(apply_actuator(2.75, &p).unwrap(), 0.0);
        assert_eq!(apply_actuator(2.25, &p).unwrap(), 0.0);
        assert!(apply_actuator(2.7501, &p).unwrap() > 0.0);
    }

    #[test]
    fn upright_equilibrium_is_fixed_point() {
        let d = dynamics(&Vector4::zeros(), 0.0, &PlantParams::default());
        assert_eq!(d, Vector4::zeros());
    }

    #[test]
    fn upright_is_unstable() {
        let d = dynamics(&Vector4::new(0.0, 0.0, 1e-3, 0.0), 0.0, &frictionless());
        assert!(d[3] > 0.0);
        // the cart is pushed back as the rod falls forward
        assert!(d[1] < 0.0);
    }

    #[test]
    fn equilibrium_step_stays_put() {
        let p = PlantParams::default();
        let s = plant_step(&PlantState::default(), 2.5, &p, 0.01).unwrap();
        assert_eq!(s.vector(), Vector4::zeros());
        assert!((s.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn step_size_is_checked() {
        let p = PlantParams::default();
        assert!(plant_step(&PlantState::default(), 2.5, &p, 0.0).is_err());
        assert!(plant_step(&PlantState::default(), 2.5, &p, 0.03).is_err());
        assert!(plant_step(&PlantState::default(), f64::INFINITY, &p, 0.01).is_err());
    }

    #[test]
    fn blowup_names_component() {
        let p = PlantParams::default();
        let s = PlantState::new(0.0, f64::MAX, 0.0, 0.0);
        match plant_step(&s, 2.5, &p, 0.01) {
            Err(Error::NumericBlowup { component, .. }) => {
                assert!(COMPONENTS.contains(&component))
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn rail_end_stop() {
        let p = PlantParams::default();
        let s = PlantState::new(0.499, 2.0, 0.0, 0.0);
        let n = plant_step(&s, 2.5, &p, 0.01).unwrap();
        assert_eq!(n.p, 0.5);
        assert_eq!(n.p_dot, 0.0);
        assert!(is_out_of_bounds(&n, &p));
    }

    #[test]
    fn measurement_examples() {
        let mut rng = RngStream::new(1, purpose::SENSOR_NOISE, &[]);
        let s = PlantState::new(0.1, 0.0, -0.02, 0.0);
        let m = measure(&s, &SensorModel::ideal(), &mut rng);
        assert_eq!((m.p_meas, m.theta_meas), (0.1, -0.02));

        let off = SensorModel {
            offset_p: 0.01,
            ..SensorModel::ideal()
        };
        assert!((measure(&s, &off, &mut rng).p_meas - 0.11).abs() < 1e-15);

        let q = SensorModel {
            quant_p: 0.001,
            ..SensorModel::ideal()
        };
        let s = PlantState::new(0.01234, 0.0, 0.0, 0.0);
        assert!((measure(&s, &q, &mut rng).p_meas - 0.012).abs() < 1e-15);
    }

    #[test]
    fn bounds_examples() {
        let p = PlantParams::default();
        assert!(!is_out_of_bounds(&PlantState::default(), &p));
        assert!(is_out_of_bounds(&PlantState::new(0.5, 0.0, 0.0, 0.0), &p));
        assert!(is_out_of_bounds(&PlantState::new(-0.5, 0.0, 0.0, 0.0), &p));
        assert!(!is_out_of_bounds(&PlantState::new(0.0, 0.0, 0.49, 0.0), &p));
        assert!(is_out_of_bounds(&PlantState::new(0.0, 0.0, -0.5, 0.0), &p));
    }

    #[test]
    fn params_validation() {
        assert!(PlantParams::default().validate().is_ok());
        let bad = PlantParams {
            cart_mass: -1.0,
            ..PlantParams::default()
        };
        assert_eq!(bad.check().unwrap_err().0, "cart_mass");
        let bad = PlantParams {
            dead_zone_volts: 2.5,
            ..PlantParams::default()
        };
        assert_eq!(bad.check().unwrap_err().0, "dead_zone_volts");
        let bad = PlantParams {
            angle_limit: 1.6,
            ..PlantParams::default()
        };
        assert_eq!(bad.check().unwrap_err().0, "angle_limit");
    }

    proptest! {
        #[test]
        fn actuator_is_odd(u in -2.5f64..2.5) {
            let p = PlantParams::default();
            let up = apply_actuator(2.5 + u, &p).unwrap();
            let down = apply_actuator(2.5 - u, &p).unwrap();
            prop_assert!((up + down).abs() < 1e-12);
            if up != 0.0 {
                prop_assert_eq!(up.signum(), u.signum());
            }
        }

        #[test]
        fn cart_stays_on_rail(
            p in -0.5f64..0.5, pd in -5.0f64..5.0, th in -0.4f64..0.4,
            thd in -3.0f64..3.0, v in 0.0f64..5.0,
        ) {
            let params = PlantParams::default();
            let mut s = PlantState::new(p, pd, th, thd);
            for _ in 0..20 {
                s = plant_step(&s, v, &params, 0.01).unwrap();
                prop_assert!(s.p.abs() <= params.rail_half_length);
            }
        }

        #[test]
        fn friction_dissipates_energy(
            pd in -1.0f64..1.0, th in -0.3f64..0.3, thd in -1.0f64..1.0,
        ) {
            let params = PlantParams { dead_zone_volts: 0.0, ..PlantParams::default() };
            let mut s = PlantState::new(0.0, pd, th, thd);
            let mut e = mechanical_energy(&s, &params);
            for _ in 0..200 {
                s = plant_step(&s, params.voltage_mid, &params, 0.001).unwrap();
                let e2 = mechanical_energy(&s, &params);
                // RK4 stages straddling a Coulomb sign change are not smooth
                prop_assert!(e2 <= e * (1.0 + 1e-7), "energy rose from {} to {}", e, e2);
                e = e2;
            }
        }

        #[test]
        fn trajectories_are_deterministic(
            th in -0.2f64..0.2, v in 0.0f64..5.0, seed in 0u64..1000,
        ) {
            let params = PlantParams::default();
            let run = || {
                let mut rng = RngStream::new(seed, purpose::SENSOR_NOISE, &[]);
                let mut s = PlantState::new(0.0, 0.0, th, 0.0);
                let mut out = Vec::new();
                for _ in 0..50 {
                    s = advance(&s, v, &params, 0.01, 10).unwrap();
                    let m = measure(&s, &SensorModel::rig(), &mut rng);
                    out.push((s.p.to_bits(), s.theta.to_bits(), m.p_meas.to_bits()));
                }
                out
            };
            prop_assert_eq!(run(), run());
        }
    }
}
