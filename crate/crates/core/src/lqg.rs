//! Linearization, zero-order-hold discretization, Riccati synthesis and the
//! runtime LQG controller.
//!
//! State order everywhere is `[p, p_dot, theta, theta_dot]`; the input is the
//! effective drive voltage `u = V - voltage_mid`; the outputs are the two
//! measured positions `[p, theta]`.

use nalgebra::{DMatrix, Matrix2, Matrix2x4, Matrix4, Matrix4x2, RowVector4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{Measurement, PlantParams, SensorModel};

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub cd: DMatrix<f64>,
    pub ts: f64,
}

/// Jacobian of the nonlinear dynamics at the upright origin with
/// `force = motor_gain * u`. Dead zone and Coulomb friction are not
/// differentiable there and drop out.
pub fn linearize(params: &PlantParams) -> ContinuousModel {
    let total_mass = params.cart_mass + params.rod_mass;
    let a = params.rod_mass * params.rod_length / 2.0;
    let j = params.rod_mass * params.rod_length * params.rod_length / 3.0;
    let det = total_mass * j - a * a;
    let g = params.gravity;
    let cp = params.dynamic_friction;
    let cv = params.motor_gain;

    #[rustfmt::skip]
    let a_mat = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0,                0.0,                         0.0,
        0.0, -j * cp / det,      -a * a * g / det,            0.0,
        0.0, 0.0,                0.0,                         1.0,
        0.0, a * cp / det,       total_mass * a * g / det,    0.0,
    ]);
    let b_mat = DMatrix::from_column_slice(4, 1, &[0.0, j * cv / det, 0.0, -a * cv / det]);
    #[rustfmt::skip]
    let c_mat = DMatrix::from_row_slice(2, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    ]);
    ContinuousModel {
        a: a_mat,
        b: b_mat,
        c: c_mat,
    }
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.abs().column_sum().max();
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = m / 2f64.powi(squarings as i32);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=40 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.abs().max() <= 1e-18 * sum.abs().max() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Zero-order-hold discretization through the exponential of the augmented
/// matrix `[[A, B], [0, 0]] * ts`.
pub fn discretize(model: &ContinuousModel, ts: f64) -> Result<DiscreteModel> {
    if !(ts > 0.0 && ts <= 0.1) {
        return Err(Error::InvalidInput(format!(
            "sample period {ts} outside (0, 0.1]"
        )));
    }
    let n = model.a.nrows();
    let m = model.b.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&model.a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(&model.b * ts));
    let e = expm(&aug);
    Ok(DiscreteModel {
        ad: e.view((0, 0), (n, n)).into_owned(),
        bd: e.view((0, n), (n, m)).into_owned(),
        cd: model.c.clone(),
        ts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    /// Cost-to-go matrix.
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// Frobenius norm of the Riccati residual at `p`.
    pub residual: f64,
}

pub const DARE_MAX_ITERATIONS: usize = 100_000;
pub const DARE_TOLERANCE: f64 = 1e-12;
const ROUNDOFF_FLOOR: f64 = 64.0;

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let at_p = a.transpose() * p;
    let s = r + b.transpose() * p * b;
    let s_inv = s.try_inverse()?;
    let next = q + &at_p * a - &at_p * b * s_inv * b.transpose() * p * a;
    Some((&next + next.transpose()) * 0.5)
}

/// Frobenius norm of `P - (Q + A'PA - A'PB (R + B'PB)^-1 B'PA)`.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Some(next) => (p - next).norm(),
        None => f64::INFINITY,
    }
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration of
/// the Riccati map starting from `P = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution> {
    let n = a.nrows();
    if a.ncols() != n
        || b.nrows() != n
        || q.shape() != (n, n)
        || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::Synthesis(
            "DARE operands have inconsistent shapes".into(),
        ));
    }
    let mut p = q.clone();
    for it in 1..=DARE_MAX_ITERATIONS {
        let next = riccati_map(a, b, q, r, &p)
            .ok_or_else(|| Error::Synthesis("R + B'PB is singular".into()))?;
        let scale = next.norm();
        if !scale.is_finite() {
            return Err(Error::Synthesis(format!(
                "Riccati iterate diverged at iteration {it}"
            )));
        }
        let delta = (&next - &p).norm();
        p = next;
        // An absolute 1e-12 is below double resolution once |P| grows past
        // ~1e3, so the threshold is floored at the roundoff scale of P.
        if delta < DARE_TOLERANCE.max(ROUNDOFF_FLOOR * f64::EPSILON * scale) {
            let s = r + b.transpose() * &p * b;
            let k = s
                .try_inverse()
                .ok_or_else(|| Error::Synthesis("R + B'PB is singular".into()))?
                * b.transpose()
                * &p
                * a;
            let residual = dare_residual(a, b, q, r, &p);
            return Ok(DareSolution {
                p,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::Synthesis(format!(
        "Riccati iteration did not converge in {DARE_MAX_ITERATIONS} iterations"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSolution {
    /// Current-estimator gain, `n x outputs`.
    pub l: DMatrix<f64>,
    /// Steady-state prior error covariance.
    pub p: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Steady-state Kalman gain for the measurement-update (current) estimator.
/// The prior covariance comes from the dual Riccati equation.
pub fn design_kalman(
    ad: &DMatrix<f64>,
    cd: &DMatrix<f64>,
    w: &DMatrix<f64>,
    vn: &DMatrix<f64>,
) -> Result<KalmanSolution> {
    let dual = solve_dare(&ad.transpose(), &cd.transpose(), w, vn)?;
    let p = dual.p;
    let innovation = cd * &p * cd.transpose() + vn;
    let inv = innovation
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("innovation covariance is singular".into()))?;
    let l = &p * cd.transpose() * inv;
    Ok(KalmanSolution {
        l,
        p,
        iterations: dual.iterations,
        residual: dual.residual,
    })
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone_owned()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Design weights for the LQG controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqgWeights {
    /// Diagonal of the state weight, `[p, p_dot, theta, theta_dot]`.
    pub q_diag: [f64; 4],
    pub r: f64,
    /// Process noise covariance is `process_noise * I`.
    pub process_noise: f64,
    /// Control period, s.
    pub ts: f64,
}

impl Default for LqgWeights {
    fn default() -> Self {
        Self {
            q_diag: [100.0, 1.0, 500.0, 1.0],
            r: 1.0,
            process_noise: 1e-4,
            ts: 0.01,
        }
    }
}

impl LqgWeights {
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !self.q_diag.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(("q_diag", "entries must be finite and >= 0".into()));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(("r", format!("must be > 0, got {}", self.r)));
        }
        if !(self.process_noise.is_finite() && self.process_noise >= 0.0) {
            return Err(("process_noise", "must be >= 0".into()));
        }
        if !(self.ts > 0.0 && self.ts <= 0.1) {
            return Err(("ts", format!("must lie in (0, 0.1], got {}", self.ts)));
        }
        Ok(())
    }
}

/// Lower bound on measurement variances so the Kalman problem stays
/// well-posed with ideal sensors.
const MIN_MEASUREMENT_VARIANCE: f64 = 1e-10;

/// A synthesized LQG controller in fixed-size form, plus the synthesis
/// diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqgDesign {
    pub ad: Matrix4<f64>,
    pub bd: Vector4<f64>,
    pub cd: Matrix2x4<f64>,
    pub ts: f64,
    pub k: RowVector4<f64>,
    pub l: Matrix4x2<f64>,
    pub q: Matrix4<f64>,
    pub r: f64,
    pub w: Matrix4<f64>,
    pub vn: Matrix2<f64>,
    pub voltage_mid: f64,
    pub voltage_span: f64,
    /// Largest effective voltage the motor can turn into force.
    pub u_limit: f64,
    pub dead_zone_volts: f64,
    pub lqr_residual: f64,
    pub kalman_residual: f64,
    pub lqr_iterations: usize,
    pub kalman_iterations: usize,
    /// Spectral radius of `Ad - Bd K`.
    pub closed_loop_radius: f64,
    /// Spectral radius of `Ad - L Cd Ad`.
    pub estimator_radius: f64,
}

pub fn synthesize(
    params: &PlantParams,
    sensors: &SensorModel,
    weights: &LqgWeights,
) -> Result<LqgDesign> {
    params.validate()?;
    let model = discretize(&linearize(params), weights.ts)?;
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&weights.q_diag));
    let r = DMatrix::from_element(1, 1, weights.r);
    let lqr = solve_dare(&model.ad, &model.bd, &q, &r)?;

    let w = DMatrix::<f64>::identity(4, 4) * weights.process_noise;
    let (vp, vt) = sensors.variances();
    let vn = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[
        vp.max(MIN_MEASUREMENT_VARIANCE),
        vt.max(MIN_MEASUREMENT_VARIANCE),
    ]));
    let kal = design_kalman(&model.ad, &model.cd, &w, &vn)?;

    let closed = &model.ad - &model.bd * &lqr.k;
    let est = &model.ad - &kal.l * &model.cd * &model.ad;
    let closed_loop_radius = spectral_radius(&closed);
    let estimator_radius = spectral_radius(&est);
    if closed_loop_radius >= 1.0 || estimator_radius >= 1.0 {
        return Err(Error::Synthesis(format!(
            "unstable design: closed-loop radius {closed_loop_radius}, estimator radius {estimator_radius}"
        )));
    }

    Ok(LqgDesign {
        ad: Matrix4::from_iterator(model.ad.iter().copied()),
        bd: Vector4::from_iterator(model.bd.iter().copied()),
        cd: Matrix2x4::from_iterator(model.cd.iter().copied()),
        ts: weights.ts,
        k: RowVector4::from_iterator(lqr.k.iter().copied()),
        l: Matrix4x2::from_iterator(kal.l.iter().copied()),
        q: Matrix4::from_iterator(q.iter().copied()),
        r: weights.r,
        w: Matrix4::from_iterator(w.iter().copied()),
        vn: Matrix2::from_iterator(vn.iter().copied()),
        voltage_mid: params.voltage_mid,
        voltage_span: params.voltage_span,
        u_limit: params.force_max / params.motor_gain,
        dead_zone_volts: params.dead_zone_volts,
        lqr_residual: lqr.residual,
        kalman_residual: kal.residual,
        lqr_iterations: lqr.iterations,
        kalman_iterations: kal.iterations,
        closed_loop_radius,
        estimator_radius,
    })
}

/// Regulation target for a cart reference position.
pub fn reference_state(r: f64) -> Vector4<f64> {
    Vector4::new(r, 0.0, 0.0, 0.0)
}

/// Kalman state estimate in current-estimator form, shared by every
/// controller that needs velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    pub x_hat: Vector4<f64>,
    /// Effective voltage applied over the previous period.
    pub u_prev: f64,
}

impl Estimator {
    pub fn new(x_hat: Vector4<f64>) -> Self {
        Self { x_hat, u_prev: 0.0 }
    }

    /// Starts from the first measurement with zero velocities.
    pub fn from_measurement(meas: &Measurement) -> Self {
        Self::new(Vector4::new(meas.p_meas, 0.0, meas.theta_meas, 0.0))
    }

    /// Predict with the previous input, then correct with `meas`.
    pub fn update(&mut self, design: &LqgDesign, meas: &Measurement) -> Result<Vector4<f64>> {
        let prior = design.ad * self.x_hat + design.bd * self.u_prev;
        let y = Vector2::new(meas.p_meas, meas.theta_meas);
        let x_hat = prior + design.l * (y - design.cd * prior);
        if !x_hat.iter().all(|v| v.is_finite()) {
            return Err(Error::ControllerFault(format!(
                "non-finite state estimate at t = {}",
                meas.t
            )));
        }
        self.x_hat = x_hat;
        Ok(x_hat)
    }

    /// Records the voltage actually sent to the motor this period.
    pub fn commit(&mut self, design: &LqgDesign, voltage: f64) {
        let u = voltage - design.voltage_mid;
        self.u_prev = if u.abs() <= design.dead_zone_volts {
            0.0
        } else {
            u.clamp(-design.u_limit, design.u_limit)
        };
    }
}

impl LqgDesign {
    /// Unclamped state-feedback input `-K (x_hat - x_ref)`.
    pub fn feedback(&self, x_hat: &Vector4<f64>, r: f64) -> f64 {
        -(self.k * (x_hat - reference_state(r)))[0]
    }

    pub fn voltage(&self, x_hat: &Vector4<f64>, r: f64) -> f64 {
        (self.voltage_mid + self.feedback(x_hat, r)).clamp(0.0, self.voltage_span)
    }
}

/// Stand-alone LQG controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqgRuntime {
    pub design: LqgDesign,
    pub estimator: Estimator,
    pub reference: f64,
}

impl LqgRuntime {
    pub fn new(design: LqgDesign, estimator: Estimator) -> Self {
        Self {
            design,
            estimator,
            reference: 0.0,
        }
    }

    /// One control period: estimator update, feedback law, clamp to the
    /// drive range. Returns the drive voltage.
    pub fn step(&mut self, meas: &Measurement, r: f64) -> Result<f64> {
        let x_hat = self.estimator.update(&self.design, meas)?;
        self.reference = r;
        let v = self.design.voltage(&x_hat, r);
        self.estimator.commit(&self.design, v);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{advance, dynamics, measure, PlantState};
    use crate::rng::{purpose, RngStream};
    use proptest::prelude::*;

    fn dm(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    /// Central finite-difference Jacobian of the nonlinear dynamics with the
    /// Coulomb term removed.
    fn fd_jacobian(params: &PlantParams) -> (DMatrix<f64>, DMatrix<f64>) {
        let smooth = PlantParams {
            static_friction: 0.0,
            ..*params
        };
        let h = 1e-6;
        let mut a = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut xp = Vector4::zeros();
            let mut xm = Vector4::zeros();
            xp[j] = h;
            xm[j] = -h;
            let d = (dynamics(&xp, 0.0, &smooth) - dynamics(&xm, 0.0, &smooth)) / (2.0 * h);
            a.set_column(j, &nalgebra::DVector::from_iterator(4, d.iter().copied()));
        }
        let du = 1e-6;
        let cv = params.motor_gain;
        let d = (dynamics(&Vector4::zeros(), cv * du, &smooth)
            - dynamics(&Vector4::zeros(), -cv * du, &smooth))
            / (2.0 * du);
        let b = DMatrix::from_iterator(4, 1, d.iter().copied());
        (a, b)
    }

    #[test]
    fn linearization_kinematic_rows() {
        let m = linearize(&PlantParams::default());
        assert_eq!(m.a[(0, 1)], 1.0);
        assert_eq!(m.a[(2, 3)], 1.0);
        assert_eq!(
            &m.a * DMatrix::<f64>::zeros(4, 1),
            DMatrix::<f64>::zeros(4, 1)
        );
        assert!(m.a[(1, 1)] < 0.0);
    }

    #[test]
    fn friction_entry_by_hand() {
        // M = 1, m = 0.1, l = 0.5: a = 0.025, j = 1/120, det = 1.1/120 - 0.025^2
        let p = PlantParams::default();
        let j = 0.1 * 0.25 / 3.0;
        let det = 1.1 * j - 0.025 * 0.025;
        let expected = -5.0 / (det / j);
        let m = linearize(&p);
        assert!((m.a[(1, 1)] - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn linearization_matches_finite_differences(
            cart in 0.3f64..3.0, rod in 0.05f64..0.5, len in 0.2f64..1.2,
            cp in 0.0f64..10.0, cv in 1.0f64..20.0,
        ) {
            let params = PlantParams {
                cart_mass: cart, rod_mass: rod, rod_length: len,
                dynamic_friction: cp, motor_gain: cv, ..PlantParams::default()
            };
            let m = linearize(&params);
            let (a, b) = fd_jacobian(&params);
            prop_assert!((&m.a - a).abs().max() < 1e-6);
            prop_assert!((&m.b - b).abs().max() < 1e-6);
        }
    }

    #[test]
    fn scalar_zoh() {
        let model = ContinuousModel {
            a: dm(1, 1, &[-1.0]),
            b: dm(1, 1, &[1.0]),
            c: dm(1, 1, &[1.0]),
        };
        let d = discretize(&model, 0.1).unwrap();
        assert!((d.ad[(0, 0)] - (-0.1f64).exp()).abs() < 1e-14);
        assert!((d.bd[(0, 0)] - (1.0 - (-0.1f64).exp())).abs() < 1e-14);
        assert!((d.ad[(0, 0)] - 0.904837).abs() < 1e-6);
        assert!((d.bd[(0, 0)] - 0.095163).abs() < 1e-6);
    }

    #[test]
    fn zoh_small_period_limit() {
        let model = linearize(&PlantParams::default());
        let d = discretize(&model, 1e-12).unwrap();
        assert!((&d.ad - DMatrix::<f64>::identity(4, 4)).norm() < 1e-9);
    }

    #[test]
    fn zoh_semigroup() {
        let model = linearize(&PlantParams::default());
        let one = discretize(&model, 0.01).unwrap();
        let two = discretize(&model, 0.02).unwrap();
        assert!((&one.ad * &one.ad - &two.ad).abs().max() < 1e-10);
        assert!((&one.ad * &one.bd + &one.bd - &two.bd).abs().max() < 1e-10);
    }

    #[test]
    fn zoh_rejects_bad_period() {
        let model = linearize(&PlantParams::default());
        assert!(discretize(&model, 0.0).is_err());
        assert!(discretize(&model, 0.2).is_err());
    }

    #[test]
    fn expm_matches_rotation() {
        let t = 1.3;
        let m = dm(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&m);
        let want = dm(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert!((e - want).abs().max() < 1e-13);
    }

    #[test]
    fn dare_autonomous_stable() {
        let s = solve_dare(
            &dm(1, 1, &[0.5]),
            &dm(1, 1, &[0.0]),
            &dm(1, 1, &[1.0]),
            &dm(1, 1, &[1.0]),
        )
        .unwrap();
        assert!((s.p[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.k[(0, 0)], 0.0);
    }

    #[test]
    fn dare_golden_ratio() {
        let s = solve_dare(
            &dm(1, 1, &[1.0]),
            &dm(1, 1, &[1.0]),
            &dm(1, 1, &[1.0]),
            &dm(1, 1, &[1.0]),
        )
        .unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s.p[(0, 0)] - phi).abs() < 1e-9);
        assert!((s.k[(0, 0)] - phi / (1.0 + phi)).abs() < 1e-9);
        assert!((s.k[(0, 0)] - 0.6180).abs() < 1e-4);
    }

    #[test]
    fn dare_unstabilizable_fails() {
        let r = solve_dare(
            &dm(1, 1, &[1.5]),
            &dm(1, 1, &[0.0]),
            &dm(1, 1, &[1.0]),
            &dm(1, 1, &[1.0]),
        );
        assert!(matches!(r, Err(Error::Synthesis(_))));
    }

    #[test]
    fn kalman_scalar_dual() {
        let k = design_kalman(
            &dm(1, 1, &[1.0]),
            &dm(1, 1, &[1.0]),
            &dm(1, 1, &[1.0]),
            &dm(1, 1, &[1.0]),
        )
        .unwrap();
        assert!((k.l[(0, 0)] - 0.6180339887).abs() < 1e-9);
    }

    #[test]
    fn kalman_perfect_measurement_limit() {
        let d = discretize(&linearize(&PlantParams::default()), 0.01).unwrap();
        let cd = DMatrix::<f64>::identity(4, 4);
        let w = DMatrix::<f64>::identity(4, 4) * 1e-4;
        let mut last = f64::INFINITY;
        for v in [1e-2, 1e-4, 1e-6, 1e-8] {
            let k = design_kalman(&d.ad, &cd, &w, &(DMatrix::<f64>::identity(4, 4) * v)).unwrap();
            let gap = (DMatrix::<f64>::identity(4, 4) - &k.l).norm();
            assert!(gap < last, "gap {gap} did not shrink (prev {last})");
            last = gap;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn default_design_is_stable() {
        let d = synthesize(
            &PlantParams::default(),
            &SensorModel::rig(),
            &LqgWeights::default(),
        )
        .unwrap();
        assert!(d.closed_loop_radius < 1.0);
        assert!(d.estimator_radius < 1.0);
        assert!(d.lqr_residual < 1e-9, "lqr residual {}", d.lqr_residual);
        assert!(
            d.kalman_residual < 1e-9,
            "kalman residual {}",
            d.kalman_residual
        );
    }

    #[test]
    fn at_setpoint_output_is_mid() {
        let d = synthesize(
            &PlantParams::default(),
            &SensorModel::ideal(),
            &LqgWeights::default(),
        )
        .unwrap();
        let mut rt = LqgRuntime::new(d, Estimator::new(reference_state(0.1)));
        let v = rt
            .step(
                &Measurement {
                    p_meas: 0.1,
                    theta_meas: 0.0,
                    t: 0.0,
                },
                0.1,
            )
            .unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn feedback_is_linear_in_error() {
        let d = synthesize(
            &PlantParams::default(),
            &SensorModel::ideal(),
            &LqgWeights::default(),
        )
        .unwrap();
        let x = Vector4::new(0.01, -0.02, 0.003, 0.01);
        let u1 = d.feedback(&x, 0.0);
        let u2 = d.feedback(&(x * 2.0), 0.0);
        assert!((u2 - 2.0 * u1).abs() < 1e-12);
        // a reference step flips the sign of the position contribution
        let at = Vector4::zeros();
        let before = d.feedback(&at, 0.0);
        let after = d.feedback(&at, 0.15);
        assert_eq!(before, 0.0);
        assert!((after - d.k[0] * 0.15).abs() < 1e-12);
    }

    #[test]
    fn estimator_converges_on_linear_model() {
        let d = synthesize(
            &PlantParams::default(),
            &SensorModel::rig(),
            &LqgWeights::default(),
        )
        .unwrap();
        let mut x = Vector4::new(0.05, 0.1, 0.02, -0.1);
        let mut est = Estimator::new(Vector4::zeros());
        let mut first = None;
        for k in 0..300 {
            let u = 0.3 * ((k as f64) * 0.05).sin();
            let y = d.cd * x;
            est.update(
                &d,
                &Measurement {
                    p_meas: y[0],
                    theta_meas: y[1],
                    t: 0.0,
                },
            )
            .unwrap();
            let err = (est.x_hat - x).norm();
            if k == 10 {
                first = Some(err);
            }
            est.u_prev = u;
            x = d.ad * x + d.bd * u;
        }
        let y = d.cd * x;
        est.update(
            &d,
            &Measurement {
                p_meas: y[0],
                theta_meas: y[1],
                t: 0.0,
            },
        )
        .unwrap();
        let err = (est.x_hat - x).norm();
        let bound = first.unwrap() * d.estimator_radius.powi(290) * 100.0;
        assert!(err < 1e-9 || err < bound, "estimate error {err}");
    }

    fn offset_run(params: &PlantParams) -> Vec<f64> {
        let sensors = SensorModel::ideal();
        let d = synthesize(params, &sensors, &LqgWeights::default()).unwrap();
        let mut rng = RngStream::new(0, purpose::SENSOR_NOISE, &[]);
        let mut s = PlantState::new(0.15, 0.0, 0.0, 0.0);
        let m0 = measure(&s, &sensors, &mut rng);
        let mut rt = LqgRuntime::new(d, Estimator::from_measurement(&m0));
        let mut ps = Vec::new();
        for _ in 0..2000 {
            let m = measure(&s, &sensors, &mut rng);
            let v = rt.step(&m, 0.0).unwrap();
            s = advance(&s, v, params, 0.01, 10).unwrap();
            ps.push(s.p);
        }
        ps
    }

    #[test]
    fn closed_loop_settles_on_smooth_plant() {
        let smooth = PlantParams {
            static_friction: 0.0,
            dead_zone_volts: 0.0,
            ..PlantParams::default()
        };
        let ps = offset_run(&smooth);
        assert!(ps[999..].iter().all(|p| p.abs() < 0.01));
    }

    #[test]
    fn closed_loop_reaches_band_on_default_plant() {
        // Coulomb friction and the dead zone leave a small limit cycle.
        let ps = offset_run(&PlantParams::default());
        assert!(ps[..1000].iter().any(|p| p.abs() < 0.01));
        assert!(ps[1000..].iter().all(|p| p.abs() < 0.06));
    }
}
