//! Dual-stage impedance controller for the simulated arm.
//!
//! The arm state is a 7-vector `[px, py, pz, rx, ry, rz, g]`: Cartesian tool
//! position (m), extrinsic Euler orientation (rad) and gripper aperture (m).
//!
//! Stage one smooths the discrete target `x̃` into a continuous interim target
//! `x̃_t` with a critically damped second-order tracker. Stage two treats the
//! impedance law
//!
//! ```text
//! τ_e = M ẍ + D ẋ + K (x − x̃_t)
//! ```
//!
//! as the unforced dynamics (`τ_e = 0`) and integrates it with semi-implicit
//! Euler at a fixed timestep.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Bounds, Point};

pub const DIM: usize = 7;
pub const GRIPPER: usize = 6;
pub const GRIPPER_OPEN: f64 = 0.08;
pub const GRIPPER_CLOSED: f64 = 0.0;
pub const MAX_DT: f64 = 0.01;
pub const DIVERGENCE_SPEED: f64 = 100.0;

/// Components measured in meters: position block and gripper aperture.
const METRIC_AXES: [usize; 4] = [0, 1, 2, GRIPPER];

pub type Vector7 = SVector<f64, DIM>;
pub type Matrix7 = SMatrix<f64, DIM, DIM>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("target position {0:?} is outside the workspace")]
    OutOfWorkspace([f64; 3]),
    #[error("orientation component {axis} = {value} is outside (-pi/2, pi/2)")]
    OrientationOutOfRange { axis: usize, value: f64 },
    #[error("configuration contains a non-finite component")]
    NonFinite,
    #[error("controller diverged at t = {t:.3} s (|v| = {speed})")]
    Diverged { t: f64, speed: f64 },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

/// Arm configuration `[px, py, pz, rx, ry, rz, g]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 7]", try_from = "[f64; 7]")]
pub struct ConfigVector(Vector7);

impl ConfigVector {
    /// Builds a configuration, clamping the gripper aperture to `[0, 0.08]`.
    pub fn new(components: [f64; DIM]) -> Result<Self, DynamicsError> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        let mut v = Vector7::from(components);
        v[GRIPPER] = v[GRIPPER].clamp(GRIPPER_CLOSED, GRIPPER_OPEN);
        Ok(ConfigVector(v))
    }

    pub fn from_pose(position: Point, orientation: [f64; 3], gripper: f64) -> Self {
        Self::new([
            position.x,
            position.y,
            position.z,
            orientation[0],
            orientation[1],
            orientation[2],
            gripper,
        ])
        .expect("finite pose")
    }

    pub fn position(&self) -> Point {
        Point::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn orientation(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn gripper(&self) -> f64 {
        self.0[GRIPPER]
    }

    pub fn with_position(mut self, p: Point) -> Self {
        self.0[0] = p.x;
        self.0[1] = p.y;
        self.0[2] = p.z;
        self
    }

    pub fn with_gripper(mut self, g: f64) -> Self {
        self.0[GRIPPER] = g.clamp(GRIPPER_CLOSED, GRIPPER_OPEN);
        self
    }

    pub fn as_vector(&self) -> &Vector7 {
        &self.0
    }

    pub fn to_array(&self) -> [f64; DIM] {
        self.0.into()
    }
}

impl From<ConfigVector> for [f64; DIM] {
    fn from(c: ConfigVector) -> Self {
        c.to_array()
    }
}

impl TryFrom<[f64; DIM]> for ConfigVector {
    type Error = DynamicsError;
    fn try_from(value: [f64; DIM]) -> Result<Self, Self::Error> {
        ConfigVector::new(value)
    }
}

/// Desired inertia `M`, damping `D` and stiffness `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceGains {
    m: Matrix7,
    d: Matrix7,
    k: Matrix7,
    m_inv: Matrix7,
}

fn is_symmetric(a: &Matrix7) -> bool {
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= 1e-9 * scale
}

fn min_eigenvalue(a: &Matrix7) -> f64 {
    a.symmetric_eigenvalues().min()
}

impl ImpedanceGains {
    pub fn new(m: Matrix7, d: Matrix7, k: Matrix7) -> Result<Self, DynamicsError> {
        let invalid = |msg: &str| Err(DynamicsError::InvalidGains(msg.to_string()));
        if m.iter().chain(d.iter()).chain(k.iter()).any(|v| !v.is_finite()) {
            return invalid("non-finite entry");
        }
        if !is_symmetric(&m) || !is_symmetric(&d) || !is_symmetric(&k) {
            return invalid("M, D and K must be symmetric");
        }
        let Some(chol) = m.cholesky() else {
            return invalid("M must be positive-definite");
        };
        let tol = 1e-12 * d.amax().max(k.amax()).max(1.0);
        if min_eigenvalue(&d) < -tol {
            return invalid("D must be positive-semidefinite");
        }
        if min_eigenvalue(&k) < -tol {
            return invalid("K must be positive-semidefinite");
        }
        if k.fixed_view::<3, 3>(0, 0).into_owned().cholesky().is_none() {
            return invalid("K must be positive-definite on the position block");
        }
        let m_inv = chol.inverse();
        Ok(ImpedanceGains { m, d, k, m_inv })
    }

    /// Diagonal gains with critical damping `D_ii = 2·sqrt(M_ii·K_ii)`.
    pub fn critically_damped(mass: [f64; DIM], stiffness: [f64; DIM]) -> Result<Self, DynamicsError> {
        let damping: Vec<f64> = mass
            .iter()
            .zip(stiffness.iter())
            .map(|(m, k)| 2.0 * (m * k).sqrt())
            .collect();
        Self::new(
            Matrix7::from_diagonal(&Vector7::from(mass)),
            Matrix7::from_diagonal(&Vector7::from_column_slice(&damping)),
            Matrix7::from_diagonal(&Vector7::from(stiffness)),
        )
    }

    pub fn m(&self) -> &Matrix7 {
        &self.m
    }

    pub fn d(&self) -> &Matrix7 {
        &self.d
    }

    pub fn k(&self) -> &Matrix7 {
        &self.k
    }

    /// Multiplies all three matrices by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, DynamicsError> {
        Self::new(self.m * factor, self.d * factor, self.k * factor)
    }

    /// Acceleration of the unforced impedance dynamics.
    pub fn acceleration(&self, error: &Vector7, v: &Vector7) -> Vector7 {
        self.m_inv * (-(self.d * v) - self.k * error)
    }
}

impl Default for ImpedanceGains {
    fn default() -> Self {
        let (p, o, g) = (400.0, 100.0, 400.0);
        Self::critically_damped([1.0; DIM], [p, p, p, o, o, o, g]).expect("default gains are valid")
    }
}

/// `τ_e = M·a + D·v + K·(x − x̃_t)`.
pub fn torque(
    x: &ConfigVector,
    v: &Vector7,
    a: &Vector7,
    x_tilde_t: &ConfigVector,
    gains: &ImpedanceGains,
) -> Vector7 {
    gains.m * a + gains.d * v + gains.k * (x.0 - x_tilde_t.0)
}

/// One semi-implicit Euler step of `M ẍ = −D ẋ − K (x − anchor)` with a
/// fixed anchor. Velocity is updated first, then position from the new
/// velocity.
pub fn impedance_step(
    x: &Vector7,
    v: &Vector7,
    anchor: &Vector7,
    gains: &ImpedanceGains,
    dt: f64,
) -> (Vector7, Vector7) {
    let a = gains.acceleration(&(x - anchor), v);
    let v_next = v + a * dt;
    let x_next = x + v_next * dt;
    (x_next, v_next)
}

/// `½ vᵀ M v + ½ eᵀ K e` for `e = x − anchor`.
pub fn impedance_energy(x: &Vector7, v: &Vector7, anchor: &Vector7, gains: &ImpedanceGains) -> f64 {
    let e = x - anchor;
    0.5 * v.dot(&(gains.m * v)) + 0.5 * e.dot(&(gains.k * e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    /// Natural frequency of the stage-one tracker, rad/s.
    pub omega1: f64,
    /// Additive slack in the stage-one velocity cap.
    pub cap_epsilon: f64,
    pub bounds: Bounds,
    /// Trailing window kept for `settled` queries, seconds.
    pub history_window: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            omega1: 8.0,
            cap_epsilon: 1e-6,
            bounds: Bounds::symmetric(1.5),
            history_window: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    t: f64,
    metric: [f64; 4],
    speed: f64,
}

/// Full controller state. Single owner, stepped by one simulation loop.
#[derive(Debug, Clone)]
pub struct ControllerState {
    x: Vector7,
    v: Vector7,
    x_tilde: Vector7,
    x_tilde_t: Vector7,
    tracker_v: Vector7,
    gains: ImpedanceGains,
    params: ControllerParams,
    t: f64,
    history: VecDeque<Sample>,
}

/// Serializable copy of the controller published as telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSnapshot {
    pub t: f64,
    pub x: [f64; DIM],
    pub v: [f64; DIM],
    pub x_tilde: [f64; DIM],
    pub x_tilde_t: [f64; DIM],
    pub tau_e: [f64; DIM],
}

impl ControllerState {
    /// Starts at rest with both targets equal to `initial`.
    pub fn new(initial: ConfigVector, gains: ImpedanceGains, params: ControllerParams) -> Self {
        ControllerState {
            x: initial.0,
            v: Vector7::zeros(),
            x_tilde: initial.0,
            x_tilde_t: initial.0,
            tracker_v: Vector7::zeros(),
            gains,
            params,
            t: 0.0,
            history: VecDeque::new(),
        }
    }

    pub fn x(&self) -> ConfigVector {
        ConfigVector(self.x)
    }

    pub fn v(&self) -> &Vector7 {
        &self.v
    }

    pub fn target(&self) -> ConfigVector {
        ConfigVector(self.x_tilde)
    }

    pub fn interim_target(&self) -> ConfigVector {
        ConfigVector(self.x_tilde_t)
    }

    pub fn gains(&self) -> &ImpedanceGains {
        &self.gains
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Position of the tool center.
    pub fn tool_position(&self) -> Point {
        self.x().position()
    }

    /// Overrides the kinematic state. Intended for tests and replays.
    pub fn set_kinematics(&mut self, x: Vector7, v: Vector7) {
        self.x = x;
        self.v = v;
    }

    /// Sets the discrete target. The interim target and the arm state are
    /// left untouched, so no jump occurs.
    pub fn set_target(&mut self, target: ConfigVector) -> Result<(), DynamicsError> {
        let p = target.position();
        if !self.params.bounds.contains(&p) {
            return Err(DynamicsError::OutOfWorkspace([p.x, p.y, p.z]));
        }
        for axis in 3..6 {
            let value = target.0[axis];
            if value.abs() >= FRAC_PI_2 {
                return Err(DynamicsError::OrientationOutOfRange { axis, value });
            }
        }
        self.x_tilde = target.0;
        Ok(())
    }

    /// Advances the stage-one tracker by `dt` and returns the new interim
    /// target. The tracker velocity is capped at `ω₁·‖x̃ − x̃_t‖ + ε`.
    pub fn interim_target_step(&mut self, dt: f64) -> ConfigVector {
        debug_assert!(dt > 0.0 && dt <= MAX_DT);
        let w = self.params.omega1;
        let gap = self.x_tilde - self.x_tilde_t;
        let accel = gap * (w * w) - self.tracker_v * (2.0 * w);
        let mut vel = self.tracker_v + accel * dt;
        let cap = w * gap.norm() + self.params.cap_epsilon;
        let speed = vel.norm();
        if speed > cap {
            vel *= cap / speed;
        }
        self.tracker_v = vel;
        self.x_tilde_t += vel * dt;
        ConfigVector(self.x_tilde_t)
    }

    /// Advances the whole controller by `dt`.
    pub fn step(&mut self, dt: f64) -> Result<(), DynamicsError> {
        debug_assert!(dt > 0.0 && dt <= MAX_DT);
        self.interim_target_step(dt);
        let (x, v) = impedance_step(&self.x, &self.v, &self.x_tilde_t, &self.gains, dt);
        self.t += dt;
        let speed = v.norm();
        if !speed.is_finite() || speed > DIVERGENCE_SPEED || x.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::Diverged { t: self.t, speed });
        }
        self.x = x;
        self.v = v;
        self.x[GRIPPER] = self.x[GRIPPER].clamp(GRIPPER_CLOSED, GRIPPER_OPEN);
        self.record();
        Ok(())
    }

    fn record(&mut self) {
        let metric = METRIC_AXES.map(|i| self.x[i]);
        let speed = self.v.amax();
        self.history.push_back(Sample {
            t: self.t,
            metric,
            speed,
        });
        let horizon = self.t - self.params.history_window;
        while self.history.front().is_some_and(|s| s.t < horizon) {
            self.history.pop_front();
        }
    }

    /// True when the position and gripper axes have stayed within `eps` of
    /// the discrete target, with speed at most `eps / hold`, over the trailing
    /// `hold` seconds of recorded history (and at the current instant).
    pub fn settled(&self, eps: f64, hold: f64) -> bool {
        let vel_tol = eps / hold;
        let within = |metric: &[f64; 4], speed: f64| {
            speed <= vel_tol
                && METRIC_AXES
                    .iter()
                    .zip(metric)
                    .all(|(&axis, value)| (value - self.x_tilde[axis]).abs() <= eps)
        };
        let now = METRIC_AXES.map(|i| self.x[i]);
        if !within(&now, self.v.amax()) {
            return false;
        }
        let since = self.t - hold;
        self.history
            .iter()
            .rev()
            .take_while(|s| s.t >= since - 1e-12)
            .all(|s| within(&s.metric, s.speed))
    }

    /// External torque implied by the impedance law at the current state.
    pub fn torque_now(&self) -> Vector7 {
        let a = self.gains.acceleration(&(self.x - self.x_tilde_t), &self.v);
        torque(&self.x(), &self.v, &a, &self.interim_target(), &self.gains)
    }

    pub fn snapshot(&self) -> ControllerSnapshot {
        ControllerSnapshot {
            t: self.t,
            x: self.x.into(),
            v: self.v.into(),
            x_tilde: self.x_tilde.into(),
            x_tilde_t: self.x_tilde_t.into(),
            tau_e: self.torque_now().into(),
        }
    }
}
