// Oracle checks for the two-stage impedance controller. Shared between the
// core integration tests and the acceptance runner.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use verba_arm_core::dynamics::{
    impedance_energy, impedance_step, torque, ControllerParams, ControllerState, ImpedanceGains, Vector7, DIM,
};
use verba_arm_core::ConfigVector;

pub const DT: f64 = 1e-3;

/// Unit step response of a critically damped tracker with rate `a` feeding a
/// critically damped impedance stage with natural frequency `b`, both at rest
/// at t = 0. Derived by partial fractions of `a²b² / (s (s+a)² (s+b)²)`.
pub fn cascade_step(t: f64, a: f64, b: f64) -> f64 {
    let d = a - b;
    let ea = (-a * t).exp();
    let eb = (-b * t).exp();
    1.0 - a * b * b / (d * d) * t * ea - a * a * b / (d * d) * t * eb - a * a * (a - 3.0 * b) / (d * d * d) * eb
        - b * b * (3.0 * a - b) / (d * d * d) * ea
}

/// Stage-one interim target from rest, unit step.
pub fn tracker_step(t: f64, w: f64) -> f64 {
    1.0 - (1.0 + w * t) * (-w * t).exp()
}

pub fn home() -> ConfigVector {
    ConfigVector::new([0.3, 0.0, 0.5, 0.0, 0.0, 0.0, 0.04]).unwrap()
}

pub fn controller() -> ControllerState {
    ControllerState::new(home(), ImpedanceGains::default(), ControllerParams::default())
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector7 {
    Vector7::from_fn(|_, _| rng.gen_range(-scale..scale))
}

/// τ_e vanishes exactly at the interim target with zero velocity and
/// acceleration.
pub fn equilibrium() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gains = ImpedanceGains::default();
    let zero = Vector7::zeros();
    for _ in 0..1000 {
        let p = random_vec(&mut rng, 0.5);
        let mut c = p.into_iter().copied().collect::<Vec<_>>();
        c[6] = c[6].abs() * 0.08;
        let x = ConfigVector::new(c.try_into().unwrap()).map_err(|e| e.to_string())?;
        let tau = torque(&x, &zero, &zero, &x, &gains);
        if tau.iter().any(|v| *v != 0.0) {
            return Err(format!("non-zero torque {tau:?} at equilibrium"));
        }
    }
    let mut ctrl = controller();
    for _ in 0..100 {
        ctrl.step(DT).map_err(|e| e.to_string())?;
    }
    if ctrl.torque_now().iter().any(|v| *v != 0.0) || ctrl.x() != home() {
        return Err("controller drifted away from a resting target".into());
    }
    Ok(())
}

/// Step response on each axis class against the closed-form cascade.
pub fn step_response() -> Result<(), String> {
    let gains = ImpedanceGains::default();
    let w1 = ControllerParams::default().omega1;
    // (axis, step size)
    let cases = [(0, 0.4), (1, -0.3), (2, 0.25), (3, 0.5), (5, -0.4), (6, -0.04)];
    for (axis, step) in cases {
        let mut ctrl = controller();
        let start = ctrl.x().to_array();
        let mut goal = start;
        goal[axis] += step;
        ctrl.set_target(ConfigVector::new(goal).unwrap()).map_err(|e| e.to_string())?;
        let b = gains.k()[(axis, axis)].sqrt();
        let steps = 5000;
        let mut worst = 0.0_f64;
        let mut overshoot = 0.0_f64;
        for n in 1..=steps {
            ctrl.step(DT).map_err(|e| e.to_string())?;
            let t = n as f64 * DT;
            let y = (ctrl.x().to_array()[axis] - start[axis]) / step;
            worst = worst.max((y - cascade_step(t, w1, b)).abs());
            overshoot = overshoot.max((y - 1.0) * step.abs());
            for other in (0..DIM).filter(|o| *o != axis) {
                if ctrl.x().to_array()[other] != start[other] {
                    return Err(format!("axis {axis} step moved axis {other}"));
                }
            }
            if n == 3000 {
                let err = (ctrl.x().to_array()[axis] - goal[axis]).abs();
                if err >= 1e-3 {
                    return Err(format!("axis {axis}: error {err:e} at t = 3 s"));
                }
            }
        }
        if worst > 0.01 {
            return Err(format!("axis {axis}: deviates from oracle by {worst:.4} of the step"));
        }
        if overshoot >= 1e-6 {
            return Err(format!("axis {axis}: overshoot {overshoot:e}"));
        }
    }
    Ok(())
}

/// Stage one alone follows its own closed form.
pub fn tracker_closed_form() -> Result<(), String> {
    let mut ctrl = controller();
    let start = ctrl.x().to_array();
    let mut goal = start;
    goal[0] += 0.5;
    ctrl.set_target(ConfigVector::new(goal).unwrap()).map_err(|e| e.to_string())?;
    let w = ctrl.params().omega1;
    for n in 1..=3000 {
        let xt = ctrl.interim_target_step(DT).to_array()[0];
        let y = (xt - start[0]) / 0.5;
        let dev = (y - tracker_step(n as f64 * DT, w)).abs();
        if dev > 5e-3 {
            return Err(format!("tracker off by {dev:e} at step {n}"));
        }
    }
    Ok(())
}

/// One semi-implicit step never raises the impedance energy by more than
/// 1e-3 relative, from random states.
pub fn energy_non_increase(steps: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let gains = ImpedanceGains::default();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        let anchor = random_vec(&mut rng, 0.5);
        let x = anchor + random_vec(&mut rng, 0.3);
        let v = random_vec(&mut rng, 2.0);
        let e0 = impedance_energy(&x, &v, &anchor, &gains);
        let (x1, v1) = impedance_step(&x, &v, &anchor, &gains, DT);
        let e1 = impedance_energy(&x1, &v1, &anchor, &gains);
        let rel = (e1 - e0) / e0;
        worst = worst.max(rel);
        if rel > 1e-3 {
            return Err(format!("energy rose by {rel:e} relative"));
        }
    }
    if !worst.is_finite() {
        return Err("no samples".into());
    }
    Ok(())
}

/// Without damping, the shadow energy of semi-implicit Euler
/// `½(vᵀMv + eᵀKe − dt·vᵀKe)` is conserved; the plain energy stays bounded.
pub fn undamped_conservation() -> Result<(), String> {
    let k = [400.0, 400.0, 400.0, 100.0, 100.0, 100.0, 400.0];
    let gains = ImpedanceGains::new(
        ImpedanceGains::default().m().clone_owned(),
        verba_arm_core::dynamics::Matrix7::zeros(),
        verba_arm_core::dynamics::Matrix7::from_diagonal(&Vector7::from(k)),
    )
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let anchor = random_vec(&mut rng, 0.5);
    let mut x = anchor + random_vec(&mut rng, 0.2);
    let mut v = random_vec(&mut rng, 1.0);
    let shadow = |x: &Vector7, v: &Vector7| {
        let e = x - anchor;
        let ke = gains.k() * e;
        0.5 * (v.dot(&(gains.m() * v)) + e.dot(&ke) - DT * v.dot(&ke))
    };
    let s0 = shadow(&x, &v);
    let e0 = impedance_energy(&x, &v, &anchor, &gains);
    for _ in 0..10_000 {
        (x, v) = impedance_step(&x, &v, &anchor, &gains, DT);
        let s = shadow(&x, &v);
        if ((s - s0) / s0).abs() > 1e-3 {
            return Err(format!("shadow energy drifted to {s} from {s0}"));
        }
        let e = impedance_energy(&x, &v, &anchor, &gains);
        if ((e - e0) / e0).abs() > 0.05 {
            return Err(format!("energy left its band: {e} from {e0}"));
        }
    }
    Ok(())
}

/// Central differences of the simulated velocity match the model
/// acceleration to first order in dt.
pub fn finite_difference_acceleration() -> Result<(), String> {
    let mut ctrl = controller();
    let mut goal = ctrl.x().to_array();
    goal[0] += 0.3;
    goal[2] -= 0.2;
    goal[4] += 0.3;
    ctrl.set_target(ConfigVector::new(goal).unwrap()).map_err(|e| e.to_string())?;
    let gains = ctrl.gains().clone();
    let mut states = Vec::new();
    for _ in 0..1500 {
        ctrl.step(DT).map_err(|e| e.to_string())?;
        states.push((*ctrl.x().as_vector(), *ctrl.v(), *ctrl.interim_target().as_vector()));
    }
    let d_norm = gains.d().abs().max();
    let k_norm = gains.k().abs().max();
    for n in 1..states.len() - 1 {
        let (x, v, xt) = &states[n];
        let a_model = gains.acceleration(&(x - xt), v);
        let a_fd = (states[n + 1].1 - states[n - 1].1) / (2.0 * DT);
        let xt_rate = (states[n + 1].2 - states[n - 1].2).amax() / (2.0 * DT);
        // Local truncation error is dt times a jerk bound.
        let jerk = d_norm * a_model.amax() + k_norm * (v.amax() + xt_rate);
        let tol = 2.0 * DT * jerk + 1e-9;
        let err = (a_fd - a_model).amax();
        if err > tol {
            return Err(format!("step {n}: |a_fd - a| = {err:e} > {tol:e}"));
        }
    }
    Ok(())
}

/// The interim target never moves by more than the cap in one step, and
/// changing the discrete target does not move it at all.
pub fn interim_continuity() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut ctrl = controller();
    for _ in 0..40 {
        let goal = [
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
            rng.gen_range(0.1..1.2),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.0..0.08),
        ];
        let before = ctrl.interim_target();
        ctrl.set_target(ConfigVector::new(goal).unwrap()).map_err(|e| e.to_string())?;
        if ctrl.interim_target() != before {
            return Err("set_target moved the interim target".into());
        }
        let hold = rng.gen_range(10..400);
        for _ in 0..hold {
            let prev = *ctrl.interim_target().as_vector();
            let gap = (ctrl.target().as_vector() - prev).norm();
            let cap = (ctrl.params().omega1 * gap + ctrl.params().cap_epsilon) * DT;
            ctrl.step(DT).map_err(|e| e.to_string())?;
            let jump = (ctrl.interim_target().as_vector() - prev).norm();
            if jump > cap * (1.0 + 1e-12) {
                return Err(format!("interim jump {jump:e} exceeds cap {cap:e}"));
            }
        }
    }
    Ok(())
}

/// Scaling M, D and K together leaves the trajectory unchanged.
pub fn scale_covariance() -> Result<(), String> {
    let params = ControllerParams::default();
    let base = ImpedanceGains::default();
    let mut a = ControllerState::new(home(), base.clone(), params.clone());
    let mut b = ControllerState::new(home(), base.scaled(3.7).map_err(|e| e.to_string())?, params);
    let goal = ConfigVector::new([0.6, -0.2, 0.3, 0.2, -0.1, 0.3, 0.0]).unwrap();
    a.set_target(goal).map_err(|e| e.to_string())?;
    b.set_target(goal).map_err(|e| e.to_string())?;
    for _ in 0..3000 {
        a.step(DT).map_err(|e| e.to_string())?;
        b.step(DT).map_err(|e| e.to_string())?;
        let diff = (a.x().as_vector() - b.x().as_vector()).amax();
        if diff > 1e-9 {
            return Err(format!("scaled gains diverge by {diff:e}"));
        }
    }
    Ok(())
}

/// Random reachable targets are reached and held within five seconds.
pub fn convergence() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for trial in 0..20 {
        let mut ctrl = controller();
        let goal = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.0..1.4),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(0.0..0.08),
        ];
        ctrl.set_target(ConfigVector::new(goal).unwrap()).map_err(|e| e.to_string())?;
        let mut settled_at = None;
        for n in 1..=5000 {
            ctrl.step(DT).map_err(|e| e.to_string())?;
            if ctrl.settled(1e-3, 0.1) {
                settled_at = Some(n);
                break;
            }
        }
        if settled_at.is_none() {
            return Err(format!("trial {trial}: not settled after 5 s"));
        }
        for _ in 0..2000 {
            ctrl.step(DT).map_err(|e| e.to_string())?;
        }
        let err = (ctrl.x().as_vector() - ctrl.target().as_vector()).amax();
        if err > 1e-4 {
            return Err(format!("trial {trial}: residual {err:e}"));
        }
    }
    Ok(())
}

/// Two steps of dt agree with one step of 2·dt to first order.
pub fn step_splitting() -> Result<(), String> {
    let gains = ImpedanceGains::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let anchor = random_vec(&mut rng, 0.5);
        let x = anchor + random_vec(&mut rng, 0.2);
        let v = random_vec(&mut rng, 1.0);
        let (x1, v1) = impedance_step(&x, &v, &anchor, &gains, DT);
        let (x2, v2) = impedance_step(&x1, &v1, &anchor, &gains, DT);
        let (y, w) = impedance_step(&x, &v, &anchor, &gains, 2.0 * DT);
        let a0 = gains.acceleration(&(x - anchor), &v).amax();
        let a1 = gains.acceleration(&(x1 - anchor), &v1).amax();
        let jerk = gains.d().abs().max() * a0.max(a1) + gains.k().abs().max() * v.amax().max(v1.amax());
        let tol_x = 2.0 * DT * DT * (a0 + a1) + 1e-12;
        let tol_v = 2.0 * DT * DT * jerk + 1e-12;
        if (x2 - y).amax() > tol_x || (v2 - w).amax() > tol_v {
            return Err(format!("split steps disagree: {:e} / {:e}", (x2 - y).amax(), (v2 - w).amax()));
        }
    }
    Ok(())
}

/// `torque` against an explicit component-wise expansion.
pub fn torque_expansion() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..500 {
        let mass: [f64; DIM] = std::array::from_fn(|_| rng.gen_range(0.5..3.0));
        let stiff: [f64; DIM] = std::array::from_fn(|_| rng.gen_range(1.0..900.0));
        let gains = ImpedanceGains::critically_damped(mass, stiff).map_err(|e| e.to_string())?;
        let xa: [f64; DIM] = std::array::from_fn(|i| if i == 6 { rng.gen_range(0.0..0.08) } else { rng.gen_range(-1.0..1.0) });
        let xb: [f64; DIM] = std::array::from_fn(|i| if i == 6 { rng.gen_range(0.0..0.08) } else { rng.gen_range(-1.0..1.0) });
        let x = ConfigVector::new(xa).unwrap();
        let xt = ConfigVector::new(xb).unwrap();
        let v = random_vec(&mut rng, 2.0);
        let a = random_vec(&mut rng, 20.0);
        let tau = torque(&x, &v, &a, &xt, &gains);
        for i in 0..DIM {
            let mut expect = 0.0;
            for j in 0..DIM {
                expect += gains.m()[(i, j)] * a[j] + gains.d()[(i, j)] * v[j] + gains.k()[(i, j)] * (xa[j] - xb[j]);
            }
            if (tau[i] - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                return Err(format!("component {i}: {} vs {expect}", tau[i]));
            }
            let d_expect = 2.0 * (mass[i] * stiff[i]).sqrt();
            if (gains.d()[(i, i)] - d_expect).abs() > 1e-9 * d_expect {
                return Err(format!("damping {i} is not critical"));
            }
        }
    }
    Ok(())
}
