//! Closed-loop adaptive control of the damped pendulum against an unknown
//! sinusoidal disturbance, using a learned Lyapunov function inside the
//! adaptation law.
//!
//! The plant is m l^2 theta_dd + b theta_d + m g l sin(theta)
//! + <a, kappa phi(t)> = u with unknown coefficients a and known basis
//! phi(t) = (sin(w_1 t), ..., sin(w_10 t)). The controller estimates a
//! through a_hat_dot = -gain * phi(t) * <grad V(x), e2> and cancels with
//! u = <a_hat, kappa phi(t)>. The disturbance enters through the same
//! channel as the control (matched uncertainty), so exact cancellation is
//! achievable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::dynamics::{integrate, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::models::Certificate;

pub const DISTURBANCE_DIM: usize = 10;

/// Unknown sinusoidal disturbance <a, kappa phi(t)>.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DisturbanceSpec {
    /// Unknown coefficients, drawn from N(0, I).
    pub a: Vec<f64>,
    /// Basis frequencies, drawn from Uniform[0, 2 pi).
    pub omega: Vec<f64>,
    /// Disturbance strength.
    pub kappa: f64,
}

impl DisturbanceSpec {
    pub fn sample(kappa: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..DISTURBANCE_DIM)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let omega: Vec<f64> = (0..DISTURBANCE_DIM)
            .map(|_| rng.gen::<f64>() * 2.0 * std::f64::consts::PI)
            .collect();
        DisturbanceSpec { a, omega, kappa }
    }

    pub fn basis_into(&self, t: f64, out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.omega) {
            *o = (w * t).sin();
        }
    }

    /// <a, kappa phi(t)>.
    pub fn value(&self, t: f64) -> f64 {
        self.a
            .iter()
            .zip(&self.omega)
            .map(|(a, w)| a * self.kappa * (w * t).sin())
            .sum()
    }
}

/// Pendulum plant parameters; the linearized flag replaces sin(theta) by
/// theta for analytic baseline experiments.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PendulumPlant {
    pub m: f64,
    pub g: f64,
    pub l: f64,
    pub b: f64,
    #[serde(default)]
    pub linearized: bool,
}

impl Default for PendulumPlant {
    fn default() -> Self {
        PendulumPlant {
            m: 1.0,
            g: 9.81,
            l: 1.0,
            b: 2.0,
            linearized: false,
        }
    }
}

/// Which control input closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ControlLaw {
    None,
    Adaptive,
    Oracle,
}

/// One closed-loop rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveRun {
    /// Pendulum state trajectory (theta, theta_dot).
    pub traj: Trajectory,
    /// Estimate history, row-major n x 10.
    pub a_hat: Vec<f64>,
    /// Control input at the grid times.
    pub u: Vec<f64>,
    pub dist: DisturbanceSpec,
    pub gain: f64,
}

impl AdaptiveRun {
    pub fn a_hat_at(&self, k: usize) -> &[f64] {
        &self.a_hat[k * DISTURBANCE_DIM..(k + 1) * DISTURBANCE_DIM]
    }

    /// sup_t |x(t)|.
    pub fn sup_state_norm(&self) -> f64 {
        (0..self.traj.len())
            .map(|k| crate::linalg::norm(self.traj.state(k)))
            .fold(0.0, f64::max)
    }

    pub fn terminal_state_norm(&self) -> f64 {
        crate::linalg::norm(self.traj.state(self.traj.len() - 1))
    }

    /// CSV rows "t,theta,theta_dot,u,a_err" with a_err = |a_hat - a|.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,theta,theta_dot,u,a_err")?;
        for k in 0..self.traj.len() {
            let x = self.traj.state(k);
            let ah = self.a_hat_at(k);
            let a_err: f64 = ah
                .iter()
                .zip(&self.dist.a)
                .map(|(h, a)| (h - a) * (h - a))
                .sum::<f64>()
                .sqrt();
            writeln!(
                f,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.traj.time(k),
                x[0],
                x[1],
                self.u[k],
                a_err
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

fn augmented_system(
    model: Option<Arc<Certificate>>,
    dist: &DisturbanceSpec,
    plant: &PendulumPlant,
    law: ControlLaw,
    gain: f64,
) -> SystemSpec {
    let dist = dist.clone();
    let plant = *plant;
    let ml2 = plant.m * plant.l * plant.l;
    let mgl = plant.m * plant.g * plant.l;
    let field = move |z: &[f64], t: f64, out: &mut [f64]| {
        let (theta, theta_dot) = (z[0], z[1]);
        let a_hat = &z[2..2 + DISTURBANCE_DIM];
        let mut phi = [0.0; DISTURBANCE_DIM];
        dist.basis_into(t, &mut phi);
        let u = match law {
            ControlLaw::None => 0.0,
            ControlLaw::Adaptive => {
                dist.kappa * a_hat.iter().zip(&phi).map(|(a, p)| a * p).sum::<f64>()
            }
            ControlLaw::Oracle => {
                dist.kappa * dist.a.iter().zip(&phi).map(|(a, p)| a * p).sum::<f64>()
            }
        };
        let d: f64 = dist
            .a
            .iter()
            .zip(&phi)
            .map(|(a, p)| a * dist.kappa * p)
            .sum();
        let restoring = if plant.linearized {
            mgl * theta
        } else {
            mgl * theta.sin()
        };
        out[0] = theta_dot;
        out[1] = (-plant.b * theta_dot - restoring - d + u) / ml2;
        match (law, &model) {
            (ControlLaw::Adaptive, Some(v)) => {
                let grad = v.scalar().expect("adaptive law needs a scalar V").grad_x(&z[..2]);
                for i in 0..DISTURBANCE_DIM {
                    out[2 + i] = -gain * phi[i] * grad[1];
                }
            }
            _ => {
                out[2..2 + DISTURBANCE_DIM].iter_mut().for_each(|o| *o = 0.0);
            }
        }
    };
    SystemSpec::new(
        "pendulum_adaptive",
        2 + DISTURBANCE_DIM,
        Arc::new(field),
        None,
    )
}

fn run_closed_loop(
    model: Option<Arc<Certificate>>,
    dist: &DisturbanceSpec,
    plant: &PendulumPlant,
    x0: &[f64],
    t_final: f64,
    dt: f64,
    law: ControlLaw,
    gain: f64,
) -> Result<AdaptiveRun> {
    if x0.len() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: x0.len(),
        });
    }
    let sys = augmented_system(model, dist, plant, law, gain);
    let mut z0 = vec![0.0; 2 + DISTURBANCE_DIM];
    z0[..2].copy_from_slice(x0);
    let aug = integrate(&sys, &z0, t_final, dt)?;
    let n = aug.len();
    let mut states = Vec::with_capacity(n * 2);
    let mut a_hat = Vec::with_capacity(n * DISTURBANCE_DIM);
    let mut u = Vec::with_capacity(n);
    let mut phi = [0.0; DISTURBANCE_DIM];
    for k in 0..n {
        let z = aug.state(k);
        states.extend_from_slice(&z[..2]);
        a_hat.extend_from_slice(&z[2..]);
        dist.basis_into(aug.time(k), &mut phi);
        let uk = match law {
            ControlLaw::None => 0.0,
            ControlLaw::Adaptive => {
                dist.kappa
                    * z[2..]
                        .iter()
                        .zip(&phi)
                        .map(|(a, p)| a * p)
                        .sum::<f64>()
            }
            ControlLaw::Oracle => dist.value(aug.time(k)),
        };
        u.push(uk);
    }
    Ok(AdaptiveRun {
        traj: Trajectory::new(dt, 2, states),
        a_hat,
        u,
        dist: dist.clone(),
        gain,
    })
}

/// Closed-loop rollout with the learned-Lyapunov adaptation law (or the
/// open loop u = 0 when `adapt` is false). The augmented (x, a_hat) state
/// integrates with the same fixed-step RK4 as the plant, evaluating the
/// disturbance and grad V at stage times.
pub fn simulate_adaptive(
    v_model: &Certificate,
    dist: &DisturbanceSpec,
    plant: &PendulumPlant,
    x0: &[f64],
    t_final: f64,
    dt: f64,
    adapt: bool,
    gain: f64,
) -> Result<AdaptiveRun> {
    if v_model.scalar().is_none() {
        return Err(Error::ConditionMismatch {
            condition: "adaptive control".into(),
            reason: "requires a scalar Lyapunov model".into(),
        });
    }
    if v_model.state_dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: v_model.state_dim(),
        });
    }
    let law = if adapt {
        ControlLaw::Adaptive
    } else {
        ControlLaw::None
    };
    run_closed_loop(
        Some(Arc::new(v_model.clone())),
        dist,
        plant,
        x0,
        t_final,
        dt,
        law,
        gain,
    )
}

/// Perfect-cancellation baseline u(t) = <a, kappa phi(t)> with the true
/// coefficients; lower-bounds the achievable regulation error.
pub fn ideal_oracle_run(
    dist: &DisturbanceSpec,
    plant: &PendulumPlant,
    x0: &[f64],
    t_final: f64,
    dt: f64,
) -> Result<AdaptiveRun> {
    run_closed_loop(None, dist, plant, x0, t_final, dt, ControlLaw::Oracle, 0.0)
}

/// Augmented certificate V_bar = V(x) + kappa/(2 gain) |a_hat - a|^2 whose
/// decrease certifies the adaptation transient.
pub fn augmented_certificate(run: &AdaptiveRun, v_model: &Certificate, k: usize) -> f64 {
    let s = v_model.scalar().expect("scalar Lyapunov model");
    let v = s.value(run.traj.state(k));
    let ah = run.a_hat_at(k);
    let err2: f64 = ah
        .iter()
        .zip(&run.dist.a)
        .map(|(h, a)| (h - a) * (h - a))
        .sum();
    v + run.dist.kappa / (2.0 * run.gain) * err2
}
