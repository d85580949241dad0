//! Dynamical systems: benchmark vector fields with analytic Jacobians,
//! prolongated (tangent-bundle) systems, and a fixed-step RK4 integrator.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matvec;

type FieldFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
/// Jacobian callback writes the row-major p x p matrix d f_i / d x_j.
type JacobianFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;

/// A dynamical system xdot = f(x, t) with optional analytic Jacobian.
#[derive(Clone)]
pub struct SystemSpec {
    name: String,
    state_dim: usize,
    field: Arc<FieldFn>,
    jacobian: Option<Arc<JacobianFn>>,
}

impl SystemSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        field: Arc<FieldFn>,
        jacobian: Option<Arc<JacobianFn>>,
    ) -> Self {
        Self {
            name: name.into(),
            state_dim,
            field,
            jacobian,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// f(x, t) into a caller-provided buffer.
    pub fn field_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::Dimension {
                expected: self.state_dim,
                got: x.len(),
            });
        }
        (self.field)(x, t, out);
        Ok(())
    }

    /// Row-major Jacobian d f / d x at (x, t).
    pub fn jacobian_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::Dimension {
                expected: self.state_dim,
                got: x.len(),
            });
        }
        let jac = self
            .jacobian
            .as_ref()
            .ok_or_else(|| Error::MissingJacobian(self.name.clone()))?;
        jac(x, t, out);
        Ok(())
    }
}

/// Evaluate f(x, t), allocating the output.
pub fn eval_field(sys: &SystemSpec, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; sys.state_dim()];
    sys.field_into(x, t, &mut out)?;
    Ok(out)
}

/// Evaluate the Jacobian at (x, t), allocating the row-major output.
pub fn eval_jacobian(sys: &SystemSpec, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let p = sys.state_dim();
    let mut out = vec![0.0; p * p];
    sys.jacobian_into(x, t, &mut out)?;
    Ok(out)
}

/// A point on the tangent bundle: base state and tangent perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProlongatedState {
    pub x: Vec<f64>,
    pub delta_x: Vec<f64>,
}

impl ProlongatedState {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.x.clone();
        out.extend_from_slice(&self.delta_x);
        out
    }

    pub fn from_flat(z: &[f64]) -> Self {
        let p = z.len() / 2;
        Self {
            x: z[..p].to_vec(),
            delta_x: z[p..].to_vec(),
        }
    }
}

/// Builds the 2p-dimensional tangent-bundle system
/// (xdot, delta_xdot) = (f(x), J(x) delta_x).
pub fn prolongate(sys: &SystemSpec) -> Result<SystemSpec> {
    if !sys.has_jacobian() {
        return Err(Error::MissingJacobian(sys.name.clone()));
    }
    let p = sys.state_dim();
    let inner = sys.clone();
    let field = move |z: &[f64], t: f64, out: &mut [f64]| {
        let (x, dx) = z.split_at(p);
        let (fx, fdx) = out.split_at_mut(p);
        (inner.field)(x, t, fx);
        let mut jac = vec![0.0; p * p];
        (inner.jacobian.as_ref().unwrap())(x, t, &mut jac);
        matvec(&jac, p, p, dx, fdx);
    };
    Ok(SystemSpec::new(
        format!("{}_prolongated", sys.name),
        2 * p,
        Arc::new(field),
        None,
    ))
}

/// A trajectory on a uniform time grid. `times[k] = k * dt` by
/// construction, so the grid is exactly uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    state_dim: usize,
    /// Row-major [time][channel] states.
    states: Vec<f64>,
    /// Same layout as `states`, filled by numerical differentiation.
    derivs: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(dt: f64, state_dim: usize, states: Vec<f64>) -> Self {
        assert!(dt > 0.0);
        assert_eq!(states.len() % state_dim, 0);
        Self {
            dt,
            state_dim,
            states,
            derivs: None,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn deriv(&self, k: usize) -> Option<&[f64]> {
        self.derivs
            .as_ref()
            .map(|d| &d[k * self.state_dim..(k + 1) * self.state_dim])
    }

    pub fn derivs_flat(&self) -> Option<&[f64]> {
        self.derivs.as_deref()
    }

    pub fn has_derivs(&self) -> bool {
        self.derivs.is_some()
    }

    pub fn set_derivs(&mut self, derivs: Vec<f64>) {
        assert_eq!(derivs.len(), self.states.len());
        self.derivs = Some(derivs);
    }
}

/// Norm above which integration aborts; prevents silent NaN datasets.
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Classical fixed-step RK4 on the uniform grid {0, dt, ..., n*dt} with
/// n = round(t_final / dt). Derivatives are left unset.
pub fn integrate(sys: &SystemSpec, x0: &[f64], t_final: f64, dt: f64) -> Result<Trajectory> {
    if dt <= 0.0 {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if t_final < dt {
        return Err(Error::Config(format!(
            "t_final ({t_final}) must be at least dt ({dt})"
        )));
    }
    let p = sys.state_dim();
    if x0.len() != p {
        return Err(Error::Dimension {
            expected: p,
            got: x0.len(),
        });
    }
    let n_steps = (t_final / dt).round() as usize;
    let mut states = Vec::with_capacity((n_steps + 1) * p);
    states.extend_from_slice(x0);

    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; p];
    let mut k2 = vec![0.0; p];
    let mut k3 = vec![0.0; p];
    let mut k4 = vec![0.0; p];
    let mut xs = vec![0.0; p];

    for step in 0..n_steps {
        let t = step as f64 * dt;
        (sys.field)(&x, t, &mut k1);
        for i in 0..p {
            xs[i] = x[i] + 0.5 * dt * k1[i];
        }
        (sys.field)(&xs, t + 0.5 * dt, &mut k2);
        for i in 0..p {
            xs[i] = x[i] + 0.5 * dt * k2[i];
        }
        (sys.field)(&xs, t + 0.5 * dt, &mut k3);
        for i in 0..p {
            xs[i] = x[i] + dt * k3[i];
        }
        (sys.field)(&xs, t + dt, &mut k4);
        for i in 0..p {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        if !norm2.is_finite() || norm2 > DIVERGENCE_GUARD * DIVERGENCE_GUARD {
            return Err(Error::Divergence {
                step: step + 1,
                norm: norm2.sqrt(),
            });
        }
        states.extend_from_slice(&x);
    }
    Ok(Trajectory::new(dt, p, states))
}

/// Serializable description of a benchmark system.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum SystemConfig {
    Pendulum {
        #[serde(default = "default_mass")]
        m: f64,
        #[serde(default = "default_gravity")]
        g: f64,
        #[serde(default = "default_length")]
        l: f64,
        #[serde(default = "default_damping")]
        b: f64,
    },
    Vdp {
        #[serde(default = "default_one")]
        alpha: f64,
        #[serde(default = "default_one")]
        k: f64,
        #[serde(default = "default_one")]
        omega: f64,
    },
    Gradflow6d,
    Linear {
        /// Row-major square matrix A for xdot = A x.
        a: Vec<Vec<f64>>,
    },
}

fn default_mass() -> f64 {
    1.0
}
fn default_gravity() -> f64 {
    9.81
}
fn default_length() -> f64 {
    1.0
}
fn default_damping() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}

impl SystemConfig {
    pub fn pendulum_default() -> Self {
        SystemConfig::Pendulum {
            m: 1.0,
            g: 9.81,
            l: 1.0,
            b: 2.0,
        }
    }

    pub fn vdp_default() -> Self {
        SystemConfig::Vdp {
            alpha: 1.0,
            k: 1.0,
            omega: 1.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemConfig::Pendulum { .. } | SystemConfig::Vdp { .. } => 2,
            SystemConfig::Gradflow6d => 6,
            SystemConfig::Linear { a } => a.len(),
        }
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::NonPositiveParam {
            name: name.to_string(),
            value,
        });
    }
    Ok(())
}

/// Construct a benchmark system with analytic field and Jacobian.
pub fn make_builtin(config: &SystemConfig) -> Result<SystemSpec> {
    match config {
        SystemConfig::Pendulum { m, g, l, b } => {
            check_positive("m", *m)?;
            check_positive("g", *g)?;
            check_positive("l", *l)?;
            check_positive("b", *b)?;
            let (m, g, l, b) = (*m, *g, *l, *b);
            // m l^2 theta_dd + b theta_d + m g l sin(theta) = 0
            let ml2 = m * l * l;
            let field = move |x: &[f64], _t: f64, out: &mut [f64]| {
                out[0] = x[1];
                out[1] = -(b * x[1] + m * g * l * x[0].sin()) / ml2;
            };
            let jac = move |x: &[f64], _t: f64, out: &mut [f64]| {
                out[0] = 0.0;
                out[1] = 1.0;
                out[2] = -(m * g * l * x[0].cos()) / ml2;
                out[3] = -b / ml2;
            };
            Ok(SystemSpec::new(
                "pendulum",
                2,
                Arc::new(field),
                Some(Arc::new(jac)),
            ))
        }
        SystemConfig::Vdp { alpha, k, omega } => {
            check_positive("alpha", *alpha)?;
            check_positive("k", *k)?;
            check_positive("omega", *omega)?;
            let (alpha, k, omega) = (*alpha, *k, *omega);
            // x_dd + alpha (x^2 + k) x_d + omega^2 x = 0 (damped form)
            let field = move |x: &[f64], _t: f64, out: &mut [f64]| {
                out[0] = x[1];
                out[1] = -alpha * (x[0] * x[0] + k) * x[1] - omega * omega * x[0];
            };
            let jac = move |x: &[f64], _t: f64, out: &mut [f64]| {
                out[0] = 0.0;
                out[1] = 1.0;
                out[2] = -2.0 * alpha * x[0] * x[1] - omega * omega;
                out[3] = -alpha * (x[0] * x[0] + k);
            };
            Ok(SystemSpec::new(
                "vdp",
                2,
                Arc::new(field),
                Some(Arc::new(jac)),
            ))
        }
        SystemConfig::Gradflow6d => {
            // Gradient flow on L(x) = |x|^2 + sum_{i != j} x_i^2 x_j^2:
            // f_k = -2 x_k - 4 x_k (|x|^2 - x_k^2)
            const P: usize = 6;
            let field = |x: &[f64], _t: f64, out: &mut [f64]| {
                let norm2: f64 = x.iter().map(|v| v * v).sum();
                for k in 0..P {
                    out[k] = -2.0 * x[k] - 4.0 * x[k] * (norm2 - x[k] * x[k]);
                }
            };
            let jac = |x: &[f64], _t: f64, out: &mut [f64]| {
                let norm2: f64 = x.iter().map(|v| v * v).sum();
                for k in 0..P {
                    for l in 0..P {
                        out[k * P + l] = if k == l {
                            -2.0 - 4.0 * (norm2 - x[k] * x[k])
                        } else {
                            -8.0 * x[k] * x[l]
                        };
                    }
                }
            };
            Ok(SystemSpec::new(
                "gradflow6d",
                6,
                Arc::new(field),
                Some(Arc::new(jac)),
            ))
        }
        SystemConfig::Linear { a } => {
            let p = a.len();
            if p == 0 {
                return Err(Error::Config("linear system matrix is empty".into()));
            }
            let mut flat = Vec::with_capacity(p * p);
            for row in a {
                if row.len() != p {
                    return Err(Error::Config(format!(
                        "linear system matrix must be square: row of length {} in {}x{} matrix",
                        row.len(),
                        p,
                        p
                    )));
                }
                flat.extend_from_slice(row);
            }
            let mat = Arc::new(flat);
            let mat_f = mat.clone();
            let field = move |x: &[f64], _t: f64, out: &mut [f64]| {
                matvec(&mat_f, p, p, x, out);
            };
            let mat_j = mat.clone();
            let jac = move |_x: &[f64], _t: f64, out: &mut [f64]| {
                out.copy_from_slice(&mat_j);
            };
            Ok(SystemSpec::new(
                "linear",
                p,
                Arc::new(field),
                Some(Arc::new(jac)),
            ))
        }
    }
}

/// Wrap an angle to (-pi, pi]. Used when constructing initial conditions;
/// states are never wrapped during integration.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = theta % two_pi;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    } else if t > std::f64::consts::PI {
        t -= two_pi;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff_jacobian(sys: &SystemSpec, x: &[f64], t: f64) -> Vec<f64> {
        let p = sys.state_dim();
        let mut jac = vec![0.0; p * p];
        for j in 0..p {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fp = eval_field(sys, &xp, t).unwrap();
            let fm = eval_field(sys, &xm, t).unwrap();
            for i in 0..p {
                jac[i * p + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    fn all_builtins() -> Vec<SystemSpec> {
        vec![
            make_builtin(&SystemConfig::pendulum_default()).unwrap(),
            make_builtin(&SystemConfig::vdp_default()).unwrap(),
            make_builtin(&SystemConfig::Gradflow6d).unwrap(),
            make_builtin(&SystemConfig::Linear {
                a: vec![vec![-1.0, 2.0], vec![0.5, -3.0]],
            })
            .unwrap(),
        ]
    }

    #[test]
    fn equilibria_at_origin() {
        let pend = make_builtin(&SystemConfig::pendulum_default()).unwrap();
        assert_eq!(eval_field(&pend, &[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
        let vdp = make_builtin(&SystemConfig::vdp_default()).unwrap();
        assert_eq!(eval_field(&vdp, &[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn gradflow_field_at_basis_vector() {
        // symbolic gradient of |x|^2 + sum_{i!=j} x_i^2 x_j^2 at e1 gives -2 e1
        let sys = make_builtin(&SystemConfig::Gradflow6d).unwrap();
        let mut x = vec![0.0; 6];
        x[0] = 1.0;
        let f = eval_field(&sys, &x, 0.0).unwrap();
        assert!((f[0] + 2.0).abs() < 1e-14);
        for v in &f[1..] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn vdp_field_by_substitution() {
        let sys = make_builtin(&SystemConfig::vdp_default()).unwrap();
        let f = eval_field(&sys, &[1.0, 1.0], 0.0).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-15);
        assert!((f[1] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn pendulum_jacobian_at_origin() {
        let sys = make_builtin(&SystemConfig::pendulum_default()).unwrap();
        let j = eval_jacobian(&sys, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(j, vec![0.0, 1.0, -9.81, -2.0]);
    }

    #[test]
    fn linear_field_is_ax() {
        let a = vec![vec![-1.0, 2.0], vec![0.5, -3.0]];
        let sys = make_builtin(&SystemConfig::Linear { a }).unwrap();
        let f = eval_field(&sys, &[1.0, 2.0], 0.0).unwrap();
        assert_eq!(f, vec![3.0, -5.5]);
    }

    #[test]
    fn bad_params_rejected() {
        let err = make_builtin(&SystemConfig::Pendulum {
            m: -1.0,
            g: 9.81,
            l: 1.0,
            b: 2.0,
        });
        assert!(matches!(err, Err(Error::NonPositiveParam { .. })));
        let err = make_builtin(&SystemConfig::Linear {
            a: vec![vec![1.0, 2.0]],
        });
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let sys = make_builtin(&SystemConfig::pendulum_default()).unwrap();
        assert!(matches!(
            eval_field(&sys, &[0.0, 0.0, 0.0], 0.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for sys in all_builtins() {
            let p = sys.state_dim();
            for _ in 0..100 {
                let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let ja = eval_jacobian(&sys, &x, 0.0).unwrap();
                let jf = finite_diff_jacobian(&sys, &x, 0.0);
                let num: f64 = ja
                    .iter()
                    .zip(&jf)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let den: f64 = ja.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                assert!(
                    num / den < 1e-5,
                    "{}: jacobian rel err {} at {:?}",
                    sys.name(),
                    num / den,
                    x
                );
            }
        }
    }

    #[test]
    fn prolongated_linear_system() {
        let a = vec![vec![-1.0, 2.0], vec![0.5, -3.0]];
        let sys = make_builtin(&SystemConfig::Linear { a }).unwrap();
        let prol = prolongate(&sys).unwrap();
        assert_eq!(prol.state_dim(), 2 * sys.state_dim());
        // (Ax, A dx)
        let f = eval_field(&prol, &[1.0, 2.0, 0.5, -1.0], 0.0).unwrap();
        assert_eq!(&f[..2], &[3.0, -5.5]);
        assert_eq!(&f[2..], &[-2.5, 3.25]);
    }

    #[test]
    fn prolongated_pendulum_at_origin() {
        let sys = make_builtin(&SystemConfig::pendulum_default()).unwrap();
        let prol = prolongate(&sys).unwrap();
        let d = [0.3, -0.7];
        let f = eval_field(&prol, &[0.0, 0.0, d[0], d[1]], 0.0).unwrap();
        assert_eq!(&f[..2], &[0.0, 0.0]);
        // [[0,1],[-9.81,-2]] d
        assert!((f[2] - d[1]).abs() < 1e-15);
        assert!((f[3] - (-9.81 * d[0] - 2.0 * d[1])).abs() < 1e-15);
    }

    #[test]
    fn prolongate_requires_jacobian() {
        let sys = SystemSpec::new(
            "nojac",
            1,
            Arc::new(|x: &[f64], _t: f64, out: &mut [f64]| out[0] = -x[0]),
            None,
        );
        assert!(matches!(
            prolongate(&sys),
            Err(Error::MissingJacobian(_))
        ));
    }

    fn scalar_decay() -> SystemSpec {
        SystemSpec::new(
            "decay",
            1,
            Arc::new(|x: &[f64], _t: f64, out: &mut [f64]| out[0] = -x[0]),
            None,
        )
    }

    #[test]
    fn rk4_exponential_decay() {
        let sys = scalar_decay();
        let traj = integrate(&sys, &[1.0], 1.0, 1e-3).unwrap();
        let x_end = traj.state(traj.len() - 1)[0];
        assert!((x_end - (-1.0f64).exp()).abs() < 1e-10);
        assert_eq!(traj.len(), 1001);
    }

    #[test]
    fn rk4_order_four() {
        // halving dt reduces global error ~16x; accept order in [3.7, 4.3]
        let sys = scalar_decay();
        let exact = (-1.0f64).exp();
        let mut errs = Vec::new();
        for &dt in &[0.1, 0.05, 0.025, 0.0125] {
            let traj = integrate(&sys, &[1.0], 1.0, dt).unwrap();
            errs.push((traj.state(traj.len() - 1)[0] - exact).abs());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(
                (3.7..=4.3).contains(&order),
                "observed order {order} outside [3.7, 4.3]"
            );
        }
    }

    #[test]
    fn pendulum_energy_dissipates() {
        let sys = make_builtin(&SystemConfig::pendulum_default()).unwrap();
        let traj = integrate(&sys, &[1.0, 0.0], 8.0, 0.02).unwrap();
        let energy = |x: &[f64]| 0.5 * x[1] * x[1] + 9.81 * (1.0 - x[0].cos());
        let mut prev = energy(traj.state(0));
        for k in 1..traj.len() {
            let e = energy(traj.state(k));
            assert!(e <= prev + 1e-9, "energy increased at step {k}");
            prev = e;
        }
    }

    #[test]
    fn equilibrium_preserved() {
        for sys in all_builtins() {
            let p = sys.state_dim();
            let traj = integrate(&sys, &vec![0.0; p], 1.0, 0.01).unwrap();
            for k in 0..traj.len() {
                let n: f64 = traj.state(k).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(n < 1e-12, "{} drifted to {n}", sys.name());
            }
        }
    }

    #[test]
    fn divergence_guard_fires() {
        let sys = SystemSpec::new(
            "blowup",
            1,
            Arc::new(|x: &[f64], _t: f64, out: &mut [f64]| out[0] = x[0] * x[0]),
            None,
        );
        let res = integrate(&sys, &[10.0], 5.0, 0.01);
        match res {
            Err(Error::Divergence { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn wrap_angle_convention() {
        use std::f64::consts::PI;
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn variational_consistency_first_order() {
        // integrating the prolongated system matches flow differences to
        // second order in the perturbation size
        let sys = make_builtin(&SystemConfig::vdp_default()).unwrap();
        let prol = prolongate(&sys).unwrap();
        let xi = [0.8, -0.4];
        let dir = [0.6, 0.8];
        let t_final = 1.0;
        let dt = 1e-3;
        let mut cs = Vec::new();
        for &eps in &[1e-2, 5e-3, 2.5e-3] {
            let z0 = [xi[0], xi[1], eps * dir[0], eps * dir[1]];
            let prol_traj = integrate(&prol, &z0, t_final, dt).unwrap();
            let base = integrate(&sys, &xi, t_final, dt).unwrap();
            let pert = integrate(&sys, &[xi[0] + eps * dir[0], xi[1] + eps * dir[1]], t_final, dt)
                .unwrap();
            let mut worst = 0.0f64;
            for k in 0..base.len() {
                let lin = &prol_traj.state(k)[2..];
                let true_diff = [
                    pert.state(k)[0] - base.state(k)[0],
                    pert.state(k)[1] - base.state(k)[1],
                ];
                let err = ((lin[0] - true_diff[0]).powi(2) + (lin[1] - true_diff[1]).powi(2))
                    .sqrt();
                worst = worst.max(err);
            }
            cs.push(worst / (eps * eps));
        }
        // fitted constant stable across halvings of eps
        for w in cs.windows(2) {
            assert!(
                (w[0] / w[1] - 1.0).abs() < 0.5,
                "second-order constant unstable: {cs:?}"
            );
        }
    }
}
