//! Global-stability geometry for learned certificates: grid-based
//! violation sets, violation-set ball radii on the box and on the tangent
//! bundle (where the radius involves spherical-cap measures), constant
//! estimation by seeded sampling, the comparison-lemma envelope for
//! certificate values along flows, and the known-dynamics epsilon
//! threshold for contraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::datagen::{Dataset, SampleRegion};
use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::linalg::{norm, sym_eig_max, sym_eigenvalues};
use crate::models::{metric_time_derivative, Certificate, QuadraticLyapunov};
use crate::special::{betainc_reg, unit_ball_volume};

/// Uniform evaluation grid over an axis-aligned box.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.len() != self.counts.len() {
            return Err(Error::Config("grid axis lists must share a length".into()));
        }
        for a in 0..self.lo.len() {
            if self.lo[a] >= self.hi[a] {
                return Err(Error::Config(format!(
                    "grid axis {a}: lo {} must be below hi {}",
                    self.lo[a], self.hi[a]
                )));
            }
            if self.counts[a] == 0 {
                return Err(Error::Config(format!("grid axis {a} has zero points")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn total_points(&self) -> usize {
        self.counts.iter().product()
    }

    /// Point for a flat index, axes varying fastest last.
    pub fn point(&self, mut idx: usize, out: &mut [f64]) {
        for a in (0..self.dim()).rev() {
            let c = self.counts[a];
            let i = idx % c;
            idx /= c;
            out[a] = if c == 1 {
                0.5 * (self.lo[a] + self.hi[a])
            } else {
                self.lo[a] + (self.hi[a] - self.lo[a]) * i as f64 / (c - 1) as f64
            };
        }
    }
}

/// Which pointwise condition the grid checks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GridCondition {
    /// <grad V(x), f(x)> + rate V(x) > 0 marks a violation.
    Lyap { rate: f64 },
    /// lambda_max(J'M + MJ + Mdot + 2 eta_lambda M) > 0 marks a violation.
    Metric { eta_lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub grid: GridSpec,
    /// Flattened points, row-major n x p.
    pub points: Vec<f64>,
    pub residuals: Vec<f64>,
    pub violates: Vec<bool>,
    pub violation_count: usize,
}

impl GridReport {
    pub fn fraction(&self) -> f64 {
        self.violation_count as f64 / self.residuals.len() as f64
    }

    /// CSV rows "x1,...,xp,residual,violates".
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let p = self.grid.dim();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
        writeln!(f, "{},residual,violates", header.join(","))?;
        for i in 0..self.residuals.len() {
            let coords: Vec<String> = (0..p)
                .map(|a| format!("{:.17e}", self.points[i * p + a]))
                .collect();
            writeln!(
                f,
                "{},{:.17e},{}",
                coords.join(","),
                self.residuals[i],
                u8::from(self.violates[i])
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

fn grid_residual(
    model: &Certificate,
    sys: &SystemSpec,
    condition: &GridCondition,
    x: &[f64],
) -> Result<f64> {
    let p = sys.state_dim();
    match condition {
        GridCondition::Lyap { rate } => {
            let s = model.scalar().ok_or_else(|| Error::ConditionMismatch {
                condition: "grid lyapunov".into(),
                reason: "requires a scalar certificate".into(),
            })?;
            let mut f = vec![0.0; p];
            sys.field_into(x, 0.0, &mut f)?;
            let (v, dir) = s.value_and_dir(x, &f);
            Ok(dir + rate * v)
        }
        GridCondition::Metric { eta_lambda } => {
            let m = model.metric().ok_or_else(|| Error::ConditionMismatch {
                condition: "grid metric".into(),
                reason: "requires a metric certificate".into(),
            })?;
            let mut jac = vec![0.0; p * p];
            sys.jacobian_into(x, 0.0, &mut jac)?;
            let mut f = vec![0.0; p];
            sys.field_into(x, 0.0, &mut f)?;
            let mut metric = vec![0.0; p * p];
            m.metric_into(x, &mut metric);
            let mdot = metric_time_derivative(m, x, &f);
            let mut resid = vec![0.0; p * p];
            for r in 0..p {
                for c in 0..p {
                    let mut v = mdot[r * p + c] + 2.0 * eta_lambda * metric[r * p + c];
                    for l in 0..p {
                        v += jac[l * p + r] * metric[l * p + c]
                            + metric[r * p + l] * jac[l * p + c];
                    }
                    resid[r * p + c] = v;
                }
            }
            Ok(sym_eig_max(&resid, p))
        }
    }
}

/// Evaluate the certificate condition at every grid point.
pub fn grid_violation(
    model: &Certificate,
    sys: &SystemSpec,
    grid: &GridSpec,
    condition: &GridCondition,
) -> Result<GridReport> {
    grid.validate()?;
    let p = grid.dim();
    if p != sys.state_dim() {
        return Err(Error::Dimension {
            expected: sys.state_dim(),
            got: p,
        });
    }
    if matches!(condition, GridCondition::Metric { .. }) && !sys.has_jacobian() {
        return Err(Error::MissingJacobian(sys.name().to_string()));
    }
    let n = grid.total_points();
    let results: Vec<Result<(Vec<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut x = vec![0.0; p];
            grid.point(idx, &mut x);
            let r = grid_residual(model, sys, condition, &x)?;
            Ok((x, r))
        })
        .collect();
    let mut points = Vec::with_capacity(n * p);
    let mut residuals = Vec::with_capacity(n);
    let mut violates = Vec::with_capacity(n);
    let mut count = 0usize;
    for item in results {
        let (x, r) = item?;
        points.extend_from_slice(&x);
        let v = r > 0.0;
        count += usize::from(v);
        residuals.push(r);
        violates.push(v);
    }
    Ok(GridReport {
        grid: grid.clone(),
        points,
        residuals,
        violates,
        violation_count: count,
    })
}

/// Radius of the largest ball that fits inside a violation set of measure
/// eps within a region of volume vol_x:
/// r(eps) = (eps vol_x / vol(B_p(1)))^{1/p}.
pub fn r_eps_ball(eps: f64, vol_x: f64, p: usize) -> f64 {
    assert!((0.0..=1.0).contains(&eps), "eps must lie in [0,1]");
    assert!(vol_x > 0.0, "region volume must be positive");
    (eps * vol_x / unit_ball_volume(p)).powf(1.0 / p as f64)
}

/// Normalized Haar measure of a spherical cap of geodesic radius r on
/// S^{p-1}, via the regularized incomplete beta function with hemisphere
/// reflection.
pub fn spherical_cap(r: f64, p: usize) -> f64 {
    assert!(p >= 2, "sphere dimension needs p >= 2");
    assert!(r >= 0.0);
    use std::f64::consts::PI;
    let a = (p as f64 - 1.0) / 2.0;
    if r >= PI {
        1.0
    } else if r < PI / 2.0 {
        0.5 * betainc_reg(r.sin().powi(2), a, 0.5)
    } else {
        1.0 - 0.5 * betainc_reg((PI - r).sin().powi(2), a, 0.5)
    }
}

/// Violation-set radius on X x S^{p-1}:
/// sup{ r > 0 : r^p zeta_p(r) <= eps vol_x / vol(B_p(1)) }, found by
/// bisection on the increasing map r -> r^p zeta_p(r).
pub fn r_eps_sphere(eps: f64, vol_x: f64, p: usize) -> f64 {
    assert!((0.0..=1.0).contains(&eps), "eps must lie in [0,1]");
    assert!(vol_x > 0.0);
    let target = eps * vol_x / unit_ball_volume(p);
    if target <= 0.0 {
        return 0.0;
    }
    let g = |r: f64| r.powi(p as i32) * spherical_cap(r, p);
    let mut hi = 1.0;
    while g(hi) <= target {
        hi *= 2.0;
        if hi > 1e12 {
            return hi;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    lo
}

/// Exponential class-KL envelope beta(s, t) = M s e^{-alpha t}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct KLFunctionSpec {
    pub m_coef: f64,
    pub alpha: f64,
}

impl KLFunctionSpec {
    pub fn new(m_coef: f64, alpha: f64) -> Result<Self> {
        if m_coef < 1.0 {
            return Err(Error::Config(format!(
                "KL coefficient M must be at least 1, got {m_coef}"
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::Config(format!(
                "KL decay alpha must be positive, got {alpha}"
            )));
        }
        Ok(KLFunctionSpec { m_coef, alpha })
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.m_coef * s * (-self.alpha * t).exp()
    }
}

/// Fit the exponential envelope to paired-trajectory decay by least
/// squares on log |delta_x(t)| - log |delta_x(0)| against t. M is clamped
/// to at least 1 and alpha to a positive value so the result stays a valid
/// class-KL envelope.
pub fn fit_kl_exponential(dataset: &Dataset) -> Result<KLFunctionSpec> {
    let pairs = dataset.paired()?;
    let mut st = 0.0;
    let mut stt = 0.0;
    let mut sy = 0.0;
    let mut sty = 0.0;
    let mut count = 0.0;
    for pair in pairs {
        let d0 = norm(pair.delta.state(0));
        if d0 <= 0.0 {
            continue;
        }
        for k in 0..pair.delta.len() {
            let d = norm(pair.delta.state(k));
            if d <= 0.0 {
                continue;
            }
            let t = pair.delta.time(k);
            let y = (d / d0).ln();
            st += t;
            stt += t * t;
            sy += y;
            sty += t * y;
            count += 1.0;
        }
    }
    if count < 2.0 {
        return Err(Error::Config(
            "not enough paired samples to fit a KL envelope".into(),
        ));
    }
    let denom = count * stt - st * st;
    if denom.abs() < 1e-300 {
        return Err(Error::Config("degenerate time grid in KL fit".into()));
    }
    let slope = (count * sty - st * sy) / denom;
    let intercept = (sy - slope * st) / count;
    let m_coef = intercept.exp().max(1.0);
    let alpha = (-slope).max(1e-6);
    Ok(KLFunctionSpec { m_coef, alpha })
}

/// Sampled sup/inf constants feeding the global-stability radii.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GlobalConstants {
    /// sup |grad V| over the sampled region (tangent-bundle gradient for
    /// metric certificates).
    pub b_grad_v: f64,
    /// sup |grad q| with q(x) = <grad V(x), f(x)>.
    pub b_grad_q: f64,
    /// sup of the vector-field Hessian norm (Frobenius, upper-bounding the
    /// operator norm).
    pub b_h: f64,
    /// Certificate lower bound: V >= mu |x|^2, or M >= mu I.
    pub mu: f64,
    /// Whether mu comes from the parameterization rather than sampling.
    pub mu_constructive: bool,
    /// Metric eigenvalue range over the samples (metric certificates).
    pub m_lower: f64,
    pub l_upper: f64,
    /// Certified decrease rate.
    pub lambda: f64,
    /// Slack split in (0, 1).
    pub eta: f64,
    /// Probe count behind the sampled sups; these are lower bounds on the
    /// true sups, to be inflated before use in radii.
    pub n_probe: usize,
    /// Inflation already applied to this instance.
    pub inflation: f64,
}

impl GlobalConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!(
                "eta must lie in (0,1), got {}",
                self.eta
            )));
        }
        if self.lambda <= 0.0 || self.mu <= 0.0 {
            return Err(Error::Config("lambda and mu must be positive".into()));
        }
        if self.m_lower > self.l_upper {
            return Err(Error::Config(format!(
                "metric bounds require m <= L, got {} > {}",
                self.m_lower, self.l_upper
            )));
        }
        Ok(())
    }

    /// Conservative copy: sups scaled up by `factor`, sampled infs scaled
    /// down. Constructive lower bounds are left untouched.
    pub fn inflated(&self, factor: f64) -> GlobalConstants {
        assert!(factor >= 1.0);
        let mut out = self.clone();
        out.b_grad_v *= factor;
        out.b_grad_q *= factor;
        out.b_h *= factor;
        out.l_upper *= factor;
        out.m_lower /= factor;
        if !out.mu_constructive {
            out.mu /= factor;
        }
        out.inflation = self.inflation * factor;
        out
    }
}

/// Central-difference gradient of a scalar map with step 1e-5 (1 + |x_k|).
fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> Result<f64>, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut z = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-5 * (1.0 + x[k].abs());
        z[k] = x[k] + h;
        let fp = f(&z)?;
        z[k] = x[k] - h;
        let fm = f(&z)?;
        z[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Frobenius norm of the second-derivative tensor of the field at x,
/// estimated by central differences of the analytic Jacobian.
fn hessian_norm(sys: &SystemSpec, x: &[f64]) -> Result<f64> {
    let p = sys.state_dim();
    let mut jp = vec![0.0; p * p];
    let mut jm = vec![0.0; p * p];
    let mut z = x.to_vec();
    let mut total = 0.0;
    for k in 0..p {
        let h = 1e-5 * (1.0 + x[k].abs());
        z[k] = x[k] + h;
        sys.jacobian_into(&z, 0.0, &mut jp)?;
        z[k] = x[k] - h;
        sys.jacobian_into(&z, 0.0, &mut jm)?;
        z[k] = x[k];
        for idx in 0..p * p {
            let d = (jp[idx] - jm[idx]) / (2.0 * h);
            total += d * d;
        }
    }
    Ok(total.sqrt())
}

/// Estimate the theorem constants by seeded sampling over the region.
/// The reported sups are maxima over `n_probe` random points and therefore
/// lower bounds on the true sups; inflate before use.
pub fn estimate_constants(
    model: &Certificate,
    sys: &SystemSpec,
    region: &SampleRegion,
    n_probe: usize,
    seed: u64,
    lambda: f64,
    eta: f64,
) -> Result<GlobalConstants> {
    region.validate()?;
    if n_probe == 0 {
        return Err(Error::Config("n_probe must be positive".into()));
    }
    let p = sys.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b_grad_v = 0.0f64;
    let mut b_grad_q = 0.0f64;
    let mut b_h = 0.0f64;
    let mut mu_sampled = f64::INFINITY;
    let mut m_lower = f64::INFINITY;
    let mut l_upper = f64::NEG_INFINITY;

    if let Some(s) = model.scalar() {
        let mut x = vec![0.0; p];
        for _ in 0..n_probe {
            region.sample_into(&mut rng, &mut x);
            let g = s.grad_x(&x);
            b_grad_v = b_grad_v.max(norm(&g));
            let mut q = |z: &[f64]| -> Result<f64> {
                let mut f = vec![0.0; p];
                sys.field_into(z, 0.0, &mut f)?;
                let (_, dir) = s.value_and_dir(z, &f);
                Ok(dir)
            };
            let gq = fd_gradient(&mut q, &x)?;
            b_grad_q = b_grad_q.max(norm(&gq));
            b_h = b_h.max(hessian_norm(sys, &x)?);
            let n2: f64 = x.iter().map(|v| v * v).sum();
            if n2 > 1e-12 {
                mu_sampled = mu_sampled.min(s.value(&x) / n2);
            }
        }
        let (mu, mu_constructive) = match model {
            // V(x) = x'(LL' + I)x >= |x|^2 by construction
            Certificate::NeuralLyapunov(_) => (1.0, true),
            Certificate::Quadratic(q) => {
                (sym_eigenvalues(&q.matrix(), p)[0], true)
            }
            _ => (mu_sampled.max(0.0), false),
        };
        let consts = GlobalConstants {
            b_grad_v,
            b_grad_q,
            b_h,
            mu,
            mu_constructive,
            m_lower: mu,
            l_upper: mu.max(1.0),
            lambda,
            eta,
            n_probe,
            inflation: 1.0,
        };
        consts.validate()?;
        return Ok(consts);
    }

    let m = model.metric().unwrap();
    let prol = crate::dynamics::prolongate(sys)?;
    let mut x = vec![0.0; p];
    let mut metric = vec![0.0; p * p];
    for _ in 0..n_probe {
        region.sample_into(&mut rng, &mut x);
        // unit-sphere tangent direction
        let mut dx: Vec<f64> = (0..p)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let dn = norm(&dx).max(1e-300);
        dx.iter_mut().for_each(|v| *v /= dn);

        m.metric_into(&x, &mut metric);
        let eigs = sym_eigenvalues(&metric, p);
        m_lower = m_lower.min(eigs[0]);
        l_upper = l_upper.max(eigs[p - 1]);

        // V(x, dx) = dx' M(x) dx on the tangent bundle
        let grads = m.metric_grad_x(&x);
        let mut gv = vec![0.0; 2 * p];
        for k in 0..p {
            let slab = &grads[k * p * p..(k + 1) * p * p];
            let mut acc = 0.0;
            for i in 0..p {
                for j in 0..p {
                    acc += dx[i] * slab[i * p + j] * dx[j];
                }
            }
            gv[k] = acc;
        }
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..p {
                acc += metric[i * p + j] * dx[j];
            }
            gv[p + i] = 2.0 * acc;
        }
        b_grad_v = b_grad_v.max(norm(&gv));

        // q(z) = <grad V(z), g(z)> along the prolongated field
        let z0: Vec<f64> = x.iter().chain(dx.iter()).copied().collect();
        let mut q = |z: &[f64]| -> Result<f64> {
            let (zx, zdx) = z.split_at(p);
            let mut field = vec![0.0; 2 * p];
            prol.field_into(z, 0.0, &mut field)?;
            let (v, vdot) = m.quad_and_rate(zx, &field[..p], zdx, &field[p..]);
            let _ = v;
            Ok(vdot)
        };
        // dV/dt along the flow equals <grad V, g>, so q is evaluated
        // directly; its gradient comes from finite differences
        let gq = fd_gradient(&mut q, &z0)?;
        b_grad_q = b_grad_q.max(norm(&gq));
        b_h = b_h.max(hessian_norm(sys, &x)?);
    }
    let (mu, mu_constructive) = if m.pd_by_construction() {
        (m.mu(), true)
    } else {
        (m_lower, false)
    };
    let consts = GlobalConstants {
        b_grad_v,
        b_grad_q,
        b_h,
        mu,
        mu_constructive,
        m_lower,
        l_upper,
        lambda,
        eta,
        n_probe,
        inflation: 1.0,
    };
    consts.validate()?;
    Ok(consts)
}

/// Ball radius outside which the learned Lyapunov function satisfies the
/// (1 - eta) lambda decrease:
/// r_b = sqrt( beta(r_eps, 0) (B_gradV + B_gradq / lambda) / (eta mu) ).
pub fn lyap_ball_radius(consts: &GlobalConstants, beta: &KLFunctionSpec, r_eps: f64) -> Result<f64> {
    consts.validate()?;
    let b0 = beta.eval(r_eps, 0.0);
    Ok((b0 * (consts.b_grad_v + consts.b_grad_q / consts.lambda) / (consts.eta * consts.mu))
        .sqrt())
}

/// Ball radius for the contraction-metric statement:
/// r_b = sqrt( r_eps B_H (B_gradq + lambda B_gradV) (L/m)^{3/2}
///             / (eta lambda mu) ).
pub fn metric_ball_radius(consts: &GlobalConstants, r_eps: f64) -> Result<f64> {
    consts.validate()?;
    if consts.m_lower <= 0.0 {
        return Err(Error::Config(
            "metric radius needs a positive lower eigenvalue bound m".into(),
        ));
    }
    let cond = consts.l_upper / consts.m_lower;
    Ok((r_eps
        * consts.b_h
        * (consts.b_grad_q + consts.lambda * consts.b_grad_v)
        * cond.powf(1.5)
        / (consts.eta * consts.lambda * consts.mu))
        .sqrt())
}

/// RK4 solution of the comparison equation
/// du/dt = -lambda u + (B_gradq + lambda B_gradV) beta(r_eps, t),
/// u(0) = v0, on the uniform grid {0, dt, ..., n_steps dt}.
pub fn comparison_envelope(
    v0: f64,
    lambda: f64,
    consts: &GlobalConstants,
    beta: &KLFunctionSpec,
    r_eps: f64,
    dt: f64,
    n_steps: usize,
) -> Vec<f64> {
    assert!(dt > 0.0);
    let c = consts.b_grad_q + lambda * consts.b_grad_v;
    let f = |u: f64, t: f64| -lambda * u + c * beta.eval(r_eps, t);
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut u = v0;
    out.push(u);
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let k1 = f(u, t);
        let k2 = f(u + 0.5 * dt * k1, t + 0.5 * dt);
        let k3 = f(u + 0.5 * dt * k2, t + 0.5 * dt);
        let k4 = f(u + dt * k3, t + dt);
        u += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(u);
    }
    out
}

/// Lipschitz constants for the known-dynamics contraction threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LipschitzConstants {
    pub l_m: f64,
    pub l_grad_m: f64,
    pub l_j: f64,
    pub l_f: f64,
}

/// Uniform bounds for the known-dynamics contraction threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct UniformBounds {
    pub b_m: f64,
    pub b_grad_m: f64,
    pub b_j: f64,
    pub b_f: f64,
}

/// Known-dynamics epsilon threshold: if the sampled metric condition
/// violation measure is below this value, the system contracts in M at
/// rate lambda / alpha_slack on the shrunken region:
/// eps <= ( 2 lambda l (alpha - 1)
///          / (alpha (2 lambda L_M + L_gradM B_f + B_gradM L_f
///                    + 2 L_J B_M + 2 L_M B_J)) )^p
///        * vol(B_p(1)) / vol_x.
pub fn known_dynamics_eps(
    lambda: f64,
    l_lower: f64,
    alpha_slack: f64,
    lipschitz: &LipschitzConstants,
    bounds: &UniformBounds,
    p: usize,
    vol_x: f64,
) -> Result<f64> {
    if alpha_slack <= 1.0 {
        return Err(Error::Config(format!(
            "alpha_slack must exceed 1, got {alpha_slack}"
        )));
    }
    if lambda <= 0.0 || l_lower <= 0.0 || vol_x <= 0.0 {
        return Err(Error::Config(
            "lambda, l, and vol_x must be positive".into(),
        ));
    }
    let denom = alpha_slack
        * (2.0 * lambda * lipschitz.l_m
            + lipschitz.l_grad_m * bounds.b_f
            + bounds.b_grad_m * lipschitz.l_f
            + 2.0 * lipschitz.l_j * bounds.b_m
            + 2.0 * lipschitz.l_m * bounds.b_j);
    if denom <= 0.0 {
        return Err(Error::Config(
            "known-dynamics threshold requires positive Lipschitz mass".into(),
        ));
    }
    let base = 2.0 * lambda * l_lower * (alpha_slack - 1.0) / denom;
    Ok(base.powi(p as i32) * unit_ball_volume(p) / vol_x)
}

/// States along flows started at `initials` that sit outside the ball of
/// radius r_b yet violate the (1 - eta) lambda decrease condition. Used by
/// the end-to-end check of the global Lyapunov statement.
pub fn decrease_violations_outside_ball(
    model: &Certificate,
    sys: &SystemSpec,
    initials: &[Vec<f64>],
    t_final: f64,
    dt: f64,
    rate: f64,
    r_b: f64,
) -> Result<(usize, usize)> {
    let s = model.scalar().ok_or_else(|| Error::ConditionMismatch {
        condition: "lyapunov decrease".into(),
        reason: "requires a scalar certificate".into(),
    })?;
    let p = sys.state_dim();
    let counted: Vec<Result<(usize, usize)>> = initials
        .par_iter()
        .map(|x0| {
            let traj = crate::dynamics::integrate(sys, x0, t_final, dt)?;
            let mut checked = 0usize;
            let mut violated = 0usize;
            let mut f = vec![0.0; p];
            for k in 0..traj.len() {
                let x = traj.state(k);
                if norm(x) <= r_b {
                    continue;
                }
                checked += 1;
                sys.field_into(x, traj.time(k), &mut f)?;
                let (v, dir) = s.value_and_dir(x, &f);
                if dir + rate * v > 0.0 {
                    violated += 1;
                }
            }
            Ok((checked, violated))
        })
        .collect();
    let mut checked = 0;
    let mut violated = 0;
    for item in counted {
        let (c, v) = item?;
        checked += c;
        violated += v;
    }
    Ok((checked, violated))
}

/// Quadratic baseline from the Lyapunov equation A'P + PA = -Q, used as a
/// certificate oracle for linear systems.
pub fn lti_oracle(a: &[f64], q: &[f64], p: usize) -> Result<QuadraticLyapunov> {
    let sol = crate::linalg::solve_lyapunov(a, q, p)
        .ok_or_else(|| Error::Config("Lyapunov equation is singular".into()))?;
    QuadraticLyapunov::from_matrix(p, &sol)
}
