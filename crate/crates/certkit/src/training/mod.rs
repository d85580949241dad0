//! Certificate training: hinge-penalized losses for the continuous-time
//! Lyapunov condition, the discrete-time Lyapunov condition, and the
//! differential-Lyapunov (contraction metric) condition, minimized with
//! Adam over minibatches of constraint points.
//!
//! The hard-constrained feasibility program is implemented as hinge
//! minimization: each sampled constraint contributes ReLU(residual), and a
//! weight-decay term lambda_reg |theta|^2 is added. A margin can be imposed
//! either additively inside the hinge or through the rate coefficient
//! multiplying the certificate value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::models::Certificate;

/// Margin and rate configuration for certificate conditions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MarginSpec {
    /// Additive feasibility slack inside the hinge.
    #[serde(default)]
    pub margin: f64,
    /// Rate coefficient on the certificate value (class-K coefficient for
    /// Lyapunov conditions, contraction rate for metrics).
    pub rate: f64,
    /// Discrete-time variant parameters, when applicable.
    #[serde(default)]
    pub discrete: Option<DiscreteMargin>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DiscreteMargin {
    /// Decay factor in (0, 1).
    pub rho: f64,
    /// Additive slack allowing convergence to a ball instead of a point.
    pub gamma_slack: f64,
}

impl MarginSpec {
    pub fn validate(&self) -> Result<()> {
        if self.margin < 0.0 {
            return Err(Error::Config("margin must be nonnegative".into()));
        }
        if let Some(d) = &self.discrete {
            if !(d.rho > 0.0 && d.rho < 1.0) {
                return Err(Error::Config(format!(
                    "discrete rho must lie in (0, 1), got {}",
                    d.rho
                )));
            }
            if d.gamma_slack < 0.0 {
                return Err(Error::Config("gamma_slack must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight on |theta|^2 relative to the full hinge sum.
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Downsample to this many constraint points per trajectory; all grid
    /// points are used when absent.
    #[serde(default)]
    pub constraints_per_traj: Option<usize>,
    /// Random positive-definiteness probe directions per constraint state,
    /// in addition to the 2p fixed axis directions (metric losses only).
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
}

fn default_probe_count() -> usize {
    3
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Which certificate condition is being trained.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum LossKind {
    LyapunovContinuous { rate: f64, margin: f64 },
    LyapunovDiscrete { rho: f64, gamma_slack: f64 },
    Metric { lambda: f64, mu: f64 },
}

/// Adam hyperparameters fixed to standard defaults and echoed in reports.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainReport {
    /// Full-dataset loss of the final model (hinge sum + weight decay).
    pub final_loss: f64,
    /// Per-epoch training loss: hinge terms aggregated over the epoch's
    /// minibatches plus the weight-decay term at epoch end.
    pub loss_curve: Vec<f64>,
    /// Training constraint points with positive residual under the final
    /// model.
    pub positive_residuals: usize,
    pub constraint_points: usize,
    pub wall_time_s: f64,
    pub adam: AdamParams,
}

/// Constraint points gathered from a dataset for one loss kind.
struct Constraints {
    p: usize,
    n: usize,
    x: Vec<f64>,
    xdot: Vec<f64>,
    x_next: Vec<f64>,
    delta: Vec<f64>,
    delta_dot: Vec<f64>,
    probes: Vec<f64>,
    probes_per: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Indices of the constraint points taken from one trajectory: all of them,
/// or `count` stride-spaced points with a seeded phase so the time axis is
/// covered across trajectories.
fn select_indices(len: usize, count: Option<usize>, seed: u64, traj: u64) -> Vec<usize> {
    match count {
        None => (0..len).collect(),
        Some(c) if c >= len => (0..len).collect(),
        Some(c) => {
            let stride = len as f64 / c as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(traj)));
            let offset: f64 = rng.gen::<f64>() * stride;
            (0..c)
                .map(|k| ((offset + k as f64 * stride) as usize).min(len - 1))
                .collect()
        }
    }
}

const PD_PROBE_SEED: u64 = 0x9D_5EED;

fn build_constraints(
    dataset: &Dataset,
    kind: &LossKind,
    constraints_per_traj: Option<usize>,
    probe_count: usize,
    seed: u64,
    needs_probes: bool,
) -> Result<Constraints> {
    let p = dataset.state_dim();
    let mut c = Constraints {
        p,
        n: 0,
        x: Vec::new(),
        xdot: Vec::new(),
        x_next: Vec::new(),
        delta: Vec::new(),
        delta_dot: Vec::new(),
        probes: Vec::new(),
        probes_per: 0,
    };
    match kind {
        LossKind::LyapunovContinuous { .. } => {
            let trajs = dataset.singles()?;
            for (ti, traj) in trajs.iter().enumerate() {
                if !traj.has_derivs() {
                    return Err(Error::MissingDerivs);
                }
                for k in select_indices(traj.len(), constraints_per_traj, seed, ti as u64) {
                    c.x.extend_from_slice(traj.state(k));
                    c.xdot.extend_from_slice(traj.deriv(k).unwrap());
                    c.n += 1;
                }
            }
        }
        LossKind::LyapunovDiscrete { .. } => {
            let trajs = dataset.singles()?;
            for (ti, traj) in trajs.iter().enumerate() {
                if traj.len() < 2 {
                    return Err(Error::TooShort {
                        need: 2,
                        got: traj.len(),
                    });
                }
                for k in select_indices(traj.len() - 1, constraints_per_traj, seed, ti as u64) {
                    c.x.extend_from_slice(traj.state(k));
                    c.x_next.extend_from_slice(traj.state(k + 1));
                    c.n += 1;
                }
            }
        }
        LossKind::Metric { .. } => {
            let pairs = dataset.paired()?;
            for (ti, pair) in pairs.iter().enumerate() {
                // The differential condition is 2-homogeneous in delta_x,
                // so each pair's variational trajectory is normalized by
                // its initial perturbation norm. Feasibility is unchanged
                // and hinge residuals become comparable across pairs.
                let inv = 1.0 / pair.perturbation_norm.max(1e-300);
                for k in select_indices(pair.base.len(), constraints_per_traj, seed, ti as u64) {
                    c.x.extend_from_slice(pair.base.state(k));
                    c.xdot
                        .extend_from_slice(pair.base.deriv(k).ok_or(Error::MissingDerivs)?);
                    let d = pair.delta.state(k);
                    let dd = pair.delta.deriv(k).ok_or(Error::MissingDerivs)?;
                    c.delta.extend(d.iter().map(|v| v * inv));
                    c.delta_dot.extend(dd.iter().map(|v| v * inv));
                    c.n += 1;
                }
            }
            if needs_probes {
                c.probes_per = 2 * p + probe_count;
                c.probes.reserve(c.n * c.probes_per * p);
                for i in 0..c.n {
                    for axis in 0..p {
                        for sign in [1.0, -1.0] {
                            let mut e = vec![0.0; p];
                            e[axis] = sign;
                            c.probes.extend_from_slice(&e);
                        }
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
                        PD_PROBE_SEED ^ splitmix64(i as u64),
                    ));
                    for _ in 0..probe_count {
                        let mut v: Vec<f64> = (0..p)
                            .map(|_| rng.sample::<f64, _>(StandardNormal))
                            .collect();
                        let n2: f64 = v.iter().map(|a| a * a).sum();
                        let inv = 1.0 / n2.sqrt().max(1e-300);
                        v.iter_mut().for_each(|a| *a *= inv);
                        c.probes.extend_from_slice(&v);
                    }
                }
            }
        }
    }
    if c.n == 0 {
        return Err(Error::Config(
            "dataset produced no constraint points".into(),
        ));
    }
    Ok(c)
}

fn row(buf: &[f64], p: usize, i: usize) -> &[f64] {
    &buf[i * p..(i + 1) * p]
}

/// ReLU that propagates NaN instead of swallowing it, so diverging
/// training is caught by the finiteness check.
#[inline]
fn hinge(r: f64) -> f64 {
    if r > 0.0 || r.is_nan() {
        r
    } else {
        0.0
    }
}

/// Hinge value of one constraint point; accumulates scaled gradients into
/// `grad` when provided.
fn point_hinge(
    model: &Certificate,
    kind: &LossKind,
    c: &Constraints,
    i: usize,
    scale: f64,
    grad: Option<&mut Vec<f64>>,
) -> f64 {
    let p = c.p;
    match (kind, grad) {
        (LossKind::LyapunovContinuous { rate, margin }, Some(g)) => {
            let s = model.scalar().unwrap();
            let r = s.lyap_hinge_accumulate(
                row(&c.x, p, i),
                row(&c.xdot, p, i),
                *rate,
                *margin,
                scale,
                g,
            );
            hinge(r)
        }
        (LossKind::LyapunovContinuous { rate, margin }, None) => {
            let s = model.scalar().unwrap();
            let (v, dir) = s.value_and_dir(row(&c.x, p, i), row(&c.xdot, p, i));
            hinge(dir + rate * v + margin)
        }
        (LossKind::LyapunovDiscrete { rho, gamma_slack }, grad) => {
            let s = model.scalar().unwrap();
            let xc = row(&c.x, p, i);
            let xn = row(&c.x_next, p, i);
            let r = s.value(xn) - rho * s.value(xc) - gamma_slack;
            if r > 0.0 {
                if let Some(g) = grad {
                    s.accumulate_param_grad(xn, &[], scale, 0.0, g);
                    s.accumulate_param_grad(xc, &[], -scale * rho, 0.0, g);
                }
            }
            hinge(r)
        }
        (LossKind::Metric { lambda, mu }, grad) => {
            let m = model.metric().unwrap();
            let x = row(&c.x, p, i);
            let xd = row(&c.xdot, p, i);
            let dx = row(&c.delta, p, i);
            let dxd = row(&c.delta_dot, p, i);
            match grad {
                Some(g) => {
                    let r = m.metric_hinge_accumulate(x, xd, dx, dxd, *lambda, scale, g);
                    let mut total = hinge(r);
                    for j in 0..c.probes_per {
                        let v = row(&c.probes, p, i * c.probes_per + j);
                        let vn2: f64 = v.iter().map(|a| a * a).sum();
                        let rp = mu * vn2 - m.quad_form(x, v);
                        if rp > 0.0 {
                            m.accumulate_quad_grad(x, v, -scale, g);
                        }
                        total += hinge(rp);
                    }
                    total
                }
                None => {
                    let (v, vdot) = m.quad_and_rate(x, xd, dx, dxd);
                    let mut total = hinge(vdot + lambda * v);
                    for j in 0..c.probes_per {
                        let pv = row(&c.probes, p, i * c.probes_per + j);
                        let vn2: f64 = pv.iter().map(|a| a * a).sum();
                        total += hinge(mu * vn2 - m.quad_form(x, pv));
                    }
                    total
                }
            }
        }
    }
}

fn weight_decay_term(model: &Certificate, lambda_reg: f64) -> f64 {
    lambda_reg * model.params().iter().map(|t| t * t).sum::<f64>()
}

fn full_hinge(model: &Certificate, kind: &LossKind, c: &Constraints) -> f64 {
    (0..c.n)
        .map(|i| point_hinge(model, kind, c, i, 0.0, None))
        .sum()
}

fn needs_probes(model: &Certificate) -> bool {
    model
        .metric()
        .map(|m| !m.pd_by_construction())
        .unwrap_or(false)
}

fn check_model_kind(model: &Certificate, kind: &LossKind) -> Result<()> {
    let ok = match kind {
        LossKind::LyapunovContinuous { .. } | LossKind::LyapunovDiscrete { .. } => {
            model.scalar().is_some()
        }
        LossKind::Metric { .. } => model.metric().is_some(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::UnsupportedFunctional(format!(
            "loss {kind:?} does not apply to model kind {}",
            model.kind()
        )))
    }
}

/// Full-dataset continuous-time Lyapunov loss:
/// sum over all (trajectory, time) points of
/// ReLU(<grad V(x), xdot> + rate V(x) + margin) + lambda_reg |theta|^2.
pub fn lyapunov_loss_continuous(
    model: &Certificate,
    dataset: &Dataset,
    spec: &MarginSpec,
    lambda_reg: f64,
) -> Result<f64> {
    spec.validate()?;
    let kind = LossKind::LyapunovContinuous {
        rate: spec.rate,
        margin: spec.margin,
    };
    check_model_kind(model, &kind)?;
    let c = build_constraints(dataset, &kind, None, 0, 0, false)?;
    Ok(full_hinge(model, &kind, &c) + weight_decay_term(model, lambda_reg))
}

/// Full-dataset discrete-time Lyapunov loss:
/// sum over consecutive state pairs of
/// ReLU(V(e_{k+1}) - rho V(e_k) - gamma_slack) + lambda_reg |theta|^2.
pub fn lyapunov_loss_discrete(
    model: &Certificate,
    dataset: &Dataset,
    rho: f64,
    gamma_slack: f64,
    lambda_reg: f64,
) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("rho must lie in (0,1), got {rho}")));
    }
    let kind = LossKind::LyapunovDiscrete { rho, gamma_slack };
    check_model_kind(model, &kind)?;
    let c = build_constraints(dataset, &kind, None, 0, 0, false)?;
    Ok(full_hinge(model, &kind, &c) + weight_decay_term(model, lambda_reg))
}

/// Full-dataset differential-Lyapunov metric loss: hinge on
/// dV/dt + lambda V with V = dx^T M(x) dx, a positive-definiteness probe
/// penalty (skipped for metrics that are positive definite by
/// construction), and weight decay.
pub fn metric_loss(
    model: &Certificate,
    dataset: &Dataset,
    lambda: f64,
    mu: f64,
    lambda_reg: f64,
    probe_count: usize,
) -> Result<f64> {
    let kind = LossKind::Metric { lambda, mu };
    check_model_kind(model, &kind)?;
    let c = build_constraints(dataset, &kind, None, probe_count, 0, needs_probes(model))?;
    Ok(full_hinge(model, &kind, &c) + weight_decay_term(model, lambda_reg))
}

/// Minibatch Adam on the selected hinge loss. Deterministic given the
/// config seed: shuffling is seeded and gradient accumulation runs in
/// ascending order within each minibatch.
pub fn train(
    model: Certificate,
    kind: &LossKind,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Certificate, TrainReport)> {
    cfg.validate()?;
    check_model_kind(&model, kind)?;
    if let LossKind::LyapunovDiscrete { rho, .. } = kind {
        if !(*rho > 0.0 && *rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0,1), got {rho}")));
        }
    }
    let t_start = std::time::Instant::now();
    let constraints = build_constraints(
        dataset,
        kind,
        cfg.constraints_per_traj,
        cfg.probe_count,
        cfg.seed,
        needs_probes(&model),
    )?;
    let mut model = model;
    let n = constraints.n;
    let n_params = model.params().len();
    let batch = cfg.batch_size.min(n);
    let adam = AdamParams::default();

    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        // Fisher-Yates shuffle, seeded
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let lr = match cfg.schedule {
            LrSchedule::Constant => cfg.learning_rate,
            LrSchedule::Cosine => {
                let frac = epoch as f64 / cfg.epochs.max(1) as f64;
                cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        };
        let mut epoch_hinge = 0.0;
        for (batch_idx, chunk) in order.chunks(batch).enumerate() {
            let scale = n as f64 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_hinge = 0.0;
            for &i in chunk {
                batch_hinge +=
                    point_hinge(&model, kind, &constraints, i, scale, Some(&mut grad));
            }
            if !batch_hinge.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_hinge += batch_hinge;
            {
                let params = model.params();
                for (g, t) in grad.iter_mut().zip(params) {
                    *g += 2.0 * cfg.weight_decay * t;
                }
            }
            step += 1;
            let bc1 = 1.0 - adam.beta1.powi(step as i32);
            let bc2 = 1.0 - adam.beta2.powi(step as i32);
            let params = model.params_mut();
            for j in 0..n_params {
                m1[j] = adam.beta1 * m1[j] + (1.0 - adam.beta1) * grad[j];
                m2[j] = adam.beta2 * m2[j] + (1.0 - adam.beta2) * grad[j] * grad[j];
                let mh = m1[j] / bc1;
                let vh = m2[j] / bc2;
                params[j] -= lr * mh / (vh.sqrt() + adam.epsilon);
            }
            model.project();
        }
        loss_curve.push(epoch_hinge + weight_decay_term(&model, cfg.weight_decay));
    }

    let mut positive = 0usize;
    let mut final_hinge = 0.0;
    for i in 0..n {
        let h = point_hinge(&model, kind, &constraints, i, 0.0, None);
        if h > 0.0 {
            positive += 1;
        }
        final_hinge += h;
    }
    let report = TrainReport {
        final_loss: final_hinge + weight_decay_term(&model, cfg.weight_decay),
        loss_curve,
        positive_residuals: positive,
        constraint_points: n,
        wall_time_s: t_start.elapsed().as_secs_f64(),
        adam,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests;
