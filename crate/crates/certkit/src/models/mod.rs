//! Certificate parameterizations with a uniform evaluation and
//! differentiation contract: certificate values, gradients with respect to
//! the state, and exact reverse-mode gradients of scalar functionals with
//! respect to the parameters.
//!
//! Reverse-mode differentiation is implemented over a small closed set of
//! primitives (affine maps, tanh, elementwise products, quadratic forms,
//! hinge, sums) rather than a general tape; the model zoo is fixed and this
//! keeps gradients exact and directly testable against finite differences.

mod factored;
mod features;
mod neural;
mod poly;
mod quadratic;
mod random_feature;

pub use factored::FactoredMetric;
pub use features::MonomialFeatures;
pub use neural::NeuralLyapunov;
pub use poly::PolynomialMetric;
pub use quadratic::QuadraticLyapunov;
pub use random_feature::RandomFeatureCertificate;

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MODEL_VERSION: &str = "certkit-model-1";

/// Scalar-valued certificates V : R^p -> R.
pub trait ScalarCertificate: Send + Sync {
    fn state_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// V(x).
    fn value(&self, x: &[f64]) -> f64;

    /// Exact gradient of V with respect to the state.
    fn grad_x(&self, x: &[f64]) -> Vec<f64>;

    /// (V(x), <grad V(x), d>) in one forward pass.
    fn value_and_dir(&self, x: &[f64], d: &[f64]) -> (f64, f64);

    /// grad += w_value * dV/dtheta + w_dir * d<grad_x V, d>/dtheta.
    /// `d` may be empty when `w_dir` is zero.
    fn accumulate_param_grad(
        &self,
        x: &[f64],
        d: &[f64],
        w_value: f64,
        w_dir: f64,
        grad: &mut [f64],
    );

    /// Constraint-set projection applied after each optimizer step.
    fn project(&mut self) {}

    /// Fused hinge step for the continuous Lyapunov condition: computes
    /// r = <grad V, d> + rate V + margin and, when r > 0, accumulates
    /// scale * dr/dtheta. Returns r. Overridden where a model can reuse its
    /// forward pass.
    fn lyap_hinge_accumulate(
        &self,
        x: &[f64],
        d: &[f64],
        rate: f64,
        margin: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let (v, dir) = self.value_and_dir(x, d);
        let r = dir + rate * v + margin;
        if r > 0.0 {
            self.accumulate_param_grad(x, d, scale * rate, scale, grad);
        }
        r
    }
}

/// Matrix-valued certificates M : R^p -> S_+^{p x p}, evaluated through the
/// differential Lyapunov form V(x, dx) = dx^T M(x) dx.
pub trait MetricCertificate: Send + Sync {
    fn state_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Row-major p x p metric value.
    fn metric_into(&self, x: &[f64], out: &mut [f64]);

    /// d M_ij / d x_k as a [k][i][j] row-major tensor of length p^3.
    fn metric_grad_x(&self, x: &[f64]) -> Vec<f64>;

    /// V(x, dx) = dx^T M(x) dx.
    fn quad_form(&self, x: &[f64], dx: &[f64]) -> f64;

    /// (V, dV/dt) with V = dx^T M(x) dx and
    /// dV/dt = 2 dxdot^T M dx + dx^T Mdot dx, Mdot = sum_k dM/dx_k xdot_k.
    fn quad_and_rate(&self, x: &[f64], xdot: &[f64], dx: &[f64], dxdot: &[f64]) -> (f64, f64);

    /// grad += w_v * dV/dtheta + w_rate * d(dV/dt)/dtheta.
    fn accumulate_param_grad(
        &self,
        x: &[f64],
        xdot: &[f64],
        dx: &[f64],
        dxdot: &[f64],
        w_v: f64,
        w_rate: f64,
        grad: &mut [f64],
    );

    /// grad += w * d(v^T M(x) v)/dtheta, for positive-definiteness probes.
    fn accumulate_quad_grad(&self, x: &[f64], v: &[f64], w: f64, grad: &mut [f64]);

    /// True when M(x) is positive definite for every parameter value, so
    /// the trainer can skip the probe penalty.
    fn pd_by_construction(&self) -> bool;

    /// Target uniform lower bound mu with M(x) >= mu I.
    fn mu(&self) -> f64;

    /// Fused hinge step for the differential Lyapunov condition: computes
    /// r = dV/dt + lambda V and, when r > 0, accumulates scale * dr/dtheta.
    /// Returns r.
    fn metric_hinge_accumulate(
        &self,
        x: &[f64],
        xdot: &[f64],
        dx: &[f64],
        dxdot: &[f64],
        lambda: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let (v, vdot) = self.quad_and_rate(x, xdot, dx, dxdot);
        let r = vdot + lambda * v;
        if r > 0.0 {
            self.accumulate_param_grad(x, xdot, dx, dxdot, scale * lambda, scale, grad);
        }
        r
    }
}

/// Mdot(x, xdot) = sum_k dM/dx_k xdot_k, row-major p x p.
pub fn metric_time_derivative(model: &dyn MetricCertificate, x: &[f64], xdot: &[f64]) -> Vec<f64> {
    let p = model.state_dim();
    let grads = model.metric_grad_x(x);
    let mut out = vec![0.0; p * p];
    for k in 0..p {
        let slab = &grads[k * p * p..(k + 1) * p * p];
        for idx in 0..p * p {
            out[idx] += slab[idx] * xdot[k];
        }
    }
    out
}

/// Any supported certificate model.
#[derive(Debug, Clone)]
pub enum Certificate {
    NeuralLyapunov(NeuralLyapunov),
    Quadratic(QuadraticLyapunov),
    RandomFeature(RandomFeatureCertificate),
    PolynomialMetric(PolynomialMetric),
    FactoredMetric(FactoredMetric),
}

impl Certificate {
    pub fn kind(&self) -> &'static str {
        match self {
            Certificate::NeuralLyapunov(_) => "neural_lyapunov",
            Certificate::Quadratic(_) => "quadratic_lyapunov",
            Certificate::RandomFeature(_) => "random_feature",
            Certificate::PolynomialMetric(_) => "polynomial_metric",
            Certificate::FactoredMetric(_) => "factored_metric",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Certificate::NeuralLyapunov(m) => m.state_dim(),
            Certificate::Quadratic(m) => m.state_dim(),
            Certificate::RandomFeature(m) => m.state_dim(),
            Certificate::PolynomialMetric(m) => m.state_dim(),
            Certificate::FactoredMetric(m) => m.state_dim(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Certificate::NeuralLyapunov(m) => m.params(),
            Certificate::Quadratic(m) => m.params(),
            Certificate::RandomFeature(m) => m.params(),
            Certificate::PolynomialMetric(m) => m.params(),
            Certificate::FactoredMetric(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Certificate::NeuralLyapunov(m) => m.params_mut(),
            Certificate::Quadratic(m) => m.params_mut(),
            Certificate::RandomFeature(m) => m.params_mut(),
            Certificate::PolynomialMetric(m) => m.params_mut(),
            Certificate::FactoredMetric(m) => m.params_mut(),
        }
    }

    pub fn scalar(&self) -> Option<&dyn ScalarCertificate> {
        match self {
            Certificate::NeuralLyapunov(m) => Some(m),
            Certificate::Quadratic(m) => Some(m),
            Certificate::RandomFeature(m) => Some(m),
            _ => None,
        }
    }

    pub fn metric(&self) -> Option<&dyn MetricCertificate> {
        match self {
            Certificate::PolynomialMetric(m) => Some(m),
            Certificate::FactoredMetric(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_metric(&self) -> bool {
        self.metric().is_some()
    }

    /// Post-step constraint projection (l1 budget for random features).
    pub fn project(&mut self) {
        if let Certificate::RandomFeature(m) = self {
            m.project();
        }
    }
}

/// Certificate value: scalar for Lyapunov models, row-major matrix for
/// metric models.
#[derive(Debug, Clone, PartialEq)]
pub enum CertValue {
    Scalar(f64),
    Matrix(Vec<f64>),
}

pub fn cert_value(model: &Certificate, x: &[f64]) -> Result<CertValue> {
    check_dim(model, x)?;
    if let Some(s) = model.scalar() {
        Ok(CertValue::Scalar(s.value(x)))
    } else {
        let m = model.metric().unwrap();
        let p = m.state_dim();
        let mut out = vec![0.0; p * p];
        m.metric_into(x, &mut out);
        Ok(CertValue::Matrix(out))
    }
}

/// State gradient: the p-vector grad V for Lyapunov models, the p^3 tensor
/// dM/dx for metric models.
#[derive(Debug, Clone, PartialEq)]
pub enum CertGrad {
    Vector(Vec<f64>),
    Tensor(Vec<f64>),
}

pub fn cert_grad_x(model: &Certificate, x: &[f64]) -> Result<CertGrad> {
    check_dim(model, x)?;
    if let Some(s) = model.scalar() {
        Ok(CertGrad::Vector(s.grad_x(x)))
    } else {
        Ok(CertGrad::Tensor(model.metric().unwrap().metric_grad_x(x)))
    }
}

fn check_dim(model: &Certificate, x: &[f64]) -> Result<()> {
    if x.len() != model.state_dim() {
        return Err(Error::Dimension {
            expected: model.state_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// A flattened batch of constraint points. Channels that a functional does
/// not use may be left `None`.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub p: usize,
    pub n: usize,
    /// Row-major n x p states.
    pub x: Vec<f64>,
    pub xdot: Option<Vec<f64>>,
    /// Successor states for discrete-time conditions.
    pub x_next: Option<Vec<f64>>,
    /// Variational displacement and its time derivative.
    pub delta: Option<Vec<f64>>,
    pub delta_dot: Option<Vec<f64>>,
    /// Positive-definiteness probe directions, n x probes_per_point x p.
    pub probes: Option<Vec<f64>>,
    pub probes_per_point: usize,
}

impl Batch {
    pub fn row(buf: &[f64], p: usize, i: usize) -> &[f64] {
        &buf[i * p..(i + 1) * p]
    }
}

/// Scalar functionals of (model, batch) with exact parameter gradients.
#[derive(Debug, Clone)]
pub enum Functional {
    /// V(x0) for the batch's single state row (scalar models).
    ValueAt,
    /// Identically zero.
    Zero,
    /// |theta|^2.
    ParamNormSquared,
    /// sum_i ReLU(<grad V(x_i), xdot_i> + rate V(x_i) + margin).
    LyapContinuousHinge { rate: f64, margin: f64 },
    /// sum_i ReLU(V(x_next_i) - rho V(x_i) - gamma_slack).
    LyapDiscreteHinge { rho: f64, gamma_slack: f64 },
    /// sum_i ReLU(dV/dt_i + lambda V_i) on tangent-bundle points.
    MetricHinge { lambda: f64 },
    /// sum_i sum_probes ReLU(mu |v|^2 - v^T M(x_i) v).
    MetricPdPenalty { mu: f64 },
}

fn get<'a>(field: &'a Option<Vec<f64>>, name: &str) -> Result<&'a [f64]> {
    field.as_deref().ok_or_else(|| {
        Error::UnsupportedFunctional(format!("batch is missing channel `{name}`"))
    })
}

fn scalar_model<'a>(model: &'a Certificate, what: &str) -> Result<&'a dyn ScalarCertificate> {
    model.scalar().ok_or_else(|| {
        Error::UnsupportedFunctional(format!("{what} requires a scalar certificate"))
    })
}

fn metric_model<'a>(model: &'a Certificate, what: &str) -> Result<&'a dyn MetricCertificate> {
    model.metric().ok_or_else(|| {
        Error::UnsupportedFunctional(format!("{what} requires a metric certificate"))
    })
}

/// Evaluate a functional over the batch.
pub fn functional_value(model: &Certificate, functional: &Functional, batch: &Batch) -> Result<f64> {
    let p = batch.p;
    match functional {
        Functional::Zero => Ok(0.0),
        Functional::ParamNormSquared => Ok(model.params().iter().map(|t| t * t).sum()),
        Functional::ValueAt => {
            let s = scalar_model(model, "ValueAt")?;
            Ok(s.value(Batch::row(&batch.x, p, 0)))
        }
        Functional::LyapContinuousHinge { rate, margin } => {
            let s = scalar_model(model, "LyapContinuousHinge")?;
            let xdot = get(&batch.xdot, "xdot")?;
            let mut total = 0.0;
            for i in 0..batch.n {
                let (v, dir) =
                    s.value_and_dir(Batch::row(&batch.x, p, i), Batch::row(xdot, p, i));
                total += (dir + rate * v + margin).max(0.0);
            }
            Ok(total)
        }
        Functional::LyapDiscreteHinge { rho, gamma_slack } => {
            let s = scalar_model(model, "LyapDiscreteHinge")?;
            let next = get(&batch.x_next, "x_next")?;
            let mut total = 0.0;
            for i in 0..batch.n {
                let v_cur = s.value(Batch::row(&batch.x, p, i));
                let v_next = s.value(Batch::row(next, p, i));
                total += (v_next - rho * v_cur - gamma_slack).max(0.0);
            }
            Ok(total)
        }
        Functional::MetricHinge { lambda } => {
            let m = metric_model(model, "MetricHinge")?;
            let xdot = get(&batch.xdot, "xdot")?;
            let delta = get(&batch.delta, "delta")?;
            let delta_dot = get(&batch.delta_dot, "delta_dot")?;
            let mut total = 0.0;
            for i in 0..batch.n {
                let (v, vdot) = m.quad_and_rate(
                    Batch::row(&batch.x, p, i),
                    Batch::row(xdot, p, i),
                    Batch::row(delta, p, i),
                    Batch::row(delta_dot, p, i),
                );
                total += (vdot + lambda * v).max(0.0);
            }
            Ok(total)
        }
        Functional::MetricPdPenalty { mu } => {
            let m = metric_model(model, "MetricPdPenalty")?;
            let probes = get(&batch.probes, "probes")?;
            let per = batch.probes_per_point;
            let mut total = 0.0;
            for i in 0..batch.n {
                let x = Batch::row(&batch.x, p, i);
                for j in 0..per {
                    let v = &probes[(i * per + j) * p..(i * per + j + 1) * p];
                    let vn2: f64 = v.iter().map(|a| a * a).sum();
                    total += (mu * vn2 - m.quad_form(x, v)).max(0.0);
                }
            }
            Ok(total)
        }
    }
}

/// Exact reverse-mode gradient of the functional with respect to all model
/// parameters. Hinge kinks take subgradient zero at exactly zero.
pub fn param_grad(model: &Certificate, functional: &Functional, batch: &Batch) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; model.params().len()];
    accumulate_param_grad(model, functional, batch, 1.0, &mut grad)?;
    Ok(grad)
}

/// grad += scale * d functional / d theta. Returns the functional value.
pub fn accumulate_param_grad(
    model: &Certificate,
    functional: &Functional,
    batch: &Batch,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let p = batch.p;
    match functional {
        Functional::Zero => Ok(0.0),
        Functional::ParamNormSquared => {
            let mut value = 0.0;
            for (g, t) in grad.iter_mut().zip(model.params()) {
                value += t * t;
                *g += scale * 2.0 * t;
            }
            Ok(value)
        }
        Functional::ValueAt => {
            let s = scalar_model(model, "ValueAt")?;
            let x = Batch::row(&batch.x, p, 0);
            s.accumulate_param_grad(x, &[], scale, 0.0, grad);
            Ok(s.value(x))
        }
        Functional::LyapContinuousHinge { rate, margin } => {
            let s = scalar_model(model, "LyapContinuousHinge")?;
            let xdot = get(&batch.xdot, "xdot")?;
            let mut total = 0.0;
            for i in 0..batch.n {
                let x = Batch::row(&batch.x, p, i);
                let d = Batch::row(xdot, p, i);
                let r = s.lyap_hinge_accumulate(x, d, *rate, *margin, scale, grad);
                if r > 0.0 {
                    total += r;
                }
            }
            Ok(total)
        }
        Functional::LyapDiscreteHinge { rho, gamma_slack } => {
            let s = scalar_model(model, "LyapDiscreteHinge")?;
            let next = get(&batch.x_next, "x_next")?;
            let mut total = 0.0;
            for i in 0..batch.n {
                let xc = Batch::row(&batch.x, p, i);
                let xn = Batch::row(next, p, i);
                let r = s.value(xn) - rho * s.value(xc) - gamma_slack;
                if r > 0.0 {
                    total += r;
                    s.accumulate_param_grad(xn, &[], scale, 0.0, grad);
                    s.accumulate_param_grad(xc, &[], -scale * rho, 0.0, grad);
                }
            }
            Ok(total)
        }
        Functional::MetricHinge { lambda } => {
            let m = metric_model(model, "MetricHinge")?;
            let xdot = get(&batch.xdot, "xdot")?;
            let delta = get(&batch.delta, "delta")?;
            let delta_dot = get(&batch.delta_dot, "delta_dot")?;
            let mut total = 0.0;
            for i in 0..batch.n {
                let x = Batch::row(&batch.x, p, i);
                let xd = Batch::row(xdot, p, i);
                let dx = Batch::row(delta, p, i);
                let dxd = Batch::row(delta_dot, p, i);
                let r = m.metric_hinge_accumulate(x, xd, dx, dxd, *lambda, scale, grad);
                if r > 0.0 {
                    total += r;
                }
            }
            Ok(total)
        }
        Functional::MetricPdPenalty { mu } => {
            let m = metric_model(model, "MetricPdPenalty")?;
            let probes = get(&batch.probes, "probes")?;
            let per = batch.probes_per_point;
            let mut total = 0.0;
            for i in 0..batch.n {
                let x = Batch::row(&batch.x, p, i);
                for j in 0..per {
                    let v = &probes[(i * per + j) * p..(i * per + j + 1) * p];
                    let vn2: f64 = v.iter().map(|a| a * a).sum();
                    let r = mu * vn2 - m.quad_form(x, v);
                    if r > 0.0 {
                        total += r;
                        m.accumulate_quad_grad(x, v, -scale, grad);
                    }
                }
            }
            Ok(total)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: String,
    kind: String,
    meta: serde_json::Value,
    n_params: usize,
}

/// Save a checkpoint: one JSON header line plus the flat little-endian f64
/// parameter vector. Round-trips bit-exactly.
pub fn save_model(model: &Certificate, path: &Path) -> Result<()> {
    let meta = match model {
        Certificate::NeuralLyapunov(m) => m.meta(),
        Certificate::Quadratic(m) => m.meta(),
        Certificate::RandomFeature(m) => m.meta(),
        Certificate::PolynomialMetric(m) => m.meta(),
        Certificate::FactoredMetric(m) => m.meta(),
    };
    let header = ModelHeader {
        version: MODEL_VERSION.to_string(),
        kind: model.kind().to_string(),
        meta,
        n_params: model.params().len(),
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    for v in model.params() {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Certificate> {
    let mut raw = Vec::new();
    std::io::BufReader::new(std::fs::File::open(path)?).read_to_end(&mut raw)?;
    let newline = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::Malformed {
            offset: raw.len() as u64,
            reason: "missing header line".into(),
        })?;
    let header: ModelHeader = serde_json::from_slice(&raw[..newline])?;
    if header.version != MODEL_VERSION {
        return Err(Error::Version {
            expected: MODEL_VERSION.to_string(),
            found: header.version,
        });
    }
    let payload = &raw[newline + 1..];
    if payload.len() != header.n_params * 8 {
        return Err(Error::Malformed {
            offset: (newline + 1 + payload.len()) as u64,
            reason: format!(
                "parameter payload has {} bytes, expected {}",
                payload.len(),
                header.n_params * 8
            ),
        });
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    match header.kind.as_str() {
        "neural_lyapunov" => Ok(Certificate::NeuralLyapunov(NeuralLyapunov::from_meta(
            &header.meta,
            params,
        )?)),
        "quadratic_lyapunov" => Ok(Certificate::Quadratic(QuadraticLyapunov::from_meta(
            &header.meta,
            params,
        )?)),
        "random_feature" => Ok(Certificate::RandomFeature(
            RandomFeatureCertificate::from_meta(&header.meta, params)?,
        )),
        "polynomial_metric" => Ok(Certificate::PolynomialMetric(PolynomialMetric::from_meta(
            &header.meta,
            params,
        )?)),
        "factored_metric" => Ok(Certificate::FactoredMetric(FactoredMetric::from_meta(
            &header.meta,
            params,
        )?)),
        other => Err(Error::Config(format!("unknown model kind `{other}`"))),
    }
}

#[cfg(test)]
mod tests;
