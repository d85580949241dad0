//! Factored contraction-metric candidate M(x) = A(x)^T A(x) + mu I with the
//! entries of A(x) linear in monomial features. Uniformly positive definite
//! for every parameter value, which removes the positive-definiteness
//! constraint from training at the cost of a nonconvex parameterization.

use std::cell::RefCell;

use super::{features::MonomialFeatures, MetricCertificate};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FactoredMetric {
    p: usize,
    features: MonomialFeatures,
    mu: f64,
    /// One coefficient block of length F per A entry, row-major over (i, j).
    params: Vec<f64>,
}

struct Scratch {
    phi: Vec<f64>,
    tphi: Vec<f64>,
    a: Vec<f64>,
    adot: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    ga: Vec<f64>,
    gadot: Vec<f64>,
}

thread_local! {
    static SCRATCH: RefCell<Option<Scratch>> = const { RefCell::new(None) };
}

fn with_scratch<R>(p: usize, nf: usize, f: impl FnOnce(&mut Scratch) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut slot = cell.borrow_mut();
        let fits = matches!(&*slot, Some(s) if s.phi.len() == nf && s.a.len() == p * p);
        if !fits {
            *slot = Some(Scratch {
                phi: vec![0.0; nf],
                tphi: vec![0.0; nf],
                a: vec![0.0; p * p],
                adot: vec![0.0; p * p],
                y: vec![0.0; p],
                w: vec![0.0; p],
                ga: vec![0.0; p * p],
                gadot: vec![0.0; p * p],
            });
        }
        f(slot.as_mut().unwrap())
    })
}

impl FactoredMetric {
    /// Initialized with A = 0, i.e. M(x) = mu I.
    pub fn zero_init(p: usize, degree: usize, mu: f64) -> Self {
        assert!(mu > 0.0, "factored metric needs a positive mu");
        let features = MonomialFeatures::new(p, degree);
        let params = vec![0.0; p * p * features.len()];
        FactoredMetric {
            p,
            features,
            mu,
            params,
        }
    }

    /// Initialized so that M(x) is approximately `scale^2 + mu` times the
    /// identity: the constant feature of each diagonal A entry is `scale`.
    pub fn scaled_identity_init(p: usize, degree: usize, mu: f64, scale: f64) -> Self {
        let mut m = Self::zero_init(p, degree, mu);
        let nf = m.features.len();
        for i in 0..p {
            m.params[(i * p + i) * nf] = scale;
        }
        m
    }

    pub fn degree(&self) -> usize {
        self.features.degree()
    }

    pub fn decision_dim(&self) -> usize {
        self.params.len()
    }

    pub(super) fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "p": self.p,
            "degree": self.features.degree(),
            "mu": self.mu,
        })
    }

    pub(super) fn from_meta(meta: &serde_json::Value, params: Vec<f64>) -> Result<Self> {
        let p = meta["p"].as_u64().ok_or_else(bad_meta)? as usize;
        let degree = meta["degree"].as_u64().ok_or_else(bad_meta)? as usize;
        let mu = meta["mu"].as_f64().ok_or_else(bad_meta)?;
        let features = MonomialFeatures::new(p, degree);
        let expect = p * p * features.len();
        if params.len() != expect {
            return Err(Error::Config(format!(
                "factored_metric expects {expect} parameters, got {}",
                params.len()
            )));
        }
        Ok(FactoredMetric {
            p,
            features,
            mu,
            params,
        })
    }

    fn eval_a(&self, phi: &[f64], a: &mut [f64]) {
        let nf = self.features.len();
        for (e, a_e) in a.iter_mut().enumerate() {
            let w = &self.params[e * nf..(e + 1) * nf];
            let mut v = 0.0;
            for f in 0..nf {
                v += w[f] * phi[f];
            }
            *a_e = v;
        }
    }
}

impl MetricCertificate for FactoredMetric {
    fn state_dim(&self) -> usize {
        self.p
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn metric_into(&self, x: &[f64], out: &mut [f64]) {
        let p = self.p;
        with_scratch(p, self.features.len(), |s| {
            self.features.eval_into(x, &mut s.phi);
            self.eval_a(&s.phi, &mut s.a);
            for i in 0..p {
                for j in 0..p {
                    let mut v = if i == j { self.mu } else { 0.0 };
                    for k in 0..p {
                        v += s.a[k * p + i] * s.a[k * p + j];
                    }
                    out[i * p + j] = v;
                }
            }
        });
    }

    fn metric_grad_x(&self, x: &[f64]) -> Vec<f64> {
        let p = self.p;
        let nf = self.features.len();
        let mut out = vec![0.0; p * p * p];
        with_scratch(p, nf, |s| {
            self.features.eval_into(x, &mut s.phi);
            self.eval_a(&s.phi, &mut s.a);
            // dM/dx_k = dA^T/dx_k A + A^T dA/dx_k
            for k in 0..p {
                self.features.partial_into(x, k, &mut s.tphi);
                self.eval_a(&s.tphi, &mut s.adot);
                let slab = &mut out[k * p * p..(k + 1) * p * p];
                for i in 0..p {
                    for j in 0..p {
                        let mut v = 0.0;
                        for l in 0..p {
                            v += s.adot[l * p + i] * s.a[l * p + j]
                                + s.a[l * p + i] * s.adot[l * p + j];
                        }
                        slab[i * p + j] = v;
                    }
                }
            }
        });
        out
    }

    fn quad_form(&self, x: &[f64], dx: &[f64]) -> f64 {
        let p = self.p;
        with_scratch(p, self.features.len(), |s| {
            self.features.eval_into(x, &mut s.phi);
            self.eval_a(&s.phi, &mut s.a);
            let mut v = 0.0;
            for i in 0..p {
                let mut yi = 0.0;
                for j in 0..p {
                    yi += s.a[i * p + j] * dx[j];
                }
                v += yi * yi;
            }
            let dn2: f64 = dx.iter().map(|d| d * d).sum();
            v + self.mu * dn2
        })
    }

    fn quad_and_rate(&self, x: &[f64], xdot: &[f64], dx: &[f64], dxdot: &[f64]) -> (f64, f64) {
        let p = self.p;
        with_scratch(p, self.features.len(), |s| {
            self.features
                .eval_with_tangent_into(x, xdot, &mut s.phi, &mut s.tphi);
            self.eval_a(&s.phi, &mut s.a);
            self.eval_a(&s.tphi, &mut s.adot);
            // V = |A dx|^2 + mu |dx|^2
            // Vdot = 2 <A dx, Adot dx + A dxdot> + 2 mu <dx, dxdot>
            let mut v = 0.0;
            let mut vdot = 0.0;
            for i in 0..p {
                let mut yi = 0.0;
                let mut wi = 0.0;
                for j in 0..p {
                    yi += s.a[i * p + j] * dx[j];
                    wi += s.adot[i * p + j] * dx[j] + s.a[i * p + j] * dxdot[j];
                }
                v += yi * yi;
                vdot += 2.0 * yi * wi;
            }
            let mut dn2 = 0.0;
            let mut ddot = 0.0;
            for j in 0..p {
                dn2 += dx[j] * dx[j];
                ddot += dx[j] * dxdot[j];
            }
            (v + self.mu * dn2, vdot + 2.0 * self.mu * ddot)
        })
    }

    fn accumulate_param_grad(
        &self,
        x: &[f64],
        xdot: &[f64],
        dx: &[f64],
        dxdot: &[f64],
        w_v: f64,
        w_rate: f64,
        grad: &mut [f64],
    ) {
        let p = self.p;
        let nf = self.features.len();
        with_scratch(p, nf, |s| {
            self.features
                .eval_with_tangent_into(x, xdot, &mut s.phi, &mut s.tphi);
            self.eval_a(&s.phi, &mut s.a);
            self.eval_a(&s.tphi, &mut s.adot);
            for i in 0..p {
                let mut yi = 0.0;
                let mut wi = 0.0;
                for j in 0..p {
                    yi += s.a[i * p + j] * dx[j];
                    wi += s.adot[i * p + j] * dx[j] + s.a[i * p + j] * dxdot[j];
                }
                s.y[i] = yi;
                s.w[i] = wi;
            }
            // F = w_v (|y|^2 + mu |dx|^2) + w_rate (2 <y, w> + 2 mu <dx, dxdot>)
            // gy = 2 w_v y + 2 w_rate w ; gw = 2 w_rate y
            // y = A dx ; w = Adot dx + A dxdot
            for i in 0..p {
                let gy = 2.0 * (w_v * s.y[i] + w_rate * s.w[i]);
                let gw = 2.0 * w_rate * s.y[i];
                for j in 0..p {
                    s.ga[i * p + j] = gy * dx[j] + gw * dxdot[j];
                    s.gadot[i * p + j] = gw * dx[j];
                }
            }
            // A_e = <u_e, phi>, Adot_e = <u_e, tphi>
            for e in 0..p * p {
                let ga = s.ga[e];
                let gad = s.gadot[e];
                let g = &mut grad[e * nf..(e + 1) * nf];
                for f in 0..nf {
                    g[f] += ga * s.phi[f] + gad * s.tphi[f];
                }
            }
        });
    }

    fn accumulate_quad_grad(&self, x: &[f64], v: &[f64], w: f64, grad: &mut [f64]) {
        let p = self.p;
        let nf = self.features.len();
        with_scratch(p, nf, |s| {
            self.features.eval_into(x, &mut s.phi);
            self.eval_a(&s.phi, &mut s.a);
            for i in 0..p {
                let mut yi = 0.0;
                for j in 0..p {
                    yi += s.a[i * p + j] * v[j];
                }
                s.y[i] = yi;
            }
            for i in 0..p {
                let gy = w * 2.0 * s.y[i];
                for j in 0..p {
                    let e = i * p + j;
                    let c = gy * v[j];
                    let g = &mut grad[e * nf..(e + 1) * nf];
                    for f in 0..nf {
                        g[f] += c * s.phi[f];
                    }
                }
            }
        });
    }

    fn pd_by_construction(&self) -> bool {
        true
    }

    fn mu(&self) -> f64 {
        self.mu
    }

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
        let p = self.p;
        let nf = self.features.len();
        with_scratch(p, nf, |s| {
            self.features
                .eval_with_tangent_into(x, xdot, &mut s.phi, &mut s.tphi);
            self.eval_a(&s.phi, &mut s.a);
            self.eval_a(&s.tphi, &mut s.adot);
            let mut v = 0.0;
            let mut vdot = 0.0;
            for i in 0..p {
                let mut yi = 0.0;
                let mut wi = 0.0;
                for j in 0..p {
                    yi += s.a[i * p + j] * dx[j];
                    wi += s.adot[i * p + j] * dx[j] + s.a[i * p + j] * dxdot[j];
                }
                s.y[i] = yi;
                s.w[i] = wi;
                v += yi * yi;
                vdot += 2.0 * yi * wi;
            }
            let mut dn2 = 0.0;
            let mut ddot = 0.0;
            for j in 0..p {
                dn2 += dx[j] * dx[j];
                ddot += dx[j] * dxdot[j];
            }
            v += self.mu * dn2;
            vdot += 2.0 * self.mu * ddot;
            let r = vdot + lambda * v;
            if r > 0.0 {
                let (w_v, w_rate) = (scale * lambda, scale);
                for i in 0..p {
                    let gy = 2.0 * (w_v * s.y[i] + w_rate * s.w[i]);
                    let gw = 2.0 * w_rate * s.y[i];
                    for j in 0..p {
                        s.ga[i * p + j] = gy * dx[j] + gw * dxdot[j];
                        s.gadot[i * p + j] = gw * dx[j];
                    }
                }
                for e in 0..p * p {
                    let ga = s.ga[e];
                    let gad = s.gadot[e];
                    let g = &mut grad[e * nf..(e + 1) * nf];
                    for f in 0..nf {
                        g[f] += ga * s.phi[f] + gad * s.tphi[f];
                    }
                }
            }
            r
        })
    }
}

fn bad_meta() -> Error {
    Error::Config("malformed factored_metric metadata".into())
}
