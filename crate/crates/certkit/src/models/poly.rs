//! Polynomial contraction-metric candidate: each entry M_ij(x) is a
//! polynomial <w_ij, phi(x)> in monomial features, with w_ij = w_ji shared
//! so M(x) is symmetric exactly, by construction rather than by
//! post-symmetrization. Positive definiteness is encouraged during
//! training through sampled probe penalties and checked post hoc.

use std::cell::RefCell;

use super::{features::MonomialFeatures, MetricCertificate};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PolynomialMetric {
    p: usize,
    features: MonomialFeatures,
    mu: f64,
    /// One coefficient block of length F per upper-triangle entry (i <= j),
    /// blocks ordered (0,0), (0,1), ..., (0,p-1), (1,1), ...
    params: Vec<f64>,
}

thread_local! {
    static PHI: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
    static TPHI: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

impl PolynomialMetric {
    /// Initialized to M(x) = identity (constant-term coefficients of the
    /// diagonal blocks set to 1).
    pub fn identity_init(p: usize, degree: usize, mu: f64) -> Self {
        let features = MonomialFeatures::new(p, degree);
        let nf = features.len();
        let blocks = p * (p + 1) / 2;
        let mut params = vec![0.0; blocks * nf];
        for i in 0..p {
            let b = block_index(p, i, i);
            params[b * nf] = 1.0;
        }
        PolynomialMetric {
            p,
            features,
            mu,
            params,
        }
    }

    pub fn degree(&self) -> usize {
        self.features.degree()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    /// Decision dimension for randomized-convex-program bounds: the number
    /// of free coefficients.
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
        let expect = p * (p + 1) / 2 * features.len();
        if params.len() != expect {
            return Err(Error::Config(format!(
                "polynomial_metric expects {expect} parameters, got {}",
                params.len()
            )));
        }
        Ok(PolynomialMetric {
            p,
            features,
            mu,
            params,
        })
    }

    #[inline]
    fn block(&self, i: usize, j: usize) -> &[f64] {
        let nf = self.features.len();
        let b = block_index(self.p, i.min(j), i.max(j));
        &self.params[b * nf..(b + 1) * nf]
    }
}

/// Index of the (i, j) upper-triangle block, i <= j.
#[inline]
fn block_index(p: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    i * p - i * (i + 1) / 2 + j
}

impl MetricCertificate for PolynomialMetric {
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
        let nf = self.features.len();
        PHI.with(|phi| {
            let mut phi = phi.borrow_mut();
            phi.resize(nf, 0.0);
            self.features.eval_into(x, &mut phi);
            for i in 0..p {
                for j in i..p {
                    let w = self.block(i, j);
                    let mut v = 0.0;
                    for f in 0..nf {
                        v += w[f] * phi[f];
                    }
                    out[i * p + j] = v;
                    out[j * p + i] = v;
                }
            }
        });
    }

    fn metric_grad_x(&self, x: &[f64]) -> Vec<f64> {
        let p = self.p;
        let nf = self.features.len();
        let mut out = vec![0.0; p * p * p];
        PHI.with(|phi| {
            let mut dphi = phi.borrow_mut();
            dphi.resize(nf, 0.0);
            for k in 0..p {
                self.features.partial_into(x, k, &mut dphi);
                let slab = &mut out[k * p * p..(k + 1) * p * p];
                for i in 0..p {
                    for j in i..p {
                        let w = self.block(i, j);
                        let mut v = 0.0;
                        for f in 0..nf {
                            v += w[f] * dphi[f];
                        }
                        slab[i * p + j] = v;
                        slab[j * p + i] = v;
                    }
                }
            }
        });
        out
    }

    fn quad_form(&self, x: &[f64], dx: &[f64]) -> f64 {
        let p = self.p;
        let nf = self.features.len();
        PHI.with(|phi| {
            let mut phi = phi.borrow_mut();
            phi.resize(nf, 0.0);
            self.features.eval_into(x, &mut phi);
            let mut v = 0.0;
            for i in 0..p {
                for j in i..p {
                    let w = self.block(i, j);
                    let mut m = 0.0;
                    for f in 0..nf {
                        m += w[f] * phi[f];
                    }
                    let kappa = if i == j { 1.0 } else { 2.0 };
                    v += kappa * m * dx[i] * dx[j];
                }
            }
            v
        })
    }

    fn quad_and_rate(&self, x: &[f64], xdot: &[f64], dx: &[f64], dxdot: &[f64]) -> (f64, f64) {
        let p = self.p;
        let nf = self.features.len();
        PHI.with(|phi_cell| {
            TPHI.with(|tphi_cell| {
                let mut phi = phi_cell.borrow_mut();
                let mut tphi = tphi_cell.borrow_mut();
                phi.resize(nf, 0.0);
                tphi.resize(nf, 0.0);
                self.features
                    .eval_with_tangent_into(x, xdot, &mut phi, &mut tphi);
                let mut v = 0.0;
                let mut vdot = 0.0;
                for i in 0..p {
                    for j in i..p {
                        let w = self.block(i, j);
                        let mut m = 0.0;
                        let mut mdot = 0.0;
                        for f in 0..nf {
                            m += w[f] * phi[f];
                            mdot += w[f] * tphi[f];
                        }
                        let kappa = if i == j { 1.0 } else { 2.0 };
                        let qq = kappa * dx[i] * dx[j];
                        // 2 dxdot^T M dx picks up both symmetric positions
                        let qr = if i == j {
                            2.0 * dxdot[i] * dx[i]
                        } else {
                            2.0 * (dxdot[i] * dx[j] + dxdot[j] * dx[i])
                        };
                        v += m * qq;
                        vdot += m * qr + mdot * qq;
                    }
                }
                (v, vdot)
            })
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
        PHI.with(|phi_cell| {
            TPHI.with(|tphi_cell| {
                let mut phi = phi_cell.borrow_mut();
                let mut tphi = tphi_cell.borrow_mut();
                phi.resize(nf, 0.0);
                tphi.resize(nf, 0.0);
                self.features
                    .eval_with_tangent_into(x, xdot, &mut phi, &mut tphi);
                for i in 0..p {
                    for j in i..p {
                        let b = block_index(p, i, j);
                        let kappa = if i == j { 1.0 } else { 2.0 };
                        let qq = kappa * dx[i] * dx[j];
                        let qr = if i == j {
                            2.0 * dxdot[i] * dx[i]
                        } else {
                            2.0 * (dxdot[i] * dx[j] + dxdot[j] * dx[i])
                        };
                        // V = sum M_ij qq, Vdot = sum (M_ij qr + Mdot_ij qq)
                        let cv = w_v * qq + w_rate * qr;
                        let cr = w_rate * qq;
                        let g = &mut grad[b * nf..(b + 1) * nf];
                        for f in 0..nf {
                            g[f] += cv * phi[f] + cr * tphi[f];
                        }
                    }
                }
            })
        });
    }

    fn accumulate_quad_grad(&self, x: &[f64], v: &[f64], w: f64, grad: &mut [f64]) {
        let p = self.p;
        let nf = self.features.len();
        PHI.with(|phi_cell| {
            let mut phi = phi_cell.borrow_mut();
            phi.resize(nf, 0.0);
            self.features.eval_into(x, &mut phi);
            for i in 0..p {
                for j in i..p {
                    let b = block_index(p, i, j);
                    let kappa = if i == j { 1.0 } else { 2.0 };
                    let c = w * kappa * v[i] * v[j];
                    let g = &mut grad[b * nf..(b + 1) * nf];
                    for f in 0..nf {
                        g[f] += c * phi[f];
                    }
                }
            }
        });
    }

    fn pd_by_construction(&self) -> bool {
        false
    }

    fn mu(&self) -> f64 {
        self.mu
    }
}

fn bad_meta() -> Error {
    Error::Config("malformed polynomial_metric metadata".into())
}
