//! Quadratic Lyapunov form V(x) = x^T P x with symmetric P. Serves as the
//! analytic baseline certificate: for linear systems the Lyapunov equation
//! yields an exact P, giving the test oracles something the learned models
//! are compared against.

use super::ScalarCertificate;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadraticLyapunov {
    p: usize,
    /// Upper-triangle coefficients P_ij (i <= j), row-major blocks.
    params: Vec<f64>,
}

#[inline]
fn tri_index(p: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    i * p - i * (i + 1) / 2 + j
}

impl QuadraticLyapunov {
    pub fn identity(p: usize) -> Self {
        let mut params = vec![0.0; p * (p + 1) / 2];
        for i in 0..p {
            params[tri_index(p, i, i)] = 1.0;
        }
        QuadraticLyapunov { p, params }
    }

    /// From a full row-major symmetric matrix.
    pub fn from_matrix(p: usize, matrix: &[f64]) -> Result<Self> {
        if matrix.len() != p * p {
            return Err(Error::Dimension {
                expected: p * p,
                got: matrix.len(),
            });
        }
        let mut params = vec![0.0; p * (p + 1) / 2];
        for i in 0..p {
            for j in i..p {
                params[tri_index(p, i, j)] = 0.5 * (matrix[i * p + j] + matrix[j * p + i]);
            }
        }
        Ok(QuadraticLyapunov { p, params })
    }

    pub fn matrix(&self) -> Vec<f64> {
        let p = self.p;
        let mut out = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let v = self.params[tri_index(p, i, j)];
                out[i * p + j] = v;
                out[j * p + i] = v;
            }
        }
        out
    }

    pub(super) fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "p": self.p })
    }

    pub(super) fn from_meta(meta: &serde_json::Value, params: Vec<f64>) -> Result<Self> {
        let p = meta["p"]
            .as_u64()
            .ok_or_else(|| Error::Config("malformed quadratic_lyapunov metadata".into()))?
            as usize;
        let expect = p * (p + 1) / 2;
        if params.len() != expect {
            return Err(Error::Config(format!(
                "quadratic_lyapunov expects {expect} parameters, got {}",
                params.len()
            )));
        }
        Ok(QuadraticLyapunov { p, params })
    }
}

impl ScalarCertificate for QuadraticLyapunov {
    fn state_dim(&self) -> usize {
        self.p
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn value(&self, x: &[f64]) -> f64 {
        let p = self.p;
        let mut v = 0.0;
        for i in 0..p {
            for j in i..p {
                let kappa = if i == j { 1.0 } else { 2.0 };
                v += kappa * self.params[tri_index(p, i, j)] * x[i] * x[j];
            }
        }
        v
    }

    fn grad_x(&self, x: &[f64]) -> Vec<f64> {
        // 2 P x
        let p = self.p;
        let m = self.matrix();
        let mut g = vec![0.0; p];
        for i in 0..p {
            for j in 0..p {
                g[i] += 2.0 * m[i * p + j] * x[j];
            }
        }
        g
    }

    fn value_and_dir(&self, x: &[f64], d: &[f64]) -> (f64, f64) {
        let p = self.p;
        let mut v = 0.0;
        let mut dir = 0.0;
        for i in 0..p {
            for j in i..p {
                let w = self.params[tri_index(p, i, j)];
                let kappa = if i == j { 1.0 } else { 2.0 };
                v += kappa * w * x[i] * x[j];
                dir += kappa * w * (x[i] * d[j] + x[j] * d[i]);
            }
        }
        (v, dir)
    }

    fn accumulate_param_grad(
        &self,
        x: &[f64],
        d: &[f64],
        w_value: f64,
        w_dir: f64,
        grad: &mut [f64],
    ) {
        let p = self.p;
        for i in 0..p {
            for j in i..p {
                let kappa = if i == j { 1.0 } else { 2.0 };
                let mut g = w_value * kappa * x[i] * x[j];
                if !d.is_empty() {
                    g += w_dir * kappa * (x[i] * d[j] + x[j] * d[i]);
                }
                grad[tri_index(p, i, j)] += g;
            }
        }
    }
}
