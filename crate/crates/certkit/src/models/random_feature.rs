//! Random-feature certificate V(x) = sum_k c_k cos(<w_k, x> + b_k) with
//! frozen feature draws and an l1 budget on the coefficients, enforced by
//! Euclidean projection after each optimizer step. The cosine features with
//! Gaussian weights realize a translation-invariant kernel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ScalarCertificate;
use crate::error::{Error, Result};
use crate::linalg::project_l1;

#[derive(Debug, Clone)]
pub struct RandomFeatureCertificate {
    p: usize,
    k: usize,
    bandwidth: f64,
    b_alpha: f64,
    seed: u64,
    /// Frozen feature weights, row-major k x p.
    w: Vec<f64>,
    /// Frozen feature phases, length k.
    b: Vec<f64>,
    /// Trainable coefficients, length k.
    c: Vec<f64>,
}

impl RandomFeatureCertificate {
    /// Draw K frozen features w_k ~ N(0, I / bandwidth^2),
    /// b_k ~ Uniform[0, 2 pi); coefficients start at zero.
    pub fn new(p: usize, k: usize, bandwidth: f64, b_alpha: f64, seed: u64) -> Self {
        assert!(bandwidth > 0.0 && b_alpha >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Vec::with_capacity(k * p);
        let mut b = Vec::with_capacity(k);
        for _ in 0..k {
            for _ in 0..p {
                let g: f64 = rng.sample(StandardNormal);
                w.push(g / bandwidth);
            }
        }
        for _ in 0..k {
            b.push(rng.gen::<f64>() * 2.0 * std::f64::consts::PI);
        }
        RandomFeatureCertificate {
            p,
            k,
            bandwidth,
            b_alpha,
            seed,
            w,
            b,
            c: vec![0.0; k],
        }
    }

    pub fn feature_count(&self) -> usize {
        self.k
    }

    pub fn l1_budget(&self) -> f64 {
        self.b_alpha
    }

    pub fn decision_dim(&self) -> usize {
        self.k
    }

    pub(super) fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "p": self.p,
            "k": self.k,
            "bandwidth": self.bandwidth,
            "b_alpha": self.b_alpha,
            "seed": self.seed,
        })
    }

    pub(super) fn from_meta(meta: &serde_json::Value, params: Vec<f64>) -> Result<Self> {
        let p = meta["p"].as_u64().ok_or_else(bad_meta)? as usize;
        let k = meta["k"].as_u64().ok_or_else(bad_meta)? as usize;
        let bandwidth = meta["bandwidth"].as_f64().ok_or_else(bad_meta)?;
        let b_alpha = meta["b_alpha"].as_f64().ok_or_else(bad_meta)?;
        let seed = meta["seed"].as_u64().ok_or_else(bad_meta)?;
        if params.len() != k {
            return Err(Error::Config(format!(
                "random_feature expects {k} parameters, got {}",
                params.len()
            )));
        }
        // features are regenerated bit-exactly from the stored seed
        let mut model = Self::new(p, k, bandwidth, b_alpha, seed);
        model.c = params;
        Ok(model)
    }
}

impl ScalarCertificate for RandomFeatureCertificate {
    fn state_dim(&self) -> usize {
        self.p
    }

    fn params(&self) -> &[f64] {
        &self.c
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.c
    }

    fn value(&self, x: &[f64]) -> f64 {
        let p = self.p;
        let mut v = 0.0;
        for k in 0..self.k {
            let row = &self.w[k * p..(k + 1) * p];
            let mut z = self.b[k];
            for j in 0..p {
                z += row[j] * x[j];
            }
            v += self.c[k] * z.cos();
        }
        v
    }

    fn grad_x(&self, x: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut g = vec![0.0; p];
        for k in 0..self.k {
            let row = &self.w[k * p..(k + 1) * p];
            let mut z = self.b[k];
            for j in 0..p {
                z += row[j] * x[j];
            }
            let coef = -self.c[k] * z.sin();
            for j in 0..p {
                g[j] += coef * row[j];
            }
        }
        g
    }

    fn value_and_dir(&self, x: &[f64], d: &[f64]) -> (f64, f64) {
        let p = self.p;
        let mut v = 0.0;
        let mut dir = 0.0;
        for k in 0..self.k {
            let row = &self.w[k * p..(k + 1) * p];
            let mut z = self.b[k];
            let mut tz = 0.0;
            for j in 0..p {
                z += row[j] * x[j];
                tz += row[j] * d[j];
            }
            v += self.c[k] * z.cos();
            dir -= self.c[k] * z.sin() * tz;
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
        for k in 0..self.k {
            let row = &self.w[k * p..(k + 1) * p];
            let mut z = self.b[k];
            let mut tz = 0.0;
            for j in 0..p {
                z += row[j] * x[j];
                if !d.is_empty() {
                    tz += row[j] * d[j];
                }
            }
            // dV/dc_k = cos z ; d<gradV,d>/dc_k = -sin(z) <w_k, d>
            grad[k] += w_value * z.cos() - w_dir * z.sin() * tz;
        }
    }

    fn project(&mut self) {
        project_l1(&mut self.c, self.b_alpha);
    }
}

fn bad_meta() -> Error {
    Error::Config("malformed random_feature metadata".into())
}
