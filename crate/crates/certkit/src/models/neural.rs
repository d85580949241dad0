//! Neural Lyapunov candidate V(x) = x^T (L(x) L(x)^T + I) x, where L(x) is
//! the p x 2p reshaped output of a tanh MLP of size p -> h -> h -> 2p^2.
//!
//! The construction gives V(x) >= |x|^2 with V(0) = 0 for every parameter
//! value, so positive definiteness never has to be trained.
//!
//! Directional derivatives <grad V, d> are computed by carrying a tangent
//! through the forward pass (dual numbers); parameter gradients of
//! a V + b <grad V, d> are computed by a hand-written reverse sweep over
//! that tangent-carrying computation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

use super::ScalarCertificate;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NeuralLyapunov {
    p: usize,
    h: usize,
    seed: u64,
    /// [W1 (h x p), b1 (h), W2 (h x h), b2 (h), W3 (out x h), b3 (out)]
    /// flattened row-major, out = 2 p^2.
    params: Vec<f64>,
}

struct Scratch {
    a1: Vec<f64>,
    a2: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
    tz1: Vec<f64>,
    tz2: Vec<f64>,
    lf: Vec<f64>,
    tlf: Vec<f64>,
    y: Vec<f64>,
    ty: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    gt1: Vec<f64>,
    gt2: Vec<f64>,
    glf: Vec<f64>,
    gtlf: Vec<f64>,
    gy: Vec<f64>,
    gty: Vec<f64>,
}

impl Scratch {
    fn sized(h: usize, out: usize, q: usize) -> Self {
        Scratch {
            a1: vec![0.0; h],
            a2: vec![0.0; h],
            t1: vec![0.0; h],
            t2: vec![0.0; h],
            tz1: vec![0.0; h],
            tz2: vec![0.0; h],
            lf: vec![0.0; out],
            tlf: vec![0.0; out],
            y: vec![0.0; q],
            ty: vec![0.0; q],
            g1: vec![0.0; h],
            g2: vec![0.0; h],
            gt1: vec![0.0; h],
            gt2: vec![0.0; h],
            glf: vec![0.0; out],
            gtlf: vec![0.0; out],
            gy: vec![0.0; q],
            gty: vec![0.0; q],
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<Option<(usize, usize, Scratch)>> = const { RefCell::new(None) };
}

fn with_scratch<R>(h: usize, out: usize, q: usize, f: impl FnOnce(&mut Scratch) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut slot = cell.borrow_mut();
        let fits = matches!(&*slot, Some((sh, so, _)) if *sh == h && *so == out);
        if !fits {
            *slot = Some((h, out, Scratch::sized(h, out, q)));
        }
        f(&mut slot.as_mut().unwrap().2)
    })
}

impl NeuralLyapunov {
    /// Fresh model with weights ~ Uniform(+-1/sqrt(fan_in)) and zero biases.
    pub fn new(p: usize, h: usize, seed: u64) -> Self {
        assert!(p >= 1 && h >= 1);
        let out = 2 * p * p;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(h * p + h + h * h + h + out * h + out);
        let layer = |rows: usize, cols: usize, params: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (cols as f64).sqrt();
            for _ in 0..rows * cols {
                params.push(rng.gen_range(-bound..bound));
            }
            for _ in 0..rows {
                params.push(0.0);
            }
        };
        layer(h, p, &mut params, &mut rng);
        layer(h, h, &mut params, &mut rng);
        layer(out, h, &mut params, &mut rng);
        NeuralLyapunov { p, h, seed, params }
    }

    pub fn hidden_width(&self) -> usize {
        self.h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(super) fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "p": self.p, "h": self.h, "seed": self.seed })
    }

    pub(super) fn from_meta(meta: &serde_json::Value, params: Vec<f64>) -> Result<Self> {
        let p = meta["p"].as_u64().ok_or_else(bad_meta)? as usize;
        let h = meta["h"].as_u64().ok_or_else(bad_meta)? as usize;
        let seed = meta["seed"].as_u64().ok_or_else(bad_meta)?;
        let expect = Self::new(p, h, 0).params.len();
        if params.len() != expect {
            return Err(Error::Config(format!(
                "neural_lyapunov expects {expect} parameters, got {}",
                params.len()
            )));
        }
        Ok(NeuralLyapunov { p, h, seed, params })
    }

    #[inline]
    fn layout(&self) -> (usize, usize, usize, usize, usize, usize, usize) {
        let (p, h) = (self.p, self.h);
        let out = 2 * p * p;
        let w1 = 0;
        let b1 = w1 + h * p;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + out * h;
        (w1, b1, w2, b2, w3, b3, out)
    }

    /// Dual-number forward pass. With `tangent = true` the `t*` buffers are
    /// filled with the directional derivatives along `d`; the return value
    /// is (V, <grad V, d>) (second element zero when no tangent).
    fn forward(&self, x: &[f64], d: &[f64], tangent: bool, s: &mut Scratch) -> (f64, f64) {
        let (p, h) = (self.p, self.h);
        let q = 2 * p;
        let (w1, b1, w2, b2, w3, b3, out) = self.layout();
        let pr = &self.params;

        for i in 0..h {
            let row = &pr[w1 + i * p..w1 + (i + 1) * p];
            let mut z = pr[b1 + i];
            let mut tz = 0.0;
            for j in 0..p {
                z += row[j] * x[j];
                if tangent {
                    tz += row[j] * d[j];
                }
            }
            let a = z.tanh();
            s.a1[i] = a;
            s.tz1[i] = tz;
            s.t1[i] = (1.0 - a * a) * tz;
        }
        for i in 0..h {
            let row = &pr[w2 + i * h..w2 + (i + 1) * h];
            let mut z = pr[b2 + i];
            let mut tz = 0.0;
            for j in 0..h {
                z += row[j] * s.a1[j];
                if tangent {
                    tz += row[j] * s.t1[j];
                }
            }
            let a = z.tanh();
            s.a2[i] = a;
            s.tz2[i] = tz;
            s.t2[i] = (1.0 - a * a) * tz;
        }
        for i in 0..out {
            let row = &pr[w3 + i * h..w3 + (i + 1) * h];
            let mut z = pr[b3 + i];
            let mut tz = 0.0;
            for j in 0..h {
                z += row[j] * s.a2[j];
                if tangent {
                    tz += row[j] * s.t2[j];
                }
            }
            s.lf[i] = z;
            s.tlf[i] = tz;
        }
        // y = L^T x with L the row-major p x q reshape of lf
        let mut v = 0.0;
        let mut tv = 0.0;
        for j in 0..q {
            let mut y = 0.0;
            let mut ty = 0.0;
            for i in 0..p {
                y += s.lf[i * q + j] * x[i];
                if tangent {
                    ty += s.tlf[i * q + j] * x[i] + s.lf[i * q + j] * d[i];
                }
            }
            s.y[j] = y;
            s.ty[j] = ty;
            v += y * y;
            tv += 2.0 * y * ty;
        }
        for i in 0..p {
            v += x[i] * x[i];
            if tangent {
                tv += 2.0 * x[i] * d[i];
            }
        }
        (v, tv)
    }

    /// Reverse sweep accumulating grad += w_value dV/dtheta
    /// + w_dir d<grad V, d>/dtheta. Must follow a `forward` with
    /// `tangent = true` on the same scratch.
    fn backward(
        &self,
        x: &[f64],
        d: &[f64],
        w_value: f64,
        w_dir: f64,
        s: &mut Scratch,
        grad: &mut [f64],
    ) {
        let (p, h) = (self.p, self.h);
        let q = 2 * p;
        let (w1, b1, w2, b2, w3, b3, out) = self.layout();
        let pr = &self.params;

        for j in 0..q {
            s.gy[j] = 2.0 * (w_value * s.y[j] + w_dir * s.ty[j]);
            s.gty[j] = 2.0 * w_dir * s.y[j];
        }
        // y_j = sum_i L_ij x_i ; ty_j = sum_i (tL_ij x_i + L_ij d_i)
        for i in 0..p {
            for j in 0..q {
                s.glf[i * q + j] = x[i] * s.gy[j] + d[i] * s.gty[j];
                s.gtlf[i * q + j] = x[i] * s.gty[j];
            }
        }
        // layer 3: lf = W3 a2 + b3, tlf = W3 t2. One row-sequential pass
        // updates the W3 gradient and accumulates the activation adjoints.
        s.g2.iter_mut().for_each(|v| *v = 0.0);
        s.gt2.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..out {
            let gl = s.glf[i];
            let gtl = s.gtlf[i];
            let row = &pr[w3 + i * h..w3 + (i + 1) * h];
            let grow = &mut grad[w3 + i * h..w3 + (i + 1) * h];
            for j in 0..h {
                grow[j] += gl * s.a2[j] + gtl * s.t2[j];
                s.g2[j] += gl * row[j];
                s.gt2[j] += gtl * row[j];
            }
            grad[b3 + i] += gl;
        }
        // a2 = tanh(z2), t2 = (1 - a2^2) tz2
        for j in 0..h {
            let ga = s.g2[j];
            let gta = s.gt2[j];
            let a = s.a2[j];
            let sech2 = 1.0 - a * a;
            s.g2[j] = sech2 * ga - 2.0 * a * sech2 * s.tz2[j] * gta;
            s.gt2[j] = sech2 * gta;
        }
        // layer 2: z2 = W2 a1 + b2, tz2 = W2 t1
        s.g1.iter_mut().for_each(|v| *v = 0.0);
        s.gt1.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..h {
            let gz = s.g2[i];
            let gtz = s.gt2[i];
            let row = &pr[w2 + i * h..w2 + (i + 1) * h];
            let grow = &mut grad[w2 + i * h..w2 + (i + 1) * h];
            for j in 0..h {
                grow[j] += gz * s.a1[j] + gtz * s.t1[j];
                s.g1[j] += gz * row[j];
                s.gt1[j] += gtz * row[j];
            }
            grad[b2 + i] += gz;
        }
        for j in 0..h {
            let ga = s.g1[j];
            let gta = s.gt1[j];
            let a = s.a1[j];
            let sech2 = 1.0 - a * a;
            s.g1[j] = sech2 * ga - 2.0 * a * sech2 * s.tz1[j] * gta;
            s.gt1[j] = sech2 * gta;
        }
        // layer 1: z1 = W1 x + b1, tz1 = W1 d
        for i in 0..h {
            let gz = s.g1[i];
            let gtz = s.gt1[i];
            let row = w1 + i * p;
            for j in 0..p {
                grad[row + j] += gz * x[j] + gtz * d[j];
            }
            grad[b1 + i] += gz;
        }
    }
}

impl ScalarCertificate for NeuralLyapunov {
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
        let (p, out) = (self.p, 2 * self.p * self.p);
        with_scratch(self.h, out, 2 * p, |s| self.forward(x, &[], false, s).0)
    }

    fn value_and_dir(&self, x: &[f64], d: &[f64]) -> (f64, f64) {
        let (p, out) = (self.p, 2 * self.p * self.p);
        with_scratch(self.h, out, 2 * p, |s| self.forward(x, d, true, s))
    }

    fn grad_x(&self, x: &[f64]) -> Vec<f64> {
        // one tangent pass per coordinate; p is small in scope
        let mut g = vec![0.0; self.p];
        let mut e = vec![0.0; self.p];
        for k in 0..self.p {
            e[k] = 1.0;
            g[k] = self.value_and_dir(x, &e).1;
            e[k] = 0.0;
        }
        g
    }

    fn accumulate_param_grad(
        &self,
        x: &[f64],
        d: &[f64],
        w_value: f64,
        w_dir: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.params.len());
        let zero_d = vec![0.0; self.p];
        let d = if d.is_empty() { &zero_d } else { d };
        let (p, out) = (self.p, 2 * self.p * self.p);
        with_scratch(self.h, out, 2 * p, |s| {
            self.forward(x, d, true, s);
            self.backward(x, d, w_value, w_dir, s, grad);
        });
    }

    fn lyap_hinge_accumulate(
        &self,
        x: &[f64],
        d: &[f64],
        rate: f64,
        margin: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        // single forward pass; the backward sweep reuses its scratch
        let (p, out) = (self.p, 2 * self.p * self.p);
        with_scratch(self.h, out, 2 * p, |s| {
            let (v, dir) = self.forward(x, d, true, s);
            let r = dir + rate * v + margin;
            if r > 0.0 {
                self.backward(x, d, scale * rate, scale, s, grad);
            }
            r
        })
    }
}

fn bad_meta() -> Error {
    Error::Config("malformed neural_lyapunov metadata".into())
}
