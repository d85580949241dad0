//! Monomial feature maps for polynomial certificate parameterizations.

/// All monomials of total degree <= `degree` in `p` variables, in a fixed
/// deterministic order (graded, exponents generated recursively).
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialFeatures {
    p: usize,
    degree: usize,
    /// Exponent vectors, one per feature, each of length p.
    exponents: Vec<Vec<u32>>,
}

impl MonomialFeatures {
    pub fn new(p: usize, degree: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree {
            let mut cur = vec![0u32; p];
            gen_exponents(p, total as u32, 0, &mut cur, &mut exponents);
        }
        MonomialFeatures {
            p,
            degree,
            exponents,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.p
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of features: C(p + degree, degree).
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// phi(x).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (f, exps) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for (i, &e) in exps.iter().enumerate() {
                for _ in 0..e {
                    v *= x[i];
                }
            }
            out[f] = v;
        }
    }

    /// phi(x) and its tangent d/dt phi(x + t xdot) at t = 0.
    pub fn eval_with_tangent_into(&self, x: &[f64], xdot: &[f64], phi: &mut [f64], tphi: &mut [f64]) {
        for (f, exps) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for (i, &e) in exps.iter().enumerate() {
                for _ in 0..e {
                    v *= x[i];
                }
            }
            phi[f] = v;
            let mut t = 0.0;
            for (k, &e) in exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                // e * x_k^{e-1} * prod_{i != k} x_i^{e_i} * xdot_k
                let mut part = e as f64 * xdot[k];
                for (i, &ei) in exps.iter().enumerate() {
                    let pow = if i == k { ei - 1 } else { ei };
                    for _ in 0..pow {
                        part *= x[i];
                    }
                }
                t += part;
            }
            tphi[f] = t;
        }
    }

    /// d phi / d x_k for one coordinate.
    pub fn partial_into(&self, x: &[f64], k: usize, out: &mut [f64]) {
        for (f, exps) in self.exponents.iter().enumerate() {
            let e = exps[k];
            if e == 0 {
                out[f] = 0.0;
                continue;
            }
            let mut v = e as f64;
            for (i, &ei) in exps.iter().enumerate() {
                let pow = if i == k { ei - 1 } else { ei };
                for _ in 0..pow {
                    v *= x[i];
                }
            }
            out[f] = v;
        }
    }
}

fn gen_exponents(p: usize, remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == p - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        gen_exponents(p, remaining - e, pos + 1, cur, out);
        cur[pos] = 0;
    }
}
