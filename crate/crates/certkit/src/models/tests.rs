use super::*;
use crate::linalg::sym_eig_min;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

/// Central finite differences of a scalar map over selected coordinates.
fn fd_grad(
    f: &mut dyn FnMut(&[f64]) -> f64,
    at: &[f64],
    coords: &[usize],
    step_scale: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(coords.len());
    let mut x = at.to_vec();
    for &c in coords {
        let h = step_scale * (1.0 + at[c].abs());
        x[c] = at[c] + h;
        let fp = f(&x);
        x[c] = at[c] - h;
        let fm = f(&x);
        x[c] = at[c];
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

fn models_zoo(seed: u64) -> Vec<Certificate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poly = PolynomialMetric::identity_init(2, 3, 1.0);
    for w in poly.params_mut() {
        *w += rng.gen_range(-0.3..0.3);
    }
    let mut fact = FactoredMetric::scaled_identity_init(3, 2, 0.5, 1.0);
    for w in fact.params_mut() {
        *w += rng.gen_range(-0.3..0.3);
    }
    let mut rf = RandomFeatureCertificate::new(2, 40, 1.0, 10.0, seed);
    for c in rf.params_mut() {
        *c = rng.gen_range(-0.2..0.2);
    }
    let mut quad = QuadraticLyapunov::identity(2);
    for w in quad.params_mut() {
        *w += rng.gen_range(-0.4..0.4);
    }
    vec![
        Certificate::NeuralLyapunov(NeuralLyapunov::new(2, 16, seed)),
        Certificate::Quadratic(quad),
        Certificate::RandomFeature(rf),
        Certificate::PolynomialMetric(poly),
        Certificate::FactoredMetric(fact),
    ]
}

#[test]
fn neural_lyapunov_zero_at_origin_and_dominates_norm() {
    let m = NeuralLyapunov::new(3, 8, 4);
    assert_eq!(m.value(&[0.0, 0.0, 0.0]), 0.0);
    let g = m.grad_x(&[0.0, 0.0, 0.0]);
    assert!(g.iter().all(|v| v.abs() < 1e-14));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let x = rand_vec(&mut rng, 3, 3.0);
        let n2: f64 = x.iter().map(|v| v * v).sum();
        assert!(m.value(&x) >= n2 - 1e-12);
    }
}

#[test]
fn identity_polynomial_metric_is_constant() {
    let m = PolynomialMetric::identity_init(3, 2, 1.0);
    let mut out = vec![0.0; 9];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x = rand_vec(&mut rng, 3, 2.0);
        m.metric_into(&x, &mut out);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(out[i * 3 + j], expect);
            }
        }
        assert!(m.metric_grad_x(&x).iter().all(|v| *v == 0.0));
        let mdot = metric_time_derivative(&m, &x, &[1.0, -2.0, 0.5]);
        assert!(mdot.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn linear_metric_time_derivative_by_chain_rule() {
    // M(x) = x_0 I  =>  Mdot = xdot_0 I
    let mut m = PolynomialMetric::identity_init(2, 1, 0.0);
    let nf = m.feature_count();
    assert_eq!(nf, 3); // 1, x0, x1
    {
        let p = m.params_mut();
        p.iter_mut().for_each(|w| *w = 0.0);
        p[1] = 1.0; // block (0,0), feature x0
        p[2 * nf + 1] = 1.0; // block (1,1), feature x0
    }
    let mdot = metric_time_derivative(&m, &[0.3, -0.8], &[1.0, 0.0]);
    assert_eq!(mdot, vec![1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn polynomial_metric_symmetry_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = PolynomialMetric::identity_init(4, 3, 1.0);
    for w in m.params_mut() {
        *w = rng.gen_range(-1.0..1.0);
    }
    let mut out = vec![0.0; 16];
    for _ in 0..50 {
        let x = rand_vec(&mut rng, 4, 2.0);
        m.metric_into(&x, &mut out);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(out[i * 4 + j], out[j * 4 + i]);
            }
        }
    }
}

#[test]
fn factored_metric_eigenvalues_respect_mu() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = FactoredMetric::zero_init(3, 2, 0.7);
    for w in m.params_mut() {
        *w = rng.gen_range(-1.0..1.0);
    }
    let mut out = vec![0.0; 9];
    for _ in 0..1000 {
        let x = rand_vec(&mut rng, 3, 3.0);
        m.metric_into(&x, &mut out);
        assert!(sym_eig_min(&out, 3) >= 0.7 - 1e-10);
    }
}

#[test]
fn state_gradients_match_finite_differences() {
    // 50 seeded configurations across the zoo
    for seed in 0..13 {
        for model in models_zoo(seed) {
            let p = model.state_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = rand_vec(&mut rng, p, 2.0);
            match (&model, cert_grad_x(&model, &x).unwrap()) {
                (Certificate::NeuralLyapunov(m), CertGrad::Vector(g)) => {
                    check_scalar_grad(m, &x, &g);
                }
                (Certificate::Quadratic(m), CertGrad::Vector(g)) => {
                    check_scalar_grad(m, &x, &g);
                }
                (Certificate::RandomFeature(m), CertGrad::Vector(g)) => {
                    check_scalar_grad(m, &x, &g);
                }
                (Certificate::PolynomialMetric(m), CertGrad::Tensor(g)) => {
                    check_metric_grad(m, &x, &g);
                }
                (Certificate::FactoredMetric(m), CertGrad::Tensor(g)) => {
                    check_metric_grad(m, &x, &g);
                }
                _ => unreachable!(),
            }
        }
    }
}

fn check_scalar_grad(m: &dyn ScalarCertificate, x: &[f64], g: &[f64]) {
    let p = m.state_dim();
    let coords: Vec<usize> = (0..p).collect();
    let fd = fd_grad(&mut |z| m.value(z), x, &coords, 1e-5);
    for i in 0..p {
        assert!(
            rel_err(g[i], fd[i]) < 1e-5,
            "coord {i}: analytic {} vs fd {}",
            g[i],
            fd[i]
        );
    }
    // directional derivative agrees with the gradient
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = rand_vec(&mut rng, p, 1.0);
    let (_, dir) = m.value_and_dir(x, &d);
    let expect: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
    assert!(rel_err(dir, expect) < 1e-10);
}

fn check_metric_grad(m: &dyn MetricCertificate, x: &[f64], tensor: &[f64]) {
    let p = m.state_dim();
    let mut mp = vec![0.0; p * p];
    let mut mm = vec![0.0; p * p];
    for k in 0..p {
        let h = 1e-5 * (1.0 + x[k].abs());
        let mut xp = x.to_vec();
        xp[k] += h;
        let mut xm = x.to_vec();
        xm[k] -= h;
        m.metric_into(&xp, &mut mp);
        m.metric_into(&xm, &mut mm);
        for idx in 0..p * p {
            let fd = (mp[idx] - mm[idx]) / (2.0 * h);
            assert!(
                rel_err(tensor[k * p * p + idx], fd) < 1e-5,
                "dM/dx_{k} entry {idx}"
            );
        }
    }
}

#[test]
fn metric_rate_matches_directional_finite_difference() {
    for seed in [0u64, 3, 9] {
        for model in models_zoo(seed) {
            let Some(m) = model.metric() else { continue };
            let p = m.state_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
            let x = rand_vec(&mut rng, p, 1.5);
            let xdot = rand_vec(&mut rng, p, 1.5);
            let dx = rand_vec(&mut rng, p, 1.0);
            let dxdot = rand_vec(&mut rng, p, 1.0);
            let (v, vdot) = m.quad_and_rate(&x, &xdot, &dx, &dxdot);
            assert!(rel_err(v, m.quad_form(&x, &dx)) < 1e-14);
            let tau = 1e-6;
            let shift = |s: f64| {
                let xs: Vec<f64> = x.iter().zip(&xdot).map(|(a, b)| a + s * b).collect();
                let ds: Vec<f64> = dx.iter().zip(&dxdot).map(|(a, b)| a + s * b).collect();
                m.quad_form(&xs, &ds)
            };
            let fd = (shift(tau) - shift(-tau)) / (2.0 * tau);
            assert!(
                rel_err(vdot, fd) < 1e-5,
                "kind {}: vdot {vdot} vs fd {fd}",
                model.kind()
            );
        }
    }
}

#[test]
fn param_gradients_match_finite_differences() {
    for seed in 0..5 {
        for model in models_zoo(seed) {
            let p = model.state_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let n = 4;
            let batch = Batch {
                p,
                n,
                x: rand_vec(&mut rng, n * p, 1.5),
                xdot: Some(rand_vec(&mut rng, n * p, 1.5)),
                x_next: Some(rand_vec(&mut rng, n * p, 1.5)),
                delta: Some(rand_vec(&mut rng, n * p, 1.0)),
                delta_dot: Some(rand_vec(&mut rng, n * p, 1.0)),
                probes: Some(rand_vec(&mut rng, n * 3 * p, 1.0)),
                probes_per_point: 3,
            };
            let functionals: Vec<Functional> = if model.is_metric() {
                vec![
                    Functional::MetricHinge { lambda: 0.8 },
                    Functional::MetricPdPenalty { mu: 2.0 },
                    Functional::ParamNormSquared,
                ]
            } else {
                vec![
                    Functional::ValueAt,
                    Functional::LyapContinuousHinge {
                        rate: 0.5,
                        margin: 0.1,
                    },
                    Functional::LyapDiscreteHinge {
                        rho: 0.9,
                        gamma_slack: 0.02,
                    },
                    Functional::ParamNormSquared,
                ]
            };
            for func in &functionals {
                let grad = param_grad(&model, func, &batch).unwrap();
                // spot-check 20 random coordinates
                let n_params = model.params().len();
                let coords: Vec<usize> = (0..20)
                    .map(|_| rng.gen_range(0..n_params))
                    .collect();
                let mut probe = model.clone();
                let base = model.params().to_vec();
                let mut eval = |theta: &[f64]| {
                    probe.params_mut().copy_from_slice(theta);
                    functional_value(&probe, func, &batch).unwrap()
                };
                let fd = fd_grad(&mut eval, &base, &coords, 1e-6);
                for (idx, &c) in coords.iter().enumerate() {
                    assert!(
                        rel_err(grad[c], fd[idx]) < 1e-5,
                        "{} / {:?} coord {c}: {} vs {}",
                        model.kind(),
                        func,
                        grad[c],
                        fd[idx]
                    );
                }
            }
        }
    }
}

#[test]
fn zero_functional_has_zero_gradient() {
    for model in models_zoo(0) {
        let batch = Batch {
            p: model.state_dim(),
            n: 1,
            x: vec![0.5; model.state_dim()],
            ..Default::default()
        };
        let g = param_grad(&model, &Functional::Zero, &batch).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn param_norm_gradient_is_two_theta() {
    for model in models_zoo(1) {
        let batch = Batch {
            p: model.state_dim(),
            n: 0,
            ..Default::default()
        };
        let g = param_grad(&model, &Functional::ParamNormSquared, &batch).unwrap();
        for (gi, ti) in g.iter().zip(model.params()) {
            assert!((gi - 2.0 * ti).abs() < 1e-14);
        }
    }
}

#[test]
fn functional_model_mismatch_errors() {
    let metric = Certificate::PolynomialMetric(PolynomialMetric::identity_init(2, 2, 1.0));
    let batch = Batch {
        p: 2,
        n: 1,
        x: vec![0.1, 0.2],
        ..Default::default()
    };
    assert!(matches!(
        param_grad(&metric, &Functional::ValueAt, &batch),
        Err(Error::UnsupportedFunctional(_))
    ));
    let scalar = Certificate::NeuralLyapunov(NeuralLyapunov::new(2, 4, 0));
    assert!(matches!(
        param_grad(&scalar, &Functional::MetricHinge { lambda: 1.0 }, &batch),
        Err(Error::UnsupportedFunctional(_))
    ));
    // missing channel
    assert!(matches!(
        param_grad(
            &scalar,
            &Functional::LyapContinuousHinge {
                rate: 1.0,
                margin: 0.0
            },
            &batch
        ),
        Err(Error::UnsupportedFunctional(_))
    ));
}

#[test]
fn random_feature_projection_enforces_budget() {
    let mut m = RandomFeatureCertificate::new(2, 30, 1.0, 2.0, 9);
    for (i, c) in m.params_mut().iter_mut().enumerate() {
        *c = (i as f64 * 0.37).sin();
    }
    m.project();
    let l1: f64 = m.params().iter().map(|c| c.abs()).sum();
    assert!(l1 <= 2.0 + 1e-12);
}

#[test]
fn pd_penalty_is_zero_for_factored_metric() {
    let m = Certificate::FactoredMetric(FactoredMetric::scaled_identity_init(2, 2, 1.0, 0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch = Batch {
        p: 2,
        n: 3,
        x: rand_vec(&mut rng, 6, 1.0),
        probes: Some(rand_vec(&mut rng, 3 * 2 * 2, 1.0)),
        probes_per_point: 2,
        ..Default::default()
    };
    let mut grad = vec![0.0; m.params().len()];
    let v = accumulate_param_grad(&m, &Functional::MetricPdPenalty { mu: 1.0 }, &batch, 1.0, &mut grad)
        .unwrap();
    assert_eq!(v, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn checkpoints_roundtrip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, model) in models_zoo(3).into_iter().enumerate() {
        let path = dir.path().join(format!("model_{i}.ck"));
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model.kind(), loaded.kind());
        assert_eq!(model.params(), loaded.params());
        // behavioral identity at a probe point
        let x = vec![0.37; model.state_dim()];
        assert_eq!(cert_value(&model, &x).unwrap(), cert_value(&loaded, &x).unwrap());
    }
}

#[test]
fn checkpoint_version_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ck");
    let model = Certificate::NeuralLyapunov(NeuralLyapunov::new(2, 4, 0));
    save_model(&model, &path).unwrap();
    let content = std::fs::read(&path).unwrap();
    let patched = String::from_utf8_lossy(&content).replace("certkit-model-1", "certkit-model-0");
    std::fs::write(&path, patched.as_bytes()).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Version { .. })));
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn neural_value_dominates_squared_norm(
            x0 in -5.0f64..5.0,
            x1 in -5.0f64..5.0,
            seed in 0u64..32,
        ) {
            let m = NeuralLyapunov::new(2, 6, seed);
            let v = m.value(&[x0, x1]);
            prop_assert!(v >= x0 * x0 + x1 * x1 - 1e-12);
        }

        #[test]
        fn factored_metric_quad_form_lower_bound(
            x0 in -3.0f64..3.0,
            x1 in -3.0f64..3.0,
            d0 in -2.0f64..2.0,
            d1 in -2.0f64..2.0,
            seed in 0u64..16,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = FactoredMetric::zero_init(2, 2, 0.4);
            for w in m.params_mut() {
                *w = rand::Rng::gen_range(&mut rng, -1.0..1.0);
            }
            let v = m.quad_form(&[x0, x1], &[d0, d1]);
            prop_assert!(v >= 0.4 * (d0 * d0 + d1 * d1) - 1e-12);
        }
    }
}
