//! Statistical bounds on certificate generalization: empirical violation
//! rates over trajectory datasets, exact binomial-tail test-set upper
//! confidence bounds, the randomized-convex-program a-priori bound, and
//! holdout-split evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, DatasetEntries};
use crate::dynamics::{SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::sym_eig_max;
use crate::models::{metric_time_derivative, Certificate};
use crate::special::{binomial_cdf, ln_choose};

/// Certificate condition whose violation probability is being estimated.
/// An entry violates if its residual is strictly positive at any grid time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum Condition {
    /// <grad V(x), xdot> + rate V(x), on trajectories with derivative
    /// estimates.
    LyapContinuous { rate: f64 },
    /// V(e_{k+1}) - rho V(e_k) - gamma_slack over consecutive states.
    LyapDiscrete { rho: f64, gamma_slack: f64 },
    /// dV/dt + lambda V with V = dx^T M(x) dx, on paired data.
    MetricDiffLyap { lambda: f64 },
    /// lambda_max(J^T M + M J + Mdot + 2 eta_lambda M) along trajectories;
    /// requires the system Jacobian.
    ContractionRate { eta_lambda: f64 },
}

impl Condition {
    pub fn describe(&self) -> String {
        match self {
            Condition::LyapContinuous { rate } => {
                format!("<gradV, xdot> + {rate} V <= 0")
            }
            Condition::LyapDiscrete { rho, gamma_slack } => {
                format!("V(e_next) <= {rho} V(e) + {gamma_slack}")
            }
            Condition::MetricDiffLyap { lambda } => {
                format!("d/dt(dx' M dx) <= -{lambda} dx' M dx")
            }
            Condition::ContractionRate { eta_lambda } => {
                format!("J'M + MJ + Mdot <= -2 {eta_lambda} M")
            }
        }
    }
}

/// Empirical violation counts for one model/dataset/condition triple.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ViolationReport {
    /// Entries evaluated.
    pub n: usize,
    /// Entries whose worst residual exceeds zero.
    pub k: usize,
    pub condition: String,
    /// Max-over-time residual per entry.
    pub worst_residuals: Vec<f64>,
}

impl ViolationReport {
    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    ChernoffTestSet,
    Rcp,
    Holdout,
}

/// An upper confidence bound on the violation probability.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundReport {
    pub epsilon: f64,
    pub delta: f64,
    pub method: BoundMethod,
    pub n: usize,
    /// Violation count (test-set style bounds).
    pub k: Option<usize>,
    /// Decision dimension (RCP bound).
    pub d: Option<usize>,
    /// Set when n < d makes the RCP bound vacuous.
    pub vacuous: bool,
    /// The RCP guarantee presumes the training program was convex in its
    /// decision variables; set when the certificate is linear in its
    /// parameters so the premise applies.
    pub convex_premise: Option<bool>,
}

fn validate_condition(
    model: &Certificate,
    sys: Option<&SystemSpec>,
    condition: &Condition,
) -> Result<()> {
    match condition {
        Condition::LyapContinuous { .. } | Condition::LyapDiscrete { .. } => {
            if model.scalar().is_none() {
                return Err(Error::ConditionMismatch {
                    condition: condition.describe(),
                    reason: "requires a scalar certificate".into(),
                });
            }
        }
        Condition::MetricDiffLyap { .. } => {
            if model.metric().is_none() {
                return Err(Error::ConditionMismatch {
                    condition: condition.describe(),
                    reason: "requires a metric certificate".into(),
                });
            }
        }
        Condition::ContractionRate { .. } => {
            if model.metric().is_none() {
                return Err(Error::ConditionMismatch {
                    condition: condition.describe(),
                    reason: "requires a metric certificate".into(),
                });
            }
            match sys {
                Some(s) if s.has_jacobian() => {}
                _ => {
                    return Err(Error::ConditionMismatch {
                        condition: condition.describe(),
                        reason: "requires a system with an analytic jacobian".into(),
                    })
                }
            }
        }
    }
    Ok(())
}

fn base_trajectory(entries: &DatasetEntries, i: usize) -> &Trajectory {
    match entries {
        DatasetEntries::Singles(v) => &v[i],
        DatasetEntries::Paired(v) => &v[i].base,
    }
}

/// Worst residual of one dataset entry under the condition.
fn entry_worst_residual(
    model: &Certificate,
    sys: Option<&SystemSpec>,
    dataset: &Dataset,
    condition: &Condition,
    i: usize,
) -> Result<f64> {
    let p = dataset.state_dim();
    let mut worst = f64::NEG_INFINITY;
    match condition {
        Condition::LyapContinuous { rate } => {
            let s = model.scalar().unwrap();
            let traj = base_trajectory(&dataset.entries, i);
            for k in 0..traj.len() {
                let d = traj.deriv(k).ok_or(Error::MissingDerivs)?;
                let (v, dir) = s.value_and_dir(traj.state(k), d);
                worst = worst.max(dir + rate * v);
            }
        }
        Condition::LyapDiscrete { rho, gamma_slack } => {
            let s = model.scalar().unwrap();
            let traj = base_trajectory(&dataset.entries, i);
            if traj.len() < 2 {
                return Err(Error::TooShort {
                    need: 2,
                    got: traj.len(),
                });
            }
            let mut v_prev = s.value(traj.state(0));
            for k in 1..traj.len() {
                let v = s.value(traj.state(k));
                worst = worst.max(v - rho * v_prev - gamma_slack);
                v_prev = v;
            }
        }
        Condition::MetricDiffLyap { lambda } => {
            let m = model.metric().unwrap();
            let pair = match &dataset.entries {
                DatasetEntries::Paired(v) => &v[i],
                DatasetEntries::Singles(_) => {
                    return Err(Error::ConditionMismatch {
                        condition: condition.describe(),
                        reason: "requires a paired dataset".into(),
                    })
                }
            };
            for k in 0..pair.base.len() {
                let xd = pair.base.deriv(k).ok_or(Error::MissingDerivs)?;
                let dxd = pair.delta.deriv(k).ok_or(Error::MissingDerivs)?;
                let (v, vdot) =
                    m.quad_and_rate(pair.base.state(k), xd, pair.delta.state(k), dxd);
                worst = worst.max(vdot + lambda * v);
            }
        }
        Condition::ContractionRate { eta_lambda } => {
            let m = model.metric().unwrap();
            let sys = sys.unwrap();
            let traj = base_trajectory(&dataset.entries, i);
            let mut jac = vec![0.0; p * p];
            let mut metric = vec![0.0; p * p];
            let mut field = vec![0.0; p];
            let mut resid = vec![0.0; p * p];
            for k in 0..traj.len() {
                let x = traj.state(k);
                let t = traj.time(k);
                sys.jacobian_into(x, t, &mut jac)?;
                sys.field_into(x, t, &mut field)?;
                m.metric_into(x, &mut metric);
                let mdot = metric_time_derivative(m, x, &field);
                for r in 0..p {
                    for c in 0..p {
                        // J^T M + M J + Mdot + 2 eta lambda M
                        let mut v = mdot[r * p + c] + 2.0 * eta_lambda * metric[r * p + c];
                        for l in 0..p {
                            v += jac[l * p + r] * metric[l * p + c]
                                + metric[r * p + l] * jac[l * p + c];
                        }
                        resid[r * p + c] = v;
                    }
                }
                worst = worst.max(sym_eig_max(&resid, p));
            }
        }
    }
    Ok(worst)
}

/// Per-entry worst residuals and the count of strict violations. An entry
/// violates when its residual is positive at any grid time; ties count as
/// satisfied.
pub fn empirical_violation(
    model: &Certificate,
    dataset: &Dataset,
    condition: &Condition,
    sys: Option<&SystemSpec>,
) -> Result<ViolationReport> {
    validate_condition(model, sys, condition)?;
    if matches!(condition, Condition::MetricDiffLyap { .. }) && !dataset.is_paired() {
        return Err(Error::ConditionMismatch {
            condition: condition.describe(),
            reason: "requires a paired dataset".into(),
        });
    }
    let n = dataset.len();
    let worst: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| entry_worst_residual(model, sys, dataset, condition, i))
        .collect();
    let worst = worst.into_iter().collect::<Result<Vec<f64>>>()?;
    let k = worst.iter().filter(|r| **r > 0.0).count();
    Ok(ViolationReport {
        n,
        k,
        condition: condition.describe(),
        worst_residuals: worst,
    })
}

/// Exact binomial test-set upper confidence bound: the largest p such that
/// BinomialCDF(k; n, p) >= delta. With confidence 1 - delta over the test
/// draw, the true violation probability is at most this value.
pub fn chernoff_ucb(k: usize, n: usize, delta: f64) -> f64 {
    assert!(k <= n, "k must not exceed n");
    assert!(n > 0, "empty test set");
    assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
    if k == n {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // binomial_cdf(k; n, p) decreases in p from 1 to 0
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if binomial_cdf(k as u64, n as u64, mid) >= delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    lo
}

pub fn chernoff_report(k: usize, n: usize, delta: f64) -> BoundReport {
    BoundReport {
        epsilon: chernoff_ucb(k, n, delta),
        delta,
        method: BoundMethod::ChernoffTestSet,
        n,
        k: Some(k),
        d: None,
        vacuous: false,
        convex_premise: None,
    }
}

/// beta(eps) = sum_{i=0}^{d-1} C(n,i) eps^i (1-eps)^{n-i}, evaluated in
/// log space.
fn rcp_beta(n: usize, d: usize, eps: f64) -> f64 {
    if eps <= 0.0 {
        return 1.0;
    }
    if eps >= 1.0 {
        return 0.0;
    }
    let ln_e = eps.ln();
    let ln_1e = (1.0 - eps).ln();
    let mut max_term = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(d);
    for i in 0..d {
        let t = ln_choose(n as u64, i as u64) + i as f64 * ln_e + (n - i) as f64 * ln_1e;
        max_term = max_term.max(t);
        terms.push(t);
    }
    let sum: f64 = terms.iter().map(|t| (t - max_term).exp()).sum();
    (max_term + sum.ln()).exp().min(1.0)
}

/// A-priori randomized-convex-program bound: the epsilon solving
/// beta(eps) = delta for a sampled program with n constraints and d
/// decision variables. Returns (epsilon, vacuous); the bound is vacuous
/// when n < d.
pub fn rcp_epsilon(n: usize, d: usize, delta: f64) -> (f64, bool) {
    assert!(d >= 1, "decision dimension must be at least 1");
    assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
    if n < d {
        return (1.0, true);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rcp_beta(n, d, mid) >= delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    (lo, false)
}

/// RCP bound report for a trained certificate. `linear_in_params` should be
/// true for certificates that are linear in their decision variables
/// (polynomial metrics, random-feature models), which is the convexity
/// premise of the guarantee.
pub fn rcp_report(n: usize, d: usize, delta: f64, linear_in_params: bool) -> BoundReport {
    let (epsilon, vacuous) = rcp_epsilon(n, d, delta);
    BoundReport {
        epsilon,
        delta,
        method: BoundMethod::Rcp,
        n,
        k: None,
        d: Some(d),
        vacuous,
        convex_premise: Some(linear_in_params),
    }
}

/// Train on a seeded `split` fraction of the dataset and compute the
/// test-set bound on the held-out remainder.
pub fn holdout_evaluate(
    trainer: &dyn Fn(&Dataset) -> Result<Certificate>,
    dataset: &Dataset,
    condition: &Condition,
    sys: Option<&SystemSpec>,
    split: f64,
    delta: f64,
    seed: u64,
) -> Result<(Certificate, ViolationReport, BoundReport)> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::Config(format!(
            "split must lie strictly between 0 and 1, got {split}"
        )));
    }
    let n = dataset.len();
    let n_train = (split * n as f64).floor() as usize;
    let n_hold = n - n_train;
    if n_hold < 1 || n_train < 1 {
        return Err(Error::Config(format!(
            "split {split} leaves an empty side: {n_train} train / {n_hold} holdout"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let train_ds = dataset.subset(&order[..n_train]);
    let hold_ds = dataset.subset(&order[n_train..]);
    let model = trainer(&train_ds)?;
    let violations = empirical_violation(&model, &hold_ds, condition, sys)?;
    let mut report = chernoff_report(violations.k, violations.n, delta);
    report.method = BoundMethod::Holdout;
    Ok((model, violations, report))
}

/// Nearest-rank percentiles on the sorted values.
pub fn percentiles(values: &[f64], fractions: &[f64]) -> Vec<f64> {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    fractions
        .iter()
        .map(|f| {
            let idx = ((f * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
            sorted[idx]
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    percentiles(values, &[0.5])[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::SampleRegion;
    use crate::dynamics::{make_builtin, SystemConfig};
    use crate::linalg::{solve_lyapunov, sym_eigenvalues};
    use crate::models::{PolynomialMetric, QuadraticLyapunov};

    /// xdot = a x trajectories with analytic derivatives.
    fn linear_dataset(a_diag: f64, n_traj: usize, len: usize, dt: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut trajs = Vec::new();
        for _ in 0..n_traj {
            let x0 = [rng.gen_range(0.5..2.0f64), rng.gen_range(0.5..2.0f64)];
            let mut states = Vec::new();
            let mut derivs = Vec::new();
            for k in 0..len {
                let f = (a_diag * k as f64 * dt).exp();
                let x = [x0[0] * f, x0[1] * f];
                states.extend_from_slice(&x);
                derivs.extend_from_slice(&[a_diag * x[0], a_diag * x[1]]);
            }
            let mut t = Trajectory::new(dt, 2, states);
            t.set_derivs(derivs);
            trajs.push(t);
        }
        Dataset {
            system: SystemConfig::Linear {
                a: vec![vec![a_diag, 0.0], vec![0.0, a_diag]],
            },
            region: SampleRegion::centered_box(vec![2.0, 2.0]),
            dt,
            horizon: (len - 1) as f64 * dt,
            seed: 3,
            method: None,
            entries: DatasetEntries::Singles(trajs),
        }
    }

    #[test]
    fn violations_zero_on_contracting_data() {
        let model = Certificate::Quadratic(QuadraticLyapunov::identity(2));
        let ds = linear_dataset(-1.0, 10, 20, 0.05);
        let rep =
            empirical_violation(&model, &ds, &Condition::LyapContinuous { rate: 1.0 }, None)
                .unwrap();
        assert_eq!(rep.k, 0);
        assert_eq!(rep.n, 10);
        assert!(rep.worst_residuals.iter().all(|r| *r <= 0.0));
    }

    #[test]
    fn violations_total_on_expanding_data() {
        let model = Certificate::Quadratic(QuadraticLyapunov::identity(2));
        let ds = linear_dataset(1.0, 10, 20, 0.05);
        let rep =
            empirical_violation(&model, &ds, &Condition::LyapContinuous { rate: 0.0 }, None)
                .unwrap();
        assert_eq!(rep.k, 10);
    }

    #[test]
    fn lti_lyapunov_equation_oracle_has_zero_violations() {
        // A Hurwitz, P solves A'P + PA = -Q: <gradV, Ax> = -x'Qx
        // <= -lambda_min(Q)/lambda_max(P) V, so any smaller rate is valid.
        let a = [0.0, 1.0, -9.81, -2.0];
        let q = [1.0, 0.0, 0.0, 1.0];
        let p_mat = solve_lyapunov(&a, &q, 2).unwrap();
        let eigs_p = sym_eigenvalues(&p_mat, 2);
        let rate = 0.9 / eigs_p[1]; // lambda_min(Q) = 1
        let model = Certificate::Quadratic(QuadraticLyapunov::from_matrix(2, &p_mat).unwrap());

        let cfg = SystemConfig::Linear {
            a: vec![vec![0.0, 1.0], vec![-9.81, -2.0]],
        };
        let sys = make_builtin(&cfg).unwrap();
        let region = SampleRegion::centered_box(vec![2.0, 2.0]);
        let mut ds =
            crate::datagen::generate_singles(&sys, &cfg, &region, 25, 3.0, 0.01, None, 5).unwrap();
        // analytic derivatives keep the oracle exact
        if let DatasetEntries::Singles(trajs) = &mut ds.entries {
            for t in trajs {
                let mut derivs = Vec::with_capacity(t.len() * 2);
                for k in 0..t.len() {
                    let x = t.state(k);
                    derivs.push(a[0] * x[0] + a[1] * x[1]);
                    derivs.push(a[2] * x[0] + a[3] * x[1]);
                }
                t.set_derivs(derivs);
            }
        }
        let rep =
            empirical_violation(&model, &ds, &Condition::LyapContinuous { rate }, None).unwrap();
        assert_eq!(rep.k, 0, "worst residuals {:?}", &rep.worst_residuals[..3]);
    }

    #[test]
    fn contraction_condition_on_identity_metric() {
        // xdot = -x contracts at rate 1 in the identity metric:
        // J'M + MJ + Mdot + 2 eta M = (-2 + 2 eta) I
        let cfg = SystemConfig::Linear {
            a: vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
        };
        let sys = make_builtin(&cfg).unwrap();
        let model = Certificate::PolynomialMetric(PolynomialMetric::identity_init(2, 1, 1.0));
        let ds = linear_dataset(-1.0, 5, 10, 0.1);
        let rep = empirical_violation(
            &model,
            &ds,
            &Condition::ContractionRate { eta_lambda: 0.9 },
            Some(&sys),
        )
        .unwrap();
        assert_eq!(rep.k, 0);
        let rep = empirical_violation(
            &model,
            &ds,
            &Condition::ContractionRate { eta_lambda: 1.1 },
            Some(&sys),
        )
        .unwrap();
        assert_eq!(rep.k, 5);
        for r in &rep.worst_residuals {
            assert!((r - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn contraction_requires_jacobian() {
        let model = Certificate::PolynomialMetric(PolynomialMetric::identity_init(2, 1, 1.0));
        let ds = linear_dataset(-1.0, 2, 5, 0.1);
        assert!(matches!(
            empirical_violation(
                &model,
                &ds,
                &Condition::ContractionRate { eta_lambda: 1.0 },
                None
            ),
            Err(Error::ConditionMismatch { .. })
        ));
    }

    #[test]
    fn chernoff_ucb_edge_and_closed_form() {
        assert_eq!(chernoff_ucb(10, 10, 0.01), 1.0);
        // k = 0: (1-p)^n = delta  =>  p = 1 - delta^{1/n}
        let eps = chernoff_ucb(0, 100, 0.01);
        let closed = 1.0 - 0.01f64.powf(0.01);
        assert!((eps - closed).abs() < 1e-9, "{eps} vs {closed}");
    }

    #[test]
    fn chernoff_ucb_matches_independent_oracle() {
        // frozen from an independent binomial-CDF inversion
        let eps = chernoff_ucb(10, 1000, 0.01);
        assert!((eps - 0.020042605900878856).abs() < 1e-9, "{eps}");
        // verify the defining equation against a direct log-space sum
        let direct: f64 = (0..=10u64)
            .map(|i| {
                (ln_choose(1000, i) + i as f64 * eps.ln() + (1000 - i) as f64 * (1.0 - eps).ln())
                    .exp()
            })
            .sum();
        assert!((direct - 0.01).abs() < 1e-8, "cdf at eps: {direct}");
    }

    #[test]
    fn chernoff_monotonicity() {
        let delta = 0.05;
        let mut prev = 0.0;
        for k in 0..=20 {
            let e = chernoff_ucb(k, 200, delta);
            assert!(e >= prev - 1e-12);
            assert!(e >= k as f64 / 200.0 - 1e-9);
            prev = e;
        }
        let mut prev = 1.0;
        for m in [1usize, 2, 4, 8] {
            let e = chernoff_ucb(5 * m, 100 * m, delta);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
        assert!(chernoff_ucb(3, 100, 0.01) > chernoff_ucb(3, 100, 0.1));
    }

    #[test]
    fn rcp_closed_form_at_dimension_one() {
        for &n in &[10usize, 100, 500, 4000] {
            let (eps, vac) = rcp_epsilon(n, 1, 0.01);
            assert!(!vac);
            let closed = 1.0 - 0.01f64.powf(1.0 / n as f64);
            assert!((eps - closed).abs() < 1e-10, "n={n}: {eps} vs {closed}");
        }
    }

    #[test]
    fn rcp_equals_chernoff_at_matching_tail() {
        // beta(eps) with d-1 = k is the same binomial tail the test-set
        // bound inverts, so the two independent routes must agree
        for (k, n) in [(0usize, 50usize), (3, 200), (10, 1000)] {
            let a = chernoff_ucb(k, n, 0.01);
            let (b, _) = rcp_epsilon(n, k + 1, 0.01);
            assert!((a - b).abs() < 1e-9, "k={k} n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn rcp_monotonicity_and_vacuous_case() {
        let (e1, _) = rcp_epsilon(1000, 20, 0.01);
        let (e2, _) = rcp_epsilon(2000, 20, 0.01);
        assert!(e2 < e1);
        let (e3, _) = rcp_epsilon(1000, 40, 0.01);
        assert!(e3 > e1);
        let (e4, _) = rcp_epsilon(1000, 20, 0.001);
        assert!(e4 > e1);
        let (e, vac) = rcp_epsilon(10, 11, 0.01);
        assert!(vac);
        assert_eq!(e, 1.0);
    }

    #[test]
    fn rcp_within_chernoff_envelope() {
        // sanity at the 6-d degree-2 polynomial-metric decision dimension:
        // eps <= c (d - 1 + log(1/delta)) / n with c = 2
        let d = 21 * 28;
        let (eps, _) = rcp_epsilon(4000, d, 0.01);
        assert!((eps - 0.1602406018733986).abs() < 1e-9, "{eps}");
        let envelope = 2.0 * (d as f64 - 1.0 + (1.0f64 / 0.01).ln()) / 4000.0;
        assert!(eps <= envelope);
    }

    #[test]
    fn coverage_simulation() {
        // chernoff_ucb(k, n, delta) >= true p in at least 1 - delta - 0.01
        // of seeded Bernoulli experiments
        let delta = 0.05;
        let p_true = 0.07;
        let n = 120;
        let trials = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut covered = 0;
        for _ in 0..trials {
            let k = (0..n).filter(|_| rng.gen::<f64>() < p_true).count();
            if chernoff_ucb(k, n, delta) >= p_true {
                covered += 1;
            }
        }
        let frac = covered as f64 / trials as f64;
        assert!(frac >= 1.0 - delta - 0.01, "coverage {frac}");
    }

    #[test]
    fn holdout_splits_and_bounds() {
        let ds = linear_dataset(-1.0, 100, 10, 0.05);
        let trainer = |train: &Dataset| -> Result<Certificate> {
            assert_eq!(train.len(), 90);
            Ok(Certificate::Quadratic(QuadraticLyapunov::identity(2)))
        };
        let (_, violations, bound) = holdout_evaluate(
            &trainer,
            &ds,
            &Condition::LyapContinuous { rate: 1.0 },
            None,
            0.9,
            0.01,
            3,
        )
        .unwrap();
        assert_eq!(violations.n, 10);
        assert_eq!(violations.k, 0);
        // perfect certificate: eps = 1 - delta^{1/m}
        let expect = 1.0 - 0.01f64.powf(0.1);
        assert!((bound.epsilon - expect).abs() < 1e-9);
        assert_eq!(bound.method, BoundMethod::Holdout);
    }

    #[test]
    fn holdout_rejects_degenerate_split() {
        let ds = linear_dataset(-1.0, 3, 5, 0.05);
        let trainer = |_: &Dataset| -> Result<Certificate> {
            Ok(Certificate::Quadratic(QuadraticLyapunov::identity(2)))
        };
        // split so small the training side is empty
        assert!(holdout_evaluate(
            &trainer,
            &ds,
            &Condition::LyapContinuous { rate: 1.0 },
            None,
            0.1,
            0.01,
            0,
        )
        .is_err());
        // split outside (0, 1)
        assert!(holdout_evaluate(
            &trainer,
            &ds,
            &Condition::LyapContinuous { rate: 1.0 },
            None,
            1.0,
            0.01,
            0,
        )
        .is_err());
    }

    #[test]
    fn percentile_convention() {
        let vals = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        let p = percentiles(&vals, &[0.1, 0.5, 0.9]);
        assert_eq!(p, vec![1.0, 3.0, 5.0]);
        assert_eq!(median(&vals), 3.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn chernoff_bounds_rate(
                k in 0usize..50,
                extra in 1usize..200,
                delta in 0.001f64..0.2,
            ) {
                let n = k + extra;
                let eps = chernoff_ucb(k, n, delta);
                prop_assert!(eps >= k as f64 / n as f64 - 1e-9);
                prop_assert!((0.0..=1.0).contains(&eps));
            }

            #[test]
            fn rcp_epsilon_in_unit_interval(
                n in 1usize..3000,
                d in 1usize..50,
                delta in 0.001f64..0.2,
            ) {
                let (eps, vac) = rcp_epsilon(n, d, delta);
                prop_assert!((0.0..=1.0).contains(&eps));
                prop_assert_eq!(vac, n < d);
            }
        }
    }
}
