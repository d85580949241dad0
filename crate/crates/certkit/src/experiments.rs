//! Desk-scale experiment recipes wiring the modules together: damped
//! pendulum Lyapunov learning, damped Van der Pol metric learning, the
//! 6-d gradient-flow metric, and the adaptive-control demonstration.
//! These are the one-command reproductions behind the CLI and the
//! acceptance suite.

use serde::{Deserialize, Serialize};

use crate::datagen::{generate_pairs, generate_singles, Dataset, DiffMethod, PairConfig, SampleRegion};
use crate::dynamics::{make_builtin, SystemConfig, SystemSpec};
use crate::error::Result;
use crate::globalcert::{grid_violation, GridCondition, GridReport, GridSpec};
use crate::models::{Certificate, FactoredMetric, NeuralLyapunov, PolynomialMetric};
use crate::statbounds::{
    chernoff_report, empirical_violation, rcp_report, BoundReport, Condition, ViolationReport,
};
use crate::training::{train, LossKind, LrSchedule, TrainConfig, TrainReport};

/// Damped-pendulum Lyapunov recipe: n trajectories from [-2,2]^2 over 8 s
/// at dt = 0.02, Savitzky-Golay derivatives, tanh network of width h, and
/// hinge training of <grad V, xdot> + rate V <= 0.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PendulumRecipe {
    pub n_train: usize,
    pub n_test: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub rate: f64,
    pub constraints_per_traj: Option<usize>,
    pub delta: f64,
    pub seed: u64,
}

impl Default for PendulumRecipe {
    fn default() -> Self {
        PendulumRecipe {
            n_train: 1000,
            n_test: 1000,
            hidden: 30,
            epochs: 1000,
            learning_rate: 1e-3,
            batch_size: 1000,
            weight_decay: 0.1,
            rate: 0.01,
            constraints_per_traj: Some(50),
            delta: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PendulumOutcome {
    pub model: Certificate,
    pub train_report: TrainReport,
    pub violations: ViolationReport,
    pub bound: BoundReport,
}

pub fn pendulum_system() -> (SystemSpec, SystemConfig, SampleRegion) {
    let cfg = SystemConfig::pendulum_default();
    let sys = make_builtin(&cfg).unwrap();
    let region = SampleRegion::centered_box(vec![2.0, 2.0]);
    (sys, cfg, region)
}

pub fn pendulum_diff() -> DiffMethod {
    DiffMethod::Savgol {
        window: 5,
        polyorder: 2,
    }
}

pub fn pendulum_train_dataset(n: usize, seed: u64) -> Result<Dataset> {
    let (sys, cfg, region) = pendulum_system();
    generate_singles(&sys, &cfg, &region, n, 8.0, 0.02, Some(pendulum_diff()), seed)
}

/// Train on fresh data and bound the violation probability on a fresh
/// test set. Test draws use an offset seed stream so train and test never
/// share initial conditions.
pub fn run_pendulum_lyapunov(recipe: &PendulumRecipe) -> Result<PendulumOutcome> {
    let train_ds = pendulum_train_dataset(recipe.n_train, recipe.seed)?;
    let test_ds = pendulum_train_dataset(recipe.n_test, recipe.seed ^ 0x7E57_5E7)?;
    let model = Certificate::NeuralLyapunov(NeuralLyapunov::new(2, recipe.hidden, recipe.seed));
    let kind = LossKind::LyapunovContinuous {
        rate: recipe.rate,
        margin: 0.0,
    };
    let tc = TrainConfig {
        epochs: recipe.epochs,
        learning_rate: recipe.learning_rate,
        batch_size: recipe.batch_size,
        weight_decay: recipe.weight_decay,
        schedule: LrSchedule::Constant,
        seed: recipe.seed,
        constraints_per_traj: recipe.constraints_per_traj,
        probe_count: 0,
    };
    let (model, train_report) = train(model, &kind, &train_ds, &tc)?;
    let violations = empirical_violation(
        &model,
        &test_ds,
        &Condition::LyapContinuous { rate: recipe.rate },
        None,
    )?;
    let bound = chernoff_report(violations.k, violations.n, recipe.delta);
    Ok(PendulumOutcome {
        model,
        train_report,
        violations,
        bound,
    })
}

/// Lie-derivative violation grid for a pendulum certificate on
/// [-2,2] x [-4,4].
pub fn pendulum_grid(model: &Certificate, rate: f64, counts: [usize; 2]) -> Result<GridReport> {
    let (sys, _, _) = pendulum_system();
    let grid = GridSpec {
        lo: vec![-2.0, -4.0],
        hi: vec![2.0, 4.0],
        counts: counts.to_vec(),
    };
    grid_violation(model, &sys, &grid, &GridCondition::Lyap { rate })
}

/// Damped Van der Pol metric recipe: paired trajectories from the radius-2
/// ball over 3 s at dt = 5e-3 with cubic-spline derivatives, a degree-4
/// polynomial metric with M >= I encouraged by probe penalties, and rate
/// lambda = 3/4.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VdpRecipe {
    pub n_train: usize,
    pub degree: usize,
    pub mu: f64,
    pub lambda: f64,
    pub constraints_per_traj: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub probe_count: usize,
    pub seed: u64,
}

impl Default for VdpRecipe {
    fn default() -> Self {
        VdpRecipe {
            n_train: 100,
            degree: 4,
            mu: 1.0,
            lambda: 0.75,
            constraints_per_traj: 50,
            epochs: 600,
            learning_rate: 5e-3,
            batch_size: 1000,
            weight_decay: 1e-4,
            probe_count: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VdpOutcome {
    pub model: Certificate,
    pub train_report: TrainReport,
    /// Metric-condition violations on the 300x300 grid over [-2,2]^2 at
    /// the tested rate eta * lambda.
    pub grid: GridReport,
}

pub fn vdp_system() -> (SystemSpec, SystemConfig, SampleRegion) {
    let cfg = SystemConfig::vdp_default();
    let sys = make_builtin(&cfg).unwrap();
    let region = SampleRegion::origin_ball(2, 2.0);
    (sys, cfg, region)
}

pub fn vdp_pairs(n: usize, seed: u64) -> Result<Dataset> {
    let (sys, cfg, region) = vdp_system();
    let pc = PairConfig {
        n,
        eps_pert: 5e-3,
        overshoot: 1e-2,
        t_final: 3.0,
        dt: 5e-3,
        seed,
        method: DiffMethod::Spline,
    };
    generate_pairs(&sys, &region, &pc, &cfg)
}

pub fn run_vdp_metric(recipe: &VdpRecipe, eta: f64, grid_counts: [usize; 2]) -> Result<VdpOutcome> {
    let train_ds = vdp_pairs(recipe.n_train, recipe.seed)?;
    let model =
        Certificate::PolynomialMetric(PolynomialMetric::identity_init(2, recipe.degree, recipe.mu));
    let kind = LossKind::Metric {
        lambda: recipe.lambda,
        mu: recipe.mu,
    };
    let tc = TrainConfig {
        epochs: recipe.epochs,
        learning_rate: recipe.learning_rate,
        batch_size: recipe.batch_size,
        weight_decay: recipe.weight_decay,
        schedule: LrSchedule::Cosine,
        seed: recipe.seed,
        constraints_per_traj: Some(recipe.constraints_per_traj),
        probe_count: recipe.probe_count,
    };
    let (model, train_report) = train(model, &kind, &train_ds, &tc)?;
    let (sys, _, _) = vdp_system();
    let grid = GridSpec {
        lo: vec![-2.0, -2.0],
        hi: vec![2.0, 2.0],
        counts: grid_counts.to_vec(),
    };
    let grid = grid_violation(
        &model,
        &sys,
        &grid,
        &GridCondition::Metric {
            eta_lambda: eta * recipe.lambda,
        },
    )?;
    Ok(VdpOutcome {
        model,
        train_report,
        grid,
    })
}

/// 6-d gradient-flow metric recipe: paired trajectories from the radius-3
/// ball over 2 s at dt = 5e-3, cubic-spline derivatives, 25 constraints
/// per trajectory, rate lambda = 4, and a factored metric with mu = 1 in
/// place of the semidefinite-programming formulation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GradflowRecipe {
    pub n_train: usize,
    pub n_test: usize,
    pub degree: usize,
    pub mu: f64,
    pub lambda: f64,
    pub constraints_per_traj: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for GradflowRecipe {
    fn default() -> Self {
        GradflowRecipe {
            n_train: 4000,
            n_test: 1000,
            degree: 2,
            mu: 1.0,
            lambda: 4.0,
            constraints_per_traj: 25,
            epochs: 300,
            learning_rate: 5e-3,
            batch_size: 1000,
            weight_decay: 1e-4,
            delta: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradflowOutcome {
    pub model: Certificate,
    pub train_report: TrainReport,
    /// Differential-Lyapunov violations on the paired test set.
    pub diff_lyap: ViolationReport,
    pub diff_lyap_bound: BoundReport,
    /// Contraction at rate 0.99 lambda along test trajectories, using the
    /// known dynamics.
    pub contraction: ViolationReport,
    pub contraction_bound: BoundReport,
    /// A-priori bound for the sampled program.
    pub rcp: BoundReport,
}

pub fn gradflow_system() -> (SystemSpec, SystemConfig, SampleRegion) {
    let cfg = SystemConfig::Gradflow6d;
    let sys = make_builtin(&cfg).unwrap();
    let region = SampleRegion::origin_ball(6, 3.0);
    (sys, cfg, region)
}

pub fn gradflow_pairs(n: usize, seed: u64) -> Result<Dataset> {
    let (sys, cfg, region) = gradflow_system();
    let pc = PairConfig {
        n,
        eps_pert: 5e-3,
        overshoot: 1e-2,
        t_final: 2.0,
        dt: 5e-3,
        seed,
        method: DiffMethod::Spline,
    };
    generate_pairs(&sys, &region, &pc, &cfg)
}

pub fn run_gradflow_metric(recipe: &GradflowRecipe) -> Result<GradflowOutcome> {
    let train_ds = gradflow_pairs(recipe.n_train, recipe.seed)?;
    let test_ds = gradflow_pairs(recipe.n_test, recipe.seed ^ 0x6EAD_F10)?;
    let model = Certificate::FactoredMetric(FactoredMetric::scaled_identity_init(
        6,
        recipe.degree,
        recipe.mu,
        1.0,
    ));
    let kind = LossKind::Metric {
        lambda: recipe.lambda,
        mu: recipe.mu,
    };
    let tc = TrainConfig {
        epochs: recipe.epochs,
        learning_rate: recipe.learning_rate,
        batch_size: recipe.batch_size,
        weight_decay: recipe.weight_decay,
        schedule: LrSchedule::Cosine,
        seed: recipe.seed,
        constraints_per_traj: Some(recipe.constraints_per_traj),
        probe_count: 0,
    };
    let (model, train_report) = train(model, &kind, &train_ds, &tc)?;

    let diff_lyap = empirical_violation(
        &model,
        &test_ds,
        &Condition::MetricDiffLyap {
            lambda: recipe.lambda,
        },
        None,
    )?;
    let diff_lyap_bound = chernoff_report(diff_lyap.k, diff_lyap.n, recipe.delta);
    let (sys, _, _) = gradflow_system();
    let contraction = empirical_violation(
        &model,
        &test_ds,
        &Condition::ContractionRate {
            eta_lambda: 0.99 * recipe.lambda,
        },
        Some(&sys),
    )?;
    let contraction_bound = chernoff_report(contraction.k, contraction.n, recipe.delta);
    let decision_dim = match &model {
        Certificate::FactoredMetric(m) => m.decision_dim(),
        _ => unreachable!(),
    };
    // The factored parameterization is not linear in its parameters, so
    // the RCP convexity premise fails; the report carries that flag.
    let rcp = rcp_report(
        recipe.n_train * recipe.constraints_per_traj,
        decision_dim,
        recipe.delta,
        false,
    );
    Ok(GradflowOutcome {
        model,
        train_report,
        diff_lyap,
        diff_lyap_bound,
        contraction,
        contraction_bound,
        rcp,
    })
}
