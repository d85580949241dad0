use certkit::datagen::{generate_singles, DiffMethod, SampleRegion};
use certkit::dynamics::{make_builtin, SystemConfig};
use certkit::globalcert::{grid_violation, GridCondition, GridSpec};
use certkit::models::{Certificate, NeuralLyapunov};
use certkit::statbounds::{chernoff_ucb, empirical_violation, Condition};
use certkit::training::{train, LossKind, LrSchedule, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let cpt: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1000);
    let n_train: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1000);

    let cfg_sys = SystemConfig::pendulum_default();
    let sys = make_builtin(&cfg_sys).unwrap();
    let region = SampleRegion::centered_box(vec![2.0, 2.0]);
    let savgol = DiffMethod::Savgol { window: 5, polyorder: 2 };

    let t0 = Instant::now();
    let train_ds = generate_singles(&sys, &cfg_sys, &region, n_train, 8.0, 0.02, Some(savgol), seed).unwrap();
    let test_ds = generate_singles(&sys, &cfg_sys, &region, 1000, 8.0, 0.02, Some(savgol), seed + 10_000).unwrap();
    println!("datasets: {:.1}s", t0.elapsed().as_secs_f64());

    let model = Certificate::NeuralLyapunov(NeuralLyapunov::new(2, 30, seed));
    let kind = LossKind::LyapunovContinuous { rate: 0.01, margin: 0.0 };
    let tc = TrainConfig {
        epochs,
        learning_rate: 1e-3,
        batch_size: 1000,
        weight_decay: 0.1,
        schedule: LrSchedule::Constant,
        seed,
        constraints_per_traj: Some(cpt),
        probe_count: 0,
    };
    let t0 = Instant::now();
    let (model, report) = train(model, &kind, &train_ds, &tc).unwrap();
    println!(
        "train: {:.1}s, final loss {:.4}, positive residuals {}/{}",
        t0.elapsed().as_secs_f64(),
        report.final_loss,
        report.positive_residuals,
        report.constraint_points
    );

    let t0 = Instant::now();
    let v = empirical_violation(&model, &test_ds, &Condition::LyapContinuous { rate: 0.01 }, None).unwrap();
    let ucb = chernoff_ucb(v.k, v.n, 0.01);
    println!("test violations k={}/{} rate {:.4} UCB {:.4} ({:.1}s)", v.k, v.n, v.rate(), ucb, t0.elapsed().as_secs_f64());

    let grid = GridSpec { lo: vec![-2.0, -4.0], hi: vec![2.0, 4.0], counts: vec![200, 200] };
    let t0 = Instant::now();
    let g = grid_violation(&model, &sys, &grid, &GridCondition::Lyap { rate: 0.01 }).unwrap();
    println!("grid violation fraction {:.4} ({:.1}s)", g.fraction(), t0.elapsed().as_secs_f64());
}
