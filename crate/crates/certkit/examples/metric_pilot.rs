use certkit::experiments::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).cloned().unwrap_or_else(|| "vdp".into());
    match which.as_str() {
        "vdp" => {
            let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(100);
            let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(600);
            let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);
            let wd: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-4);
            let lr: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
            let recipe = VdpRecipe { n_train: n, epochs, seed, weight_decay: wd, learning_rate: lr, ..VdpRecipe::default() };
            let t0 = Instant::now();
            let out = run_vdp_metric(&recipe, 1.0, [300, 300]).unwrap();
            println!(
                "vdp n={n} e={epochs} s={seed}: grid fraction {:.4}, hinge pos {}/{}, final loss {:.4} ({:.1}s)",
                out.grid.fraction(),
                out.train_report.positive_residuals,
                out.train_report.constraint_points,
                out.train_report.final_loss,
                t0.elapsed().as_secs_f64()
            );
        }
        "gradflow" => {
            let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4000);
            let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(300);
            let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);
            let recipe = GradflowRecipe { n_train: n, epochs, seed, ..GradflowRecipe::default() };
            let t0 = Instant::now();
            let out = run_gradflow_metric(&recipe).unwrap();
            println!(
                "gradflow n={n} e={epochs} s={seed}: diff-lyap k={}/{} UCB {:.4}; contraction k={}/{} UCB {:.4}; rcp eps {:.4}; hinge pos {}/{} ({:.1}s)",
                out.diff_lyap.k, out.diff_lyap.n, out.diff_lyap_bound.epsilon,
                out.contraction.k, out.contraction.n, out.contraction_bound.epsilon,
                out.rcp.epsilon,
                out.train_report.positive_residuals, out.train_report.constraint_points,
                t0.elapsed().as_secs_f64()
            );
        }
        other => panic!("unknown pilot {other}"),
    }
}
