use certkit::models::{NeuralLyapunov, ScalarCertificate, FactoredMetric, MetricCertificate};
use std::time::Instant;

fn main() {
    let m = NeuralLyapunov::new(2, 30, 0);
    let x = [0.7, -1.1];
    let d = [0.4, 0.9];
    let mut grad = vec![0.0; m.params().len()];
    let n = 1_000_000usize;
    // active hinge (r > 0): forward + backward fused
    let t0 = Instant::now();
    let mut racc = 0.0;
    for _ in 0..n {
        racc += m.lyap_hinge_accumulate(&x, &d, 1e9, 1e9, 1.0, &mut grad);
    }
    println!("neural fused active: {:.0} ns/call", t0.elapsed().as_secs_f64() / n as f64 * 1e9);
    // inactive hinge: forward only
    let t0 = Instant::now();
    for _ in 0..n {
        racc += m.lyap_hinge_accumulate(&x, &d, -1e9, -1e9, 1.0, &mut grad);
    }
    println!("neural fused inactive: {:.0} ns/call ({racc:.0})", t0.elapsed().as_secs_f64() / n as f64 * 1e9);

    let fm = FactoredMetric::scaled_identity_init(6, 2, 1.0, 1.0);
    let x6 = [0.5, -0.3, 0.8, 0.1, -0.9, 0.2];
    let xd6 = [0.1; 6];
    let dx6 = [0.02; 6];
    let dxd6 = [0.01; 6];
    let mut g6 = vec![0.0; fm.params().len()];
    let n2 = 500_000usize;
    let t0 = Instant::now();
    let mut r2 = 0.0;
    for _ in 0..n2 {
        r2 += fm.metric_hinge_accumulate(&x6, &xd6, &dx6, &dxd6, 1e9, 1.0, &mut g6);
    }
    println!("factored fused active: {:.0} ns/call ({r2:.0})", t0.elapsed().as_secs_f64() / n2 as f64 * 1e9);
}
