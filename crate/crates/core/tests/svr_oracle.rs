mod support;

use mikani_core::svr::{kernel_value, train_with_report, Gamma, SvrConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::qp_oracle::Qp;

#[test]
fn smo_matches_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.random_range(2..=10);
        let d = rng.random_range(1..=3);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> =
            (0..n).map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let cfg = SvrConfig { gamma: Gamma::Value(0.5), tolerance: 1e-6, ..SvrConfig::default() };
        let (model, report) = train_with_report(&rows, &targets, &cfg).unwrap();
        let kernel: Vec<Vec<f64>> =
            rows.iter().map(|a| rows.iter().map(|b| kernel_value(cfg.kernel, model.gamma, a, b)).collect()).collect();
        let qp = Qp::epsilon_svr(&kernel, &targets, cfg.epsilon, &report.bounds);
        let oracle = qp.objective(&qp.solve(200_000));
        let diff = (report.objective - oracle).abs();
        worst = worst.max(diff);
        assert!(diff <= 1e-3, "case {case}: smo {} vs oracle {oracle}", report.objective);
        for (t, b) in report.beta.iter().enumerate() {
            assert!(*b >= 0.0 && *b <= report.bounds[t % n] + 1e-9);
        }
    }
    eprintln!("largest objective difference {worst:.3e}");
}
