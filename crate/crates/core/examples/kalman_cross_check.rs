//! Filters a linear drift model, where the exact posterior is Gaussian, and
//! compares the particle estimates with a Kalman filter run on the same
//! discretisation.

use odedbn::{run_fixed, EvidenceMode, EvidenceSet, EvidenceStream, InferenceConfig, ModelFile};

const DRIFT: &str = "model drift\nnatural_step 0.1\nstate X = 0 ~ sigma 0.5\n\
    param theta ~ gauss(1, 0.5) transition 0.05\ndX/dt = theta\nobserve X sigma 0.2\n";

fn main() {
    let (h, q, r) = (0.1, 0.05, 0.2);
    let m = ModelFile::parse(DRIFT).unwrap().model;
    let obs: Vec<(f64, f64)> = (1..=10).map(|k| k as f64 * 0.5).map(|t| (t, 1.5 * t)).collect();
    let evidence = EvidenceSet::new().with(EvidenceStream::new("X", EvidenceMode::Instantaneous, obs.clone()).unwrap());
    let summaries = run_fixed(&m, &InferenceConfig::fixed(h, 100_000, 0.0, 5.0, 0), &evidence).unwrap();

    let (mut mean, mut p) = ([0.0, 1.0], [[0.25, 0.0], [0.0, 0.25]]);
    println!("{:>4} {:>9} {:>9} {:>9} {:>9}", "t", "pf theta", "kf theta", "pf sd", "kf sd");
    for s in &summaries[1..] {
        mean = [mean[0] + h * mean[1], mean[1]];
        let a = p[0][0] + 2.0 * h * p[0][1] + h * h * p[1][1] + q * q * h * h;
        let b = p[0][1] + h * p[1][1] + q * q * h;
        let d = p[1][1] + q * q;
        p = [[a, b], [b, d]];
        if let Some(&(_, y)) = obs.iter().find(|o| (o.0 - s.time).abs() < 1e-9) {
            let gain = [p[0][0] / (p[0][0] + r * r), p[1][0] / (p[0][0] + r * r)];
            let innov = y - mean[0];
            mean = [mean[0] + gain[0] * innov, mean[1] + gain[1] * innov];
            p = [
                [(1.0 - gain[0]) * p[0][0], (1.0 - gain[0]) * p[0][1]],
                [p[1][0] - gain[1] * p[0][0], p[1][1] - gain[1] * p[0][1]],
            ];
            println!(
                "{:>4.1} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                s.time,
                s.param_mean[0],
                mean[1],
                s.param_std[0],
                p[1][1].sqrt()
            );
        }
    }
}
