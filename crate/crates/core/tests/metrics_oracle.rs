//! Error indices recomputed straight from the CSV text, without the
//! library's parsers or metric code.

use teleop_core::metrics::trace_error_index;
use teleop_core::sim::{run_scenario, ScenarioConfig};
use teleop_core::trace_io::write_states;
use teleop_core::transport::TransportKind;

fn brute_force(csv: &str) -> (f64, f64) {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let mut sq = [[0.0f64; 7]; 2];
    let mut n = 0.0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        for j in 0..7 {
            let e = f[col(&format!("q_l_{j}"))] - f[col(&format!("q_f_{j}"))];
            let ed = f[col(&format!("qd_l_{j}"))] - f[col(&format!("qd_f_{j}"))];
            sq[0][j] += e * e;
            sq[1][j] += ed * ed;
        }
        n += 1.0;
    }
    let eps = |s: &[f64; 7]| s.iter().map(|v| (v / n).sqrt()).sum::<f64>();
    (eps(&sq[0]), eps(&sq[1]))
}

#[test]
fn epsilon_matches_brute_force_from_csv() {
    for seed in 0..6u64 {
        let kind = TransportKind::ALL[seed as usize % 3];
        let trace = run_scenario(&ScenarioConfig::new(kind, 3_000_000, 100 + seed)).unwrap();
        let idx = trace_error_index(&trace).unwrap();
        let mut buf = Vec::new();
        write_states(&mut buf, &trace.ticks).unwrap();
        let (eps, eps_dot) = brute_force(std::str::from_utf8(&buf).unwrap());
        assert!((idx.epsilon - eps).abs() <= 1e-12 * eps, "{} vs {eps}", idx.epsilon);
        assert!((idx.epsilon_dot - eps_dot).abs() <= 1e-12 * eps_dot);
    }
}
