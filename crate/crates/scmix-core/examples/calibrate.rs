//! Scratch harness: per-method mIoU over seeds, student vs teacher.

use scmix_core::synth::{make_compound_benchmark, BenchmarkConfig};
use scmix_core::trainer::{evaluate_miou, train, Method, TrainConfig};

fn main() {
    let cfg = BenchmarkConfig::default_desk();
    let bench = make_compound_benchmark(&cfg).unwrap();
    let seeds = [1u64, 2, 3, 4, 5, 6, 7, 8];
    let methods = [Method::ClassmixSt, Method::ScmixSt];
    let start = std::time::Instant::now();
    for method in methods {
        let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
        for &seed in &seeds {
            let mut tc = TrainConfig::default_desk();
            tc.seed = seed;
            tc.method = method;
            tc.eval_every = 0;
            let out = train(&tc, &bench).unwrap();
            let comp_s = evaluate_miou(&out.student, &bench.compound_eval_samples()).unwrap().mean;
            let open_s = evaluate_miou(&out.student, &bench.open.iter().collect::<Vec<_>>())
                .unwrap()
                .mean;
            let comp_t = evaluate_miou(&out.teacher, &bench.compound_eval_samples()).unwrap().mean;
            let open_t = evaluate_miou(&out.teacher, &bench.open.iter().collect::<Vec<_>>())
                .unwrap()
                .mean;
            rows.push((comp_s, open_s, comp_t, open_t));
        }
        let mean = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        };
        println!(
            "{:12} student: comp {:.4} open {:.4} | teacher: comp {:.4} open {:.4}",
            method.name(),
            mean(&|r| r.0),
            mean(&|r| r.1),
            mean(&|r| r.2),
            mean(&|r| r.3),
        );
        println!(
            "   student per-seed comp {:?} open {:?}",
            rows.iter().map(|r| (r.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            rows.iter().map(|r| (r.1 * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        );
    }
    println!("elapsed: {:.1?}", start.elapsed());
}
