//! Scratch: EMA horizon scan on the fixed acceptance seeds.

use scmix_core::synth::{make_compound_benchmark, BenchmarkConfig};
use scmix_core::trainer::{evaluate_miou, train, Method, TrainConfig};

fn main() {
    let cfg = BenchmarkConfig::default_desk();
    let bench = make_compound_benchmark(&cfg).unwrap();
    let seeds = [1u64, 2, 3, 4, 5];
    for &momentum in &[0.999f64, 0.997, 0.995, 0.99] {
        let mut by_method = Vec::new();
        for method in [Method::SourceOnly, Method::ClassmixSt, Method::ScmixSt] {
            let mut comp = Vec::new();
            let mut open = Vec::new();
            for &seed in &seeds {
                let mut tc = TrainConfig::default_desk();
                tc.seed = seed;
                tc.method = method;
                tc.momentum = momentum;
                tc.eval_every = 0;
                let out = train(&tc, &bench).unwrap();
                comp.push(
                    evaluate_miou(&out.student, &bench.compound_eval_samples())
                        .unwrap()
                        .mean,
                );
                open.push(
                    evaluate_miou(&out.student, &bench.open.iter().collect::<Vec<_>>())
                        .unwrap()
                        .mean,
                );
            }
            by_method.push((method, comp, open));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        for (method, comp, open) in &by_method {
            println!(
                "m={:6} {:12} comp {:.4} open {:.4}  comp/seed {:?}",
                momentum,
                method.name(),
                mean(comp),
                mean(open),
                comp.iter().map(|v| (v * 1000.0).round()).collect::<Vec<_>>()
            );
        }
        let (_, cm_c, cm_o) = &by_method[1];
        let (_, sc_c, sc_o) = &by_method[2];
        let wins_c = cm_c.iter().zip(sc_c).filter(|(c, s)| s > c).count();
        let wins_o = cm_o.iter().zip(sc_o).filter(|(c, s)| s > c).count();
        println!(
            "   scmix-classmix: comp {:+.4} ({}/5 seeds), open {:+.4} ({}/5 seeds)",
            mean(sc_c) - mean(cm_c),
            wins_c,
            mean(sc_o) - mean(cm_o),
            wins_o
        );
    }
}
