use kbd::bench::{run_benchmark, BenchConfig, Variant};

fn main() {
    let mut config = BenchConfig::parse("").unwrap();
    config.seed = 42;
    config.bench.seeds = 1;
    config.scenario.campaigns = 4;
    config.scenario.train_days = 6;
    config.scenario.eval_days = 2;
    config.scenario.impressions_per_day = 400;
    config.macro_train.epochs = 120;
    config.micro.epochs = 15;
    let t0 = std::time::Instant::now();
    let report = run_benchmark(&config, &Variant::ALL).unwrap();
    println!("total time {:?}", t0.elapsed());
    for row in &report.macro_table {
        println!("macro {}: wmape={:.4} mape={:.4} perf10={:.3}", row.variant, row.mean_wmape, row.mean_mape, row.mean_perf10);
    }
    for row in &report.control_table {
        let m = &row.mean;
        println!("control {}: R/R*={:.4} cs={:.3} exhaust={:.3} gmv={:.2} approx={}", row.variant, m.r_over_rstar, m.constraint_satisfaction, m.cost_exhaust, m.mean_day_gmv, m.oracle_approx);
    }
    for p in &report.paired {
        println!("paired: {} {}/{}", p.label, p.wins, p.total);
    }
    for w in report.warnings.iter().take(5) {
        println!("warn: {w}");
    }
}
