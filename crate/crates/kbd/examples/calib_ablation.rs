use kbd::bench::{run_benchmark, BenchConfig, Variant};

fn run(label: &str, campaigns: u64, days: u32, native: u32, noise: f64, epochs: usize, seeds: u64) {
    let mut config = BenchConfig::parse("").unwrap();
    config.seed = 1000;
    config.bench.seeds = seeds;
    config.scenario.campaigns = campaigns;
    config.scenario.curve.days = days;
    config.scenario.curve.native_days = native;
    config.scenario.curve.noise = noise;
    config.scenario.curve.troi_fraction = 0.3;
    config.scenario.curve.tcpc_fraction = 0.3;
    config.macro_train.epochs = epochs;
    config.macro_train.max_history = 10;
    let variants = [Variant::Kbd, Variant::NoIe, Variant::NoGla, Variant::NoMargin, Variant::NoAug];
    let t0 = std::time::Instant::now();
    let report = run_benchmark(&config, &variants).unwrap();
    print!("{label}: ");
    for p in &report.paired {
        let short = p.label.replace("kbd beats ", "").replace(" on wmape", "");
        print!("{short}={}/{} ", p.wins, p.total);
    }
    println!("({:?})", t0.elapsed());
    for row in &report.macro_table {
        print!("  {}={:.4}", row.variant, row.mean_wmape);
    }
    println!();
}

fn main() {
    run("c10 d26 nat6 n0.2 e200 1seed", 10, 26, 6, 0.2, 200, 1);
}
