use kbd::auction::Strategy;
use kbd::ieformer::{train_macro, DayRecord, MacroTrainConfig};

fn frac(x: f64) -> f64 { x - x.floor() }

fn concave_records(campaigns: u64, days: u32) -> Vec<DayRecord> {
    let mut out = Vec::new();
    for c in 0..campaigns {
        let base = 20.0 + 6.0 * c as f64;
        for d in 1..=days {
            let u = frac(0.6180339887498949 * (d as f64 + 5.0 * c as f64));
            let cost = 40.0 + 900.0 * u * u;
            let tcpa = base * (cost / 100.0).sqrt() + 5.0;
            out.push(DayRecord {
                campaign_id: c, day: d, strategy: Strategy::TCpa,
                target_value: tcpa, cost, gmv: cost * 1.8, avg_pcvr: 0.04, listed_price: 90.0,
            });
        }
    }
    out
}

fn main() {
    let records = concave_records(6, 24);
    for seed in 0..12u64 {
        let (label, batch, epochs, lr) = ("small e150", 16usize, 150usize, 0.01f64);
        let config = MacroTrainConfig {
            epochs, lr, batch_size: batch, dim: 16, segments: 10, seed,
            ..MacroTrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let (model, report) = train_macro(&records, &config).unwrap();
        println!(
            "{label} s{seed}: mape={:.4} wmape={:.4} loss_tail={:.5} time={:?}",
            report.heldout.mape, report.heldout.wmape,
            report.epoch_losses.last().unwrap(), t0.elapsed()
        );
        // Per-campaign heldout inspection
        if false {
            use kbd::ieformer::{build_samples, data::split_last_day};
            let (samples, _) = build_samples(&records, 28, true);
            let (_, heldout) = split_last_day(samples);
            for s in &heldout {
                let p = model.predict_tcpa(&s.history, s.cost).unwrap();
                println!("  c{} cost={:.0} target={:.2} pred={:.2} rel={:.3}",
                    s.campaign_id, s.cost, s.target_tcpa, p, (p - s.target_tcpa).abs() / s.target_tcpa);
            }
        }
    }
}
