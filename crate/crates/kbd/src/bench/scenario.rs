//! Seeded synthetic scenario: campaign roster, impression streams, and the
//! noisy-concave day-record corpus for the macro stage.

use super::config::ScenarioConfig;
use super::BenchError;
use crate::auction::{Impression, Strategy};
use crate::ieformer::DayRecord;
use crate::seed::stream_rng;
use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal};

/// Static campaign description derived deterministically from the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct CampaignSpec {
    pub id: u64,
    pub strategy: Strategy,
    pub budget: f64,
    /// Raw goal value in the strategy's own unit (tCPA, tROI, or tCPC).
    pub target_value: f64,
    /// tCPA-equivalent of the goal (the constraint target).
    pub effective_target: f64,
    pub listed_price: f64,
    pub avg_pcvr: f64,
    /// Per-campaign payment-scale multiplier.
    pub quality: f64,
}

/// Stream tags for the RNG streams of this module.
const TAG_CAMPAIGN: u64 = 0x6361;
const TAG_IMPRESSIONS: u64 = 0x696d;
const TAG_CURVE: u64 = 0x6376;

pub fn campaign_specs(config: &ScenarioConfig, seed: u64) -> Vec<CampaignSpec> {
    let n = config.campaigns;
    let mut out = Vec::with_capacity(n as usize);
    for c in 0..n {
        let mut rng = stream_rng(seed, &[TAG_CAMPAIGN, c]);
        let u = if n == 1 { 0.5 } else { c as f64 / (n - 1) as f64 };
        let budget = config.budget_min + (config.budget_max - config.budget_min) * u
            + rng.gen_range(-0.02..0.02) * config.budget_min;
        // The advertiser's goal sits on the campaign's own price-volume
        // curve at its budget point, so the macro anchor and the constraint
        // target share one scale.
        let effective_target = curve_ground_truth(config, seed, c, budget)
            .clamp(config.target_min, config.target_max);
        let quality = rng.gen_range(0.85..1.2);
        let avg_pcvr = config.pcvr.alpha / (config.pcvr.alpha + config.pcvr.beta);
        let listed_price = config.ppay.ln_mean.exp() * quality;
        // Strategy mix: the first slice runs tROI, the next tCPC, the rest
        // run native tCPA.
        let frac = (c as f64 + 0.5) / n as f64;
        let (strategy, target_value) = if frac < config.curve.troi_fraction {
            (Strategy::TRoi, listed_price / effective_target)
        } else if frac < config.curve.troi_fraction + config.curve.tcpc_fraction {
            (Strategy::TCpc, effective_target * avg_pcvr)
        } else {
            (Strategy::TCpa, effective_target)
        };
        out.push(CampaignSpec {
            id: c,
            strategy,
            budget,
            target_value,
            effective_target,
            listed_price,
            avg_pcvr,
            quality,
        });
    }
    out
}

/// Deterministic impression stream for one campaign-day. Shift days apply the
/// configured winning-price and volume multipliers.
pub fn synth_impressions(
    config: &ScenarioConfig,
    seed: u64,
    campaign: u64,
    day: u32,
) -> Result<Vec<Impression>, BenchError> {
    config.validate()?;
    let specs = campaign_specs(config, seed);
    let spec = specs
        .get(campaign as usize)
        .ok_or_else(|| BenchError::Invalid(format!("campaign {campaign} out of range")))?;
    let mut rng = stream_rng(seed, &[TAG_IMPRESSIONS, campaign, day as u64]);
    let shifted = config.is_shift_day(day);
    let wp_mult = if shifted { config.shift_wp_mult } else { 1.0 };
    let vol_mult = if shifted { config.shift_volume_mult } else { 1.0 };

    let pctr = Beta::new(config.pctr.alpha, config.pctr.beta)
        .map_err(|e| BenchError::Invalid(format!("pctr: {e}")))?;
    let pcvr = Beta::new(config.pcvr.alpha, config.pcvr.beta)
        .map_err(|e| BenchError::Invalid(format!("pcvr: {e}")))?;
    let ppay = LogNormal::new(config.ppay.ln_mean, config.ppay.ln_sigma)
        .map_err(|e| BenchError::Invalid(format!("ppay: {e}")))?;
    let wp_noise = Normal::new(0.0, 1.0).expect("unit normal");

    let volume = config.normalized_volume();
    let mut out = Vec::new();
    let mut id = (campaign as u64) << 40 | (day as u64) << 20;
    for (hour, weight) in volume.iter().enumerate() {
        let count = (config.impressions_per_day as f64 * weight * vol_mult).round() as u64;
        for _ in 0..count {
            let ctr = pctr.sample(&mut rng).clamp(1e-6, 1.0 - 1e-6);
            let cvr = pcvr.sample(&mut rng).clamp(1e-6, 1.0 - 1e-6);
            let pay = ppay.sample(&mut rng).max(1e-3) * spec.quality;
            let value = ctr * cvr * pay;
            // Mean wp proportional to value: E[exp(sz - s^2/2)] = 1.
            let z: f64 = wp_noise.sample(&mut rng);
            let wp = (config.wp.factor * value * wp_mult
                * (config.wp.sigma * z - 0.5 * config.wp.sigma * config.wp.sigma).exp())
            .max(1e-6);
            id += 1;
            out.push(
                Impression::new(id, hour as u8, ctr, cvr, pay, wp)
                    .map_err(|e| BenchError::Invalid(e.to_string()))?,
            );
        }
    }
    Ok(out)
}

/// Noisy observations of per-campaign concave price-volume ground truth:
/// tcpa(cost) = base (cost/100)^exponent + floor, with skewed cost draws and
/// relative noise. Targets are written in each campaign's own goal unit.
pub fn synth_day_records(config: &ScenarioConfig, seed: u64) -> Result<Vec<DayRecord>, BenchError> {
    config.validate()?;
    let specs = campaign_specs(config, seed);
    let curve = &config.curve;
    let noise_dist = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::new();
    for spec in &specs {
        let mut rng = stream_rng(seed, &[TAG_CURVE, spec.id]);
        let base = curve.base_min + (curve.base_max - curve.base_min) * rng.gen_range(0.0..1.0);
        let day_count = match spec.strategy {
            Strategy::TCpa if curve.native_days > 0 => curve.native_days.min(curve.days),
            _ => curve.days,
        };
        for day in 1..=day_count {
            let u: f64 = rng.gen_range(0.0..1.0);
            let cost = curve.cost_min + curve.cost_span * u * u;
            let truth = base * (cost / 100.0).powf(curve.exponent) + curve.floor;
            let z: f64 = noise_dist.sample(&mut rng);
            let tcpa = (truth * (1.0 + curve.noise * z)).max(0.05 * truth);
            let target_value = match spec.strategy {
                Strategy::TCpa => tcpa,
                Strategy::TRoi => spec.listed_price / tcpa,
                Strategy::TCpc => tcpa * spec.avg_pcvr,
            };
            out.push(DayRecord {
                campaign_id: spec.id,
                day,
                strategy: spec.strategy,
                target_value,
                cost,
                gmv: cost * (1.2 + 0.8 * u),
                avg_pcvr: spec.avg_pcvr,
                listed_price: spec.listed_price,
            });
        }
    }
    Ok(out)
}

/// True (noise-free) curve value for a campaign, for oracle checks.
pub fn curve_ground_truth(config: &ScenarioConfig, seed: u64, campaign: u64, cost: f64) -> f64 {
    let curve = &config.curve;
    let mut rng = stream_rng(seed, &[TAG_CURVE, campaign]);
    let base = curve.base_min + (curve.base_max - curve.base_min) * rng.gen_range(0.0..1.0);
    base * (cost / 100.0).powf(curve.exponent) + curve.floor
}
