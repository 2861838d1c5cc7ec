//! Ablation runner: trains the required components per variant on the
//! scenario's training days and evaluates on held-out days.

use super::config::{BenchConfig, Objective};
use super::metrics::{constraint_satisfaction, ConstraintCheck, RegressionMetrics};
use super::oracle::oracle_value;
use super::scenario::{campaign_specs, synth_day_records, synth_impressions, CampaignSpec};
use super::BenchError;
use crate::auction::realized_cpa;
use crate::ieformer::data::record_target;
use crate::ieformer::{train_macro, DayRecord, HistoryDay, MacroTrainConfig, PriceVolumeModel};
use crate::micro::{control_day, train_micro, ControlConfig, DayInput, DtModel, PidGains, PolicyMode, Trajectory};
use crate::seed::mix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Benchmark variants: the full method, the two control-stage ablations, and
/// the four macro knowledge ablations.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Kbd,
    NoDt,
    NoPid,
    NoIe,
    NoGla,
    NoMargin,
    NoAug,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Kbd,
        Variant::NoDt,
        Variant::NoPid,
        Variant::NoIe,
        Variant::NoGla,
        Variant::NoMargin,
        Variant::NoAug,
    ];

    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "kbd" => Some(Variant::Kbd),
            "no-dt" | "kbd-no-dt" => Some(Variant::NoDt),
            "no-pid" | "kbd-no-pid" => Some(Variant::NoPid),
            "no-ie" => Some(Variant::NoIe),
            "no-gla" => Some(Variant::NoGla),
            "no-margin" => Some(Variant::NoMargin),
            "no-aug" => Some(Variant::NoAug),
            _ => None,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Variant::Kbd => "kbd",
            Variant::NoDt => "no-dt",
            Variant::NoPid => "no-pid",
            Variant::NoIe => "no-ie",
            Variant::NoGla => "no-gla",
            Variant::NoMargin => "no-margin",
            Variant::NoAug => "no-aug",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Variant::Kbd => "KBD",
            Variant::NoDt => "KBD w/o DT",
            Variant::NoPid => "KBD w/o PID",
            Variant::NoIe => "w/o IE",
            Variant::NoGla => "w/o GLA",
            Variant::NoMargin => "w/o L_margin",
            Variant::NoAug => "w/o augmented data",
        }
    }

    /// Control-stage rows (Table-1-style): mode wiring per variant.
    pub fn control_mode(&self) -> Option<PolicyMode> {
        match self {
            Variant::Kbd => Some(PolicyMode::Fused),
            Variant::NoDt => Some(PolicyMode::Pid),
            Variant::NoPid => Some(PolicyMode::Dt),
            _ => None,
        }
    }

    /// Macro-stage rows (Table-3-style).
    pub fn is_macro_variant(&self) -> bool {
        matches!(
            self,
            Variant::Kbd | Variant::NoIe | Variant::NoGla | Variant::NoMargin | Variant::NoAug
        )
    }

    fn apply_macro_toggles(&self, config: &mut MacroTrainConfig) {
        match self {
            Variant::NoIe => config.use_isotonic = false,
            Variant::NoGla => config.use_gla = false,
            Variant::NoMargin => config.alpha_margin = 0.0,
            Variant::NoAug => config.use_augmented = false,
            _ => {}
        }
    }
}

/// Auction-side metrics of one (variant, seed) evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlMetrics {
    /// Credited value over hindsight-oracle value, summed over campaign-days.
    pub r_over_rstar: f64,
    /// True when any oracle instance fell back to the greedy approximation.
    pub oracle_approx: bool,
    pub constraint_satisfaction: f64,
    /// Mean fraction of budget spent.
    pub cost_exhaust: f64,
    pub mean_day_gmv: f64,
    pub campaign_days: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MacroVariantReport {
    pub variant: String,
    pub display_name: String,
    pub per_seed: Vec<RegressionMetrics>,
    pub mean_wmape: f64,
    pub mean_mape: f64,
    pub mean_perf10: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlVariantReport {
    pub variant: String,
    pub display_name: String,
    pub per_seed: Vec<ControlMetrics>,
    pub mean: ControlMetrics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairedComparison {
    pub label: String,
    pub wins: u64,
    pub total: u64,
}

/// Machine-readable benchmark report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub base_seed: u64,
    pub seeds: u64,
    pub objective: String,
    pub oracle_exact_limit: usize,
    pub macro_table: Vec<MacroVariantReport>,
    pub control_table: Vec<ControlVariantReport>,
    pub paired: Vec<PairedComparison>,
    pub warnings: Vec<String>,
}

/// Everything trained and measured for one replicate seed.
struct SeedOutcome {
    macro_metrics: BTreeMap<Variant, RegressionMetrics>,
    control_metrics: BTreeMap<Variant, ControlMetrics>,
    warnings: Vec<String>,
}

fn campaign_history(records: &[DayRecord], campaign_id: u64) -> Vec<HistoryDay> {
    let mut days: Vec<&DayRecord> = records.iter().filter(|r| r.campaign_id == campaign_id).collect();
    days.sort_by_key(|r| r.day);
    days.iter()
        .filter_map(|r| {
            record_target(r).ok().map(|t| HistoryDay {
                cost: r.cost,
                tcpa: t.tcpa,
                strategy: r.strategy,
            })
        })
        .collect()
}

fn train_macro_variant(
    records: &[DayRecord],
    config: &BenchConfig,
    variant: Variant,
    seed: u64,
) -> Result<(PriceVolumeModel, RegressionMetrics, Vec<String>), BenchError> {
    let mut train_config = config.macro_train.to_train_config(seed);
    variant.apply_macro_toggles(&mut train_config);
    let (model, report) = train_macro(records, &train_config)
        .map_err(|e| BenchError::Invalid(format!("macro training ({}): {e}", variant.id())))?;
    let mut warnings = report.warnings;
    if report.diverged {
        warnings.push(format!("macro training diverged for {}", variant.id()));
    }
    Ok((model, report.heldout, warnings))
}

struct ControlContext {
    specs: Vec<CampaignSpec>,
    gains: PidGains,
    c_ma: Vec<f64>,
    gmv_refs: Vec<f64>,
    dt: DtModel,
}

fn prepare_control(
    config: &BenchConfig,
    records: &[DayRecord],
    full_macro: &PriceVolumeModel,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<ControlContext, BenchError> {
    let scenario = &config.scenario;
    let specs = campaign_specs(scenario, seed);
    let gains = PidGains::from_volume_curve(config.bench.k_p, config.bench.k_i, &scenario.normalized_volume())
        .map_err(|e| BenchError::Invalid(e.to_string()))?;

    let mut c_ma = Vec::with_capacity(specs.len());
    for spec in &specs {
        let history = campaign_history(records, spec.id);
        let anchor = full_macro
            .base_target(&history, spec.budget)
            .map_err(|e| BenchError::Invalid(e.to_string()))?;
        c_ma.push(anchor);
    }

    // First pass: clean pacing rollouts fix the GMV references.
    let mut gmv_refs = Vec::with_capacity(specs.len());
    let pid_only = ControlConfig::new(PolicyMode::Pid);
    for spec in &specs {
        let mut day_gmvs = Vec::new();
        for day in 0..scenario.train_days {
            let imps = synth_impressions(scenario, seed, spec.id, day)?;
            let input = DayInput {
                impressions: &imps,
                budget: spec.budget,
                nominal_target: spec.effective_target,
                strategy: spec.strategy,
                c_ma: c_ma[spec.id as usize],
                gmv_ref: 1.0,
            };
            let result = control_day(None, &gains, &input, &pid_only)
                .map_err(|e| BenchError::Invalid(e.to_string()))?;
            day_gmvs.push(result.state.gmv);
        }
        let window = day_gmvs.len().min(7);
        let tail = &day_gmvs[day_gmvs.len() - window..];
        let mean = tail.iter().sum::<f64>() / window.max(1) as f64;
        if mean <= 0.0 {
            warnings.push(format!("campaign {}: zero training GMV, reference floored", spec.id));
        }
        gmv_refs.push(mean.max(1.0));
    }

    // Second pass: offline behavior data (clean + exploratory pacing runs).
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for spec in &specs {
        for day in 0..scenario.train_days {
            let imps = synth_impressions(scenario, seed, spec.id, day)?;
            let input = DayInput {
                impressions: &imps,
                budget: spec.budget,
                nominal_target: spec.effective_target,
                strategy: spec.strategy,
                c_ma: c_ma[spec.id as usize],
                gmv_ref: gmv_refs[spec.id as usize],
            };
            let clean = control_day(None, &gains, &input, &pid_only)
                .map_err(|e| BenchError::Invalid(e.to_string()))?;
            trajectories.push(clean.trajectory);
            let mut noisy = ControlConfig::new(PolicyMode::Pid);
            noisy.action_noise = Some((
                config.bench.behavior_noise,
                mix(seed ^ mix(spec.id ^ mix(day as u64))),
            ));
            let explored = control_day(None, &gains, &input, &noisy)
                .map_err(|e| BenchError::Invalid(e.to_string()))?;
            trajectories.push(explored.trajectory);
        }
    }

    let (dt, dt_report) = train_micro(&trajectories, &gains, &config.micro.to_train_config(seed))
        .map_err(|e| BenchError::Invalid(format!("sequence policy training: {e}")))?;
    if dt_report.diverged {
        warnings.push("sequence policy training diverged; using last healthy parameters".into());
    }

    Ok(ControlContext { specs, gains, c_ma, gmv_refs, dt })
}

fn evaluate_mode(
    config: &BenchConfig,
    ctx: &ControlContext,
    seed: u64,
    mode: PolicyMode,
) -> Result<ControlMetrics, BenchError> {
    let scenario = &config.scenario;
    let mut control_config = ControlConfig::new(mode);
    control_config.hindsight_grid = config.bench.hindsight_grid;
    control_config.pace_slack = config.bench.pace_slack;

    let mut credited = 0.0;
    let mut oracle_total = 0.0;
    let mut oracle_approx = false;
    let mut checks = Vec::new();
    let mut exhaust = 0.0;
    let mut gmv_sum = 0.0;
    let mut days = 0usize;

    for spec in &ctx.specs {
        for day in scenario.train_days..scenario.total_days() {
            let imps = synth_impressions(scenario, seed, spec.id, day)?;
            let input = DayInput {
                impressions: &imps,
                budget: spec.budget,
                nominal_target: spec.effective_target,
                strategy: spec.strategy,
                c_ma: ctx.c_ma[spec.id as usize],
                gmv_ref: ctx.gmv_refs[spec.id as usize],
            };
            let result = control_day(Some(&ctx.dt), &ctx.gains, &input, &control_config)
                .map_err(|e| BenchError::Invalid(e.to_string()))?;

            let oracle = oracle_value(
                &imps,
                spec.budget,
                spec.effective_target,
                scenario.objective,
                config.bench.oracle_max_exhaustive,
            )?;
            oracle_approx |= !oracle.exact;
            oracle_total += oracle.value;

            let check = ConstraintCheck {
                cost: result.state.cost,
                budget: spec.budget,
                cpa: realized_cpa(&result.state),
                target: spec.effective_target,
            };
            // Constraint-violating days earn no credit toward R.
            if check.satisfied() {
                credited += match scenario.objective {
                    Objective::Gmv => result.state.gmv,
                    Objective::Clicks => result.state.clicks,
                };
            }
            checks.push(check);
            exhaust += result.state.cost / spec.budget;
            gmv_sum += result.state.gmv;
            days += 1;
        }
    }

    Ok(ControlMetrics {
        r_over_rstar: if oracle_total > 0.0 { credited / oracle_total } else { 0.0 },
        oracle_approx,
        constraint_satisfaction: constraint_satisfaction(&checks),
        cost_exhaust: exhaust / days.max(1) as f64,
        mean_day_gmv: gmv_sum / days.max(1) as f64,
        campaign_days: days,
    })
}

fn run_seed(config: &BenchConfig, variants: &[Variant], seed: u64) -> Result<SeedOutcome, BenchError> {
    let mut warnings = Vec::new();
    let records = synth_day_records(&config.scenario, seed)?;

    let control_requested: Vec<Variant> = variants
        .iter()
        .copied()
        .filter(|v| v.control_mode().is_some())
        .collect();
    let macro_requested: Vec<Variant> = variants
        .iter()
        .copied()
        .filter(|v| v.is_macro_variant())
        .collect();

    let mut macro_metrics = BTreeMap::new();
    let mut full_macro: Option<PriceVolumeModel> = None;
    let need_full = !control_requested.is_empty() || macro_requested.contains(&Variant::Kbd);
    if need_full {
        let (model, metrics, mut warns) = train_macro_variant(&records, config, Variant::Kbd, seed)?;
        warnings.append(&mut warns);
        if macro_requested.contains(&Variant::Kbd) {
            macro_metrics.insert(Variant::Kbd, metrics);
        }
        full_macro = Some(model);
    }
    for variant in &macro_requested {
        if *variant == Variant::Kbd {
            continue;
        }
        let (_, metrics, mut warns) = train_macro_variant(&records, config, *variant, seed)?;
        warnings.append(&mut warns);
        macro_metrics.insert(*variant, metrics);
    }

    let mut control_metrics = BTreeMap::new();
    if !control_requested.is_empty() {
        let full = full_macro.as_ref().expect("full macro trained for control");
        let ctx = prepare_control(config, &records, full, seed, &mut warnings)?;
        for variant in control_requested {
            let mode = variant.control_mode().expect("control variant");
            control_metrics.insert(variant, evaluate_mode(config, &ctx, seed, mode)?);
        }
    }

    Ok(SeedOutcome { macro_metrics, control_metrics, warnings })
}

/// Trains and evaluates every requested variant over the configured paired
/// seeds and assembles the per-variant tables plus seedwise comparisons.
pub fn run_benchmark(config: &BenchConfig, variants: &[Variant]) -> Result<BenchReport, BenchError> {
    config.scenario.validate()?;
    let mut unique: Vec<Variant> = Vec::new();
    for v in variants {
        if !unique.contains(v) {
            unique.push(*v);
        }
    }

    let mut outcomes = Vec::new();
    for replicate in 0..config.bench.seeds {
        outcomes.push(run_seed(config, &unique, config.seed + replicate)?);
    }

    let mut macro_table = Vec::new();
    for variant in Variant::ALL.iter().filter(|v| unique.contains(v) && v.is_macro_variant()) {
        let per_seed: Vec<RegressionMetrics> = outcomes
            .iter()
            .map(|o| o.macro_metrics[variant])
            .collect();
        let n = per_seed.len() as f64;
        macro_table.push(MacroVariantReport {
            variant: variant.id().to_string(),
            display_name: variant.display_name().to_string(),
            mean_wmape: per_seed.iter().map(|m| m.wmape).sum::<f64>() / n,
            mean_mape: per_seed.iter().map(|m| m.mape).sum::<f64>() / n,
            mean_perf10: per_seed.iter().map(|m| m.perf10).sum::<f64>() / n,
            per_seed,
        });
    }

    let mut control_table = Vec::new();
    for variant in Variant::ALL.iter().filter(|v| unique.contains(v) && v.control_mode().is_some()) {
        let per_seed: Vec<ControlMetrics> = outcomes
            .iter()
            .map(|o| o.control_metrics[variant])
            .collect();
        let n = per_seed.len() as f64;
        let mean = ControlMetrics {
            r_over_rstar: per_seed.iter().map(|m| m.r_over_rstar).sum::<f64>() / n,
            oracle_approx: per_seed.iter().any(|m| m.oracle_approx),
            constraint_satisfaction: per_seed.iter().map(|m| m.constraint_satisfaction).sum::<f64>() / n,
            cost_exhaust: per_seed.iter().map(|m| m.cost_exhaust).sum::<f64>() / n,
            mean_day_gmv: per_seed.iter().map(|m| m.mean_day_gmv).sum::<f64>() / n,
            campaign_days: per_seed.iter().map(|m| m.campaign_days).sum(),
        };
        control_table.push(ControlVariantReport {
            variant: variant.id().to_string(),
            display_name: variant.display_name().to_string(),
            per_seed,
            mean,
        });
    }

    let mut paired = Vec::new();
    if unique.contains(&Variant::Kbd) {
        for ablation in [Variant::NoIe, Variant::NoGla, Variant::NoMargin, Variant::NoAug] {
            if !unique.contains(&ablation) {
                continue;
            }
            let wins = outcomes
                .iter()
                .filter(|o| o.macro_metrics[&Variant::Kbd].wmape < o.macro_metrics[&ablation].wmape)
                .count() as u64;
            paired.push(PairedComparison {
                label: format!("kbd beats {} on wmape", ablation.id()),
                wins,
                total: outcomes.len() as u64,
            });
        }
        if unique.contains(&Variant::NoPid) {
            let wins = outcomes
                .iter()
                .filter(|o| {
                    o.control_metrics[&Variant::Kbd].constraint_satisfaction
                        >= o.control_metrics[&Variant::NoPid].constraint_satisfaction
                })
                .count() as u64;
            paired.push(PairedComparison {
                label: "fused >= dt-only on constraint satisfaction".into(),
                wins,
                total: outcomes.len() as u64,
            });
        }
        if unique.contains(&Variant::NoDt) {
            let wins = outcomes
                .iter()
                .filter(|o| {
                    o.control_metrics[&Variant::Kbd].mean_day_gmv
                        >= o.control_metrics[&Variant::NoDt].mean_day_gmv
                })
                .count() as u64;
            paired.push(PairedComparison {
                label: "fused >= pid-only on day gmv".into(),
                wins,
                total: outcomes.len() as u64,
            });
        }
    }

    let warnings: Vec<String> = outcomes
        .iter()
        .enumerate()
        .flat_map(|(i, o)| o.warnings.iter().map(move |w| format!("seed {i}: {w}")))
        .collect();

    Ok(BenchReport {
        config_hash: config.hash(),
        base_seed: config.seed,
        seeds: config.bench.seeds,
        objective: match config.scenario.objective {
            Objective::Gmv => "gmv".into(),
            Objective::Clicks => "clicks".into(),
        },
        oracle_exact_limit: config.bench.oracle_max_exhaustive,
        macro_table,
        control_table,
        paired,
        warnings,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub seed: u64,
    /// (segment count, held-out wmape) per point.
    pub points: Vec<(usize, f64)>,
    pub spread: f64,
}

/// Trains the full macro model per segment count and reports the held-out
/// wmape curve with its max-min spread.
pub fn sweep_segments(config: &BenchConfig, n_lo: usize, n_hi: usize) -> Result<SweepReport, BenchError> {
    if !(2..=32).contains(&n_lo) || !(2..=32).contains(&n_hi) || n_lo > n_hi {
        return Err(BenchError::Invalid(format!("segment range {n_lo}..={n_hi} outside [2, 32]")));
    }
    let records = synth_day_records(&config.scenario, config.seed)?;
    let mut points = Vec::new();
    for n in n_lo..=n_hi {
        let mut train_config = config.macro_train.to_train_config(config.seed);
        train_config.segments = n;
        let (_, report) = train_macro(&records, &train_config)
            .map_err(|e| BenchError::Invalid(format!("segments {n}: {e}")))?;
        points.push((n, report.heldout.wmape));
    }
    let lo = points.iter().map(|(_, w)| *w).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|(_, w)| *w).fold(f64::NEG_INFINITY, f64::max);
    Ok(SweepReport {
        config_hash: config.hash(),
        seed: config.seed,
        points,
        spread: hi - lo,
    })
}
