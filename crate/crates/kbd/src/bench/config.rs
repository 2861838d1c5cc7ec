//! Benchmark configuration: one human-editable TOML document. Every field
//! has a default; unknown keys are hard errors.

use super::BenchError;
use crate::ieformer::{MacroTrainConfig, OptimizerKind};
use crate::micro::MicroTrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

fn default_volume_curve() -> Vec<f64> {
    // Mild double-peak day shape (late morning and evening).
    let raw: [f64; 24] = [
        0.6, 0.4, 0.3, 0.25, 0.25, 0.3, 0.5, 0.8, 1.1, 1.3, 1.4, 1.3, 1.2, 1.1, 1.1, 1.2, 1.3,
        1.5, 1.7, 1.8, 1.6, 1.3, 1.0, 0.8,
    ];
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaParams {
    fn default() -> Self {
        BetaParams { alpha: 2.0, beta: 30.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogNormalParams {
    pub ln_mean: f64,
    pub ln_sigma: f64,
}

impl Default for LogNormalParams {
    fn default() -> Self {
        LogNormalParams { ln_mean: 3.5, ln_sigma: 0.5 }
    }
}

/// Winning-price model: mean proportional to impression value plus
/// log-normal noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WpParams {
    pub factor: f64,
    pub sigma: f64,
}

impl Default for WpParams {
    fn default() -> Self {
        WpParams { factor: 1.0, sigma: 0.6 }
    }
}

/// Ground-truth price-volume curve generator for the macro day records:
/// tcpa(cost) = base * (cost/100)^exponent + floor, observed with relative
/// noise on skewed cost draws.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveParams {
    pub days: u32,
    /// Day-record count for native tCPA campaigns; 0 means `days`. Fewer
    /// native days models the scarcity that augmentation addresses.
    pub native_days: u32,
    pub base_min: f64,
    pub base_max: f64,
    pub exponent: f64,
    pub floor: f64,
    pub cost_min: f64,
    pub cost_span: f64,
    /// Relative observation noise on targets.
    pub noise: f64,
    /// Fraction of campaigns running each non-native strategy.
    pub troi_fraction: f64,
    pub tcpc_fraction: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams {
            days: 28,
            native_days: 8,
            base_min: 20.0,
            base_max: 62.0,
            exponent: 0.5,
            floor: 5.0,
            cost_min: 10.0,
            cost_span: 80.0,
            noise: 0.15,
            troi_fraction: 0.25,
            tcpc_fraction: 0.25,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Gmv,
    Clicks,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub campaigns: u64,
    /// Days used to train the hourly policy (and to fit GMV references).
    pub train_days: u32,
    /// Held-out days evaluated by the control benchmark.
    pub eval_days: u32,
    pub impressions_per_day: u64,
    pub volume_curve: Vec<f64>,
    pub pctr: BetaParams,
    pub pcvr: BetaParams,
    pub ppay: LogNormalParams,
    pub wp: WpParams,
    pub curve: CurveParams,
    /// Every n-th day is a promotion/new-product day; 0 disables shifts.
    pub shift_every_days: u32,
    pub shift_wp_mult: f64,
    pub shift_volume_mult: f64,
    pub objective: Objective,
    /// Daily budget range; campaign budgets interpolate between these.
    pub budget_min: f64,
    pub budget_max: f64,
    /// Advertiser tCPA target range (tROI/tCPC targets derive from it).
    pub target_min: f64,
    pub target_max: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            campaigns: 6,
            train_days: 8,
            eval_days: 2,
            impressions_per_day: 600,
            volume_curve: default_volume_curve(),
            pctr: BetaParams::default(),
            pcvr: BetaParams::default(),
            ppay: LogNormalParams::default(),
            wp: WpParams::default(),
            curve: CurveParams::default(),
            shift_every_days: 0,
            shift_wp_mult: 3.0,
            shift_volume_mult: 2.0,
            objective: Objective::Gmv,
            budget_min: 25.0,
            budget_max: 60.0,
            target_min: 10.0,
            target_max: 120.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Invalid(msg));
        if self.campaigns == 0 {
            return bad("campaigns must be positive".into());
        }
        if self.volume_curve.len() != 24 {
            return bad(format!("volume_curve needs 24 weights, got {}", self.volume_curve.len()));
        }
        let total: f64 = self.volume_curve.iter().sum();
        if (total - 1.0).abs() > 1e-6 || self.volume_curve.iter().any(|w| *w < 0.0) {
            return bad(format!("volume_curve weights must be non-negative and sum to 1, sum is {total}"));
        }
        for (name, p) in [("pctr", &self.pctr), ("pcvr", &self.pcvr)] {
            if !(p.alpha > 0.0 && p.beta > 0.0) {
                return bad(format!("{name} beta-distribution parameters must be positive"));
            }
        }
        if !(self.ppay.ln_sigma >= 0.0) || !self.ppay.ln_mean.is_finite() {
            return bad("ppay log-normal parameters invalid".into());
        }
        if !(self.wp.factor > 0.0 && self.wp.sigma >= 0.0) {
            return bad("wp model parameters invalid".into());
        }
        if !(self.budget_min > 0.0 && self.budget_max >= self.budget_min) {
            return bad("budget range invalid".into());
        }
        if !(self.target_min > 0.0 && self.target_max >= self.target_min) {
            return bad("target range invalid".into());
        }
        if self.curve.troi_fraction + self.curve.tcpc_fraction > 1.0 + 1e-12 {
            return bad("strategy fractions exceed 1".into());
        }
        if !(self.curve.exponent > 0.0 && self.curve.exponent <= 1.0) {
            return bad("curve exponent must lie in (0, 1] for diminishing returns".into());
        }
        if self.shift_every_days > 0 && !(self.shift_wp_mult > 0.0 && self.shift_volume_mult > 0.0) {
            return bad("shift multipliers must be positive".into());
        }
        Ok(())
    }

    /// Normalized volume weights (exact unit sum after validation rounding).
    pub fn normalized_volume(&self) -> [f64; 24] {
        let total: f64 = self.volume_curve.iter().sum();
        let mut out = [0.0; 24];
        for (o, w) in out.iter_mut().zip(&self.volume_curve) {
            *o = w / total;
        }
        out
    }

    pub fn is_shift_day(&self, day: u32) -> bool {
        self.shift_every_days > 0 && (day + 1) % self.shift_every_days == 0
    }

    pub fn total_days(&self) -> u32 {
        self.train_days + self.eval_days
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Paired replicate count; replicate r runs with seed `seed + r`.
    pub seeds: u64,
    /// Variant identifiers (see `Variant::parse`).
    pub variants: Vec<String>,
    /// Instances at or under this size use the exhaustive oracle.
    pub oracle_max_exhaustive: usize,
    pub hindsight_grid: usize,
    pub pace_slack: f64,
    /// PID gains.
    pub k_p: f64,
    pub k_i: f64,
    /// Behavior-noise amplitude for the exploratory offline policy.
    pub behavior_noise: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            seeds: 3,
            variants: vec![
                "kbd".into(),
                "no-dt".into(),
                "no-pid".into(),
                "no-ie".into(),
                "no-gla".into(),
                "no-margin".into(),
                "no-aug".into(),
            ],
            oracle_max_exhaustive: 16,
            hindsight_grid: 41,
            pace_slack: 1.2,
            k_p: 0.7,
            k_i: 0.1,
            behavior_noise: 0.1,
        }
    }
}

/// Root configuration document.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    #[serde(rename = "macro")]
    pub macro_train: MacroSection,
    pub micro: MicroSection,
    pub bench: BenchSection,
}

/// Macro training knobs exposed in the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroSection {
    pub segments: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub max_history: usize,
    pub alpha_smooth: f64,
    pub alpha_margin: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
}

impl Default for MacroSection {
    fn default() -> Self {
        let d = MacroTrainConfig::default();
        MacroSection {
            segments: d.segments,
            epochs: d.epochs,
            lr: d.lr,
            batch_size: d.batch_size,
            dim: d.dim,
            heads: d.heads,
            max_history: d.max_history,
            alpha_smooth: d.alpha_smooth,
            alpha_margin: d.alpha_margin,
            optimizer: d.optimizer,
            clip_norm: 5.0,
        }
    }
}

impl MacroSection {
    pub fn to_train_config(&self, seed: u64) -> MacroTrainConfig {
        MacroTrainConfig {
            optimizer: self.optimizer,
            segments: self.segments,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            clip_norm: Some(self.clip_norm),
            seed,
            dim: self.dim,
            heads: self.heads,
            max_history: self.max_history,
            alpha_smooth: self.alpha_smooth,
            alpha_margin: self.alpha_margin,
            use_isotonic: true,
            use_gla: true,
            use_augmented: true,
            ..MacroTrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroSection {
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
}

impl Default for MicroSection {
    fn default() -> Self {
        let d = MicroTrainConfig::default();
        MicroSection {
            beta: d.beta,
            epochs: d.epochs,
            lr: d.lr,
            dim: d.dim,
            layers: d.layers,
            heads: d.heads,
            batch_size: d.batch_size,
            clip_norm: 5.0,
            optimizer: d.optimizer,
        }
    }
}

impl MicroSection {
    pub fn to_train_config(&self, seed: u64) -> MicroTrainConfig {
        MicroTrainConfig {
            beta: self.beta,
            epochs: self.epochs,
            lr: self.lr,
            optimizer: self.optimizer,
            clip_norm: Some(self.clip_norm),
            seed,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            batch_size: self.batch_size,
            ..MicroTrainConfig::default()
        }
    }
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let config: BenchConfig =
            toml::from_str(text).map_err(|e| BenchError::Invalid(format!("config: {e}")))?;
        config.scenario.validate()?;
        if config.bench.seeds == 0 {
            return Err(BenchError::Invalid("bench.seeds must be at least 1".into()));
        }
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        BenchConfig::parse(&text)
    }

    /// Canonical serialized form; the report hash is computed over this, so
    /// two files with the same effective settings hash identically.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_defaults() {
        let config = BenchConfig::parse("").unwrap();
        assert_eq!(config.scenario.campaigns, 6);
        assert_eq!(config.macro_train.segments, 10);
        assert_eq!(config.micro.beta, 0.1);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        assert!(BenchConfig::parse("unknown_key = 1\n").is_err());
        assert!(BenchConfig::parse("[scenario]\ntypo_field = 3\n").is_err());
        assert!(BenchConfig::parse("[macro]\nlearning = 0.1\n").is_err());
    }

    #[test]
    fn invalid_distribution_params_rejected_at_load() {
        let text = "[scenario.pctr]\nalpha = -1.0\n";
        assert!(BenchConfig::parse(text).is_err());
        let text = "[scenario.wp]\nfactor = 0.0\n";
        assert!(BenchConfig::parse(text).is_err());
    }

    #[test]
    fn bad_volume_curve_rejected() {
        let text = "[scenario]\nvolume_curve = [0.5, 0.5]\n";
        assert!(BenchConfig::parse(text).is_err());
    }

    #[test]
    fn hash_is_stable_and_format_insensitive() {
        let a = BenchConfig::parse("seed = 7\n").unwrap();
        let b = BenchConfig::parse("seed   =   7\n\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = BenchConfig::parse("seed = 8\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn shift_schedule_marks_every_nth_day() {
        let mut config = BenchConfig::default();
        config.scenario.shift_every_days = 7;
        let shifted: Vec<u32> = (0..21).filter(|d| config.scenario.is_shift_day(*d)).collect();
        assert_eq!(shifted, vec![6, 13, 20]);
    }
}
