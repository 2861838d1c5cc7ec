//! Second-price auction day simulator: platform bidding formula, win/charge
//! semantics, dual updates, and campaign-day accounting.

mod log;

pub use log::{read_impressions, write_hour_logs, write_impressions};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Floor applied to p+q before dividing in the bid formula.
pub const DUAL_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum AuctionError {
    InvalidImpression { id: u64, detail: String },
    InvalidTarget { value: f64 },
    WrongHour { expected: u8, got: u8 },
    Csv { line: usize, message: String },
    Io(String),
}

impl fmt::Display for AuctionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuctionError::InvalidImpression { id, detail } => {
                write!(f, "invalid impression {id}: {detail}")
            }
            AuctionError::InvalidTarget { value } => {
                write!(f, "effective tCPA must be positive, got {value}")
            }
            AuctionError::WrongHour { expected, got } => {
                write!(f, "impression from hour {got} offered to hour {expected}")
            }
            AuctionError::Csv { line, message } => write!(f, "impression log line {line}: {message}"),
            AuctionError::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl std::error::Error for AuctionError {}

/// Advertiser performance-goal strategy.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    TCpa,
    TRoi,
    TCpc,
}

impl Strategy {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Strategy::TCpa => [1.0, 0.0, 0.0],
            Strategy::TRoi => [0.0, 1.0, 0.0],
            Strategy::TCpc => [0.0, 0.0, 1.0],
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s.to_ascii_lowercase().as_str() {
            "tcpa" => Some(Strategy::TCpa),
            "troi" => Some(Strategy::TRoi),
            "tcpc" => Some(Strategy::TCpc),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::TCpa => write!(f, "tCPA"),
            Strategy::TRoi => write!(f, "tROI"),
            Strategy::TCpc => write!(f, "tCPC"),
        }
    }
}

/// One auction opportunity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub id: u64,
    pub hour: u8,
    pub pctr: f64,
    pub pcvr: f64,
    pub ppay: f64,
    pub wp: f64,
}

impl Impression {
    pub fn new(id: u64, hour: u8, pctr: f64, pcvr: f64, ppay: f64, wp: f64) -> Result<Self, AuctionError> {
        let bad = |detail: String| AuctionError::InvalidImpression { id, detail };
        if hour > 23 {
            return Err(bad(format!("hour {hour} out of 0..=23")));
        }
        if !(pctr > 0.0 && pctr < 1.0) {
            return Err(bad(format!("pCTR {pctr} outside (0,1)")));
        }
        if !(pcvr > 0.0 && pcvr < 1.0) {
            return Err(bad(format!("pCVR {pcvr} outside (0,1)")));
        }
        if !(ppay > 0.0 && ppay.is_finite()) {
            return Err(bad(format!("ppay {ppay} not positive")));
        }
        if !(wp > 0.0 && wp.is_finite()) {
            return Err(bad(format!("wp {wp} not positive")));
        }
        Ok(Impression { id, hour, pctr, pcvr, ppay, wp })
    }

    /// Expected conversion value v = pCTR * pCVR * ppay.
    pub fn value(&self) -> f64 {
        self.pctr * self.pcvr * self.ppay
    }

    /// Expected conversions if won.
    pub fn expected_conversions(&self) -> f64 {
        self.pctr * self.pcvr
    }
}

/// Platform-side dual variables for the budget (p) and tCPA (q) constraints.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformDuals {
    pub p: f64,
    pub q: f64,
    pub eta_p: f64,
    pub eta_q: f64,
}

impl PlatformDuals {
    pub fn new(p: f64, q: f64, eta_p: f64, eta_q: f64) -> Self {
        debug_assert!(p >= 0.0 && q >= 0.0 && eta_p > 0.0 && eta_q > 0.0);
        PlatformDuals { p, q, eta_p, eta_q }
    }
}

impl Default for PlatformDuals {
    fn default() -> Self {
        PlatformDuals::new(1.0, 1.0, 0.2, 0.2)
    }
}

/// Running accounting for one campaign-day.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignState {
    pub budget: f64,
    /// Advertiser's nominal effective tCPA for the day (constraint target).
    pub target: f64,
    pub strategy: Strategy,
    pub cost: f64,
    pub gmv: f64,
    pub conversions: f64,
    /// Expected clicks (sum of pCTR over won impressions).
    pub clicks: f64,
    pub hours: Vec<HourLog>,
}

impl CampaignState {
    pub fn new(budget: f64, target: f64, strategy: Strategy) -> Self {
        CampaignState {
            budget,
            target,
            strategy,
            cost: 0.0,
            gmv: 0.0,
            conversions: 0.0,
            clicks: 0.0,
            hours: Vec::new(),
        }
    }
}

/// Per-hour digest emitted by [`roll_hour`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourLog {
    pub hour: u8,
    pub offered: u64,
    pub won: u64,
    pub cost: f64,
    pub gmv: f64,
    pub conversions: f64,
    pub clicks: f64,
    /// Effective tCPA applied while bidding this hour.
    pub applied_target: f64,
    /// Duals snapshot used for this hour's bids.
    pub p: f64,
    pub q: f64,
    /// Bids where the p+q floor kicked in.
    pub dual_floor_hits: u64,
    /// Impressions skipped because winning could overshoot the budget.
    pub budget_exhausted: bool,
}

/// Optimal platform bid for one impression: v/(p+q) + q*pCTR*pCVR*C/(p+q).
///
/// Returns the bid and whether the p+q floor was applied.
pub fn platform_bid(imp: &Impression, duals: &PlatformDuals, target: f64) -> Result<(f64, bool), AuctionError> {
    if !(target > 0.0) {
        return Err(AuctionError::InvalidTarget { value: target });
    }
    let raw = duals.p + duals.q;
    let floored = raw < DUAL_FLOOR;
    let denom = raw.max(DUAL_FLOOR);
    let bid = imp.value() / denom + duals.q * imp.expected_conversions() * target / denom;
    Ok((bid, floored))
}

/// Second-price semantics: win strictly above the winning price, pay wp.
pub fn run_auction(imp: &Impression, bid: f64) -> (bool, f64) {
    debug_assert!(bid >= 0.0);
    if bid > imp.wp {
        (true, imp.wp)
    } else {
        (false, 0.0)
    }
}

/// Pure replay of one hour's auctions. Does not touch duals or logs, so the
/// same routine serves live rollouts, hindsight searches, and tests.
#[derive(Clone, Debug, Default)]
pub struct HourOutcome {
    pub won: Vec<bool>,
    pub cost: f64,
    pub gmv: f64,
    pub conversions: f64,
    pub clicks: f64,
    pub dual_floor_hits: u64,
    pub budget_exhausted: bool,
}

pub fn replay_hour(
    impressions: &[Impression],
    duals: &PlatformDuals,
    target: f64,
    cost_so_far: f64,
    budget: f64,
) -> Result<HourOutcome, AuctionError> {
    let mut out = HourOutcome {
        won: Vec::with_capacity(impressions.len()),
        ..HourOutcome::default()
    };
    let mut cost = cost_so_far;
    for imp in impressions {
        // Hard budget rule: never bid when winning could push cost past B.
        if cost + imp.wp > budget {
            out.budget_exhausted = true;
            out.won.push(false);
            continue;
        }
        let (bid, floored) = platform_bid(imp, duals, target)?;
        if floored {
            out.dual_floor_hits += 1;
        }
        let (won, paid) = run_auction(imp, bid);
        out.won.push(won);
        if won {
            cost += paid;
            out.cost += paid;
            out.gmv += imp.value();
            out.conversions += imp.expected_conversions();
            out.clicks += imp.pctr;
        }
    }
    Ok(out)
}

/// Cumulative cost over cumulative expected conversions; `None` while no
/// conversions have been attributed (undefined CPA).
pub fn realized_cpa(state: &CampaignState) -> Option<f64> {
    if state.conversions > 0.0 {
        Some(state.cost / state.conversions)
    } else {
        None
    }
}

/// Dual ascent after an hour closes. Pace errors are clamped to [-1, 1];
/// p and q never go negative. The platform paces spend uniformly over the
/// 24 hours (the hourly volume shape belongs to the advertiser's side).
pub fn update_duals(duals: &PlatformDuals, state: &CampaignState, hour: u8) -> PlatformDuals {
    debug_assert!(hour <= 23);
    let budget_pace = (hour as f64 + 1.0) / 24.0;
    let cost_pace = if state.budget > 0.0 {
        state.cost / state.budget
    } else {
        1.0
    };
    let spend_err = (cost_pace - budget_pace).clamp(-1.0, 1.0);

    let cpa_err = match realized_cpa(state) {
        Some(cpa) => (cpa / state.target - 1.0).clamp(-1.0, 1.0),
        // No conversions: spend without conversions is maximal CPA pressure.
        None if state.cost > 0.0 => 1.0,
        None => 0.0,
    };

    PlatformDuals {
        p: (duals.p + duals.eta_p * spend_err).max(0.0),
        q: (duals.q + duals.eta_q * cpa_err).max(0.0),
        ..*duals
    }
}

/// Bids one hour of impressions, accumulates campaign accounting, appends an
/// [`HourLog`], and finally advances the duals.
pub fn roll_hour(
    state: &mut CampaignState,
    duals: &mut PlatformDuals,
    impressions: &[Impression],
    hour: u8,
    applied_target: f64,
) -> Result<HourLog, AuctionError> {
    if !(applied_target > 0.0) {
        return Err(AuctionError::InvalidTarget { value: applied_target });
    }
    for imp in impressions {
        if imp.hour != hour {
            return Err(AuctionError::WrongHour { expected: hour, got: imp.hour });
        }
    }
    let outcome = replay_hour(impressions, duals, applied_target, state.cost, state.budget)?;
    state.cost += outcome.cost;
    state.gmv += outcome.gmv;
    state.conversions += outcome.conversions;
    state.clicks += outcome.clicks;
    let log = HourLog {
        hour,
        offered: impressions.len() as u64,
        won: outcome.won.iter().filter(|w| **w).count() as u64,
        cost: outcome.cost,
        gmv: outcome.gmv,
        conversions: outcome.conversions,
        clicks: outcome.clicks,
        applied_target,
        p: duals.p,
        q: duals.q,
        dual_floor_hits: outcome.dual_floor_hits,
        budget_exhausted: outcome.budget_exhausted,
    };
    state.hours.push(log.clone());
    *duals = update_duals(duals, state, hour);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imp(id: u64, hour: u8, pctr: f64, pcvr: f64, ppay: f64, wp: f64) -> Impression {
        Impression::new(id, hour, pctr, pcvr, ppay, wp).unwrap()
    }

    #[test]
    fn bid_with_zero_q_is_the_expected_value() {
        let i = imp(1, 0, 0.2, 0.3, 10.0, 1.0);
        let duals = PlatformDuals::new(1.0, 0.0, 0.2, 0.2);
        let (bid, floored) = platform_bid(&i, &duals, 50.0).unwrap();
        assert!(!floored);
        assert!((bid - i.value()).abs() < 1e-12);
    }

    #[test]
    fn bid_worked_example() {
        // p=0, q=1, pCTR=0.1, pCVR=0.1, ppay=100, C=50 -> v + 0.01*50 = 1.5
        let i = imp(1, 0, 0.1, 0.1, 100.0, 1.0);
        let duals = PlatformDuals::new(0.0, 1.0, 0.2, 0.2);
        let (bid, _) = platform_bid(&i, &duals, 50.0).unwrap();
        assert!((bid - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bid_is_strictly_increasing_in_target_when_q_positive() {
        let i = imp(1, 0, 0.05, 0.2, 40.0, 1.0);
        let duals = PlatformDuals::new(0.5, 0.7, 0.2, 0.2);
        let mut last = 0.0;
        for c in [1.0, 5.0, 20.0, 80.0] {
            let (bid, _) = platform_bid(&i, &duals, c).unwrap();
            assert!(bid > last);
            last = bid;
        }
    }

    #[test]
    fn bid_floors_degenerate_duals_and_flags_it() {
        let i = imp(1, 0, 0.1, 0.1, 100.0, 1.0);
        let duals = PlatformDuals::new(0.0, 0.0, 0.2, 0.2);
        let (bid, floored) = platform_bid(&i, &duals, 50.0).unwrap();
        assert!(floored);
        assert!(bid.is_finite() && bid > 0.0);
    }

    #[test]
    fn bid_rejects_non_positive_target() {
        let i = imp(1, 0, 0.1, 0.1, 100.0, 1.0);
        let duals = PlatformDuals::default();
        assert!(platform_bid(&i, &duals, 0.0).is_err());
    }

    #[test]
    fn auction_win_pays_winning_price() {
        let i = imp(1, 0, 0.1, 0.1, 100.0, 3.0);
        assert_eq!(run_auction(&i, 5.0), (true, 3.0));
    }

    #[test]
    fn auction_tie_loses() {
        let i = imp(1, 0, 0.1, 0.1, 100.0, 3.0);
        assert_eq!(run_auction(&i, 3.0), (false, 0.0));
    }

    #[test]
    fn auction_zero_bid_loses() {
        let i = imp(1, 0, 0.1, 0.1, 100.0, 3.0);
        assert_eq!(run_auction(&i, 0.0), (false, 0.0));
    }

    #[test]
    fn duals_unchanged_when_on_pace_and_on_target() {
        let mut state = CampaignState::new(240.0, 50.0, Strategy::TCpa);
        // After hour 0 the uniform pace target is 1/24 of budget.
        state.cost = 10.0;
        state.conversions = 0.2; // CPA = 50 = target
        let duals = PlatformDuals::default();
        let next = update_duals(&duals, &state, 0);
        assert!((next.p - duals.p).abs() < 1e-12);
        assert!((next.q - duals.q).abs() < 1e-12);
    }

    #[test]
    fn overspend_raises_p() {
        let mut state = CampaignState::new(240.0, 50.0, Strategy::TCpa);
        state.cost = 120.0; // half the budget in hour 0
        state.conversions = 2.4;
        let duals = PlatformDuals::default();
        let next = update_duals(&duals, &state, 0);
        assert!(next.p > duals.p);
    }

    #[test]
    fn double_cpa_raises_q_by_full_clamped_step() {
        let mut state = CampaignState::new(240.0, 50.0, Strategy::TCpa);
        state.cost = 10.0;
        state.conversions = 0.1; // CPA = 100 = 2 * target -> error clamps to 1
        let duals = PlatformDuals::default();
        let next = update_duals(&duals, &state, 0);
        assert!((next.q - (duals.q + duals.eta_q)).abs() < 1e-12);
    }

    #[test]
    fn duals_never_negative() {
        let mut state = CampaignState::new(240.0, 50.0, Strategy::TCpa);
        state.cost = 0.0;
        let duals = PlatformDuals::new(0.01, 0.01, 0.2, 0.2);
        let next = update_duals(&duals, &state, 23); // huge underspend
        assert!(next.p >= 0.0 && next.q >= 0.0);
    }

    #[test]
    fn empty_hour_logs_zeros_and_still_updates_duals() {
        let mut state = CampaignState::new(240.0, 50.0, Strategy::TCpa);
        let mut duals = PlatformDuals::default();
        let before = duals;
        let log = roll_hour(&mut state, &mut duals, &[], 0, 50.0).unwrap();
        assert_eq!(log.offered, 0);
        assert_eq!(log.won, 0);
        assert_eq!(log.cost, 0.0);
        // Under-pace with zero spend lowers p.
        assert!(duals.p < before.p);
    }

    #[test]
    fn higher_target_wins_a_superset_of_impressions() {
        let mut rng = crate::seed::TestRng::new(3);
        let imps: Vec<Impression> = (0..200)
            .map(|i| {
                imp(
                    i,
                    0,
                    0.01 + 0.3 * (0.5 + 0.5 * rng.uniform()),
                    0.01 + 0.3 * (0.5 + 0.5 * rng.uniform()),
                    5.0 + 20.0 * (0.5 + 0.5 * rng.uniform()),
                    0.05 + 2.0 * (0.5 + 0.5 * rng.uniform()),
                )
            })
            .collect();
        let duals = PlatformDuals::new(0.6, 0.8, 0.2, 0.2);
        let lo = replay_hour(&imps, &duals, 5.0, 0.0, 1e12).unwrap();
        let hi = replay_hour(&imps, &duals, 50.0, 0.0, 1e12).unwrap();
        let lo_wins = lo.won.iter().filter(|w| **w).count();
        let hi_wins = hi.won.iter().filter(|w| **w).count();
        assert!(lo_wins < hi_wins, "{lo_wins} vs {hi_wins}");
        for (l, h) in lo.won.iter().zip(&hi.won) {
            assert!(!l | h, "win at low target lost at high target");
        }
    }

    #[test]
    fn budget_rule_keeps_cost_at_or_under_budget() {
        let mut rng = crate::seed::TestRng::new(4);
        let imps: Vec<Impression> = (0..300)
            .map(|i| imp(i, 0, 0.2, 0.2, 50.0, 0.5 + 0.5 * (0.5 + 0.5 * rng.uniform())))
            .collect();
        let mut state = CampaignState::new(20.0, 50.0, Strategy::TCpa);
        let mut duals = PlatformDuals::default();
        let log = roll_hour(&mut state, &mut duals, &imps, 0, 50.0).unwrap();
        assert!(state.cost <= state.budget + 1e-12);
        assert!(log.budget_exhausted);
    }

    #[test]
    fn realized_cpa_examples() {
        let mut state = CampaignState::new(100.0, 50.0, Strategy::TCpa);
        assert_eq!(realized_cpa(&state), None);
        state.cost = 2.0;
        state.conversions = 0.04;
        assert!((realized_cpa(&state).unwrap() - 50.0).abs() < 1e-12);
        state.cost += 4.0;
        state.conversions += 0.04;
        assert!((realized_cpa(&state).unwrap() - 75.0).abs() < 1e-12);
    }

    #[test]
    fn hourly_sums_match_cumulative_totals() {
        let mut rng = crate::seed::TestRng::new(5);
        let mut state = CampaignState::new(1000.0, 50.0, Strategy::TCpa);
        let mut duals = PlatformDuals::default();
        for hour in 0..24u8 {
            let imps: Vec<Impression> = (0..50)
                .map(|i| {
                    imp(
                        hour as u64 * 100 + i,
                        hour,
                        0.05 + 0.2 * (0.5 + 0.5 * rng.uniform()),
                        0.05 + 0.2 * (0.5 + 0.5 * rng.uniform()),
                        10.0 + 10.0 * (0.5 + 0.5 * rng.uniform()),
                        0.1 + 1.5 * (0.5 + 0.5 * rng.uniform()),
                    )
                })
                .collect();
            roll_hour(&mut state, &mut duals, &imps, hour, 40.0).unwrap();
        }
        let cost_sum: f64 = state.hours.iter().map(|h| h.cost).sum();
        let gmv_sum: f64 = state.hours.iter().map(|h| h.gmv).sum();
        assert_eq!(cost_sum, state.cost);
        assert_eq!(gmv_sum, state.gmv);
        for h in &state.hours {
            assert!(h.won <= h.offered);
            assert!(h.cost >= 0.0 && h.gmv >= 0.0);
        }
    }

    #[test]
    fn rejects_impressions_from_another_hour() {
        let mut state = CampaignState::new(100.0, 50.0, Strategy::TCpa);
        let mut duals = PlatformDuals::default();
        let imps = vec![imp(1, 3, 0.1, 0.1, 10.0, 0.5)];
        let err = roll_hour(&mut state, &mut duals, &imps, 2, 50.0).unwrap_err();
        assert_eq!(err, AuctionError::WrongHour { expected: 2, got: 3 });
    }

    #[test]
    fn deterministic_given_same_stream_and_targets() {
        let imps: Vec<Impression> = (0..100)
            .map(|i| imp(i, 0, 0.1, 0.1, 30.0, 0.2 + (i as f64) * 0.01))
            .collect();
        let run = || {
            let mut state = CampaignState::new(50.0, 40.0, Strategy::TCpa);
            let mut duals = PlatformDuals::default();
            roll_hour(&mut state, &mut duals, &imps, 0, 40.0).unwrap();
            (state.cost, state.gmv, duals)
        };
        assert_eq!(run(), run());
    }
}
