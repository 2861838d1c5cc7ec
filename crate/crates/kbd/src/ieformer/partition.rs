//! Entropy-driven cost partitioning and the isotonic embedding.

use super::IeformerError;
use serde::{Deserialize, Serialize};

/// Cost axis split into N contiguous segments by strictly increasing
/// boundaries b0 < b1 < ... < bN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    boundaries: Vec<f64>,
}

impl PartitionSpec {
    pub fn new(boundaries: Vec<f64>) -> Result<Self, IeformerError> {
        if boundaries.len() < 3 {
            return Err(IeformerError::InvalidPartition(format!(
                "need at least 2 segments, got {} boundaries",
                boundaries.len()
            )));
        }
        for w in boundaries.windows(2) {
            if !(w[1] > w[0]) {
                return Err(IeformerError::InvalidPartition(format!(
                    "boundaries not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(IeformerError::InvalidPartition("non-finite boundary".into()));
        }
        Ok(PartitionSpec { boundaries })
    }

    pub fn equal_width(min: f64, max: f64, segments: usize) -> Result<Self, IeformerError> {
        if !(max > min) {
            return Err(IeformerError::InvalidPartition(format!(
                "degenerate range [{min}, {max}]"
            )));
        }
        let n = segments;
        let width = (max - min) / n as f64;
        let mut boundaries: Vec<f64> = (0..=n).map(|k| min + width * k as f64).collect();
        // Guard the last boundary against rounding drift.
        boundaries[n] = max;
        PartitionSpec::new(boundaries)
    }

    pub fn segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn min(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn max(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    /// Width of segment `k` (0-based).
    pub fn step(&self, k: usize) -> f64 {
        self.boundaries[k + 1] - self.boundaries[k]
    }

    pub fn steps(&self) -> Vec<f64> {
        (0..self.segments()).map(|k| self.step(k)).collect()
    }

    /// Segment index for a cost; values outside the range clamp into the
    /// first or last segment.
    pub fn bin_of(&self, cost: f64) -> usize {
        let n = self.segments();
        if cost <= self.boundaries[1] {
            return 0;
        }
        if cost > self.boundaries[n - 1] {
            return n - 1;
        }
        // First k with cost <= b_{k+1}.
        let mut lo = 1usize;
        let mut hi = n - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if cost <= self.boundaries[mid + 1] {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }
}

/// Cumulative-coverage encoding of a cost over the partition:
/// P_k = clamp((cost - b_k) / step_k, 0, 1). Fully covered segments read 1,
/// at most one segment is fractional, segments beyond the cost read 0.
pub fn isotonic_embed(cost: f64, spec: &PartitionSpec) -> Vec<f64> {
    debug_assert!(cost >= 0.0);
    (0..spec.segments())
        .map(|k| ((cost - spec.boundaries()[k]) / spec.step(k)).clamp(0.0, 1.0))
        .collect()
}

/// Total partition entropy plus how many empty campaigns were skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionEntropy {
    pub total: f64,
    pub skipped_campaigns: usize,
}

/// Sum over campaigns of the log_N-base sample entropy across segments;
/// each campaign contributes a value in [0, 1].
pub fn entropy_of_partition(campaign_costs: &[Vec<f64>], spec: &PartitionSpec) -> PartitionEntropy {
    let n = spec.segments();
    let log_n = (n as f64).ln();
    let mut total = 0.0;
    let mut skipped = 0;
    for costs in campaign_costs {
        if costs.is_empty() {
            skipped += 1;
            continue;
        }
        let mut counts = vec![0usize; n];
        for c in costs {
            counts[spec.bin_of(*c)] += 1;
        }
        let z = costs.len() as f64;
        let mut h = 0.0;
        for cnt in counts {
            if cnt > 0 {
                let p = cnt as f64 / z;
                h -= p * (p.ln() / log_n);
            }
        }
        total += h;
    }
    PartitionEntropy {
        total,
        skipped_campaigns: skipped,
    }
}

/// Result of [`fit_partition_gla`].
#[derive(Clone, Debug)]
pub struct PartitionFit {
    pub spec: PartitionSpec,
    pub entropy: f64,
    /// Entropy of the equal-width initialization, for reference.
    pub equal_width_entropy: f64,
    pub sweeps: usize,
    pub warnings: Vec<String>,
}

// Sorted per-campaign cost arrays; entropy evaluation is a few binary
// searches per segment.
struct SortedCampaigns {
    costs: Vec<Vec<f64>>,
    log_n: f64,
}

impl SortedCampaigns {
    fn count_le(sorted: &[f64], x: f64) -> usize {
        sorted.partition_point(|v| *v <= x)
    }

    fn entropy(&self, boundaries: &[f64]) -> f64 {
        let n = boundaries.len() - 1;
        let mut total = 0.0;
        for costs in &self.costs {
            let z = costs.len() as f64;
            let mut h = 0.0;
            let mut prev = 0usize;
            for k in 0..n {
                let upto = if k == n - 1 {
                    costs.len()
                } else {
                    Self::count_le(costs, boundaries[k + 1])
                };
                let cnt = upto - prev;
                prev = upto;
                if cnt > 0 {
                    let p = cnt as f64 / z;
                    h -= p * (p.ln() / self.log_n);
                }
            }
            total += h;
        }
        total
    }
}

/// Alternating assignment / boundary-update search for the partition that
/// maximizes total entropy. Each interior boundary is line-searched over the
/// midpoints between adjacent distinct sample values inside its corridor;
/// ties pick the lowest boundary value. The result never falls below the
/// equal-width initialization.
pub fn fit_partition_gla(
    campaign_costs: &[Vec<f64>],
    segments: usize,
    max_iters: usize,
    tol: f64,
) -> Result<PartitionFit, IeformerError> {
    if segments < 2 {
        return Err(IeformerError::InvalidPartition(format!(
            "need at least 2 segments, got {segments}"
        )));
    }
    let mut warnings = Vec::new();
    let mut all: Vec<f64> = Vec::new();
    for (i, costs) in campaign_costs.iter().enumerate() {
        if costs.is_empty() {
            warnings.push(format!("campaign {i} has no samples, skipped"));
            continue;
        }
        all.extend_from_slice(costs);
    }
    if all.len() < segments {
        return Err(IeformerError::InsufficientData(format!(
            "{} samples cannot fill {segments} segments",
            all.len()
        )));
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct: Vec<f64> = Vec::with_capacity(all.len());
    for v in &all {
        if distinct.last() != Some(v) {
            distinct.push(*v);
        }
    }
    if distinct.len() < 2 {
        return Err(IeformerError::InsufficientData(
            "all cost samples identical; no partition exists".into(),
        ));
    }
    let mut n = segments;
    if distinct.len() < n {
        warnings.push(format!(
            "only {} distinct costs: reducing segment count from {n} to {}",
            distinct.len(),
            distinct.len()
        ));
        n = distinct.len();
    }

    let (min, max) = (distinct[0], *distinct.last().unwrap());
    let sorted = SortedCampaigns {
        costs: campaign_costs
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| {
                let mut s = c.clone();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                s
            })
            .collect(),
        log_n: (n as f64).ln(),
    };

    let gaps: Vec<f64> = distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

    let equal_width = PartitionSpec::equal_width(min, max, n)?.boundaries.clone();
    let equal_width_entropy = sorted.entropy(&equal_width);

    // Second start: boundaries at evenly spaced gap midpoints (equal
    // frequency over distinct values). Coordinate ascent is a local search,
    // so a spread-out start guards against poor equal-width basins.
    let mut equal_freq = Vec::with_capacity(n + 1);
    equal_freq.push(min);
    let mut prev_idx = None;
    for i in 1..n {
        let mut idx = (i * gaps.len()) / n;
        if let Some(p) = prev_idx {
            if idx <= p {
                idx = p + 1;
            }
        }
        let idx = idx.min(gaps.len() - 1);
        prev_idx = Some(idx);
        equal_freq.push(gaps[idx]);
    }
    equal_freq.push(max);

    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    for start in [equal_width, equal_freq] {
        let run = coordinate_ascent(start, &sorted, &distinct, max_iters, tol);
        let better = match &best {
            None => true,
            Some((_, h, _)) => run.1 > *h,
        };
        if better {
            best = Some(run);
        }
    }
    let (boundaries, entropy, sweeps) = best.expect("at least one start");

    Ok(PartitionFit {
        spec: PartitionSpec::new(boundaries)?,
        entropy,
        equal_width_entropy,
        sweeps,
        warnings,
    })
}

fn coordinate_ascent(
    mut boundaries: Vec<f64>,
    sorted: &SortedCampaigns,
    distinct: &[f64],
    max_iters: usize,
    tol: f64,
) -> (Vec<f64>, f64, usize) {
    let n = boundaries.len() - 1;
    let mut best_entropy = sorted.entropy(&boundaries);
    let mut sweeps = 0;
    for _ in 0..max_iters {
        sweeps += 1;
        let before = best_entropy;
        for bi in 1..n {
            let lo = boundaries[bi - 1];
            let hi = boundaries[bi + 1];
            // Split points: midpoints over [lo, inner distinct values, hi].
            let mut rail = vec![lo];
            rail.extend(distinct.iter().copied().filter(|v| *v > lo && *v < hi));
            rail.push(hi);
            let mut best_pos = boundaries[bi];
            for pair in rail.windows(2) {
                let cand = 0.5 * (pair[0] + pair[1]);
                if cand <= lo || cand >= hi {
                    continue;
                }
                boundaries[bi] = cand;
                let h = sorted.entropy(&boundaries);
                if h > best_entropy + 1e-15 || ((h - best_entropy).abs() <= 1e-15 && cand < best_pos) {
                    best_entropy = h;
                    best_pos = cand;
                }
            }
            boundaries[bi] = best_pos;
        }
        if best_entropy - before < tol {
            break;
        }
    }
    (boundaries, best_entropy, sweeps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_is_one_for_uniform_samples() {
        let spec = PartitionSpec::new(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        // Two samples per segment.
        let costs = vec![vec![0.5, 0.6, 1.5, 1.6, 2.5, 2.6, 3.5, 3.6]];
        let e = entropy_of_partition(&costs, &spec);
        assert!((e.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_zero_when_one_bin_holds_everything() {
        let spec = PartitionSpec::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let costs = vec![vec![0.1, 0.2, 0.3]];
        assert_eq!(entropy_of_partition(&costs, &spec).total, 0.0);
    }

    #[test]
    fn entropy_of_75_25_split() {
        let spec = PartitionSpec::new(vec![0.0, 1.0, 2.0]).unwrap();
        let costs = vec![vec![0.1, 0.2, 0.3, 1.5]];
        let expect = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((entropy_of_partition(&costs, &spec).total - expect).abs() < 1e-12);
        assert!((expect - 0.8113).abs() < 1e-4);
    }

    #[test]
    fn empty_campaigns_are_skipped_and_counted() {
        let spec = PartitionSpec::new(vec![0.0, 1.0, 2.0]).unwrap();
        let costs = vec![vec![], vec![0.5, 1.5]];
        let e = entropy_of_partition(&costs, &spec);
        assert_eq!(e.skipped_campaigns, 1);
        assert!((e.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotonic_embed_reference_points() {
        let spec = PartitionSpec::new(vec![0.0, 10.0, 20.0]).unwrap();
        assert_eq!(isotonic_embed(20.0, &spec), vec![1.0, 1.0]);
        assert_eq!(isotonic_embed(0.0, &spec), vec![0.0, 0.0]);
        assert_eq!(isotonic_embed(15.0, &spec), vec![1.0, 0.5]);
        assert_eq!(isotonic_embed(1000.0, &spec), vec![1.0, 1.0]);
    }

    #[test]
    fn isotonic_embed_has_cumulative_coverage_shape() {
        let spec = PartitionSpec::new(vec![0.0, 5.0, 7.0, 20.0, 21.0]).unwrap();
        let p = isotonic_embed(8.0, &spec);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 1.0);
        assert!(p[2] > 0.0 && p[2] < 1.0);
        assert_eq!(p[3], 0.0);
    }

    #[test]
    fn gla_keeps_an_already_uniform_equal_width_solution() {
        // Samples uniform over 2 equal-width bins; boundary at the midpoint
        // is already optimal.
        let costs = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let fit = fit_partition_gla(&costs, 2, 20, 1e-9).unwrap();
        assert!((fit.entropy - 1.0).abs() < 1e-12);
        assert!((fit.spec.boundaries()[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn gla_beats_equal_width_on_skewed_data() {
        // Log-normal-ish skew via squared uniforms.
        let mut rng = crate::seed::TestRng::new(21);
        let costs: Vec<f64> = (0..300)
            .map(|_| {
                let u = 0.5 + 0.5 * rng.uniform();
                (10.0 * u * u * u).exp().min(5000.0) * 0.01 + 0.01
            })
            .collect();
        let fit = fit_partition_gla(&[costs], 8, 50, 1e-9).unwrap();
        assert!(
            fit.entropy >= fit.equal_width_entropy,
            "{} < {}",
            fit.entropy,
            fit.equal_width_entropy
        );
        assert!(fit.entropy > fit.equal_width_entropy + 0.05, "skew should leave headroom");
    }

    /// Exhaustive reference: best entropy over every way to place N-1
    /// interior boundaries between adjacent distinct values.
    pub(super) fn exhaustive_best_entropy(campaign_costs: &[Vec<f64>], segments: usize) -> f64 {
        let mut distinct: Vec<f64> = campaign_costs.iter().flatten().copied().collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        let gaps: Vec<f64> = distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let min = distinct[0];
        let max = *distinct.last().unwrap();
        let mut best = f64::NEG_INFINITY;
        let k = segments - 1;
        let mut choice: Vec<usize> = (0..k).collect();
        if gaps.len() < k {
            return f64::NEG_INFINITY;
        }
        loop {
            let mut boundaries = Vec::with_capacity(segments + 1);
            boundaries.push(min);
            boundaries.extend(choice.iter().map(|i| gaps[*i]));
            boundaries.push(max);
            let spec = PartitionSpec::new(boundaries).unwrap();
            let h = entropy_of_partition(campaign_costs, &spec).total;
            if h > best {
                best = h;
            }
            // Next combination of `k` gap indices.
            let mut i = k;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if choice[i] != i + gaps.len() - k {
                    choice[i] += 1;
                    for j in i + 1..k {
                        choice[j] = choice[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn gla_matches_exhaustive_optimum_on_small_instances() {
        let mut rng = crate::seed::TestRng::new(33);
        for case in 0..5u64 {
            let m = 12 + (case as usize % 8);
            let costs: Vec<f64> = (0..m)
                .map(|_| (rng.uniform() * 50.0).abs() + 1.0)
                .collect();
            let fit = fit_partition_gla(&[costs.clone()], 4, 60, 1e-12).unwrap();
            let best = exhaustive_best_entropy(&[costs], 4);
            assert!(
                (fit.entropy - best).abs() < 1e-9,
                "case {case}: gla {} vs exhaustive {}",
                fit.entropy,
                best
            );
        }
    }

    #[test]
    fn gla_reduces_segments_when_distinct_values_run_out() {
        let costs = vec![vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]];
        let fit = fit_partition_gla(&costs, 5, 20, 1e-9).unwrap();
        assert_eq!(fit.spec.segments(), 3);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn gla_rejects_degenerate_input() {
        assert!(fit_partition_gla(&[vec![1.0, 1.0, 1.0]], 2, 10, 1e-9).is_err());
        assert!(fit_partition_gla(&[vec![1.0]], 2, 10, 1e-9).is_err());
    }
}
