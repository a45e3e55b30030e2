//! Byzantine share custody: sweeps over coalition size, thresholds and
//! placements of the coalition among the miners.

use itertools::Itertools;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ScenarioConfig;
use super::run::{run_unchecked, Atomicity};
use crate::channel::Mode;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FairnessCase {
    pub ell: u32,
    pub t: u32,
    pub n: u32,
    /// Indices of the Byzantine miners on each chain.
    pub placement: Vec<u32>,
}

impl FairnessCase {
    pub fn n_node(&self) -> u32 {
        3 * self.ell + 1
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FairnessResult {
    pub case: FairnessCase,
    /// Most distinct shares the coalition of either chain held before
    /// recovery was requested.
    pub max_coalition_shares: u32,
    pub early_recovery: bool,
    /// Both parties decrypted a plaintext matching its committed hash.
    pub both_obtained: bool,
    pub both_swapped: bool,
    pub trace_digest: String,
}

/// Every `(t, n)` with `t > ell`, `n >= t + ell` and `n <= 3 ell + 1`.
pub fn threshold_pairs(ell: u32) -> Vec<(u32, u32)> {
    let n_node = 3 * ell + 1;
    (ell + 1..=n_node)
        .flat_map(|t| (t + ell..=n_node).map(move |n| (t, n)))
        .collect()
}

/// Every placement of `ell` Byzantine miners among `3 ell + 1`, or
/// `samples` seeded ones when `exhaustive` is false.
pub fn placements(ell: u32, exhaustive: bool, samples: usize, seed: u64) -> Vec<Vec<u32>> {
    let n_node = 3 * ell + 1;
    if exhaustive {
        return (0..n_node).combinations(ell as usize).collect();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ u64::from(ell));
    (0..samples)
        .map(|_| {
            let mut p: Vec<u32> = sample(&mut rng, n_node as usize, ell as usize)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            p.sort_unstable();
            p
        })
        .collect()
}

/// Runs one EIE exchange with the case's coalition withholding shares.
pub fn run_case(base: &ScenarioConfig, case: &FairnessCase) -> FairnessResult {
    let mut cfg = base.clone();
    cfg.mode = Mode::EIE;
    cfg.vss.t = case.t;
    cfg.vss.n = case.n;
    cfg.byzantine.ell = case.ell;
    cfg.byzantine.n_node = case.n_node();
    cfg.byzantine.placement = Some(case.placement.clone());
    let m = run_unchecked(&cfg).metrics;
    FairnessResult {
        case: case.clone(),
        max_coalition_shares: m.coalition.iter().map(|c| c.max_before_recover).max().unwrap_or(0),
        early_recovery: m.coalition.iter().any(|c| c.early_recovery),
        both_obtained: !m.parties.is_empty() && m.parties.iter().all(|p| p.report.obtained == Some(true)),
        both_swapped: m.atomicity.get(&Atomicity::BothSwapped) == Some(&(m.outcomes.len() as u64)),
        trace_digest: m.trace_digest,
    }
}

pub fn run_cases(base: &ScenarioConfig, cases: &[FairnessCase]) -> Vec<FairnessResult> {
    cases.par_iter().map(|c| run_case(base, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_pairs_respect_the_bounds() {
        assert_eq!(threshold_pairs(1), vec![(2, 3), (2, 4), (3, 4)]);
        for ell in 1..=5 {
            for (t, n) in threshold_pairs(ell) {
                assert!(t > ell && n >= t + ell && n <= 3 * ell + 1);
            }
        }
    }

    #[test]
    fn exhaustive_placements_count_binomially() {
        assert_eq!(placements(2, true, 0, 0).len(), 21);
        assert_eq!(placements(3, true, 0, 0).len(), 120);
        let s = placements(4, false, 5, 9);
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|p| p.len() == 4 && p.iter().all(|i| *i < 13)));
    }
}
