//! Choice of the energy-harvesting pairs by summed SLER.

use thiserror::Error;

use crate::beamforming::{self, BeamError};
use crate::channel::{assemble_effective, ChannelError, ChannelSet, Partition, SystemConfig};
use crate::optimizer::EnergyModel;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("need 1 <= k1 < k, got k = {k}, k1 = {k1}")]
    InvalidSize { k: usize, k1: usize },
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

pub type Result<T> = std::result::Result<T, SelectionError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub eh_set: Vec<usize>,
    pub id_set: Vec<usize>,
    pub sler_sum: f64,
    /// Every candidate in lexicographic order with its score.
    pub per_candidate_scores: Vec<(Vec<usize>, f64)>,
}

impl SelectionResult {
    pub fn partition(&self) -> Partition {
        Partition::new(self.eh_set.len() + self.id_set.len(), self.eh_set.clone(), self.id_set.clone())
            .expect("selection always yields a valid partition")
    }
}

/// All `k1`-subsets of `0..k` in lexicographic order.
pub fn combinations(k: usize, k1: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k1 > k {
        return out;
    }
    let mut idx: Vec<usize> = (0..k1).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k1).rev().find(|&p| idx[p] != p + k - k1) else {
            return out;
        };
        idx[pos] += 1;
        for q in pos + 1..k1 {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Sum of the members' maximal SLER values at required harvested energy `e_bar`.
pub fn candidate_score(channels: &ChannelSet, config: &SystemConfig, eh: &[usize], e_bar: f64) -> Result<f64> {
    let partition = Partition::from_eh(channels.k(), eh.to_vec())?;
    let eff = assemble_effective(channels, &partition)?;
    let target = EnergyModel::from_config(config, eh.len()).transferred(e_bar);
    let mut total = 0.0;
    for (h11, h21) in eff.h11.iter().zip(&eff.h21) {
        total += beamforming::sler_value(h11, h21, target, config.p_max, eh.len())?;
    }
    Ok(total)
}

/// Score every `C(K, K1)` candidate and keep the best; ties go to the
/// lexicographically smallest set.
pub fn select_eh_set(channels: &ChannelSet, config: &SystemConfig, e_bar: f64) -> Result<SelectionResult> {
    let (k, k1) = (channels.k(), config.k1);
    if k1 == 0 || k1 >= k {
        return Err(SelectionError::InvalidSize { k, k1 });
    }
    let mut scores = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (n, cand) in combinations(k, k1).into_iter().enumerate() {
        let score = candidate_score(channels, config, &cand, e_bar)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((n, score));
        }
        scores.push((cand, score));
    }
    let (n, sler_sum) = best.expect("at least one candidate");
    let eh_set = scores[n].0.clone();
    let id_set = (0..k).filter(|x| !eh_set.contains(x)).collect();
    Ok(SelectionResult { eh_set, id_set, sler_sum, per_candidate_scores: scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use proptest::prelude::*;

    #[test]
    fn combination_counts_and_order() {
        assert_eq!(combinations(4, 2), vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(combinations(5, 4).len(), 5);
        assert_eq!(combinations(3, 1), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn two_pairs_pick_larger_sler() {
        let cfg = SystemConfig::default();
        let ch = generate_channels(&cfg, 4).unwrap();
        let r = select_eh_set(&ch, &cfg, 5e-5).unwrap();
        let s0 = candidate_score(&ch, &cfg, &[0], 5e-5).unwrap();
        let s1 = candidate_score(&ch, &cfg, &[1], 5e-5).unwrap();
        assert_eq!(r.eh_set, if s1 > s0 { vec![1] } else { vec![0] });
        assert_eq!(r.sler_sum, s0.max(s1));
    }

    #[test]
    fn scores_six_candidates_for_four_two() {
        let cfg = SystemConfig { k: 4, k1: 2, ..SystemConfig::default() };
        let ch = generate_channels(&cfg, 0).unwrap();
        let r = select_eh_set(&ch, &cfg, 1e-4).unwrap();
        assert_eq!(r.per_candidate_scores.len(), 6);
        assert!(r.per_candidate_scores.iter().all(|(_, s)| *s > 0.0));
        let best = r.per_candidate_scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.sler_sum, best);
        assert_eq!(r.id_set.len(), 2);
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = SystemConfig { k1: 0, ..SystemConfig::default() };
        let ch = generate_channels(&SystemConfig::default(), 0).unwrap();
        assert!(select_eh_set(&ch, &cfg, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn relabeling_permutes_the_choice(trial in 0u64..1000, shift in 1usize..4) {
            let cfg = SystemConfig { k: 4, k1: 2, ..SystemConfig::default() };
            let ch = generate_channels(&cfg, trial).unwrap();
            // new label a is old label perm[a]
            let perm: Vec<usize> = (0..4).map(|a| (a + shift) % 4).collect();
            let moved = ch.permuted(&perm);
            let r = select_eh_set(&ch, &cfg, 1e-4).unwrap();
            let rp = select_eh_set(&moved, &cfg, 1e-4).unwrap();
            let mut mapped: Vec<usize> = rp.eh_set.iter().map(|&a| perm[a]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, r.eh_set);
            prop_assert!((rp.sler_sum - r.sler_sum).abs() <= 1e-9 * r.sler_sum);
        }
    }
}
