//! Choosing which tokens to corrupt.

use std::ops::Range;

use crate::corpus::MASK;
use crate::rng::Rng;

/// Masked positions (sorted) and the ids they held.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskPlan {
    pub positions: Vec<usize>,
    pub originals: Vec<usize>,
}

impl MaskPlan {
    fn from_positions(ids: &[usize], mut positions: Vec<usize>) -> Self {
        positions.sort_unstable();
        let originals = positions.iter().map(|&i| ids[i]).collect();
        MaskPlan { positions, originals }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `ids` with every planned position replaced by [MASK].
    pub fn apply(&self, ids: &[usize]) -> Vec<usize> {
        let mut out = ids.to_vec();
        for &p in &self.positions {
            out[p] = MASK;
        }
        out
    }
}

/// `⌊rate·n⌋`, tolerant of products like `0.29 * 100 = 28.999…`.
pub fn mask_budget(rate: f64, n: usize) -> usize {
    (rate * n as f64 + 1e-9).floor() as usize
}

/// Uniform subset of exactly `⌊rate·|maskable|⌋` of the `maskable` positions.
pub fn sample_mask_single(ids: &[usize], maskable: &[usize], rate: f64, rng: &mut Rng) -> MaskPlan {
    let k = mask_budget(rate, maskable.len());
    let chosen = rng.subset(maskable.len(), k).into_iter().map(|i| maskable[i]).collect();
    MaskPlan::from_positions(ids, chosen)
}

/// Whole-word spans. Repeatedly draw a span length in `1..=max_words` and a
/// uniform start word, then mask the span's not-yet-masked words in order
/// while they fit the token budget `⌊rate·n⌋`. If no word of a span fits and
/// nothing of it was taken, its first free word is masked anyway, so the
/// total overshoots by at most one word.
pub fn sample_mask_span(
    ids: &[usize],
    words: &[Range<usize>],
    rate: f64,
    max_words: usize,
    rng: &mut Rng,
) -> MaskPlan {
    let n: usize = words.iter().map(|w| w.len()).sum();
    let budget = mask_budget(rate, n);
    let mut taken = vec![false; words.len()];
    let mut count = 0;
    let mut positions = Vec::new();
    while count < budget && taken.iter().any(|t| !t) {
        let span = 1 + rng.below(max_words.max(1));
        let start = rng.below(words.len());
        let end = (start + span).min(words.len());
        let mut progressed = false;
        for w in start..end {
            if taken[w] {
                continue;
            }
            let len = words[w].len();
            if count + len <= budget || (!progressed && fits_nowhere(words, &taken, budget - count)) {
                taken[w] = true;
                count += len;
                positions.extend(words[w].clone());
                progressed = true;
                if count >= budget {
                    break;
                }
            } else {
                break;
            }
        }
    }
    MaskPlan::from_positions(ids, positions)
}

/// True when no free word is short enough for the remaining budget.
fn fits_nowhere(words: &[Range<usize>], taken: &[bool], room: usize) -> bool {
    words.iter().zip(taken).all(|(w, &t)| t || w.len() > room)
}
