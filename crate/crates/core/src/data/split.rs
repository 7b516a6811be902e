//! Stratified k-fold splitting.

use crate::error::{invalid, Result};
use crate::tensor::Prng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `0..labels.len()` into `k` folds. Each class is shuffled and dealt
/// round-robin, continuing the dealer position across classes so fold sizes
/// stay balanced. Falls back to an unstratified deal (with a warning) when
/// some class has fewer than `k` members.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = labels.len();
    if k < 2 {
        return invalid(format!("k-fold needs k >= 2, got {k}"));
    }
    if k > n {
        return invalid(format!("cannot split {n} samples into {k} folds"));
    }
    let mut rng = Prng::new(seed).derive(0x6b66_6f6c64);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups.retain(|g| !g.is_empty());
    if groups.iter().any(|g| g.len() < k) {
        log::warn!("a class has fewer than {k} members; falling back to unstratified folds");
        groups = vec![(0..n).collect()];
    }
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut dealer = 0;
    for g in &mut groups {
        rng.shuffle(g);
        for &i in g.iter() {
            tests[dealer % k].push(i);
            dealer += 1;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            let train = (0..n).filter(|&i| !in_test[i]).collect();
            Fold { train, test }
        })
        .collect())
}
