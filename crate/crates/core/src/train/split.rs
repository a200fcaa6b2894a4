use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `(train, validation)` index lists, both ascending.
pub type Fold = (Vec<usize>, Vec<usize>);

/// Stratified k-fold split. Each class is shuffled and dealt round-robin
/// over the folds, continuing where the previous class stopped so fold
/// sizes differ by at most one.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > labels.len() {
        return Err(Error::Validation(format!("cannot split {} items into {k} folds", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut fold_of = vec![0usize; labels.len()];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| fold_of[i] == f);
            (train, val)
        })
        .collect())
}
