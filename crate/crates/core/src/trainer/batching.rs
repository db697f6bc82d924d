use rand::seq::{IndexedRandom, SliceRandom};

use crate::error::{Error, Result};
use crate::seed;

/// Item indices drawn for one optimizer step, per source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedBatch {
    pub new: Vec<usize>,
    pub replay: Vec<usize>,
}

fn check_even(batch_size: usize, task_index: usize) -> Result<()> {
    if task_index >= 1 && batch_size % 2 == 1 {
        return Err(Error::OddBatch(batch_size));
    }
    Ok(())
}

/// Items per source in a full batch: everything from the new task on the
/// first task or when nothing is replayed, otherwise half and half.
pub fn batch_split(batch_size: usize, task_index: usize, has_replay: bool) -> Result<(usize, usize)> {
    check_even(batch_size, task_index)?;
    if task_index == 0 || !has_replay {
        Ok((batch_size, 0))
    } else {
        Ok((batch_size / 2, batch_size / 2))
    }
}

/// One batch sampled without replacement from each pool.
pub fn mix_minibatch(
    new_pool: &[usize],
    replay_pool: &[usize],
    batch_size: usize,
    task_index: usize,
    seed: u64,
) -> Result<MixedBatch> {
    let (n_new, n_replay) = batch_split(batch_size, task_index, !replay_pool.is_empty())?;
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("mix")]));
    let mut pick = |pool: &[usize], k: usize| {
        let mut v: Vec<usize> = pool.choose_multiple(&mut rng, k.min(pool.len())).copied().collect();
        v.sort_unstable();
        v
    };
    Ok(MixedBatch {
        new: pick(new_pool, n_new),
        replay: pick(replay_pool, n_replay),
    })
}

/// Every batch of one epoch. New-task items are each used once; replay items
/// are drawn in shuffled passes over the replay pool, so none repeats before
/// the pool is exhausted.
pub fn plan_epoch(
    new_pool: &[usize],
    replay_pool: &[usize],
    batch_size: usize,
    task_index: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<MixedBatch>> {
    let (n_new, _) = batch_split(batch_size, task_index, !replay_pool.is_empty())?;
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("epoch-plan"), epoch as u64]));
    let mut order = new_pool.to_vec();
    order.shuffle(&mut rng);
    let mut replay: Vec<usize> = Vec::new();
    let mut batches = Vec::new();
    for chunk in order.chunks(n_new) {
        let mut drawn = Vec::new();
        if task_index >= 1 && !replay_pool.is_empty() {
            while drawn.len() < chunk.len() {
                if replay.is_empty() {
                    replay = replay_pool.to_vec();
                    replay.shuffle(&mut rng);
                }
                drawn.push(replay.pop().unwrap());
            }
        }
        batches.push(MixedBatch {
            new: chunk.to_vec(),
            replay: drawn,
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition() {
        let pool: Vec<usize> = (0..2000).collect();
        let b = mix_minibatch(&pool, &pool, 512, 1, 0).unwrap();
        assert_eq!((b.new.len(), b.replay.len()), (256, 256));
        let b = mix_minibatch(&pool, &[], 512, 0, 0).unwrap();
        assert_eq!((b.new.len(), b.replay.len()), (512, 0));
        assert_eq!(mix_minibatch(&pool, &pool, 512, 1, 7).unwrap(), mix_minibatch(&pool, &pool, 512, 1, 7).unwrap());
        assert!(matches!(mix_minibatch(&pool, &pool, 511, 1, 0), Err(Error::OddBatch(511))));
        assert!(mix_minibatch(&pool, &pool, 511, 0, 0).is_ok());
    }

    #[test]
    fn epoch_covers_new_items_once() {
        let new: Vec<usize> = (0..100).collect();
        let replay: Vec<usize> = (0..30).collect();
        let plan = plan_epoch(&new, &replay, 16, 1, 3, 0).unwrap();
        assert_eq!(plan.len(), 13);
        let mut seen: Vec<usize> = plan.iter().flat_map(|b| b.new.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, new);
        assert!(plan.iter().all(|b| b.new.len() == b.replay.len()));
        let first_pass: Vec<usize> = plan.iter().flat_map(|b| b.replay.clone()).take(30).collect();
        let mut sorted = first_pass.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 30);
    }
}
