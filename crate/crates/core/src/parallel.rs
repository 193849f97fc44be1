//! Replica-parallel execution with scheduling-independent results.
//!
//! Workers run on a rayon pool; their outputs are collected by replica index
//! and folded sequentially, so a merge that is associative on exact values
//! gives bit-identical results for any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replica `index`: `seed ^ mix64(index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ mix64(index.wrapping_add(GOLDEN))
}

/// A named sub-stream of a replica seed (environment, walk, ...).
pub fn substream(seed: u64, tag: &str) -> u64 {
    let h = tag
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
        });
    mix64(seed ^ mix64(h))
}

#[derive(Debug, Clone, Copy)]
pub struct Replica {
    pub index: u64,
    pub seed: u64,
}

/// Replicas `0..count` with seeds derived from `seed`.
pub fn replicas(seed: u64, count: u64) -> impl ParallelIterator<Item = Replica> {
    (0..count).into_par_iter().map(move |index| Replica {
        index,
        seed: derive_seed(seed, index),
    })
}

/// Runs `worker` on every replica and folds the results in index order.
///
/// `threads = 0` uses the global rayon pool. On failure, the error for the
/// lowest failing replica index is returned, wrapped with that replica's
/// index and seed for replay.
pub fn parallel_map<T, A, W, M>(
    seed: u64,
    count: u64,
    threads: usize,
    init: A,
    worker: W,
    merge: M,
) -> Result<A>
where
    T: Send,
    A: Send,
    W: Fn(Replica) -> Result<T> + Sync + Send,
    M: Fn(A, T) -> A,
{
    let run = || -> Vec<(Replica, Result<T>)> {
        replicas(seed, count).map(|r| (r, worker(r))).collect()
    };
    let outputs = if threads == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(run)
    };
    let mut acc = init;
    for (replica, out) in outputs {
        match out {
            Ok(v) => acc = merge(acc, v),
            Err(e) => {
                return Err(Error::Replica {
                    index: replica.index,
                    seed: replica.seed,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(acc)
}
