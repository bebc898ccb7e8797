//! Deterministic replica-parallel execution.
//!
//! Replicas are grouped into fixed blocks. Each block is folded into a fresh
//! accumulator by a single worker, in replica order, and block accumulators
//! are merged in block order. Since every replica draws from its own stream,
//! the result depends only on the task and the replica count, never on the
//! number of workers or on scheduling.

use rayon::prelude::*;

use crate::error::{LabError, Result};

pub const BLOCK: u64 = 1024;
const BLOCKS_PER_ROUND: u64 = 64;

pub trait ReplicaTask: Sync {
    type Acc: Send;
    /// Per-worker scratch state (samplers, buffers).
    type Worker;

    fn new_acc(&self) -> Self::Acc;
    fn new_worker(&self) -> Result<Self::Worker>;
    fn run(&self, worker: &mut Self::Worker, replica: u64, acc: &mut Self::Acc) -> Result<()>;
    fn merge(&self, into: &mut Self::Acc, from: Self::Acc);
}

fn run_block<T: ReplicaTask>(task: &T, worker: &mut T::Worker, block: u64, replicas: u64) -> Result<T::Acc> {
    let mut acc = task.new_acc();
    let end = ((block + 1) * BLOCK).min(replicas);
    for r in block * BLOCK..end {
        task.run(worker, r, &mut acc)?;
    }
    Ok(acc)
}

/// Runs replicas `0..replicas` on `workers` threads.
pub fn run_replicas<T: ReplicaTask>(task: &T, replicas: u64, workers: usize) -> Result<T::Acc> {
    // Surface construction errors once, before any thread starts.
    let mut probe = task.new_worker()?;
    let blocks = replicas.div_ceil(BLOCK);
    let mut total = task.new_acc();
    if workers <= 1 {
        for b in 0..blocks {
            let acc = run_block(task, &mut probe, b, replicas)?;
            task.merge(&mut total, acc);
        }
        return Ok(total);
    }
    drop(probe);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::ResourceGate(format!("cannot start {workers} workers: {e}")))?;
    let mut start = 0;
    while start < blocks {
        let end = (start + BLOCKS_PER_ROUND * workers as u64).min(blocks);
        let round: Vec<Result<T::Acc>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map_init(
                    || task.new_worker().expect("worker construction succeeded once"),
                    |w, b| run_block(task, w, b, replicas),
                )
                .collect()
        });
        for acc in round {
            task.merge(&mut total, acc?);
        }
        start = end;
    }
    Ok(total)
}
