//! Fixed-size worker pool over a shared job queue.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::Mutex;
use std::thread;

/// Runs `work` on every job with `workers` threads. `collect` sees each
/// `(job index, result)` on the calling thread, in completion order.
pub fn run_pool<J, R, W, C>(jobs: Vec<J>, workers: usize, work: W, mut collect: C)
where
    J: Send,
    R: Send,
    W: Fn(&J) -> R + Sync,
    C: FnMut(usize, J, R),
{
    if jobs.is_empty() {
        return;
    }
    let workers = workers.clamp(1, jobs.len());
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<VecDeque<_>>());
    let (tx, rx) = mpsc::channel();
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (queue, work) = (&queue, &work);
            s.spawn(move || loop {
                let next = queue.lock().unwrap_or_else(|e| e.into_inner()).pop_front();
                let Some((i, job)) = next else { break };
                let r = work(&job);
                if tx.send((i, job, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, job, r) in rx {
            collect(i, job, r);
        }
    });
}
