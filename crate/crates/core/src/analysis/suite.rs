//! Seeded random instances for the verifier and ratio suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::workload::{Instance, JobSize};

use super::oracle::MAX_JOBS;

/// Between 1 and `max_jobs` jobs with sizes uniform on `[0.1, 2]` and
/// releases uniform on `[0, 2]`. The same seed always gives the same
/// instance.
pub fn random_instance(seed: u64, max_jobs: usize) -> Result<Instance> {
    if max_jobs == 0 || max_jobs > MAX_JOBS {
        return Err(Error::InvalidParameter(format!(
            "max_jobs must lie in 1..={MAX_JOBS}, got {max_jobs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(1..=max_jobs);
    let jobs = (0..count)
        .map(|_| {
            let release = rng.gen_range(0.0..=2.0);
            let size = rng.gen_range(0.1..=2.0);
            (release, JobSize::Finite(size))
        })
        .collect();
    Instance::from_releases(jobs)
}

/// Maps `f` over `items` on all available cores, keeping the input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        assert_eq!(random_instance(7, 4).unwrap(), random_instance(7, 4).unwrap());
        assert_ne!(random_instance(7, 4).unwrap(), random_instance(8, 4).unwrap());
    }

    #[test]
    fn within_ranges() {
        for seed in 0..200 {
            let inst = random_instance(seed, 4).unwrap();
            assert!((1..=4).contains(&inst.len()));
            assert!(inst.validate().is_empty());
            for j in inst.jobs() {
                assert!((0.0..=2.0).contains(&j.release));
                assert!((0.1..=2.0).contains(&j.size.finite().unwrap()));
            }
        }
        assert!(random_instance(1, 0).is_err());
        assert!(random_instance(1, 6).is_err());
    }

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<u64> = (0..37).collect();
        assert_eq!(par_map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(par_map(&Vec::<u64>::new(), |x| *x).is_empty());
    }
}
