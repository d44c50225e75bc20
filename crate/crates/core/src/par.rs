//! Order-preserving parallel map over a bounded worker pool.

use rayon::prelude::*;

/// Map `f` over `items` on `jobs` workers. Output order is input order
/// regardless of `jobs`; `jobs <= 1` runs inline.
pub fn map_ordered<T, U, F>(items: &[T], jobs: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_jobs() {
        let v: Vec<u64> = (0..500).collect();
        let a = map_ordered(&v, 1, |i, x| x * 3 + i as u64);
        let b = map_ordered(&v, 4, |i, x| x * 3 + i as u64);
        assert_eq!(a, b);
    }
}
