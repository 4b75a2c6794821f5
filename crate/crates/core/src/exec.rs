//! Execution-strategy helpers.
//!
//! Heavy loops in this crate are written against the helpers below instead of
//! calling rayon directly. With the `parallel` feature enabled (the default)
//! they fan work out over the rayon pool; without it they degrade to plain
//! sequential loops. [`sequential`] additionally forces sequential execution
//! at runtime for the duration of a closure, which is what the benchmark
//! suite uses to compare both strategies within one binary.
//!
//! Every call site is structured so that each work item owns a disjoint slice
//! of the output and performs its writes in a fixed order. That makes results
//! bitwise identical across thread counts and across the two strategies.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with all crate-internal parallel helpers forced to sequential
/// execution on the current thread, restoring the previous mode afterwards.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    FORCE_SEQUENTIAL.with(|flag| {
        let prev = flag.replace(true);
        let out = f();
        flag.set(prev);
        out
    })
}

/// True when the current thread should avoid parallel dispatch.
pub(crate) fn force_sequential() -> bool {
    FORCE_SEQUENTIAL.with(Cell::get)
}

/// Splits `data` into consecutive chunks of `chunk_len` elements and invokes
/// `f(chunk_index, chunk)` for each, in parallel when available. The final
/// chunk may be shorter. `chunk_len` must be non-zero.
pub(crate) fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(chunk_len > 0, "chunk_len must be non-zero");
    #[cfg(feature = "parallel")]
    {
        if !force_sequential() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, chunk)| f(i, chunk));
            return;
        }
    }
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Evaluates `f(0..n)` and collects the results in index order, in parallel
/// when available.
pub(crate) fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !force_sequential() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_restores_previous_mode() {
        assert!(!force_sequential());
        sequential(|| {
            assert!(force_sequential());
            sequential(|| assert!(force_sequential()));
            assert!(force_sequential());
        });
        assert!(!force_sequential());
    }

    #[test]
    fn for_each_chunk_covers_all_elements() {
        let mut data = vec![0u32; 10];
        for_each_chunk(&mut data, 4, |i, chunk| {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v = (i * 4 + j) as u32;
            }
        });
        let expect: Vec<u32> = (0..10).collect();
        assert_eq!(data, expect);
    }

    #[test]
    fn map_collect_preserves_order() {
        let out = map_collect(7, |i| i * i);
        assert_eq!(out, vec![0, 1, 4, 9, 16, 25, 36]);
    }

    #[test]
    fn strategies_agree() {
        let par = {
            let mut d = vec![0f32; 64];
            for_each_chunk(&mut d, 8, |i, c| c.iter_mut().for_each(|v| *v = i as f32));
            d
        };
        let seq = sequential(|| {
            let mut d = vec![0f32; 64];
            for_each_chunk(&mut d, 8, |i, c| c.iter_mut().for_each(|v| *v = i as f32));
            d
        });
        assert_eq!(par, seq);
    }
}
