//! Executor for independent per-time-block work.
//!
//! Tasks write disjoint output blocks, so the result does not depend on the
//! number of workers.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Executor {
    #[default]
    Serial,
    Threads(usize),
}

impl Executor {
    /// Calls `f(k, out_k)` for every block `k` of `out` (block length `len`).
    pub fn for_each_block<F>(&self, out: &mut [f64], len: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        debug_assert!(len > 0 && out.len().is_multiple_of(len));
        let nblocks = out.len() / len;
        match *self {
            Executor::Threads(w) if w > 1 && nblocks > 1 => {
                let per = nblocks.div_ceil(w);
                std::thread::scope(|s| {
                    for (c, chunk) in out.chunks_mut(per * len).enumerate() {
                        let f = &f;
                        s.spawn(move || {
                            for (i, blk) in chunk.chunks_mut(len).enumerate() {
                                f(c * per + i, blk);
                            }
                        });
                    }
                });
            }
            _ => {
                for (k, blk) in out.chunks_mut(len).enumerate() {
                    f(k, blk);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threaded_matches_serial() {
        let mut a = vec![0.0; 60];
        let mut b = vec![0.0; 60];
        let f = |k: usize, o: &mut [f64]| o.iter_mut().enumerate().for_each(|(i, v)| *v = (k * 10 + i) as f64);
        Executor::Serial.for_each_block(&mut a, 6, f);
        Executor::Threads(4).for_each_block(&mut b, 6, f);
        assert_eq!(a, b);
    }
}
