//! Sequential forward selection.

use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct SfsRound<T> {
    /// Every candidate set tried this round with its error.
    pub tried: Vec<(Vec<T>, f64)>,
    /// The feature added, or `None` when the round stopped the search.
    pub added: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfsReport<T> {
    pub selected: Vec<T>,
    /// Error of `selected`; infinite when nothing was selected.
    pub error: f64,
    pub rounds: Vec<SfsRound<T>>,
}

/// Greedy forward selection: start empty, add the feature whose inclusion
/// gives the lowest error, and stop when the best addition does not
/// strictly lower the error. Ties go to the earlier pool entry.
pub fn sfs<T, F>(pool: &[T], error: F) -> SfsReport<T>
where
    T: Clone + PartialEq + Send + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    let mut remaining: Vec<T> = pool.to_vec();
    let mut selected: Vec<T> = Vec::new();
    let mut current = f64::INFINITY;
    let mut rounds = Vec::new();
    while !remaining.is_empty() {
        let tried: Vec<(Vec<T>, f64)> = remaining
            .par_iter()
            .map(|s| {
                let mut q = selected.clone();
                q.push(s.clone());
                let e = error(&q);
                (q, e)
            })
            .collect();
        let mut best = 0;
        for (i, (_, e)) in tried.iter().enumerate() {
            if *e < tried[best].1 {
                best = i;
            }
        }
        let best_err = tried[best].1;
        if best_err < current {
            let s = remaining.remove(best);
            selected.push(s.clone());
            current = best_err;
            rounds.push(SfsRound { tried, added: Some(s) });
        } else {
            rounds.push(SfsRound { tried, added: None });
            break;
        }
    }
    SfsReport { selected, error: current, rounds }
}
