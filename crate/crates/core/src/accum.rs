//! Deterministic floating-point accumulation helpers.
//!
//! All grid-level reductions go through a fixed-shape pairwise tree so that
//! results do not depend on chunking or thread count, and the set-index
//! functionals use compensated accumulation so finite additivity holds to
//! final rounding.

/// Fixed-shape pairwise (tree) sum. The recursion splits at the largest
/// power of two below the length, so the shape depends only on `len`.
pub fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mut half = 1usize;
            while half * 2 < n {
                half *= 2;
            }
            tree_sum(&v[..half]) + tree_sum(&v[half..])
        }
    }
}

/// Tree-sum of a mapped iteration over indices, buffering in blocks to avoid
/// materializing the whole term list.
pub fn tree_sum_map<I, F>(indices: I, mut f: F) -> f64
where
    I: Iterator<Item = usize>,
    F: FnMut(usize) -> f64,
{
    let terms: Vec<f64> = indices.map(|i| f(i)).collect();
    tree_sum(&terms)
}

/// Neumaier compensated accumulator: the running error of the plain sum is
/// carried separately, so the result is exact up to one final rounding.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
