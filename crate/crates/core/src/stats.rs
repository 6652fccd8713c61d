//! Small statistics helpers shared by the Monte Carlo routines.

/// Sample mean and standard error of the mean (zero for fewer than two values).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Streaming pairwise summation: partial sums of equal-sized blocks are merged
/// like a binary counter, which gives pairwise rounding behaviour in O(log n) memory.
#[derive(Debug, Clone, Default)]
pub struct PairwiseSum {
    stack: Vec<(f64, u64)>,
}

impl PairwiseSum {
    pub fn new() -> Self {
        PairwiseSum::default()
    }

    pub fn add(&mut self, x: f64) {
        let mut cur = (x, 1u64);
        while let Some(&(s, n)) = self.stack.last() {
            if n != cur.1 {
                break;
            }
            self.stack.pop();
            cur = (s + cur.0, n * 2);
        }
        self.stack.push(cur);
    }

    pub fn total(&self) -> f64 {
        self.stack.iter().rev().map(|(s, _)| s).sum()
    }
}
