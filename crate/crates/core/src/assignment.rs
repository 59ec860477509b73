//! Gated linear assignment.
//!
//! [`solve`] runs the O(n²m) shortest-augmenting-path form of the Hungarian
//! method with row/column potentials. Entries at or above the gate are
//! replaced by a finite sentinel large enough that the solver first maximises
//! the number of admissible pairs and then minimises their total cost;
//! sentinel pairs are dropped afterwards. [`solve_bruteforce`] enumerates
//! every injective map and is the test oracle for the same contract.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Largest `min(rows, cols)` accepted by [`solve_bruteforce`].
pub const BRUTEFORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentResult {
    /// `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl AssignmentResult {
    fn from_matches(mut matches: Vec<(usize, usize)>, rows: usize, cols: usize) -> Self {
        matches.sort_unstable();
        let mut row_used = vec![false; rows];
        let mut col_used = vec![false; cols];
        for &(r, c) in &matches {
            row_used[r] = true;
            col_used[c] = true;
        }
        Self {
            matches,
            unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
            unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
        }
    }

    pub fn total_cost(&self, cost: &Matrix) -> f64 {
        self.matches.iter().map(|&(r, c)| cost[(r, c)]).sum()
    }
}

fn check_finite(cost: &Matrix) -> Result<()> {
    for &v in cost.as_slice() {
        // +inf is a legitimate "forbidden" marker; NaN and -inf are upstream faults.
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(Error::NonFinite("assignment cost"));
        }
    }
    Ok(())
}

#[inline]
fn admissible(v: f64, gate: f64) -> bool {
    v < gate
}

/// Optimal gated assignment.
///
/// Among all assignments that use only entries `< gate`, returns one with the
/// largest number of pairs and, among those, the smallest total cost.
pub fn solve(cost: &Matrix, gate: f64) -> Result<AssignmentResult> {
    if gate.is_nan() {
        return Err(Error::NonFinite("assignment gate"));
    }
    check_finite(cost)?;
    let (rows, cols) = (cost.rows(), cost.cols());
    if rows == 0 || cols == 0 {
        return Ok(AssignmentResult::from_matches(Vec::new(), rows, cols));
    }

    let max_abs = cost
        .as_slice()
        .iter()
        .filter(|&&v| admissible(v, gate))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !max_abs.is_finite() {
        return Err(Error::NonFinite("assignment cost"));
    }
    let n = rows.min(cols);
    // Any swap of one admissible pair for one sentinel pair must cost more than
    // the largest possible difference between admissible totals.
    let sentinel = 2.0 * (n as f64 + 1.0) * (max_abs + 1.0);

    let transposed = rows > cols;
    let (n_rows, n_cols) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |r: usize, c: usize| -> f64 {
        let v = if transposed { cost[(c, r)] } else { cost[(r, c)] };
        if admissible(v, gate) {
            v
        } else {
            sentinel
        }
    };

    let assigned = hungarian_rect(n_rows, n_cols, at);
    let matches = assigned
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .filter(|&(r, c)| admissible(cost[(r, c)], gate))
        .collect();
    Ok(AssignmentResult::from_matches(matches, rows, cols))
}

/// Hungarian method for `n ≤ m`; returns the column assigned to each row.
fn hungarian_rect(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    // 1-based arrays with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Exhaustive oracle with the same contract as [`solve`].
pub fn solve_bruteforce(cost: &Matrix, gate: f64) -> Result<AssignmentResult> {
    check_finite(cost)?;
    let (rows, cols) = (cost.rows(), cost.cols());
    let small = rows.min(cols);
    if small > BRUTEFORCE_LIMIT {
        return Err(Error::OracleLimit {
            limit: BRUTEFORCE_LIMIT,
            actual: small,
        });
    }
    if small == 0 {
        return Ok(AssignmentResult::from_matches(Vec::new(), rows, cols));
    }
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |r: usize, c: usize| if transposed { cost[(c, r)] } else { cost[(r, c)] };

    struct Search<'a, F: Fn(usize, usize) -> f64> {
        n: usize,
        m: usize,
        gate: f64,
        at: &'a F,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(usize, f64, Vec<usize>)>,
    }

    impl<F: Fn(usize, usize) -> f64> Search<'_, F> {
        fn run(&mut self, row: usize) {
            if row == self.n {
                let (mut count, mut total) = (0usize, 0.0f64);
                for (r, &c) in self.current.iter().enumerate() {
                    let v = (self.at)(r, c);
                    if admissible(v, self.gate) {
                        count += 1;
                        total += v;
                    }
                }
                let better = match &self.best {
                    None => true,
                    Some((bc, bt, _)) => count > *bc || (count == *bc && total < *bt),
                };
                if better {
                    self.best = Some((count, total, self.current.clone()));
                }
                return;
            }
            for c in 0..self.m {
                if !self.used[c] {
                    self.used[c] = true;
                    self.current.push(c);
                    self.run(row + 1);
                    self.current.pop();
                    self.used[c] = false;
                }
            }
        }
    }

    let mut search = Search {
        n,
        m,
        gate,
        at: &at,
        used: vec![false; m],
        current: Vec::with_capacity(n),
        best: None,
    };
    search.run(0);
    let (_, _, best) = search.best.expect("at least one permutation");
    let matches = best
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| admissible(at(r, c), gate))
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    Ok(AssignmentResult::from_matches(matches, rows, cols))
}
