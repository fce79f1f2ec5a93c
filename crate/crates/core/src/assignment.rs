//! Dense linear assignment by shortest augmenting paths (Jonker–Volgenant
//! initialization followed by Dijkstra-style augmentation).

/// Row-to-column assignment minimizing the total cost of an `n × n` row-major
/// matrix. Returns `col_of_row`.
pub fn solve(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    let c = |i: usize, j: usize| cost[i * n + j];
    const NONE: usize = usize::MAX;
    let mut row_sol = vec![NONE; n];
    let mut col_sol = vec![NONE; n];
    let mut v = vec![0.0f64; n];
    let mut matches = vec![0u32; n];

    // Column reduction, last column first.
    for j in (0..n).rev() {
        let mut imin = 0;
        let mut min = c(0, j);
        for i in 1..n {
            if c(i, j) < min {
                min = c(i, j);
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            row_sol[imin] = j;
            col_sol[j] = imin;
        } else if v[j] < v[row_sol[imin]] {
            let j1 = row_sol[imin];
            row_sol[imin] = j;
            col_sol[j] = imin;
            col_sol[j1] = NONE;
        } else {
            col_sol[j] = NONE;
        }
    }

    // Reduction transfer from rows assigned exactly once.
    for i in 0..n {
        if matches[i] == 1 {
            let j1 = row_sol[i];
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 {
                    min = min.min(c(i, j) - v[j]);
                }
            }
            if min.is_finite() {
                v[j1] -= min;
            }
        }
    }

    // Augmenting row reduction is skipped: on clustered point clouds it can
    // cycle for O(n²) steps, while the shortest-path phase alone stays fast.
    let free: Vec<usize> = (0..n).filter(|&i| row_sol[i] == NONE).collect();

    // Dijkstra-style augmentation for each remaining free row.
    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for &free_row in &free {
        for j in 0..n {
            d[j] = c(free_row, j) - v[j];
            pred[j] = free_row;
            collist[j] = j;
        }
        let mut low = 0;
        let mut up = 0;
        let mut last = 0;
        let mut min = 0.0;
        let end_of_path;
        'search: loop {
            if up == low {
                last = low;
                min = d[collist[up]];
                up += 1;
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                for &j in &collist[low..up] {
                    if col_sol[j] == NONE {
                        end_of_path = j;
                        break 'search;
                    }
                }
            }
            let j1 = collist[low];
            low += 1;
            let i = col_sol[j1];
            let h = c(i, j1) - v[j1] - min;
            let mut k = up;
            while k < n {
                let j = collist[k];
                let v2 = c(i, j) - v[j] - h;
                if v2 < d[j] {
                    pred[j] = i;
                    if v2 == min {
                        if col_sol[j] == NONE {
                            end_of_path = j;
                            break 'search;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                    d[j] = v2;
                }
                k += 1;
            }
        }
        // Columns scanned before the final layer get their prices updated.
        for &j1 in &collist[..last] {
            v[j1] += d[j1] - min;
        }
        let mut j = end_of_path;
        loop {
            let i = pred[j];
            col_sol[j] = i;
            let prev = row_sol[i];
            row_sol[i] = j;
            if i == free_row {
                break;
            }
            j = prev;
        }
    }
    row_sol
}

/// Total cost of an assignment, summed in ascending order of the pair costs
/// so that transposed problems give bit-identical totals.
pub fn total_cost(n: usize, cost: &[f64], col_of_row: &[usize]) -> f64 {
    let mut pairs: Vec<f64> = col_of_row.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    pairs.sort_by(f64::total_cmp);
    pairs.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use rand::Rng;

    fn brute(n: usize, cost: &[f64]) -> f64 {
        (0..n)
            .permutations(n)
            .map(|p| (0..n).map(|i| cost[i * n + p[i]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn matches_brute_force_on_small_problems() {
        let mut rng = crate::rng::seeded(7);
        for trial in 0..200 {
            let n = 1 + trial % 7;
            let integer = trial % 2 == 0;
            let cost: Vec<f64> = (0..n * n)
                .map(|_| if integer { rng.random_range(0..4) as f64 } else { rng.random::<f64>() })
                .collect();
            let sol = solve(n, &cost);
            let mut seen = sol.clone();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let got: f64 = (0..n).map(|i| cost[i * n + sol[i]]).sum();
            assert!((got - brute(n, &cost)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn constant_matrix() {
        let sol = solve(5, &[1.0; 25]);
        let mut s = sol.clone();
        s.sort();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
    }
}

