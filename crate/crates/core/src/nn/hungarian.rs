//! Minimum-cost square assignment.
//!
//! Shortest-augmenting-path Hungarian method with row/column potentials,
//! followed by a pass that picks the lexicographically smallest assignment
//! among all optimal ones (they are exactly the perfect matchings on the
//! zero-reduced-cost edges).

use super::Tensor;

/// Returns `assignment[row] = column` minimizing the total cost.
pub fn hungarian(cost: &Tensor) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "hungarian needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    let (assignment, u, v) = solve(cost);
    let scale = cost.data().iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let eps = 1e-9 * scale;
    let tight = |i: usize, j: usize| cost.at(i, j) - u[i] - v[j] <= eps;
    lexicographic_min(n, assignment, tight)
}

pub fn assignment_cost(cost: &Tensor, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum()
}

/// O(n³) primal-dual solver; returns the assignment and optimal potentials.
fn solve(cost: &Tensor) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.rows();
    // 1-based internals; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Walks rows in order, fixing each to the smallest tight column that still
/// admits a perfect matching of the remaining rows.
fn lexicographic_min(
    n: usize,
    mut row_to_col: Vec<usize>,
    tight: impl Fn(usize, usize) -> bool,
) -> Vec<usize> {
    let mut col_to_row = vec![0; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    let mut fixed_col = vec![false; n];
    for i in 0..n {
        for c in 0..n {
            if fixed_col[c] || !tight(i, c) {
                continue;
            }
            if row_to_col[i] == c {
                break;
            }
            // Force i -> c: the row r losing c must reach i's old column.
            let r = col_to_row[c];
            let target = row_to_col[i];
            let mut seen = vec![false; n];
            seen[c] = true;
            let mut path = Vec::new();
            if augment(r, target, &tight, &fixed_col, &row_to_col, &col_to_row, &mut seen, &mut path) {
                // path holds (row, new column) pairs
                for &(row, col) in &path {
                    row_to_col[row] = col;
                    col_to_row[col] = row;
                }
                row_to_col[i] = c;
                col_to_row[c] = i;
                break;
            }
        }
        fixed_col[row_to_col[i]] = true;
    }
    row_to_col
}

#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    target: usize,
    tight: &impl Fn(usize, usize) -> bool,
    fixed_col: &[bool],
    row_to_col: &[usize],
    col_to_row: &[usize],
    seen: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    let n = seen.len();
    for x in 0..n {
        if seen[x] || fixed_col[x] || !tight(row, x) || x == row_to_col[row] {
            continue;
        }
        seen[x] = true;
        if x == target {
            path.push((row, x));
            return true;
        }
        let next = col_to_row[x];
        if augment(next, target, tight, fixed_col, row_to_col, col_to_row, seen, path) {
            path.push((row, x));
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cost_gives_identity() {
        assert_eq!(hungarian(&Tensor::zeros(&[5, 5])), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn two_by_two() {
        let c = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let a = hungarian(&c);
        assert_eq!(a, vec![0, 1]);
        assert_eq!(assignment_cost(&c, &a), 2.0);
    }

    #[test]
    fn anti_diagonal() {
        let c = Tensor::from_rows(&[vec![5.0, 1.0, 9.0], vec![1.0, 9.0, 9.0], vec![9.0, 9.0, 0.0]]);
        assert_eq!(hungarian(&c), vec![1, 0, 2]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // [1,0,2] and [2,1,0] are both optimal
        let c = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
        assert_eq!(hungarian(&c), vec![1, 0, 2]);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force(c: &Tensor) -> (f64, Vec<usize>) {
        let mut perms = permutations(c.rows());
        perms.sort();
        let costs: Vec<f64> = perms.iter().map(|p| assignment_cost(c, p)).collect();
        let best = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = costs.iter().position(|&x| x <= best + 1e-9).unwrap();
        (best, perms[first].clone())
    }

    #[test]
    fn matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let n = 1 + trial % 7;
            let integer = trial % 2 == 0;
            let data: Vec<f64> = (0..n * n)
                .map(|_| {
                    if integer {
                        rng.gen_range(0..4) as f64
                    } else {
                        rng.gen_range(-5.0..5.0)
                    }
                })
                .collect();
            let c = Tensor::matrix(n, n, data);
            let (best, lex) = brute_force(&c);
            let got = hungarian(&c);
            assert!((assignment_cost(&c, &got) - best).abs() < 1e-9, "trial {trial}");
            assert_eq!(got, lex, "trial {trial}");
        }
    }

    #[test]
    fn empty() {
        assert!(hungarian(&Tensor::zeros(&[0, 0])).is_empty());
    }
}
