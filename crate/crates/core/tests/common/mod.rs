#![allow(dead_code)]

use gridrecon_core::grid::{GridTopology, Line};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random spanning tree over shuffled labels plus `extra` random chords,
/// reactances uniform in `[0.01, 1]`.
pub fn random_connected_grid(seed: u64, n: usize, extra: usize) -> GridTopology {
    let mut rng = rng(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..n {
        let parent = order[rng.random_range(0..i)];
        let (a, b) = (order[i].min(parent), order[i].max(parent));
        pairs.insert((a, b));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let lines = pairs
        .into_iter()
        .map(|(a, b)| Line::new(a, b, rng.random_range(0.01..=1.0)))
        .collect();
    GridTopology::new(n, lines).expect("valid random grid")
}

/// Breadth-first spanning tree of the grid's lines, rooted at bus 0.
pub fn spanning_tree(grid: &GridTopology) -> Vec<Line> {
    let n = grid.n_buses();
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = std::collections::VecDeque::from([0]);
    let mut tree = Vec::new();
    while let Some(s) = queue.pop_front() {
        for l in grid.lines() {
            let other = if l.from == s {
                l.to
            } else if l.to == s {
                l.from
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                tree.push(*l);
                queue.push_back(other);
            }
        }
    }
    tree
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Solve a square system, `None` when it is numerically singular.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(false, false);
    let s = &svd.singular_values;
    if s.is_empty() || s.min() <= 1e-9 * s.max().max(1.0) {
        return None;
    }
    a.clone().lu().solve(b)
}
