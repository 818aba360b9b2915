//! Optimal and k-best rectangular linear assignment.
//!
//! Costs are minimized; `+inf` marks a forbidden pairing. Every row is
//! assigned to a distinct column, so `rows <= cols` is required.
//!
//! `solve_lap` is the shortest-augmenting-path method with dual potentials
//! (Jonker-Volgenant style); `kbest` is Murty's partitioning on top of it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Float> CostMatrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// Sum of the selected entries.
    pub fn cost_of(&self, row_to_col: &[usize]) -> T {
        row_to_col
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (r, &c)| acc + self.get(r, c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment<T> {
    /// Column chosen for each row.
    pub row_to_col: Vec<usize>,
    pub cost: T,
}

pub fn solve_lap<T: Float>(costs: &CostMatrix<T>) -> Result<Assignment<T>> {
    let n = costs.rows;
    let m = costs.cols;
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: T::zero(),
        });
    }
    if n > m {
        return Err(Error::Infeasible);
    }
    let inf = T::infinity();
    // 1-based arrays with a virtual column 0.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut col_owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let c = costs.get(i0 - 1, j - 1);
                if c.is_finite() {
                    let cur = c - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::Infeasible);
            }
            for j in 0..=m {
                if used[j] {
                    u[col_owner[j]] = u[col_owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if col_owner[j] != 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    let cost = costs.cost_of(&row_to_col);
    if !cost.is_finite() {
        return Err(Error::Infeasible);
    }
    Ok(Assignment { row_to_col, cost })
}

struct Node<T> {
    solution: Assignment<T>,
    constrained: CostMatrix<T>,
    /// Rows `0..fixed_rows` are pinned to their current column.
    fixed_rows: usize,
}

impl<T: Float> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Float> Eq for Node<T> {}
impl<T: Float> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Float> Ord for Node<T> {
    // Reversed: BinaryHeap pops the cheapest, then the lexicographically
    // smallest row->col vector.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .solution
            .cost
            .partial_cmp(&self.solution.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.solution.row_to_col.cmp(&self.solution.row_to_col))
    }
}

/// The `k` cheapest distinct assignments in non-decreasing cost order.
/// Fewer are returned when fewer feasible assignments exist.
pub fn kbest<T: Float>(costs: &CostMatrix<T>, k: usize) -> Result<Vec<Assignment<T>>> {
    let first = solve_lap(costs)?;
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return Ok(out);
    }
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        solution: first,
        constrained: costs.clone(),
        fixed_rows: 0,
    });
    let inf = T::infinity();
    while let Some(node) = heap.pop() {
        let sol = &node.solution.row_to_col;
        for i in node.fixed_rows..costs.rows {
            let mut child = node.constrained.clone();
            // Pin rows before i to the parent's choice.
            for (r, &c) in sol.iter().enumerate().take(i).skip(node.fixed_rows) {
                for cc in 0..costs.cols {
                    if cc != c {
                        child.set(r, cc, inf);
                    }
                }
                for rr in 0..costs.rows {
                    if rr != r {
                        child.set(rr, c, inf);
                    }
                }
            }
            child.set(i, sol[i], inf);
            if let Ok(a) = solve_lap(&child) {
                heap.push(Node {
                    solution: Assignment {
                        cost: costs.cost_of(&a.row_to_col),
                        row_to_col: a.row_to_col,
                    },
                    constrained: child,
                    fixed_rows: i,
                });
            }
        }
        out.push(node.solution);
        if out.len() == k {
            break;
        }
    }
    Ok(out)
}
