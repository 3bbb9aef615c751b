//! Sparse and banded linear algebra for the full-order solvers.

use std::collections::VecDeque;

use crate::{FomError, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals, factorized in
/// place by Gaussian elimination with partial pivoting. Row interchanges widen
/// the upper band to `ku + kl`, so each row stores `2 kl + ku + 1` entries.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    /// Adds `v` at `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band kl={} ku={}", self.kl, self.ku);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    pub fn clear_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            let s = self.slot(i, j);
            self.data[s] = 0.0;
        }
    }

    /// `y = A x` using the unfactorized matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    pub fn factorize(mut self) -> Result<BandLu> {
        let (n, kl) = (self.n, self.kl);
        let reach = self.ku + kl;
        let mut piv = vec![0usize; n];
        let mut lower = vec![0.0; n * kl.max(1)];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.data[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > 1e-14 * scale) {
                return Err(FomError::Singular(format!("zero pivot in column {k} of {n}")));
            }
            piv[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.slot(k, k)];
            for r in k + 1..=last_row {
                let sr = self.slot(r, k);
                let l = self.data[sr] / d;
                self.data[sr] = 0.0;
                lower[k * kl + (r - k - 1)] = l;
                if l != 0.0 && last_col > k {
                    let len = last_col - k;
                    let row_k = self.slot(k, k + 1);
                    let row_r = self.slot(r, k + 1);
                    let (head, tail) = self.data.split_at_mut(row_r);
                    for (d, s) in tail[..len].iter_mut().zip(&head[row_k..row_k + len]) {
                        *d -= l * s;
                    }
                }
            }
        }
        Ok(BandLu {
            m: self,
            lower,
            piv,
        })
    }
}

/// LU factors of a [`BandMatrix`].
#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
    lower: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &mut [f64]) {
        let BandMatrix { n, kl, ku, .. } = self.m;
        let reach = ku + kl;
        for k in 0..n {
            b.swap(k, self.piv[k]);
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + kl).min(n - 1) {
                    b[r] -= self.lower[k * kl + (r - k - 1)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            let base = self.m.slot(k, k);
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= self.m.data[base + (j - k)] * b[j];
            }
            b[k] = s / self.m.data[base];
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *vals.last_mut().expect("previous entry") += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|e| e.0 == i).map_or(0.0, |e| e.1))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients on an SPD matrix. Stops when
/// `|b - A x|_2 <= tol`; `x` holds the initial guess on entry.
pub fn pcg(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let diag = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(FomError::Singular("CG matrix has a non-positive diagonal".into()));
    }
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol {
            return Ok(it);
        }
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(FomError::Singular("CG breakdown: matrix not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // one last check after the final update
    let mut ax = vec![0.0; n];
    a.mul_vec(x, &mut ax);
    let res = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    if res <= tol {
        return Ok(max_iter);
    }
    Err(FomError::NoConvergence(format!(
        "CG residual {res:e} after {max_iter} iterations"
    )))
}

/// Reverse Cuthill-McKee ordering of an undirected graph; `perm[new] = old`.
pub fn rcm(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let degree = |v: usize| adjacency[v].len();
    while order.len() < n {
        let start = (0..n)
            .filter(|v| !visited[*v])
            .min_by_key(|v| degree(*v))
            .expect("unvisited node");
        let root = peripheral(adjacency, start);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|w| !visited[*w]).collect();
            next.sort_by_key(|w| (degree(*w), *w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node of the component containing `start`.
fn peripheral(adjacency: &[Vec<usize>], start: usize) -> usize {
    let mut root = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adjacency, root);
        let max = *levels.iter().filter(|l| **l != usize::MAX).max().unwrap_or(&0);
        if max <= ecc && root != start {
            break;
        }
        ecc = max;
        root = (0..adjacency.len())
            .filter(|v| levels[*v] == max)
            .min_by_key(|v| adjacency[*v].len())
            .unwrap_or(root);
    }
    root
}

fn bfs_levels(adjacency: &[Vec<usize>], root: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; adjacency.len()];
    level[root] = 0;
    let mut q = VecDeque::from([root]);
    while let Some(v) = q.pop_front() {
        for &w in &adjacency[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                q.push_back(w);
            }
        }
    }
    level
}

/// Bandwidth of a graph under the ordering `perm` (`perm[new] = old`).
pub fn bandwidth(adjacency: &[Vec<usize>], perm: &[usize]) -> usize {
    let mut pos = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        pos[old] = new;
    }
    adjacency
        .iter()
        .enumerate()
        .flat_map(|(v, nb)| nb.iter().map(move |w| (v, *w)))
        .map(|(v, w)| pos[v].abs_diff(pos[w]))
        .max()
        .unwrap_or(0)
}
