//! Dense symmetric factorizations for covariance sampling.
//!
//! The blocked Cholesky uses a fixed floating-point accumulation order, so the
//! leading `m × m` block of the factor depends only on the leading `m × m` block
//! of the input. Adding detectors after existing ones therefore leaves the
//! earlier detectors' noise bit-identical.

use rayon::prelude::*;

const BLOCK: usize = 64;

/// Lower-triangular factor, row-major, with an optional symmetric permutation
/// (`A[perm, perm] ≈ L Lᵀ`) and rank (columns of `L` actually used).
#[derive(Debug, Clone)]
pub struct LowerFactor {
    n: usize,
    rank: usize,
    data: Vec<f64>,
    perm: Option<Vec<usize>>,
}

impl LowerFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_pivoted(&self) -> bool {
        self.perm.is_some()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.n + k]
    }

    /// `out = P L z` for a batch of `batch` vectors, `z` and `out` stored
    /// index-major (`z[k * batch + r]`). Each entry sums over `k` in ascending order.
    pub fn apply_batch(&self, z: &[f64], batch: usize) -> Vec<f64> {
        let n = self.n;
        assert_eq!(z.len(), n * batch);
        let mut rows = vec![0.0; n * batch];
        rows.par_chunks_mut(batch).enumerate().for_each(|(i, acc)| {
            let upto = (i + 1).min(self.rank);
            let row = &self.data[i * n..i * n + upto];
            for (k, &l) in row.iter().enumerate() {
                let zk = &z[k * batch..(k + 1) * batch];
                for (a, &zv) in acc.iter_mut().zip(zk) {
                    *a += l * zv;
                }
            }
        });
        match &self.perm {
            None => rows,
            Some(perm) => {
                let mut out = vec![0.0; n * batch];
                for (i, &target) in perm.iter().enumerate() {
                    out[target * batch..(target + 1) * batch].copy_from_slice(&rows[i * batch..(i + 1) * batch]);
                }
                out
            }
        }
    }
}

/// Blocked right-looking Cholesky of a symmetric positive-definite matrix
/// given as full row-major storage. On failure returns the index of the
/// first non-positive pivot.
pub fn cholesky(a: &[f64], n: usize) -> Result<LowerFactor, usize> {
    assert_eq!(a.len(), n * n);
    let mut l = a.to_vec();
    let mut kb = 0;
    while kb < n {
        let ke = (kb + BLOCK).min(n);
        factor_diagonal_block(&mut l, n, kb, ke)?;
        // Panel solve: rows below the diagonal block.
        let (head, tail) = l.split_at_mut(ke * n);
        let diag = &head[..];
        tail.par_chunks_mut(n).for_each(|row| {
            for j in kb..ke {
                let mut s = row[j];
                for m in kb..j {
                    s -= row[m] * diag[j * n + m];
                }
                row[j] = s / diag[j * n + j];
            }
        });
        // Trailing update with a transposed copy of the panel.
        let width = ke - kb;
        let trailing = n - ke;
        if trailing > 0 {
            let mut panel = vec![0.0; width * trailing];
            for r in 0..trailing {
                for m in 0..width {
                    panel[m * trailing + r] = tail[r * n + kb + m];
                }
            }
            tail.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
                let len = r + 1;
                let mut acc = vec![0.0; len];
                let (left, right) = row.split_at_mut(ke);
                let lrow = &left[kb..ke];
                let mut m = 0;
                while m + 4 <= width {
                    let (l0, l1, l2, l3) = (lrow[m], lrow[m + 1], lrow[m + 2], lrow[m + 3]);
                    let p0 = &panel[m * trailing..m * trailing + len];
                    let p1 = &panel[(m + 1) * trailing..(m + 1) * trailing + len];
                    let p2 = &panel[(m + 2) * trailing..(m + 2) * trailing + len];
                    let p3 = &panel[(m + 3) * trailing..(m + 3) * trailing + len];
                    for c in 0..len {
                        acc[c] = acc[c] + l0 * p0[c] + l1 * p1[c] + l2 * p2[c] + l3 * p3[c];
                    }
                    m += 4;
                }
                while m < width {
                    let lm = lrow[m];
                    let p = &panel[m * trailing..m * trailing + len];
                    for c in 0..len {
                        acc[c] += lm * p[c];
                    }
                    m += 1;
                }
                for c in 0..len {
                    right[c] -= acc[c];
                }
            });
        }
        kb = ke;
    }
    for i in 0..n {
        for j in i + 1..n {
            l[i * n + j] = 0.0;
        }
    }
    Ok(LowerFactor {
        n,
        rank: n,
        data: l,
        perm: None,
    })
}

fn factor_diagonal_block(l: &mut [f64], n: usize, kb: usize, ke: usize) -> Result<(), usize> {
    for j in kb..ke {
        let mut d = l[j * n + j];
        for m in kb..j {
            d -= l[j * n + m] * l[j * n + m];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..ke {
            let mut s = l[i * n + j];
            for m in kb..j {
                s -= l[i * n + m] * l[j * n + m];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Diagonally pivoted Cholesky for positive semi-definite matrices. Stops when
/// the largest remaining pivot drops to `tol`, giving a low-rank factor.
pub fn pivoted_cholesky(a: &[f64], n: usize, tol: f64) -> LowerFactor {
    assert_eq!(a.len(), n * n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut work = a.to_vec();
    let mut l = vec![0.0; n * n];
    let mut rank = 0;
    for k in 0..n {
        let (p, &best) = (k..n)
            .map(|i| (i, &work[perm[i] * n + perm[i]]))
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty");
        if best <= tol {
            break;
        }
        perm.swap(k, p);
        l.swap_with_slice_rows(n, k, p);
        let pk = perm[k];
        let d = work[pk * n + pk].sqrt();
        l[k * n + k] = d;
        for i in k + 1..n {
            let pi = perm[i];
            let v = work[pi * n + pk] / d;
            l[i * n + k] = v;
        }
        for i in k + 1..n {
            let pi = perm[i];
            let li = l[i * n + k];
            for j in k + 1..=i {
                let pj = perm[j];
                let upd = li * l[j * n + k];
                work[pi * n + pj] -= upd;
                if pi != pj {
                    work[pj * n + pi] -= upd;
                }
            }
        }
        rank = k + 1;
    }
    LowerFactor {
        n,
        rank,
        data: l,
        perm: Some(perm),
    }
}

trait SwapRows {
    fn swap_with_slice_rows(&mut self, n: usize, a: usize, b: usize);
}

impl SwapRows for Vec<f64> {
    fn swap_with_slice_rows(&mut self, n: usize, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let (first, second) = self.split_at_mut(hi * n);
        first[lo * n..lo * n + lo].swap_with_slice(&mut second[..lo]);
    }
}
