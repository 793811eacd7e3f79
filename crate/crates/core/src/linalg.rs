//! Symmetric banded storage and Cholesky factorisation.

use crate::error::{Error, Result};

/// Symmetric positive definite matrix stored by its lower band.
///
/// Row `i` holds `A[i][j]` for `i - bandwidth <= j <= i` at offset
/// `j + bandwidth - i`, so the diagonal is the last entry of each row.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bw: bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + j + self.bw - i
    }

    /// Add `v` to `A[i][j]` (and implicitly `A[j][i]`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(r - c <= self.bw, "entry ({r}, {c}) outside the band");
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    /// `y = A x` using the symmetric band.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let off = self.bw + lo - i;
            let mut acc = row[self.bw] * x[i];
            for (j, a) in (lo..i).zip(&row[off..self.bw]) {
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// In-place banded Cholesky, `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                // L[i][k] for k in lo..j and L[j][k] for k in lo..j, both contiguous.
                let ri = i * w + bw + lo - i;
                let rj = j * w + bw + lo - j;
                let len = j - lo;
                let s = self.data[i * w + bw + j - i]
                    - dot(&self.data[ri..ri + len], &self.data[rj..rj + len]);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Solver {
                            reason: format!("non-positive pivot {s:e} at row {i}"),
                            residual: f64::NAN,
                        });
                    }
                    self.data[i * w + bw] = s.sqrt();
                } else {
                    self.data[i * w + bw + j - i] = s / self.data[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let l = &self.factor;
        let (n, bw, w) = (l.n, l.bw, l.bw + 1);
        assert_eq!(rhs.len(), n);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &l.data[i * w + bw + lo - i..i * w + bw];
            let s = y[i] - dot(row, &y[lo..i]);
            y[i] = s / l.data[i * w + bw];
        }
        for i in (0..n).rev() {
            let xi = y[i] / l.data[i * w + bw];
            y[i] = xi;
            let lo = i.saturating_sub(bw);
            let row = &l.data[i * w + bw + lo - i..i * w + bw];
            for (a, v) in row.iter().zip(&mut y[lo..i]) {
                *v -= a * xi;
            }
        }
        y
    }
}

/// Dot product with four independent accumulators so the loop vectorises.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() / 4 * 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
