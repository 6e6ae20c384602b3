//! Banded LU without pivoting, for the finite-difference policy solves.
//!
//! Every matrix assembled there is a nonsingular M-matrix, for which
//! elimination without pivoting is stable.

pub(crate) struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        Banded {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Solve in place; `None` on a zero pivot.
    pub fn solve(mut self, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
        let n = self.n;
        for k in 0..n {
            let piv = self.data[self.idx(k, k)];
            if piv == 0.0 || !piv.is_finite() {
                return None;
            }
            for i in k + 1..(k + self.kl + 1).min(n) {
                let ik = self.idx(i, k);
                let l = self.data[ik] / piv;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = 0.0;
                for j in k + 1..(k + self.ku + 1).min(n) {
                    let (ij, kj) = (self.idx(i, j), self.idx(k, j));
                    self.data[ij] -= l * self.data[kj];
                }
                rhs[i] -= l * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = rhs[k];
            for j in k + 1..(k + self.ku + 1).min(n) {
                s -= self.data[self.idx(k, j)] * rhs[j];
            }
            rhs[k] = s / self.data[self.idx(k, k)];
        }
        Some(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn matches_dense_solve() {
        let n = 9;
        let (kl, ku) = (2, 2);
        let mut band = Banded::new(n, kl, ku);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                let v = if i == j { 6.0 + i as f64 } else { -1.0 - 0.1 * (i + 2 * j) as f64 % 1.0 };
                band.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = band.solve(rhs.clone()).unwrap();
        let y = dense.lu().solve(&DVector::from(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - y[i]).abs() < 1e-13);
        }
    }
}
