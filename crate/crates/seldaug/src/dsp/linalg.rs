//! Small dense complex matrices: products, LU solves, inverses, and a Jacobi
//! eigensolver for Hermitian matrices. Sized for the channel counts this
//! crate works with (4..64), not for large-scale linear algebra.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        CMat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn conj_transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.at_mut(j, i) = self.at(i, j).conj();
            }
        }
        out
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    *out.at_mut(i, j) += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum::<Complex64>()
            })
            .collect()
    }

    pub fn scale_inplace(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    pub fn add_inplace(&mut self, other: &CMat, weight: Complex64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += weight * b;
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self.at(i, i)).sum()
    }

    /// Force exact Hermitian symmetry: A <- (A + A^H)/2.
    pub fn symmetrize_hermitian(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            *self.at_mut(i, i) = Complex64::new(self.at(i, i).re, 0.0);
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self.at(i, j) + self.at(j, i).conj());
                *self.at_mut(i, j) = v;
                *self.at_mut(j, i) = v.conj();
            }
        }
    }

    /// Add `load` to every diagonal entry.
    pub fn diagonal_load(&mut self, load: f64) {
        for i in 0..self.rows.min(self.cols) {
            *self.at_mut(i, i) += Complex64::new(load, 0.0);
        }
    }

    fn lu_decompose(&self) -> Result<(CMat, Vec<usize>, f64)> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut lu = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut pivot = k;
            let mut max = lu.at(k, k).norm();
            for i in (k + 1)..n {
                let m = lu.at(i, k).norm();
                if m > max {
                    max = m;
                    pivot = i;
                }
            }
            if max < 1e-300 {
                return Err(Error::Numerical("singular matrix in LU".into()));
            }
            if pivot != k {
                for j in 0..n {
                    let tmp = lu.at(k, j);
                    *lu.at_mut(k, j) = lu.at(pivot, j);
                    *lu.at_mut(pivot, j) = tmp;
                }
                perm.swap(k, pivot);
                sign = -sign;
            }
            let d = lu.at(k, k);
            for i in (k + 1)..n {
                let f = lu.at(i, k) / d;
                *lu.at_mut(i, k) = f;
                for j in (k + 1)..n {
                    let v = lu.at(k, j);
                    *lu.at_mut(i, j) -= f * v;
                }
            }
        }
        Ok((lu, perm, sign))
    }

    /// Solve A x = b for each column of b.
    pub fn solve(&self, b: &CMat) -> Result<CMat> {
        let (lu, perm, _) = self.lu_decompose()?;
        let n = self.rows;
        let mut x = CMat::zeros(n, b.cols);
        for col in 0..b.cols {
            let mut y = vec![Complex64::new(0.0, 0.0); n];
            for i in 0..n {
                let mut acc = b.at(perm[i], col);
                for j in 0..i {
                    acc -= lu.at(i, j) * y[j];
                }
                y[i] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = y[i];
                for j in (i + 1)..n {
                    acc -= lu.at(i, j) * x.at(j, col);
                }
                *x.at_mut(i, col) = acc / lu.at(i, i);
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<CMat> {
        self.solve(&CMat::identity(self.rows))
    }

    pub fn determinant(&self) -> Result<Complex64> {
        let (lu, _, sign) = self.lu_decompose()?;
        let mut det = Complex64::new(sign, 0.0);
        for i in 0..self.rows {
            det *= lu.at(i, i);
        }
        Ok(det)
    }

    /// Eigenvalues of a Hermitian matrix via cyclic Jacobi rotations.
    /// Unsorted; callers order as needed.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        a.symmetrize_hermitian();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a.at(p, q).norm_sqr();
                }
            }
            let scale: f64 = (0..n).map(|i| a.at(i, i).norm_sqr()).sum::<f64>() + off;
            if off <= 1e-30 * scale.max(1e-300) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let g = a.at(p, q);
                    let gn = g.norm();
                    if gn < 1e-150 {
                        continue;
                    }
                    let phase = g / gn;
                    let app = a.at(p, p).re;
                    let aqq = a.at(q, q).re;
                    let tau = (aqq - app) / (2.0 * gn);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // unitary J: J[p][p]=c, J[p][q]=s*phase, J[q][p]=-s*conj(phase), J[q][q]=c
                    // columns: A <- A J
                    for k in 0..n {
                        let akp = a.at(k, p);
                        let akq = a.at(k, q);
                        *a.at_mut(k, p) = c * akp - s * phase.conj() * akq;
                        *a.at_mut(k, q) = s * phase * akp + c * akq;
                    }
                    // rows: A <- J^H A
                    for k in 0..n {
                        let apk = a.at(p, k);
                        let aqk = a.at(q, k);
                        *a.at_mut(p, k) = c * apk - s * phase * aqk;
                        *a.at_mut(q, k) = s * phase.conj() * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a.at(i, i).re).collect()
    }

    /// Moore-Penrose pseudoinverse for a full-column-rank tall matrix,
    /// (A^H A)^{-1} A^H.
    pub fn pseudo_inverse(&self) -> Result<CMat> {
        if self.rows < self.cols {
            return Err(Error::Numerical(
                "pseudoinverse requires rows >= cols".into(),
            ));
        }
        let ah = self.conj_transpose();
        let gram = ah.mul(self);
        gram.solve(&ah)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
        let mut m = CMat::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                *m.at_mut(i, j) =
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        m
    }

    #[test]
    fn solve_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_cmat(&mut rng, 5, 5);
            let inv = a.inverse().unwrap();
            let eye = a.mul(&inv);
            for i in 0..5 {
                for j in 0..5 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((eye.at(i, j) - expect).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn singular_rejected() {
        let mut a = CMat::zeros(3, 3);
        *a.at_mut(0, 0) = Complex64::new(1.0, 0.0);
        assert!(a.inverse().is_err());
    }

    #[test]
    fn determinant_of_diagonal() {
        let mut a = CMat::identity(3);
        *a.at_mut(0, 0) = Complex64::new(2.0, 0.0);
        *a.at_mut(1, 1) = Complex64::new(0.0, 3.0);
        let d = a.determinant().unwrap();
        assert!((d - Complex64::new(0.0, 6.0)).norm() < 1e-12);
    }

    #[test]
    fn jacobi_recovers_constructed_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let n = 4;
            // build unitary Q by Gram-Schmidt on a random complex matrix
            let g = random_cmat(&mut rng, n, n);
            let mut q: Vec<Vec<Complex64>> = Vec::new();
            for i in 0..n {
                let mut v: Vec<Complex64> = (0..n).map(|j| g.at(i, j)).collect();
                for u in &q {
                    let proj: Complex64 =
                        u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                    for (vk, uk) in v.iter_mut().zip(u) {
                        *vk -= proj * uk;
                    }
                }
                let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                for vk in v.iter_mut() {
                    *vk /= norm;
                }
                q.push(v);
            }
            let mut lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut a = CMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..n {
                        acc += q[k][i].conj() * lambda[k] * q[k][j];
                    }
                    *a.at_mut(i, j) = acc;
                }
            }
            let mut ev = a.hermitian_eigenvalues();
            ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
            lambda.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (e, l) in ev.iter().zip(&lambda) {
                assert!((e - l).abs() < 1e-9, "trial {trial}: {e} vs {l}");
            }
        }
    }

    #[test]
    fn pseudoinverse_left_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_cmat(&mut rng, 8, 3);
        let pinv = a.pseudo_inverse().unwrap();
        let eye = pinv.mul(&a);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((eye.at(i, j) - expect).norm() < 1e-10);
            }
        }
    }
}
