//! Small dense complex linear algebra.
//!
//! Everything here works at the sizes a base station array produces (a few
//! antennas, a few users), so all routines are plain loops over row-major
//! storage. The Hermitian solve is a Cholesky factorization of `A + mu*I`
//! that can be reused for several right-hand sides, which the gradient path
//! relies on.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Complex column vector.
pub type CVec = Vec<C64>;

/// Relative pivot threshold for the Cholesky factorization.
pub const PIVOT_REL_TOL: f64 = 1e-12;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Argument(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(CMat { rows, cols, data })
    }

    /// Builds an `n x k` matrix whose columns are the given vectors.
    pub fn from_columns(n: usize, columns: &[CVec]) -> Result<Self> {
        let mut m = Self::zeros(n, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Argument(format!(
                    "column {j} has length {}, expected {n}",
                    col.len()
                )));
            }
            for (i, &z) in col.iter().enumerate() {
                m[(i, j)] = z;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> CVec {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[C64]) {
        for (i, &z) in v.iter().enumerate() {
            self[(i, j)] = z;
        }
    }

    pub fn columns(&self) -> Vec<CVec> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn conj_transpose(&self) -> CMat {
        let mut t = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)].conj();
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(l, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[C64]) -> CVec {
        assert_eq!(self.cols, x.len(), "dimension mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        total_power(self).sqrt()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `self + mu * I` for a square matrix.
    pub fn add_diag(&self, mu: f64) -> CMat {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] += mu;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `a^H b`.
pub fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `sum_k coeffs[k] * v_k v_k^H` as an `n x n` matrix.
///
/// Only the lower triangle is accumulated; the upper triangle is its exact
/// conjugate mirror so the result is Hermitian bit-for-bit.
pub fn hermitian_rank1_sum(coeffs: &[f64], vectors: &[CVec], n: usize) -> Result<CMat> {
    if coeffs.len() != vectors.len() {
        return Err(Error::Argument(format!(
            "{} coefficients for {} vectors",
            coeffs.len(),
            vectors.len()
        )));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::Argument(format!(
            "vector of length {} in a rank-1 sum of size {n}",
            v.len()
        )));
    }
    let mut s = CMat::zeros(n, n);
    for (&c, v) in coeffs.iter().zip(vectors) {
        for i in 0..n {
            for j in 0..=i {
                s[(i, j)] += c * v[i] * v[j].conj();
            }
        }
    }
    for i in 0..n {
        s[(i, i)].im = 0.0;
        for j in 0..i {
            s[(j, i)] = s[(i, j)].conj();
        }
    }
    Ok(s)
}

/// Cholesky factor `L` with `L L^H = A + mu*I`.
#[derive(Debug, Clone)]
pub struct HpdFactor {
    n: usize,
    // lower triangle, row-major n x n
    l: Vec<C64>,
}

impl HpdFactor {
    /// Factors `A + mu*I`; `A` must be Hermitian (only the lower triangle is read).
    pub fn new(a: &CMat, mu: f64) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Argument(format!(
                "hpd_solve needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let trace = a.trace().re + mu * n as f64;
        let threshold = PIVOT_REL_TOL * trace.abs();
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re + mu;
            for p in 0..j {
                d -= l[j * n + p].norm_sqr();
            }
            if !(d > threshold) || !d.is_finite() {
                return Err(Error::Singular {
                    row: j,
                    pivot: d,
                    threshold,
                });
            }
            let djj = d.sqrt();
            l[j * n + j] = C64::new(djj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(HpdFactor { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_vec(&self, b: &[C64]) -> CVec {
        assert_eq!(b.len(), self.n, "right-hand side length mismatch");
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for p in 0..i {
                s -= self.l[i * n + p] * y[p];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in (i + 1)..n {
                s -= self.l[p * n + i].conj() * y[p];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        y
    }

    pub fn solve_mat(&self, b: &CMat) -> CMat {
        let mut x = CMat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            x.set_column(j, &self.solve_vec(&b.column(j)));
        }
        x
    }
}

/// Solves `(A + mu*I) X = B` for Hermitian PSD `A`.
pub fn hpd_solve(a: &CMat, mu: f64, b: &CMat) -> Result<CMat> {
    if b.rows() != a.rows() {
        return Err(Error::Argument(format!(
            "right-hand side has {} rows, system has {}",
            b.rows(),
            a.rows()
        )));
    }
    Ok(HpdFactor::new(a, mu)?.solve_mat(b))
}

/// Vector form of [`hpd_solve`].
pub fn hpd_solve_vec(a: &CMat, mu: f64, b: &[C64]) -> Result<CVec> {
    if b.len() != a.rows() {
        return Err(Error::Argument(format!(
            "right-hand side has length {}, system has {} rows",
            b.len(),
            a.rows()
        )));
    }
    Ok(HpdFactor::new(a, mu)?.solve_vec(b))
}

/// `Tr(V V^H)`, the transmit power of a beamformer.
pub fn total_power(v: &CMat) -> f64 {
    norm_sqr(v.as_slice())
}

/// Rescales `V` so that `Tr(V V^H) = p`.
pub fn normalize_to_power(v: &CMat, p: f64) -> Result<CMat> {
    let norm = v.frobenius_norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize a beamformer with Frobenius norm {norm}"
        )));
    }
    Ok(v.scale(p.sqrt() / norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMat {
        let data = (0..r * k)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        CMat::from_row_major(r, k, data).unwrap()
    }

    fn residual_rel(a: &CMat, mu: f64, x: &CMat, b: &CMat) -> f64 {
        let ax = a.add_diag(mu).matmul(x);
        let diff: f64 = ax
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(p, q)| (p - q).norm_sqr())
            .sum::<f64>()
            .sqrt();
        diff / b.frobenius_norm()
    }

    #[test]
    fn rank1_sum_examples() {
        let s = hermitian_rank1_sum(&[1.0], &[vec![c(1.0, 0.0), c(0.0, 0.0)]], 2).unwrap();
        assert_eq!(
            s.as_slice(),
            &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]
        );

        let s = hermitian_rank1_sum(&[], &[], 2).unwrap();
        assert_eq!(s, CMat::zeros(2, 2));

        let s = hermitian_rank1_sum(
            &[0.5, 0.5],
            &[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]],
            2,
        )
        .unwrap();
        assert_eq!(s, CMat::identity(2).scale(0.5));
    }

    #[test]
    fn rank1_sum_rejects_mismatch() {
        assert!(matches!(
            hermitian_rank1_sum(&[1.0, 2.0], &[vec![c(1.0, 0.0)]], 1),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            hermitian_rank1_sum(&[1.0], &[vec![c(1.0, 0.0)]], 2),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn rank1_sum_is_exactly_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let vs: Vec<CVec> = (0..4).map(|_| random_cvec(&mut rng, 5)).collect();
            let cs: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
            let s = hermitian_rank1_sum(&cs, &vs, 5).unwrap();
            assert_eq!(s, s.conj_transpose());
        }
    }

    #[test]
    fn hpd_solve_examples() {
        let b = CMat::from_row_major(2, 1, vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let x = hpd_solve(&CMat::zeros(2, 2), 1.0, &b).unwrap();
        assert_eq!(x, b);

        let mut a = CMat::zeros(2, 2);
        a[(0, 0)] = c(0.5, 0.0);
        let x = hpd_solve(&a, 0.5, &b).unwrap();
        assert!((x[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(x[(1, 0)], c(0.0, 0.0));
    }

    #[test]
    fn hpd_solve_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let n = 1 + trial % 8;
            let g = random_mat(&mut rng, n, n);
            let a = g.matmul(&g.conj_transpose());
            let mu = if trial % 2 == 0 { 0.1 } else { 1e-3 };
            let b = random_mat(&mut rng, n, 2);
            let x = hpd_solve(&a, mu, &b).unwrap();
            assert!(residual_rel(&a, mu, &x, &b) <= 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn hpd_solve_detects_singularity() {
        let h = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let a = hermitian_rank1_sum(&[1.0], &[h], 2).unwrap();
        let b = CMat::identity(2);
        assert!(matches!(hpd_solve(&a, 0.0, &b), Err(Error::Singular { .. })));
        assert!(matches!(
            hpd_solve(&CMat::zeros(2, 2), 0.0, &b),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn total_power_examples() {
        assert_eq!(total_power(&CMat::zeros(3, 2)), 0.0);
        assert_eq!(total_power(&CMat::identity(2)), 2.0);
        let v = CMat::from_row_major(1, 1, vec![c(1.0, 1.0)]).unwrap();
        assert_eq!(total_power(&v), 2.0);
    }

    #[test]
    fn normalize_examples() {
        let v = CMat::from_row_major(1, 1, vec![c(2.0, 0.0)]).unwrap();
        assert_eq!(normalize_to_power(&v, 1.0).unwrap()[(0, 0)], c(1.0, 0.0));

        let v = normalize_to_power(&CMat::identity(2), 4.0).unwrap();
        let s = 2f64.sqrt();
        for (got, want) in v.as_slice().iter().zip(CMat::identity(2).scale(s).as_slice()) {
            assert!((got - want).norm() < 1e-15);
        }

        assert!(matches!(
            normalize_to_power(&CMat::zeros(2, 2), 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    proptest! {
        #[test]
        fn normalize_hits_target_and_is_idempotent(
            entries in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 6),
            p in 0.01f64..100.0,
        ) {
            let data: Vec<C64> = entries.iter().map(|&(r, i)| c(r, i)).collect();
            prop_assume!(data.iter().any(|z| z.norm() > 1e-6));
            let v = CMat::from_row_major(3, 2, data).unwrap();
            let once = normalize_to_power(&v, p).unwrap();
            prop_assert!((total_power(&once) - p).abs() <= 1e-12 * p);
            let twice = normalize_to_power(&once, p).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
            }
        }
    }
}
