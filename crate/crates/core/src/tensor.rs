//! Run-time dimensioned small vectors and dense row-major square matrices.
//!
//! Storage is inline for d ≤ 4 and spills to the heap above that, so the
//! common 1..=4 dimensional cases never allocate in the inner loops.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use smallvec::{smallvec, SmallVec};

use crate::error::{MpmError, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct VecN<S: Real>(SmallVec<[S; 4]>);

impl<S: Real> VecN<S> {
    pub fn zeros(dim: usize) -> Self {
        VecN(smallvec![S::zero(); dim])
    }

    pub fn filled(dim: usize, value: S) -> Self {
        VecN(smallvec![value; dim])
    }

    pub fn from_slice(values: &[S]) -> Self {
        VecN(SmallVec::from_slice(values))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> S) -> Self {
        VecN((0..dim).map(f).collect())
    }

    /// Unit vector along `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = Self::zeros(dim);
        v[axis] = S::one();
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.0.iter()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.0.to_vec()
    }

    pub fn dot(&self, other: &Self) -> S {
        self.0.iter().zip(other.0.iter()).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> S {
        self.dot(self)
    }

    pub fn norm(&self) -> S {
        self.norm_squared().sqrt()
    }

    pub fn max_abs(&self) -> S {
        self.0.iter().fold(S::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, factor: S) -> Self {
        VecN(self.0.iter().map(|&x| x * factor).collect())
    }

    /// `self += factor * other`
    #[inline]
    pub fn axpy(&mut self, factor: S, other: &Self) {
        for (a, &b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += factor * b;
        }
    }

    pub fn set_zero(&mut self) {
        for x in self.0.iter_mut() {
            *x = S::zero();
        }
    }

    pub fn cast<T: Real>(&self) -> VecN<T> {
        VecN(self.0.iter().map(|&x| T::lit(x.to_f64_lossy())).collect())
    }
}

impl<S: Real> Index<usize> for VecN<S> {
    type Output = S;
    #[inline]
    fn index(&self, i: usize) -> &S {
        &self.0[i]
    }
}

impl<S: Real> IndexMut<usize> for VecN<S> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut S {
        &mut self.0[i]
    }
}

impl<S: Real> Add for &VecN<S> {
    type Output = VecN<S>;
    fn add(self, rhs: Self) -> VecN<S> {
        VecN(self.0.iter().zip(rhs.0.iter()).map(|(&a, &b)| a + b).collect())
    }
}

impl<S: Real> Sub for &VecN<S> {
    type Output = VecN<S>;
    fn sub(self, rhs: Self) -> VecN<S> {
        VecN(self.0.iter().zip(rhs.0.iter()).map(|(&a, &b)| a - b).collect())
    }
}

impl<S: Real> Neg for &VecN<S> {
    type Output = VecN<S>;
    fn neg(self) -> VecN<S> {
        VecN(self.0.iter().map(|&a| -a).collect())
    }
}

impl<S: Real> Mul<S> for &VecN<S> {
    type Output = VecN<S>;
    fn mul(self, rhs: S) -> VecN<S> {
        self.scaled(rhs)
    }
}

impl<S: Real> AddAssign<&VecN<S>> for VecN<S> {
    fn add_assign(&mut self, rhs: &VecN<S>) {
        for (a, &b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a += b;
        }
    }
}

impl<S: Real> SubAssign<&VecN<S>> for VecN<S> {
    fn sub_assign(&mut self, rhs: &VecN<S>) {
        for (a, &b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a -= b;
        }
    }
}

/// Square d × d matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MatN<S: Real> {
    dim: usize,
    data: SmallVec<[S; 16]>,
}

impl<S: Real> MatN<S> {
    pub fn zeros(dim: usize) -> Self {
        MatN {
            dim,
            data: smallvec![S::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, S::one())
    }

    /// `value * I`
    pub fn scalar(dim: usize, value: S) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = value;
        }
        m
    }

    pub fn from_row_major(dim: usize, values: &[S]) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(MpmError::DimensionMismatch {
                expected: dim * dim,
                got: values.len(),
            });
        }
        Ok(MatN {
            dim,
            data: SmallVec::from_slice(values),
        })
    }

    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[&[S]]) -> Self {
        let dim = rows.len();
        let mut data = SmallVec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "matrix rows must have length {dim}");
            data.extend_from_slice(row);
        }
        MatN { dim, data }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// a bᵀ
    pub fn outer(a: &VecN<S>, b: &VecN<S>) -> Self {
        Self::from_fn(a.dim(), |i, j| a[i] * b[j])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> S {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius inner product A : B.
    pub fn contract(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn scaled(&self, factor: S) -> Self {
        MatN {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * factor).collect(),
        }
    }

    /// `self += factor * other`
    #[inline]
    pub fn axpy(&mut self, factor: S, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += factor * b;
        }
    }

    /// `self += factor * a bᵀ` without forming the outer product.
    #[inline]
    pub fn add_outer(&mut self, factor: S, a: &VecN<S>, b: &VecN<S>) {
        let d = self.dim;
        for i in 0..d {
            let fa = factor * a[i];
            for j in 0..d {
                self.data[i * d + j] += fa * b[j];
            }
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                for j in 0..d {
                    out.data[i * d + j] += a * rhs.data[k * d + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &VecN<S>) -> VecN<S> {
        let d = self.dim;
        VecN::from_fn(d, |i| (0..d).map(|j| self.data[i * d + j] * v[j]).sum())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest entry of |A − Aᵀ|.
    pub fn asymmetry(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn set_identity(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                self.data[i * d + j] = if i == j { S::one() } else { S::zero() };
            }
        }
    }

    pub fn cast<T: Real>(&self) -> MatN<T> {
        MatN {
            dim: self.dim,
            data: self.data.iter().map(|&x| T::lit(x.to_f64_lossy())).collect(),
        }
    }

    pub fn determinant(&self) -> S {
        let m = |i: usize, j: usize| self.data[i * self.dim + j];
        match self.dim {
            0 => S::one(),
            1 => m(0, 0),
            2 => m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
            3 => {
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                    - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                    + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
            }
            _ => self.determinant_lu(),
        }
    }

    /// Determinant from partial-pivot elimination; valid for any dimension.
    pub fn determinant_lu(&self) -> S {
        let d = self.dim;
        let mut a = self.data.clone();
        let mut det = S::one();
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&r, &s| {
                    a[r * d + col]
                        .abs()
                        .partial_cmp(&a[s * d + col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            if a[pivot * d + col] == S::zero() {
                return S::zero();
            }
            if pivot != col {
                for j in 0..d {
                    a.swap(col * d + j, pivot * d + j);
                }
                det = -det;
            }
            let p = a[col * d + col];
            det *= p;
            for r in (col + 1)..d {
                let factor = a[r * d + col] / p;
                if factor != S::zero() {
                    for j in col..d {
                        let v = a[col * d + j];
                        a[r * d + j] -= factor * v;
                    }
                }
            }
        }
        det
    }

    /// Inverse using cofactors for d ≤ 3 and Gauss–Jordan elimination above.
    pub fn inverse(&self) -> Result<Self> {
        match self.dim {
            1..=3 => self.inverse_cofactor(),
            _ => self.inverse_gauss_jordan(),
        }
    }

    /// Closed-form adjugate inverse for d ≤ 3.
    pub fn inverse_cofactor(&self) -> Result<Self> {
        let d = self.dim;
        assert!((1..=3).contains(&d), "cofactor inverse only for d <= 3");
        let det = self.determinant();
        if det == S::zero() || !det.is_finite() {
            return Err(MpmError::SingularMatrix);
        }
        let m = |i: usize, j: usize| self.data[i * d + j];
        let inv_det = S::one() / det;
        let out = match d {
            1 => MatN::from_rows(&[&[inv_det]]),
            2 => MatN::from_rows(&[
                &[m(1, 1) * inv_det, -m(0, 1) * inv_det],
                &[-m(1, 0) * inv_det, m(0, 0) * inv_det],
            ]),
            _ => {
                let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
                    m(r0, c0) * m(r1, c1) - m(r0, c1) * m(r1, c0)
                };
                MatN::from_rows(&[
                    &[
                        c(1, 2, 1, 2) * inv_det,
                        -c(0, 2, 1, 2) * inv_det,
                        c(0, 1, 1, 2) * inv_det,
                    ],
                    &[
                        -c(1, 2, 0, 2) * inv_det,
                        c(0, 2, 0, 2) * inv_det,
                        -c(0, 1, 0, 2) * inv_det,
                    ],
                    &[
                        c(1, 2, 0, 1) * inv_det,
                        -c(0, 2, 0, 1) * inv_det,
                        c(0, 1, 0, 1) * inv_det,
                    ],
                ])
            }
        };
        Ok(out)
    }

    /// Gauss–Jordan elimination with partial pivoting.
    pub fn inverse_gauss_jordan(&self) -> Result<Self> {
        let d = self.dim;
        let mut a = self.data.clone();
        let mut inv = Self::identity(d).data;
        for col in 0..d {
            let mut pivot = col;
            for r in (col + 1)..d {
                if a[r * d + col].abs() > a[pivot * d + col].abs() {
                    pivot = r;
                }
            }
            let p = a[pivot * d + col];
            if p == S::zero() || !p.is_finite() {
                return Err(MpmError::SingularMatrix);
            }
            if pivot != col {
                for j in 0..d {
                    a.swap(col * d + j, pivot * d + j);
                    inv.swap(col * d + j, pivot * d + j);
                }
            }
            let inv_p = S::one() / p;
            for j in 0..d {
                a[col * d + j] *= inv_p;
                inv[col * d + j] *= inv_p;
            }
            for r in 0..d {
                if r == col {
                    continue;
                }
                let factor = a[r * d + col];
                if factor == S::zero() {
                    continue;
                }
                for j in 0..d {
                    let av = a[col * d + j];
                    let iv = inv[col * d + j];
                    a[r * d + j] -= factor * av;
                    inv[r * d + j] -= factor * iv;
                }
            }
        }
        Ok(MatN { dim: d, data: inv })
    }

    /// Lower-triangular Cholesky factor; fails unless the matrix is
    /// symmetric positive definite.
    pub fn cholesky(&self) -> Result<Self> {
        let d = self.dim;
        let scale = self.max_abs().max(S::min_positive_value());
        if self.asymmetry() > S::lit(1e-10) * scale {
            return Err(MpmError::InvalidParameter(
                "matrix is not symmetric".to_string(),
            ));
        }
        let mut l = Self::zeros(d);
        for j in 0..d {
            let mut diag = self[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if diag <= S::zero() || !diag.is_finite() {
                return Err(MpmError::InvalidParameter(
                    "matrix is not positive definite".to_string(),
                ));
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..d {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(l)
    }
}

impl<S: Real> Index<(usize, usize)> for MatN<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.dim + j]
    }
}

impl<S: Real> IndexMut<(usize, usize)> for MatN<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.dim + j]
    }
}

impl<S: Real> Add for &MatN<S> {
    type Output = MatN<S>;
    fn add(self, rhs: Self) -> MatN<S> {
        MatN {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }
}

impl<S: Real> Sub for &MatN<S> {
    type Output = MatN<S>;
    fn sub(self, rhs: Self) -> MatN<S> {
        MatN {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }
}

impl<S: Real> Mul for &MatN<S> {
    type Output = MatN<S>;
    fn mul(self, rhs: Self) -> MatN<S> {
        self.matmul(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> MatN<f64> {
        MatN::from_fn(d, |i, j| {
            let base = if i == j { 2.0 } else { 0.0 };
            base + rng.random_range(-1.0..1.0)
        })
    }

    #[test]
    fn cofactor_and_gauss_jordan_inverses_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            for _ in 0..200 {
                let a = random_matrix(&mut rng, d);
                let c = a.inverse_cofactor().unwrap();
                let g = a.inverse_gauss_jordan().unwrap();
                assert!((&c - &g).max_abs() < 1e-12, "d={d}");
            }
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for d in 1..=5 {
            let a = random_matrix(&mut rng, d);
            let inv = a.inverse().unwrap();
            let prod = &a * &inv;
            assert!((&prod - &MatN::identity(d)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn determinant_closed_form_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 1..=3 {
            for _ in 0..50 {
                let a = random_matrix(&mut rng, d);
                assert!((a.determinant() - a.determinant_lu()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = MatN::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(a.inverse(), Err(MpmError::SingularMatrix));
        let b = MatN::<f64>::zeros(4);
        assert_eq!(b.inverse(), Err(MpmError::SingularMatrix));
    }

    #[test]
    fn cholesky_reconstructs_spd_matrix() {
        let a = MatN::from_rows(&[&[4.0, 2.0, 0.4], &[2.0, 3.0, 0.1], &[0.4, 0.1, 1.0]]);
        let l = a.cholesky().unwrap();
        let back = &l * &l.transpose();
        assert!((&back - &a).max_abs() < 1e-14);
        let not_pd = MatN::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(not_pd.cholesky().is_err());
    }

    #[test]
    fn add_outer_matches_outer() {
        let a = VecN::from_slice(&[1.0, -2.0, 0.5]);
        let b = VecN::from_slice(&[3.0, 0.25, -1.0]);
        let mut m = MatN::zeros(3);
        m.add_outer(2.0, &a, &b);
        assert_eq!(m, MatN::outer(&a, &b).scaled(2.0));
    }
}
