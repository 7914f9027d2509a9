//! Dense complex linear algebra used across the crate.
//!
//! Inversions are always expressed as solves against an LU factorization with
//! partial pivoting. A factorization is rejected as singular when the
//! estimated reciprocal 1-norm condition number drops below a threshold.

use nalgebra::{DMatrix, DVector, Dyn, PermutationSequence, LU};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

/// Default reciprocal-condition threshold below which a matrix is declared singular.
pub const DEFAULT_RCOND_THRESHOLD: f64 = 1e-14;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

/// Rejects matrices holding NaN or infinite entries.
pub fn ensure_finite(m: &ComplexMatrix) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn fro_norm(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Maximum absolute column sum.
pub fn norm_one(m: &ComplexMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute row sum.
pub fn norm_inf(m: &ComplexMatrix) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute error when `b` vanishes.
pub fn relative_error(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let diff = fro_norm(&(a - b));
    let scale = fro_norm(b);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn symmetry_residual(m: &ComplexMatrix) -> f64 {
    fro_norm(&(m - m.transpose()))
}

pub fn unitarity_residual(m: &ComplexMatrix) -> f64 {
    let n = m.ncols();
    fro_norm(&(m.adjoint() * m - identity(n)))
}

/// LU factorization `P·A = L·U` of a square complex matrix, with its
/// estimated reciprocal condition number.
#[derive(Debug, Clone)]
pub struct LuFactor {
    perm: PermutationSequence<Dyn>,
    l: ComplexMatrix,
    u: ComplexMatrix,
    rcond: f64,
}

impl LuFactor {
    /// Factorizes `a` and estimates its reciprocal condition number.
    ///
    /// Fails with [`Error::SingularMatrix`] when the estimate is below `threshold`.
    pub fn new(a: &ComplexMatrix, threshold: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "cannot factorize a non-square {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        ensure_finite(a)?;
        let anorm = norm_one(a);
        let (perm, l, u) = LU::new(a.clone()).unpack();
        let mut factor = LuFactor { perm, l, u, rcond: 0.0 };
        let singular = n == 0 || anorm == 0.0 || factor.u.diagonal().iter().any(|d| *d == Complex64::new(0.0, 0.0));
        if !singular {
            factor.rcond = 1.0 / (anorm * factor.estimate_inverse_norm_one());
        }
        if !(factor.rcond >= threshold) {
            return Err(Error::SingularMatrix {
                rcond: factor.rcond,
                threshold,
            });
        }
        Ok(factor)
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// Estimated reciprocal 1-norm condition number.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    /// Overwrites `b` with `A⁻¹·b`.
    fn solve_in_place(&self, b: &mut ComplexMatrix) {
        self.perm.permute_rows(b);
        self.l.solve_lower_triangular_with_diag_mut(b, Complex64::new(1.0, 0.0));
        self.u.solve_upper_triangular_mut(b);
    }

    /// Overwrites `b` with `A⁻ᴴ·b`.
    fn solve_adjoint_in_place(&self, b: &mut ComplexMatrix) {
        self.u.ad_solve_upper_triangular_mut(b);
        self.l.ad_solve_lower_triangular_mut(b);
        self.perm.inv_permute_rows(b);
    }

    pub fn solve(&self, b: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(b.nrows(), self.dim(), "right-hand side has wrong row count");
        let mut out = b.clone();
        self.solve_in_place(&mut out);
        out
    }

    pub fn solve_vector(&self, b: &ComplexVector) -> ComplexVector {
        assert_eq!(b.len(), self.dim(), "right-hand side has wrong length");
        let mut out = ComplexMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve_in_place(&mut out);
        ComplexVector::from_column_slice(out.as_slice())
    }

    /// Solves `x·A = b` for a row vector `b`, i.e. `Aᵀ·xᵀ = bᵀ`.
    pub fn solve_row(&self, b: &ComplexVector) -> ComplexVector {
        assert_eq!(b.len(), self.dim(), "right-hand side has wrong length");
        // Aᵀ y = b  <=>  Aᴴ conj(y) = conj(b)
        let mut out = ComplexMatrix::from_iterator(b.len(), 1, b.iter().map(|z| z.conj()));
        self.solve_adjoint_in_place(&mut out);
        ComplexVector::from_iterator(b.len(), out.iter().map(|z| z.conj()))
    }

    /// Returns `B·A⁻¹`.
    pub fn solve_right(&self, b: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(b.ncols(), self.dim(), "left-hand side has wrong column count");
        // (B A⁻¹)ᴴ = A⁻ᴴ Bᴴ
        let mut out = b.adjoint();
        self.solve_adjoint_in_place(&mut out);
        out.adjoint()
    }

    /// Exact `A⁻¹` obtained by solving against the identity.
    pub fn inverse(&self) -> ComplexMatrix {
        self.solve(&identity(self.dim()))
    }

    /// Hager–Higham estimate of `‖A⁻¹‖₁`.
    fn estimate_inverse_norm_one(&self) -> f64 {
        let n = self.dim();
        if n == 1 {
            return 1.0 / self.u[(0, 0)].norm();
        }
        let one_norm = |v: &ComplexMatrix| v.iter().map(|z| z.norm()).sum::<f64>();
        let mut x = ComplexMatrix::from_element(n, 1, Complex64::new(1.0 / n as f64, 0.0));
        let mut estimate = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let mut y = x.clone();
            self.solve_in_place(&mut y);
            let est = one_norm(&y);
            if est <= estimate {
                break;
            }
            estimate = est;
            let mut xi = y.map(|z| {
                let r = z.norm();
                if r > 0.0 {
                    z / r
                } else {
                    Complex64::new(1.0, 0.0)
                }
            });
            self.solve_adjoint_in_place(&mut xi);
            let (j, _) = xi
                .iter()
                .enumerate()
                .fold((0, -1.0), |best, (i, z)| if z.norm() > best.1 { (i, z.norm()) } else { best });
            if j == last_j {
                break;
            }
            last_j = j;
            x = ComplexMatrix::zeros(n, 1);
            x[j] = Complex64::new(1.0, 0.0);
        }
        // Alternating test vector guards against the estimator stalling.
        let mut alt = ComplexMatrix::from_fn(n, 1, |i, _| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            Complex64::new(sign * (1.0 + i as f64 / (n - 1) as f64), 0.0)
        });
        self.solve_in_place(&mut alt);
        let alt_est = 2.0 * one_norm(&alt) / (3.0 * n as f64);
        estimate.max(alt_est)
    }
}

/// Computes `(A + shift·I)⁻¹ (A − shift·I)`, the shared form of every
/// impedance-to-reflection conversion.
pub fn cayley(a: &ComplexMatrix, shift: f64, threshold: f64) -> Result<ComplexMatrix> {
    let n = a.nrows();
    let eye = identity(n) * Complex64::new(shift, 0.0);
    let lu = LuFactor::new(&(a + &eye), threshold)?;
    Ok(lu.solve(&(a - &eye)))
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    /// Row-major `[re, im]` pairs.
    data: Vec<[f64; 2]>,
}

/// Serde adapter writing a matrix as `{rows, cols, data: [[re, im], ...]}` in row-major order.
pub mod serde_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &ComplexMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        MatrixRepr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComplexMatrix, D::Error> {
        let repr = MatrixRepr::deserialize(d)?;
        if repr.data.len() != repr.rows * repr.cols {
            return Err(serde::de::Error::custom(format!(
                "expected {} entries for a {}x{} matrix, found {}",
                repr.rows * repr.cols,
                repr.rows,
                repr.cols,
                repr.data.len()
            )));
        }
        let m = ComplexMatrix::from_row_iterator(
            repr.rows,
            repr.cols,
            repr.data.iter().map(|p| Complex64::new(p[0], p[1])),
        );
        ensure_finite(&m).map_err(serde::de::Error::custom)?;
        Ok(m)
    }
}

/// Serde adapter for a single complex scalar as `[re, im]`.
pub mod serde_complex {
    use super::*;

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn solve_matches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 5, 12] {
            let a = random_matrix(&mut rng, n);
            let x = random_matrix(&mut rng, n);
            let b = &a * &x;
            let lu = LuFactor::new(&a, DEFAULT_RCOND_THRESHOLD).unwrap();
            assert!(relative_error(&lu.solve(&b), &x) < 1e-10);
            let br = &x * &a;
            assert!(relative_error(&lu.solve_right(&br), &x) < 1e-10);
        }
    }

    #[test]
    fn rcond_estimate_is_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 4, 9] {
            let a = random_matrix(&mut rng, n);
            let lu = LuFactor::new(&a, 0.0).unwrap();
            let exact = 1.0 / (norm_one(&a) * norm_one(&lu.inverse()));
            // Hager's estimator is a lower bound on ‖A⁻¹‖₁, so rcond is an upper bound.
            assert!(lu.rcond() >= exact * (1.0 - 1e-12));
            assert!(lu.rcond() <= exact * 3.0, "estimate {} exact {}", lu.rcond(), exact);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(matches!(
            LuFactor::new(&a, DEFAULT_RCOND_THRESHOLD),
            Err(Error::SingularMatrix { .. })
        ));
        let near = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0 + 1e-16, 0.0)]);
        assert!(LuFactor::new(&near, DEFAULT_RCOND_THRESHOLD).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let a = ComplexMatrix::from_element(2, 2, c(f64::NAN, 0.0));
        assert!(matches!(ensure_finite(&a), Err(Error::NonFinite { row: 0, col: 0 })));
    }

    #[test]
    fn matrix_json_uses_number_pairs() {
        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "serde_matrix")] ComplexMatrix);
        let m = ComplexMatrix::from_row_slice(1, 2, &[c(1.0, -2.0), c(0.5, 0.0)]);
        let s = serde_json::to_string(&Wrap(m.clone())).unwrap();
        assert_eq!(s, r#"{"rows":1,"cols":2,"data":[[1.0,-2.0],[0.5,0.0]]}"#);
        let back: Wrap = serde_json::from_str(&s).unwrap();
        assert_eq!(back.0, m);
    }
}
