//! Small dense complex-vector kernel used by the beamforming and bandwidth code.

use std::ops::Index;

use num_complex::Complex64;

/// Column vector in `C^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CVector(Vec<Complex64>);

impl CVector {
    pub fn new(entries: Vec<Complex64>) -> Self {
        Self(entries)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Self {
        assert_eq!(re.len(), im.len());
        Self(re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex64> {
        self.0.iter()
    }

    /// `self^H other`.
    pub fn dot(&self, other: &CVector) -> Complex64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|self^H other|^2`.
    pub fn gain(&self, other: &CVector) -> f64 {
        self.dot(other).norm_sqr()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: Complex64) -> CVector {
        CVector(self.0.iter().map(|z| z * s).collect())
    }

    pub fn scale_re(&self, s: f64) -> CVector {
        CVector(self.0.iter().map(|z| z * s).collect())
    }

    /// `self + a * x`.
    pub fn axpy(&self, a: Complex64, x: &CVector) -> CVector {
        debug_assert_eq!(self.len(), x.len());
        CVector(self.0.iter().zip(&x.0).map(|(y, x)| y + a * x).collect())
    }

    /// Unit-norm copy, or `None` for a zero (or non-finite) vector.
    pub fn normalized(&self) -> Option<CVector> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self.scale_re(1.0 / n))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<usize> for CVector {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl From<Vec<Complex64>> for CVector {
    fn from(v: Vec<Complex64>) -> Self {
        Self(v)
    }
}

/// Sine of the principal angle between two non-zero vectors, computed from the
/// residual of projecting `b` onto `a` (accurate near collinearity).
pub fn principal_angle_sin(a: &CVector, b: &CVector) -> f64 {
    let aa = a.norm_sqr();
    let coef = a.dot(b) / aa;
    let resid = b.axpy(-coef, a);
    (resid.norm() / b.norm()).min(1.0)
}

/// Orthonormal basis `(e1, e2)` of `span{a, b}` with `e1 = a / ||a||`.
/// `e2` is `None` when the vectors are collinear to within `tol` in sine.
pub fn span_basis(a: &CVector, b: &CVector, tol: f64) -> (CVector, Option<CVector>) {
    let e1 = a.scale_re(1.0 / a.norm());
    let resid = b.axpy(-e1.dot(b), &e1);
    if resid.norm() <= tol * b.norm() {
        (e1, None)
    } else {
        let e2 = resid.scale_re(1.0 / resid.norm());
        (e1, Some(e2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn dot_is_conjugate_linear_in_first_argument() {
        let a = CVector::new(vec![c(0.0, 1.0), c(2.0, 0.0)]);
        let b = CVector::new(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        // conj(i)*1 + 2*i = -i + 2i = i
        assert_eq!(a.dot(&b), c(0.0, 1.0));
        assert!((a.norm_sqr() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn angle_and_basis() {
        let a = CVector::new(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let b = CVector::new(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let s = principal_angle_sin(&a, &b);
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        let (e1, e2) = span_basis(&a, &b, 1e-12);
        let e2 = e2.unwrap();
        assert!(e1.dot(&e2).norm() < 1e-15);
        assert!((e2.norm() - 1.0).abs() < 1e-15);

        let (_, none) = span_basis(&a, &a.scale(c(0.0, 3.0)), 1e-12);
        assert!(none.is_none());
    }
}
