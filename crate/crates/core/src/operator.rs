//! Dense complex operator algebra for small quantum systems (units with hbar = 1).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Numerical tolerances used by validity checks. Overridable from run configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max |A_jk - conj(A_kj)| for an operator to count as Hermitian.
    pub hermitian: f64,
    /// Max deviation of tr(rho) from 1.
    pub trace: f64,
    /// Max entry of U U^dagger - I.
    pub unitary: f64,
    /// Max discarded imaginary part of an expectation value.
    pub expectation_imag: f64,
    /// Most negative eigenvalue accepted for a density matrix.
    pub positivity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermitian: 1e-12,
            trace: 1e-10,
            unitary: 1e-10,
            expectation_imag: 1e-10,
            positivity: 1e-9,
        }
    }
}

/// A square complex matrix acting on a `dim`-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    mat: DMatrix<C64>,
}

impl Operator {
    pub fn from_matrix(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::InvalidOperator(format!(
                "matrix is {}x{}, expected square",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.nrows() == 0 {
            return Err(Error::InvalidOperator("zero-dimensional operator".into()));
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidOperator("non-finite entry".into()));
        }
        Ok(Self { mat })
    }

    /// Build from row-major entries.
    pub fn from_row_slice(dim: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::InvalidOperator(format!(
                "{} entries cannot form a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self { mat: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mat: DMatrix::identity(dim, dim) }
    }

    pub fn pauli_x() -> Self {
        Self::from_row_slice(2, &[C64::ZERO, C64::ONE, C64::ONE, C64::ZERO]).unwrap()
    }

    pub fn pauli_y() -> Self {
        Self::from_row_slice(2, &[C64::ZERO, -I, I, C64::ZERO]).unwrap()
    }

    pub fn pauli_z() -> Self {
        Self::from_row_slice(2, &[C64::ONE, C64::ZERO, C64::ZERO, -C64::ONE]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.mat[(row, col)]
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<C64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                out.push(self.mat[(r, c)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self { mat: self.mat.adjoint() }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// max_jk |A_jk - conj(A_kj)|
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for r in 0..d {
            for c in r..d {
                worst = worst.max((self.mat[(r, c)] - self.mat[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self { mat: &self.mat * factor }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self { mat: &self.mat + &other.mat })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self { mat: &self.mat - &other.mat })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self { mat: &self.mat * &other.mat })
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Conjugate by a unitary: U A U^dagger.
    pub fn conjugate_by(&self, u: &Self) -> Result<Self> {
        check_dims(self, u)?;
        Ok(Self { mat: &u.mat * &self.mat * u.mat.adjoint() })
    }
}

fn check_dims(a: &Operator, b: &Operator) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are the orthonormal eigenvectors, in the order of `values`.
    pub vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn new(op: &Operator, tol: f64) -> Result<Self> {
        let err = op.hermiticity_error();
        if err > tol {
            return Err(Error::InvalidOperator(format!(
                "operator is not Hermitian (asymmetry {err:e})"
            )));
        }
        // symmetrise away sub-tolerance asymmetry before handing to the solver
        let m = op.matrix();
        let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let d = op.dim();
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = DMatrix::zeros(d, d);
        for (col, &k) in order.iter().enumerate() {
            vectors.set_column(col, &eig.eigenvectors.column(k));
        }
        Ok(Self { values, vectors })
    }

    /// Rebuild f(A) = Q diag(f(E)) Q^dagger.
    pub fn map(&self, f: impl Fn(f64) -> C64) -> Operator {
        let d = self.values.len();
        let mut scaled = self.vectors.clone();
        for (c, &e) in self.values.iter().enumerate() {
            let fe = f(e);
            for r in 0..d {
                scaled[(r, c)] *= fe;
            }
        }
        Operator { mat: scaled * self.vectors.adjoint() }
    }
}

/// exp(-i H0 t) for a static Hermitian generator.
pub fn static_propagator(h0: &Operator, t: f64) -> Result<Operator> {
    static_propagator_with(h0, t, &Tolerances::default())
}

pub fn static_propagator_with(h0: &Operator, t: f64, tol: &Tolerances) -> Result<Operator> {
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!("propagation time {t} is not finite")));
    }
    let eig = HermitianEigen::new(h0, tol.hermitian)?;
    Ok(eig.map(|e| C64::from_polar(1.0, -e * t)))
}

/// The commutator superoperator [a, rho].
pub fn commutator_action(a: &Operator, rho: &Operator) -> Result<Operator> {
    check_dims(a, rho)?;
    Ok(Operator { mat: &a.mat * &rho.mat - &rho.mat * &a.mat })
}

/// tr(obs * rho), with the imaginary part checked against tolerance.
pub fn expectation(obs: &Operator, rho: &DensityMatrix) -> Result<f64> {
    expectation_with(obs, rho.operator(), &Tolerances::default())
}

pub fn expectation_with(obs: &Operator, rho: &Operator, tol: &Tolerances) -> Result<f64> {
    check_dims(obs, rho)?;
    let value = trace_of_product(obs, rho);
    if value.im.abs() > tol.expectation_imag {
        return Err(Error::NumericalConsistency(format!(
            "expectation value has imaginary part {:e}",
            value.im
        )));
    }
    Ok(value.re)
}

/// tr(a b) without forming the product.
pub fn trace_of_product(a: &Operator, b: &Operator) -> C64 {
    let d = a.dim();
    let mut acc = C64::ZERO;
    for r in 0..d {
        for c in 0..d {
            acc += a.mat[(r, c)] * b.mat[(c, r)];
        }
    }
    acc
}

/// A Hermitian, unit-trace operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
}

impl DensityMatrix {
    /// Validate trace, hermiticity, and positivity.
    pub fn new(op: Operator) -> Result<Self> {
        Self::new_with(op, &Tolerances::default())
    }

    pub fn new_with(op: Operator, tol: &Tolerances) -> Result<Self> {
        let tr = op.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.hermitian {
            return Err(Error::InvalidInput(format!("density matrix trace is {tr}")));
        }
        let herm = op.hermiticity_error();
        if herm > tol.hermitian {
            return Err(Error::InvalidInput(format!(
                "density matrix is not Hermitian (asymmetry {herm:e})"
            )));
        }
        let rho = Self { op };
        let min = rho.min_eigenvalue();
        if min < -tol.positivity {
            return Err(Error::InvalidInput(format!(
                "density matrix has negative eigenvalue {min:e}"
            )));
        }
        Ok(rho)
    }

    /// Wrap without checks. Used for truncated-expansion states where positivity
    /// is monitored rather than guaranteed.
    pub fn new_unchecked(op: Operator) -> Self {
        Self { op }
    }

    /// |psi><psi| for a (not necessarily normalised) state vector.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if psi.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidInput("state vector has zero norm".into()));
        }
        let d = psi.len();
        let mut mat = DMatrix::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                mat[(r, c)] = psi[r] * psi[c].conj() / (norm * norm);
            }
        }
        Self::new(Operator { mat })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self { op: Operator::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0)) }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn into_operator(self) -> Operator {
        self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.op.matrix();
        let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Flat row-major kernels used on the propagation hot paths.
pub(crate) mod dense {
    use super::C64;

    /// out = a b - b a for row-major d x d blocks.
    #[inline]
    pub fn commutator_into(a: &[C64], b: &[C64], out: &mut [C64], d: usize) {
        for r in 0..d {
            for c in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..d {
                    acc += a[r * d + k] * b[k * d + c] - b[r * d + k] * a[k * d + c];
                }
                out[r * d + c] = acc;
            }
        }
    }

    /// out = u x u^dagger
    pub fn conjugate_into(u: &[C64], x: &[C64], out: &mut [C64], d: usize) {
        let mut tmp = vec![C64::new(0.0, 0.0); d * d];
        for r in 0..d {
            for c in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..d {
                    acc += u[r * d + k] * x[k * d + c];
                }
                tmp[r * d + c] = acc;
            }
        }
        for r in 0..d {
            for c in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..d {
                    acc += tmp[r * d + k] * u[c * d + k].conj();
                }
                out[r * d + c] = acc;
            }
        }
    }

    pub fn trace(x: &[C64], d: usize) -> C64 {
        (0..d).map(|k| x[k * d + k]).sum()
    }

    /// tr(a b)
    pub fn trace_product(a: &[C64], b: &[C64], d: usize) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..d {
            for c in 0..d {
                acc += a[r * d + c] * b[c * d + r];
            }
        }
        acc
    }

    /// ||x - x^dagger||_F
    pub fn antihermitian_norm(x: &[C64], d: usize) -> f64 {
        let mut acc = 0.0;
        for r in 0..d {
            for c in 0..d {
                acc += (x[r * d + c] - x[c * d + r].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    /// Truncated Taylor series of exp(-i H t); independent of the eigen route.
    fn taylor_exp(h: &Operator, t: f64) -> Operator {
        let d = h.dim();
        let gen = h.matrix() * C64::new(0.0, -t);
        // scale and square to keep the series well conditioned
        let squarings = 8;
        let small = &gen / c(2f64.powi(squarings));
        let mut term = DMatrix::<C64>::identity(d, d);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &small / c(k as f64);
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        Operator::from_matrix(sum).unwrap()
    }

    #[test]
    fn propagator_of_zero_hamiltonian_is_identity() {
        let u = static_propagator(&Operator::zeros(2), 5.0).unwrap();
        assert!(u.max_abs_diff(&Operator::identity(2)) < 1e-15);
    }

    #[test]
    fn propagator_sigma_x_at_pi_is_minus_identity() {
        let u = static_propagator(&Operator::pauli_x(), PI).unwrap();
        assert!(u.max_abs_diff(&Operator::identity(2).scale(c(-1.0))) < 1e-12);
    }

    #[test]
    fn propagator_matches_closed_form_and_taylor_oracle() {
        let h = Operator::pauli_x().scale(c(20.0));
        let u = static_propagator(&h, 0.1).unwrap();
        let closed = Operator::identity(2)
            .scale(c(2f64.cos()))
            .add(&Operator::pauli_x().scale(C64::new(0.0, -(2f64.sin()))))
            .unwrap();
        assert!(u.max_abs_diff(&closed) < 1e-12);
        assert!(u.max_abs_diff(&taylor_exp(&h, 0.1)) < 1e-12);
    }

    #[test]
    fn propagator_rejects_non_hermitian() {
        let bad = Operator::from_row_slice(2, &[c(0.0), c(1.0), c(0.0), c(0.0)]).unwrap();
        assert!(matches!(static_propagator(&bad, 1.0), Err(Error::InvalidOperator(_))));
    }

    #[test]
    fn pauli_commutators() {
        let (x, y, z) = (Operator::pauli_x(), Operator::pauli_y(), Operator::pauli_z());
        assert!(commutator_action(&z, &z).unwrap().frobenius_norm() < 1e-15);
        let zx = commutator_action(&z, &x).unwrap();
        assert!(zx.max_abs_diff(&y.scale(C64::new(0.0, 2.0))) < 1e-15);
        let rho = Operator::identity(2).add(&x).unwrap().scale(c(0.5));
        assert!(commutator_action(&x, &rho).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn commutator_dimension_mismatch() {
        let r = commutator_action(&Operator::pauli_x(), &Operator::identity(3));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn expectation_examples() {
        let plus = DensityMatrix::pure(&[c(1.0), c(1.0)]).unwrap();
        assert!((expectation(&Operator::pauli_x(), &plus).unwrap() - 1.0).abs() < 1e-15);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!(expectation(&Operator::pauli_x(), &mixed).unwrap().abs() < 1e-15);
        let op = Operator::identity(2).add(&Operator::pauli_z().scale(c(0.3))).unwrap().scale(c(0.5));
        let rho = DensityMatrix::new(op).unwrap();
        assert!((expectation(&Operator::pauli_z(), &rho).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn expectation_flags_imaginary_part() {
        // non-Hermitian observable against a valid state gives a complex trace
        let obs = Operator::from_row_slice(2, &[c(0.0), c(1.0), c(0.0), c(0.0)]).unwrap();
        let rho = DensityMatrix::pure(&[c(1.0), C64::new(0.0, 1.0)]).unwrap();
        assert!(matches!(expectation(&obs, &rho), Err(Error::NumericalConsistency(_))));
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(Operator::identity(2)).is_err());
        let neg = Operator::from_row_slice(2, &[c(1.5), c(0.0), c(0.0), c(-0.5)]).unwrap();
        assert!(DensityMatrix::new(neg).is_err());
    }

    #[test]
    fn dense_commutator_agrees_with_operator_route() {
        let a = Operator::pauli_y().add(&Operator::pauli_z().scale(c(0.4))).unwrap();
        let b = Operator::from_row_slice(2, &[c(0.7), C64::new(0.1, 0.2), C64::new(0.1, -0.2), c(0.3)]).unwrap();
        let mut out = vec![C64::ZERO; 4];
        dense::commutator_into(&a.to_row_major(), &b.to_row_major(), &mut out, 2);
        let expect = commutator_action(&a, &b).unwrap().to_row_major();
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).norm() < 1e-15);
        }
    }
}
