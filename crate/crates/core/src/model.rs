//! The driven system H(t) = H0 + Omega(t) V and its interaction picture.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::CorrelationKernel;
use crate::operator::{HermitianEigen, Operator, Tolerances, C64};

/// Interaction picture with respect to a static H0.
///
/// All propagation happens on rotated states rho~ = U0^dagger rho U0, where the
/// generator reduces to Omega(t) V~(t) with V~(t) = U0(t)^dagger V U0(t).
#[derive(Debug, Clone)]
pub struct RotatingFrame {
    energies: Vec<f64>,
    basis: DMatrix<C64>,
    /// V expressed in the H0 eigenbasis.
    v_eigen: DMatrix<C64>,
}

impl RotatingFrame {
    pub fn new(h0: &Operator, v: &Operator, tol: &Tolerances) -> Result<Self> {
        if h0.dim() != v.dim() {
            return Err(Error::DimensionMismatch { expected: h0.dim(), got: v.dim() });
        }
        let eig = HermitianEigen::new(h0, tol.hermitian)?;
        let v_eigen = eig.vectors.adjoint() * v.matrix() * &eig.vectors;
        Ok(Self { energies: eig.values, basis: eig.vectors, v_eigen })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Eigenvalues of H0, ascending.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Eigenvectors of H0 as columns.
    pub fn eigenbasis(&self) -> &DMatrix<C64> {
        &self.basis
    }

    /// <j|V|k> in the H0 eigenbasis.
    pub fn coupling_elements(&self) -> &DMatrix<C64> {
        &self.v_eigen
    }

    /// U0(t) = exp(-i H0 t)
    pub fn unitary(&self, t: f64) -> Operator {
        self.in_lab_basis(|j, k| {
            if j == k {
                C64::from_polar(1.0, -self.energies[j] * t)
            } else {
                C64::ZERO
            }
        })
    }

    /// V~(t) = U0(t)^dagger V U0(t)
    pub fn potential(&self, t: f64) -> Operator {
        self.in_lab_basis(|j, k| {
            self.v_eigen[(j, k)] * C64::from_polar(1.0, (self.energies[j] - self.energies[k]) * t)
        })
    }

    /// Map a rotating-frame operator back to the Schrodinger picture: U0 X U0^dagger.
    pub fn to_lab(&self, op: &Operator, t: f64) -> Operator {
        let u = self.unitary(t);
        Operator::from_matrix(u.matrix() * op.matrix() * u.matrix().adjoint())
            .expect("conjugation preserves shape")
    }

    /// Inverse of [`to_lab`](Self::to_lab).
    pub fn to_rotating(&self, op: &Operator, t: f64) -> Operator {
        let u = self.unitary(t);
        Operator::from_matrix(u.matrix().adjoint() * op.matrix() * u.matrix())
            .expect("conjugation preserves shape")
    }

    fn in_lab_basis(&self, entry: impl Fn(usize, usize) -> C64) -> Operator {
        let d = self.dim();
        let inner = DMatrix::from_fn(d, d, entry);
        Operator::from_matrix(&self.basis * inner * self.basis.adjoint()).expect("square by construction")
    }
}

#[derive(Debug, Clone)]
pub struct StochasticModel {
    h0: Operator,
    v: Operator,
    kernel: CorrelationKernel,
    horizon: f64,
    frame: RotatingFrame,
}

impl StochasticModel {
    pub fn new(h0: Operator, v: Operator, kernel: CorrelationKernel, horizon: f64) -> Result<Self> {
        Self::with_tolerances(h0, v, kernel, horizon, &Tolerances::default())
    }

    pub fn with_tolerances(
        h0: Operator,
        v: Operator,
        kernel: CorrelationKernel,
        horizon: f64,
        tol: &Tolerances,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
        }
        if !v.is_hermitian(tol.hermitian) {
            return Err(Error::InvalidOperator("noise coupling V is not Hermitian".into()));
        }
        if kernel.max_lag() < horizon * (1.0 - 1e-12) {
            return Err(Error::InvalidInput(format!(
                "kernel defined up to lag {} but the horizon is {horizon}",
                kernel.max_lag()
            )));
        }
        let frame = RotatingFrame::new(&h0, &v, tol)?;
        Ok(Self { h0, v, kernel, horizon, frame })
    }

    pub fn h0(&self) -> &Operator {
        &self.h0
    }

    pub fn v(&self) -> &Operator {
        &self.v
    }

    pub fn kernel(&self) -> &CorrelationKernel {
        &self.kernel
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn frame(&self) -> &RotatingFrame {
        &self.frame
    }

    /// Same system with a different noise kernel.
    pub fn with_kernel(&self, kernel: CorrelationKernel) -> Result<Self> {
        Self::new(self.h0.clone(), self.v.clone(), kernel, self.horizon)
    }
}

/// V~(t) = U0(t)^dagger V U0(t) for the model's static H0.
pub fn rotating_frame_potential(model: &StochasticModel, t: f64) -> Result<Operator> {
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!("time {t} is not finite")));
    }
    Ok(model.frame().potential(t))
}
