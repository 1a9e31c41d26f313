//! Sparse Galerkin tensor G_{m n l} = E[Phi_m xi_n Phi_l] / E[Phi_m^2].
//!
//! From xi He_k = He_{k+1} + k He_{k-1} and E[He_j He_k] = k! delta_jk, the only
//! nonzero entries couple m to l = m + e_n with weight m_n + 1 and to
//! l = m - e_n with weight 1.

use super::basis::MultiIndexSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    /// Mode n, zero-based into the retained KLE modes.
    pub mode: usize,
    /// Basis position of the partner l.
    pub partner: usize,
    pub weight: f64,
}

/// Couplings grouped by the row index m (CSR layout).
#[derive(Debug, Clone)]
pub struct GalerkinCouplings {
    stochastic_dim: usize,
    basis_len: usize,
    offsets: Vec<usize>,
    entries: Vec<Coupling>,
}

impl GalerkinCouplings {
    pub fn partners(&self, m: usize) -> &[Coupling] {
        &self.entries[self.offsets[m]..self.offsets[m + 1]]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn basis_len(&self) -> usize {
        self.basis_len
    }

    pub fn stochastic_dim(&self) -> usize {
        self.stochastic_dim
    }

    /// (m, coupling) pairs in row order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Coupling)> {
        (0..self.basis_len).flat_map(move |m| self.partners(m).iter().map(move |c| (m, c)))
    }
}

pub fn build_couplings(basis: &MultiIndexSet) -> GalerkinCouplings {
    let s = basis.stochastic_dim();
    let mut offsets = Vec::with_capacity(basis.len() + 1);
    let mut entries = Vec::with_capacity(2 * s * basis.len());
    offsets.push(0);
    for m in basis.indices() {
        for n in 0..s {
            let degree = m.entries()[n];
            if degree >= 1 {
                let lowered = m.shifted(n, -1).expect("degree >= 1");
                let partner = basis.position(&lowered).expect("lowering stays inside a total-degree set");
                entries.push(Coupling { mode: n, partner, weight: 1.0 });
            }
            // raised partners outside the truncated set are dropped
            if let Some(partner) = m.shifted(n, 1).and_then(|raised| basis.position(&raised)) {
                entries.push(Coupling { mode: n, partner, weight: f64::from(degree + 1) });
            }
        }
        offsets.push(entries.len());
    }
    GalerkinCouplings { stochastic_dim: s, basis_len: basis.len(), offsets, entries }
}
