// SPDX-License-Identifier: Apache-2.0

//! Two-qubit collective-spin operators.
//!
//! Computational basis order is `{|ee⟩, |eg⟩, |ge⟩, |gg⟩}` with qubit 1 as the
//! left tensor factor. Pauli operators have eigenvalues ±1 and
//! `σ₋ = |g⟩⟨e|`, so the collective `S_z` takes the values `{+2, 0, −2}`.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Matrix2, Vector4};
use num_complex::Complex64;

use crate::error::Result;
use crate::linalg::{ComplexMatrix, Operator};

pub const EE: usize = 0;
pub const EG: usize = 1;
pub const GE: usize = 2;
pub const GG: usize = 3;

/// A two-qubit state vector in the computational basis.
pub type Ket = Vector4<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

fn kron(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Operator {
    Operator::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

fn sigma_minus_1q() -> Matrix2<Complex64> {
    // single-qubit order {|e⟩, |g⟩}; σ₋ = |g⟩⟨e|
    Matrix2::new(ZERO, ZERO, ONE, ZERO)
}

fn sigma_z_1q() -> Matrix2<Complex64> {
    Matrix2::new(ONE, ZERO, ZERO, -ONE)
}

fn sigma_x_1q() -> Matrix2<Complex64> {
    Matrix2::new(ZERO, ONE, ONE, ZERO)
}

fn embed(op: &Matrix2<Complex64>, qubit: usize) -> Operator {
    let id = Matrix2::identity();
    match qubit {
        0 => kron(op, &id),
        1 => kron(&id, op),
        _ => panic!("qubit index {qubit} out of range"),
    }
}

pub fn basis_ket(index: usize) -> Ket {
    let mut k = Ket::zeros();
    k[index] = ONE;
    k
}

/// `|−⟩ = (|eg⟩ − |ge⟩)/√2`
pub fn singlet() -> Ket {
    let mut k = Ket::zeros();
    k[EG] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    k[GE] = Complex64::new(-FRAC_1_SQRT_2, 0.0);
    k
}

/// `|+⟩ = (|eg⟩ + |ge⟩)/√2`
pub fn triplet_zero() -> Ket {
    let mut k = Ket::zeros();
    k[EG] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    k[GE] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    k
}

pub fn projector(ket: &Ket) -> Operator {
    ket * ket.adjoint()
}

/// Single-qubit and collective operators of the two-qubit system.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCatalog {
    pub sigma_minus: [Operator; 2],
    pub sigma_plus: [Operator; 2],
    pub sigma_x: [Operator; 2],
    pub sigma_z: [Operator; 2],
    pub s_plus: Operator,
    pub s_minus: Operator,
    pub s_x: Operator,
    pub s_y: Operator,
    pub s_z: Operator,
    /// Projector onto the singlet `|−⟩`.
    pub singlet_projector: Operator,
}

pub fn build_operator_catalog() -> OperatorCatalog {
    let sm = sigma_minus_1q();
    let sigma_minus = [embed(&sm, 0), embed(&sm, 1)];
    let sigma_plus = [sigma_minus[0].adjoint(), sigma_minus[1].adjoint()];
    let sigma_x = [embed(&sigma_x_1q(), 0), embed(&sigma_x_1q(), 1)];
    let sigma_z = [embed(&sigma_z_1q(), 0), embed(&sigma_z_1q(), 1)];
    let s_minus = sigma_minus[0] + sigma_minus[1];
    let s_plus = sigma_plus[0] + sigma_plus[1];
    let s_x = s_plus + s_minus;
    let s_y = (s_plus - s_minus) * (-I);
    let s_z = sigma_z[0] + sigma_z[1];
    OperatorCatalog {
        sigma_minus,
        sigma_plus,
        sigma_x,
        sigma_z,
        s_plus,
        s_minus,
        s_x,
        s_y,
        s_z,
        singlet_projector: projector(&singlet()),
    }
}

/// Unitary whose columns are `{|ee⟩, |+⟩, |−⟩, |gg⟩}` in computational coordinates.
pub fn singlet_triplet_unitary() -> Operator {
    let cols = [basis_ket(EE), triplet_zero(), singlet(), basis_ket(GG)];
    Operator::from_fn(|r, c| cols[c][r])
}

/// Index of each state in the singlet-triplet basis returned by
/// [`to_singlet_triplet_basis`].
pub mod st {
    pub const EE: usize = 0;
    pub const PLUS: usize = 1;
    pub const MINUS: usize = 2;
    pub const GG: usize = 3;
}

/// Rewrites `m` in the basis `{|ee⟩, |+⟩, |−⟩, |gg⟩}`: returns `U† m U`.
pub fn to_singlet_triplet_basis(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let op = Operator::try_from(m)?;
    Ok(ComplexMatrix::from(to_singlet_triplet(&op)))
}

pub fn to_singlet_triplet(op: &Operator) -> Operator {
    let u = singlet_triplet_unitary();
    u.adjoint() * op * u
}

/// `⟨−|ρ|−⟩`
pub fn singlet_overlap(rho: &Operator) -> f64 {
    // (ρ_eg,eg − ρ_eg,ge − ρ_ge,eg + ρ_ge,ge)/2
    0.5 * (rho[(EG, EG)] - rho[(EG, GE)] - rho[(GE, EG)] + rho[(GE, GE)]).re
}

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &Operator, b: &Operator) -> Complex64 {
    let mut acc = ZERO;
    for r in 0..4 {
        for c in 0..4 {
            acc += a[(r, c)] * b[(c, r)];
        }
    }
    acc
}
