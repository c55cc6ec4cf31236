//! Operators and states on the 12-dimensional qubit ⊗ qutrit ⊗ qubit space.
//!
//! Basis index = qL·6 + qM·2 + qR with down = 0 and up = 1.

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use crate::circuit_model::SpinModelParams;
use crate::error::{Error, Result};

pub const DIM: usize = 12;

pub type C64 = Complex64;
pub type Operator = SMatrix<C64, DIM, DIM>;
pub type StateVector = SVector<C64, DIM>;
pub type DensityMatrix = Operator;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Spin {
    Down,
    Up,
}

impl Spin {
    pub fn bit(self) -> usize {
        match self {
            Spin::Down => 0,
            Spin::Up => 1,
        }
    }

    pub fn from_bit(b: usize) -> Spin {
        if b == 0 {
            Spin::Down
        } else {
            Spin::Up
        }
    }

    /// Eigenvalue of σ_z.
    pub fn sz(self) -> f64 {
        match self {
            Spin::Down => -1.0,
            Spin::Up => 1.0,
        }
    }

    fn letter(self) -> char {
        match self {
            Spin::Down => 'd',
            Spin::Up => 'u',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisLabel {
    pub left: Spin,
    pub qutrit: u8,
    pub right: Spin,
}

impl BasisLabel {
    pub fn new(left: Spin, qutrit: u8, right: Spin) -> Self {
        assert!(qutrit < 3, "qutrit level out of range");
        BasisLabel { left, qutrit, right }
    }

    pub fn index(self) -> usize {
        self.left.bit() * 6 + self.qutrit as usize * 2 + self.right.bit()
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < DIM, "basis index out of range");
        BasisLabel {
            left: Spin::from_bit(i / 6),
            qutrit: ((i % 6) / 2) as u8,
            right: Spin::from_bit(i % 2),
        }
    }

    pub fn all() -> impl Iterator<Item = BasisLabel> {
        (0..DIM).map(BasisLabel::from_index)
    }

    /// Excitation number: up spins plus the qutrit level.
    pub fn excitations(self) -> usize {
        self.left.bit() + self.qutrit as usize + self.right.bit()
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.left.letter(), self.qutrit, self.right.letter())
    }
}

impl FromStr for BasisLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let c: Vec<char> = s.chars().collect();
        let spin = |ch: char| match ch {
            'd' => Some(Spin::Down),
            'u' => Some(Spin::Up),
            _ => None,
        };
        if c.len() == 3 {
            if let (Some(l), Some(q), Some(r)) = (spin(c[0]), c[1].to_digit(10), spin(c[2])) {
                if q < 3 {
                    return Ok(BasisLabel::new(l, q as u8, r));
                }
            }
        }
        Err(Error::Config(format!(
            "invalid basis label `{s}` (expected e.g. `u0d`)"
        )))
    }
}

impl Serialize for BasisLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BasisLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn idx(left: Spin, qutrit: u8, right: Spin) -> usize {
    BasisLabel::new(left, qutrit, right).index()
}

pub fn labels() -> Vec<String> {
    BasisLabel::all().map(|b| b.to_string()).collect()
}

pub fn basis_state(label: BasisLabel) -> StateVector {
    let mut v = StateVector::zeros();
    v[label.index()] = ONE;
    v
}

pub fn product_state(left: [C64; 2], qutrit: [C64; 3], right: [C64; 2]) -> StateVector {
    let mut v = StateVector::zeros();
    for b in BasisLabel::all() {
        v[b.index()] = left[b.left.bit()] * qutrit[b.qutrit as usize] * right[b.right.bit()];
    }
    v
}

pub fn projector(psi: &StateVector) -> DensityMatrix {
    psi * psi.adjoint()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Left,
    Right,
}

fn from_map(f: impl Fn(BasisLabel, BasisLabel) -> C64) -> Operator {
    Operator::from_fn(|r, c| f(BasisLabel::from_index(r), BasisLabel::from_index(c)))
}

fn spin_at(b: BasisLabel, site: Site) -> Spin {
    match site {
        Site::Left => b.left,
        Site::Right => b.right,
    }
}

fn other_site_equal(a: BasisLabel, b: BasisLabel, site: Site) -> bool {
    a.qutrit == b.qutrit
        && match site {
            Site::Left => a.right == b.right,
            Site::Right => a.left == b.left,
        }
}

/// σ⁺ = |↑⟩⟨↓| on one outer qubit.
pub fn sigma_plus(site: Site) -> Operator {
    from_map(|r, c| {
        let hit = spin_at(r, site) == Spin::Up
            && spin_at(c, site) == Spin::Down
            && other_site_equal(r, c, site);
        if hit {
            ONE
        } else {
            ZERO
        }
    })
}

pub fn sigma_minus(site: Site) -> Operator {
    sigma_plus(site).adjoint()
}

pub fn sigma_z(site: Site) -> Operator {
    Operator::from_diagonal(&StateVector::from_fn(|i, _| {
        C64::from(spin_at(BasisLabel::from_index(i), site).sz())
    }))
}

/// |i⟩⟨j| on the qutrit, identity on both qubits.
pub fn qutrit_op(i: u8, j: u8) -> Operator {
    from_map(|r, c| {
        if r.left == c.left && r.right == c.right && r.qutrit == i && c.qutrit == j {
            ONE
        } else {
            ZERO
        }
    })
}

pub fn qutrit_projector(k: u8) -> Operator {
    qutrit_op(k, k)
}

/// diag(0, 1, 2) on the qutrit.
pub fn qutrit_number() -> Operator {
    qutrit_projector(1) + qutrit_projector(2) * C64::from(2.0)
}

pub fn number_operator() -> Operator {
    Operator::from_diagonal(&StateVector::from_fn(|i, _| {
        C64::from(BasisLabel::from_index(i).excitations() as f64)
    }))
}

/// Exchanges the two outer qubits.
pub fn swap_lr() -> Operator {
    from_map(|r, c| {
        if r.left == c.right && r.right == c.left && r.qutrit == c.qutrit {
            ONE
        } else {
            ZERO
        }
    })
}

pub fn basis_projector(label: BasisLabel) -> Operator {
    let mut p = Operator::zeros();
    p[(label.index(), label.index())] = ONE;
    p
}

/// Static Hamiltonian of the spin model.
pub fn static_hamiltonian(sp: &SpinModelParams) -> Operator {
    let mut h = Operator::zeros();
    for b in BasisLabel::all() {
        let (sl, sr) = (b.left.sz(), b.right.sz());
        let mut e = 0.5 * sp.delta_l * sl + 0.5 * sp.delta_r * sr;
        let zz = sp.jz_lm * sl + sp.jz_rm * sr;
        match b.qutrit {
            1 => e += sp.delta_m + zz * sp.d1,
            2 => e += sp.delta_m + sp.small_delta_m + zz * sp.d2,
            _ => {}
        }
        h[(b.index(), b.index())] = C64::from(e);
    }
    // |↑, m⟩ ↔ |↓, m+1⟩ on each side
    for (site, j01, j12) in [
        (Site::Left, sp.j_lm01, sp.j_lm12),
        (Site::Right, sp.j_rm01, sp.j_rm12),
    ] {
        let coupling = sigma_minus(site) * (qutrit_op(1, 0) * C64::from(j01) + qutrit_op(2, 1) * C64::from(j12));
        h += coupling + coupling.adjoint();
    }
    h
}

/// Drive channels of the microwave control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    L,
    R,
    M01,
    M12,
}

impl Channel {
    /// σ⁺ for the outer qubits, |0⟩⟨1| and |1⟩⟨2| for the qutrit.
    pub fn operator(self) -> Operator {
        match self {
            Channel::L => sigma_plus(Site::Left),
            Channel::R => sigma_plus(Site::Right),
            Channel::M01 => qutrit_op(0, 1),
            Channel::M12 => qutrit_op(1, 2),
        }
    }

    /// True when [`Channel::operator`] lowers the excitation number.
    pub fn is_lowering(self) -> bool {
        matches!(self, Channel::M01 | Channel::M12)
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(Channel::L),
            "R" => Ok(Channel::R),
            "M01" => Ok(Channel::M01),
            "M12" => Ok(Channel::M12),
            _ => Err(Error::Config(format!("unknown drive channel `{s}`"))),
        }
    }
}

/// Ideal Hadamard (X + Z)/√2 on the right qubit.
pub fn hadamard_right() -> Operator {
    let h = FRAC_1_SQRT_2;
    from_map(|r, c| {
        if r.left != c.left || r.qutrit != c.qutrit {
            return ZERO;
        }
        match (r.right, c.right) {
            (Spin::Up, Spin::Up) => C64::from(-h),
            _ => C64::from(h),
        }
    })
}

pub fn hadamard_right_state(psi: &StateVector) -> StateVector {
    hadamard_right() * psi
}

/// Labels of the right-qubit Hadamard basis: |0_H⟩ = |+⟩, |1_H⟩ = |−⟩.
pub fn hadamard_basis_labels() -> [(&'static str, [C64; 2]); 2] {
    let h = C64::from(FRAC_1_SQRT_2);
    [("0_H", [h, h]), ("1_H", [h, -h])]
}

pub fn is_hermitian(op: &Operator, tol: f64) -> bool {
    (op - op.adjoint()).iter().all(|z| z.norm() <= tol)
}

pub fn max_abs(op: &Operator) -> f64 {
    op.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    a * b - b * a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_strings_follow_index_order() {
        let l = labels();
        assert_eq!(l[0], "d0d");
        assert_eq!(l[1], "d0u");
        assert_eq!(l[6], "u0d");
        assert_eq!(l[11], "u2u");
    }

    #[test]
    fn parse_rejects_bad_labels() {
        assert!("x0d".parse::<BasisLabel>().is_err());
        assert!("d3d".parse::<BasisLabel>().is_err());
        assert!("d0".parse::<BasisLabel>().is_err());
    }

    #[test]
    fn sigma_plus_raises_left() {
        let sp = sigma_plus(Site::Left);
        let down = basis_state("d1u".parse().unwrap());
        let up = sp * down;
        assert_eq!(up, basis_state("u1u".parse().unwrap()));
    }

    #[test]
    fn channel_orientations() {
        assert!(Channel::M01.is_lowering());
        assert!(!Channel::L.is_lowering());
        let lowered = Channel::M12.operator() * basis_state("d2d".parse().unwrap());
        assert_eq!(lowered, basis_state("d1d".parse().unwrap()));
    }
}
