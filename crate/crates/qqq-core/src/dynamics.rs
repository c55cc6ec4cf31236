//! Schrödinger and Lindblad propagation under time-dependent drives.
//!
//! State vectors are integrated in the interaction picture of the static
//! Hamiltonian: the static part is diagonalized once and applied exactly
//! through its eigenphases, so the fixed-step RK4 only resolves the drive.
//! Density matrices are integrated in the picture of the bare diagonal,
//! where couplings, drives and jump operators are all sparse.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::circuit_model::SpinModelParams;
use crate::error::{Error, Result};
use crate::hilbert::{
    basis_projector, max_abs, number_operator, qutrit_number, qutrit_op, sigma_minus, sigma_z,
    static_hamiltonian, BasisLabel, Channel, DensityMatrix, Operator, Site, StateVector, C64, DIM,
    I, ZERO,
};
use crate::units::US;

const GAUSS_CUT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Square,
    /// Plain Gaussian, cut sharply at the support edges.
    Gaussian { center: f64, sigma: f64 },
    /// Gaussian on center ± 4σ, shifted to vanish at the edges and rescaled
    /// so the peak stays at the nominal amplitude.
    GaussianTruncated { center: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub shape: Shape,
    /// Peak Rabi angular frequency.
    pub amplitude: f64,
    pub t_start: f64,
    pub t_stop: f64,
}

impl Envelope {
    pub fn square(amplitude: f64, t_start: f64, t_stop: f64) -> Self {
        Envelope {
            shape: Shape::Square,
            amplitude,
            t_start,
            t_stop,
        }
    }

    pub fn gaussian(amplitude: f64, center: f64, sigma: f64, t_start: f64, t_stop: f64) -> Self {
        Envelope {
            shape: Shape::Gaussian { center, sigma },
            amplitude,
            t_start,
            t_stop,
        }
    }

    pub fn gaussian_truncated(amplitude: f64, center: f64, sigma: f64) -> Self {
        Envelope {
            shape: Shape::GaussianTruncated { center, sigma },
            amplitude,
            t_start: center - GAUSS_CUT * sigma,
            t_stop: center + GAUSS_CUT * sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start < self.t_stop) {
            return Err(Error::invalid("envelope", "t_start must precede t_stop"));
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::invalid("envelope", "amplitude must be finite and non-negative"));
        }
        match self.shape {
            Shape::Gaussian { sigma, .. } | Shape::GaussianTruncated { sigma, .. } if !(sigma > 0.0) => {
                Err(Error::invalid("envelope", "sigma must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t < self.t_start || t > self.t_stop {
            return 0.0;
        }
        match self.shape {
            Shape::Square => self.amplitude,
            Shape::Gaussian { center, sigma } => {
                let x = (t - center) / sigma;
                self.amplitude * (-0.5 * x * x).exp()
            }
            Shape::GaussianTruncated { center, sigma } => {
                let x = (t - center) / sigma;
                let edge = (-0.5 * GAUSS_CUT * GAUSS_CUT).exp();
                self.amplitude * ((-0.5 * x * x).exp() - edge) / (1.0 - edge)
            }
        }
    }

    /// ∫ value(t) dt over the support.
    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Square => self.amplitude * (self.t_stop - self.t_start),
            Shape::Gaussian { center, sigma } => {
                let z = |t: f64| libm::erf((t - center) / (std::f64::consts::SQRT_2 * sigma));
                self.amplitude * sigma * (PI / 2.0).sqrt() * (z(self.t_stop) - z(self.t_start))
            }
            Shape::GaussianTruncated { sigma, .. } => {
                self.amplitude * sigma * truncated_gaussian_unit_area()
            }
        }
    }
}

/// Area of the edge-shifted ±4σ Gaussian with unit peak and unit σ.
pub fn truncated_gaussian_unit_area() -> f64 {
    let edge = (-0.5 * GAUSS_CUT * GAUSS_CUT).exp();
    let full = (2.0 * PI).sqrt() * libm::erf(GAUSS_CUT / std::f64::consts::SQRT_2);
    (full - 2.0 * GAUSS_CUT * edge) / (1.0 - edge)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub channel: Channel,
    pub envelope: Envelope,
    /// Carrier angular frequency.
    pub carrier: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CarrierMode {
    #[default]
    Rwa,
    Cosine,
}

impl std::str::FromStr for CarrierMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rwa" => Ok(CarrierMode::Rwa),
            "cosine" => Ok(CarrierMode::Cosine),
            _ => Err(Error::Config(format!("unknown carrier mode `{s}` (rwa|cosine)"))),
        }
    }
}

/// Coefficient f(t) of the channel operator O in the drive term f·O + f*·O†.
fn drive_coefficient(p: &Pulse, t: f64, mode: CarrierMode) -> C64 {
    let a = p.envelope.value(t);
    if a == 0.0 {
        return ZERO;
    }
    match mode {
        CarrierMode::Rwa => {
            let sign = if p.channel.is_lowering() { 1.0 } else { -1.0 };
            C64::from_polar(0.5 * a, p.phase + sign * p.carrier * t)
        }
        CarrierMode::Cosine => C64::from_polar(a * (p.carrier * t).cos(), p.phase),
    }
}

pub fn drive_hamiltonian(pulses: &[Pulse], t: f64, mode: CarrierMode) -> Operator {
    let mut h = Operator::zeros();
    for p in pulses {
        let f = drive_coefficient(p, t, mode);
        if f != ZERO {
            let o = p.channel.operator() * f;
            h += o + o.adjoint();
        }
    }
    h
}

/// Constant-rate relaxation and dephasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseSet {
    /// Energy relaxation time [s].
    pub t1: f64,
    /// Total coherence time [s].
    pub t2: f64,
}

impl Default for CollapseSet {
    fn default() -> Self {
        CollapseSet {
            t1: 31.0 * US,
            t2: 35.0 * US,
        }
    }
}

impl CollapseSet {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1 > 0.0) || !(t2 > 0.0) {
            return Err(Error::invalid("collapse", "T1 and T2 must be positive"));
        }
        if t2 > 2.0 * t1 {
            return Err(Error::invalid(
                "collapse",
                format!("T2 = {t2:e} s exceeds 2 T1 = {:e} s", 2.0 * t1),
            ));
        }
        Ok(CollapseSet { t1, t2 })
    }

    /// 1/T_φ = 1/T2 − 1/(2 T1)
    pub fn dephasing_rate(&self) -> f64 {
        (1.0 / self.t2 - 0.5 / self.t1).max(0.0)
    }

    pub fn operators(&self) -> Vec<Operator> {
        let relax = (1.0 / self.t1).sqrt();
        let gphi = self.dephasing_rate();
        let mut ops = vec![
            sigma_minus(Site::Left) * C64::from(relax),
            sigma_minus(Site::Right) * C64::from(relax),
            qutrit_op(0, 1) * C64::from(relax),
            qutrit_op(1, 2) * C64::from((2.0 / self.t1).sqrt()),
        ];
        if gphi > 0.0 {
            ops.push(sigma_z(Site::Left) * C64::from((0.5 * gphi).sqrt()));
            ops.push(sigma_z(Site::Right) * C64::from((0.5 * gphi).sqrt()));
            ops.push(qutrit_number() * C64::from((2.0 * gphi).sqrt()));
        }
        ops
    }
}

/// dρ/dt = −i[H, ρ] + Σ (L ρ L† − ½{L†L, ρ})
pub fn lindblad_rhs(rho: &DensityMatrix, h: &Operator, collapse: &[Operator]) -> DensityMatrix {
    let mut d = (h * rho - rho * h) * (-I);
    for l in collapse {
        let ld = l.adjoint();
        let k = ld * l;
        d += l * rho * ld - (k * rho + rho * k) * C64::from(0.5);
    }
    d
}

/// Pure or mixed state.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl QuantumState {
    pub fn populations(&self) -> [f64; DIM] {
        let mut p = [0.0; DIM];
        for (i, pi) in p.iter_mut().enumerate() {
            *pi = match self {
                QuantumState::Pure(v) => v[i].norm_sqr(),
                QuantumState::Mixed(r) => r[(i, i)].re,
            };
        }
        p
    }

    pub fn density(&self) -> DensityMatrix {
        match self {
            QuantumState::Pure(v) => v * v.adjoint(),
            QuantumState::Mixed(r) => *r,
        }
    }

    pub fn transform(&self, u: &Operator) -> QuantumState {
        match self {
            QuantumState::Pure(v) => QuantumState::Pure(u * v),
            QuantumState::Mixed(r) => QuantumState::Mixed(u * r * u.adjoint()),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            QuantumState::Pure(v) => v.norm_squared(),
            QuantumState::Mixed(r) => r.trace().re,
        }
    }

    pub fn expectation(&self, o: &Operator) -> C64 {
        match self {
            QuantumState::Pure(v) => (v.adjoint() * o * v)[(0, 0)],
            QuantumState::Mixed(r) => (o * r).trace(),
        }
    }

    /// ⟨t|ρ|t⟩ or |⟨t|ψ⟩|²
    pub fn fidelity(&self, target: &StateVector) -> f64 {
        match self {
            QuantumState::Pure(v) => target.dotc(v).norm_sqr(),
            QuantumState::Mixed(r) => (target.adjoint() * r * target)[(0, 0)].re,
        }
    }

    pub fn is_pure(&self) -> bool {
        matches!(self, QuantumState::Pure(_))
    }
}

/// Diagonalized static Hamiltonian.
#[derive(Debug, Clone)]
pub struct StaticFrame {
    pub hamiltonian: Operator,
    pub energies: SVector<f64, DIM>,
    /// Eigenvectors as columns.
    pub vectors: Operator,
    pub bare: SVector<f64, DIM>,
    assignment: [usize; DIM],
}

impl StaticFrame {
    pub fn new(h: &Operator) -> Self {
        let eig = SymmetricEigen::new(*h);
        let bare = SVector::<f64, DIM>::from_fn(|i, _| h[(i, i)].re);
        // greedy assignment of eigenvectors to the bare state they overlap most
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(DIM * DIM);
        for b in 0..DIM {
            for k in 0..DIM {
                pairs.push((eig.eigenvectors[(b, k)].norm_sqr(), b, k));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut assignment = [usize::MAX; DIM];
        let mut used = [false; DIM];
        for (_, b, k) in pairs {
            if assignment[b] == usize::MAX && !used[k] {
                assignment[b] = k;
                used[k] = true;
            }
        }
        StaticFrame {
            hamiltonian: *h,
            energies: eig.eigenvalues,
            vectors: eig.eigenvectors,
            bare,
            assignment,
        }
    }

    pub fn from_spin(sp: &SpinModelParams) -> Self {
        Self::new(&static_hamiltonian(sp))
    }

    /// Eigenenergy of the eigenstate continuously connected to `label`.
    pub fn dressed_energy(&self, label: BasisLabel) -> f64 {
        self.energies[self.assignment[label.index()]]
    }

    pub fn dressed_gap(&self, upper: BasisLabel, lower: BasisLabel) -> f64 {
        self.dressed_energy(upper) - self.dressed_energy(lower)
    }

    pub fn bare_gap(&self, upper: BasisLabel, lower: BasisLabel) -> f64 {
        self.bare[upper.index()] - self.bare[lower.index()]
    }

    fn phases(&self, t: f64) -> SVector<C64, DIM> {
        SVector::from_fn(|k, _| C64::from_polar(1.0, self.energies[k] * t))
    }

    /// exp(−iHt)
    pub fn free_propagator(&self, t: f64) -> Operator {
        let p = self.phases(-t);
        let mut vp = self.vectors;
        for k in 0..DIM {
            for r in 0..DIM {
                vp[(r, k)] *= p[k];
            }
        }
        vp * self.vectors.adjoint()
    }

    /// exp(+i H_diag t), the inverse of the bare diagonal evolution.
    pub fn bare_rotation(&self, t: f64) -> Operator {
        Operator::from_diagonal(&SVector::from_fn(|i, _| C64::from_polar(1.0, self.bare[i] * t)))
    }
}

/// Picture in which a segment's final state is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// Relative to the diagonal part of the static Hamiltonian.
    Bare,
    /// Relative to the full static Hamiltonian.
    #[default]
    Dressed,
    /// No frame change.
    Lab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub mode: CarrierMode,
    /// Minimum RK4 steps per period of the fastest residual frequency.
    pub samples_per_period: f64,
    /// Minimum RK4 steps across the shortest pulse.
    pub steps_per_pulse: f64,
    /// Extra subdivision of the automatic step (1 = nominal).
    pub refinement: u32,
    /// Abort when norm or trace drifts further than this.
    pub abort_tolerance: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            mode: CarrierMode::Rwa,
            samples_per_period: 40.0,
            steps_per_pulse: 200.0,
            refinement: 1,
            abort_tolerance: 1e-6,
        }
    }
}

struct DriveTerm {
    pulse: Pulse,
    op: Operator,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    a: usize,
    b: usize,
    v: C64,
}

fn entries(op: &Operator) -> Vec<Entry> {
    let mut out = Vec::new();
    for b in 0..DIM {
        for a in 0..DIM {
            if op[(a, b)] != ZERO {
                out.push(Entry { a, b, v: op[(a, b)] });
            }
        }
    }
    out
}

/// Lindblad evolution in the interaction picture of the bare diagonal,
/// where every operator stays sparse.
struct BareOpen {
    energies: [f64; DIM],
    couplings: Vec<Entry>,
    drives: Vec<(Pulse, Vec<Entry>)>,
    jumps: Vec<Vec<Entry>>,
    decay: [f64; DIM],
    max_step: f64,
}

impl BareOpen {
    fn new(h: &Operator, pulses: &[Pulse], jumps: &[Operator], options: &IntegratorOptions) -> Self {
        let energies: [f64; DIM] = std::array::from_fn(|k| h[(k, k)].re);
        let mut offdiag = *h;
        offdiag.fill_diagonal(ZERO);
        let couplings = entries(&offdiag);
        let drives: Vec<(Pulse, Vec<Entry>)> = pulses
            .iter()
            .filter(|p| p.envelope.amplitude > 0.0)
            .map(|p| (*p, entries(&p.channel.operator())))
            .collect();
        let jumps: Vec<Vec<Entry>> = jumps.iter().map(entries).collect();
        let mut decay = [0.0; DIM];
        for l in &jumps {
            for e in l {
                decay[e.b] += e.v.norm_sqr();
            }
        }

        let gap = |e: &Entry| energies[e.a] - energies[e.b];
        let mut omega_max: f64 = couplings.iter().map(|e| gap(e).abs()).fold(0.0, f64::max);
        for (p, terms) in &drives {
            let sign = if p.channel.is_lowering() { 1.0 } else { -1.0 };
            for e in terms {
                let w = match options.mode {
                    CarrierMode::Rwa => (gap(e) + sign * p.carrier).abs(),
                    CarrierMode::Cosine => gap(e).abs() + p.carrier.abs(),
                };
                omega_max = omega_max.max(w);
            }
        }
        for l in &jumps {
            let wsum: f64 = l.iter().map(|e| e.v.norm_sqr()).sum();
            let center = l.iter().map(|e| e.v.norm_sqr() * gap(e)).sum::<f64>() / wsum;
            for e in l {
                omega_max = omega_max.max((gap(e) - center).abs());
            }
        }
        let rate = decay.iter().cloned().fold(0.0, f64::max);
        let max_step = step_bound(omega_max, rate, &drives.iter().map(|d| d.0).collect::<Vec<_>>(), options);
        BareOpen {
            energies,
            couplings,
            drives,
            jumps,
            decay,
            max_step,
        }
    }

    fn phases(&self, t: f64) -> [C64; DIM] {
        std::array::from_fn(|k| C64::from_polar(1.0, self.energies[k] * t))
    }

    fn rhs(&self, t: f64, rho: &DensityMatrix, mode: CarrierMode) -> DensityMatrix {
        let p = self.phases(t);
        let mut x = DensityMatrix::zeros();
        let mut add = |a: usize, b: usize, h: C64| {
            for c in 0..DIM {
                x[(a, c)] += h * rho[(b, c)];
            }
        };
        for e in &self.couplings {
            add(e.a, e.b, e.v * p[e.a] * p[e.b].conj());
        }
        for (pulse, terms) in &self.drives {
            let f = drive_coefficient(pulse, t, mode);
            if f == ZERO {
                continue;
            }
            for e in terms {
                let h = f * e.v * p[e.a] * p[e.b].conj();
                add(e.a, e.b, h);
                add(e.b, e.a, h.conj());
            }
        }
        for a in 0..DIM {
            let g = C64::new(0.0, -0.5 * self.decay[a]);
            if g != ZERO {
                add(a, a, g);
            }
        }
        let mut d = DensityMatrix::from_fn(|a, b| (x[(a, b)] - x[(b, a)].conj()) * (-I));
        for l in &self.jumps {
            for e1 in l {
                let l1 = e1.v * p[e1.a] * p[e1.b].conj();
                for e2 in l {
                    let l2 = e2.v * p[e2.a] * p[e2.b].conj();
                    d[(e1.a, e2.a)] += l1 * rho[(e1.b, e2.b)] * l2.conj();
                }
            }
        }
        d
    }

    fn rk4(&self, r: &mut DensityMatrix, t: f64, h: f64, mode: CarrierMode) {
        let k1 = self.rhs(t, r, mode);
        let k2 = self.rhs(t + 0.5 * h, &(*r + k1 * C64::from(0.5 * h)), mode);
        let k3 = self.rhs(t + 0.5 * h, &(*r + k2 * C64::from(0.5 * h)), mode);
        let k4 = self.rhs(t + h, &(*r + k3 * C64::from(h)), mode);
        *r += (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(h / 6.0);
    }

    fn to_interaction(&self, rho: &DensityMatrix, t: f64) -> DensityMatrix {
        let p = self.phases(t);
        DensityMatrix::from_fn(|a, b| rho[(a, b)] * p[a] * p[b].conj())
    }

    fn from_interaction(&self, r: &DensityMatrix, t: f64) -> DensityMatrix {
        let p = self.phases(t);
        DensityMatrix::from_fn(|a, b| r[(a, b)] * p[a].conj() * p[b])
    }
}

fn step_bound(omega_max: f64, rate: f64, pulses: &[Pulse], options: &IntegratorOptions) -> f64 {
    let mut h = f64::INFINITY;
    if omega_max > 0.0 {
        h = 2.0 * PI / (options.samples_per_period * omega_max);
    }
    for p in pulses {
        h = h.min((p.envelope.t_stop - p.envelope.t_start) / options.steps_per_pulse);
    }
    if rate > 0.0 {
        h = h.min(0.05 / rate);
    }
    h / options.refinement as f64
}

/// Propagator for one segment with fixed static parameters.
///
/// Closed evolution runs in the interaction picture of the full static
/// Hamiltonian, so drive-free segments are exact. Dissipative or mixed-state
/// evolution runs in the picture of its bare diagonal.
pub struct Evolution {
    frame: StaticFrame,
    drives: Vec<DriveTerm>,
    open: BareOpen,
    dissipative: bool,
    options: IntegratorOptions,
    max_step: f64,
    breakpoints: Vec<f64>,
}

fn rotate(x: &Operator, p: &SVector<C64, DIM>) -> Operator {
    Operator::from_fn(|a, b| x[(a, b)] * p[a] * p[b].conj())
}

fn significant_entries(op: &Operator) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let scale = op.iter().map(|z| z.norm()).fold(0.0, f64::max);
    (0..DIM)
        .flat_map(move |a| (0..DIM).map(move |b| (a, b)))
        .filter_map(move |(a, b)| {
            let w = op[(a, b)].norm();
            (scale > 0.0 && w > 1e-7 * scale).then_some((a, b, w))
        })
}

impl Evolution {
    pub fn new(
        sp: &SpinModelParams,
        pulses: &[Pulse],
        collapse: Option<&CollapseSet>,
        options: IntegratorOptions,
    ) -> Result<Self> {
        sp.validate()?;
        for p in pulses {
            p.envelope.validate()?;
            if !p.carrier.is_finite() || !p.phase.is_finite() {
                return Err(Error::invalid("pulse", "carrier and phase must be finite"));
            }
        }
        if options.refinement == 0 {
            return Err(Error::invalid("refinement", "must be at least 1"));
        }
        let frame = StaticFrame::from_spin(sp);
        let v = frame.vectors;
        let vd = v.adjoint();
        let drives: Vec<DriveTerm> = pulses
            .iter()
            .filter(|p| p.envelope.amplitude > 0.0)
            .map(|p| DriveTerm {
                pulse: *p,
                op: vd * p.channel.operator() * v,
            })
            .collect();
        let lab_jumps = collapse.map(|c| c.operators()).unwrap_or_default();
        let open = BareOpen::new(&frame.hamiltonian, pulses, &lab_jumps, &options);

        let e = frame.energies;
        let mut omega_max: f64 = 0.0;
        for d in &drives {
            let sign = if d.pulse.channel.is_lowering() { 1.0 } else { -1.0 };
            for (a, b, _) in significant_entries(&d.op) {
                let gap = e[a] - e[b];
                let w = match options.mode {
                    CarrierMode::Rwa => (gap + sign * d.pulse.carrier).abs(),
                    CarrierMode::Cosine => gap.abs() + d.pulse.carrier.abs(),
                };
                omega_max = omega_max.max(w);
            }
        }
        let active: Vec<Pulse> = drives.iter().map(|d| d.pulse).collect();
        let max_step = step_bound(omega_max, 0.0, &active, &options);

        let mut breakpoints: Vec<f64> = active
            .iter()
            .flat_map(|p| [p.envelope.t_start, p.envelope.t_stop])
            .collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();

        Ok(Evolution {
            frame,
            drives,
            open,
            dissipative: !lab_jumps.is_empty(),
            options,
            max_step,
            breakpoints,
        })
    }

    pub fn frame(&self) -> &StaticFrame {
        &self.frame
    }

    pub fn options(&self) -> &IntegratorOptions {
        &self.options
    }

    pub fn is_dissipative(&self) -> bool {
        self.dissipative
    }

    /// Largest RK4 step of the closed-system integrator; infinite when the
    /// closed evolution is exact.
    pub fn max_step(&self) -> f64 {
        if self.drives.is_empty() {
            f64::INFINITY
        } else {
            self.max_step
        }
    }

    /// Largest RK4 step of the density-matrix integrator.
    pub fn open_max_step(&self) -> f64 {
        self.open.max_step
    }

    fn interaction_hamiltonian(&self, t: f64, p: &SVector<C64, DIM>) -> Option<Operator> {
        let mut m = Operator::zeros();
        let mut active = false;
        for d in &self.drives {
            let f = drive_coefficient(&d.pulse, t, self.options.mode);
            if f != ZERO {
                m += d.op * f;
                active = true;
            }
        }
        active.then(|| rotate(&(m + m.adjoint()), p))
    }

    fn closed_rhs<const N: usize>(&self, t: f64, c: &SMatrix<C64, DIM, N>) -> SMatrix<C64, DIM, N> {
        let p = self.frame.phases(t);
        match self.interaction_hamiltonian(t, &p) {
            Some(h) => (h * c) * (-I),
            None => SMatrix::zeros(),
        }
    }

    fn rk4_closed<const N: usize>(&self, c: &mut SMatrix<C64, DIM, N>, t: f64, h: f64) {
        let k1 = self.closed_rhs(t, c);
        let k2 = self.closed_rhs(t + 0.5 * h, &(*c + k1 * C64::from(0.5 * h)));
        let k3 = self.closed_rhs(t + 0.5 * h, &(*c + k2 * C64::from(0.5 * h)));
        let k4 = self.closed_rhs(t + h, &(*c + k3 * C64::from(h)));
        *c += (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(h / 6.0);
    }

    /// Calls `step(t, h)` over [t0, t1] with steps no longer than `max_step`,
    /// never stepping across a pulse edge.
    fn march(&self, t0: f64, t1: f64, max_step: f64, mut step: impl FnMut(f64, f64)) -> usize {
        if t1 <= t0 || !max_step.is_finite() {
            return 0;
        }
        let mut cuts = vec![t0];
        cuts.extend(self.breakpoints.iter().copied().filter(|&b| b > t0 && b < t1));
        cuts.push(t1);
        let mut count = 0;
        for w in cuts.windows(2) {
            let span = w[1] - w[0];
            let n = (span / max_step).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for k in 0..n {
                step(w[0] + k as f64 * h, h);
            }
            count += n;
        }
        count
    }

    fn to_interaction<const N: usize>(&self, x: &SMatrix<C64, DIM, N>, t: f64) -> SMatrix<C64, DIM, N> {
        let p = self.frame.phases(t);
        let mut c = self.frame.vectors.adjoint() * x;
        for r in 0..DIM {
            for k in 0..N {
                c[(r, k)] *= p[r];
            }
        }
        c
    }

    fn from_interaction<const N: usize>(&self, c: &SMatrix<C64, DIM, N>, t: f64) -> SMatrix<C64, DIM, N> {
        let p = self.frame.phases(-t);
        let mut x = *c;
        for r in 0..DIM {
            for k in 0..N {
                x[(r, k)] *= p[r];
            }
        }
        self.frame.vectors * x
    }

    /// Lab-frame propagator from t0 to t1 (closed system).
    pub fn unitary(&self, t0: f64, t1: f64) -> Result<Operator> {
        if self.dissipative {
            return Err(Error::Config("unitary requested for a dissipative evolution".into()));
        }
        let mut c = self.to_interaction(&Operator::identity(), t0);
        self.march(t0, t1, self.max_step(), |t, h| self.rk4_closed(&mut c, t, h));
        let u = self.from_interaction(&c, t1);
        let err = max_abs(&(u.adjoint() * u - Operator::identity()));
        if !err.is_finite() || err > self.options.abort_tolerance {
            return Err(Error::Numerical(format!("propagator lost unitarity: {err:.3e}")));
        }
        Ok(u)
    }

    /// Propagates `initial` (given at times[0]) and returns the lab-frame
    /// state at every entry of `times`, plus the number of RK4 steps taken.
    pub fn run(&self, initial: &QuantumState, times: &[f64]) -> Result<(Vec<QuantumState>, usize)> {
        check_grid(times)?;
        let mut out = Vec::with_capacity(times.len());
        let mut steps = 0;
        match initial {
            QuantumState::Pure(psi) if !self.dissipative => {
                let norm0 = psi.norm_squared();
                let mut c = self.to_interaction(psi, times[0]);
                out.push(initial.clone());
                for w in times.windows(2) {
                    steps += self.march(w[0], w[1], self.max_step(), |t, h| self.rk4_closed(&mut c, t, h));
                    let drift = (c.norm_squared() - norm0).abs();
                    if !drift.is_finite() || drift > self.options.abort_tolerance {
                        return Err(Error::Numerical(format!(
                            "norm drift {drift:.3e} at t = {:.6e} s",
                            w[1]
                        )));
                    }
                    out.push(QuantumState::Pure(self.from_interaction(&c, w[1])));
                }
            }
            _ => {
                let rho0 = initial.density();
                let tr0 = rho0.trace().re;
                let mode = self.options.mode;
                let mut r = self.open.to_interaction(&rho0, times[0]);
                out.push(QuantumState::Mixed(rho0));
                for w in times.windows(2) {
                    steps += self.march(w[0], w[1], self.open.max_step, |t, h| {
                        self.open.rk4(&mut r, t, h, mode)
                    });
                    let drift = (r.trace().re - tr0).abs();
                    if !drift.is_finite() || drift > self.options.abort_tolerance {
                        return Err(Error::Numerical(format!(
                            "trace drift {drift:.3e} at t = {:.6e} s",
                            w[1]
                        )));
                    }
                    out.push(QuantumState::Mixed(self.open.from_interaction(&r, w[1])));
                }
            }
        }
        Ok((out, steps))
    }

    /// Converts a lab-frame state at time t into the chosen reference picture.
    pub fn to_reference(&self, state: &QuantumState, t: f64, reference: Reference) -> QuantumState {
        state.transform(&self.reference_rotation(t, reference))
    }

    /// Unitary taking lab-frame states at time t into the reference picture.
    pub fn reference_rotation(&self, t: f64, reference: Reference) -> Operator {
        match reference {
            Reference::Lab => Operator::identity(),
            Reference::Bare => self.frame.bare_rotation(t),
            Reference::Dressed => self.frame.free_propagator(t).adjoint(),
        }
    }
}


fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("t_grid", "must contain at least one point"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("t_grid", "must be finite"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("t_grid", "must be strictly increasing"));
    }
    Ok(())
}

pub fn uniform_grid(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    if points <= 1 || t1 <= t0 {
        return vec![t0];
    }
    (0..points)
        .map(|k| t0 + (t1 - t0) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Invariant checks accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub steps: usize,
}

impl Diagnostics {
    pub fn observe(&mut self, state: &QuantumState) {
        self.max_trace_error = self.max_trace_error.max((state.trace() - 1.0).abs());
        if let QuantumState::Mixed(r) = state {
            let herm = (r - r.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            self.max_hermiticity_error = self.max_hermiticity_error.max(herm);
            let hsym = (r + r.adjoint()) * C64::from(0.5);
            let lo = SymmetricEigen::new(hsym).eigenvalues.min();
            self.min_eigenvalue = self.min_eigenvalue.min(lo);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<QuantumState>,
    pub fidelity: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn populations(&self) -> Vec<[f64; DIM]> {
        self.states.iter().map(|s| s.populations()).collect()
    }

    pub fn population_of(&self, label: BasisLabel) -> Vec<f64> {
        self.states.iter().map(|s| s.populations()[label.index()]).collect()
    }

    pub fn last(&self) -> Option<&QuantumState> {
        self.states.last()
    }

    pub fn append(&mut self, other: Trajectory) {
        let skip = usize::from(
            matches!((self.times.last(), other.times.first()), (Some(a), Some(b)) if a == b),
        );
        self.times.extend(other.times.iter().skip(skip));
        self.states.extend(other.states.into_iter().skip(skip));
        match (&mut self.fidelity, other.fidelity) {
            (Some(f), Some(g)) => f.extend(g.into_iter().skip(skip)),
            (f @ None, Some(g)) if self.states.len() == g.len() => *f = Some(g),
            _ => {}
        }
        let d = other.diagnostics;
        self.diagnostics.max_trace_error = self.diagnostics.max_trace_error.max(d.max_trace_error);
        self.diagnostics.max_hermiticity_error =
            self.diagnostics.max_hermiticity_error.max(d.max_hermiticity_error);
        self.diagnostics.min_eigenvalue = self.diagnostics.min_eigenvalue.min(d.min_eigenvalue);
        self.diagnostics.steps += d.steps;
    }

    /// `t_ns,p_d0d,…,p_u2u[,fidelity]` with 9 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t_ns".to_string()];
        header.extend(BasisLabel::all().map(|b| format!("p_{b}")));
        if self.fidelity.is_some() {
            header.push("fidelity".into());
        }
        out.write_record(&header)?;
        for (k, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![sig9(t / 1e-9)];
            row.extend(s.populations().iter().map(|&p| sig9(p)));
            if let Some(f) = &self.fidelity {
                row.push(sig9(f[k]));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Nine significant digits in scientific notation.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Single-segment propagation on an output grid.
pub fn propagate(
    initial: &QuantumState,
    sp: &SpinModelParams,
    pulses: &[Pulse],
    collapse: Option<&CollapseSet>,
    times: &[f64],
    options: IntegratorOptions,
) -> Result<Trajectory> {
    let evo = Evolution::new(sp, pulses, collapse, options)?;
    let (states, steps) = evo.run(initial, times)?;
    let mut diagnostics = Diagnostics {
        steps,
        ..Default::default()
    };
    for s in &states {
        diagnostics.observe(s);
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        fidelity: None,
        diagnostics,
    })
}

/// ⟨O⟩ along a trajectory.
pub fn expectation(traj: &Trajectory, o: &Operator) -> Vec<C64> {
    let herm = crate::hilbert::is_hermitian(o, 1e-12);
    if !herm {
        log::warn!("expectation of a non-Hermitian observable");
    }
    traj.states.iter().map(|s| s.expectation(o)).collect()
}

/// Observable-free helpers used by the invariant checks.
pub fn excitation_expectation(state: &QuantumState) -> f64 {
    state.expectation(&number_operator()).re
}

pub fn population_projector(label: BasisLabel) -> Operator {
    basis_projector(label)
}
