//! Pulse schedules, parameter tuning and closed-form oracles for every
//! protocol of the qubit-qutrit-qubit device.

use nalgebra::{Matrix2, Matrix3, Matrix4};
use serde::{Deserialize, Deserializer, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::path::Path;

use crate::analysis::{
    self, computational_labels, embed_state, leakage, phase_calibrated_fidelity, restrict_state,
    FidelityReport, SubMatrix,
};
use crate::circuit_model::{derive_spin_model, CircuitParams, SpinModelParams};
use crate::dynamics::{
    truncated_gaussian_unit_area, uniform_grid, CarrierMode, CollapseSet, Diagnostics, Envelope,
    Evolution, IntegratorOptions, Pulse, QuantumState, Reference, StaticFrame, Trajectory,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    basis_state, hadamard_right, product_state, static_hamiltonian, BasisLabel, Channel, Operator,
    Spin, StateVector, C64, ONE, ZERO,
};
use crate::units::{ghz, mhz, to_mhz, NS, US};

fn label(s: &str) -> BasisLabel {
    s.parse().expect("static basis label")
}

// ---------------------------------------------------------------------------
// Schedules

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub spin: SpinModelParams,
    pub duration: f64,
    pub pulses: Vec<Pulse>,
    /// Picture in which the state is handed to the next step.
    pub reference: Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Evolve(Segment),
    /// Instantaneous ideal unitary.
    Gate { name: String, op: Operator },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub steps: Vec<Step>,
}

impl Schedule {
    pub fn single(segment: Segment) -> Self {
        Schedule {
            steps: vec![Step::Evolve(segment)],
        }
    }

    pub fn then(mut self, step: Step) -> Self {
        self.steps.push(step);
        self
    }

    pub fn extend(mut self, other: Schedule) -> Self {
        self.steps.extend(other.steps);
        self
    }

    pub fn duration(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Evolve(seg) => seg.duration,
                Step::Gate { .. } => 0.0,
            })
            .sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.steps.iter().filter_map(|s| match s {
            Step::Evolve(seg) => Some(seg),
            Step::Gate { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub integrator: IntegratorOptions,
    pub collapse: Option<CollapseSet>,
    /// Output points per segment, ends included.
    pub points: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            integrator: IntegratorOptions::default(),
            collapse: None,
            points: 201,
        }
    }
}

/// What the fidelity column is measured against.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    None,
    State(StateVector),
    /// Equal superposition of two basis states with a free relative phase.
    Pair(BasisLabel, BasisLabel),
}

impl Target {
    pub fn fidelity(&self, state: &QuantumState) -> Option<f64> {
        match self {
            Target::None => None,
            Target::State(t) => Some(state.fidelity(t)),
            Target::Pair(a, b) => Some(phase_calibrated_fidelity(state, *a, *b)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleRun {
    /// Lab-frame states of each segment on the global time axis.
    pub trajectory: Trajectory,
    /// Final state in the reference picture of the last segment.
    pub final_state: QuantumState,
}

/// Runs every step in order. Each segment starts from the previous step's
/// state taken as the lab state at its local t = 0.
pub fn run_schedule(
    schedule: &Schedule,
    initial: &QuantumState,
    opts: &RunOptions,
    target: &Target,
) -> Result<ScheduleRun> {
    let mut cur = initial.clone();
    let mut offset = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![cur.clone()];
    let mut fidelity = vec![target.fidelity(&cur)];
    let mut diagnostics = Diagnostics::default();
    diagnostics.observe(&cur);
    for step in &schedule.steps {
        match step {
            Step::Gate { op, .. } => {
                cur = cur.transform(op);
                times.push(offset);
                states.push(cur.clone());
                fidelity.push(target.fidelity(&cur));
            }
            Step::Evolve(seg) => {
                if seg.duration <= 0.0 {
                    continue;
                }
                let evo = Evolution::new(&seg.spin, &seg.pulses, opts.collapse.as_ref(), opts.integrator)?;
                let grid = uniform_grid(0.0, seg.duration, opts.points.max(2));
                let (out, steps) = evo.run(&cur, &grid)?;
                diagnostics.steps += steps;
                for (t, s) in grid.iter().zip(&out).skip(1) {
                    diagnostics.observe(s);
                    let reference = evo.to_reference(s, *t, seg.reference);
                    fidelity.push(target.fidelity(&reference));
                    times.push(offset + t);
                    states.push(s.clone());
                }
                let last = out.last().expect("non-empty grid");
                cur = evo.to_reference(last, seg.duration, seg.reference);
                offset += seg.duration;
            }
        }
    }
    let fidelity = if matches!(target, Target::None) {
        None
    } else {
        Some(fidelity.into_iter().map(|f| f.unwrap_or(0.0)).collect())
    };
    Ok(ScheduleRun {
        trajectory: Trajectory {
            times,
            states,
            fidelity,
            diagnostics,
        },
        final_state: cur,
    })
}

/// Closed-system propagator of the whole schedule, each segment expressed
/// in its reference picture.
pub fn schedule_unitary(schedule: &Schedule, integrator: &IntegratorOptions) -> Result<Operator> {
    let mut u = Operator::identity();
    for step in &schedule.steps {
        match step {
            Step::Gate { op, .. } => u = op * u,
            Step::Evolve(seg) => {
                if seg.duration <= 0.0 {
                    continue;
                }
                let evo = Evolution::new(&seg.spin, &seg.pulses, None, *integrator)?;
                let useg = evo.reference_rotation(seg.duration, seg.reference) * evo.unitary(0.0, seg.duration)?;
                u = useg * u;
            }
        }
    }
    Ok(u)
}

/// Final state only.
pub fn run_final(schedule: &Schedule, initial: &QuantumState, opts: &RunOptions) -> Result<QuantumState> {
    let o = RunOptions { points: 2, ..*opts };
    Ok(run_schedule(schedule, initial, &o, &Target::None)?.final_state)
}

// ---------------------------------------------------------------------------
// Closed-form oracles

/// Populations (stay in |↓2↓⟩, transfer to |↑0↑⟩) in the symmetric resonant
/// four-state block.
pub fn dissociation_analytics(j: f64, jz: f64, t: f64) -> (f64, f64) {
    let lambda = (4.0 * j * j + jz * jz).sqrt();
    let (cz, sz) = ((jz * t).cos(), (jz * t).sin());
    let (cl, sl) = ((lambda * t).cos(), (lambda * t).sin());
    let r = if lambda > 0.0 { jz / lambda } else { 0.0 };
    let stay = 0.25 * (cz + cl).powi(2) + 0.25 * (sz + r * sl).powi(2);
    let transfer = 0.25 * (cz - cl).powi(2) + 0.25 * (sz - r * sl).powi(2);
    (stay, transfer)
}

/// Block of the dissociation Hamiltonian in the basis
/// (|↓2↓⟩, |↓1↑⟩, |↑1↓⟩, |↑0↑⟩), energies relative to the intermediates.
pub fn dissociation_block_hamiltonian(j: f64, jz: f64) -> Matrix4<C64> {
    let e = C64::from(-2.0 * jz);
    let c = C64::from(j);
    Matrix4::new(
        e, c, c, ZERO, //
        c, ZERO, ZERO, c, //
        c, ZERO, ZERO, c, //
        ZERO, c, c, e,
    )
}

/// Symmetric spin parameters realizing the four-state block: all outer and
/// 1-2 splittings equal to `delta`, the 0-1 splitting raised by 2Jz so that
/// the end states sit 2Jz below the intermediates.
pub fn symmetric_dissociation_spin(j: f64, jz: f64, delta: f64) -> SpinModelParams {
    SpinModelParams {
        delta_l: delta,
        delta_m: delta + 2.0 * jz,
        small_delta_m: delta,
        delta_r: delta,
        j_lm01: j,
        j_rm01: j,
        j_lm12: j,
        j_rm12: j,
        jz_lm: jz,
        jz_rm: jz,
        d1: 1.0,
        d2: 1.0,
        frame_omega: 0.0,
    }
}

/// exp(−iHt) of the resonant exchange block in the basis
/// (|↑1↓⟩, |↓2↓⟩, |↓1↑⟩).
pub fn cswap_block_propagator(j12: f64, t: f64) -> Matrix3<C64> {
    let x = SQRT_2 * j12 * t;
    let (c, s) = (x.cos(), x.sin());
    let p = C64::from(0.5 * (c + 1.0));
    let m = C64::from(0.5 * (c - 1.0));
    let o = C64::new(0.0, -s * FRAC_1_SQRT_2);
    Matrix3::new(
        p, o, m, //
        o, C64::from(c), o, //
        m, o, p,
    )
}

/// Resonant exchange parameters: |↑1↓⟩, |↓2↓⟩, |↓1↑⟩ degenerate, 0-1
/// transitions far detuned, no dispersive shifts.
pub fn resonant_exchange_spin(j12: f64, delta: f64) -> SpinModelParams {
    SpinModelParams {
        delta_l: delta,
        delta_m: delta + ghz(1.0),
        small_delta_m: delta,
        delta_r: delta,
        j_lm01: 0.0,
        j_rm01: 0.0,
        j_lm12: j12,
        j_rm12: j12,
        jz_lm: 0.0,
        jz_rm: 0.0,
        d1: 1.0,
        d2: 1.0,
        frame_omega: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhzCondition {
    pub jz: f64,
    pub lambda: f64,
    pub time: f64,
}

/// Jz that produces the equal superposition of |↓2↓⟩ and |↑0↑⟩ at the
/// n-th oscillation, t = nπ/λ.
pub fn ghz_direct_condition(n: u32, m: u32, j01: f64, d2: f64, general: bool) -> Result<GhzCondition> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if !(j01.is_finite() && j01 != 0.0) {
        return Err(Error::invalid("J01", "must be finite and non-zero"));
    }
    let jz = if general {
        if !(d2 > 0.0) {
            return Err(Error::invalid("D2", "must be positive"));
        }
        let cn = ((if n % 2 == 1 { 1.0 } else { -1.0 }) / 8.0_f64).acos();
        let x = (n as f64 * PI / cn).powi(2) - 1.0;
        if x <= 0.0 {
            return Err(Error::Infeasible(format!("no real solution for n = {n}")));
        }
        2.0 * 6.0_f64.sqrt() * j01.abs() / (x.sqrt() * d2)
    } else {
        if m % 2 == 0 {
            return Err(Error::invalid("m", "must be odd"));
        }
        if 2 * n <= m {
            return Err(Error::Infeasible(format!(
                "n = {n}, m = {m}: requires n > m/2 for a real solution"
            )));
        }
        let r = (2 * n) as f64 / m as f64;
        2.0 * j01.abs() / (r * r - 1.0).sqrt()
    };
    let lambda = (4.0 * j01 * j01 + jz * jz).sqrt();
    Ok(GhzCondition {
        jz,
        lambda,
        time: n as f64 * PI / lambda,
    })
}

/// U(φ, θ) on (|0⟩, |2⟩).
pub fn holonomic_ideal(phi: f64, theta: f64) -> Matrix2<C64> {
    let (c, s) = (theta.cos(), theta.sin());
    Matrix2::new(
        C64::from(c),
        C64::from_polar(s, phi),
        C64::from_polar(s, -phi),
        C64::from(-c),
    )
}

/// Controlled U(φ, θ) on the 8 computational states; the rotation acts on
/// the last two, |↑0↑⟩ and |↑2↑⟩.
pub fn controlled_holonomic_ideal(phi: f64, theta: f64) -> SubMatrix {
    let mut u = SubMatrix::identity(8, 8);
    let h = holonomic_ideal(phi, theta);
    for r in 0..2 {
        for c in 0..2 {
            u[(6 + r, 6 + c)] = h[(r, c)];
        }
    }
    u
}

/// U^c(π/2, θ)·U^c(0, 0).
pub fn deutsch_ideal(theta: f64) -> SubMatrix {
    controlled_holonomic_ideal(PI / 2.0, theta) * controlled_holonomic_ideal(0.0, 0.0)
}

/// Computational states of the gates that encode the control in {|0⟩, |2⟩}.
pub fn labels_02() -> Vec<BasisLabel> {
    computational_labels([0, 2])
}

/// Computational states of the swap gates, qutrit in {|0⟩, |1⟩}.
pub fn labels_01() -> Vec<BasisLabel> {
    computational_labels([0, 1])
}

fn diagonal_sub(labels: &[BasisLabel], f: impl Fn(BasisLabel) -> C64) -> SubMatrix {
    SubMatrix::from_fn(labels.len(), labels.len(), |r, c| if r == c { f(labels[r]) } else { ZERO })
}

pub fn ccz_ideal() -> SubMatrix {
    let ls = labels_02();
    diagonal_sub(&ls, |l| if l == label("u0u") { -ONE } else { ONE })
}

/// Flips the right qubit when the left qubit is up and the qutrit is |0⟩.
pub fn toffoli_ideal() -> SubMatrix {
    let ls = labels_02();
    SubMatrix::from_fn(8, 8, |r, c| {
        let (out, inp) = (ls[r], ls[c]);
        let flip = inp.left == Spin::Up && inp.qutrit == 0;
        let expect = if flip {
            BasisLabel::new(inp.left, inp.qutrit, flip_spin(inp.right))
        } else {
            inp
        };
        if out == expect {
            ONE
        } else {
            ZERO
        }
    })
}

fn flip_spin(s: Spin) -> Spin {
    match s {
        Spin::Up => Spin::Down,
        Spin::Down => Spin::Up,
    }
}

fn swap_sub(sign_for: impl Fn(BasisLabel) -> C64) -> SubMatrix {
    let ls = labels_01();
    SubMatrix::from_fn(8, 8, |r, c| {
        let (out, inp) = (ls[r], ls[c]);
        let expect = if inp.qutrit == 1 {
            BasisLabel::new(inp.right, 1, inp.left)
        } else {
            inp
        };
        if out == expect {
            sign_for(inp)
        } else {
            ZERO
        }
    })
}

/// Qubit swap controlled by qutrit |1⟩, carrying the −1 that the exchange
/// sequence puts on the whole |1⟩ block.
pub fn cswap_ideal() -> SubMatrix {
    swap_sub(|l| if l.qutrit == 1 { -ONE } else { ONE })
}

/// Map after the exchange stage alone: |↓1↓⟩ keeps +1.
pub fn cswap_stage1_ideal() -> SubMatrix {
    swap_sub(|l| {
        if l.qutrit == 1 && l != label("d1d") {
            -ONE
        } else {
            ONE
        }
    })
}

// ---------------------------------------------------------------------------
// Schedule builders

fn dressed_gap(sp: &SpinModelParams, upper: &str, lower: &str) -> f64 {
    StaticFrame::from_spin(sp).dressed_gap(label(upper), label(lower))
}

fn selectivity_warning(sp: &SpinModelParams, omega: f64, warnings: &mut Vec<String>) {
    let jz = sp.jz_lm.abs().min(sp.jz_rm.abs());
    if omega > jz / 3.0 {
        let w = format!(
            "drive {:.3} MHz is not selective against |Jz| = {:.3} MHz",
            to_mhz(omega),
            to_mhz(jz)
        );
        log::warn!("{w}");
        warnings.push(w);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseOrder {
    #[default]
    Counterintuitive,
    Intuitive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StirapParams {
    pub omega_peak: f64,
    pub sigma: f64,
    pub delay: f64,
    pub order: PulseOrder,
}

impl Default for StirapParams {
    fn default() -> Self {
        StirapParams {
            omega_peak: mhz(20.0),
            sigma: 100.0 * NS,
            delay: 110.0 * NS,
            order: PulseOrder::Counterintuitive,
        }
    }
}

/// Two Gaussians, the first on M12 and the second on M01 (counterintuitive
/// order), both cut when their amplitudes cross. The outer qubits keep the
/// spins of `qubits`.
pub fn stirap_half_schedule(sp: &SpinModelParams, p: &StirapParams, qubits: (Spin, Spin)) -> Result<(Schedule, StateVector)> {
    if !(p.sigma > 0.0) || !(p.delay > 0.0) {
        return Err(Error::invalid("stirap", "sigma and delay must be positive"));
    }
    let first_center = 4.0 * p.sigma;
    let cut = first_center + 0.5 * p.delay;
    let frame = StaticFrame::from_spin(sp);
    let at = |q| BasisLabel::new(qubits.0, q, qubits.1);
    let w01 = frame.dressed_gap(at(1), at(0));
    let w12 = frame.dressed_gap(at(2), at(1));
    let (c12, c01) = match p.order {
        PulseOrder::Counterintuitive => (first_center, first_center + p.delay),
        PulseOrder::Intuitive => (first_center + p.delay, first_center),
    };
    let pulses = vec![
        Pulse {
            channel: Channel::M12,
            envelope: Envelope::gaussian(p.omega_peak, c12, p.sigma, 0.0, cut),
            carrier: w12,
            phase: 0.0,
        },
        Pulse {
            channel: Channel::M01,
            envelope: Envelope::gaussian(p.omega_peak, c01, p.sigma, 0.0, cut),
            carrier: w01,
            phase: PI,
        },
    ];
    let mut target = basis_state(at(0)) + basis_state(at(2));
    target *= C64::from(FRAC_1_SQRT_2);
    let seg = Segment {
        name: "stirap".into(),
        spin: *sp,
        duration: cut,
        pulses,
        reference: Reference::Dressed,
    };
    Ok((Schedule::single(seg), target))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissociationTuning {
    /// Retuned parameters (δ_M adjusted).
    pub spin: SpinModelParams,
    /// δ_M change that makes |↓2↓⟩ and |↑0↑⟩ degenerate on the diagonal.
    pub resonance_shift: f64,
    /// Additional δ_M change cancelling the unequal second-order shifts.
    pub compensation: f64,
    /// Effective two-photon coupling.
    pub coupling: f64,
    pub peak_time: f64,
    pub peak_transfer: f64,
}

fn diag_energy(h: &Operator, l: &str) -> f64 {
    let i = label(l).index();
    h[(i, i)].re
}

/// Second-order shifts (s₂ of |↓2↓⟩, s₀ of |↑0↑⟩) through |↑1↓⟩ and |↓1↑⟩.
fn second_order_shifts(sp: &SpinModelParams) -> (f64, f64, f64) {
    let h = static_hamiltonian(sp);
    let e2 = diag_energy(&h, "d2d");
    let e0 = diag_energy(&h, "u0u");
    let eud = diag_energy(&h, "u1d");
    let edu = diag_energy(&h, "d1u");
    let s2 = sp.j_lm12.powi(2) / (e2 - eud) + sp.j_rm12.powi(2) / (e2 - edu);
    let s0 = sp.j_rm01.powi(2) / (e0 - eud) + sp.j_lm01.powi(2) / (e0 - edu);
    let g = sp.j_lm12 * sp.j_rm01 / (e2 - eud) + sp.j_rm12 * sp.j_lm01 / (e2 - edu);
    (s2, s0, g)
}

/// Two-photon resonance Δ_M + δ_M = Δ_L + Δ_R including the dispersive
/// terms, second-order compensation, and the time of maximum transfer.
pub fn dissociation_config(sp: &SpinModelParams) -> Result<DissociationTuning> {
    sp.validate()?;
    let h = static_hamiltonian(sp);
    let e0 = diag_energy(&h, "u0u");
    let jmax = [sp.j_lm01, sp.j_rm01, sp.j_lm12, sp.j_rm12]
        .iter()
        .map(|j| j.abs())
        .fold(0.0, f64::max);
    for mid in ["u1d", "d1u"] {
        let gap = (e0 - diag_energy(&h, mid)).abs();
        if gap <= 1e-9 * (jmax + e0.abs()) {
            return Err(Error::Infeasible(format!("intermediate state {mid} is resonant")));
        }
        if gap < 3.0 * jmax {
            log::warn!("intermediate detuning of {mid} is only {:.3} MHz", to_mhz(gap));
        }
    }
    let mut tuned = *sp;
    tuned.small_delta_m += e0 - diag_energy(&h, "d2d");
    let resonance_shift = tuned.small_delta_m - sp.small_delta_m;
    let base = tuned.small_delta_m;
    for _ in 0..200 {
        let (s2, s0, _) = second_order_shifts(&tuned);
        let next = base - (s2 - s0);
        let done = (next - tuned.small_delta_m).abs() <= 1e-12 * base.abs().max(1.0);
        tuned.small_delta_m = next;
        if done {
            break;
        }
    }
    let compensation = tuned.small_delta_m - base;
    let (_, _, g) = second_order_shifts(&tuned);
    if g == 0.0 {
        return Err(Error::Infeasible("effective two-photon coupling vanishes".into()));
    }
    let (peak_time, peak_transfer) = transfer_peak(&tuned, g.abs())?;
    Ok(DissociationTuning {
        spin: tuned,
        resonance_shift,
        compensation,
        coupling: g,
        peak_time,
        peak_transfer,
    })
}

/// First maximum of the |↓2↓⟩ → |↑0↑⟩ transfer over [0, 4π/g], refined by
/// golden-section search.
fn transfer_peak(sp: &SpinModelParams, g: f64) -> Result<(f64, f64)> {
    let frame = StaticFrame::from_spin(sp);
    let (src, dst) = (label("d2d").index(), label("u0u").index());
    let transfer = |t: f64| frame.free_propagator(t)[(dst, src)].norm_sqr();
    let span = 4.0 * PI / g;
    let n = 4000;
    let samples: Vec<f64> = (0..=n).map(|k| transfer(span * k as f64 / n as f64)).collect();
    let best = samples.iter().cloned().fold(0.0, f64::max);
    let k = (1..n)
        .find(|&k| samples[k] >= 0.98 * best && samples[k] >= samples[k - 1] && samples[k] >= samples[k + 1])
        .ok_or_else(|| Error::Numerical("no transfer maximum found".into()))?;
    let h = span / n as f64;
    let (mut a, mut b) = ((k - 1) as f64 * h, (k + 1) as f64 * h);
    let r = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (transfer(c), transfer(d));
    for _ in 0..200 {
        if (b - a) < 1e-15 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = transfer(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = transfer(d);
        }
    }
    let t = 0.5 * (a + b);
    Ok((t, transfer(t)))
}

/// Drive-free two-photon exchange for the tuned peak time.
pub fn dissociation_schedule(tuning: &DissociationTuning, duration: Option<f64>) -> Schedule {
    Schedule::single(Segment {
        name: "dissociation".into(),
        spin: tuning.spin,
        duration: duration.unwrap_or(tuning.peak_time),
        pulses: vec![],
        reference: Reference::Bare,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Resonant with |↑0↑⟩ ↔ |↑1↑⟩.
    #[default]
    Up,
    /// Resonant with |↓0↓⟩ ↔ |↓1↓⟩.
    Down,
}

/// (|↓0↓⟩ + |↑0↑⟩)/√2
pub fn bell_state() -> StateVector {
    (basis_state(label("d0d")) + basis_state(label("u0u"))) * C64::from(FRAC_1_SQRT_2)
}

/// Weak square π pulse on M01, resonant only for the chosen qubit branch.
pub fn ghz_pipulse_schedule(
    sp: &SpinModelParams,
    omega1: f64,
    branch: Branch,
    warnings: &mut Vec<String>,
) -> Result<(Schedule, Target)> {
    if !(omega1 >= 0.0) {
        return Err(Error::invalid("omega1", "must be non-negative"));
    }
    selectivity_warning(sp, omega1, warnings);
    let (upper, lower, target) = match branch {
        Branch::Up => ("u1u", "u0u", Target::Pair(label("d0d"), label("u1u"))),
        Branch::Down => ("d1d", "d0d", Target::Pair(label("d1d"), label("u0u"))),
    };
    if omega1 == 0.0 {
        return Ok((Schedule::default(), target));
    }
    let duration = PI / omega1;
    let seg = Segment {
        name: "pi_pulse".into(),
        spin: *sp,
        duration,
        pulses: vec![Pulse {
            channel: Channel::M01,
            envelope: Envelope::square(omega1, 0.0, duration),
            carrier: dressed_gap(sp, upper, lower),
            phase: 0.0,
        }],
        reference: Reference::Dressed,
    };
    Ok((Schedule::single(seg), target))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    #[default]
    Square,
    /// ±4σ truncated Gaussian with the same 2π area and the given peak.
    Gaussian,
}

/// 2π pulse on M01 resonant with |↑0↑⟩ ↔ |↑1↑⟩.
pub fn ccz_schedule(
    sp: &SpinModelParams,
    omega1: f64,
    shape: PulseShape,
    warnings: &mut Vec<String>,
) -> Result<Schedule> {
    if !(omega1 > 0.0) {
        return Err(Error::invalid("omega1", "must be positive"));
    }
    selectivity_warning(sp, omega1, warnings);
    let (envelope, duration) = match shape {
        PulseShape::Square => {
            let t = 2.0 * PI / omega1;
            (Envelope::square(omega1, 0.0, t), t)
        }
        PulseShape::Gaussian => {
            let sigma = 2.0 * PI / (omega1 * truncated_gaussian_unit_area());
            (Envelope::gaussian_truncated(omega1, 4.0 * sigma, sigma), 8.0 * sigma)
        }
    };
    Ok(Schedule::single(Segment {
        name: "ccz".into(),
        spin: *sp,
        duration,
        pulses: vec![Pulse {
            channel: Channel::M01,
            envelope,
            carrier: dressed_gap(sp, "u1u", "u0u"),
            phase: 0.0,
        }],
        reference: Reference::Dressed,
    }))
}

/// H_R · CCZ · H_R with ideal Hadamards.
pub fn toffoli_schedule(
    sp: &SpinModelParams,
    omega1: f64,
    shape: PulseShape,
    warnings: &mut Vec<String>,
) -> Result<Schedule> {
    let h = Step::Gate {
        name: "hadamard_right".into(),
        op: hadamard_right(),
    };
    Ok(Schedule { steps: vec![h.clone()] }
        .extend(ccz_schedule(sp, omega1, shape, warnings)?)
        .then(h))
}

/// Drive-free resonant exchange for T = π/(√2 |J12|).
pub fn cswap_stage1_schedule(sp: &SpinModelParams, duration: Option<f64>, warnings: &mut Vec<String>) -> Result<Schedule> {
    let j12 = sp.j_lm12.abs().min(sp.j_rm12.abs());
    if j12 == 0.0 {
        return Err(Error::invalid("J12", "exchange stage needs a non-zero 1-2 coupling"));
    }
    for (name, d) in [("DeltaL", sp.delta_l), ("DeltaR", sp.delta_r)] {
        if (d - sp.small_delta_m).abs() > j12 / 10.0 {
            let w = format!(
                "{name} - deltaM = {:.3} MHz breaks the exchange resonance",
                to_mhz(d - sp.small_delta_m)
            );
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    Ok(Schedule::single(Segment {
        name: "exchange".into(),
        spin: *sp,
        duration: duration.unwrap_or(PI / (SQRT_2 * j12)),
        pulses: vec![],
        reference: Reference::Bare,
    }))
}

/// Square 2π pulse on M12 resonant with |↓1↓⟩ ↔ |↓2↓⟩.
pub fn cswap_stage2_schedule(sp: &SpinModelParams, omega2: f64, warnings: &mut Vec<String>) -> Result<Schedule> {
    if !(omega2 > 0.0) {
        return Err(Error::invalid("omega2", "must be positive"));
    }
    selectivity_warning(sp, omega2, warnings);
    let duration = 2.0 * PI / omega2;
    Ok(Schedule::single(Segment {
        name: "phase_fix".into(),
        spin: *sp,
        duration,
        pulses: vec![Pulse {
            channel: Channel::M12,
            envelope: Envelope::square(omega2, 0.0, duration),
            carrier: dressed_gap(sp, "d2d", "d1d"),
            phase: 0.0,
        }],
        reference: Reference::Dressed,
    }))
}

pub fn cswap_full_schedule(
    stage1: &SpinModelParams,
    stage2: &SpinModelParams,
    omega2: f64,
    warnings: &mut Vec<String>,
) -> Result<Schedule> {
    Ok(cswap_stage1_schedule(stage1, None, warnings)?.extend(cswap_stage2_schedule(stage2, omega2, warnings)?))
}

/// a, b amplitudes and the pulse timing of the holonomic gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolonomicParams {
    pub theta: f64,
    pub phi: f64,
    pub omega_peak: f64,
    pub sigma: f64,
}

impl HolonomicParams {
    /// Pulse width chosen so the ±4σ truncated Gaussian has area 2π.
    pub fn from_peak(theta: f64, phi: f64, omega_peak: f64) -> Result<Self> {
        if !(omega_peak > 0.0) || !omega_peak.is_finite() {
            return Err(Error::invalid("omega_peak", "must be positive"));
        }
        let sigma = 2.0 * PI / (omega_peak * truncated_gaussian_unit_area());
        Self::checked(theta, phi, omega_peak, sigma)
    }

    /// Peak amplitude solved from the total duration τ = 8σ.
    pub fn from_duration(theta: f64, phi: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid("tau", "must be positive"));
        }
        let sigma = tau / 8.0;
        let omega_peak = 2.0 * PI / (sigma * truncated_gaussian_unit_area());
        Self::checked(theta, phi, omega_peak, sigma)
    }

    fn checked(theta: f64, phi: f64, omega_peak: f64, sigma: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::invalid("theta/phi", "must be finite"));
        }
        Ok(HolonomicParams {
            theta,
            phi,
            omega_peak,
            sigma,
        })
    }

    /// a = e^{iφ} sin(θ/2), b = cos(θ/2)
    pub fn amplitudes(&self) -> (C64, C64) {
        (
            C64::from_polar(1.0, self.phi) * (0.5 * self.theta).sin(),
            C64::from((0.5 * self.theta).cos()),
        )
    }

    pub fn tau(&self) -> f64 {
        8.0 * self.sigma
    }

    pub fn envelope(&self) -> Envelope {
        Envelope::gaussian_truncated(self.omega_peak, 4.0 * self.sigma, self.sigma)
    }
}

/// Simultaneous pulses aΩ(t) on M01 and bΩ(t) on M12 at the ↑·↑ transition
/// frequencies. The M12 pulse carries an extra phase π so that the map on
/// (|0⟩, |2⟩) is U(φ, θ) itself.
pub fn holonomic_schedule(hp: &HolonomicParams, sp: &SpinModelParams, warnings: &mut Vec<String>) -> Result<Schedule> {
    selectivity_warning(sp, hp.omega_peak, warnings);
    let (a, b) = hp.amplitudes();
    let env = hp.envelope();
    let pulse = |channel, amp: C64, carrier, offset: f64| Pulse {
        channel,
        envelope: Envelope {
            amplitude: env.amplitude * amp.norm(),
            ..env
        },
        carrier,
        phase: amp.arg() + offset,
    };
    let frame = StaticFrame::from_spin(sp);
    let pulses = vec![
        pulse(Channel::M01, a, frame.dressed_gap(label("u1u"), label("u0u")), 0.0),
        pulse(Channel::M12, b, frame.dressed_gap(label("u2u"), label("u1u")), PI),
    ];
    Ok(Schedule::single(Segment {
        name: "holonomic".into(),
        spin: *sp,
        duration: hp.tau(),
        pulses: pulses.into_iter().filter(|p| p.envelope.amplitude > 0.0).collect(),
        reference: Reference::Dressed,
    }))
}

/// U^c(0, 0) followed by U^c(π/2, θ).
pub fn deutsch_schedule(theta: f64, omega_peak: f64, sp: &SpinModelParams, warnings: &mut Vec<String>) -> Result<Schedule> {
    let first = HolonomicParams::from_peak(0.0, 0.0, omega_peak)?;
    let second = HolonomicParams::from_peak(theta, PI / 2.0, omega_peak)?;
    Ok(holonomic_schedule(&first, sp, warnings)?.extend(holonomic_schedule(&second, sp, warnings)?))
}

/// STIRAP half-transfer on the STIRAP parameters followed by dissociation
/// of |↓2↓⟩ on the tuned dissociation parameters; ideally ends in
/// (|↓0↓⟩ + |↑0↑⟩)/√2.
pub fn bell_pipeline(
    stirap_spin: &SpinModelParams,
    dissociation_spin: &SpinModelParams,
    stirap: &StirapParams,
) -> Result<Schedule> {
    let (first, _) = stirap_half_schedule(stirap_spin, stirap, (Spin::Down, Spin::Down))?;
    let tuning = dissociation_config(dissociation_spin)?;
    Ok(first.extend(dissociation_schedule(&tuning, None)))
}

// ---------------------------------------------------------------------------
// Protocol configuration files

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    StirapHalf,
    Dissociation,
    GhzPipulse,
    GhzDirect,
    Ccz,
    Toffoli,
    CswapStage1,
    CswapFull,
    Holonomic,
    ControlledHolonomic,
    Deutsch,
}

impl ProtocolKind {
    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }
}

/// Spin parameters given inline, as circuit values, or as a path to either.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SpinSource {
    Path(String),
    Circuit(CircuitParams),
    Spin(SpinModelParams),
}

impl<'de> Deserialize<'de> for SpinSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::String(s) => Ok(SpinSource::Path(s.clone())),
            serde_json::Value::Object(m) if m.contains_key("L1_nH") => {
                serde_json::from_value(v).map(SpinSource::Circuit).map_err(D::Error::custom)
            }
            serde_json::Value::Object(_) => {
                serde_json::from_value(v).map(SpinSource::Spin).map_err(D::Error::custom)
            }
            _ => Err(D::Error::custom("spin must be a path, a spin-model object or circuit parameters")),
        }
    }
}

impl SpinSource {
    pub fn resolve_path(&mut self, base: &Path) -> Result<()> {
        if let SpinSource::Path(p) = self {
            let path = base.join(p.as_str());
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let inner: SpinSource = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if let SpinSource::Path(_) = inner {
                return Err(Error::Config(format!("{}: nested spin path", path.display())));
            }
            *self = inner;
        }
        Ok(())
    }

    pub fn spin(&self) -> Result<SpinModelParams> {
        match self {
            SpinSource::Spin(s) => Ok(*s),
            SpinSource::Circuit(c) => derive_spin_model(c),
            SpinSource::Path(p) => Err(Error::Config(format!("unresolved spin path `{p}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSpec {
    pub theta_rad: f64,
    #[serde(default)]
    pub phi_rad: f64,
}

impl QubitSpec {
    /// cos θ |↑⟩ + e^{iφ} sin θ |↓⟩ as [down, up].
    pub fn amplitudes(&self) -> [C64; 2] {
        [
            C64::from_polar(self.theta_rad.sin(), self.phi_rad),
            C64::from(self.theta_rad.cos()),
        ]
    }
}

/// `"u0d"`-style label, `"+0-"`-style product, `"bell"`, or a product of
/// qubit angles with a qutrit level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(String),
    Product {
        left: QubitSpec,
        qutrit: u8,
        right: QubitSpec,
    },
}

impl InitialState {
    pub fn state(&self) -> Result<StateVector> {
        match self {
            InitialState::Named(s) if s == "bell" => Ok(bell_state()),
            InitialState::Named(s) => parse_product(s),
            InitialState::Product { left, qutrit, right } => {
                if *qutrit > 2 {
                    return Err(Error::Config(format!("qutrit level {qutrit} out of range")));
                }
                let mut q = [ZERO; 3];
                q[*qutrit as usize] = ONE;
                Ok(product_state(left.amplitudes(), q, right.amplitudes()))
            }
        }
    }

    /// The basis label when the state is one.
    pub fn label(&self) -> Option<BasisLabel> {
        match self {
            InitialState::Named(s) => s.parse().ok(),
            InitialState::Product { .. } => None,
        }
    }
}

fn parse_product(s: &str) -> Result<StateVector> {
    let bad = || Error::Config(format!("cannot parse initial state `{s}`"));
    let c: Vec<char> = s.chars().collect();
    if c.len() != 3 {
        return Err(bad());
    }
    let h = C64::from(FRAC_1_SQRT_2);
    let qubit = |ch: char| -> Result<[C64; 2]> {
        match ch {
            'd' => Ok([ONE, ZERO]),
            'u' => Ok([ZERO, ONE]),
            '+' => Ok([h, h]),
            '-' => Ok([-h, h]),
            _ => Err(bad()),
        }
    };
    let q = match c[1] {
        '0' => [ONE, ZERO, ZERO],
        '1' => [ZERO, ONE, ZERO],
        '2' => [ZERO, ZERO, ONE],
        _ => return Err(bad()),
    };
    Ok(product_state(qubit(c[0])?, q, qubit(c[2])?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseRecord {
    #[serde(rename = "T1_us")]
    pub t1_us: f64,
    #[serde(rename = "T2_us")]
    pub t2_us: f64,
}

impl CollapseRecord {
    pub fn collapse(&self) -> Result<CollapseSet> {
        CollapseSet::new(self.t1_us * US, self.t2_us * US)
    }
}

impl Default for CollapseRecord {
    fn default() -> Self {
        let c = CollapseSet::default();
        CollapseRecord {
            t1_us: c.t1 / US,
            t2_us: c.t2 / US,
        }
    }
}

fn present<'de, D, T>(d: D) -> std::result::Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    T::deserialize(d).map(Some)
}

/// A protocol run as read from JSON. Absent `collapse` means the default
/// T1/T2; `null` means a closed system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<SpinSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_stage2: Option<SpinSource>,
    #[serde(rename = "omega1_MHz", default, skip_serializing_if = "Option::is_none")]
    pub omega1_mhz: Option<f64>,
    #[serde(rename = "omega2_MHz", default, skip_serializing_if = "Option::is_none")]
    pub omega2_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(rename = "J_MHz", default, skip_serializing_if = "Option::is_none")]
    pub j_mhz: Option<f64>,
    #[serde(rename = "Jz_MHz", default, skip_serializing_if = "Option::is_none")]
    pub jz_mhz: Option<f64>,
    #[serde(rename = "Delta_GHz", default, skip_serializing_if = "Option::is_none")]
    pub delta_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<PulseOrder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_shape: Option<PulseShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialState>,
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub collapse: Option<Option<CollapseRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_mode: Option<CarrierMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observables: Vec<String>,
}

/// Numeric keys a sweep may vary.
pub const SWEEP_PARAMS: &[&str] = &[
    "omega1_MHz",
    "omega2_MHz",
    "theta_rad",
    "phi_rad",
    "sigma_ns",
    "tau_ns",
    "delay_ns",
    "duration_ns",
    "n",
    "m",
    "J_MHz",
    "Jz_MHz",
    "Delta_GHz",
    "T1_us",
    "T2_us",
];

impl ProtocolConfig {
    pub fn new(kind: ProtocolKind) -> Self {
        ProtocolConfig {
            kind,
            spin: None,
            spin_stage2: None,
            omega1_mhz: None,
            omega2_mhz: None,
            theta_rad: None,
            phi_rad: None,
            sigma_ns: None,
            tau_ns: None,
            delay_ns: None,
            duration_ns: None,
            n: None,
            m: None,
            j_mhz: None,
            jz_mhz: None,
            delta_ghz: None,
            general: None,
            order: None,
            branch: None,
            pulse_shape: None,
            initial: None,
            collapse: None,
            carrier_mode: None,
            points: None,
            battery: None,
            observables: vec![],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and inlines any spin files relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in [&mut cfg.spin, &mut cfg.spin_stage2].into_iter().flatten() {
            s.resolve_path(base)?;
        }
        Ok(cfg)
    }

    pub fn spin(&self) -> Result<SpinModelParams> {
        self.spin
            .as_ref()
            .ok_or_else(|| Error::Config(format!("kind `{}` requires `spin`", self.kind.name())))?
            .spin()
    }

    pub fn spin_stage2(&self) -> Result<SpinModelParams> {
        self.spin_stage2
            .as_ref()
            .ok_or_else(|| Error::Config(format!("kind `{}` requires `spin_stage2`", self.kind.name())))?
            .spin()
    }

    pub fn collapse_set(&self) -> Result<Option<CollapseSet>> {
        match self.collapse {
            None => Ok(Some(CollapseSet::default())),
            Some(None) => Ok(None),
            Some(Some(r)) => r.collapse().map(Some),
        }
    }

    pub fn run_options(&self) -> Result<RunOptions> {
        Ok(RunOptions {
            integrator: IntegratorOptions {
                mode: self.carrier_mode.unwrap_or_default(),
                ..Default::default()
            },
            collapse: self.collapse_set()?,
            points: self.points.unwrap_or(201),
        })
    }

    /// Copy with one numeric key replaced.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        if !SWEEP_PARAMS.contains(&name) {
            return Err(Error::Config(format!(
                "parameter `{name}` is not addressable; choose one of: {}",
                SWEEP_PARAMS.join(", ")
            )));
        }
        let mut cfg = self.clone();
        let count = || -> Result<u32> {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("`{name}` must be a non-negative integer")));
            }
            Ok(value as u32)
        };
        match name {
            "omega1_MHz" => cfg.omega1_mhz = Some(value),
            "omega2_MHz" => cfg.omega2_mhz = Some(value),
            "theta_rad" => cfg.theta_rad = Some(value),
            "phi_rad" => cfg.phi_rad = Some(value),
            "sigma_ns" => cfg.sigma_ns = Some(value),
            "tau_ns" => cfg.tau_ns = Some(value),
            "delay_ns" => cfg.delay_ns = Some(value),
            "duration_ns" => cfg.duration_ns = Some(value),
            "n" => cfg.n = Some(count()?),
            "m" => cfg.m = Some(count()?),
            "J_MHz" => cfg.j_mhz = Some(value),
            "Jz_MHz" => cfg.jz_mhz = Some(value),
            "Delta_GHz" => cfg.delta_ghz = Some(value),
            "T1_us" | "T2_us" => {
                let mut r = match cfg.collapse {
                    Some(Some(r)) => r,
                    _ => CollapseRecord::default(),
                };
                if name == "T1_us" {
                    r.t1_us = value;
                } else {
                    r.t2_us = value;
                }
                cfg.collapse = Some(Some(r));
            }
            _ => unreachable!("checked against SWEEP_PARAMS"),
        }
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Execution

/// Ideal gate on a subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSpec {
    pub labels: Vec<BasisLabel>,
    pub ideal: SubMatrix,
}

impl GateSpec {
    pub fn ideal_output(&self, input: &StateVector) -> Option<StateVector> {
        let inside: f64 = self.labels.iter().map(|l| input[l.index()].norm_sqr()).sum();
        ((inside - input.norm_squared()).abs() < 1e-12)
            .then(|| embed_state(&(&self.ideal * restrict_state(input, &self.labels)), &self.labels))
    }
}

/// Everything needed to run one configured protocol.
#[derive(Debug, Clone)]
pub struct Plan {
    pub schedule: Schedule,
    pub initial: StateVector,
    pub target: Target,
    pub gate: Option<GateSpec>,
    pub metrics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

fn opt_mhz(v: Option<f64>, default: f64) -> f64 {
    mhz(v.unwrap_or(default))
}

fn qubits_of(initial: &InitialState) -> (Spin, Spin) {
    initial
        .label()
        .map(|l| (l.left, l.right))
        .unwrap_or((Spin::Down, Spin::Down))
}

fn holonomic_params(cfg: &ProtocolConfig) -> Result<HolonomicParams> {
    let theta = cfg.theta_rad.unwrap_or(PI / 4.0);
    let phi = cfg.phi_rad.unwrap_or(0.0);
    match (cfg.tau_ns, cfg.omega1_mhz) {
        (Some(_), Some(_)) => Err(Error::Config("give either tau_ns or omega1_MHz, not both".into())),
        (Some(tau), None) => HolonomicParams::from_duration(theta, phi, tau * NS),
        (None, om) => HolonomicParams::from_peak(theta, phi, opt_mhz(om, 15.0)),
    }
}

pub fn plan(cfg: &ProtocolConfig) -> Result<Plan> {
    let mut warnings = Vec::new();
    let mut metrics = BTreeMap::new();
    let initial_spec = |default: &str| cfg.initial.clone().unwrap_or(InitialState::Named(default.into()));
    let duration = cfg.duration_ns.map(|t| t * NS);
    let gate02 = |ideal| Some(GateSpec { labels: labels_02(), ideal });
    let gate01 = |ideal| Some(GateSpec { labels: labels_01(), ideal });

    let (schedule, initial, target, gate) = match cfg.kind {
        ProtocolKind::StirapHalf => {
            let init = initial_spec("d0d");
            let p = StirapParams {
                omega_peak: opt_mhz(cfg.omega1_mhz, 20.0),
                sigma: cfg.sigma_ns.unwrap_or(100.0) * NS,
                delay: cfg.delay_ns.unwrap_or(110.0) * NS,
                order: cfg.order.unwrap_or_default(),
            };
            let (s, t) = stirap_half_schedule(&cfg.spin()?, &p, qubits_of(&init))?;
            (s, init.state()?, Target::State(t), None)
        }
        ProtocolKind::Dissociation => {
            let tuning = dissociation_config(&cfg.spin()?)?;
            metrics.insert("peak_time_ns".into(), tuning.peak_time / NS);
            metrics.insert("peak_transfer_closed".into(), tuning.peak_transfer);
            metrics.insert("resonance_shift_MHz".into(), to_mhz(tuning.resonance_shift));
            metrics.insert("compensation_MHz".into(), to_mhz(tuning.compensation));
            metrics.insert("coupling_MHz".into(), to_mhz(tuning.coupling));
            let init = initial_spec("d2d");
            let target = Target::State(basis_state(label("u0u")));
            (dissociation_schedule(&tuning, duration), init.state()?, target, None)
        }
        ProtocolKind::GhzPipulse => {
            let (s, t) = ghz_pipulse_schedule(
                &cfg.spin()?,
                opt_mhz(cfg.omega1_mhz, 1.0),
                cfg.branch.unwrap_or_default(),
                &mut warnings,
            )?;
            (s, initial_spec("bell").state()?, t, None)
        }
        ProtocolKind::GhzDirect => {
            let base = cfg.spin.as_ref().map(|s| s.spin()).transpose()?;
            let j = match (cfg.j_mhz, base) {
                (Some(j), _) => mhz(j),
                (None, Some(sp)) => sp.j_lm01.abs(),
                (None, None) => mhz(15.0),
            };
            let d2 = base.map(|s| s.d2).unwrap_or(1.0);
            let cond = ghz_direct_condition(cfg.n.unwrap_or(1), cfg.m.unwrap_or(1), j, d2, cfg.general.unwrap_or(false))?;
            let jz = cfg.jz_mhz.map(mhz).unwrap_or(cond.jz);
            let lambda = (4.0 * j * j + jz * jz).sqrt();
            let t = duration.unwrap_or(cfg.n.unwrap_or(1) as f64 * PI / lambda);
            let sp = symmetric_dissociation_spin(j, jz, ghz(cfg.delta_ghz.unwrap_or(5.0)));
            let (stay, transfer) = dissociation_analytics(j, jz, t);
            metrics.insert("condition_Jz_MHz".into(), to_mhz(cond.jz));
            metrics.insert("Jz_MHz".into(), to_mhz(jz));
            metrics.insert("time_ns".into(), t / NS);
            metrics.insert("analytic_stay".into(), stay);
            metrics.insert("analytic_transfer".into(), transfer);
            let seg = Segment {
                name: "direct_dissociation".into(),
                spin: sp,
                duration: t,
                pulses: vec![],
                reference: Reference::Bare,
            };
            let target = Target::Pair(label("d2d"), label("u0u"));
            (Schedule::single(seg), initial_spec("d2d").state()?, target, None)
        }
        ProtocolKind::Ccz => {
            let s = ccz_schedule(&cfg.spin()?, opt_mhz(cfg.omega1_mhz, 6.0), cfg.pulse_shape.unwrap_or_default(), &mut warnings)?;
            (s, initial_spec("+0+").state()?, Target::None, gate02(ccz_ideal()))
        }
        ProtocolKind::Toffoli => {
            let s = toffoli_schedule(&cfg.spin()?, opt_mhz(cfg.omega1_mhz, 6.0), cfg.pulse_shape.unwrap_or_default(), &mut warnings)?;
            (s, initial_spec("u0d").state()?, Target::None, gate02(toffoli_ideal()))
        }
        ProtocolKind::CswapStage1 => {
            let s = cswap_stage1_schedule(&cfg.spin()?, duration, &mut warnings)?;
            (s, initial_spec("u1d").state()?, Target::None, gate01(cswap_stage1_ideal()))
        }
        ProtocolKind::CswapFull => {
            let s = cswap_full_schedule(&cfg.spin()?, &cfg.spin_stage2()?, opt_mhz(cfg.omega2_mhz, 3.0), &mut warnings)?;
            (s, initial_spec("u1d").state()?, Target::None, gate01(cswap_ideal()))
        }
        ProtocolKind::Holonomic => {
            let hp = holonomic_params(cfg)?;
            metrics.insert("tau_ns".into(), hp.tau() / NS);
            metrics.insert("omega_peak_MHz".into(), to_mhz(hp.omega_peak));
            let s = holonomic_schedule(&hp, &cfg.spin()?, &mut warnings)?;
            let labels = vec![label("u0u"), label("u2u")];
            let ideal = SubMatrix::from_fn(2, 2, |r, c| holonomic_ideal(hp.phi, hp.theta)[(r, c)]);
            (s, initial_spec("u0u").state()?, Target::None, Some(GateSpec { labels, ideal }))
        }
        ProtocolKind::ControlledHolonomic => {
            let hp = holonomic_params(cfg)?;
            metrics.insert("tau_ns".into(), hp.tau() / NS);
            metrics.insert("omega_peak_MHz".into(), to_mhz(hp.omega_peak));
            let s = holonomic_schedule(&hp, &cfg.spin()?, &mut warnings)?;
            (s, initial_spec("u0u").state()?, Target::None, gate02(controlled_holonomic_ideal(hp.phi, hp.theta)))
        }
        ProtocolKind::Deutsch => {
            let theta = cfg.theta_rad.unwrap_or(PI / 4.0);
            let s = deutsch_schedule(theta, opt_mhz(cfg.omega1_mhz, 15.0), &cfg.spin()?, &mut warnings)?;
            (s, initial_spec("u0u").state()?, Target::None, gate02(deutsch_ideal(theta)))
        }
    };
    let target = match (&target, &gate) {
        (Target::None, Some(g)) => g.ideal_output(&initial).map(Target::State).unwrap_or(Target::None),
        _ => target,
    };
    Ok(Plan {
        schedule,
        initial,
        target,
        gate,
        metrics,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub kind: ProtocolKind,
    pub trajectory: Trajectory,
    pub final_state: QuantumState,
    pub report: FidelityReport,
    pub metrics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    /// Closed-system propagator in the final reference picture, for gates.
    pub unitary: Option<Operator>,
}

impl ProtocolOutcome {
    /// `p_<label>`, `state_fidelity`, `process_fidelity`, `leakage`, or a
    /// metric name.
    pub fn observable(&self, name: &str) -> Option<f64> {
        if let Some(l) = name.strip_prefix("p_") {
            let l: BasisLabel = l.parse().ok()?;
            return Some(self.final_state.populations()[l.index()]);
        }
        match name {
            "state_fidelity" => self.report.state_fidelity,
            "process_fidelity" => self.report.process_fidelity,
            "leakage" => self.report.leakage,
            _ => self.metrics.get(name).copied(),
        }
    }
}

/// Plans and runs a configured protocol, including the gate metrics.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<ProtocolOutcome> {
    let plan = plan(cfg)?;
    let opts = cfg.run_options()?;
    let initial = QuantumState::Pure(plan.initial);
    let run = run_schedule(&plan.schedule, &initial, &opts, &plan.target)?;
    let mut metrics = plan.metrics.clone();
    let mut report = FidelityReport {
        state_fidelity: plan.target.fidelity(&run.final_state),
        ..Default::default()
    };

    let qutrit1_peak = run
        .trajectory
        .states
        .iter()
        .map(|s| analysis::qutrit_population(s, 1))
        .fold(0.0, f64::max);
    metrics.insert("peak_qutrit1".into(), qutrit1_peak);
    if cfg.kind == ProtocolKind::Dissociation {
        let peak = run.trajectory.population_of(label("u0u")).into_iter().fold(0.0, f64::max);
        metrics.insert("peak_transfer".into(), peak);
    }

    let mut unitary = None;
    if let Some(g) = &plan.gate {
        report.leakage = Some(leakage(&run.final_state, &g.labels));
        let u = schedule_unitary(&plan.schedule, &opts.integrator)?;
        report.process_fidelity = Some(analysis::subspace_process_fidelity(&u, &g.labels, &g.ideal)?);
        for (k, l) in g.labels.iter().enumerate() {
            let out = u * basis_state(*l);
            let want = embed_state(&g.ideal.column(k).into_owned(), &g.labels);
            report.per_state.insert(l.to_string(), want.dotc(&out).norm_sqr());
            if cfg.kind == ProtocolKind::Ccz {
                metrics.insert(format!("phase_{l}"), out[l.index()].arg());
            }
        }
        let mean = report.per_state.values().sum::<f64>() / report.per_state.len() as f64;
        metrics.insert("truth_table_fidelity".into(), mean);
        if cfg.battery.unwrap_or(false) && opts.collapse.is_some() {
            let (avg, per) = analysis::battery_fidelity(&g.labels, &g.ideal, |psi| {
                run_final(&plan.schedule, &QuantumState::Pure(*psi), &opts)
            })?;
            metrics.insert("battery_fidelity".into(), avg);
            for (k, v) in per {
                metrics.insert(format!("battery_{k}"), v);
            }
        }
        unitary = Some(u);
    }
    for obs in &cfg.observables {
        if let Some(l) = obs.strip_prefix("p_").and_then(|l| l.parse::<BasisLabel>().ok()) {
            metrics.insert(obs.clone(), run.final_state.populations()[l.index()]);
        }
    }
    Ok(ProtocolOutcome {
        kind: cfg.kind,
        trajectory: run.trajectory,
        final_state: run.final_state,
        report,
        metrics,
        warnings: plan.warnings,
        unitary,
    })
}
