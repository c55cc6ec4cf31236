//! Fidelities, gate-process metrics and parameter sweeps.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use crate::dynamics::{sig9, QuantumState};
use crate::error::{Error, Result};
use crate::hilbert::{BasisLabel, Operator, Spin, StateVector, C64, ONE, ZERO};
use crate::protocols::{run_protocol, ProtocolConfig};

pub type SubMatrix = DMatrix<C64>;

const NORM_TOL: f64 = 1e-6;

fn check_normalized(target: &StateVector) -> Result<()> {
    let n = target.norm_squared();
    if (n - 1.0).abs() > NORM_TOL {
        return Err(Error::invalid("target", format!("not normalized (norm² = {n:.9})")));
    }
    Ok(())
}

/// ⟨t|ρ|t⟩ or |⟨t|ψ⟩|².
pub fn state_fidelity(state: &QuantumState, target: &StateVector) -> Result<f64> {
    check_normalized(target)?;
    let tr = state.trace();
    if (tr - 1.0).abs() > NORM_TOL {
        return Err(Error::invalid("state", format!("not normalized (trace = {tr:.9})")));
    }
    Ok(state.fidelity(target))
}

/// Fidelity with (|a⟩ + e^{iχ}|b⟩)/√2, maximized over the relative phase χ.
pub fn phase_calibrated_fidelity(state: &QuantumState, a: BasisLabel, b: BasisLabel) -> f64 {
    let rho = state.density();
    let (i, j) = (a.index(), b.index());
    0.5 * (rho[(i, i)].re + rho[(j, j)].re) + rho[(i, j)].norm()
}

/// Maximum fidelity of any equal-weight superposition of |a⟩ and |b⟩.
pub fn equal_superposition_quality(state: &QuantumState, a: BasisLabel, b: BasisLabel) -> f64 {
    phase_calibrated_fidelity(state, a, b)
}

pub fn restrict(u: &Operator, labels: &[BasisLabel]) -> SubMatrix {
    SubMatrix::from_fn(labels.len(), labels.len(), |r, c| {
        u[(labels[r].index(), labels[c].index())]
    })
}

pub fn restrict_state(psi: &StateVector, labels: &[BasisLabel]) -> DVector<C64> {
    DVector::from_fn(labels.len(), |r, _| psi[labels[r].index()])
}

pub fn embed_state(v: &DVector<C64>, labels: &[BasisLabel]) -> StateVector {
    let mut psi = StateVector::zeros();
    for (k, l) in labels.iter().enumerate() {
        psi[l.index()] = v[k];
    }
    psi
}

/// Population outside the span of `labels`.
pub fn leakage(state: &QuantumState, labels: &[BasisLabel]) -> f64 {
    let p = state.populations();
    1.0 - labels.iter().map(|l| p[l.index()]).sum::<f64>()
}

/// |Tr(U_ideal† U_sim)|² / d², insensitive to the global phase of either.
pub fn process_fidelity(u_sim: &SubMatrix, ideal: &SubMatrix) -> Result<f64> {
    if u_sim.shape() != ideal.shape() || !ideal.is_square() {
        return Err(Error::invalid("process_fidelity", "dimension mismatch"));
    }
    let d = ideal.nrows() as f64;
    Ok((ideal.adjoint() * u_sim).trace().norm_sqr() / (d * d))
}

/// Restricts a full propagator to a subspace after checking unitarity.
pub fn subspace_process_fidelity(u: &Operator, labels: &[BasisLabel], ideal: &SubMatrix) -> Result<f64> {
    let err = crate::hilbert::max_abs(&(u.adjoint() * u - Operator::identity()));
    if err > NORM_TOL {
        return Err(Error::Numerical(format!("simulated propagator is not unitary ({err:.3e})")));
    }
    process_fidelity(&restrict(u, labels), ideal)
}

fn qubit_state(s: &str) -> [C64; 2] {
    let h = C64::from(FRAC_1_SQRT_2);
    match s {
        "+" => [h, h],
        "-" => [-h, h],
        "u" => [ZERO, ONE],
        _ => [ONE, ZERO],
    }
}

fn qutrit_state(a: usize, b: usize, sign: f64) -> [C64; 3] {
    let mut q = [ZERO; 3];
    q[a] = C64::from(FRAC_1_SQRT_2);
    q[b] = C64::from(sign * FRAC_1_SQRT_2);
    q
}

/// The six fixed superposition probes: |±,0,±⟩ and ↑⊗(|0⟩±|2⟩)/√2⊗↑,
/// ↑⊗(|0⟩±|1⟩)/√2⊗↑.
pub fn superposition_probes() -> Vec<(String, StateVector)> {
    use crate::hilbert::product_state;
    let zero = [ONE, ZERO, ZERO];
    let up = qubit_state("u");
    vec![
        ("+0+".into(), product_state(qubit_state("+"), zero, qubit_state("+"))),
        ("-0-".into(), product_state(qubit_state("-"), zero, qubit_state("-"))),
        ("u(0+2)u".into(), product_state(up, qutrit_state(0, 2, 1.0), up)),
        ("u(0-2)u".into(), product_state(up, qutrit_state(0, 2, -1.0), up)),
        ("u(0+1)u".into(), product_state(up, qutrit_state(0, 1, 1.0), up)),
        ("u(0-1)u".into(), product_state(up, qutrit_state(0, 1, -1.0), up)),
    ]
}

/// Basis states of the subspace followed by the probes that lie inside it.
pub fn probe_battery(labels: &[BasisLabel]) -> Vec<(String, StateVector)> {
    let mut out: Vec<(String, StateVector)> = labels
        .iter()
        .map(|l| (l.to_string(), crate::hilbert::basis_state(*l)))
        .collect();
    for (name, psi) in superposition_probes() {
        let inside: f64 = labels.iter().map(|l| psi[l.index()].norm_sqr()).sum();
        if (inside - 1.0).abs() < 1e-12 {
            out.push((name, psi));
        }
    }
    out
}

/// Mean output-state fidelity over a probe battery.
pub fn battery_fidelity<F>(
    labels: &[BasisLabel],
    ideal: &SubMatrix,
    evolve: F,
) -> Result<(f64, BTreeMap<String, f64>)>
where
    F: Fn(&StateVector) -> Result<QuantumState> + Sync,
{
    let battery = probe_battery(labels);
    let results: Vec<Result<(String, f64)>> = battery
        .par_iter()
        .map(|(name, psi)| {
            let out = evolve(psi)?;
            let want = embed_state(&(ideal * restrict_state(psi, labels)), labels);
            Ok((name.clone(), out.fidelity(&want)))
        })
        .collect();
    let mut per_state = BTreeMap::new();
    for r in results {
        let (name, f) = r?;
        per_state.insert(name, f);
    }
    let mean = per_state.values().sum::<f64>() / per_state.len() as f64;
    Ok((mean, per_state))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub state_fidelity: Option<f64>,
    pub process_fidelity: Option<f64>,
    pub leakage: Option<f64>,
    pub per_state: BTreeMap<String, f64>,
}

impl FidelityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses a number with optional `pi` factor: `0.25`, `pi`, `-pi/2`, `3pi/4`, `2*pi`.
pub fn parse_number(s: &str) -> Result<f64> {
    let t = s.trim().replace(' ', "").to_lowercase();
    let bad = || Error::Config(format!("cannot parse number `{s}`"));
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a.to_string(), b.parse::<f64>().map_err(|_| bad())?),
        None => (t.clone(), 1.0),
    };
    let Some(coef) = num.strip_suffix("pi") else {
        return Err(bad());
    };
    let coef = coef.strip_suffix('*').unwrap_or(coef);
    let c = match coef {
        "" | "+" => 1.0,
        "-" => -1.0,
        x => x.parse::<f64>().map_err(|_| bad())?,
    };
    Ok(c * std::f64::consts::PI / den)
}

/// `start:stop:count`, inclusive of both ends.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("grid `{spec}` must look like start:stop:count")));
    }
    let a = parse_number(parts[0])?;
    let b = parse_number(parts[1])?;
    let n: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("grid count `{}` is not an integer", parts[2])))?;
    let grid: Vec<f64> = match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    };
    check_monotone(&grid)?;
    Ok(grid)
}

fn check_monotone(grid: &[f64]) -> Result<()> {
    let up = grid.windows(2).all(|w| w[1] > w[0]);
    let down = grid.windows(2).all(|w| w[1] < w[0]);
    if !(up || down) {
        return Err(Error::Config("sweep grid must be strictly monotone".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub observable: String,
    pub result: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: String,
    pub values: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Results of one observable in grid order; failed points are `None`.
    pub fn series(&self, observable: &str) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .filter(|r| r.observable == observable)
            .map(|r| r.result)
            .collect()
    }

    /// `param,value,observable,result`; failed points leave `result` empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["param", "value", "observable", "result"])?;
        for r in &self.rows {
            let result = r.result.map(sig9).unwrap_or_default();
            out.write_record([r.param.as_str(), &sig9(r.value), r.observable.as_str(), &result])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One protocol run per grid point; per-point failures are recorded and the
/// sweep continues.
pub fn sweep(
    config: &ProtocolConfig,
    param: &str,
    grid: &[f64],
    observables: &[String],
) -> Result<SweepResult> {
    check_monotone(grid)?;
    config.with_param(param, grid.first().copied().unwrap_or(0.0))?;
    let observables: Vec<String> = if observables.is_empty() {
        if config.observables.is_empty() {
            vec!["state_fidelity".to_string()]
        } else {
            config.observables.clone()
        }
    } else {
        observables.to_vec()
    };
    let points: Vec<Vec<SweepRow>> = grid
        .par_iter()
        .map(|&value| {
            let outcome = config.with_param(param, value).and_then(|c| run_protocol(&c));
            observables
                .iter()
                .map(|obs| {
                    let (result, error) = match &outcome {
                        Ok(o) => match o.observable(obs) {
                            Some(v) => (Some(v), None),
                            None => (None, Some(format!("unknown observable `{obs}`"))),
                        },
                        Err(e) => (None, Some(e.to_string())),
                    };
                    if let Some(e) = &error {
                        log::warn!("{param} = {value}: {e}");
                    }
                    SweepRow {
                        param: param.to_string(),
                        value,
                        observable: obs.clone(),
                        result,
                        error,
                    }
                })
                .collect()
        })
        .collect();
    Ok(SweepResult {
        param: param.to_string(),
        values: grid.to_vec(),
        rows: points.into_iter().flatten().collect(),
    })
}

/// Population of `label` in a state.
pub fn population(state: &QuantumState, label: BasisLabel) -> f64 {
    state.populations()[label.index()]
}

/// Total population with the qutrit in level `k`.
pub fn qutrit_population(state: &QuantumState, k: u8) -> f64 {
    let p = state.populations();
    BasisLabel::all().filter(|b| b.qutrit == k).map(|b| p[b.index()]).sum()
}

/// Labels with qutrit levels restricted to `levels`, ordered with the
/// ↑·↑ states last.
pub fn computational_labels(levels: [u8; 2]) -> Vec<BasisLabel> {
    let mut out = Vec::with_capacity(8);
    for (l, r) in [
        (Spin::Down, Spin::Down),
        (Spin::Down, Spin::Up),
        (Spin::Up, Spin::Down),
        (Spin::Up, Spin::Up),
    ] {
        for q in levels {
            out.push(BasisLabel::new(l, q, r));
        }
    }
    out
}
