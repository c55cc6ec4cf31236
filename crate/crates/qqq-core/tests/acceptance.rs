//! One test per acceptance criterion. Each prints a single
//! `PASS|FAIL <criterion>: <details>` line before asserting.

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use qqq_core::analysis::{parse_grid, sweep, SubMatrix};
use qqq_core::circuit_model::{derive_spin_model, CircuitParams};
use qqq_core::dynamics::{excitation_expectation, propagate, uniform_grid, IntegratorOptions, QuantumState};
use qqq_core::hilbert::{basis_state, BasisLabel, C64};
use qqq_core::protocols::*;
use qqq_core::units::{ghz, mhz, to_ghz, to_mhz, NS};
use qqq_core::SpinModelParams;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

const GOLDEN_REL_TOL: f64 = 0.01;
const CSWAP_MIN_FIDELITY: f64 = 0.98;
const ORACLE_TOL: f64 = 1e-8;
const ORACLE_SAMPLES: usize = 50;
const GHZ_ANALYTIC_TOL: f64 = 1e-6;
const GHZ_NUMERIC_TOL: f64 = 1e-3;
const CCZ_PHASE_TOL: f64 = 0.05;
const CCZ_PHASE_LAW_OMEGA_MHZ: f64 = 2.0;
const CCZ_MIN_PROCESS: f64 = 0.98;
const TOFFOLI_MIN_TRUTH: f64 = 0.97;
const HOLONOMIC_POINTS: usize = 25;
const HOLONOMIC_POP_TOL: f64 = 0.05;
const BLOCKED_MIN_SURVIVAL: f64 = 0.95;
const DEUTSCH_TOL: f64 = 1e-14;
const DEUTSCH_SAMPLES: usize = 20;
const STIRAP_MIN_FIDELITY: f64 = 0.99;
const STIRAP_MAX_INTERMEDIATE: f64 = 0.05;
const PURE_NORM_TOL: f64 = 1e-9;
const TRACE_TOL: f64 = 1e-8;
const HERMITICITY_TOL: f64 = 1e-10;
const MIN_EIGENVALUE: f64 = -1e-7;
const EXCITATION_TOL: f64 = 1e-9;
const FIGURE_MIN_TRANSFER: f64 = 0.95;

fn verdict(criterion: &str, pass: bool, details: String) {
    println!("{} {criterion}: {details}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{criterion}: {details}");
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> ProtocolConfig {
    ProtocolConfig::load(&configs_dir().join(name)).unwrap()
}

fn lab(s: &str) -> BasisLabel {
    s.parse().unwrap()
}

// ---------------------------------------------------------------------------

fn table_row(sp: &SpinModelParams) -> [(&'static str, f64); 9] {
    [
        ("DeltaL_GHz", to_ghz(sp.delta_l)),
        ("DeltaM_GHz", to_ghz(sp.delta_m)),
        ("deltaM_GHz", to_ghz(sp.small_delta_m)),
        ("DeltaR_GHz", to_ghz(sp.delta_r)),
        ("J01_MHz", to_mhz(sp.j_lm01).abs()),
        ("J12_MHz", to_mhz(sp.j_lm12).abs()),
        ("Jz_MHz", to_mhz(sp.jz_lm)),
        ("D1", sp.d1),
        ("D2", sp.d2),
    ]
}

#[test]
fn golden_parameter_table() {
    let rows: [(&str, [f64; 9]); 3] = [
        ("circuit_stirap.json", [15.271, 13.841, 13.671, 15.271, 9.2737, 12.996, -20.433, 1.9877, 3.9754]),
        ("circuit_dissociation.json", [0.46529, 0.088376, 0.84222, 0.46529, 15.0203, 17.114, -6.4890, 2.6636, 3.3015]),
        ("circuit_acswap.json", [0.9113, -0.0798, 0.9121, 0.9113, 14.311, 15.173, -0.000601, 2.8377, 3.12544]),
    ];
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut misses = Vec::new();
    for (file, table) in rows {
        let text = std::fs::read_to_string(configs_dir().join(file)).unwrap();
        let cp: CircuitParams = serde_json::from_str(&text).unwrap();
        let sp = derive_spin_model(&cp).unwrap();
        for ((name, got), want) in table_row(&sp).into_iter().zip(table) {
            let rel = ((got - want) / want).abs();
            worst = worst.max(rel);
            if rel > GOLDEN_REL_TOL {
                misses.push(format!("{file} {name} {got:.6} vs {want} ({:.2}%)", 100.0 * rel));
            }
        }
    }
    verdict(
        "golden parameter table",
        misses.is_empty(),
        format!(
            "worst relative deviation {:.3}% (tol {:.0}%), {:.2} s; outside tolerance: [{}]",
            100.0 * worst,
            100.0 * GOLDEN_REL_TOL,
            start.elapsed().as_secs_f64(),
            misses.join("; ")
        ),
    );
}

#[test]
fn cswap_fidelity() {
    let start = Instant::now();
    let out = run_protocol(&config("fig4b_cswap.json")).unwrap();
    let f = out.report.state_fidelity.unwrap();
    verdict(
        "CSWAP fidelity",
        f > CSWAP_MIN_FIDELITY,
        format!(
            "state fidelity {f:.5} (need > {CSWAP_MIN_FIDELITY}), root fidelity {:.5}, leakage {:.2e}, {:.1} s",
            f.sqrt(),
            out.report.leakage.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn oracle_equivalence() {
    let start = Instant::now();
    let mut runner = TestRunner::deterministic();
    let mut worst_diss = 0.0_f64;
    let (src, dst) = (lab("d2d"), lab("u0u"));
    let samples = (1.0..25.0f64, -30.0..30.0f64, 1.0..400.0f64);
    for _ in 0..ORACLE_SAMPLES {
        let (j, jz, t) = samples.new_tree(&mut runner).unwrap().current();
        let (j, jz, t) = (mhz(j), mhz(jz), t * NS);
        let sp = symmetric_dissociation_spin(j, jz, ghz(5.0));
        let tr = propagate(&QuantumState::Pure(basis_state(src)), &sp, &[], None, &[0.0, t], IntegratorOptions::default()).unwrap();
        let p = tr.states[1].populations();
        let (stay, transfer) = dissociation_analytics(j, jz, t);
        worst_diss = worst_diss.max((p[src.index()] - stay).abs()).max((p[dst.index()] - transfer).abs());
    }

    let mut worst_swap = 0.0_f64;
    let block = [lab("u1d"), lab("d2d"), lab("d1u")];
    let samples = (1.0..25.0f64, 1.0..400.0f64);
    for _ in 0..ORACLE_SAMPLES {
        let (j12, t) = samples.new_tree(&mut runner).unwrap().current();
        let (j12, t) = (mhz(j12), t * NS);
        let sp = resonant_exchange_spin(j12, ghz(5.0));
        let u = cswap_block_propagator(j12, t);
        for (c, from) in block.iter().enumerate() {
            let tr = propagate(&QuantumState::Pure(basis_state(*from)), &sp, &[], None, &[0.0, t], IntegratorOptions::default()).unwrap();
            let p = tr.states[1].populations();
            for (r, to) in block.iter().enumerate() {
                worst_swap = worst_swap.max((p[to.index()] - u[(r, c)].norm_sqr()).abs());
            }
        }
    }
    verdict(
        "oracle equivalence",
        worst_diss < ORACLE_TOL && worst_swap < ORACLE_TOL,
        format!(
            "{ORACLE_SAMPLES} samples each: dissociation max error {worst_diss:.2e}, exchange block max error {worst_swap:.2e} (tol {ORACLE_TOL:e}), {:.2} s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn ghz_condition() {
    let cfg = config("fig3b_ghz_direct.json");
    let j = mhz(cfg.j_mhz.unwrap());
    let cond = ghz_direct_condition(1, 1, j, 1.0, false).unwrap();
    let jz_err = (cond.jz - 2.0 * j / 3.0_f64.sqrt()).abs() / j;
    let t_err = (cond.time - PI / cond.lambda).abs() / cond.time;
    let (stay, transfer) = dissociation_analytics(j, cond.jz, cond.time);
    let analytic = (stay - 0.5).abs().max((transfer - 0.5).abs());
    let out = run_protocol(&cfg).unwrap();
    let p = out.final_state.populations();
    let numeric = (p[lab("d2d").index()] - 0.5).abs().max((p[lab("u0u").index()] - 0.5).abs());
    verdict(
        "GHZ condition",
        analytic < GHZ_ANALYTIC_TOL && numeric < GHZ_NUMERIC_TOL && jz_err < 1e-12 && t_err < 1e-12,
        format!(
            "Jz = {:.4} MHz, t = {:.3} ns; analytic deviation {analytic:.1e} (tol {GHZ_ANALYTIC_TOL:e}), numeric deviation {numeric:.1e} (tol {GHZ_NUMERIC_TOL:e})",
            to_mhz(cond.jz),
            cond.time / NS
        ),
    );
}

fn wrapped(phase: f64, want: f64) -> f64 {
    let d = (phase - want).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[test]
fn ccz_phase_law() {
    let table = config("fig4_ccz.json");
    let mut closed = table.clone();
    closed.collapse = Some(None);
    let process = run_protocol(&closed).unwrap().report.process_fidelity.unwrap();

    let mut selective = closed.clone();
    selective.omega1_mhz = Some(CCZ_PHASE_LAW_OMEGA_MHZ);
    let out = run_protocol(&selective).unwrap();
    let mut worst = 0.0_f64;
    let mut detail = Vec::new();
    for l in labels_02() {
        let phase = out.metrics[&format!("phase_{l}")];
        let want = if l == lab("u0u") { PI } else { 0.0 };
        let err = wrapped(phase, want);
        worst = worst.max(err);
        detail.push(format!("{l} {phase:+.3}"));
    }
    let table_out = run_protocol(&closed).unwrap();
    let table_worst = labels_02()
        .into_iter()
        .map(|l| wrapped(table_out.metrics[&format!("phase_{l}")], if l == lab("u0u") { PI } else { 0.0 }))
        .fold(0.0, f64::max);

    let toffoli = run_protocol(&config("fig4_toffoli.json")).unwrap();
    let truth = toffoli.metrics["truth_table_fidelity"];
    verdict(
        "CCZ phase law",
        worst < CCZ_PHASE_TOL && process >= CCZ_MIN_PROCESS && truth >= TOFFOLI_MIN_TRUTH,
        format!(
            "phases at {CCZ_PHASE_LAW_OMEGA_MHZ} MHz [{}] worst error {worst:.3} rad (tol {CCZ_PHASE_TOL}); at {} MHz worst error {table_worst:.3} rad; process fidelity at {} MHz {process:.5} (need {CCZ_MIN_PROCESS}); Toffoli truth table {truth:.4} (need {TOFFOLI_MIN_TRUTH})",
            detail.join(", "),
            table.omega1_mhz.unwrap(),
            table.omega1_mhz.unwrap()
        ),
    );
}

#[test]
fn holonomic_theta_sweep() {
    let start = Instant::now();
    let cfg = config("fig6_holonomic_sweep.json");
    let grid = parse_grid(&format!("0:pi:{HOLONOMIC_POINTS}")).unwrap();
    let obs = vec!["p_u0u".to_string(), "p_u2u".to_string()];
    let res = sweep(&cfg, "theta_rad", &grid, &obs).unwrap();
    let mut worst = 0.0_f64;
    for (k, theta) in grid.iter().enumerate() {
        let p0 = res.series("p_u0u")[k].unwrap();
        let p2 = res.series("p_u2u")[k].unwrap();
        worst = worst.max((p0 - theta.cos().powi(2)).abs()).max((p2 - theta.sin().powi(2)).abs());
    }

    let mut survival = Vec::new();
    for init in ["d0u", "u0d", "d0d"] {
        let mut c = config("fig5_holonomic.json");
        c.initial = Some(InitialState::Named(init.into()));
        let out = run_protocol(&c).unwrap();
        survival.push((init, out.final_state.populations()[lab(init).index()]));
    }
    let min_survival = survival.iter().map(|s| s.1).fold(1.0, f64::min);

    let mut runner = TestRunner::deterministic();
    let mut deutsch_err = 0.0_f64;
    for _ in 0..DEUTSCH_SAMPLES {
        let theta = (-PI..PI).new_tree(&mut runner).unwrap().current();
        let (c, s) = (C64::from(theta.cos()), C64::new(0.0, -theta.sin()));
        let mut want = SubMatrix::identity(8, 8);
        want[(6, 6)] = c;
        want[(6, 7)] = s;
        want[(7, 6)] = s;
        want[(7, 7)] = c;
        let got = deutsch_ideal(theta);
        let err = (got - want).iter().map(|z| z.norm()).fold(0.0, f64::max);
        deutsch_err = deutsch_err.max(err);
    }
    verdict(
        "holonomic theta sweep",
        worst < HOLONOMIC_POP_TOL && min_survival >= BLOCKED_MIN_SURVIVAL && deutsch_err < DEUTSCH_TOL,
        format!(
            "{HOLONOMIC_POINTS} points max population deviation {worst:.4} (tol {HOLONOMIC_POP_TOL}); blocked survival {} (need {BLOCKED_MIN_SURVIVAL}); Deutsch algebra max error {deutsch_err:.1e} over {DEUTSCH_SAMPLES} angles (tol {DEUTSCH_TOL:e}); {:.1} s",
            survival.iter().map(|(l, p)| format!("{l} {p:.4}")).collect::<Vec<_>>().join(", "),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn stirap_half() {
    let out = run_protocol(&config("fig3a_stirap.json")).unwrap();
    let f = out.report.state_fidelity.unwrap();
    let peak = out.metrics["peak_qutrit1"];
    verdict(
        "STIRAP half",
        f >= STIRAP_MIN_FIDELITY && peak <= STIRAP_MAX_INTERMEDIATE,
        format!("fidelity {f:.5} (need {STIRAP_MIN_FIDELITY}); peak |1> population {peak:.4} (max {STIRAP_MAX_INTERMEDIATE}); with decoherence"),
    );
}

const SHIPPED: &[&str] = &[
    "fig3a_stirap.json",
    "fig3b_dissociation.json",
    "fig3b_dissociation_maintext.json",
    "fig3b_ghz_direct.json",
    "ghz_pipulse.json",
    "fig4_ccz.json",
    "fig4_toffoli.json",
    "fig4b_cswap.json",
    "fig5_holonomic.json",
    "fig6_holonomic_sweep.json",
    "deutsch.json",
];

#[test]
fn open_system_sanity() {
    let mut failures = Vec::new();
    let (mut trace, mut herm, mut eig) = (0.0_f64, 0.0_f64, 0.0_f64);
    for name in SHIPPED {
        let out = run_protocol(&config(name)).unwrap();
        let d = out.trajectory.diagnostics;
        let pure = out.trajectory.states.iter().all(|s| s.is_pure());
        let tol = if pure { PURE_NORM_TOL } else { TRACE_TOL };
        trace = trace.max(d.max_trace_error);
        herm = herm.max(d.max_hermiticity_error);
        eig = eig.min(d.min_eigenvalue);
        if d.max_trace_error > tol || d.max_hermiticity_error > HERMITICITY_TOL || d.min_eigenvalue < MIN_EIGENVALUE {
            failures.push(format!("{name} {d:?}"));
        }
    }

    let mut excitation = 0.0_f64;
    for name in ["fig3b_dissociation.json", "fig3b_ghz_direct.json", "fig4b_cswap.json"] {
        let mut cfg = config(name);
        cfg.collapse = Some(None);
        let p = plan(&cfg).unwrap();
        for seg in p.schedule.segments().filter(|s| s.pulses.is_empty()) {
            let init = QuantumState::Pure(p.initial);
            let grid = uniform_grid(0.0, seg.duration, 51);
            let tr = propagate(&init, &seg.spin, &[], None, &grid, IntegratorOptions::default()).unwrap();
            let n0 = excitation_expectation(&init);
            for s in &tr.states {
                excitation = excitation.max((excitation_expectation(s) - n0).abs());
            }
        }
    }
    if excitation > EXCITATION_TOL {
        failures.push(format!("excitation drift {excitation:e}"));
    }
    verdict(
        "open-system sanity",
        failures.is_empty(),
        format!(
            "{} shipped runs: max trace error {trace:.1e} (tol {TRACE_TOL:e} mixed, {PURE_NORM_TOL:e} pure), max Hermiticity error {herm:.1e} (tol {HERMITICITY_TOL:e}), min eigenvalue {eig:.1e} (floor {MIN_EIGENVALUE:e}), drive-free excitation drift {excitation:.1e} (tol {EXCITATION_TOL:e}) [{}]",
            SHIPPED.len(),
            failures.join("; ")
        ),
    );
}

fn csv_column(path: &std::path::Path, column: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr.headers().unwrap().iter().position(|h| h == column).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn figure_data_regeneration() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, cfg: &ProtocolConfig| {
        let out = run_protocol(cfg).unwrap();
        let path = dir.path().join(name.replace(".json", ".csv"));
        out.trajectory.save_csv(&path).unwrap();
        path
    };

    let diss = write("fig3b_dissociation.json", &config("fig3b_dissociation.json"));
    let transfer = csv_column(&diss, "p_u0u").into_iter().fold(0.0, f64::max);
    let main = write("fig3b_dissociation_maintext.json", &config("fig3b_dissociation_maintext.json"));
    let transfer_main = csv_column(&main, "p_u0u").into_iter().fold(0.0, f64::max);

    let toff = write("fig4_toffoli.json", &config("fig4_toffoli.json"));
    let flipped = *csv_column(&toff, "p_u0u").last().unwrap();

    let rotated = write("fig5_holonomic.json", &config("fig5_holonomic.json"));
    let (r0, r2) = (*csv_column(&rotated, "p_u0u").last().unwrap(), *csv_column(&rotated, "p_u2u").last().unwrap());
    let mut blocked_cfg = config("fig5_holonomic.json");
    blocked_cfg.initial = Some(InitialState::Named("d0u".into()));
    let blocked = write("fig5_blocked.json", &blocked_cfg);
    let b0 = *csv_column(&blocked, "p_d0u").last().unwrap();
    let b2 = *csv_column(&blocked, "p_d2u").last().unwrap();

    let rotated_ok = (r0 - 0.5).abs() < HOLONOMIC_POP_TOL && (r2 - 0.5).abs() < HOLONOMIC_POP_TOL;
    let blocked_ok = b0 >= BLOCKED_MIN_SURVIVAL && b2 < 1.0 - BLOCKED_MIN_SURVIVAL;
    verdict(
        "figure data regeneration",
        transfer >= FIGURE_MIN_TRANSFER && transfer_main >= FIGURE_MIN_TRANSFER && flipped >= TOFFOLI_MIN_TRUTH && rotated_ok && blocked_ok,
        format!(
            "dissociation peak transfer {transfer:.4} / main-text {transfer_main:.4} (need {FIGURE_MIN_TRANSFER}); Toffoli u0d -> u0u {flipped:.4}; holonomic rotated branch u0u {r0:.3} u2u {r2:.3}; blocked branch d0u {b0:.4} d2u {b2:.4}"
        ),
    );
}
