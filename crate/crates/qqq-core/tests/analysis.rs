use proptest::prelude::*;
use qqq_core::analysis::*;
use qqq_core::dynamics::QuantumState;
use qqq_core::hilbert::{basis_state, BasisLabel, DensityMatrix, StateVector, C64, DIM, ZERO};
use qqq_core::protocols::{ccz_ideal, labels_02, ProtocolConfig, ProtocolKind};
use qqq_core::Operator;
use std::f64::consts::PI;

fn lab(s: &str) -> BasisLabel {
    s.parse().unwrap()
}

fn random_state(re: &[f64], im: &[f64]) -> StateVector {
    let mut v = StateVector::from_fn(|i, _| C64::new(re[i], im[i]));
    let n = v.norm();
    v /= C64::from(n);
    v
}

fn state_strategy() -> impl Strategy<Value = StateVector> {
    (prop::collection::vec(-1.0..1.0f64, DIM), prop::collection::vec(-1.0..1.0f64, DIM))
        .prop_filter("non-zero", |(a, b)| a.iter().chain(b).any(|x| x.abs() > 1e-3))
        .prop_map(|(a, b)| random_state(&a, &b))
}

#[test]
fn fidelity_basics() {
    let a = basis_state(lab("u0u"));
    let pure = QuantumState::Pure(a);
    assert_eq!(state_fidelity(&pure, &a).unwrap(), 1.0);
    assert_eq!(state_fidelity(&pure, &basis_state(lab("d0d"))).unwrap(), 0.0);
    let mixed = QuantumState::Mixed(DensityMatrix::identity() / C64::from(DIM as f64));
    let f = state_fidelity(&mixed, &a).unwrap();
    assert!((f - 1.0 / 12.0).abs() < 1e-15);
    assert!(state_fidelity(&pure, &(a * C64::from(2.0))).is_err());
}

#[test]
fn phase_calibrated_fidelity_ignores_relative_phase() {
    let (a, b) = (lab("d0d"), lab("u0u"));
    for chi in [0.0, 0.7, PI, -2.0] {
        let psi = (basis_state(a) + basis_state(b) * C64::from_polar(1.0, chi)) / C64::from(2.0_f64.sqrt());
        let f = phase_calibrated_fidelity(&QuantumState::Pure(psi), a, b);
        assert!((f - 1.0).abs() < 1e-14);
    }
    let f = phase_calibrated_fidelity(&QuantumState::Pure(basis_state(a)), a, b);
    assert!((f - 0.5).abs() < 1e-15);
    let rho = (basis_state(a) * basis_state(a).adjoint() + basis_state(b) * basis_state(b).adjoint()) / C64::from(2.0);
    let f = phase_calibrated_fidelity(&QuantumState::Mixed(rho), a, b);
    assert!((f - 0.5).abs() < 1e-15);
}

#[test]
fn process_fidelity_is_global_phase_invariant() {
    let ideal = ccz_ideal();
    let shifted = &ideal * C64::from_polar(1.0, 1.234);
    assert!((process_fidelity(&shifted, &ideal).unwrap() - 1.0).abs() < 1e-14);
    let id = SubMatrix::identity(8, 8);
    let f = process_fidelity(&id, &ideal).unwrap();
    assert!((f - (6.0 / 8.0_f64).powi(2)).abs() < 1e-14);
    assert!(process_fidelity(&SubMatrix::identity(4, 4), &ideal).is_err());
}

#[test]
fn subspace_process_fidelity_rejects_non_unitary() {
    let u = Operator::identity() * C64::from(1.1);
    assert!(subspace_process_fidelity(&u, &labels_02(), &ccz_ideal()).is_err());
    let f = subspace_process_fidelity(&Operator::identity(), &labels_02(), &SubMatrix::identity(8, 8)).unwrap();
    assert_eq!(f, 1.0);
}

#[test]
fn restrict_and_embed_round_trip() {
    let labels = labels_02();
    let v = nalgebra::DVector::from_fn(8, |k, _| C64::new(k as f64, -(k as f64)));
    let psi = embed_state(&v, &labels);
    assert_eq!(restrict_state(&psi, &labels), v);
    assert_eq!(psi[lab("d1d").index()], ZERO);
    let u = restrict(&Operator::identity(), &labels);
    assert_eq!(u, SubMatrix::identity(8, 8));
}

#[test]
fn computational_label_order() {
    let ls: Vec<String> = labels_02().iter().map(|l| l.to_string()).collect();
    assert_eq!(ls, ["d0d", "d2d", "d0u", "d2u", "u0d", "u2d", "u0u", "u2u"]);
}

#[test]
fn probe_battery_contents() {
    let b = probe_battery(&labels_02());
    let names: Vec<&str> = b.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names.len(), 12);
    assert!(names.contains(&"+0+") && names.contains(&"u(0-2)u"));
    assert!(!names.contains(&"u(0+1)u"));
    for (_, psi) in &b {
        assert!((psi.norm() - 1.0).abs() < 1e-14);
    }
    assert_eq!(superposition_probes().len(), 6);
}

#[test]
fn battery_of_ideal_evolution_is_perfect() {
    let labels = labels_02();
    let ideal = ccz_ideal();
    let (avg, per) = battery_fidelity(&labels, &ideal, |psi| {
        let out = embed_state(&(&ideal * restrict_state(psi, &labels)), &labels);
        Ok(QuantumState::Pure(out))
    })
    .unwrap();
    assert!((avg - 1.0).abs() < 1e-14);
    assert_eq!(per.len(), 12);
    let (avg, per) = battery_fidelity(&labels, &ideal, |psi| Ok(QuantumState::Pure(*psi))).unwrap();
    assert!(avg < 1.0);
    assert!(per["u0u"] > 0.999 && per["+0+"] < 1.0);
}

#[test]
fn parse_number_forms() {
    assert_eq!(parse_number("0.25").unwrap(), 0.25);
    assert_eq!(parse_number("pi").unwrap(), PI);
    assert_eq!(parse_number("-pi/2").unwrap(), -PI / 2.0);
    assert_eq!(parse_number("3pi/4").unwrap(), 3.0 * PI / 4.0);
    assert_eq!(parse_number("2*pi").unwrap(), 2.0 * PI);
    assert!(parse_number("tau").is_err());
}

#[test]
fn parse_grid_edges() {
    assert!(parse_grid("0:1:0").unwrap().is_empty());
    assert_eq!(parse_grid("3:7:1").unwrap(), vec![3.0]);
    assert_eq!(parse_grid("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    let g = parse_grid("0:pi/2:3").unwrap();
    assert!((g[2] - PI / 2.0).abs() < 1e-15);
    assert_eq!(parse_grid("1:0:3").unwrap(), vec![1.0, 0.5, 0.0]);
    assert!(parse_grid("0:1").is_err());
    assert!(parse_grid("0:1:x").is_err());
    assert!(parse_grid("1:1:3").is_err());
}

fn ghz_direct() -> ProtocolConfig {
    let mut cfg = ProtocolConfig::new(ProtocolKind::GhzDirect);
    cfg.collapse = Some(None);
    cfg.points = Some(11);
    cfg
}

#[test]
fn sweep_is_deterministic_and_ordered() {
    let grid = parse_grid("10:20:4").unwrap();
    let obs = vec!["p_u0u".to_string(), "analytic_transfer".to_string()];
    let a = sweep(&ghz_direct(), "J_MHz", &grid, &obs).unwrap();
    let b = sweep(&ghz_direct(), "J_MHz", &grid, &obs).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 8);
    assert_eq!(a.values, grid);
    for (num, exact) in a.series("p_u0u").iter().zip(a.series("analytic_transfer")) {
        assert!((num.unwrap() - exact.unwrap()).abs() < 1e-3);
    }
}

#[test]
fn sweep_records_point_failures() {
    let grid = [1.0, 2.0];
    let res = sweep(&ghz_direct(), "m", &grid, &["p_u0u".to_string(), "nonsense".to_string()]).unwrap();
    assert!(res.rows[0].result.is_some());
    assert!(res.rows[1].error.as_deref().unwrap().contains("nonsense"));
    assert!(res.rows[2].result.is_none() && res.rows[2].error.is_some());
    assert!(sweep(&ghz_direct(), "bogus", &grid, &[]).is_err());
    assert!(sweep(&ghz_direct(), "m", &[2.0, 1.0, 3.0], &[]).is_err());
}

#[test]
fn sweep_csv_layout() {
    let res = sweep(&ghz_direct(), "J_MHz", &[12.0], &["p_d2d".to_string()]).unwrap();
    let mut buf = Vec::new();
    res.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "param,value,observable,result");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "J_MHz");
    assert_eq!(row[1].parse::<f64>().unwrap(), 12.0);
    assert_eq!(row[2], "p_d2d");
    assert!(row[3].parse::<f64>().is_ok());
    assert!(lines.next().is_none());
}

#[test]
fn report_json_keys() {
    let mut r = FidelityReport {
        state_fidelity: Some(0.5),
        ..Default::default()
    };
    r.per_state.insert("u0u".into(), 0.9);
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    for k in ["state_fidelity", "process_fidelity", "leakage", "per_state"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert_eq!(v["per_state"]["u0u"], 0.9);
    assert!(v["leakage"].is_null());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fidelity_is_linear_under_mixing(a in state_strategy(), b in state_strategy(), t in state_strategy(), w in 0.0..1.0f64) {
        let ra = a * a.adjoint();
        let rb = b * b.adjoint();
        let mix = QuantumState::Mixed(ra * C64::from(w) + rb * C64::from(1.0 - w));
        let lhs = mix.fidelity(&t);
        let rhs = w * QuantumState::Pure(a).fidelity(&t) + (1.0 - w) * QuantumState::Pure(b).fidelity(&t);
        prop_assert!((lhs - rhs).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&lhs));
    }

    #[test]
    fn leakage_complements_computational_population(a in state_strategy()) {
        let s = QuantumState::Pure(a);
        let labels = labels_02();
        let inside: f64 = labels.iter().map(|l| population(&s, *l)).sum();
        prop_assert!((leakage(&s, &labels) + inside - 1.0).abs() < 1e-12);
        let q: f64 = (0..3).map(|k| qutrit_population(&s, k)).sum();
        prop_assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn process_fidelity_bounded(phases in prop::collection::vec(-PI..PI, 8)) {
        let u = SubMatrix::from_fn(8, 8, |r, c| if r == c { C64::from_polar(1.0, phases[r]) } else { ZERO });
        let f = process_fidelity(&u, &ccz_ideal()).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
        let g = process_fidelity(&u, &u).unwrap();
        prop_assert!((g - 1.0).abs() < 1e-12);
    }
}
