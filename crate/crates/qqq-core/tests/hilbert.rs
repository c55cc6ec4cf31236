use nalgebra::Matrix4;
use proptest::prelude::*;
use qqq_core::dynamics::{drive_hamiltonian, CarrierMode, Envelope, Pulse};
use qqq_core::hilbert::*;
use qqq_core::protocols::{dissociation_block_hamiltonian, symmetric_dissociation_spin};
use qqq_core::units::{ghz, mhz};
use qqq_core::SpinModelParams;

fn lab(s: &str) -> BasisLabel {
    s.parse().unwrap()
}

fn spin_strategy() -> impl Strategy<Value = SpinModelParams> {
    (
        prop::array::uniform4(1.0..20.0f64),
        prop::array::uniform4(-30.0..30.0f64),
        prop::array::uniform2(-25.0..25.0f64),
        prop::array::uniform2(0.5..4.0f64),
    )
        .prop_map(|(d, j, jz, dd)| SpinModelParams {
            delta_l: ghz(d[0]),
            delta_m: ghz(d[1]),
            small_delta_m: ghz(d[2]),
            delta_r: ghz(d[3]),
            j_lm01: mhz(j[0]),
            j_rm01: mhz(j[1]),
            j_lm12: mhz(j[2]),
            j_rm12: mhz(j[3]),
            jz_lm: mhz(jz[0]),
            jz_rm: mhz(jz[1]),
            d1: dd[0],
            d2: dd[1],
            frame_omega: 0.0,
        })
}

#[test]
fn uncoupled_hamiltonian_is_diagonal() {
    let sp = SpinModelParams {
        delta_l: 3.0,
        delta_m: 5.0,
        small_delta_m: 7.0,
        delta_r: 11.0,
        j_lm01: 0.0,
        j_rm01: 0.0,
        j_lm12: 0.0,
        j_rm12: 0.0,
        jz_lm: 0.0,
        jz_rm: 0.0,
        d1: 2.0,
        d2: 4.0,
        frame_omega: 0.0,
    };
    let h = static_hamiltonian(&sp);
    let off: f64 = (0..DIM)
        .flat_map(|r| (0..DIM).map(move |c| (r, c)))
        .filter(|(r, c)| r != c)
        .map(|(r, c)| h[(r, c)].norm())
        .sum();
    assert_eq!(off, 0.0);
    let i = lab("u1u").index();
    assert_eq!(h[(i, i)].re, 0.5 * 3.0 + 5.0 + 0.5 * 11.0);
}

#[test]
fn dissociation_block_eigenvalues() {
    let (j, jz) = (mhz(15.0), mhz(-6.5));
    let h = static_hamiltonian(&symmetric_dissociation_spin(j, jz, ghz(5.0)));
    let block = ["d2d", "d1u", "u1d", "u0u"].map(|l| lab(l).index());
    let mid = h[(block[1], block[1])].re;
    let sub = Matrix4::from_fn(|r, c| h[(block[r], block[c])].re - if r == c { mid } else { 0.0 });
    let reference = dissociation_block_hamiltonian(j, jz).map(|z| z.re);
    assert!((sub - reference).abs().max() < 1e-12 * ghz(5.0), "{sub} {reference}");
    let mut got: Vec<f64> = sub.symmetric_eigenvalues().iter().copied().collect();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lambda = (4.0 * j * j + jz * jz).sqrt();
    let mut want = vec![0.0, -2.0 * jz, -jz - lambda, -jz + lambda];
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12 * ghz(5.0), "{g} vs {w}");
    }
}

#[test]
fn hadamard_properties() {
    let h = hadamard_right();
    assert!((h * h - Operator::identity()).iter().all(|z| z.norm() < 1e-14));
    let out = h * basis_state(lab("d0d"));
    let r = std::f64::consts::FRAC_1_SQRT_2;
    assert!((out[lab("d0d").index()].re - r).abs() < 1e-15);
    assert!((out[lab("d0u").index()].re - r).abs() < 1e-15);
    let [(_, zero_h), _] = hadamard_basis_labels();
    assert_eq!(zero_h[0], zero_h[1]);
    let uu = h * basis_state(lab("u0u"));
    for b in BasisLabel::all() {
        if b.left != Spin::Up || b.qutrit != 0 {
            assert_eq!(uu[b.index()], ZERO);
        }
    }
}

#[test]
fn empty_drive_is_zero() {
    let h = drive_hamiltonian(&[], 1e-7, CarrierMode::Rwa);
    assert_eq!(max_abs(&h), 0.0);
    let p = Pulse {
        channel: Channel::M01,
        envelope: Envelope::square(0.0, 0.0, 1e-6),
        carrier: ghz(5.0),
        phase: 0.0,
    };
    assert_eq!(max_abs(&drive_hamiltonian(&[p], 1e-7, CarrierMode::Cosine)), 0.0);
}

#[test]
fn cosine_drive_tensor_structure() {
    let omega = mhz(10.0);
    let p = Pulse {
        channel: Channel::M01,
        envelope: Envelope::square(omega, 0.0, 1e-6),
        carrier: ghz(5.0),
        phase: 0.0,
    };
    let h = drive_hamiltonian(&[p], 0.0, CarrierMode::Cosine);
    for (l, r) in [(Spin::Down, Spin::Down), (Spin::Up, Spin::Down), (Spin::Down, Spin::Up), (Spin::Up, Spin::Up)] {
        let a = BasisLabel::new(l, 0, r).index();
        let b = BasisLabel::new(l, 1, r).index();
        assert!((h[(a, b)].re - omega).abs() < 1e-6);
        assert!((h[(b, a)].re - omega).abs() < 1e-6);
    }
}

#[test]
fn rwa_average_norm_is_half_of_cosine_peak() {
    let omega = mhz(10.0);
    let w = ghz(1.0);
    let p = Pulse {
        channel: Channel::M12,
        envelope: Envelope::square(omega, 0.0, 1.0),
        carrier: w,
        phase: 0.3,
    };
    let peak = max_abs(&drive_hamiltonian(&[p], 0.0, CarrierMode::Cosine));
    let n = 64;
    let period = 2.0 * std::f64::consts::PI / w;
    let avg: f64 = (0..n)
        .map(|k| max_abs(&drive_hamiltonian(&[p], period * k as f64 / n as f64, CarrierMode::Rwa)))
        .sum::<f64>()
        / n as f64;
    assert!((avg - 0.5 * omega).abs() < 1e-9 * omega);
    assert!((peak - omega).abs() < 1e-9 * omega);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn label_index_round_trip(i in 0usize..12) {
        let b = BasisLabel::from_index(i);
        prop_assert_eq!(b.index(), i);
        prop_assert_eq!(b.to_string().parse::<BasisLabel>().unwrap(), b);
    }

    #[test]
    fn static_hamiltonian_hermitian_and_conserving(sp in spin_strategy()) {
        let h = static_hamiltonian(&sp);
        let scale = max_abs(&h);
        prop_assert!(is_hermitian(&h, 1e-12 * scale));
        prop_assert!(max_abs(&commutator(&h, &number_operator())) <= 1e-12 * scale);
    }

    #[test]
    fn mirror_symmetry(sp in spin_strategy()) {
        let sym = SpinModelParams {
            delta_r: sp.delta_l,
            j_rm01: sp.j_lm01,
            j_rm12: sp.j_lm12,
            jz_rm: sp.jz_lm,
            ..sp
        };
        let h = static_hamiltonian(&sym);
        let s = swap_lr();
        let scale = max_abs(&h);
        prop_assert!(max_abs(&(s * h * s - h)) <= 1e-12 * scale);
    }

    #[test]
    fn drive_hermitian(amp in 0.0..50.0f64, phase in -3.2..3.2f64, t in 0.0..1e-6f64, ch in 0usize..4) {
        let channel = [Channel::L, Channel::R, Channel::M01, Channel::M12][ch];
        let p = Pulse { channel, envelope: Envelope::square(mhz(amp), 0.0, 1e-6), carrier: ghz(4.0), phase };
        for mode in [CarrierMode::Rwa, CarrierMode::Cosine] {
            let h = drive_hamiltonian(&[p], t, mode);
            prop_assert!(is_hermitian(&h, 1e-12 * mhz(50.0)));
        }
    }
}
