//! From circuit-element values to the effective spin-model parameters.
//!
//! The circuit has two transmon-like outer modes (left, right) and a middle
//! mode truncated to three levels. An optional external drive on the middle
//! mode dresses its upper two levels; the resulting parameters are then
//! expressed in the frame rotating at the drive frequency.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::units::{ghz, inductive_rate, mhz, reduced_capacitance, to_ghz, to_mhz};

/// Raw circuit values as they appear in parameter files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitParams {
    #[serde(rename = "L1_nH")]
    pub l1_nh: f64,
    #[serde(rename = "Ltilde1_nH")]
    pub ltilde1_nh: f64,
    #[serde(rename = "L2_nH")]
    pub l2_nh: f64,
    #[serde(rename = "Ltilde2_nH")]
    pub ltilde2_nh: f64,
    #[serde(rename = "C1_fF")]
    pub c1_ff: f64,
    #[serde(rename = "C2_fF")]
    pub c2_ff: f64,
    #[serde(rename = "Cext_fF")]
    pub cext_ff: f64,
    #[serde(rename = "EJ1_GHz")]
    pub ej1_ghz: f64,
    #[serde(rename = "EJ2_GHz")]
    pub ej2_ghz: f64,
    #[serde(rename = "EJq1_GHz")]
    pub ejq1_ghz: f64,
    #[serde(rename = "EJq2_GHz")]
    pub ejq2_ghz: f64,
    #[serde(rename = "EJq3_GHz")]
    pub ejq3_ghz: f64,
    #[serde(rename = "PhiSigma1_Phi0")]
    pub phi_sigma1: f64,
    #[serde(rename = "PhiSigma2_Phi0")]
    pub phi_sigma2: f64,
    #[serde(rename = "Aext_dimensionless", default, skip_serializing_if = "Option::is_none")]
    pub aext: Option<f64>,
    #[serde(rename = "omega_ext_GHz", default, skip_serializing_if = "Option::is_none")]
    pub omega_ext_ghz: Option<f64>,
    pub drive_on: bool,
}

/// Circuit values in the internal convention.
///
/// `il_*` hold φ₀²/(8Lħ) in rad/s, capacitances are C̃ = Cφ₀²/ħ in s/rad,
/// Josephson energies are in rad/s and fluxes are phases in rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedCircuit {
    pub il1: f64,
    pub il_tilde1: f64,
    pub il2: f64,
    pub il_tilde2: f64,
    pub c1: f64,
    pub c2: f64,
    pub cext: f64,
    pub ej1: f64,
    pub ej2: f64,
    pub ejq1: f64,
    pub ejq2: f64,
    pub ejq3: f64,
    pub phase1: f64,
    pub phase2: f64,
    pub aext: f64,
    pub omega_ext: f64,
    pub drive_on: bool,
}

impl ReducedCircuit {
    /// cos(Φ_Σ1/2)
    pub fn cos1(&self) -> f64 {
        (0.5 * self.phase1).cos()
    }

    /// cos(Φ_Σ2/2)
    pub fn cos2(&self) -> f64 {
        (0.5 * self.phase2).cos()
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::invalid(name, "must be finite"));
    }
    if v <= 0.0 {
        return Err(Error::invalid(name, format!("must be strictly positive, got {v}")));
    }
    Ok(())
}

fn require_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, "must be finite"))
    }
}

/// Converts file units to the internal rad/s convention.
pub fn to_reduced_units(raw: &CircuitParams) -> Result<ReducedCircuit> {
    for (name, v) in [
        ("L1_nH", raw.l1_nh),
        ("Ltilde1_nH", raw.ltilde1_nh),
        ("L2_nH", raw.l2_nh),
        ("Ltilde2_nH", raw.ltilde2_nh),
        ("C1_fF", raw.c1_ff),
        ("C2_fF", raw.c2_ff),
        ("Cext_fF", raw.cext_ff),
        ("EJ1_GHz", raw.ej1_ghz),
        ("EJ2_GHz", raw.ej2_ghz),
        ("EJq1_GHz", raw.ejq1_ghz),
        ("EJq2_GHz", raw.ejq2_ghz),
        ("EJq3_GHz", raw.ejq3_ghz),
    ] {
        require_positive(name, v)?;
    }
    require_finite("PhiSigma1_Phi0", raw.phi_sigma1)?;
    require_finite("PhiSigma2_Phi0", raw.phi_sigma2)?;

    let (aext, omega_ext) = if raw.drive_on {
        let a = raw
            .aext
            .ok_or_else(|| Error::invalid("Aext_dimensionless", "required when drive_on is true"))?;
        let w = raw
            .omega_ext_ghz
            .ok_or_else(|| Error::invalid("omega_ext_GHz", "required when drive_on is true"))?;
        require_finite("Aext_dimensionless", a)?;
        if a < 0.0 {
            return Err(Error::invalid("Aext_dimensionless", "must be non-negative"));
        }
        require_positive("omega_ext_GHz", w)?;
        (a, ghz(w))
    } else {
        if raw.aext.is_some() || raw.omega_ext_ghz.is_some() {
            log::warn!("drive_on is false: Aext_dimensionless and omega_ext_GHz are ignored");
        }
        (0.0, 0.0)
    };

    let il = |l: f64| inductive_rate(l) / 8.0;
    Ok(ReducedCircuit {
        il1: il(raw.l1_nh),
        il_tilde1: il(raw.ltilde1_nh),
        il2: il(raw.l2_nh),
        il_tilde2: il(raw.ltilde2_nh),
        c1: reduced_capacitance(raw.c1_ff),
        c2: reduced_capacitance(raw.c2_ff),
        cext: reduced_capacitance(raw.cext_ff),
        ej1: ghz(raw.ej1_ghz),
        ej2: ghz(raw.ej2_ghz),
        ejq1: ghz(raw.ejq1_ghz),
        ejq2: ghz(raw.ejq2_ghz),
        ejq3: ghz(raw.ejq3_ghz),
        phase1: 2.0 * PI * raw.phi_sigma1,
        phase2: 2.0 * PI * raw.phi_sigma2,
        aext,
        omega_ext,
        drive_on: raw.drive_on,
    })
}

/// Harmonic and quartic coefficients of the three modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationConstants {
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
    /// Mode capacitances C̃₁, C̃_Σ, C̃₂.
    pub ctilde: [f64; 3],
    pub ctilde_ext: f64,
    pub tq1: f64,
    pub tq2: f64,
    pub text: f64,
}

impl QuantizationConstants {
    pub fn ctilde_sigma(&self) -> f64 {
        self.ctilde[1]
    }

    /// Harmonic level spacing √(4α/C̃) of mode `k`.
    pub fn harmonic_spacing(&self, k: usize) -> f64 {
        (4.0 * self.alpha[k] / self.ctilde[k]).sqrt()
    }

    /// Quartic correction scale β/(4αC̃) of mode `k`.
    pub fn quartic_scale(&self, k: usize) -> f64 {
        self.beta[k] / (4.0 * self.alpha[k] * self.ctilde[k])
    }
}

pub fn quantization_constants(rc: &ReducedCircuit) -> Result<QuantizationConstants> {
    let (c1, c2) = (rc.cos1(), rc.cos2());
    let alpha1 = rc.il1 + rc.il_tilde1 + rc.ejq1 / 8.0 + rc.ej1 / 4.0 * c1;
    let beta1 = rc.ejq1 / 384.0 + rc.ej1 / 192.0 * c1;
    let alpha2 = rc.il1
        + rc.il_tilde1
        + rc.il2
        + rc.il_tilde2
        + rc.ejq2 / 2.0
        + rc.ej1 / 4.0 * c1
        + rc.ej2 / 4.0 * c2;
    let beta2 = rc.ejq2 / 24.0 + rc.ej1 / 192.0 * c1 + rc.ej2 / 192.0 * c2;
    let alpha3 = rc.il2 + rc.il_tilde2 + rc.ejq3 / 8.0 + rc.ej2 / 4.0 * c2;
    let beta3 = rc.ejq3 / 384.0 + rc.ej2 / 192.0 * c2;

    let alpha = [alpha1, alpha2, alpha3];
    for (k, &a) in alpha.iter().enumerate() {
        if !(a > 0.0) {
            return Err(Error::NonTransmon { mode: k + 1, alpha: a });
        }
    }

    let csum = rc.c1 + rc.c2 + rc.cext;
    let tq1 = (4.0 * alpha2 / csum).sqrt();
    let tq2 = beta2 / (4.0 * alpha2 * csum);
    let text = if rc.drive_on {
        rc.cext / csum * rc.aext * rc.omega_ext
    } else {
        0.0
    };

    Ok(QuantizationConstants {
        alpha,
        beta: [beta1, beta2, beta3],
        ctilde: [rc.c1, csum, rc.c2],
        ctilde_ext: rc.cext,
        tq1,
        tq2,
        text,
    })
}

/// Transmon-regime diagnostics; one message per mode above the 10% bound.
pub fn transmon_warnings(q: &QuantizationConstants) -> Vec<String> {
    (0..3)
        .filter_map(|k| {
            let ratio = (q.quartic_scale(k) / q.harmonic_spacing(k)).abs();
            (ratio >= 0.1).then(|| {
                format!(
                    "mode {}: quartic scale is {:.1}% of the harmonic spacing",
                    k + 1,
                    100.0 * ratio
                )
            })
        })
        .collect()
}

/// Lowest three levels of the middle mode and their overlap constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BareQutritSpectrum {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
    pub k0: f64,
    pub k2: f64,
    pub c00: f64,
    pub c02: f64,
    pub c22: f64,
}

impl BareQutritSpectrum {
    /// ξ = (E2 − E1) − (E1 − E0)
    pub fn anharmonicity(&self) -> f64 {
        self.e2 - 2.0 * self.e1 + self.e0
    }
}

pub fn bare_qutrit_spectrum(tq1: f64, tq2: f64) -> Result<BareQutritSpectrum> {
    if !(tq1 > 0.0) {
        return Err(Error::invalid("Tq1", format!("must be positive, got {tq1}")));
    }
    let shifted = tq1 - 18.0 * tq2;
    let s = (shifted * shifted + 72.0 * tq2 * tq2).sqrt();
    let e0 = shifted - s;
    let e1 = tq1 - 12.0 * tq2;
    let e2 = shifted + s;

    let norm = |e: f64| (72.0 * tq2 * tq2 + e * e).sqrt();
    let (n0, n2) = (norm(e0), norm(e2));
    // Harmonic limit: the ground state is exactly the bare vacuum.
    let (k0, c00) = if n0 > 0.0 {
        (
            SQRT_2 * (6.0 * tq2 - e0) / n0,
            1.0 - 4.0 * e0 * (6.0 * tq2 - e0) / (n0 * n0),
        )
    } else {
        (0.0, 1.0)
    };
    let k2 = -SQRT_2 * (6.0 * tq2 - e2) / n2;
    let c22 = 1.0 - 4.0 * e2 * (6.0 * tq2 - e2) / (n2 * n2);
    let c02 = if n0 > 0.0 {
        (4.0 * e0 * e2 - 12.0 * tq2 * (e0 + e2)) / (n0 * n2)
    } else {
        0.0
    };
    Ok(BareQutritSpectrum {
        e0,
        e1,
        e2,
        k0,
        k2,
        c00,
        c02,
        c22,
    })
}

/// Middle mode dressed by the external drive on its 1–2 transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivenQutritModel {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
    pub xi: f64,
    pub delta_det: f64,
    pub delta_mix: f64,
    pub gamma: f64,
    pub k0: f64,
    pub k2: f64,
    pub c00: f64,
    pub c02: f64,
    pub c22: f64,
    pub d1: f64,
    pub d2: f64,
    /// ⟨1′|1̃⟩-type amplitude entering the 0–1 exchange.
    pub r01: f64,
    /// (δ/2 + γ)/γ, entering the 1–2 exchange.
    pub r12: f64,
    pub eprime: [f64; 3],
}

pub fn driven_qutrit_mixing(
    spec: &BareQutritSpectrum,
    tq2: f64,
    text: f64,
    omega_ext: f64,
) -> Result<DrivenQutritModel> {
    let n2 = (72.0 * tq2 * tq2 + spec.e2 * spec.e2).sqrt();
    let delta_mix = 0.5 * text * SQRT_2 * (spec.e2 + 6.0 * tq2) / n2;
    let xi = spec.anharmonicity();
    let delta = spec.e2 - spec.e1 - omega_ext;
    let gamma = 0.5 * (delta * delta + 4.0 * delta_mix * delta_mix).sqrt();

    if delta == 0.0 && delta_mix == 0.0 {
        return Err(Error::DegenerateDressing);
    }
    if delta < 0.0 {
        return Err(Error::NegativeDetuning(delta));
    }
    let lower_gap = spec.e1 - spec.e0 - omega_ext;
    if delta.abs() * 5.0 > lower_gap.abs() {
        log::warn!(
            "two-level dressing approximation is marginal: |delta| = {:.3e}, |E1-E0-w| = {:.3e}",
            delta.abs(),
            lower_gap.abs()
        );
    }

    let (r01, d1, d2) = if delta_mix == 0.0 {
        (1.0, 3.0 - spec.c00, spec.c22 - spec.c00)
    } else {
        let m = gamma - 0.5 * delta;
        let p = gamma + 0.5 * delta;
        let dm2 = delta_mix * delta_mix;
        (
            delta_mix / (dm2 + m * m).sqrt(),
            (3.0 * dm2 + spec.c22 * m * m) / (dm2 + m * m) - spec.c00,
            (3.0 * dm2 + spec.c22 * p * p) / (dm2 + p * p) - spec.c00,
        )
    };
    let r12 = (0.5 * delta + gamma) / gamma;

    Ok(DrivenQutritModel {
        e0: spec.e0,
        e1: spec.e1,
        e2: spec.e2,
        xi,
        delta_det: delta,
        delta_mix,
        gamma,
        k0: spec.k0,
        k2: spec.k2,
        c00: spec.c00,
        c02: spec.c02,
        c22: spec.c22,
        d1,
        d2,
        r01,
        r12,
        eprime: [xi - 1.5 * delta, -gamma, gamma],
    })
}

/// Parameters of the effective qubit-qutrit-qubit Hamiltonian, in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "SpinModelRecord", try_from = "SpinModelRecord")]
pub struct SpinModelParams {
    pub delta_l: f64,
    pub delta_m: f64,
    /// Splitting δ_M between qutrit levels 1 and 2.
    pub small_delta_m: f64,
    pub delta_r: f64,
    pub j_lm01: f64,
    pub j_rm01: f64,
    pub j_lm12: f64,
    pub j_rm12: f64,
    pub jz_lm: f64,
    pub jz_rm: f64,
    pub d1: f64,
    pub d2: f64,
    pub frame_omega: f64,
}

/// File representation of [`SpinModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinModelRecord {
    #[serde(rename = "DeltaL_GHz")]
    pub delta_l_ghz: f64,
    #[serde(rename = "DeltaM_GHz")]
    pub delta_m_ghz: f64,
    #[serde(rename = "deltaM_GHz")]
    pub small_delta_m_ghz: f64,
    #[serde(rename = "DeltaR_GHz")]
    pub delta_r_ghz: f64,
    #[serde(rename = "J_LM01_MHz")]
    pub j_lm01_mhz: f64,
    #[serde(rename = "J_RM01_MHz")]
    pub j_rm01_mhz: f64,
    #[serde(rename = "J_LM12_MHz")]
    pub j_lm12_mhz: f64,
    #[serde(rename = "J_RM12_MHz")]
    pub j_rm12_mhz: f64,
    #[serde(rename = "Jz_LM_MHz")]
    pub jz_lm_mhz: f64,
    #[serde(rename = "Jz_RM_MHz")]
    pub jz_rm_mhz: f64,
    #[serde(rename = "D1")]
    pub d1: f64,
    #[serde(rename = "D2")]
    pub d2: f64,
    #[serde(rename = "frame_GHz", default)]
    pub frame_ghz: f64,
}

impl From<SpinModelParams> for SpinModelRecord {
    fn from(p: SpinModelParams) -> Self {
        SpinModelRecord {
            delta_l_ghz: to_ghz(p.delta_l),
            delta_m_ghz: to_ghz(p.delta_m),
            small_delta_m_ghz: to_ghz(p.small_delta_m),
            delta_r_ghz: to_ghz(p.delta_r),
            j_lm01_mhz: to_mhz(p.j_lm01),
            j_rm01_mhz: to_mhz(p.j_rm01),
            j_lm12_mhz: to_mhz(p.j_lm12),
            j_rm12_mhz: to_mhz(p.j_rm12),
            jz_lm_mhz: to_mhz(p.jz_lm),
            jz_rm_mhz: to_mhz(p.jz_rm),
            d1: p.d1,
            d2: p.d2,
            frame_ghz: to_ghz(p.frame_omega),
        }
    }
}

impl TryFrom<SpinModelRecord> for SpinModelParams {
    type Error = Error;

    fn try_from(r: SpinModelRecord) -> Result<Self> {
        let p = SpinModelParams {
            delta_l: ghz(r.delta_l_ghz),
            delta_m: ghz(r.delta_m_ghz),
            small_delta_m: ghz(r.small_delta_m_ghz),
            delta_r: ghz(r.delta_r_ghz),
            j_lm01: mhz(r.j_lm01_mhz),
            j_rm01: mhz(r.j_rm01_mhz),
            j_lm12: mhz(r.j_lm12_mhz),
            j_rm12: mhz(r.j_rm12_mhz),
            jz_lm: mhz(r.jz_lm_mhz),
            jz_rm: mhz(r.jz_rm_mhz),
            d1: r.d1,
            d2: r.d2,
            frame_omega: ghz(r.frame_ghz),
        };
        p.validate()?;
        Ok(p)
    }
}

impl SpinModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("DeltaL", self.delta_l),
            ("DeltaM", self.delta_m),
            ("deltaM", self.small_delta_m),
            ("DeltaR", self.delta_r),
            ("J_LM01", self.j_lm01),
            ("J_RM01", self.j_rm01),
            ("J_LM12", self.j_lm12),
            ("J_RM12", self.j_rm12),
            ("Jz_LM", self.jz_lm),
            ("Jz_RM", self.jz_rm),
            ("D1", self.d1),
            ("D2", self.d2),
            ("frame", self.frame_omega),
        ];
        for (name, v) in fields {
            require_finite(name, v)?;
        }
        Ok(())
    }

    /// Parameters with every coupling switched off.
    pub fn uncoupled(&self) -> Self {
        SpinModelParams {
            j_lm01: 0.0,
            j_rm01: 0.0,
            j_lm12: 0.0,
            j_rm12: 0.0,
            jz_lm: 0.0,
            jz_rm: 0.0,
            ..*self
        }
    }

    pub fn record(&self) -> SpinModelRecord {
        (*self).into()
    }
}

/// Every intermediate quantity of a derivation.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub reduced: ReducedCircuit,
    pub constants: QuantizationConstants,
    pub spectrum: BareQutritSpectrum,
    pub mixing: DrivenQutritModel,
    pub spin: SpinModelParams,
    pub warnings: Vec<String>,
}

pub fn derive(cp: &CircuitParams) -> Result<Derivation> {
    let rc = to_reduced_units(cp)?;
    let q = quantization_constants(&rc)?;
    let mut warnings = transmon_warnings(&q);
    if !cp.drive_on && (cp.aext.is_some() || cp.omega_ext_ghz.is_some()) {
        warnings.push("drive_on is false: Aext_dimensionless and omega_ext_GHz are ignored".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let spectrum = bare_qutrit_spectrum(q.tq1, q.tq2)?;
    let mixing = driven_qutrit_mixing(&spectrum, q.tq2, q.text, rc.omega_ext)?;
    let spin = spin_from_parts(&rc, &q, &mixing);
    spin.validate()?;
    Ok(Derivation {
        reduced: rc,
        constants: q,
        spectrum,
        mixing,
        spin,
        warnings,
    })
}

pub fn derive_spin_model(cp: &CircuitParams) -> Result<SpinModelParams> {
    derive(cp).map(|d| d.spin)
}

fn spin_from_parts(
    rc: &ReducedCircuit,
    q: &QuantizationConstants,
    m: &DrivenQutritModel,
) -> SpinModelParams {
    let [a1, a2, a3] = q.alpha;
    let [b1, _, b3] = q.beta;
    let (c1t, c2t, cs) = (q.ctilde[0], q.ctilde[2], q.ctilde[1]);
    let w = rc.omega_ext;
    let s1 = (a1 * a2 * c1t * cs).sqrt();
    let s3 = (a3 * a2 * c2t * cs).sqrt();
    let zl = rc.ej1 * rc.cos1() / s1;
    let zr = rc.ej2 * rc.cos2() / s3;

    let delta_l = -3.0 * b1 / (a1 * c1t) + (4.0 * a1 / c1t).sqrt() - m.c00 / 64.0 * zl - w;
    let delta_r = -3.0 * b3 / (a3 * c2t) + (4.0 * a3 / c2t).sqrt() - m.c00 / 64.0 * zr - w;
    let delta_m = m.eprime[1] - m.eprime[0] - m.d1 / 64.0 * (zl + zr);
    let small_delta_m = 2.0 * m.gamma - (m.d2 - m.d1) / 64.0 * (zl + zr);

    let xl = rc.il1 - rc.il_tilde1;
    let xr = rc.il2 - rc.il_tilde2;
    SpinModelParams {
        delta_l,
        delta_m,
        small_delta_m,
        delta_r,
        j_lm01: xl * m.k0 / (2.0 * s1.sqrt()) * m.r01,
        j_rm01: xr * m.k0 / (2.0 * s3.sqrt()) * m.r01,
        j_lm12: xl * m.k2 / (4.0 * s1.sqrt()) * m.r12,
        j_rm12: xr * m.k2 / (4.0 * s3.sqrt()) * m.r12,
        jz_lm: -zl / 128.0,
        jz_rm: -zr / 128.0,
        d1: m.d1,
        d2: m.d2,
        frame_omega: w,
    }
}
