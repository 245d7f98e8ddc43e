//! Conserved functionals, exact-identity residuals and inequality audits.
//!
//! Everything is a Fourier sum. Products that enter a pairing are taken on
//! the full Minkowski cube, so pairing against a box-limited field sees the
//! exact convolution.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{FieldError, ProductExtent, QpField};
use crate::lattice::FrequencyBasis;

type Result<T> = std::result::Result<T, FieldError>;

/// `û(0)`, real part.
pub fn mass(u: &QpField) -> f64 {
    u.mean().re
}

/// `Σ |û(k)|²`.
pub fn momentum(u: &QpField) -> f64 {
    u.coeffs().iter().map(|c| c.norm_sqr()).sum()
}

/// The two parts of the cubic energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTerms {
    /// `(1/3) Σ F{u²}(k) û(−k)`
    pub cubic: f64,
    /// `Σ F{Hu_x}(k) û(−k)`
    pub quadratic: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.cubic + self.quadratic
    }
}

pub fn energy_terms(u: &QpField) -> Result<EnergyTerms> {
    let u2 = u.multiply(u, ProductExtent::Full)?;
    Ok(EnergyTerms {
        cubic: u2.pair(u)?.re() / 3.0,
        quadratic: u.hilbert().d_dx().pair(u)?.re(),
    })
}

pub fn energy(u: &QpField) -> Result<f64> {
    Ok(energy_terms(u)?.total())
}

/// Coefficient of the `u_x²` term in the H¹-level functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum H1Coefficient {
    /// `−3/2`
    #[default]
    Stated,
    /// `+2`, the value carried through the conservation argument.
    ProofVariant,
}

impl H1Coefficient {
    pub fn value(self) -> f64 {
        match self {
            Self::Stated => -1.5,
            Self::ProofVariant => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H1Terms {
    /// `(1/4) Σ F{u³}(k) û(−k)`
    pub quartic: f64,
    /// `(3/2) Σ F{u²}(k) F{Hu_x}(−k)`
    pub cubic: f64,
    /// `Σ û_x(k) û_x(−k)`, before the coefficient.
    pub gradient: f64,
}

impl H1Terms {
    pub fn total(&self, coefficient: H1Coefficient) -> f64 {
        self.quartic + self.cubic + coefficient.value() * self.gradient
    }
}

pub fn h1_terms(u: &QpField) -> Result<H1Terms> {
    let u2 = u.multiply(u, ProductExtent::Full)?;
    let u3 = u2.multiply(u, ProductExtent::Radius(u.radius()))?;
    let ux = u.d_dx();
    Ok(H1Terms {
        quartic: 0.25 * u3.pair(u)?.re(),
        cubic: 1.5 * u2.pair(&ux.hilbert())?.re(),
        gradient: ux.pair(&ux)?.re(),
    })
}

/// The H¹-level functional with the stated `−3/2` gradient coefficient.
pub fn h1_law(u: &QpField) -> Result<f64> {
    h1_law_with(u, H1Coefficient::Stated)
}

pub fn h1_law_with(u: &QpField, coefficient: H1Coefficient) -> Result<f64> {
    Ok(h1_terms(u)?.total(coefficient))
}

/// How products inside [`identity_suite_with`] are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProductMode {
    /// Full Minkowski-cube convolution.
    #[default]
    Exact,
    /// Unpadded pseudospectral product on the working box.
    Aliased,
}

/// Names reported by [`identity_suite`], in output order.
pub const IDENTITY_NAMES: [&str; 8] = [
    "shift",
    "annihilation_0",
    "annihilation_1",
    "annihilation_2",
    "annihilation_3",
    "integration_by_parts",
    "cotlar",
    "linear_term",
];

fn ratio(defect: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        defect
    } else {
        defect / scale
    }
}

/// Residuals of the exact identities with exact products.
pub fn identity_suite(u: &QpField, s: f64) -> Result<BTreeMap<String, f64>> {
    identity_suite_with(u, s, ProductMode::Exact)
}

/// Residuals of the exact identities, each normalized by the size of its
/// largest term:
///
/// - `shift`: `⟨fg, h⟩ = ⟨f, gh⟩ = ⟨g, fh⟩` with `f = u`, `g = Hu`, `h = u_x`
/// - `annihilation_n`: `⟨uⁿ, u_x⟩ = 0` for `n ≤ 3`
/// - `integration_by_parts`: `⟨v u_x, u⟩ = −½⟨v_x u, u⟩` with `v = Hu`
/// - `cotlar`: `(Hf)² − f² = 2H(f·Hf)` coefficientwise, `f = u − û(0)`
/// - `linear_term`: `⟨H∂²D^s u, D^s u⟩ = 0`
pub fn identity_suite_with(u: &QpField, s: f64, mode: ProductMode) -> Result<BTreeMap<String, f64>> {
    let u = &u.to_working();
    let prod = |a: &QpField, b: &QpField| match mode {
        ProductMode::Exact => a.multiply(b, ProductExtent::Full),
        ProductMode::Aliased => a.multiply_aliased(b),
    };
    let mut out = BTreeMap::new();

    let (f, g, h) = (u.clone(), u.hilbert(), u.d_dx());
    let lhs = [(prod(&f, &g)?, &h), (prod(&g, &h)?, &f), (prod(&f, &h)?, &g)];
    let mut vals = Vec::new();
    let mut scale = 0.0f64;
    for (p, q) in &lhs {
        vals.push(p.pair(q)?.value());
        scale = scale.max(p.pair_abs(q)?);
    }
    let defect = (vals[0] - vals[1]).norm().max((vals[0] - vals[2]).norm()).max((vals[1] - vals[2]).norm());
    out.insert("shift".to_string(), ratio(defect, scale));

    let ux = u.d_dx();
    let mut pw = QpField::constant(u.basis(), 1.0);
    for n in 0..=3 {
        if n > 0 {
            pw = prod(&pw, u)?;
        }
        let val = pw.pair(&ux)?.norm();
        out.insert(format!("annihilation_{n}"), ratio(val, pw.pair_abs(&ux)?));
    }

    let v = u.hilbert();
    let a = prod(&v, &ux)?;
    let b = prod(&v.d_dx(), u)?;
    let lhs = a.pair(u)?.value();
    let rhs = -0.5 * b.pair(u)?.value();
    let scale = a.pair_abs(u)?.max(0.5 * b.pair_abs(u)?);
    out.insert("integration_by_parts".to_string(), ratio((lhs - rhs).norm(), scale));

    let mut f = u.clone();
    let origin = f.coeffs().len() / 2;
    f.coeffs_mut()[origin] = Complex64::default();
    let hf = f.hilbert();
    let hf2 = prod(&hf, &hf)?;
    let f2 = prod(&f, &f)?;
    let rhs = prod(&f, &hf)?.hilbert().scale(2.0);
    let defect = hf2.sub(&f2)?.sub(&rhs)?.max_abs();
    let scale = hf2.max_abs().max(f2.max_abs()).max(rhs.max_abs());
    out.insert("cotlar".to_string(), ratio(defect, scale));

    let w = u.frac_deriv(s)?;
    let hw = w.d_dx().d_dx().hilbert();
    out.insert("linear_term".to_string(), ratio(hw.pair(&w)?.norm(), hw.pair_abs(&w)?));
    Ok(out)
}

/// Worst ratio of the identity suite.
pub fn worst_residual(residuals: &BTreeMap<String, f64>) -> f64 {
    residuals.values().copied().fold(0.0, f64::max)
}

/// Which extras [`DiagnosticsReport::compute`] evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub sobolev_s: Vec<f64>,
    /// Order used by the `linear_term` identity.
    pub identity_s: f64,
    pub identities: bool,
}

impl DiagnosticsConfig {
    /// Norms at `0, 1, s`; identities off.
    pub fn for_s(s: f64) -> Self {
        let mut list = vec![0.0, 1.0];
        if !list.contains(&s) {
            list.push(s);
        }
        Self { sobolev_s: list, identity_s: s, identities: false }
    }
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub time: f64,
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
    /// Stated coefficient.
    pub h1_law: f64,
    pub h1_law_proof_variant: f64,
    /// `(s, ‖u‖_{H^s})` in configuration order.
    pub sobolev_norms: Vec<(f64, f64)>,
    pub identity_residuals: BTreeMap<String, f64>,
}

impl DiagnosticsReport {
    pub fn compute(u: &QpField, time: f64, cfg: &DiagnosticsConfig) -> Result<Self> {
        let h1 = h1_terms(u)?;
        Ok(Self {
            time,
            mass: mass(u),
            momentum: momentum(u),
            energy: energy(u)?,
            h1_law: h1.total(H1Coefficient::Stated),
            h1_law_proof_variant: h1.total(H1Coefficient::ProofVariant),
            sobolev_norms: cfg.sobolev_s.iter().map(|&s| (s, u.sobolev_norm(s))).collect(),
            identity_residuals: if cfg.identities {
                identity_suite(u, cfg.identity_s)?
            } else {
                BTreeMap::new()
            },
        })
    }

    pub fn is_finite(&self) -> bool {
        [self.time, self.mass, self.momentum, self.energy, self.h1_law, self.h1_law_proof_variant]
            .iter()
            .chain(self.sobolev_norms.iter().map(|(_, v)| v))
            .chain(self.identity_residuals.values())
            .all(|v| v.is_finite())
    }

    /// Column order: `time, mass, momentum, energy, h1_law,
    /// h1_law_proof_variant`, then `hs_<s>` per configured order, then
    /// `id_<name>` per identity in name order.
    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> =
            ["time", "mass", "momentum", "energy", "h1_law", "h1_law_proof_variant"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        cols.extend(self.sobolev_norms.iter().map(|(s, _)| format!("hs_{s}")));
        cols.extend(self.identity_residuals.keys().map(|k| format!("id_{k}")));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut vals = vec![
            self.time,
            self.mass,
            self.momentum,
            self.energy,
            self.h1_law,
            self.h1_law_proof_variant,
        ];
        vals.extend(self.sobolev_norms.iter().map(|(_, v)| *v));
        vals.extend(self.identity_residuals.values().copied());
        vals.iter().map(|v| fmt_float(*v)).collect::<Vec<_>>().join(",")
    }
}

/// Seventeen significant digits, `.` decimal separator.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Worst observed ratios from [`inequality_audit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityAudit {
    pub trials: usize,
    pub s: f64,
    /// `Σ|û| / ‖u‖_{H^s}`.
    pub sobolev_l1: f64,
    /// `(Σ_box ⟨k⟩^{−2s})^{1/2}`, the Cauchy–Schwarz constant on the box.
    pub sobolev_l1_bound: f64,
    /// `‖uv‖_{H^s} / (‖u‖_{H^s} ‖v‖_{H^s})`.
    pub algebra: f64,
    /// Lower index used in the commutator bound, `N/2 + 1/2`.
    pub leibniz_s0: f64,
    /// `‖D^s(uv) − u D^s v‖ / (‖u‖_{H^s}‖v‖_{H^{s0}} + ‖u‖_{H^{s0+1}}‖v‖_{H^{s−1}})`.
    pub leibniz: f64,
    /// `‖u‖_{H^p} / (‖u‖_{H^l}^{p/l} ‖u‖^{1−p/l})`.
    pub interpolation: f64,
    /// `‖(χ_n − χ_m)v‖ / (max{1/n,1/m}^l ‖D^l v‖)`.
    pub difference_est: f64,
    /// Same with the factor `(|α| max{1/n,1/m})^l`, which accounts for
    /// `|α·k| ≤ |α||k|`.
    pub difference_est_scaled: f64,
    /// `(n, m, l)` of the worst literal difference ratio.
    pub difference_est_worst: (u32, u32, f64),
    /// `‖u_δ‖_{H^{s+j}} / ((2δ²)^{j/2} ‖u_δ‖_{H^s})` for `j = 1, 2`.
    pub rd1: [f64; 2],
    /// `‖u_δ‖_{H^{s+j}} / (δ^j ‖u_δ‖_{H^s})` for `j = 1, 2`.
    pub rd1_delta_power: [f64; 2],
    /// `‖u_δ − u‖ / (δ^{−s} (Σ_{|k|>δ} |k|^{2s}|û|²)^{1/2})`.
    pub rd2: f64,
    /// Relative defect of `‖u_δ − u‖²_{H^s} = Σ_{|k|>δ} ⟨k⟩^{2s}|û|²`.
    pub rd3: f64,
}

/// Random field for the audit: full-box support, `⟨k⟩^{−s−1}` decay.
fn audit_field(basis: &Arc<FrequencyBasis>, rng: &mut ChaCha8Rng, s: f64) -> QpField {
    let seed = rng.gen::<u64>();
    let amplitude = rng.gen_range(0.1..10.0);
    QpField::random(basis, seed, basis.box_radius(), s, amplitude, true)
}

fn high_tail(u: &QpField, delta: f64, weight: impl Fn(f64) -> f64) -> f64 {
    let tables = u.basis().tables(u.radius());
    u.coeffs()
        .iter()
        .zip(&tables.norm_sq)
        .filter(|(_, &n2)| (n2 as f64).sqrt() > delta)
        .map(|(c, &n2)| weight(n2 as f64) * c.norm_sqr())
        .sum()
}

/// Evaluates each inequality on `trials` seeded random fields and returns the
/// worst ratio of each.
pub fn inequality_audit(basis: &Arc<FrequencyBasis>, seed: u64, trials: usize, s: f64) -> Result<InequalityAudit> {
    if trials == 0 {
        return Err(FieldError::InvalidParameter("trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = basis.dim() as f64;
    let s0 = dim / 2.0 + 0.5;
    let k = basis.box_radius();
    let tables = basis.tables(k);
    let l1_bound = tables.norm_sq.iter().map(|&n2| (1.0 + n2 as f64).powf(-s)).sum::<f64>().sqrt();
    let mut a = InequalityAudit {
        trials,
        s,
        sobolev_l1: 0.0,
        sobolev_l1_bound: l1_bound,
        algebra: 0.0,
        leibniz_s0: s0,
        leibniz: 0.0,
        interpolation: 0.0,
        difference_est: 0.0,
        difference_est_scaled: 0.0,
        difference_est_worst: (0, 0, 0.0),
        rd1: [0.0; 2],
        rd1_delta_power: [0.0; 2],
        rd2: 0.0,
        rd3: 0.0,
    };
    let alpha_norm = basis.alpha_norm();
    for trial in 0..trials {
        let u = audit_field(basis, &mut rng, s);
        let v = audit_field(basis, &mut rng, s);

        a.sobolev_l1 = a.sobolev_l1.max(u.l1_coeff_norm() / u.sobolev_norm(s));

        let uv = u.multiply(&v, ProductExtent::Full)?;
        a.algebra = a.algebra.max(uv.sobolev_norm(s) / (u.sobolev_norm(s) * v.sobolev_norm(s)));

        let comm = u.leibniz_commutator(&v, s)?.l2_norm();
        let rhs = u.sobolev_norm(s) * v.sobolev_norm(s0) + u.sobolev_norm(s0 + 1.0) * v.sobolev_norm(s - 1.0);
        a.leibniz = a.leibniz.max(comm / rhs);

        let l = rng.gen_range(0.05..2.0 * s);
        let p = l * rng.gen_range(0.0..=1.0);
        let theta = p / l;
        let bound = u.sobolev_norm(l).powf(theta) * u.l2_norm().powf(1.0 - theta);
        a.interpolation = a.interpolation.max(u.sobolev_norm(p) / bound);

        let levels = [0.5, 1.0, 2.0];
        let dl = levels[trial % levels.len()];
        let n = rng.gen_range(1..=16u32);
        let m = loop {
            let m = rng.gen_range(1..=16u32);
            if m != n {
                break m;
            }
        };
        let diff = v.chi_cutoff(n as f64).sub(&v.chi_cutoff(m as f64))?.l2_norm();
        let factor = (1.0 / n as f64).max(1.0 / m as f64);
        let dv = v.frac_norm(dl);
        let literal = diff / (factor.powf(dl) * dv);
        if literal > a.difference_est {
            a.difference_est = literal;
            a.difference_est_worst = (n, m, dl);
        }
        a.difference_est_scaled = a.difference_est_scaled.max(diff / ((alpha_norm * factor).powf(dl) * dv));

        let delta = rng.gen_range(1.0..k as f64);
        let ud = u.delta_regularize(delta);
        for j in 0..2 {
            let jj = (j + 1) as f64;
            let top = ud.sobolev_norm(s + jj);
            let base = ud.sobolev_norm(s);
            a.rd1[j] = a.rd1[j].max(top / ((2.0 * delta * delta).powf(jj / 2.0) * base));
            a.rd1_delta_power[j] = a.rd1_delta_power[j].max(top / (delta.powf(jj) * base));
        }
        let rest = ud.sub(&u)?;
        let tail = high_tail(&u, delta, |n2| n2.powf(s)).sqrt() * delta.powf(-s);
        if tail > 0.0 {
            a.rd2 = a.rd2.max(rest.l2_norm() / tail);
        }
        let want = high_tail(&u, delta, |n2| (1.0 + n2).powf(s));
        let got = rest.sobolev_norm(s).powi(2);
        a.rd3 = a.rd3.max(ratio((got - want).abs(), want));
    }
    Ok(a)
}

/// Phase translation `û(k) ↦ e^{iθ(α·k)} û(k)`, i.e. `u(x) ↦ u(x + θ)`.
pub fn translate(u: &QpField, theta: f64) -> QpField {
    u.apply_multiplier(|m| Complex64::from_polar(1.0, theta * m.freq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticePoint;
    use proptest::prelude::*;

    fn cosine(b: &Arc<FrequencyBasis>, k: [i64; 2], a: f64) -> QpField {
        QpField::make_field(b, &[(LatticePoint::from(k), Complex64::new(0.5 * a, 0.0))], true).unwrap()
    }

    #[test]
    fn mass_and_momentum_examples() {
        let b = FrequencyBasis::golden_pair(4);
        let c = cosine(&b, [1, 0], 1.0);
        assert_eq!(mass(&c), 0.0);
        assert_eq!(mass(&c.add(&QpField::constant(&b, 3.0)).unwrap()), 3.0);
        assert_eq!(mass(&QpField::zeros(&b)), 0.0);
        let two = c.add(&cosine(&b, [0, 1], 1.0)).unwrap();
        assert!((momentum(&two) - 1.0).abs() < 1e-15);
        assert_eq!(momentum(&QpField::zeros(&b)), 0.0);
        assert!((momentum(&cosine(&b, [2, 1], 3.0)) - 4.5).abs() < 1e-14);
    }

    #[test]
    fn energy_examples() {
        let b = FrequencyBasis::golden_pair(4);
        let c = cosine(&b, [1, 0], 1.0);
        let e = energy_terms(&c).unwrap();
        assert!(e.cubic.abs() < 1e-16);
        assert!((e.total() - 0.5).abs() < 1e-15);
        assert_eq!(energy(&QpField::zeros(&b)).unwrap(), 0.0);

        let u = QpField::random(&b, 4, 4, 1.0, 1.0, true);
        let plus = energy_terms(&u).unwrap();
        let minus = energy_terms(&u.scale(-1.0)).unwrap();
        assert!((plus.cubic + minus.cubic).abs() < 1e-14);
        assert!((plus.quadratic - minus.quadratic).abs() < 1e-14);
        // oracle: cubic term is the mean of u³/3, evaluated by direct sums
        let u2 = u.multiply_direct(&u, ProductExtent::Full).unwrap();
        let u3 = u2.multiply_direct(&u, ProductExtent::Full).unwrap();
        assert!((plus.cubic - u3.mean().re / 3.0).abs() < 1e-13);
    }

    #[test]
    fn h1_examples() {
        let b = FrequencyBasis::golden_pair(4);
        assert_eq!(h1_law(&QpField::zeros(&b)).unwrap(), 0.0);
        let c = cosine(&b, [1, 0], 1.0);
        let t = h1_terms(&c).unwrap();
        // mean cos⁴ = 3/8, mean cos³ = 0, mean sin² = 1/2
        assert!((t.quartic - 3.0 / 32.0).abs() < 1e-15);
        assert!(t.cubic.abs() < 1e-15);
        assert!((t.gradient - 0.5).abs() < 1e-15);
        assert!((h1_law(&c).unwrap() - (3.0 / 32.0 - 0.75)).abs() < 1e-15);
        assert!((h1_law_with(&c, H1Coefficient::ProofVariant).unwrap() - (3.0 / 32.0 + 1.0)).abs() < 1e-15);

        let u = QpField::random(&b, 9, 4, 1.0, 1.0, true);
        let full = h1_terms(&u).unwrap();
        let half = h1_terms(&u.scale(0.5)).unwrap();
        assert!((half.quartic - full.quartic / 16.0).abs() < 1e-14 * full.quartic.abs().max(1.0));
        assert!((half.cubic - full.cubic / 8.0).abs() < 1e-14 * full.cubic.abs().max(1.0));
        assert!((half.gradient - full.gradient / 4.0).abs() < 1e-14 * full.gradient.abs().max(1.0));
    }

    #[test]
    fn identities_hold_for_band_limited_fields() {
        let b = FrequencyBasis::golden_pair(12);
        for seed in 0..5 {
            let u = QpField::random(&b, seed, 4, 1.0, 1.0, true);
            let r = identity_suite(&u, 2.5).unwrap();
            assert_eq!(r.len(), IDENTITY_NAMES.len());
            for name in IDENTITY_NAMES {
                assert!(r[name] <= 1e-12, "{name}: {}", r[name]);
            }
        }
        let z = identity_suite(&QpField::zeros(&b), 2.5).unwrap();
        assert!(z.values().all(|&v| v == 0.0));
    }

    #[test]
    fn aliased_products_break_identities() {
        let b = FrequencyBasis::golden_pair(8);
        let u = QpField::random(&b, 1, 8, 0.0, 1.0, true);
        let r = identity_suite_with(&u, 2.5, ProductMode::Aliased).unwrap();
        assert!(worst_residual(&r) > 1e-6, "{r:?}");
    }

    #[test]
    fn report_row_matches_header() {
        let b = FrequencyBasis::golden_pair(4);
        let u = QpField::random(&b, 1, 4, 1.0, 1.0, true);
        let cfg = DiagnosticsConfig { identities: true, ..DiagnosticsConfig::for_s(2.5) };
        let rep = DiagnosticsReport::compute(&u, 0.25, &cfg).unwrap();
        assert!(rep.is_finite());
        assert!(rep.momentum >= 0.0);
        let header = rep.csv_header();
        assert!(header.starts_with("time,mass,momentum,energy,h1_law,h1_law_proof_variant,hs_0,hs_1,hs_2.5,id_"));
        assert_eq!(header.split(',').count(), rep.csv_row().split(',').count());
        let first: f64 = rep.csv_row().split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, 0.25);
    }

    #[test]
    fn audit_exact_inequalities() {
        let b = FrequencyBasis::golden_pair(8);
        let a = inequality_audit(&b, 3, 20, 2.5).unwrap();
        assert!(a.interpolation <= 1.0 + 1e-12);
        assert!(a.difference_est_scaled <= 1.0 + 1e-12);
        assert!(a.rd1.iter().all(|&r| r <= 1.0 + 1e-12));
        assert!(a.rd1_delta_power.iter().all(|&r| r <= 2f64.sqrt().powi(2) + 1e-12));
        assert!(a.rd2 <= 1.0 + 1e-12);
        assert!(a.rd3 <= 1e-12);
        assert!(a.sobolev_l1 <= a.sobolev_l1_bound * (1.0 + 1e-12));
        assert!(a.algebra.is_finite() && a.leibniz.is_finite());
        assert!(inequality_audit(&b, 3, 0, 2.5).is_err());
    }

    #[test]
    fn difference_estimate_with_unit_lattice_norm_counterexample() {
        // k = (1,1): α·k = 1 + √2 lies in [2, 4) while |k|^l max{1/2,1/4}^l = (√2/2)^l < 1.
        let b = FrequencyBasis::golden_pair(4);
        let v = cosine(&b, [1, 1], 1.0);
        for l in [0.5, 1.0, 2.0] {
            let diff = v.chi_cutoff(2.0).sub(&v.chi_cutoff(4.0)).unwrap().l2_norm();
            let literal = diff / (0.5f64.powf(l) * v.frac_norm(l));
            assert!((literal - 2f64.sqrt().powf(l)).abs() < 1e-12);
            let scaled = diff / ((b.alpha_norm() * 0.5).powf(l) * v.frac_norm(l));
            assert!(scaled <= 1.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residuals_invariant_under_translation(seed in 0u64..1000, theta in -10.0f64..10.0) {
            let b = FrequencyBasis::golden_pair(9);
            let u = QpField::random(&b, seed, 3, 1.0, 1.0, true);
            let before = identity_suite(&u, 2.5).unwrap();
            let after = identity_suite(&translate(&u, theta), 2.5).unwrap();
            for name in IDENTITY_NAMES {
                prop_assert!(before[name] <= 1e-12 && after[name] <= 1e-12, "{}: {} {}", name, before[name], after[name]);
            }
        }

        #[test]
        fn translation_preserves_functionals(seed in 0u64..1000, theta in -10.0f64..10.0) {
            let b = FrequencyBasis::golden_pair(6);
            let u = QpField::random(&b, seed, 2, 1.0, 1.0, true);
            let v = translate(&u, theta);
            prop_assert!((momentum(&u) - momentum(&v)).abs() <= 1e-13 * momentum(&u));
            prop_assert!((energy(&u).unwrap() - energy(&v).unwrap()).abs() <= 1e-12);
            prop_assert!((h1_law(&u).unwrap() - h1_law(&v).unwrap()).abs() <= 1e-12);
        }
    }
}
