//! The regularized Benjamin–Ono flow
//!
//! ```text
//! u_t = χ_n[(χ_n u)(χ_n u)_x] + χ_n[H u_xx]
//! ```
//!
//! and its time integrators.
//!
//! The linear part is diagonal with symbol `L(k) = i·sgn(α·k)(α·k)²`
//! (restricted to `|α·k| < n`). Products are exact convolutions projected back
//! onto the working box. That Galerkin projection is a second truncation on
//! top of `χ_n`, which by itself bounds `|α·k|` but not `|k|`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{DiagnosticsConfig, DiagnosticsReport};
use crate::field::{sgn, FieldError, ProductExtent, QpField};
use crate::lattice::FrequencyBasis;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid flow parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite state at t = {time}")]
    BlowUp { time: f64, partial: Option<Box<TrajectoryRecord>> },
    #[error("Picard iteration diverged at iteration {iteration} (residual {residual:e})")]
    PicardDivergence { iteration: usize, residual: f64 },
    #[error("t = {t} is past the envelope blow-up time {blowup}")]
    EnvelopeExpired { t: f64, blowup: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Classical RK4 on the full right-hand side.
    Rk4,
    /// Integrating-factor (Lawson) RK4: the linear symbol is advanced exactly.
    #[default]
    Ifrk4,
}

/// Which parts of the right-hand side are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTerms {
    pub nonlinear: bool,
    pub linear: bool,
}

impl FlowTerms {
    pub const FULL: Self = Self { nonlinear: true, linear: true };
    pub const LINEAR_ONLY: Self = Self { nonlinear: false, linear: true };
    pub const NONE: Self = Self { nonlinear: false, linear: false };
}

impl Default for FlowTerms {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    /// Cutoff level of `χ_n`, in physical frequency units. May be `∞`.
    pub n: f64,
    /// Data-regularization radius; `None` leaves the initial data alone.
    pub delta: Option<f64>,
    pub s: f64,
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub gronwall_c: f64,
    #[serde(default)]
    pub terms: FlowTerms,
}

impl FlowParams {
    /// The standard desk configuration: `s = 2.5`, `n = 8`, `δ = 4`,
    /// `dt = 10⁻³`, `t_end = 0.5`, integrating-factor RK4.
    pub fn desk() -> Self {
        Self {
            n: 8.0,
            delta: Some(4.0),
            s: 2.5,
            dt: 1e-3,
            t_end: 0.5,
            integrator: Integrator::Ifrk4,
            gronwall_c: 1.0,
            terms: FlowTerms::FULL,
        }
    }

    pub fn validate(&self, basis: &FrequencyBasis) -> Result<()> {
        let bad = |msg: String| Err(DynamicsError::InvalidParams(msg));
        if !(self.n > 0.0) {
            return bad(format!("n > 0 violated: n = {}", self.n));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return bad(format!("delta > 0 violated: delta = {d}"));
            }
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt > 0 violated: dt = {}", self.dt));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end >= 0 violated: t_end = {}", self.t_end));
        }
        let min_s = basis.dim() as f64 / 2.0 + 1.0;
        if !(self.s > min_s) {
            return bad(format!("s > N/2 + 1 = {min_s} violated: s = {}", self.s));
        }
        if !(self.gronwall_c > 0.0) {
            return bad(format!("gronwall_c > 0 violated: C = {}", self.gronwall_c));
        }
        Ok(())
    }
}

/// Strided snapshots of a run together with their diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<QpField>,
    pub diagnostics: Vec<DiagnosticsReport>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &QpField {
        self.states.last().expect("a trajectory has at least one snapshot")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("a trajectory has at least one snapshot")
    }
}

/// Nonlinear part `χ_n[(χ_n u)(χ_n u)_x]`, computed as `½ ∂x χ_n[(χ_n u)²]`
/// so the mean coefficient is zero by construction.
pub fn nonlinear_term(u: &QpField, n: f64) -> Result<QpField> {
    let v = u.chi_cutoff(n);
    let sq = v.multiply(&v, ProductExtent::Working)?;
    Ok(sq.apply_multiplier(|m| {
        if m.freq.abs() < n {
            Complex64::new(0.0, 0.5 * m.freq)
        } else {
            Complex64::default()
        }
    }))
}

/// Linear part `χ_n[H u_xx]`, multiplier `i·sgn(α·k)(α·k)²` on `|α·k| < n`.
pub fn linear_term(u: &QpField, n: f64) -> QpField {
    u.apply_multiplier(|m| Complex64::new(0.0, linear_symbol(m.freq, n)))
}

fn linear_symbol(freq: f64, n: f64) -> f64 {
    if freq.abs() < n {
        sgn(freq) * freq * freq
    } else {
        0.0
    }
}

/// Right-hand side with selected terms.
pub fn rhs(u: &QpField, n: f64, terms: FlowTerms) -> Result<QpField> {
    let u = u.to_working();
    let mut out = QpField::zeros(u.basis());
    if terms.nonlinear {
        out = out.add(&nonlinear_term(&u, n)?)?;
    }
    if terms.linear {
        out = out.add(&linear_term(&u, n))?;
    }
    Ok(out)
}

/// `χ_n[(χ_n u)(χ_n u_x)] + χ_n[H u_xx]`.
pub fn bo_rhs(u: &QpField, n: f64) -> Result<QpField> {
    rhs(u, n, FlowTerms::FULL)
}

/// Exact solution operator of `u_t = H u_xx`:
/// `û(k) ↦ e^{i·sgn(α·k)(α·k)² t} û(k)`.
pub fn linear_phase(u: &QpField, t: f64) -> QpField {
    linear_phase_cut(u, t, f64::INFINITY)
}

/// Exact solution operator of `u_t = χ_n[H u_xx]`.
pub fn linear_phase_cut(u: &QpField, t: f64, n: f64) -> QpField {
    u.apply_multiplier(|m| Complex64::from_polar(1.0, linear_symbol(m.freq, n) * t))
}

fn check_finite(u: QpField, time: f64) -> Result<QpField> {
    if u.is_finite() {
        Ok(u)
    } else {
        Err(DynamicsError::BlowUp { time, partial: None })
    }
}

fn finish(mut u: QpField, time: f64) -> Result<QpField> {
    if u.is_real() {
        u.symmetrize();
    }
    check_finite(u, time)
}

/// One classical RK4 step of size `params.dt` from time `t`.
pub fn step_rk4(u: &QpField, params: &FlowParams, t: f64) -> Result<QpField> {
    step_rk4_sized(u, params, t, params.dt)
}

fn step_rk4_sized(u: &QpField, params: &FlowParams, t: f64, h: f64) -> Result<QpField> {
    let u = check_finite(u.to_working(), t)?;
    let f = |x: &QpField| rhs(x, params.n, params.terms);
    let k1 = f(&u)?;
    let k2 = f(&u.axpy(0.5 * h, &k1))?;
    let k3 = f(&u.axpy(0.5 * h, &k2))?;
    let k4 = f(&u.axpy(h, &k3))?;
    let next = u
        .axpy(h / 6.0, &k1)
        .axpy(h / 3.0, &k2)
        .axpy(h / 3.0, &k3)
        .axpy(h / 6.0, &k4);
    finish(next, t + h)
}

/// One integrating-factor RK4 step: exact linear propagation composed with
/// RK4 on the conjugated nonlinearity.
pub fn step_ifrk4(u: &QpField, params: &FlowParams, t: f64) -> Result<QpField> {
    step_ifrk4_sized(u, params, t, params.dt)
}

fn step_ifrk4_sized(u: &QpField, params: &FlowParams, t: f64, h: f64) -> Result<QpField> {
    let u = check_finite(u.to_working(), t)?;
    let n = params.n;
    let (lin_n, nonlinear) = (
        if params.terms.linear { n } else { 0.0 },
        params.terms.nonlinear,
    );
    let half = |x: &QpField| linear_phase_cut(x, 0.5 * h, lin_n);
    let full = |x: &QpField| linear_phase_cut(x, h, lin_n);
    if !nonlinear {
        return finish(full(&u), t + h);
    }
    let nl = |x: &QpField| nonlinear_term(x, n);
    let k1 = nl(&u)?;
    let eu_half = half(&u);
    let k2 = nl(&half(&u.axpy(0.5 * h, &k1)))?;
    let k3 = nl(&eu_half.axpy(0.5 * h, &k2))?;
    let k4 = nl(&full(&u).axpy(h, &half(&k3)))?;
    let next = full(&u)
        .axpy(h / 6.0, &full(&k1))
        .axpy(h / 3.0, &half(&k2.axpy(1.0, &k3)))
        .axpy(h / 6.0, &k4);
    finish(next, t + h)
}

fn step_sized(u: &QpField, params: &FlowParams, t: f64, h: f64) -> Result<QpField> {
    match params.integrator {
        Integrator::Rk4 => step_rk4_sized(u, params, t, h),
        Integrator::Ifrk4 => step_ifrk4_sized(u, params, t, h),
    }
}

/// Number of equal steps covering `[0, t_end]` with steps no longer than
/// `dt` (up to a relative slack of 10⁻⁹).
pub fn step_count(t_end: f64, dt: f64) -> usize {
    if t_end == 0.0 {
        return 0;
    }
    let ratio = t_end / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        rounded.max(1.0) as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Integrates to `t_end`, keeping every `snapshot_stride`-th state (and the
/// final one) with its diagnostics.
pub fn evolve(u0: &QpField, params: &FlowParams, snapshot_stride: usize) -> Result<TrajectoryRecord> {
    evolve_with(u0, params, snapshot_stride, &DiagnosticsConfig::for_s(params.s))
}

pub fn evolve_with(
    u0: &QpField,
    params: &FlowParams,
    snapshot_stride: usize,
    diag: &DiagnosticsConfig,
) -> Result<TrajectoryRecord> {
    params.validate(u0.basis())?;
    if !u0.is_real() {
        return Err(DynamicsError::InvalidParams("initial data must be real-valued".into()));
    }
    let stride = snapshot_stride.max(1);
    let mut u = u0.to_working();
    if let Some(d) = params.delta {
        u = u.delta_regularize(d);
    }
    let steps = step_count(params.t_end, params.dt);
    let h = if steps == 0 { 0.0 } else { params.t_end / steps as f64 };
    let mut rec = TrajectoryRecord { times: vec![], states: vec![], diagnostics: vec![] };
    let record = |rec: &mut TrajectoryRecord, t: f64, u: &QpField| -> Result<()> {
        rec.diagnostics.push(DiagnosticsReport::compute(u, t, diag)?);
        rec.times.push(t);
        rec.states.push(u.clone());
        Ok(())
    };
    record(&mut rec, 0.0, &u)?;
    for j in 0..steps {
        let t = j as f64 * h;
        u = match step_sized(&u, params, t, h) {
            Ok(next) => next,
            Err(DynamicsError::BlowUp { time, .. }) => {
                return Err(DynamicsError::BlowUp { time, partial: Some(Box::new(rec)) })
            }
            Err(e) => return Err(e),
        };
        if (j + 1) % stride == 0 || j + 1 == steps {
            let t_next = if j + 1 == steps { params.t_end } else { (j + 1) as f64 * h };
            record(&mut rec, t_next, &u)?;
        }
    }
    Ok(rec)
}

/// Largest stable step for the explicit integrators: `0.5 / max|α·k|²` over
/// the active modes for RK4, ten times that for integrating-factor RK4.
pub fn stable_dt(basis: &FrequencyBasis, n: f64, integrator: Integrator) -> f64 {
    let tables = basis.tables(basis.box_radius());
    let max = tables
        .freq
        .iter()
        .map(|f| f.abs())
        .filter(|&f| f < n)
        .fold(0.0, f64::max);
    let base = if max == 0.0 { f64::INFINITY } else { 0.5 / (max * max) };
    match integrator {
        Integrator::Rk4 => base,
        Integrator::Ifrk4 => 10.0 * base,
    }
}

/// Result of a Picard iteration on `[0, t]`.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// Last iterate evaluated at `t`.
    pub state: QpField,
    /// `sup_j ‖u_m(t_j) − u_{m−1}(t_j)‖_{H^s}` per iteration.
    pub residuals: Vec<f64>,
}

impl PicardOutcome {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Sub-intervals of the Picard quadrature grid.
pub const PICARD_INTERVALS: usize = 16;

/// Iterates `Φ(u)(τ) = u0 + ∫₀^τ F(u)` on a fixed grid of
/// [`PICARD_INTERVALS`] sub-intervals of `[0, t]`.
///
/// Cumulative integrals use composite Simpson to even nodes; odd nodes add a
/// quadratic-interpolation panel. Stops early once the residual reaches
/// roundoff, and reports divergence after three consecutive increases.
pub fn picard_iterate(u0: &QpField, params: &FlowParams, t: f64, iters: usize) -> Result<PicardOutcome> {
    if !(t >= 0.0) {
        return Err(DynamicsError::InvalidParams(format!("Picard horizon must be >= 0, got {t}")));
    }
    let u0 = u0.to_working();
    let m = PICARD_INTERVALS;
    let h = t / m as f64;
    let f = |x: &QpField| rhs(x, params.n, params.terms);
    let floor = 4.0 * f64::EPSILON * u0.sobolev_norm(params.s).max(f64::MIN_POSITIVE);
    let mut path: Vec<QpField> = vec![u0.clone(); m + 1];
    let mut residuals = Vec::new();
    let mut rising = 0;
    for iteration in 1..=iters.max(1) {
        let vals = path.iter().map(f).collect::<Result<Vec<_>>>()?;
        let mut next = Vec::with_capacity(m + 1);
        next.push(u0.clone());
        let mut even_acc = QpField::zeros(u0.basis());
        for j in 1..=m {
            let node = if j % 2 == 0 {
                // Simpson panel [t_{j-2}, t_j]
                even_acc = even_acc
                    .axpy(h / 3.0, &vals[j - 2])
                    .axpy(4.0 * h / 3.0, &vals[j - 1])
                    .axpy(h / 3.0, &vals[j]);
                even_acc.clone()
            } else {
                // ∫ over [t_{j-1}, t_j] of the quadratic through j-1, j, j+1
                even_acc
                    .axpy(5.0 * h / 12.0, &vals[j - 1])
                    .axpy(8.0 * h / 12.0, &vals[j])
                    .axpy(-h / 12.0, &vals[j + 1])
            };
            let mut state = u0.axpy(1.0, &node);
            if state.is_real() {
                state.symmetrize();
            }
            next.push(check_finite(state, j as f64 * h)?);
        }
        let residual = next
            .iter()
            .zip(&path)
            .map(|(a, b)| a.sub(b).map(|d| d.sobolev_norm(params.s)))
            .collect::<std::result::Result<Vec<_>, _>>()?
            .into_iter()
            .fold(0.0, f64::max);
        if let Some(&prev) = residuals.last() {
            if residual > prev {
                rising += 1;
                if rising >= 3 {
                    return Err(DynamicsError::PicardDivergence { iteration, residual });
                }
            } else {
                rising = 0;
            }
        }
        residuals.push(residual);
        path = next;
        if residual <= floor {
            break;
        }
    }
    Ok(PicardOutcome { state: path.pop().expect("grid has nodes"), residuals })
}

/// Largest `|symbol|` of the linearized flow on the active modes, i.e. the
/// Lipschitz constant of the linear part.
pub fn max_linear_symbol(basis: &FrequencyBasis, n: f64) -> f64 {
    basis
        .tables(basis.box_radius())
        .freq
        .iter()
        .map(|&f| linear_symbol(f, n).abs())
        .fold(0.0, f64::max)
}

/// `‖D^s u0‖_{L²} + ‖u0‖_{L²}`, the quantity the a priori bounds run on.
fn envelope_base(u0: &QpField, s: f64) -> f64 {
    u0.frac_norm(s) + u0.l2_norm()
}

/// Blow-up time of the a priori envelope,
/// `T = C⁻¹ (‖D^s u0‖_{L²} + ‖u0‖_{L²})⁻¹`; `∞` for zero data.
pub fn time_of_existence(u0: &QpField, s: f64, c: f64) -> f64 {
    let base = envelope_base(u0, s);
    if base == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (c * base)
    }
}

/// Bound on `‖D^s u_n(t)‖_{L²}`:
/// `((‖D^s u0‖ + ‖u0‖)⁻¹ − C t)⁻¹`.
pub fn derivative_envelope(u0: &QpField, s: f64, c: f64, t: f64) -> Result<f64> {
    let base = envelope_base(u0, s);
    if base == 0.0 {
        return Ok(0.0);
    }
    let denom = 1.0 / base - c * t;
    if !(denom > 0.0) {
        return Err(DynamicsError::EnvelopeExpired { t, blowup: 1.0 / (c * base) });
    }
    Ok(1.0 / denom)
}

/// Bound on `‖u_n(t)‖_{H^s}`:
/// `‖u0‖_{H^s} + (‖u0‖_{H^s}⁻¹ − C t)⁻¹`.
pub fn apriori_envelope(u0: &QpField, s: f64, c: f64, t: f64) -> Result<f64> {
    let norm = u0.sobolev_norm(s);
    if norm == 0.0 {
        return Ok(0.0);
    }
    let denom = 1.0 / norm - c * t;
    if !(denom > 0.0) {
        return Err(DynamicsError::EnvelopeExpired { t, blowup: 1.0 / (c * norm) });
    }
    Ok(norm + 1.0 / denom)
}

/// Blow-up time of [`apriori_envelope`].
pub fn apriori_blowup_time(u0: &QpField, s: f64, c: f64) -> f64 {
    let norm = u0.sobolev_norm(s);
    if norm == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (c * norm)
    }
}
