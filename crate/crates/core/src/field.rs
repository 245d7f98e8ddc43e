//! Coefficient fields on the lattice box and the operators acting on them.
//!
//! A [`QpField`] stores `û(k)` densely on a cube of radius `R` (usually the
//! basis' working radius `K`; exact products live on larger cubes). Fourier
//! multipliers act coefficientwise. Products are lattice convolutions and are
//! computed without aliasing onto whatever cube the caller asks for.
//!
//! Multipliers use two different magnitudes: `α·k` for `H`, `∂x` and `χ_n`,
//! and the lattice norm `|k|` for `D^s`, the Sobolev weights and the data
//! regularizer. Note `|α·k| ≤ |α|·|k|`, and `|α|` can exceed one.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::convolve;
use crate::lattice::{self, box_len, index_of, weight_from_norm_sq, FrequencyBasis, LatticePoint};

/// Largest deviation from Hermitian symmetry tolerated on a real field.
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("fields live on different frequency bases")]
    BasisMismatch,
    #[error("lattice point {point} lies outside the box of radius {radius}")]
    OutsideBox { point: LatticePoint, radius: usize },
    #[error("lattice point {point} has dimension {got}, basis has {want}")]
    WrongDimension { point: LatticePoint, got: usize, want: usize },
    #[error("fractional order must be nonnegative, got {0}")]
    NegativeOrder(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("coefficient at index {0} is not finite")]
    NonFinite(usize),
    #[error("expected {want} coefficients, got {got}")]
    WrongLength { want: usize, got: usize },
    #[error("malformed field record: {0}")]
    Parse(String),
    #[error(transparent)]
    Lattice(#[from] lattice::LatticeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FieldError>;

/// Where a product is read back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductExtent {
    /// The basis' working box (Galerkin projection of the exact product).
    Working,
    /// The full Minkowski-sum cube, radius `r₁ + r₂`; nothing is dropped.
    Full,
    Radius(usize),
}

/// `Σ_k û(k) v̂(−k)`, the averaged integral of a product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingValue(pub Complex64);

impl PairingValue {
    pub fn value(self) -> Complex64 {
        self.0
    }

    pub fn re(self) -> f64 {
        self.0.re
    }

    pub fn norm(self) -> f64 {
        self.0.norm()
    }
}

/// Multiplier input for one lattice point.
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    /// `α·k`
    pub freq: f64,
    /// `|k|²`
    pub norm_sq: i64,
}

#[derive(Debug, Clone)]
pub struct QpField {
    basis: Arc<FrequencyBasis>,
    radius: usize,
    coeffs: Vec<Complex64>,
    is_real: bool,
}

impl PartialEq for QpField {
    fn eq(&self, other: &Self) -> bool {
        *self.basis == *other.basis
            && self.radius == other.radius
            && self.is_real == other.is_real
            && self.coeffs == other.coeffs
    }
}

impl QpField {
    pub fn zeros(basis: &Arc<FrequencyBasis>) -> Self {
        Self::zeros_on(basis, basis.box_radius())
    }

    pub fn zeros_on(basis: &Arc<FrequencyBasis>, radius: usize) -> Self {
        Self {
            basis: Arc::clone(basis),
            radius,
            coeffs: vec![Complex64::default(); box_len(basis.dim(), radius)],
            is_real: true,
        }
    }

    pub fn constant(basis: &Arc<FrequencyBasis>, c: f64) -> Self {
        let mut f = Self::zeros(basis);
        let mid = f.coeffs.len() / 2;
        f.coeffs[mid] = Complex64::new(c, 0.0);
        f
    }

    /// Wraps a coefficient vector in storage order.
    pub fn from_coeffs(
        basis: &Arc<FrequencyBasis>,
        radius: usize,
        coeffs: Vec<Complex64>,
        is_real: bool,
    ) -> Result<Self> {
        let want = box_len(basis.dim(), radius);
        if coeffs.len() != want {
            return Err(FieldError::WrongLength { want, got: coeffs.len() });
        }
        if let Some(i) = coeffs.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        let mut f = Self { basis: Arc::clone(basis), radius, coeffs, is_real };
        if is_real {
            f.symmetrize();
        }
        Ok(f)
    }

    /// Field with the listed coefficients on the working box.
    ///
    /// For a real field each listed `k` whose partner `−k` is absent gets
    /// `û(−k) = conj(û(k))`, so `cos(α₁x)` can be given as the single entry
    /// `(e₁, ½)`. Repeated points accumulate.
    pub fn make_field(
        basis: &Arc<FrequencyBasis>,
        modes: &[(LatticePoint, Complex64)],
        is_real: bool,
    ) -> Result<Self> {
        let radius = basis.box_radius();
        let mut coeffs = vec![Complex64::default(); box_len(basis.dim(), radius)];
        let mut given = vec![false; coeffs.len()];
        for (k, amp) in modes {
            if k.dim() != basis.dim() {
                return Err(FieldError::WrongDimension {
                    point: k.clone(),
                    got: k.dim(),
                    want: basis.dim(),
                });
            }
            let idx = index_of(radius, k.coords())
                .ok_or_else(|| FieldError::OutsideBox { point: k.clone(), radius })?;
            coeffs[idx] += amp;
            given[idx] = true;
        }
        if is_real {
            let len = coeffs.len();
            for idx in 0..len {
                let partner = len - 1 - idx;
                if given[idx] && !given[partner] {
                    coeffs[partner] = coeffs[idx].conj();
                }
            }
        }
        Self::from_coeffs(basis, radius, coeffs, is_real)
    }

    /// Seeded random field with amplitudes `amplitude·⟨k⟩^{−s−1}` on the cube
    /// of radius `support` (clamped to the working box). Draws run over the
    /// support cube only, so the data does not depend on the box radius.
    pub fn random(
        basis: &Arc<FrequencyBasis>,
        seed: u64,
        support: usize,
        s: f64,
        amplitude: f64,
        is_real: bool,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support = support.min(basis.box_radius());
        let tables = basis.tables(support);
        let coeffs = tables
            .norm_sq
            .iter()
            .map(|&n2| {
                let re: f64 = rng.gen_range(-1.0..1.0);
                let im: f64 = rng.gen_range(-1.0..1.0);
                let w = (1.0 + n2 as f64).powf(-0.5 * (s + 1.0));
                Complex64::new(re, im) * (amplitude * w)
            })
            .collect();
        Self::from_coeffs(basis, support, coeffs, is_real)
            .expect("finite by construction")
            .to_working()
    }

    pub fn basis(&self) -> &Arc<FrequencyBasis> {
        &self.basis
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn is_real(&self) -> bool {
        self.is_real
    }

    /// `û(k)`, zero outside the stored cube.
    pub fn coeff(&self, k: &LatticePoint) -> Complex64 {
        index_of(self.radius, k.coords())
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    pub fn mean(&self) -> Complex64 {
        self.coeffs[self.coeffs.len() / 2]
    }

    /// Sup-norm radius of the support (largest `max_i |k_i|` with `û(k) ≠ 0`).
    pub fn support_radius(&self) -> usize {
        let dim = self.dim();
        let side = 2 * self.radius + 1;
        let mut best = 0usize;
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c == Complex64::default() {
                continue;
            }
            let mut rem = i;
            for _ in 0..dim {
                best = best.max((rem % side).abs_diff(self.radius));
                rem /= side;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest `|û(−k) − conj(û(k))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let len = self.coeffs.len();
        (0..=len / 2)
            .map(|i| (self.coeffs[len - 1 - i] - self.coeffs[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Re-imposes `û(−k) = conj(û(k))` by averaging the pair.
    pub fn symmetrize(&mut self) {
        let len = self.coeffs.len();
        for i in 0..len / 2 {
            let j = len - 1 - i;
            let avg = (self.coeffs[i] + self.coeffs[j].conj()) * 0.5;
            self.coeffs[i] = avg;
            self.coeffs[j] = avg.conj();
        }
        let mid = len / 2;
        self.coeffs[mid].im = 0.0;
    }

    fn same_basis(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.basis, &other.basis) || *self.basis == *other.basis {
            Ok(())
        } else {
            Err(FieldError::BasisMismatch)
        }
    }

    fn with_coeffs(&self, radius: usize, coeffs: Vec<Complex64>, is_real: bool) -> Self {
        let mut f = Self { basis: Arc::clone(&self.basis), radius, coeffs, is_real };
        if is_real {
            f.symmetrize();
        }
        f
    }

    /// Applies a Fourier multiplier `m(α·k, |k|²)`.
    ///
    /// The multiplier must satisfy `m(−ξ, n) = conj(m(ξ, n))` whenever it is
    /// applied to a real field; every multiplier in this crate does.
    pub fn apply_multiplier(&self, m: impl Fn(Mode) -> Complex64) -> Self {
        let tables = self.basis.tables(self.radius);
        let coeffs = self
            .coeffs
            .iter()
            .zip(tables.freq.iter().zip(&tables.norm_sq))
            .map(|(c, (&freq, &norm_sq))| {
                if *c == Complex64::default() {
                    *c
                } else {
                    c * m(Mode { freq, norm_sq })
                }
            })
            .collect();
        Self { basis: Arc::clone(&self.basis), radius: self.radius, coeffs, is_real: self.is_real }
    }

    /// `u(x) = Σ û(k) e^{i(α·k)x}`.
    pub fn evaluate(&self, x: f64) -> Complex64 {
        let tables = self.basis.tables(self.radius);
        self.coeffs
            .iter()
            .zip(&tables.freq)
            .filter(|(c, _)| **c != Complex64::default())
            .map(|(c, f)| c * Complex64::from_polar(1.0, f * x))
            .sum()
    }

    /// Value of a real field at `x` together with the imaginary residual.
    pub fn evaluate_real(&self, x: f64) -> (f64, f64) {
        let v = self.evaluate(x);
        (v.re, v.im.abs())
    }

    /// Quasiperiodic Hilbert transform, multiplier `−i·sgn(α·k)`.
    pub fn hilbert(&self) -> Self {
        self.apply_multiplier(|m| Complex64::new(0.0, -sgn(m.freq)))
    }

    /// `∂x`, multiplier `i·α·k`.
    pub fn d_dx(&self) -> Self {
        self.apply_multiplier(|m| Complex64::new(0.0, m.freq))
    }

    /// `D^s`, multiplier `|k|^s` on the lattice norm. `D⁰` is the identity,
    /// mean included; for `s > 0` the mean is annihilated.
    pub fn frac_deriv(&self, s: f64) -> Result<Self> {
        if !(s >= 0.0) {
            return Err(FieldError::NegativeOrder(s));
        }
        if s == 0.0 {
            return Ok(self.clone());
        }
        Ok(self.apply_multiplier(|m| {
            Complex64::new(weight_from_norm_sq(m.norm_sq, s).expect("s > 0"), 0.0)
        }))
    }

    /// `χ_n`: keeps modes with `|α·k| < n`. `n = ∞` is the identity.
    pub fn chi_cutoff(&self, n: f64) -> Self {
        self.apply_multiplier(|m| indicator(m.freq.abs() < n))
    }

    /// Data regularizer: keeps modes with `|k| ≤ δ`.
    pub fn delta_regularize(&self, delta: f64) -> Self {
        self.apply_multiplier(|m| indicator((m.norm_sq as f64).sqrt() <= delta))
    }

    /// Copy on the cube of radius `radius`, zero-padded or truncated.
    pub fn project(&self, radius: usize) -> Self {
        if radius == self.radius {
            return self.clone();
        }
        let dim = self.dim();
        let mut coeffs = vec![Complex64::default(); box_len(dim, radius)];
        let (small, large, to_small) = if radius < self.radius {
            (radius, self.radius, true)
        } else {
            (self.radius, radius, false)
        };
        let off = large - small;
        let side_s = 2 * small + 1;
        let side_l = 2 * large + 1;
        for si in 0..box_len(dim, small) {
            let mut rem = si;
            let mut li = 0usize;
            let mut mult = 1usize;
            for _ in 0..dim {
                let c = rem % side_s;
                rem /= side_s;
                li += (c + off) * mult;
                mult *= side_l;
            }
            if to_small {
                coeffs[si] = self.coeffs[li];
            } else {
                coeffs[li] = self.coeffs[si];
            }
        }
        Self { basis: Arc::clone(&self.basis), radius, coeffs, is_real: self.is_real }
    }

    /// Restriction to the working box.
    pub fn to_working(&self) -> Self {
        self.project(self.basis.box_radius())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        self.same_basis(other)?;
        let radius = self.radius.max(other.radius);
        let a = self.project(radius);
        let b = other.project(radius);
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| f(*x, *y)).collect();
        Ok(Self {
            basis: Arc::clone(&self.basis),
            radius,
            coeffs,
            is_real: self.is_real && other.is_real,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn scale(&self, a: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|c| c * a).collect();
        Self { basis: Arc::clone(&self.basis), radius: self.radius, coeffs, is_real: self.is_real }
    }

    /// `self + a·other` on equal cubes, without symmetrization.
    pub(crate) fn axpy(&self, a: f64, other: &Self) -> Self {
        debug_assert_eq!(self.radius, other.radius);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + y * a).collect();
        Self { basis: Arc::clone(&self.basis), radius: self.radius, coeffs, is_real: self.is_real }
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    fn out_radius(&self, other: &Self, extent: ProductExtent) -> usize {
        match extent {
            ProductExtent::Working => self.basis.box_radius(),
            ProductExtent::Full => self.radius + other.radius,
            ProductExtent::Radius(r) => r,
        }
    }

    /// Pointwise product, exact on the requested cube (FFT route).
    pub fn multiply(&self, other: &Self, extent: ProductExtent) -> Result<Self> {
        self.same_basis(other)?;
        let r1 = self.support_radius().min(self.radius);
        let r2 = other.support_radius().min(other.radius);
        let out = self.out_radius(other, extent);
        let a = self.project(r1);
        let b = other.project(r2);
        if r1 == 0 || r2 == 0 {
            // a constant factor: the double sum is a plain scaling, exact
            let coeffs = convolve::direct(&a.coeffs, r1, &b.coeffs, r2, self.dim(), out);
            return Ok(self.with_coeffs(out, coeffs, self.is_real && other.is_real));
        }
        let side = convolve::exact_grid_side(r1, r2, out);
        let coeffs = convolve::fft(&a.coeffs, r1, &b.coeffs, r2, self.dim(), out, side);
        Ok(self.with_coeffs(out, coeffs, self.is_real && other.is_real))
    }

    /// Pointwise product by the direct double sum. The oracle for
    /// [`QpField::multiply`].
    pub fn multiply_direct(&self, other: &Self, extent: ProductExtent) -> Result<Self> {
        self.same_basis(other)?;
        let out = self.out_radius(other, extent);
        let coeffs =
            convolve::direct(&self.coeffs, self.radius, &other.coeffs, other.radius, self.dim(), out);
        Ok(self.with_coeffs(out, coeffs, self.is_real && other.is_real))
    }

    /// Pseudospectral product without padding: both factors are restricted to
    /// the working box and multiplied on a grid of side `2K + 1`, so
    /// high-frequency products wrap around. Only meant as a negative control.
    pub fn multiply_aliased(&self, other: &Self) -> Result<Self> {
        self.same_basis(other)?;
        let k = self.basis.box_radius();
        let a = self.project(k);
        let b = other.project(k);
        let coeffs = convolve::fft(&a.coeffs, k, &b.coeffs, k, self.dim(), k, 2 * k + 1);
        Ok(self.with_coeffs(k, coeffs, self.is_real && other.is_real))
    }

    /// `uⁿ`; `u⁰` is the constant one.
    pub fn power(&self, n: u32, extent: ProductExtent) -> Result<Self> {
        if n == 0 {
            return Ok(Self::constant(&self.basis, 1.0).project(match extent {
                ProductExtent::Working | ProductExtent::Full => self.basis.box_radius(),
                ProductExtent::Radius(r) => r,
            }));
        }
        let mut acc = self.clone();
        for _ in 1..n {
            acc = acc.multiply(self, ProductExtent::Full)?;
        }
        Ok(match extent {
            ProductExtent::Full => acc,
            ProductExtent::Working => acc.to_working(),
            ProductExtent::Radius(r) => acc.project(r),
        })
    }

    /// `‖u‖_{H^s} = (Σ ⟨k⟩^{2s} |û(k)|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let tables = self.basis.tables(self.radius);
        self.coeffs
            .iter()
            .zip(&tables.norm_sq)
            .filter(|(c, _)| **c != Complex64::default())
            .map(|(c, &n2)| {
                let w = if s == 0.0 { 1.0 } else { (1.0 + n2 as f64).powf(s) };
                w * c.norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖D^s u‖_{L²}`.
    pub fn frac_norm(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.l2_norm();
        }
        let tables = self.basis.tables(self.radius);
        self.coeffs
            .iter()
            .zip(&tables.norm_sq)
            .map(|(c, &n2)| weight_from_norm_sq(n2, 2.0 * s).unwrap_or(0.0) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `Σ |û(k)|`.
    pub fn l1_coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// Largest coefficient difference, comparing on the larger cube.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Summands `û(k) v̂(−k)` over the common cube.
    fn pairing_terms(&self, other: &Self) -> Result<Vec<Complex64>> {
        self.same_basis(other)?;
        let r = self.radius.min(other.radius);
        let a = self.project(r);
        let b = other.project(r);
        let len = a.coeffs.len();
        Ok((0..len).map(|i| a.coeffs[i] * b.coeffs[len - 1 - i]).collect())
    }

    /// `Σ_k û(k) v̂(−k)`.
    pub fn pair(&self, other: &Self) -> Result<PairingValue> {
        Ok(PairingValue(self.pairing_terms(other)?.into_iter().sum()))
    }

    /// `Σ_k |û(k) v̂(−k)|`, the natural scale of [`QpField::pair`].
    pub fn pair_abs(&self, other: &Self) -> Result<f64> {
        Ok(self.pairing_terms(other)?.into_iter().map(|c| c.norm()).sum())
    }

    /// `D^s(uv) − u·D^s v`, with both products exact on the full cube.
    pub fn leibniz_commutator(&self, other: &Self, s: f64) -> Result<Self> {
        if !(s > 1.0) {
            return Err(FieldError::InvalidParameter(format!(
                "commutator order must exceed 1, got {s}"
            )));
        }
        let uv = self.multiply(other, ProductExtent::Full)?.frac_deriv(s)?;
        let u_dv = self.multiply(&other.frac_deriv(s)?, ProductExtent::Full)?;
        uv.sub(&u_dv)
    }

    /// Text record: header lines, then one `re im` pair per lattice point in
    /// storage order. Floats use the shortest representation that parses
    /// back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.coeffs.len() * 48 + 128);
        out.push_str("qpfield 1\n");
        let _ = writeln!(out, "dim {}", self.dim());
        out.push_str("alpha");
        for a in self.basis.alpha() {
            let _ = write!(out, " {a:?}");
        }
        out.push('\n');
        let _ = writeln!(out, "box_radius {}", self.basis.box_radius());
        let _ = writeln!(out, "radius {}", self.radius);
        let _ = writeln!(out, "is_real {}", u8::from(self.is_real));
        let _ = writeln!(out, "coeffs {}", self.coeffs.len());
        for c in &self.coeffs {
            let _ = writeln!(out, "{:?} {:?}", c.re, c.im);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| FieldError::Parse(format!("missing `{key}`")))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some(k) if k == key => Ok(parts.map(str::to_owned).collect()),
                _ => Err(FieldError::Parse(format!("expected `{key}`, found `{line}`"))),
            }
        };
        let version = next("qpfield")?;
        if version != ["1"] {
            return Err(FieldError::Parse(format!("unsupported version {version:?}")));
        }
        let dim: usize = parse_one(&next("dim")?, "dim")?;
        let alpha = next("alpha")?
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| FieldError::Parse(format!("alpha: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if alpha.len() != dim {
            return Err(FieldError::Parse(format!("dim {dim} but {} frequencies", alpha.len())));
        }
        let box_radius: usize = parse_one(&next("box_radius")?, "box_radius")?;
        let radius: usize = parse_one(&next("radius")?, "radius")?;
        let is_real: u8 = parse_one(&next("is_real")?, "is_real")?;
        let count: usize = parse_one(&next("coeffs")?, "coeffs")?;
        let mut coeffs = Vec::with_capacity(count);
        for line in lines.by_ref().take(count) {
            let mut parts = line.split_whitespace();
            let mut num = || -> Result<f64> {
                parts
                    .next()
                    .ok_or_else(|| FieldError::Parse("short coefficient line".into()))?
                    .parse::<f64>()
                    .map_err(|e| FieldError::Parse(format!("coefficient: {e}")))
            };
            let re = num()?;
            let im = num()?;
            coeffs.push(Complex64::new(re, im));
        }
        if coeffs.len() != count {
            return Err(FieldError::WrongLength { want: count, got: coeffs.len() });
        }
        let basis = FrequencyBasis::new(alpha, box_radius)?;
        // Bypass symmetrization so the record round-trips bit for bit.
        let want = box_len(dim, radius);
        if coeffs.len() != want {
            return Err(FieldError::WrongLength { want, got: coeffs.len() });
        }
        if let Some(i) = coeffs.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        Ok(Self { basis, radius, coeffs, is_real: is_real != 0 })
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_one<T: std::str::FromStr>(parts: &[String], key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match parts {
        [one] => one.parse().map_err(|e| FieldError::Parse(format!("{key}: {e}"))),
        _ => Err(FieldError::Parse(format!("{key}: expected one value"))),
    }
}

/// `sgn` with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn indicator(keep: bool) -> Complex64 {
    Complex64::new(if keep { 1.0 } else { 0.0 }, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::{PI, SQRT_2};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn basis() -> Arc<FrequencyBasis> {
        FrequencyBasis::golden_pair(6)
    }

    fn cos1(b: &Arc<FrequencyBasis>) -> QpField {
        QpField::make_field(b, &[([1, 0].into(), c(0.5, 0.0))], true).unwrap()
    }

    fn sin1(b: &Arc<FrequencyBasis>) -> QpField {
        QpField::make_field(b, &[([1, 0].into(), c(0.0, -0.5))], true).unwrap()
    }

    fn two_cos(b: &Arc<FrequencyBasis>) -> QpField {
        QpField::make_field(b, &[([1, 0].into(), c(0.5, 0.0)), ([0, 1].into(), c(0.5, 0.0))], true)
            .unwrap()
    }

    fn close(a: &QpField, b: &QpField, tol: f64) -> bool {
        a.max_abs_diff(b).unwrap() <= tol
    }

    #[test]
    fn make_field_examples() {
        let b = basis();
        let u = two_cos(&b);
        for k in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            assert_eq!(u.coeff(&k.into()), c(0.5, 0.0));
        }
        assert_eq!(u.l1_coeff_norm(), 2.0);

        let z = QpField::make_field(&b, &[], true).unwrap();
        assert!(z.coeffs().iter().all(|v| *v == Complex64::default()));

        let m = QpField::make_field(&b, &[([1, 1].into(), c(0.0, 1.0))], true).unwrap();
        assert_eq!(m.coeff(&[1, 1].into()), c(0.0, 1.0));
        assert_eq!(m.coeff(&[-1, -1].into()), c(0.0, -1.0));

        assert!(matches!(
            QpField::make_field(&b, &[([7, 0].into(), c(1.0, 0.0))], true),
            Err(FieldError::OutsideBox { .. })
        ));
        assert!(matches!(
            QpField::make_field(&b, &[([1].into(), c(1.0, 0.0))], true),
            Err(FieldError::WrongDimension { .. })
        ));
    }

    #[test]
    fn evaluate_examples() {
        let b = basis();
        let (v, im) = two_cos(&b).evaluate_real(0.0);
        assert!((v - 2.0).abs() < 1e-15 && im < 1e-15);
        assert_eq!(QpField::zeros(&b).evaluate(1.234), Complex64::default());
        let (v, _) = cos1(&b).evaluate_real(PI / 3.0);
        assert!((v - 0.5).abs() < 1e-15);
        let x = 0.77;
        let (v, _) = two_cos(&b).evaluate_real(x);
        assert!((v - (x.cos() + (SQRT_2 * x).cos())).abs() < 1e-14);
    }

    #[test]
    fn hilbert_examples() {
        let b = basis();
        assert!(close(&cos1(&b).hilbert(), &sin1(&b), 0.0));
        assert!(close(&QpField::constant(&b, 3.0).hilbert(), &QpField::zeros(&b), 0.0));
        let u = QpField::constant(&b, 1.0).add(&cos1(&b)).unwrap();
        let hh = u.hilbert().hilbert();
        let expected = u.sub(&QpField::constant(&b, 1.0)).unwrap().scale(-1.0);
        assert!(close(&hh, &expected, 0.0));
    }

    #[test]
    fn derivative_examples() {
        let b = basis();
        assert!(close(&cos1(&b).d_dx(), &sin1(&b).scale(-1.0), 0.0));
        assert!(close(&QpField::constant(&b, 2.0).d_dx(), &QpField::zeros(&b), 0.0));
        let sin2 = QpField::make_field(&b, &[([0, 1].into(), c(0.0, -0.5))], true).unwrap();
        let cos2 = QpField::make_field(&b, &[([0, 1].into(), c(0.5, 0.0))], true).unwrap();
        assert!(close(&sin2.d_dx(), &cos2.scale(SQRT_2), 1e-16));
    }

    #[test]
    fn frac_deriv_examples() {
        let b = basis();
        let u = QpField::random(&b, 3, 4, 1.0, 1.0, true);
        assert_eq!(u.frac_deriv(0.0).unwrap(), u);
        let m = QpField::make_field(&b, &[([1, 1].into(), c(1.0, 0.0))], true).unwrap();
        assert_eq!(m.frac_deriv(1.0).unwrap().coeff(&[1, 1].into()).re, SQRT_2);
        let m = QpField::make_field(&b, &[([3, 4].into(), c(1.0, 0.0))], true).unwrap();
        // 5^2.5 = 25·√5 = 55.90169943749474...
        let v = m.frac_deriv(2.5).unwrap().coeff(&[3, 4].into()).re;
        assert!((v - 25.0 * 5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(u.frac_deriv(-0.5), Err(FieldError::NegativeOrder(_))));
        assert_eq!(u.frac_deriv(1.5).unwrap().mean(), Complex64::default());
    }

    #[test]
    fn chi_cutoff_examples() {
        let b = basis();
        let u = two_cos(&b);
        let cut = u.chi_cutoff(1.3);
        assert_eq!(cut.coeff(&[1, 0].into()), c(0.5, 0.0));
        assert_eq!(cut.coeff(&[-1, 0].into()), c(0.5, 0.0));
        assert_eq!(cut.coeff(&[0, 1].into()), Complex64::default());
        // strict inequality: |α·e₁| = 1 is dropped at n = 1
        assert_eq!(u.chi_cutoff(1.0).coeff(&[1, 0].into()), Complex64::default());
        let r = QpField::random(&b, 1, 6, 1.0, 1.0, true);
        assert_eq!(r.chi_cutoff(f64::INFINITY), r);
        let only_mean = r.chi_cutoff(b.min_nonzero_frequency());
        assert!(only_mean.coeffs().iter().enumerate().all(|(i, v)| {
            i == only_mean.coeffs().len() / 2 || *v == Complex64::default()
        }));
        assert_eq!(only_mean.mean(), r.mean());
    }

    #[test]
    fn delta_regularize_examples() {
        let b = basis();
        let r = QpField::random(&b, 9, 6, 0.0, 1.0, true);
        let d = r.delta_regularize(1.0);
        for k in [[1, 0], [-1, 0], [0, 1], [0, -1], [0, 0]] {
            assert_eq!(d.coeff(&k.into()), r.coeff(&k.into()));
        }
        for k in [[1, 1], [-1, 1], [1, -1], [-1, -1]] {
            assert_eq!(d.coeff(&k.into()), Complex64::default());
        }
        assert_eq!(r.delta_regularize(6.0 * SQRT_2 + 1e-9), r);

        // ‖u_δ − u‖² equals the tail sum Σ_{|k|>δ} |û|², by direct enumeration.
        let u = QpField::make_field(
            &b,
            &[
                ([1, 0].into(), c(0.3, 0.1)),
                ([2, 2].into(), c(-0.2, 0.4)),
                ([0, 4].into(), c(0.05, 0.0)),
            ],
            true,
        )
        .unwrap();
        let delta = 2.5;
        let tail: f64 = [(c(0.3, 0.1), 1.0), (c(-0.2, 0.4), 8f64.sqrt()), (c(0.05, 0.0), 4.0)]
            .iter()
            .filter(|(_, n)| *n > delta)
            .map(|(v, _)| 2.0 * v.norm_sqr())
            .sum();
        let got = u.delta_regularize(delta).sub(&u).unwrap().l2_norm().powi(2);
        assert!((got - tail).abs() < 1e-16, "{got} vs {tail}");
    }

    #[test]
    fn multiply_examples() {
        let b = basis();
        let sq = cos1(&b).multiply(&cos1(&b), ProductExtent::Working).unwrap();
        assert!((sq.mean() - c(0.5, 0.0)).norm() < 1e-16);
        assert!((sq.coeff(&[2, 0].into()) - c(0.25, 0.0)).norm() < 1e-16);
        assert!((sq.coeff(&[-2, 0].into()) - c(0.25, 0.0)).norm() < 1e-16);
        assert!((sq.l1_coeff_norm() - 1.0).abs() < 1e-13);

        let e1 = QpField::make_field(&b, &[([2, -1].into(), c(1.0, 0.0))], false).unwrap();
        let e2 = QpField::make_field(&b, &[([1, 3].into(), c(0.0, 2.0))], false).unwrap();
        let p = e1.multiply(&e2, ProductExtent::Working).unwrap();
        assert!((p.coeff(&[3, 2].into()) - c(0.0, 2.0)).norm() < 1e-15);
        assert!((p.l1_coeff_norm() - 2.0).abs() < 1e-13);

        let other = QpField::zeros(&FrequencyBasis::golden_pair(5));
        assert!(matches!(e1.multiply(&other, ProductExtent::Working), Err(FieldError::BasisMismatch)));
    }

    #[test]
    fn sparse_product_matches_double_sum() {
        let b = basis();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sparse = |count: usize| {
            let modes: Vec<_> = (0..count)
                .map(|_| {
                    let k: LatticePoint = [rng.gen_range(-6..=6), rng.gen_range(-6..=6)].into();
                    (k, c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                })
                .collect();
            QpField::make_field(&b, &modes, false).unwrap()
        };
        let u = sparse(5);
        let v = sparse(7);
        // hand-rolled oracle: explicit double loop over listed modes
        let mut oracle = std::collections::BTreeMap::<Vec<i64>, Complex64>::new();
        for (i, a) in u.coeffs().iter().enumerate() {
            for (j, bv) in v.coeffs().iter().enumerate() {
                if *a == Complex64::default() || *bv == Complex64::default() {
                    continue;
                }
                let k = lattice::point_at(2, 6, i).add(&lattice::point_at(2, 6, j));
                *oracle.entry(k.0).or_default() += a * bv;
            }
        }
        let p = u.multiply(&v, ProductExtent::Full).unwrap();
        assert_eq!(p.radius(), 12);
        let mut worst: f64 = 0.0;
        for (i, got) in p.coeffs().iter().enumerate() {
            let k = lattice::point_at(2, 12, i);
            let want = oracle.get(&k.0).copied().unwrap_or_default();
            worst = worst.max((got - want).norm());
        }
        assert!(worst <= 1e-13, "{worst}");
    }

    #[test]
    fn norm_examples() {
        let b = basis();
        let u = two_cos(&b);
        assert!((u.sobolev_norm(0.0) - 1.0).abs() < 1e-15);
        assert!((u.sobolev_norm(1.0) - SQRT_2).abs() < 1e-15);
        assert_eq!(QpField::zeros(&b).sobolev_norm(2.5), 0.0);
        assert_eq!(QpField::zeros(&b).l1_coeff_norm(), 0.0);
    }

    #[test]
    fn pair_examples() {
        let b = basis();
        assert!((cos1(&b).pair(&cos1(&b)).unwrap().value() - c(0.5, 0.0)).norm() < 1e-16);
        assert!(cos1(&b).pair(&sin1(&b)).unwrap().norm() < 1e-16);
        let u = QpField::random(&b, 2, 6, 1.0, 1.0, true);
        let one = QpField::constant(&b, 1.0);
        assert_eq!(u.pair(&one).unwrap().value(), u.mean());
    }

    #[test]
    fn commutator_examples() {
        let b = basis();
        let s = 2.5;
        let cst = QpField::constant(&b, 1.7);
        let v = QpField::random(&b, 4, 3, 1.0, 1.0, true);
        // c·D^s v vs D^s(c·v): equal off the mean; the mean of D^s(cv) is 0
        // and the mean of c·D^s v is 0 too, so the commutator vanishes.
        let comm = cst.leibniz_commutator(&v, s).unwrap();
        assert!(comm.max_abs() < 1e-13);

        let k1: LatticePoint = [2, -1].into();
        let k2: LatticePoint = [1, 2].into();
        let u = QpField::make_field(&b, &[(k1.clone(), c(0.3, 0.2))], false).unwrap();
        let w = QpField::make_field(&b, &[(k2.clone(), c(-0.5, 0.1))], false).unwrap();
        let comm = u.leibniz_commutator(&w, s).unwrap();
        let k = k1.add(&k2);
        let want = c(0.3, 0.2) * c(-0.5, 0.1) * (k.norm().powf(s) - k2.norm().powf(s));
        assert!((comm.coeff(&k) - want).norm() < 1e-13);
        assert!(comm.l1_coeff_norm() - want.norm() < 1e-12);

        assert!(u.leibniz_commutator(&w, 1.0).is_err());
    }

    #[test]
    fn multipliers_preserve_hermitian_symmetry() {
        let b = basis();
        let u = QpField::random(&b, 11, 6, 1.0, 1.0, true);
        for f in [
            u.hilbert(),
            u.d_dx(),
            u.frac_deriv(1.7).unwrap(),
            u.chi_cutoff(4.0),
            u.delta_regularize(3.0),
            u.multiply(&u, ProductExtent::Working).unwrap(),
            u.multiply(&u.hilbert(), ProductExtent::Full).unwrap(),
        ] {
            assert!(f.is_real());
            assert!(f.hermitian_defect() <= HERMITIAN_TOLERANCE);
            assert_eq!(f.mean().im, 0.0);
        }
    }

    #[test]
    fn text_record_round_trip() {
        let b = basis();
        let u = QpField::random(&b, 21, 6, 2.0, 1.0, true).multiply(
            &QpField::random(&b, 22, 6, 2.0, 1.0, true),
            ProductExtent::Full,
        );
        let u = u.unwrap();
        let back = QpField::from_text(&u.to_text()).unwrap();
        assert_eq!(back.radius(), 12);
        for (x, y) in u.coeffs().iter().zip(back.coeffs()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
        assert_eq!(back, u);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.qpf");
        u.write_to(&path).unwrap();
        assert_eq!(QpField::read_from(&path).unwrap(), u);

        assert!(QpField::from_text("qpfield 2\n").is_err());
        let truncated: String = u.to_text().lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(QpField::from_text(&truncated).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cutoffs_commute_and_are_idempotent(seed in 0u64..1000, n in 0.5f64..12.0, delta in 0.5f64..9.0, s in 0.0f64..3.0) {
            let b = basis();
            let u = QpField::random(&b, seed, 6, 1.0, 1.0, true);
            prop_assert_eq!(u.chi_cutoff(n).chi_cutoff(n), u.chi_cutoff(n));
            prop_assert_eq!(u.delta_regularize(delta).delta_regularize(delta), u.delta_regularize(delta));
            prop_assert_eq!(u.chi_cutoff(n).hilbert(), u.hilbert().chi_cutoff(n));
            prop_assert_eq!(u.chi_cutoff(n).frac_deriv(s).unwrap(), u.frac_deriv(s).unwrap().chi_cutoff(n));
        }

        #[test]
        fn parseval(seed in 0u64..1000) {
            let b = basis();
            let u = QpField::random(&b, seed, 6, 0.5, 1.0, true);
            // conj-reflection of a real field is the field itself
            let p = u.pair(&u).unwrap();
            let n2 = u.sobolev_norm(0.0).powi(2);
            prop_assert!((p.re() - n2).abs() <= 1e-12 * n2);
            prop_assert!(p.value().im.abs() <= 1e-12 * n2);
        }

        #[test]
        fn interpolation_is_exact(seed in 0u64..1000, p in 0.0f64..3.0, extra in 0.01f64..3.0) {
            let b = basis();
            let u = QpField::random(&b, seed, 6, 0.0, 1.0, true);
            let l = p + extra;
            let lhs = u.sobolev_norm(p);
            let rhs = u.sobolev_norm(l).powf(p / l) * u.sobolev_norm(0.0).powf(1.0 - p / l);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }
}
