//! Frequency bases and the symmetric lattice box.
//!
//! A quasiperiodic function on the line is indexed by the integer lattice
//! `Z^N`; the point `k` carries the physical frequency `α·k`. Two different
//! magnitudes matter downstream: the Euclidean lattice norm `|k|` (Sobolev
//! weights, data regularization, `D^s`) and the physical frequency `|α·k|`
//! (Hilbert transform, `χ_n`, `∂x`).
//!
//! Storage is dense over the cube `{k : |k_i| ≤ R}` in row-major order, the
//! last coordinate varying fastest. Because the cube is symmetric, the index
//! of `-k` is `len - 1 - index(k)`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this magnitude a nonzero `α·k` is treated as a resonance.
pub const RESONANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("frequency basis needs at least one frequency")]
    EmptyBasis,
    #[error("alpha[{index}] = {value} must be finite and nonzero")]
    BadFrequency { index: usize, value: f64 },
    #[error("box radius must be at least 1")]
    ZeroRadius,
    #[error("basis is resonant on the box: |alpha . {point}| = {value:e} < {RESONANCE_TOLERANCE:e}")]
    Resonant { point: LatticePoint, value: f64 },
    #[error("negative exponent {s} is undefined at k = 0")]
    NegativePowerAtOrigin { s: f64 },
}

/// A point of `Z^N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Self(coords.into())
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    /// Unit vector `e_axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0; dim];
        c[axis] = 1;
        Self(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|c| c * c).sum()
    }

    /// Euclidean norm `|k|`.
    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// Sup norm, i.e. the smallest box radius containing the point.
    pub fn sup_norm(&self) -> u64 {
        self.0.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scaled(&self, factor: i64) -> Self {
        Self(self.0.iter().map(|c| c * factor).collect())
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<i64>> for LatticePoint {
    fn from(v: Vec<i64>) -> Self {
        Self(v)
    }
}

impl<const D: usize> From<[i64; D]> for LatticePoint {
    fn from(v: [i64; D]) -> Self {
        Self(v.to_vec())
    }
}

/// Per-point lookup tables for one box radius.
#[derive(Debug)]
pub struct BoxTables {
    /// `α·k` in storage order.
    pub freq: Vec<f64>,
    /// `|k|²` in storage order.
    pub norm_sq: Vec<i64>,
}

/// Rationally independent base frequencies plus the working box radius `K`.
pub struct FrequencyBasis {
    alpha: Vec<f64>,
    box_radius: usize,
    tables: RwLock<HashMap<usize, Arc<BoxTables>>>,
}

impl fmt::Debug for FrequencyBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrequencyBasis")
            .field("alpha", &self.alpha)
            .field("box_radius", &self.box_radius)
            .finish()
    }
}

impl PartialEq for FrequencyBasis {
    fn eq(&self, other: &Self) -> bool {
        self.box_radius == other.box_radius
            && self.alpha.len() == other.alpha.len()
            && self
                .alpha
                .iter()
                .zip(&other.alpha)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FrequencyBasis {
    /// Builds a basis and certifies nonresonance on the box.
    pub fn new(alpha: Vec<f64>, box_radius: usize) -> Result<Arc<Self>, LatticeError> {
        if alpha.is_empty() {
            return Err(LatticeError::EmptyBasis);
        }
        for (index, &value) in alpha.iter().enumerate() {
            if !value.is_finite() || value == 0.0 {
                return Err(LatticeError::BadFrequency { index, value });
            }
        }
        if box_radius == 0 {
            return Err(LatticeError::ZeroRadius);
        }
        let basis = Self {
            alpha,
            box_radius,
            tables: RwLock::new(HashMap::new()),
        };
        let tables = basis.tables(box_radius);
        let dim = basis.dim();
        for (idx, &f) in tables.freq.iter().enumerate() {
            if tables.norm_sq[idx] != 0 && f.abs() < RESONANCE_TOLERANCE {
                return Err(LatticeError::Resonant {
                    point: point_at(dim, box_radius, idx),
                    value: f.abs(),
                });
            }
        }
        Ok(Arc::new(basis))
    }

    /// The standard two-frequency basis `α = (1, √2)`.
    pub fn golden_pair(box_radius: usize) -> Arc<Self> {
        Self::new(vec![1.0, std::f64::consts::SQRT_2], box_radius)
            .expect("(1, sqrt 2) is nonresonant on every box")
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn box_radius(&self) -> usize {
        self.box_radius
    }

    /// `|α|`, the constant relating `|α·k| ≤ |α||k|`.
    pub fn alpha_norm(&self) -> f64 {
        self.alpha.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// `α·k`, summed in coordinate order.
    pub fn physical_frequency(&self, k: &LatticePoint) -> f64 {
        dot(&self.alpha, k.coords())
    }

    /// Lookup tables for a box of the given radius, cached per radius.
    pub fn tables(&self, radius: usize) -> Arc<BoxTables> {
        if let Some(t) = self.tables.read().expect("tables lock").get(&radius) {
            return Arc::clone(t);
        }
        let dim = self.dim();
        let len = box_len(dim, radius);
        let mut freq = Vec::with_capacity(len);
        let mut norm_sq = Vec::with_capacity(len);
        let mut coords = vec![-(radius as i64); dim];
        for _ in 0..len {
            freq.push(dot(&self.alpha, &coords));
            norm_sq.push(coords.iter().map(|c| c * c).sum());
            advance(&mut coords, radius as i64);
        }
        // α·(−k) = −(α·k) bitwise.
        for idx in 0..len / 2 {
            freq[len - 1 - idx] = -freq[idx];
        }
        let t = Arc::new(BoxTables { freq, norm_sq });
        self.tables
            .write()
            .expect("tables lock")
            .entry(radius)
            .or_insert(t)
            .clone()
    }

    /// Smallest nonzero `|α·k|` over the working box.
    pub fn min_nonzero_frequency(&self) -> f64 {
        self.tables(self.box_radius)
            .freq
            .iter()
            .map(|f| f.abs())
            .filter(|&f| f > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `|α·k|` over the working box.
    pub fn max_frequency(&self) -> f64 {
        self.tables(self.box_radius)
            .freq
            .iter()
            .fold(0.0, |m: f64, f| m.max(f.abs()))
    }

    pub fn contains(&self, k: &LatticePoint) -> bool {
        k.dim() == self.dim() && k.sup_norm() <= self.box_radius as u64
    }
}

fn dot(alpha: &[f64], k: &[i64]) -> f64 {
    let mut acc = 0.0;
    for (a, &c) in alpha.iter().zip(k) {
        acc += a * c as f64;
    }
    acc
}

fn advance(coords: &mut [i64], radius: i64) {
    for c in coords.iter_mut().rev() {
        if *c < radius {
            *c += 1;
            return;
        }
        *c = -radius;
    }
}

/// Number of points in the cube of radius `radius` in `dim` dimensions.
pub fn box_len(dim: usize, radius: usize) -> usize {
    (2 * radius + 1).pow(dim as u32)
}

/// Storage index of `k` in the cube of radius `radius`, if it lies inside.
pub fn index_of(radius: usize, k: &[i64]) -> Option<usize> {
    let side = 2 * radius as i64 + 1;
    let mut idx = 0i64;
    for &c in k {
        if c.unsigned_abs() > radius as u64 {
            return None;
        }
        idx = idx * side + (c + radius as i64);
    }
    Some(idx as usize)
}

/// Lattice point stored at `idx` in the cube of radius `radius`.
pub fn point_at(dim: usize, radius: usize, mut idx: usize) -> LatticePoint {
    let side = 2 * radius + 1;
    let mut coords = vec![0i64; dim];
    for c in coords.iter_mut().rev() {
        *c = (idx % side) as i64 - radius as i64;
        idx /= side;
    }
    LatticePoint(coords)
}

/// `α·k` for a point of the basis' box.
pub fn physical_frequency(basis: &FrequencyBasis, k: &LatticePoint) -> f64 {
    basis.physical_frequency(k)
}

/// `|k|^s`, with the value at `k = 0` taken as 0 for every `s ≥ 0`.
pub fn euclid_weight(k: &LatticePoint, s: f64) -> Result<f64, LatticeError> {
    weight_from_norm_sq(k.norm_sq(), s)
}

pub(crate) fn weight_from_norm_sq(norm_sq: i64, s: f64) -> Result<f64, LatticeError> {
    if norm_sq == 0 {
        if s < 0.0 {
            return Err(LatticeError::NegativePowerAtOrigin { s });
        }
        return Ok(0.0);
    }
    Ok((norm_sq as f64).powf(0.5 * s))
}

/// `⟨k⟩^{2s} = (1 + |k|²)^s`.
pub fn japanese_bracket(k: &LatticePoint, s: f64) -> f64 {
    (1.0 + k.norm_sq() as f64).powf(s)
}

/// All points of the working box in storage order.
pub fn enumerate_box(basis: &FrequencyBasis) -> Vec<LatticePoint> {
    enumerate_radius(basis.dim(), basis.box_radius())
}

pub fn enumerate_radius(dim: usize, radius: usize) -> Vec<LatticePoint> {
    let len = box_len(dim, radius);
    let mut out = Vec::with_capacity(len);
    let mut coords = vec![-(radius as i64); dim];
    for _ in 0..len {
        out.push(LatticePoint(coords.clone()));
        advance(&mut coords, radius as i64);
    }
    out
}
