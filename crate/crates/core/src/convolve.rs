//! Lattice convolution of dense coefficient cubes.
//!
//! Two routes compute the same thing. [`direct`] is the plain double sum over
//! nonzero coefficients and serves as the oracle. [`fft`] embeds both cubes in
//! a periodic grid of side `M ≥ r₁ + r₂ + r_out + 1` so no wrapped product can
//! land inside the output cube, transforms, multiplies pointwise and
//! transforms back.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::lattice::box_len;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Smallest 2·3·5·7-smooth integer `≥ n`.
pub fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Grid side that keeps the convolution exact on the output cube.
pub fn exact_grid_side(r1: usize, r2: usize, r_out: usize) -> usize {
    smooth_size(r1 + r2 + r_out + 1)
}

/// In-place N-d DFT on a cube of side `side`.
fn fftn(data: &mut [Complex64], dim: usize, side: usize, direction: FftDirection) {
    let fft = plan(side, direction);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // Last axis: contiguous rows.
    fft.process_with_scratch(data, &mut scratch);
    if dim == 1 {
        return;
    }
    let total = data.len();
    let mut line = vec![Complex64::default(); side];
    for axis in (0..dim - 1).rev() {
        let stride = side.pow((dim - 1 - axis) as u32);
        let block = stride * side;
        for base in (0..total).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    data[start + j * stride] = *v;
                }
            }
        }
    }
}

fn embed(coeffs: &[Complex64], dim: usize, radius: usize, side: usize) -> Vec<Complex64> {
    let mut grid = vec![Complex64::default(); side.pow(dim as u32)];
    let src_side = 2 * radius + 1;
    let mut coords = vec![0usize; dim];
    for &c in coeffs {
        if c != Complex64::default() {
            let mut g = 0usize;
            for &x in &coords {
                // lattice coordinate x - radius, wrapped mod side
                let k = x as i64 - radius as i64;
                g = g * side + k.rem_euclid(side as i64) as usize;
            }
            grid[g] = c;
        }
        for x in coords.iter_mut().rev() {
            *x += 1;
            if *x < src_side {
                break;
            }
            *x = 0;
        }
    }
    grid
}

fn extract(grid: &[Complex64], dim: usize, side: usize, radius: usize) -> Vec<Complex64> {
    let out_side = 2 * radius + 1;
    let len = box_len(dim, radius);
    let scale = 1.0 / (side.pow(dim as u32) as f64);
    let mut out = Vec::with_capacity(len);
    let mut coords = vec![0usize; dim];
    for _ in 0..len {
        let mut g = 0usize;
        for &x in &coords {
            let k = x as i64 - radius as i64;
            g = g * side + k.rem_euclid(side as i64) as usize;
        }
        out.push(grid[g] * scale);
        for x in coords.iter_mut().rev() {
            *x += 1;
            if *x < out_side {
                break;
            }
            *x = 0;
        }
    }
    out
}

/// Cyclic convolution on a grid of side `side`, read back on the cube of
/// radius `r_out`. Exact when `side ≥ r1 + r2 + r_out + 1`; otherwise wrapped
/// products alias into the output.
pub fn fft(
    a: &[Complex64],
    r1: usize,
    b: &[Complex64],
    r2: usize,
    dim: usize,
    r_out: usize,
    side: usize,
) -> Vec<Complex64> {
    let mut ga = embed(a, dim, r1, side);
    let mut gb = embed(b, dim, r2, side);
    fftn(&mut ga, dim, side, FftDirection::Inverse);
    fftn(&mut gb, dim, side, FftDirection::Inverse);
    for (x, y) in ga.iter_mut().zip(&gb) {
        *x *= *y;
    }
    fftn(&mut ga, dim, side, FftDirection::Forward);
    extract(&ga, dim, side, r_out)
}

/// Direct double sum over nonzero coefficients, restricted to the cube of
/// radius `r_out`.
pub fn direct(
    a: &[Complex64],
    r1: usize,
    b: &[Complex64],
    r2: usize,
    dim: usize,
    r_out: usize,
) -> Vec<Complex64> {
    let nz = |c: &[Complex64], r: usize| -> Vec<(Vec<i64>, Complex64)> {
        c.iter()
            .enumerate()
            .filter(|(_, v)| **v != Complex64::default())
            .map(|(i, v)| (crate::lattice::point_at(dim, r, i).0, *v))
            .collect()
    };
    let na = nz(a, r1);
    let nb = nz(b, r2);
    let mut out = vec![Complex64::default(); box_len(dim, r_out)];
    let mut sum = vec![0i64; dim];
    for (ka, va) in &na {
        for (kb, vb) in &nb {
            for ((s, x), y) in sum.iter_mut().zip(ka).zip(kb) {
                *s = x + y;
            }
            if let Some(idx) = crate::lattice::index_of(r_out, &sum) {
                out[idx] += va * vb;
            }
        }
    }
    out
}
