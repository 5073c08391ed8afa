//! Free-space convolution with the Newtonian kernel `1/|x|` (the Riesz
//! kernel `|x|^{-(n-2)}` in n = 3), giving the nonlocal potential
//! `v(u) = (1/|x|) * |u|^p` and the double-integral energy `P(u)`.
//!
//! The fast path evaluates the discrete sum
//!
//! ```text
//! v_i = h³ ( Σ_{j≠i} src_j / |x_i - x_j|  +  src_i · S/h )
//! ```
//!
//! by zero-padded FFT on the doubled `(2m)³` lattice, which is aperiodic
//! convolution without wrap-around since all supports live in the cube.
//! The diagonal weight is the exact cell average of the kernel,
//! `S/h` with `S = ∫_{[-1/2,1/2]³} dz/|z|`, which keeps the quadrature
//! second-order consistent and positive. A direct `O(N²)` summation path
//! serves as the oracle for the transform path.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{inner, GridSpec, ScalarField};

/// Maximum `m` accepted by [`convolve_direct`] (the O(N²) oracle).
pub const DIRECT_GUARD_M: usize = 16;

// Gauss-Legendre nodes/weights on [-1, 1].
const GL4_X: [f64; 4] = [
    -0.8611363115940526,
    -0.3399810435848563,
    0.3399810435848563,
    0.8611363115940526,
];
const GL4_W: [f64; 4] = [
    0.3478548451374538,
    0.6521451548625461,
    0.6521451548625461,
    0.3478548451374538,
];
const GL6_X: [f64; 6] = [
    -0.9324695142031521,
    -0.6612093864662645,
    -0.2386191860831969,
    0.2386191860831969,
    0.6612093864662645,
    0.9324695142031521,
];
const GL6_W: [f64; 6] = [
    0.1713244923791704,
    0.3607615730481386,
    0.4679139345726910,
    0.4679139345726910,
    0.3607615730481386,
    0.1713244923791704,
];

fn gl_box(f: &impl Fn(f64, f64, f64) -> f64, lo: [f64; 3], hi: [f64; 3], xs: &[f64], ws: &[f64]) -> f64 {
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    let half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1]), 0.5 * (hi[2] - lo[2])];
    let mut acc = 0.0;
    for (ix, &gx) in xs.iter().enumerate() {
        let x = mid[0] + half[0] * gx;
        for (iy, &gy) in xs.iter().enumerate() {
            let y = mid[1] + half[1] * gy;
            for (iz, &gz) in xs.iter().enumerate() {
                let z = mid[2] + half[2] * gz;
                acc += ws[ix] * ws[iy] * ws[iz] * f(x, y, z);
            }
        }
    }
    acc * half[0] * half[1] * half[2]
}

/// Adaptive Gauss-Legendre quadrature over a box where `f` is smooth:
/// compare orders 4 and 6, split into octants while they disagree.
fn adaptive_box(f: &impl Fn(f64, f64, f64) -> f64, lo: [f64; 3], hi: [f64; 3], tol: f64, depth: usize) -> f64 {
    let coarse = gl_box(f, lo, hi, &GL4_X, &GL4_W);
    let fine = gl_box(f, lo, hi, &GL6_X, &GL6_W);
    if (coarse - fine).abs() <= tol || depth == 0 {
        return fine;
    }
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    let mut acc = 0.0;
    for oct in 0..8 {
        let mut clo = [0.0; 3];
        let mut chi = [0.0; 3];
        for ax in 0..3 {
            if oct >> ax & 1 == 0 {
                clo[ax] = lo[ax];
                chi[ax] = mid[ax];
            } else {
                clo[ax] = mid[ax];
                chi[ax] = hi[ax];
            }
        }
        acc += adaptive_box(f, clo, chi, tol / 8.0, depth - 1);
    }
    acc
}

/// `∫_{[0,b]³} dz/|z|` by adaptive quadrature. The corner singularity is
/// removed exactly: with `T(b)` the integral and `Q(b)` its restriction to
/// the shell `[0,b]³ \ [0,b/2]³`, homogeneity of `1/|z|` gives
/// `T(b/2) = T(b)/4`, hence `T(b) = (4/3) Q(b)`, and the shell is smooth.
pub(crate) fn corner_cube_integral(b: f64, tol: f64) -> f64 {
    let f = |x: f64, y: f64, z: f64| 1.0 / (x * x + y * y + z * z).sqrt();
    let half = b / 2.0;
    let mut shell = 0.0;
    for oct in 1..8usize {
        let lo = [
            if oct & 1 == 0 { 0.0 } else { half },
            if oct >> 1 & 1 == 0 { 0.0 } else { half },
            if oct >> 2 & 1 == 0 { 0.0 } else { half },
        ];
        let hi = [lo[0] + half, lo[1] + half, lo[2] + half];
        shell += adaptive_box(&f, lo, hi, tol / 7.0, 24);
    }
    4.0 / 3.0 * shell
}

/// The kernel's exact cell average scale: `S = ∫_{[-1/2,1/2]³} dz/|z|`,
/// computed once by adaptive quadrature (8 significant digits or better)
/// and cached. The diagonal convolution weight is `S/h`.
pub fn self_constant() -> f64 {
    static S: OnceLock<f64> = OnceLock::new();
    *S.get_or_init(|| 8.0 * corner_cube_integral(0.5, 1e-11))
}

/// Precomputed kernel data for one grid: real-space weights on the doubled
/// lattice, their transform, and the FFT plans. Immutable after
/// construction and shareable across workers.
pub struct KernelTable {
    grid: GridSpec,
    /// Kernel samples `K(r)` on the doubled lattice, cyclic layout,
    /// `K(0) = S/h`, `K(r) = 1/(h|r|)` otherwise.
    weights: Vec<f64>,
    /// Forward transform of `weights`.
    weights_hat: Vec<Complex<f64>>,
    self_weight: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl KernelTable {
    pub fn new(grid: GridSpec) -> Self {
        let m = grid.m();
        let l = 2 * m;
        let h = grid.h();
        let self_weight = self_constant() / h;
        let mut weights = vec![0.0; l * l * l];
        for rz in 0..l {
            let sz = signed_offset(rz, l);
            for ry in 0..l {
                let sy = signed_offset(ry, l);
                for rx in 0..l {
                    let sx = signed_offset(rx, l);
                    let d2 = (sx * sx + sy * sy + sz * sz) as f64;
                    weights[rx + l * (ry + l * rz)] = if d2 == 0.0 {
                        self_weight
                    } else {
                        1.0 / (h * d2.sqrt())
                    };
                }
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(l);
        let inv = planner.plan_fft_inverse(l);
        let mut weights_hat: Vec<Complex<f64>> =
            weights.iter().map(|&w| Complex::new(w, 0.0)).collect();
        fft3(&mut weights_hat, l, &fwd);
        KernelTable {
            grid,
            weights,
            weights_hat,
            self_weight,
            fwd,
            inv,
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Diagonal weight `S/h`.
    pub fn self_weight(&self) -> f64 {
        self.self_weight
    }

    /// Real-space kernel sample at cyclic offset `(rx, ry, rz)` on the
    /// doubled lattice.
    pub fn weight(&self, rx: usize, ry: usize, rz: usize) -> f64 {
        let l = 2 * self.grid.m();
        self.weights[rx + l * (ry + l * rz)]
    }
}

#[inline]
fn signed_offset(r: usize, l: usize) -> i64 {
    if r <= l / 2 {
        r as i64
    } else {
        r as i64 - l as i64
    }
}

/// In-place 3-D FFT on an `l³` cube, one axis at a time. `rustfft` plans
/// process all contiguous x-pencils in a single call; the other axes go
/// through a gather/scatter pencil buffer.
fn fft3(buf: &mut [Complex<f64>], l: usize, plan: &Arc<dyn Fft<f64>>) {
    plan.process(buf);
    let mut pencil = vec![Complex::new(0.0, 0.0); l];
    for z in 0..l {
        for x in 0..l {
            let base = x + l * l * z;
            for y in 0..l {
                pencil[y] = buf[base + l * y];
            }
            plan.process(&mut pencil);
            for y in 0..l {
                buf[base + l * y] = pencil[y];
            }
        }
    }
    for y in 0..l {
        for x in 0..l {
            let base = x + l * y;
            for z in 0..l {
                pencil[z] = buf[base + l * l * z];
            }
            plan.process(&mut pencil);
            for z in 0..l {
                buf[base + l * l * z] = pencil[z];
            }
        }
    }
}

/// Fast transform-path convolution: `v_i = h³ Σ_j K(i-j) src_j` on the
/// zero-padded doubled lattice. Panics on grid mismatch with the table.
pub fn convolve(src: &ScalarField, table: &KernelTable) -> ScalarField {
    assert_eq!(src.grid(), table.grid(), "grid mismatch with kernel table");
    let grid = src.grid();
    let m = grid.m();
    let l = 2 * m;
    let h3 = grid.h().powi(3);
    let mut buf = vec![Complex::new(0.0, 0.0); l * l * l];
    for iz in 0..m {
        for iy in 0..m {
            for ix in 0..m {
                buf[ix + l * (iy + l * iz)].re = src.values()[grid.idx(ix, iy, iz)];
            }
        }
    }
    fft3(&mut buf, l, &table.fwd);
    for (b, k) in buf.iter_mut().zip(&table.weights_hat) {
        *b *= k;
    }
    fft3(&mut buf, l, &table.inv);
    let norm = h3 / (l * l * l) as f64;
    let mut out = vec![0.0; grid.len()];
    for iz in 0..m {
        for iy in 0..m {
            for ix in 0..m {
                out[grid.idx(ix, iy, iz)] = buf[ix + l * (iy + l * iz)].re * norm;
            }
        }
    }
    ScalarField::from_values(grid, out)
}

/// Exact discrete double sum, the O(N²) reference for [`convolve`].
/// Guarded to `m <= 16`.
pub fn convolve_direct(src: &ScalarField, table: &KernelTable) -> Result<ScalarField> {
    assert_eq!(src.grid(), table.grid(), "grid mismatch with kernel table");
    let grid = src.grid();
    let m = grid.m();
    if m > DIRECT_GUARD_M {
        return Err(Error::InvalidParam(format!(
            "convolve_direct guard: m = {m} exceeds {DIRECT_GUARD_M}"
        )));
    }
    let l = 2 * m;
    let h3 = grid.h().powi(3);
    let v = src.values();
    let mut out = vec![0.0; grid.len()];
    for iz in 0..m {
        for iy in 0..m {
            for ix in 0..m {
                let mut acc = 0.0;
                for jz in 0..m {
                    let rz = (iz + l - jz) % l;
                    for jy in 0..m {
                        let ry = (iy + l - jy) % l;
                        for jx in 0..m {
                            let rx = (ix + l - jx) % l;
                            acc += table.weight(rx, ry, rz) * v[grid.idx(jx, jy, jz)];
                        }
                    }
                }
                out[grid.idx(ix, iy, iz)] = h3 * acc;
            }
        }
    }
    Ok(ScalarField::from_values(grid, out))
}

/// `|u|^p` evaluated node-wise.
pub fn abs_pow(u: &ScalarField, p: f64) -> ScalarField {
    u.map(|v| v.abs().powf(p))
}

/// Double-integral potential energy
/// `P(u) = ∫ v(u) |u|^p = ∫∫ |u(y)|^p |u(x)|^p / |x-y|`.
/// Nonnegative, zero iff `u = 0`. Requires `p > 1` upstream (ModelParams).
pub fn potential_energy(u: &ScalarField, p: f64, table: &KernelTable) -> f64 {
    let up = abs_pow(u, p);
    let v = convolve(&up, table);
    inner(&v, &up)
}
