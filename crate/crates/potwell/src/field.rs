//! Uniform Cartesian discretization of the unit cube with homogeneous
//! Dirichlet boundary, plus the discrete operators the rest of the lab is
//! built on.
//!
//! The grid holds the `m³` interior nodes of `(0,1)³` at spacing
//! `h = 1/(m+1)`; boundary values are identically zero and never stored.
//! `‖∇u‖²` is defined as `(u, -Δ_h u)` so that the discrete energy
//! identities of the flow hold exactly, and the implicit diffusion solve is
//! diagonalized by the 3-D discrete sine transform, which is exact for this
//! operator up to round-off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interior-node grid for the unit cube: `m` nodes per axis, spacing
/// `h = 1/(m+1)`, node `(i,j,k)` at `((i+1)h, (j+1)h, (k+1)h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    m: usize,
}

impl GridSpec {
    /// Requires `m >= 4`.
    pub fn new(m: usize) -> Result<Self> {
        if m < 4 {
            return Err(Error::InvalidParam(format!("grid needs m >= 4, got {m}")));
        }
        Ok(GridSpec { m })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Mesh spacing `1/(m+1)`.
    pub fn h(&self) -> f64 {
        1.0 / (self.m as f64 + 1.0)
    }

    /// Total degrees of freedom `m³`.
    pub fn len(&self) -> usize {
        self.m * self.m * self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lexicographic index (x fastest).
    #[inline]
    pub fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.m * (iy + self.m * iz)
    }

    /// Coordinate of node index `i` along one axis: `(i+1)h`.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.h()
    }
}

/// Real-valued field on the interior nodes, lexicographic order (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Panics if `values.len() != m³`.
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            grid.len(),
            "field length {} does not match grid {}³",
            values.len(),
            grid.m()
        );
        ScalarField { grid, values }
    }

    /// Product of 1-D Dirichlet sine modes,
    /// `s(x) = sin(kx·π·x) sin(ky·π·y) sin(kz·π·z)` sampled at the nodes.
    /// Mode numbers are 1-based and must not exceed `m`.
    pub fn sine_mode(grid: GridSpec, kx: usize, ky: usize, kz: usize) -> Self {
        let m = grid.m();
        assert!(
            (1..=m).contains(&kx) && (1..=m).contains(&ky) && (1..=m).contains(&kz),
            "sine mode out of range"
        );
        let h = grid.h();
        let mut values = vec![0.0; grid.len()];
        let sin1 = |k: usize, i: usize| ((k as f64) * std::f64::consts::PI * (i as f64 + 1.0) * h).sin();
        for iz in 0..m {
            let sz = sin1(kz, iz);
            for iy in 0..m {
                let sy = sin1(ky, iy);
                for ix in 0..m {
                    values[grid.idx(ix, iy, iz)] = sin1(kx, ix) * sy * sz;
                }
            }
        }
        ScalarField { grid, values }
    }

    /// Field with i.i.d. entries uniform in `[lo, hi)`.
    pub fn random<R: rand::Rng>(grid: GridSpec, rng: &mut R, lo: f64, hi: f64) -> Self {
        let values = (0..grid.len()).map(|_| rng.gen_range(lo..hi)).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| c * v).collect(),
        }
    }

    /// `self + c * other`; panics on grid mismatch.
    pub fn axpy(&self, c: f64, other: &ScalarField) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch in axpy");
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + c * b)
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sup norm `max |u_i|` (0 for the zero field).
    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, &v| acc.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// 7-point Dirichlet Laplacian: `(Σ neighbors - 6 u_i)/h²`, out-of-range
/// neighbors contribute 0.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    let grid = u.grid();
    let m = grid.m();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let v = u.values();
    let mut out = vec![0.0; grid.len()];
    for iz in 0..m {
        for iy in 0..m {
            for ix in 0..m {
                let c = grid.idx(ix, iy, iz);
                let mut s = -6.0 * v[c];
                if ix > 0 {
                    s += v[c - 1];
                }
                if ix + 1 < m {
                    s += v[c + 1];
                }
                if iy > 0 {
                    s += v[c - m];
                }
                if iy + 1 < m {
                    s += v[c + m];
                }
                if iz > 0 {
                    s += v[c - m * m];
                }
                if iz + 1 < m {
                    s += v[c + m * m];
                }
                out[c] = s * inv_h2;
            }
        }
    }
    ScalarField::from_values(grid, out)
}

/// 1-D eigenvalues of `-Δ_h` with Dirichlet ends: `λ_k = (2/h²)(1 - cos(kπh))`
/// for `k = 1..=m`.
pub fn axis_eigenvalues(grid: GridSpec) -> Vec<f64> {
    let m = grid.m();
    let h = grid.h();
    (1..=m)
        .map(|k| 2.0 / (h * h) * (1.0 - (k as f64 * std::f64::consts::PI * h).cos()))
        .collect()
}

/// Smallest eigenvalue of `-Δ_h`: `3 (2/h²)(1 - cos(πh))`. This is the
/// discrete Poincaré constant: `grad_sq(u) >= min_eigenvalue * ‖u‖²`.
pub fn min_eigenvalue(grid: GridSpec) -> f64 {
    let h = grid.h();
    3.0 * 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * h).cos())
}

/// DST-I basis matrix, `basis[k*m + j] = sin((j+1)(k+1)π/(m+1))`.
/// Symmetric; `B² = ((m+1)/2) I` per axis.
fn dst_basis(m: usize) -> Vec<f64> {
    let mut basis = vec![0.0; m * m];
    let denom = (m + 1) as f64;
    for k in 0..m {
        for j in 0..m {
            basis[k * m + j] =
                ((j as f64 + 1.0) * (k as f64 + 1.0) * std::f64::consts::PI / denom).sin();
        }
    }
    basis
}

/// Applies the (unnormalized) DST-I along every axis of the cube.
fn dst3(values: &[f64], m: usize, basis: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    let mut pencil_in = vec![0.0; m];
    let mut pencil_out = vec![0.0; m];
    for axis in 0..3 {
        let stride = match axis {
            0 => 1,
            1 => m,
            _ => m * m,
        };
        for b in 0..m {
            for a in 0..m {
                let base = match axis {
                    0 => m * (a + m * b),
                    1 => a + m * m * b,
                    _ => a + m * b,
                };
                for j in 0..m {
                    pencil_in[j] = out[base + j * stride];
                }
                for (k, po) in pencil_out.iter_mut().enumerate() {
                    let row = &basis[k * m..(k + 1) * m];
                    *po = row.iter().zip(&pencil_in).map(|(&bkj, &x)| bkj * x).sum();
                }
                for j in 0..m {
                    out[base + j * stride] = pencil_out[j];
                }
            }
        }
    }
    out
}

/// Solves `(Id - a Δ_h) w = u` by 3-D sine-transform diagonalization.
/// Exact for this operator up to round-off. Requires `a > 0`.
pub fn dirichlet_solve(u: &ScalarField, a: f64) -> Result<ScalarField> {
    if !(a > 0.0) {
        return Err(Error::InvalidParam(format!(
            "dirichlet_solve needs a > 0, got {a}"
        )));
    }
    let grid = u.grid();
    let m = grid.m();
    let basis = dst_basis(m);
    let lam = axis_eigenvalues(grid);
    let mut coeffs = dst3(u.values(), m, &basis);
    for kz in 0..m {
        for ky in 0..m {
            for kx in 0..m {
                let denom = 1.0 + a * (lam[kx] + lam[ky] + lam[kz]);
                coeffs[grid.idx(kx, ky, kz)] /= denom;
            }
        }
    }
    let mut w = dst3(&coeffs, m, &basis);
    let scale = (2.0 / (m as f64 + 1.0)).powi(3);
    for v in &mut w {
        *v *= scale;
    }
    Ok(ScalarField::from_values(grid, w))
}

/// Discrete L² pairing `h³ Σ u_i w_i`; panics on grid mismatch.
pub fn inner(u: &ScalarField, w: &ScalarField) -> f64 {
    assert_eq!(u.grid(), w.grid(), "grid mismatch in inner product");
    let h3 = u.grid().h().powi(3);
    h3 * u
        .values()
        .iter()
        .zip(w.values())
        .map(|(&a, &b)| a * b)
        .sum::<f64>()
}

/// `‖∇u‖²` defined as `(u, -Δ_h u)` so the flow's energy identities are
/// exact at the discrete level.
pub fn grad_sq(u: &ScalarField) -> f64 {
    let lap = laplacian(u);
    -inner(u, &lap)
}

/// Discrete `L^q` norm `(h³ Σ |u_i|^q)^{1/q}`; requires `q >= 1`.
pub fn norm_lq(u: &ScalarField, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::InvalidParam(format!("norm_lq needs q >= 1, got {q}")));
    }
    let h3 = u.grid().h().powi(3);
    let sum: f64 = u.values().iter().map(|&v| v.abs().powf(q)).sum();
    Ok((h3 * sum).powf(1.0 / q))
}

/// `‖u‖²` as the inner product of `u` with itself.
pub fn l2_sq(u: &ScalarField) -> f64 {
    inner(u, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent naive stencil with a bounds-checked accessor.
    fn laplacian_oracle(u: &ScalarField) -> Vec<f64> {
        let grid = u.grid();
        let m = grid.m() as isize;
        let h2 = grid.h() * grid.h();
        let get = |ix: isize, iy: isize, iz: isize| -> f64 {
            if ix < 0 || iy < 0 || iz < 0 || ix >= m || iy >= m || iz >= m {
                0.0
            } else {
                u.values()[grid.idx(ix as usize, iy as usize, iz as usize)]
            }
        };
        let mut out = Vec::with_capacity(grid.len());
        for iz in 0..m {
            for iy in 0..m {
                for ix in 0..m {
                    let s = get(ix - 1, iy, iz)
                        + get(ix + 1, iy, iz)
                        + get(ix, iy - 1, iz)
                        + get(ix, iy + 1, iz)
                        + get(ix, iy, iz - 1)
                        + get(ix, iy, iz + 1)
                        - 6.0 * get(ix, iy, iz);
                    out.push(s / h2);
                }
            }
        }
        out
    }

    #[test]
    fn grid_rejects_small_m() {
        assert!(GridSpec::new(3).is_err());
        assert!(GridSpec::new(4).is_ok());
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let grid = GridSpec::new(6).unwrap();
        let z = ScalarField::zeros(grid);
        assert!(laplacian(&z).is_zero());
    }

    #[test]
    fn laplacian_eigen_identity_on_sine_modes() {
        let grid = GridSpec::new(9).unwrap();
        let h = grid.h();
        for k in [1usize, 2, 3] {
            let s = ScalarField::sine_mode(grid, k, k, k);
            let lap = laplacian(&s);
            let lam = 3.0 * 2.0 / (h * h) * (1.0 - (k as f64 * std::f64::consts::PI * h).cos());
            for (a, b) in lap.values().iter().zip(s.values()) {
                assert!(
                    (a + lam * b).abs() <= 1e-10 * lam,
                    "eigen identity failed for k={k}: {a} vs {}",
                    -lam * b
                );
            }
        }
    }

    #[test]
    fn laplacian_matches_naive_oracle() {
        let grid = GridSpec::new(7).unwrap();
        let u = ScalarField::random(grid, &mut rng(1), -1.0, 1.0);
        let fast = laplacian(&u);
        let oracle = laplacian_oracle(&u);
        let scale = oracle.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for (a, b) in fast.values().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn dirichlet_solve_zero_and_domain_error() {
        let grid = GridSpec::new(5).unwrap();
        let z = ScalarField::zeros(grid);
        let w = dirichlet_solve(&z, 0.5).unwrap();
        assert!(w.linf() <= 1e-15);
        assert!(dirichlet_solve(&z, 0.0).is_err());
        assert!(dirichlet_solve(&z, -1.0).is_err());
    }

    #[test]
    fn dirichlet_solve_diagonalizes_sine_modes() {
        let grid = GridSpec::new(8).unwrap();
        let a = 0.03;
        let lam = axis_eigenvalues(grid);
        for (kx, ky, kz) in [(1, 1, 1), (2, 3, 1), (4, 2, 5)] {
            let s = ScalarField::sine_mode(grid, kx, ky, kz);
            let w = dirichlet_solve(&s, a).unwrap();
            let factor = 1.0 / (1.0 + a * (lam[kx - 1] + lam[ky - 1] + lam[kz - 1]));
            for (wi, si) in w.values().iter().zip(s.values()) {
                assert!((wi - factor * si).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_solve_residual_on_random_input() {
        let grid = GridSpec::new(9).unwrap();
        let u = ScalarField::random(grid, &mut rng(2), -1.0, 1.0);
        let a = 0.01;
        let w = dirichlet_solve(&u, a).unwrap();
        let res = w.axpy(-a, &laplacian(&w)).axpy(-1.0, &u);
        let rel = l2_sq(&res).sqrt() / l2_sq(&u).sqrt();
        assert!(rel <= 1e-12, "residual {rel}");
    }

    #[test]
    fn inner_basics() {
        let grid = GridSpec::new(6).unwrap();
        let z = ScalarField::zeros(grid);
        let u = ScalarField::random(grid, &mut rng(3), -1.0, 1.0);
        assert_eq!(inner(&z, &u), 0.0);
        assert!(inner(&u, &u) > 0.0);
        assert_eq!(inner(&z, &z), 0.0);
    }

    #[test]
    #[should_panic(expected = "grid mismatch")]
    fn inner_panics_on_grid_mismatch() {
        let a = ScalarField::zeros(GridSpec::new(5).unwrap());
        let b = ScalarField::zeros(GridSpec::new(6).unwrap());
        inner(&a, &b);
    }

    #[test]
    fn sine_modes_are_orthogonal() {
        let grid = GridSpec::new(8).unwrap();
        let s1 = ScalarField::sine_mode(grid, 1, 1, 1);
        let s2 = ScalarField::sine_mode(grid, 2, 2, 2);
        let s3 = ScalarField::sine_mode(grid, 1, 2, 1);
        let scale = inner(&s1, &s1);
        assert!(inner(&s1, &s2).abs() <= 1e-14 * scale);
        assert!(inner(&s1, &s3).abs() <= 1e-14 * scale);
    }

    #[test]
    fn grad_sq_on_sine_mode_and_zero() {
        let grid = GridSpec::new(9).unwrap();
        assert_eq!(grad_sq(&ScalarField::zeros(grid)), 0.0);
        let h = grid.h();
        for k in [1usize, 2] {
            let s = ScalarField::sine_mode(grid, k, k, k);
            let lam = 3.0 * 2.0 / (h * h) * (1.0 - (k as f64 * std::f64::consts::PI * h).cos());
            let expected = lam * l2_sq(&s);
            let got = grad_sq(&s);
            assert!((got - expected).abs() <= 1e-10 * expected);
        }
    }

    #[test]
    fn grad_sq_is_definitionally_inner_with_neg_laplacian() {
        let grid = GridSpec::new(7).unwrap();
        let u = ScalarField::random(grid, &mut rng(4), -2.0, 2.0);
        let lap = laplacian(&u);
        assert_eq!(grad_sq(&u), -inner(&u, &lap));
    }

    #[test]
    fn norm_lq_basics() {
        let grid = GridSpec::new(6).unwrap();
        let z = ScalarField::zeros(grid);
        assert_eq!(norm_lq(&z, 2.0).unwrap(), 0.0);
        assert!(norm_lq(&z, 0.5).is_err());

        let ones = ScalarField::from_values(grid, vec![1.0; grid.len()]);
        let vol = grid.len() as f64 * grid.h().powi(3);
        for q in [1.0, 2.0, 6.0] {
            let expected = vol.powf(1.0 / q);
            let got = norm_lq(&ones, q).unwrap();
            assert!((got - expected).abs() <= 1e-14 * expected);
        }

        let u = ScalarField::random(grid, &mut rng(5), -1.0, 1.0);
        let n2 = norm_lq(&u, 2.0).unwrap();
        assert!((n2 * n2 - inner(&u, &u)).abs() <= 1e-14 * inner(&u, &u));
    }

    #[test]
    fn min_eigenvalue_closed_form_and_inverse_iteration() {
        let grid = GridSpec::new(31).unwrap();
        let h = grid.h();
        assert!((h - 1.0 / 32.0).abs() < 1e-16);
        let lam1 = min_eigenvalue(grid);
        let expected = 3.0 * 2.0 * 32.0 * 32.0 * (1.0 - (std::f64::consts::PI / 32.0).cos());
        assert_eq!(lam1, expected);
        assert!((lam1 - 29.585).abs() < 1e-2, "lam1 = {lam1}");

        // Inverse iteration on (Id - Δ_h)^{-1}: the smallest eigenvalue of
        // -Δ_h dominates the solve operator.
        let small = GridSpec::new(8).unwrap();
        let mut u = ScalarField::random(small, &mut rng(6), 0.1, 1.0);
        for _ in 0..200 {
            u = dirichlet_solve(&u, 1.0).unwrap();
            let n = l2_sq(&u).sqrt();
            u = u.scaled(1.0 / n);
        }
        let rayleigh = grad_sq(&u) / l2_sq(&u);
        let lam1_small = min_eigenvalue(small);
        assert!(
            (rayleigh - lam1_small).abs() <= 1e-8 * lam1_small,
            "inverse iteration gave {rayleigh}, closed form {lam1_small}"
        );
    }

    #[test]
    fn min_eigenvalue_approaches_continuum_limit() {
        // λ₁(m) = 3π² - (π⁴/4) h² + O(h⁴), increasing toward 3π².
        let target = 3.0 * std::f64::consts::PI.powi(2);
        let mut prev_err = f64::INFINITY;
        for m in [8usize, 16, 32, 64] {
            let grid = GridSpec::new(m).unwrap();
            let h = grid.h();
            let err = target - min_eigenvalue(grid);
            assert!(err > 0.0);
            let taylor = std::f64::consts::PI.powi(4) / 4.0 * h * h;
            assert!((err - taylor).abs() <= 0.05 * taylor, "m={m}: err {err}, taylor {taylor}");
            assert!(err < prev_err);
            prev_err = err;
        }
    }

    #[test]
    fn poincare_bound_over_random_fields() {
        let grid = GridSpec::new(6).unwrap();
        let lam1 = min_eigenvalue(grid);
        let mut r = rng(7);
        for _ in 0..120 {
            let u = ScalarField::random(grid, &mut r, -1.0, 1.0);
            let ratio = grad_sq(&u) / l2_sq(&u);
            assert!(ratio >= lam1 * (1.0 - 1e-12));
        }
    }

    #[test]
    fn dst_roundtrip_is_identity() {
        let grid = GridSpec::new(7).unwrap();
        let m = grid.m();
        let basis = dst_basis(m);
        let u = ScalarField::random(grid, &mut rng(8), -1.0, 1.0);
        let coeffs = dst3(u.values(), m, &basis);
        let mut back = dst3(&coeffs, m, &basis);
        let scale = (2.0 / (m as f64 + 1.0)).powi(3);
        for v in &mut back {
            *v *= scale;
        }
        for (a, b) in back.iter().zip(u.values()) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn laplacian_is_symmetric_and_negative(seed in 0u64..1000) {
            let grid = GridSpec::new(5).unwrap();
            let mut r = rng(seed);
            let u = ScalarField::random(grid, &mut r, -1.0, 1.0);
            let w = ScalarField::random(grid, &mut r, -1.0, 1.0);
            let lu = laplacian(&u);
            let lw = laplacian(&w);
            let a = inner(&lu, &w);
            let b = inner(&u, &lw);
            let scale = a.abs().max(b.abs()).max(1e-30);
            prop_assert!((a - b).abs() <= 1e-12 * scale);
            prop_assert!(inner(&u, &lu) <= 0.0);
        }

        #[test]
        fn dirichlet_solve_is_l2_contraction(seed in 0u64..1000, a in 1e-4f64..10.0) {
            let grid = GridSpec::new(5).unwrap();
            let u = ScalarField::random(grid, &mut rng(seed), -1.0, 1.0);
            let w = dirichlet_solve(&u, a).unwrap();
            prop_assert!(l2_sq(&w).sqrt() <= l2_sq(&u).sqrt() * (1.0 + 1e-13));
        }
    }
}
