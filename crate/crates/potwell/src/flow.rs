//! Time integration of the flow with adaptive stepping, energy-identity
//! monitoring, blow-up detection, and trajectory recording.
//!
//! One step is IMEX: the nonlocal source is taken explicitly and the stiff
//! diffusion implicitly,
//!
//! ```text
//! u⁺ = (Id - dt Δ_h)^{-1} ( u + dt · v(u) |u|^{p-2} u ),
//! ```
//!
//! which removes the `h²` diffusion restriction; the sine-transform solve
//! is exact. The only exact structure the continuous flow offers is energy
//! dissipation, `dJ/dt = -‖u_t‖²`, so the step controller is built on it: a
//! step is accepted only if the normalized residual of the discrete energy
//! identity stays below `energy_tol`, rejected steps halve `dt`, and 20
//! consecutive acceptances grow `dt` by 1.2 up to `dt_max`.
//!
//! Blow-up is declared when the sup norm crosses `blowup_linf`, or when
//! `dt` collapses to `dt_min` while the sup norm grew monotonically over
//! the last 20 accepted steps; the reported time is a lower bound for the
//! true blow-up time. Decay is declared when `‖u‖²` falls below
//! `1e-12 · ‖u₀‖²` with nonnegative energy. Everything else ends as
//! `Inconclusive` with a reason.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{grad_sq, inner, l2_sq, norm_lq, ScalarField};
use crate::functionals::{energy_j_from_parts, signed_pow, ModelParams};
use crate::nonlocal::{abs_pow, convolve, KernelTable};
use crate::well::WellCurve;

/// Relative `‖u‖²` floor under which a run counts as decayed.
pub const DECAY_L2_FACTOR: f64 = 1e-12;
/// Accepted steps of monotone sup-norm growth required for the
/// dt-collapse blow-up signature.
const GROWTH_WINDOW: usize = 20;
/// Consecutive acceptances before `dt` is grown.
const GROW_AFTER: usize = 20;
const DT_GROWTH: f64 = 1.2;
/// Hard cap on accepted steps, a guard against runaway loops.
const MAX_ACCEPTED_STEPS: usize = 5_000_000;

/// Adaptive stepping controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepControl {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Relative tolerance on the discrete energy identity per step.
    pub energy_tol: f64,
    /// Sup-norm threshold of the blow-up detector.
    pub blowup_linf: f64,
    /// Time horizon.
    pub t_max: f64,
    /// Record a trajectory sample every this many accepted steps.
    pub record_every: usize,
    /// Retain a field snapshot every this many accepted steps (0 = none).
    pub snapshot_every: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_init: 1e-5,
            dt_min: 1e-10,
            dt_max: 1e-3,
            energy_tol: 1e-6,
            blowup_linf: 1e8,
            t_max: 20.0,
            record_every: 5,
            snapshot_every: 50,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(Error::InvalidParam(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !(self.energy_tol > 0.0) {
            return Err(Error::InvalidParam("energy_tol must be positive".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidParam("t_max must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParam("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// One recorded trajectory row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub l2_sq: f64,
    pub grad_sq: f64,
    /// Nonlocal double integral `P(u)`.
    pub p_pot: f64,
    pub j: f64,
    pub i: f64,
    /// `‖u‖₆` (= the `L^{2n/(n-2)}` norm in n = 3).
    pub l6: f64,
    /// `‖(u_k - u_{k-1})/dt‖²` of the accepted step into this state (0 at t = 0).
    pub ut_sq: f64,
    /// `½ ∫₀ᵗ ‖u‖² dτ`, trapezoid-accumulated at accepted steps.
    pub m_acc: f64,
    pub linf: f64,
}

/// Per-accepted-step controller record, kept for offline re-verification
/// of the energy identity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepStat {
    /// Time after the step.
    pub t: f64,
    pub dt: f64,
    /// Normalized energy residual of the step.
    pub residual: f64,
    pub j_before: f64,
    pub j_after: f64,
}

/// Retained field snapshot.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub field: ScalarField,
}

/// Recorded run: samples at the recording stride, per-step controller
/// stats, and retained snapshots.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub step_stats: Vec<StepStat>,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    /// CSV with the pinned header and 17-significant-digit floats. `H` and
    /// `L` are derived columns, `H = d - J` and `L = H + ½‖u‖²`.
    pub fn to_csv(&self, d_depth: f64) -> String {
        let mut out = String::from("t,l2_sq,grad_sq,P,J,I,l6,ut_sq,M,H,L,linf\n");
        for s in &self.samples {
            let h = d_depth - s.j;
            let l = h + 0.5 * s.l2_sq;
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                s.t, s.l2_sq, s.grad_sq, s.p_pot, s.j, s.i, s.l6, s.ut_sq, s.m_acc, h, l, s.linf
            ));
        }
        out
    }

    /// Largest normalized energy residual over accepted steps.
    pub fn max_abs_residual(&self) -> f64 {
        self.step_stats
            .iter()
            .map(|s| s.residual.abs())
            .fold(0.0, f64::max)
    }
}

/// Classification of a completed run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum RunOutcome {
    GlobalDecayed {
        t_end: f64,
        final_l2: f64,
    },
    BlewUp {
        t_blowup_lower_bound: f64,
        peak_linf: f64,
    },
    Inconclusive {
        t_end: f64,
        reason: String,
    },
}

impl RunOutcome {
    pub fn is_decayed(&self) -> bool {
        matches!(self, RunOutcome::GlobalDecayed { .. })
    }

    pub fn is_blowup(&self) -> bool {
        matches!(self, RunOutcome::BlewUp { .. })
    }
}

struct State {
    u: ScalarField,
    /// `v(u) = convolve(|u|^p)`, reused as the next step's source.
    v: ScalarField,
    g: f64,
    p_pot: f64,
    j: f64,
    l2: f64,
    linf: f64,
}

fn evaluate(u: ScalarField, params: &ModelParams, table: &KernelTable) -> State {
    let p = params.p();
    let up = abs_pow(&u, p);
    let v = convolve(&up, table);
    let p_pot = inner(&v, &up);
    let g = grad_sq(&u);
    State {
        j: energy_j_from_parts(g, p_pot, p),
        l2: l2_sq(&u),
        linf: u.linf(),
        u,
        v,
        g,
        p_pot,
    }
}

/// One IMEX step: explicit nonlocal source, implicit diffusion.
/// Returns `None` (overflow flag) when the update leaves the representable
/// range or crosses `blowup_linf`; `run` consumes that flag, it is not
/// fatal there.
pub fn step(u: &ScalarField, dt: f64, params: &ModelParams, table: &KernelTable) -> Option<ScalarField> {
    assert!(dt > 0.0, "step needs dt > 0");
    let p = params.p();
    let v = convolve(&abs_pow(u, p), table);
    step_with_source(u, &v, dt, params)
}

/// Step with a precomputed source potential `v = convolve(|u|^p)`.
fn step_with_source(
    u: &ScalarField,
    v: &ScalarField,
    dt: f64,
    params: &ModelParams,
) -> Option<ScalarField> {
    let p = params.p();
    let grid = u.grid();
    let forced: Vec<f64> = (0..grid.len())
        .map(|i| u.values()[i] + dt * v.values()[i] * signed_pow(u.values()[i], p - 1.0))
        .collect();
    if !forced.iter().all(|x| x.is_finite()) {
        return None;
    }
    let w = ScalarField::from_values(grid, forced);
    let next = crate::field::dirichlet_solve(&w, dt).expect("dt > 0");
    if next.all_finite() {
        Some(next)
    } else {
        None
    }
}

/// Normalized residual of the discrete energy identity across one step:
/// `r = J(u⁺) - J(u) + dt ‖(u⁺-u)/dt‖²`, divided by
/// `max(|J(u)|, dt ‖u_t‖², ε)`.
pub fn energy_residual(
    u_before: &ScalarField,
    u_after: &ScalarField,
    dt: f64,
    params: &ModelParams,
    table: &KernelTable,
) -> f64 {
    let p = params.p();
    let j_before = {
        let up = abs_pow(u_before, p);
        let v = convolve(&up, table);
        energy_j_from_parts(grad_sq(u_before), inner(&v, &up), p)
    };
    let j_after = {
        let up = abs_pow(u_after, p);
        let v = convolve(&up, table);
        energy_j_from_parts(grad_sq(u_after), inner(&v, &up), p)
    };
    let ut = u_after.axpy(-1.0, u_before).scaled(1.0 / dt);
    let ut_sq = l2_sq(&ut);
    normalized_residual(j_before, j_after, dt, ut_sq)
}

#[inline]
fn normalized_residual(j_before: f64, j_after: f64, dt: f64, ut_sq: f64) -> f64 {
    let r = j_after - j_before + dt * ut_sq;
    r / j_before.abs().max(dt * ut_sq).max(f64::MIN_POSITIVE)
}

/// Drives the flow from `u0` and classifies the outcome.
pub fn run(
    u0: &ScalarField,
    ctrl: &StepControl,
    params: &ModelParams,
    table: &KernelTable,
    well: &WellCurve,
) -> (Trajectory, RunOutcome) {
    let _ = well; // depth enters via derived CSV columns, not the dynamics
    let mut traj = Trajectory::default();
    let mut state = evaluate(u0.clone(), params, table);
    let l2_floor = DECAY_L2_FACTOR * state.l2;
    let j0 = state.j;

    let mut t = 0.0;
    let mut dt = ctrl.dt_init;
    let mut m_acc = 0.0;
    let mut accepted: usize = 0;
    let mut streak: usize = 0;
    let mut peak_linf = state.linf;
    let mut last_recorded_step = 0usize;
    let mut last_ut_sq = 0.0;
    let mut linf_window: VecDeque<f64> = VecDeque::with_capacity(GROWTH_WINDOW + 1);
    linf_window.push_back(state.linf);

    record_sample(&mut traj, &state, t, 0.0, m_acc, params);
    if ctrl.snapshot_every > 0 {
        traj.snapshots.push(Snapshot {
            step: 0,
            t,
            field: state.u.clone(),
        });
    }

    // zero (or effectively zero) data is already decayed
    if state.l2 <= l2_floor {
        return (
            traj,
            RunOutcome::GlobalDecayed {
                t_end: t,
                final_l2: state.l2,
            },
        );
    }

    loop {
        if t >= ctrl.t_max {
            return (
                traj,
                RunOutcome::Inconclusive {
                    t_end: t,
                    reason: "t_max reached".into(),
                },
            );
        }
        if accepted >= MAX_ACCEPTED_STEPS {
            return (
                traj,
                RunOutcome::Inconclusive {
                    t_end: t,
                    reason: "step cap reached".into(),
                },
            );
        }
        let dt_eff = dt;

        let trial = step_with_source(&state.u, &state.v, dt_eff, params);
        let growth_signature =
            linf_window.len() >= GROWTH_WINDOW && linf_window.iter().is_sorted_by(|a, b| a < b);

        let trial = match trial {
            Some(f) if f.linf() <= ctrl.blowup_linf => f,
            _ => {
                // overflow flag: the update left the admissible range
                if dt_eff <= ctrl.dt_min {
                    finalize(
                        &mut traj, &state, t, accepted, last_recorded_step, last_ut_sq, m_acc,
                        params, ctrl,
                    );
                    return if growth_signature {
                        (
                            traj,
                            RunOutcome::BlewUp {
                                t_blowup_lower_bound: t,
                                peak_linf,
                            },
                        )
                    } else {
                        (
                            traj,
                            RunOutcome::Inconclusive {
                                t_end: t,
                                reason: "overflow at dt floor without growth signature".into(),
                            },
                        )
                    };
                }
                dt = (dt * 0.5).max(ctrl.dt_min);
                streak = 0;
                continue;
            }
        };

        let next = evaluate(trial, params, table);
        let ut = next.u.axpy(-1.0, &state.u).scaled(1.0 / dt_eff);
        let ut_sq = l2_sq(&ut);
        let residual = normalized_residual(state.j, next.j, dt_eff, ut_sq);

        if residual.abs() > ctrl.energy_tol && dt_eff > ctrl.dt_min {
            dt = (dt * 0.5).max(ctrl.dt_min);
            streak = 0;
            continue;
        }
        if residual.abs() > ctrl.energy_tol && growth_signature {
            // cannot meet the energy tolerance even at the dt floor while
            // the sup norm keeps climbing: blow-up
            finalize(
                &mut traj, &state, t, accepted, last_recorded_step, last_ut_sq, m_acc, params, ctrl,
            );
            return (
                traj,
                RunOutcome::BlewUp {
                    t_blowup_lower_bound: t,
                    peak_linf,
                },
            );
        }
        // accept (possibly with a tolerance violation at the dt floor,
        // which stays visible in step_stats)

        m_acc += dt_eff * 0.25 * (state.l2 + next.l2);
        t += dt_eff;
        accepted += 1;
        last_ut_sq = ut_sq;
        traj.step_stats.push(StepStat {
            t,
            dt: dt_eff,
            residual,
            j_before: state.j,
            j_after: next.j,
        });
        peak_linf = peak_linf.max(next.linf);
        linf_window.push_back(next.linf);
        if linf_window.len() > GROWTH_WINDOW {
            linf_window.pop_front();
        }
        state = next;

        streak += 1;
        if streak >= GROW_AFTER {
            dt = (dt * DT_GROWTH).min(ctrl.dt_max);
            streak = 0;
        }

        if accepted % ctrl.record_every == 0 {
            record_sample(&mut traj, &state, t, ut_sq, m_acc, params);
            last_recorded_step = accepted;
        }
        if ctrl.snapshot_every > 0 && accepted % ctrl.snapshot_every == 0 {
            traj.snapshots.push(Snapshot {
                step: accepted,
                t,
                field: state.u.clone(),
            });
        }

        if state.linf > ctrl.blowup_linf {
            finalize(
                &mut traj, &state, t, accepted, last_recorded_step, last_ut_sq, m_acc, params, ctrl,
            );
            return (
                traj,
                RunOutcome::BlewUp {
                    t_blowup_lower_bound: t,
                    peak_linf,
                },
            );
        }
        if state.l2 <= l2_floor {
            finalize(
                &mut traj, &state, t, accepted, last_recorded_step, last_ut_sq, m_acc, params, ctrl,
            );
            let outcome = if state.j >= -ctrl.energy_tol * j0.abs().max(1.0) {
                RunOutcome::GlobalDecayed {
                    t_end: t,
                    final_l2: state.l2,
                }
            } else {
                RunOutcome::Inconclusive {
                    t_end: t,
                    reason: "l2 floor reached with negative energy".into(),
                }
            };
            return (traj, outcome);
        }
    }
}

fn record_sample(
    traj: &mut Trajectory,
    state: &State,
    t: f64,
    ut_sq: f64,
    m_acc: f64,
    params: &ModelParams,
) {
    let p = params.p();
    traj.samples.push(TrajectorySample {
        t,
        l2_sq: state.l2,
        grad_sq: state.g,
        p_pot: state.p_pot,
        j: energy_j_from_parts(state.g, state.p_pot, p),
        i: state.g - state.p_pot,
        l6: norm_lq(&state.u, 6.0).expect("q = 6"),
        ut_sq,
        m_acc,
        linf: state.linf,
    });
}

/// Records the final accepted state as a sample (and snapshot) if the
/// recording stride did not already catch it.
#[allow(clippy::too_many_arguments)]
fn finalize(
    traj: &mut Trajectory,
    state: &State,
    t: f64,
    accepted: usize,
    last_recorded_step: usize,
    last_ut_sq: f64,
    m_acc: f64,
    params: &ModelParams,
    ctrl: &StepControl,
) {
    if last_recorded_step != accepted {
        record_sample(traj, state, t, last_ut_sq, m_acc, params);
    }
    if ctrl.snapshot_every > 0 && traj.snapshots.last().map(|s| s.step) != Some(accepted) {
        traj.snapshots.push(Snapshot {
            step: accepted,
            t,
            field: state.u.clone(),
        });
    }
}

/// Concavity diagnostics of the blow-up argument: `M(t)`, `M'(t) = ½‖u‖²`,
/// `M''(t) = -I(u(t))`, and the indicator `M·M'' - p·(M')²`, all read from
/// the recorded samples (`M` from the trapezoid accumulator, the
/// derivatives directly, never by numerical differentiation).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcavitySeries {
    pub t: Vec<f64>,
    pub m: Vec<f64>,
    pub m_prime: Vec<f64>,
    pub m_double_prime: Vec<f64>,
    pub indicator: Vec<f64>,
}

pub fn concavity_diagnostics(traj: &Trajectory, params: &ModelParams) -> Result<ConcavitySeries> {
    if traj.samples.len() < 3 {
        return Err(Error::InvalidParam(format!(
            "concavity diagnostics need at least 3 samples, got {}",
            traj.samples.len()
        )));
    }
    let p = params.p();
    let mut series = ConcavitySeries {
        t: Vec::with_capacity(traj.samples.len()),
        m: Vec::new(),
        m_prime: Vec::new(),
        m_double_prime: Vec::new(),
        indicator: Vec::new(),
    };
    for s in &traj.samples {
        let m = s.m_acc;
        let m_prime = 0.5 * s.l2_sq;
        let m_double = -s.i;
        series.t.push(s.t);
        series.m.push(m);
        series.m_prime.push(m_prime);
        series.m_double_prime.push(m_double);
        series.indicator.push(m * m_double - p * m_prime * m_prime);
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{dirichlet_solve, laplacian, min_eigenvalue, GridSpec};
    use crate::well::WellCurve;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(m: usize, p: f64) -> (GridSpec, ModelParams, KernelTable) {
        let grid = GridSpec::new(m).unwrap();
        let params = ModelParams::new(p).unwrap();
        let table = KernelTable::new(grid);
        (grid, params, table)
    }

    #[test]
    fn zero_is_a_fixed_point_of_step() {
        let (grid, params, table) = setup(5, 2.0);
        let z = ScalarField::zeros(grid);
        let next = step(&z, 1e-3, &params, &table).unwrap();
        assert!(next.linf() <= 1e-300);
    }

    #[test]
    fn heat_only_stepping_matches_separation_of_variables() {
        // With the nonlocal source off, one implicit step damps the first
        // sine mode by exactly 1/(1 + dt λ₁).
        let grid = GridSpec::new(8).unwrap();
        let lam1 = min_eigenvalue(grid);
        let u0 = ScalarField::sine_mode(grid, 1, 1, 1);
        let dt = 1e-3;
        let k = 25;
        let mut u = u0.clone();
        for _ in 0..k {
            u = dirichlet_solve(&u, dt).unwrap();
        }
        let factor = (1.0 + dt * lam1).powi(-(k as i32));
        for (a, b) in u.values().iter().zip(u0.values()) {
            assert!((a - factor * b).abs() <= 1e-12);
        }
        // dt -> 0 approaches e^{-λ₁ t}
        let t_final = 0.02;
        let mut errs = Vec::new();
        for steps in [20usize, 200] {
            let dt = t_final / steps as f64;
            let mut u = u0.clone();
            for _ in 0..steps {
                u = dirichlet_solve(&u, dt).unwrap();
            }
            let exact = (-lam1 * t_final).exp();
            let got = u.values()[0] / u0.values()[0];
            errs.push((got - exact).abs());
        }
        assert!(errs[1] < errs[0] / 5.0, "first-order convergence: {errs:?}");
    }

    #[test]
    fn imex_step_is_first_order_consistent_with_explicit_euler() {
        let (grid, params, table) = setup(6, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let u = ScalarField::random(grid, &mut rng, 0.0, 1.0);
        let p = params.p();
        let mut errs = Vec::new();
        for dt in [1e-5, 1e-6] {
            let imex = step(&u, dt, &params, &table).unwrap();
            // explicit Euler oracle
            let v = convolve(&abs_pow(&u, p), &table);
            let lap = laplacian(&u);
            let euler = ScalarField::from_values(
                grid,
                (0..grid.len())
                    .map(|i| {
                        u.values()[i]
                            + dt * (lap.values()[i]
                                + v.values()[i] * signed_pow(u.values()[i], p - 1.0))
                    })
                    .collect(),
            );
            errs.push(l2_sq(&imex.axpy(-1.0, &euler)).sqrt());
        }
        let slope = (errs[0] / errs[1]).log10();
        assert!((1.7..=2.3).contains(&slope), "slope {slope}, errs {errs:?}");
    }

    #[test]
    fn energy_residual_zero_for_stationary_state() {
        let (grid, params, table) = setup(5, 2.0);
        let z = ScalarField::zeros(grid);
        assert_eq!(energy_residual(&z, &z, 1e-3, &params, &table), 0.0);
    }

    #[test]
    fn energy_residual_decreases_with_dt() {
        let (grid, params, table) = setup(6, 2.0);
        let u = ScalarField::sine_mode(grid, 1, 1, 1).scaled(0.8);
        let mut rs = Vec::new();
        for dt in [4e-4, 2e-4, 1e-4] {
            let next = step(&u, dt, &params, &table).unwrap();
            rs.push(energy_residual(&u, &next, dt, &params, &table).abs());
        }
        assert!(rs[1] < rs[0] && rs[2] < rs[1], "residuals {rs:?}");
    }

    #[test]
    fn run_from_zero_decays_immediately_with_single_row() {
        let (grid, params, table) = setup(5, 2.0);
        let well = WellCurve::synthetic(1.0, 2.0);
        let ctrl = StepControl::default();
        let (traj, outcome) = run(&ScalarField::zeros(grid), &ctrl, &params, &table, &well);
        assert!(outcome.is_decayed());
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(traj.samples[0].t, 0.0);
    }

    #[test]
    fn small_data_run_decays_with_clean_energy_record() {
        let (grid, params, table) = setup(6, 2.0);
        let well = WellCurve::synthetic(1.0, 2.0);
        let ctrl = StepControl {
            t_max: 5.0,
            record_every: 2,
            snapshot_every: 0,
            ..StepControl::default()
        };
        let u0 = ScalarField::sine_mode(grid, 1, 1, 1).scaled(0.3);
        let (traj, outcome) = run(&u0, &ctrl, &params, &table, &well);
        assert!(outcome.is_decayed(), "outcome {outcome:?}");
        assert!(traj.max_abs_residual() <= ctrl.energy_tol);
        // J nonincreasing within tolerance, per accepted step
        for s in &traj.step_stats {
            assert!(s.j_after <= s.j_before + ctrl.energy_tol * s.j_before.abs().max(1.0));
        }
        // M is nondecreasing across samples
        for w in traj.samples.windows(2) {
            assert!(w[1].m_acc >= w[0].m_acc);
        }
        // identity: I = G - P and J = G/2 - P/4 at every sample
        for s in &traj.samples {
            assert!((s.i - (s.grad_sq - s.p_pot)).abs() <= 1e-12 * s.grad_sq.max(s.p_pot));
            let j = 0.5 * s.grad_sq - s.p_pot / (2.0 * params.p());
            assert!((s.j - j).abs() <= 1e-12 * s.j.abs().max(s.grad_sq));
        }
    }

    #[test]
    fn trapezoid_m_is_exact_at_stride_one() {
        let (grid, params, table) = setup(5, 2.0);
        let well = WellCurve::synthetic(1.0, 2.0);
        let ctrl = StepControl {
            t_max: 0.01,
            record_every: 1,
            snapshot_every: 0,
            ..StepControl::default()
        };
        let u0 = ScalarField::sine_mode(grid, 1, 1, 1).scaled(0.5);
        let (traj, _) = run(&u0, &ctrl, &params, &table, &well);
        assert!(traj.samples.len() > 10);
        for w in traj.samples.windows(2) {
            let dm = w[1].m_acc - w[0].m_acc;
            let dt = w[1].t - w[0].t;
            let trap = dt * 0.5 * (0.5 * w[0].l2_sq + 0.5 * w[1].l2_sq);
            assert!((dm - trap).abs() <= 1e-15 + 1e-12 * trap.abs());
        }
    }

    #[test]
    fn concavity_diagnostics_zero_and_errors() {
        let params = ModelParams::new(2.0).unwrap();
        let mut traj = Trajectory::default();
        assert!(concavity_diagnostics(&traj, &params).is_err());
        for k in 0..5 {
            traj.samples.push(TrajectorySample {
                t: k as f64,
                l2_sq: 0.0,
                grad_sq: 0.0,
                p_pot: 0.0,
                j: 0.0,
                i: 0.0,
                l6: 0.0,
                ut_sq: 0.0,
                m_acc: 0.0,
                linf: 0.0,
            });
        }
        let series = concavity_diagnostics(&traj, &params).unwrap();
        assert!(series.m.iter().all(|&x| x == 0.0));
        assert!(series.indicator.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn concavity_m_prime_consistency_on_smooth_run() {
        let (grid, params, table) = setup(6, 2.0);
        let well = WellCurve::synthetic(1.0, 2.0);
        let ctrl = StepControl {
            t_max: 0.05,
            record_every: 4,
            snapshot_every: 0,
            ..StepControl::default()
        };
        let u0 = ScalarField::sine_mode(grid, 1, 1, 1).scaled(0.4);
        let (traj, _) = run(&u0, &ctrl, &params, &table, &well);
        let series = concavity_diagnostics(&traj, &params).unwrap();
        // (M(t2)-M(t1))/(t2-t1) ≈ (M'(t1)+M'(t2))/2 to O(Δt²)
        let mut worst: f64 = 0.0;
        for k in 1..series.t.len() {
            let dt = series.t[k] - series.t[k - 1];
            let fd = (series.m[k] - series.m[k - 1]) / dt;
            let avg = 0.5 * (series.m_prime[k] + series.m_prime[k - 1]);
            worst = worst.max((fd - avg).abs() / avg.abs().max(1e-30));
        }
        assert!(worst <= 1e-4, "worst M' mismatch {worst}");
    }

    #[test]
    fn step_control_validation() {
        let mut c = StepControl::default();
        assert!(c.validate().is_ok());
        c.dt_min = 0.0;
        assert!(c.validate().is_err());
        let mut c = StepControl::default();
        c.dt_init = c.dt_max * 2.0;
        assert!(c.validate().is_err());
        let mut c = StepControl::default();
        c.energy_tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = StepControl::default();
        c.record_every = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn trajectory_csv_has_pinned_header_and_derived_columns() {
        let (grid, params, table) = setup(5, 2.0);
        let well = WellCurve::synthetic(1.0, 2.0);
        let ctrl = StepControl {
            t_max: 0.005,
            record_every: 1,
            snapshot_every: 0,
            ..StepControl::default()
        };
        let u0 = ScalarField::sine_mode(grid, 1, 1, 1).scaled(0.2);
        let (traj, _) = run(&u0, &ctrl, &params, &table, &well);
        let csv = traj.to_csv(well.d_depth());
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,l2_sq,grad_sq,P,J,I,l6,ut_sq,M,H,L,linf"
        );
        let first: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(first.len(), 12);
        let (j, h, l, l2) = (first[4], first[9], first[10], first[1]);
        assert!((h - (well.d_depth() - j)).abs() <= 1e-15 * h.abs().max(1.0));
        assert!((l - (h + 0.5 * l2)).abs() <= 1e-15 * l.abs().max(1.0));
    }
}
