//! Theorem-level experiments: vacuum-isolating verification, threshold
//! location across the low-energy dichotomy, exponential rate fitting, and
//! classification of initial data into the invariant sets.
//!
//! Each experiment is a plain function over the lower modules, and the
//! drivers at the bottom orchestrate full runs into typed reports the CLI
//! serializes. Pass/fail flags distinguish theorem-level regressions
//! (CLI exit 2) from operational errors (exit 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dirichlet_solve, grad_sq, l2_sq, min_eigenvalue, GridSpec, ScalarField};
use crate::flow::{run, RunOutcome, StepControl, Trajectory};
use crate::functionals::{energy_j, nehari_i, ModelParams, NEHARI_TOL};
use crate::nonlocal::{potential_energy, KernelTable};
use crate::well::WellCurve;

/// Vacuum-region verification for one run: over every retained snapshot and
/// a δ-grid strictly inside `(δ₁, δ₂)`, `I_δ(u(t))` must keep one sign and
/// stay away from zero. `min_abs_i_delta` is the smallest normalized
/// magnitude `|I_δ| / max(δ‖∇u‖², P)` seen (scale-free, so late-time decay
/// does not shrink it spuriously).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VacuumReport {
    pub e: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub samples_checked: usize,
    pub min_abs_i_delta: f64,
    /// +1 or -1.
    pub sign: i8,
    pub violated: bool,
}

/// Verifies the vacuum region of one completed run with `J(u₀) <= e`.
/// Recomputes `‖∇u‖²` and `P` from the retained field snapshots, an
/// independent route from the trajectory columns.
pub fn vacuum_check(
    traj: &Trajectory,
    well: &WellCurve,
    params: &ModelParams,
    table: &KernelTable,
    e: f64,
    delta_grid_size: usize,
) -> Result<VacuumReport> {
    if !(e > 0.0 && e < well.d_depth()) {
        return Err(Error::Domain(format!(
            "vacuum check needs 0 < e < d = {}, got {e}",
            well.d_depth()
        )));
    }
    if traj.snapshots.is_empty() {
        return Err(Error::InvalidParam(
            "vacuum check needs retained snapshots, none present".into(),
        ));
    }
    if delta_grid_size == 0 {
        return Err(Error::InvalidParam("delta grid must be nonempty".into()));
    }
    let (delta1, delta2) = well.roots_delta(e)?;
    let deltas: Vec<f64> = (1..=delta_grid_size)
        .map(|i| delta1 + (delta2 - delta1) * i as f64 / (delta_grid_size as f64 + 1.0))
        .collect();

    let mut sign = 0i8;
    let mut min_abs = f64::INFINITY;
    let mut violated = false;
    let mut samples_checked = 0;
    for snap in &traj.snapshots {
        if snap.field.is_zero() {
            // a decayed-to-zero state is not in any N_δ by definition
            continue;
        }
        let g = grad_sq(&snap.field);
        let pot = potential_energy(&snap.field, params.p(), table);
        for &delta in &deltas {
            let i_delta = delta * g - pot;
            let scale = (delta * g).max(pot);
            let normalized = i_delta.abs() / scale;
            min_abs = min_abs.min(normalized);
            if normalized <= NEHARI_TOL {
                violated = true;
            }
            let s = if i_delta > 0.0 { 1 } else { -1 };
            if sign == 0 {
                sign = s;
            } else if s != sign {
                violated = true;
            }
            samples_checked += 1;
        }
    }
    Ok(VacuumReport {
        e,
        delta1,
        delta2,
        samples_checked,
        min_abs_i_delta: min_abs,
        sign,
        violated,
    })
}

/// Least-squares fit of `log q(t)` over a time window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub window: (f64, f64),
    /// Per unit time.
    pub slope: f64,
    pub intercept: f64,
    /// `None` when the fit is degenerate (zero variance in `log q`).
    pub r_squared: Option<f64>,
    pub quantity: String,
}

/// Which trajectory column a rate fit reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateQuantity {
    /// `log ‖u‖²`
    LogL2Sq,
    /// `log ‖u‖₆`
    LogL6,
}

impl RateQuantity {
    pub fn label(&self) -> &'static str {
        match self {
            RateQuantity::LogL2Sq => "log_l2_sq",
            RateQuantity::LogL6 => "log_l6",
        }
    }

    fn read(&self, s: &crate::flow::TrajectorySample) -> f64 {
        match self {
            RateQuantity::LogL2Sq => s.l2_sq,
            RateQuantity::LogL6 => s.l6,
        }
    }
}

/// OLS line through `(t, log q(t))` for samples within the window.
/// Requires at least 10 samples, all with `q > 0`.
pub fn fit_rate(traj: &Trajectory, quantity: RateQuantity, window: (f64, f64)) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter(|s| s.t >= window.0 && s.t <= window.1)
        .map(|s| (s.t, quantity.read(s)))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InvalidParam(format!(
            "rate fit needs >= 10 samples in the window, got {}",
            pts.len()
        )));
    }
    if let Some(&(t_bad, _)) = pts.iter().find(|&&(_, q)| !(q > 0.0)) {
        return Err(Error::Domain(format!(
            "rate fit needs positive values, found nonpositive at t = {t_bad}"
        )));
    }
    let n = pts.len() as f64;
    let xs = pts.iter().map(|&(t, _)| t);
    let ys = pts.iter().map(|&(_, q)| q.ln());
    let (ymin, ymax) = ys
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
            (lo.min(y), hi.max(y))
        });
    if ymin == ymax {
        // constant series: flat line, r² undefined
        return Ok(RateFit {
            window,
            slope: 0.0,
            intercept: ymin,
            r_squared: None,
            quantity: quantity.label().to_string(),
        });
    }
    let mean_x = xs.clone().sum::<f64>() / n;
    let mean_y = ys.clone().sum::<f64>() / n;
    let sxx: f64 = xs.clone().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = pts
        .iter()
        .map(|&(t, q)| (t - mean_x) * (q.ln() - mean_y))
        .sum();
    let syy: f64 = ys.clone().map(|y| (y - mean_y).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = Some((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0));
    Ok(RateFit {
        window,
        slope,
        intercept,
        r_squared,
        quantity: quantity.label().to_string(),
    })
}

/// Position of initial data relative to the invariant sets:
/// `W' = {J <= d, I > 0} ∪ {0}` and `Z' = {J <= d, I < 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialClass {
    WPrime,
    ZPrime,
    Outside,
}

/// Classifies `u₀`. The comparison on `I` uses absolute tolerance `1e-12`
/// (boundary data counts as outside); the comparison on `J` is strict.
pub fn classify_initial(
    u0: &ScalarField,
    params: &ModelParams,
    table: &KernelTable,
    well: &WellCurve,
) -> InitialClass {
    if u0.is_zero() {
        return InitialClass::WPrime;
    }
    let j = energy_j(u0, params, table);
    if j > well.d_depth() {
        return InitialClass::Outside;
    }
    let i = nehari_i(u0, params, table);
    if i > 1e-12 {
        InitialClass::WPrime
    } else if i < -1e-12 {
        InitialClass::ZPrime
    } else {
        InitialClass::Outside
    }
}

/// Which branch of the fibering map `s ↦ J(sφ)` to solve on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiberBranch {
    /// `s` below the Nehari crossing (`I(sφ) > 0`).
    Rising,
    /// `s` above the Nehari crossing (`I(sφ) < 0`).
    Falling,
}

/// Solves `J(sφ) = target` on the requested branch of the fibering map by
/// bisection. The map rises from 0 to its peak at the Nehari crossing
/// `λ(1,φ)` and falls thereafter, so `target` must lie in `(0, peak]`.
pub fn fiber_scale_for_energy(
    phi: &ScalarField,
    target: f64,
    branch: FiberBranch,
    params: &ModelParams,
    table: &KernelTable,
) -> Result<f64> {
    if phi.is_zero() {
        return Err(Error::InvalidParam("fiber scaling needs a nonzero field".into()));
    }
    let p = params.p();
    let g = grad_sq(phi);
    let pot = potential_energy(phi, p, table);
    let lam = (g / pot).powf(1.0 / (2.0 * p - 2.0));
    let j_fiber = |s: f64| 0.5 * s * s * g - s.powf(2.0 * p) * pot / (2.0 * p);
    let peak = j_fiber(lam);
    if !(target > 0.0 && target <= peak) {
        return Err(Error::Domain(format!(
            "fiber energy target must lie in (0, {peak}], got {target}"
        )));
    }
    let (mut lo, mut hi) = match branch {
        FiberBranch::Rising => (0.0, lam),
        FiberBranch::Falling => {
            let mut hi = lam;
            while j_fiber(hi) > target {
                hi *= 2.0;
            }
            (lam, hi)
        }
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let jm = j_fiber(mid);
        if (jm - target).abs() <= 1e-13 * target {
            return Ok(mid);
        }
        let keep_low = match branch {
            FiberBranch::Rising => jm < target,
            FiberBranch::Falling => jm > target,
        };
        if keep_low {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Compact per-run summary embedded in experiment reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub s: f64,
    pub j0: f64,
    pub i0: f64,
    pub outcome: RunOutcome,
    pub steps: usize,
    pub samples: usize,
    pub max_abs_residual: f64,
}

fn summarize(s: f64, u0: &ScalarField, params: &ModelParams, table: &KernelTable, traj: &Trajectory, outcome: &RunOutcome) -> RunSummary {
    RunSummary {
        s,
        j0: energy_j(u0, params, table),
        i0: nehari_i(u0, params, table),
        outcome: outcome.clone(),
        steps: traj.step_stats.len(),
        samples: traj.samples.len(),
        max_abs_residual: traj.max_abs_residual(),
    }
}

// ---------------------------------------------------------------------------
// experiment drivers
// ---------------------------------------------------------------------------

/// A completed run kept alongside a report so the harness can emit its
/// trajectory CSV.
#[derive(Debug, Clone)]
pub struct LabeledRun {
    pub label: String,
    pub trajectory: Trajectory,
}

/// Vacuum experiment: one decay run and one blow-up run at energies below
/// `e`, each checked for the vacuum region of level `e`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VacuumExperimentReport {
    pub e: f64,
    pub decay_run: RunSummary,
    pub decay_vacuum: VacuumReport,
    pub blowup_run: RunSummary,
    pub blowup_vacuum: VacuumReport,
    pub passed: bool,
}

pub fn vacuum_experiment(
    well: &WellCurve,
    params: &ModelParams,
    table: &KernelTable,
    ctrl: &StepControl,
    e_frac: f64,
    delta_grid_size: usize,
) -> Result<(VacuumExperimentReport, Vec<LabeledRun>)> {
    let phi = well
        .maximizer()
        .ok_or_else(|| Error::InvalidParam("well curve has no maximizer field".into()))?;
    let e = e_frac * well.d_depth();
    if !(e > 0.0 && e < well.d_depth()) {
        return Err(Error::Domain(format!(
            "vacuum level fraction must be in (0,1), got {e_frac}"
        )));
    }
    let target = 0.9 * e;

    let s_dec = fiber_scale_for_energy(phi, target, FiberBranch::Rising, params, table)?;
    let u0_dec = phi.scaled(s_dec);
    let (traj_dec, out_dec) = run(&u0_dec, ctrl, params, table, well);
    let decay_vacuum = vacuum_check(&traj_dec, well, params, table, e, delta_grid_size)?;
    let decay_run = summarize(s_dec, &u0_dec, params, table, &traj_dec, &out_dec);

    let s_blw = fiber_scale_for_energy(phi, target, FiberBranch::Falling, params, table)?;
    let u0_blw = phi.scaled(s_blw);
    let (traj_blw, out_blw) = run(&u0_blw, ctrl, params, table, well);
    let blowup_vacuum = vacuum_check(&traj_blw, well, params, table, e, delta_grid_size)?;
    let blowup_run = summarize(s_blw, &u0_blw, params, table, &traj_blw, &out_blw);

    let passed = out_dec.is_decayed()
        && out_blw.is_blowup()
        && !decay_vacuum.violated
        && decay_vacuum.sign == 1
        && !blowup_vacuum.violated
        && blowup_vacuum.sign == -1;

    let report = VacuumExperimentReport {
        e,
        decay_run,
        decay_vacuum,
        blowup_run,
        blowup_vacuum,
        passed,
    };
    let runs = vec![
        LabeledRun {
            label: "decay".into(),
            trajectory: traj_dec,
        },
        LabeledRun {
            label: "blowup".into(),
            trajectory: traj_blw,
        },
    ];
    Ok((report, runs))
}

/// Threshold experiment: bisection in the scaling `s` of `u₀ = sφ` on the
/// simulated outcome, compared against the Nehari crossing `λ(1,φ)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub s_star: f64,
    pub bracket: (f64, f64),
    pub nehari_crossing: f64,
    /// `|s* - λ| / λ`.
    pub relative_gap: f64,
    pub probes: Vec<(f64, String)>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

pub fn threshold_scan(
    phi: &ScalarField,
    s_lo: f64,
    s_hi: f64,
    ctrl: &StepControl,
    params: &ModelParams,
    table: &KernelTable,
    well: &WellCurve,
) -> Result<ThresholdReport> {
    if phi.is_zero() {
        return Err(Error::InvalidParam("threshold scan needs a nonzero field".into()));
    }
    if !(s_lo > 0.0 && s_lo < s_hi) {
        return Err(Error::Bracket(format!(
            "bracket requires 0 < s_lo < s_hi, got ({s_lo}, {s_hi})"
        )));
    }
    let mut warnings = Vec::new();
    let mut probes = Vec::new();
    let probe = |s: f64, probes: &mut Vec<(f64, String)>, warnings: &mut Vec<String>| -> bool {
        let (_, outcome) = run(&phi.scaled(s), ctrl, params, table, well);
        let blew = outcome.is_blowup();
        if let RunOutcome::Inconclusive { reason, .. } = &outcome {
            warnings.push(format!(
                "inconclusive at s = {s} ({reason}); treated as not-blow-up by t_max"
            ));
        }
        probes.push((s, outcome_label(&outcome)));
        blew
    };

    if probe(s_lo, &mut probes, &mut warnings) {
        return Err(Error::Bracket(format!(
            "bracket precondition failed: run at s_lo = {s_lo} blew up"
        )));
    }
    if !probe(s_hi, &mut probes, &mut warnings) {
        return Err(Error::Bracket(format!(
            "bracket precondition failed: run at s_hi = {s_hi} did not blow up"
        )));
    }

    let (mut lo, mut hi) = (s_lo, s_hi);
    while hi - lo > 1e-3 * s_hi {
        let mid = 0.5 * (lo + hi);
        if probe(mid, &mut probes, &mut warnings) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s_star = 0.5 * (lo + hi);
    let nehari_crossing = crate::functionals::lambda_scale(1.0, phi, params, table)?;
    let relative_gap = (s_star - nehari_crossing).abs() / nehari_crossing;
    let passed = relative_gap <= 0.10;
    Ok(ThresholdReport {
        s_star,
        bracket: (lo, hi),
        nehari_crossing,
        relative_gap,
        probes,
        warnings,
        passed,
    })
}

fn outcome_label(outcome: &RunOutcome) -> String {
    match outcome {
        RunOutcome::GlobalDecayed { .. } => "GlobalDecayed".into(),
        RunOutcome::BlewUp { .. } => "BlewUp".into(),
        RunOutcome::Inconclusive { .. } => "Inconclusive".into(),
    }
}

/// Rates experiment: exponential decay of `‖u‖²` for a low-energy global
/// run (with a heat-only calibration), and exponential growth of `‖u‖₆`
/// with the concavity indicator for a blow-up run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatesReport {
    pub decay_run: RunSummary,
    pub decay_fit: RateFit,
    /// Lower bound the decay slope must beat:
    /// `-2 (1-δ₀) λ₁ · 0.95` with `δ₀ = (1+δ₁)/2`.
    pub decay_slope_bound: f64,
    pub heat_fit: RateFit,
    pub heat_expected_slope: f64,
    pub blowup_run: RunSummary,
    pub growth_fit: RateFit,
    pub indicator_positive_final_quarter: bool,
    pub passed: bool,
}

/// Fixed-step heat-only trajectory (nonlocal source off) from the first
/// sine mode; the discrete decay rate is `-(2/dt) ln(1 + dt λ₁)` per unit
/// time, within 1% of `-2λ₁` for `dt λ₁ << 1`.
pub fn heat_calibration_run(grid: GridSpec, dt: f64, steps: usize) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    let mut u = ScalarField::sine_mode(grid, 1, 1, 1);
    let mut t = 0.0;
    let mut m_acc = 0.0;
    let mut push = |u: &ScalarField, t: f64, m_acc: f64| {
        let g = grad_sq(u);
        traj.samples.push(crate::flow::TrajectorySample {
            t,
            l2_sq: l2_sq(u),
            grad_sq: g,
            p_pot: 0.0,
            j: 0.5 * g,
            i: g,
            l6: crate::field::norm_lq(u, 6.0).expect("q = 6"),
            ut_sq: 0.0,
            m_acc,
            linf: u.linf(),
        });
    };
    push(&u, t, m_acc);
    for _ in 0..steps {
        let l2_before = l2_sq(&u);
        u = dirichlet_solve(&u, dt)?;
        let l2_after = l2_sq(&u);
        m_acc += dt * 0.25 * (l2_before + l2_after);
        t += dt;
        push(&u, t, m_acc);
    }
    Ok(traj)
}

/// Growth fits stop this many recorded samples before the detector regime,
/// keeping overflow-contaminated rows out of the window.
pub const GROWTH_FIT_SKIP_LAST: usize = 5;

/// Window covering the last half of recorded samples.
pub fn tail_half_window(traj: &Trajectory) -> Result<(f64, f64)> {
    if traj.samples.len() < 20 {
        return Err(Error::InvalidParam(format!(
            "tail window needs >= 20 samples, got {}",
            traj.samples.len()
        )));
    }
    let start = traj.samples[traj.samples.len() / 2].t;
    let end = traj.samples.last().unwrap().t;
    Ok((start, end))
}

/// Window preceding the blow-up detector regime.
///
/// As blow-up develops the controller drives `dt` down by orders of
/// magnitude, so step-stride recording piles thousands of samples into the
/// final instants; those rows are detector territory, not the exponential
/// growth the fit measures. The regime onset is marked scale-free as the
/// first recorded stride whose mean step size fell to the geometric
/// midpoint `sqrt(dt_init · dt_min)` of the configured range (reaching it
/// takes a sustained halving cascade, which smooth dynamics never
/// triggers). The window ends [`GROWTH_FIT_SKIP_LAST`] samples before that
/// onset, or before the end of the run when no collapse occurred.
pub fn pre_detector_window(traj: &Trajectory, ctrl: &StepControl) -> Result<(f64, f64)> {
    let samples = &traj.samples;
    if samples.len() < GROWTH_FIT_SKIP_LAST + 10 {
        return Err(Error::InvalidParam(format!(
            "pre-detector window needs >= {} samples, got {}",
            GROWTH_FIT_SKIP_LAST + 10,
            samples.len()
        )));
    }
    let thresh = (ctrl.dt_init * ctrl.dt_min).sqrt();
    let mut cut = samples.len();
    for k in 1..samples.len() {
        let mean_dt = (samples[k].t - samples[k - 1].t) / ctrl.record_every as f64;
        if mean_dt <= thresh {
            cut = k;
            break;
        }
    }
    let end_idx = cut.saturating_sub(1 + GROWTH_FIT_SKIP_LAST);
    if end_idx < 10 {
        return Err(Error::InvalidParam(format!(
            "step collapse at sample {cut} leaves too few samples for the growth fit"
        )));
    }
    Ok((samples[0].t, samples[end_idx].t))
}

pub fn rates_experiment(
    well: &WellCurve,
    params: &ModelParams,
    table: &KernelTable,
    ctrl: &StepControl,
    j0_frac: f64,
    heat_dt: f64,
    heat_steps: usize,
) -> Result<(RatesReport, Vec<LabeledRun>)> {
    let phi = well
        .maximizer()
        .ok_or_else(|| Error::InvalidParam("well curve has no maximizer field".into()))?;
    let grid = phi.grid();
    let lam1 = min_eigenvalue(grid);
    let d = well.d_depth();
    let target = j0_frac * d;

    // decay side
    let s_dec = fiber_scale_for_energy(phi, target, FiberBranch::Rising, params, table)?;
    let u0_dec = phi.scaled(s_dec);
    let j0 = energy_j(&u0_dec, params, table);
    let (traj_dec, out_dec) = run(&u0_dec, ctrl, params, table, well);
    let decay_run = summarize(s_dec, &u0_dec, params, table, &traj_dec, &out_dec);
    let decay_fit = fit_rate(&traj_dec, RateQuantity::LogL2Sq, tail_half_window(&traj_dec)?)?;
    let (delta1, _) = well.roots_delta(j0)?;
    let delta0 = 0.5 * (1.0 + delta1);
    let decay_slope_bound = -2.0 * (1.0 - delta0) * lam1 * 0.95;

    // heat-only calibration
    let heat_traj = heat_calibration_run(grid, heat_dt, heat_steps)?;
    let heat_fit = fit_rate(&heat_traj, RateQuantity::LogL2Sq, tail_half_window(&heat_traj)?)?;
    let heat_expected_slope = -2.0 * lam1;

    // blow-up side
    let s_blw = fiber_scale_for_energy(phi, target, FiberBranch::Falling, params, table)?;
    let u0_blw = phi.scaled(s_blw);
    let (traj_blw, out_blw) = run(&u0_blw, ctrl, params, table, well);
    let blowup_run = summarize(s_blw, &u0_blw, params, table, &traj_blw, &out_blw);
    let growth_fit = fit_rate(
        &traj_blw,
        RateQuantity::LogL6,
        pre_detector_window(&traj_blw, ctrl)?,
    )?;

    let series = crate::flow::concavity_diagnostics(&traj_blw, params)?;
    let q0 = 3 * series.indicator.len() / 4;
    let indicator_positive_final_quarter = series.indicator[q0..].iter().all(|&x| x > 0.0);

    let passed = out_dec.is_decayed()
        && out_blw.is_blowup()
        && decay_fit.slope <= decay_slope_bound
        && decay_fit.r_squared.is_some_and(|r| r >= 0.99)
        && (heat_fit.slope - heat_expected_slope).abs() <= 0.01 * heat_expected_slope.abs()
        && growth_fit.slope > 0.0
        && growth_fit.r_squared.is_some_and(|r| r >= 0.95)
        && indicator_positive_final_quarter;

    let report = RatesReport {
        decay_run,
        decay_fit,
        decay_slope_bound,
        heat_fit,
        heat_expected_slope,
        blowup_run,
        growth_fit,
        indicator_positive_final_quarter,
        passed,
    };
    let runs = vec![
        LabeledRun {
            label: "decay".into(),
            trajectory: traj_dec,
        },
        LabeledRun {
            label: "heat".into(),
            trajectory: heat_traj,
        },
        LabeledRun {
            label: "blowup".into(),
            trajectory: traj_blw,
        },
    ];
    Ok((report, runs))
}

/// Critical-energy dichotomy: `u₀ = sφ` prepared with
/// `|J(u₀) - d| <= 1e-6 d` on each side of the Nehari crossing must decay
/// (`I > 0` side, with the gradient bound `‖∇u‖² <= 2p/(p-1) d + tol`)
/// or blow up (`I < 0` side, with `‖∇u‖² >= α₂² - tol` throughout).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalReport {
    pub decay_run: RunSummary,
    pub decay_class: InitialClass,
    pub decay_grad_bound: f64,
    pub decay_grad_ok: bool,
    pub blowup_run: RunSummary,
    pub blowup_class: InitialClass,
    pub alpha2_sq: f64,
    pub blowup_grad_ok: bool,
    pub passed: bool,
}

/// Relative width of the accepted band around the depth for
/// "critical-energy" initial data.
pub const CRITICAL_ENERGY_BAND: f64 = 1e-6;

pub fn critical_experiment(
    well: &WellCurve,
    params: &ModelParams,
    table: &KernelTable,
    ctrl: &StepControl,
) -> Result<(CriticalReport, Vec<LabeledRun>)> {
    let phi = well
        .maximizer()
        .ok_or_else(|| Error::InvalidParam("well curve has no maximizer field".into()))?;
    let p = params.p();
    let d = well.d_depth();
    // target strictly inside the band so bisection wiggle cannot leave it
    let target = d * (1.0 - 0.5 * CRITICAL_ENERGY_BAND);

    let s_dec = fiber_scale_for_energy(phi, target, FiberBranch::Rising, params, table)?;
    let u0_dec = phi.scaled(s_dec);
    let j_dec = energy_j(&u0_dec, params, table);
    if (j_dec - d).abs() > CRITICAL_ENERGY_BAND * d {
        return Err(Error::InvalidParam(format!(
            "prepared decay-side energy {j_dec} is outside the critical band around {d}"
        )));
    }
    let decay_class = classify_initial(&u0_dec, params, table, well);
    let (traj_dec, out_dec) = run(&u0_dec, ctrl, params, table, well);
    let decay_run = summarize(s_dec, &u0_dec, params, table, &traj_dec, &out_dec);
    let decay_grad_bound = 2.0 * p / (p - 1.0) * d;
    let decay_grad_ok = traj_dec
        .samples
        .iter()
        .all(|s| s.grad_sq <= decay_grad_bound + 1e-6);

    let s_blw = fiber_scale_for_energy(phi, target, FiberBranch::Falling, params, table)?;
    let u0_blw = phi.scaled(s_blw);
    let j_blw = energy_j(&u0_blw, params, table);
    if (j_blw - d).abs() > CRITICAL_ENERGY_BAND * d {
        return Err(Error::InvalidParam(format!(
            "prepared blow-up-side energy {j_blw} is outside the critical band around {d}"
        )));
    }
    let blowup_class = classify_initial(&u0_blw, params, table, well);
    let (traj_blw, out_blw) = run(&u0_blw, ctrl, params, table, well);
    let blowup_run = summarize(s_blw, &u0_blw, params, table, &traj_blw, &out_blw);
    let (_, alpha2) = well.alpha_barriers(j_blw)?;
    let alpha2_sq = alpha2 * alpha2;
    let blowup_grad_ok = traj_blw
        .samples
        .iter()
        .all(|s| s.grad_sq >= alpha2_sq - 1e-6);

    let passed = decay_class == InitialClass::WPrime
        && blowup_class == InitialClass::ZPrime
        && out_dec.is_decayed()
        && out_blw.is_blowup()
        && decay_grad_ok
        && blowup_grad_ok;

    let report = CriticalReport {
        decay_run,
        decay_class,
        decay_grad_bound,
        decay_grad_ok,
        blowup_run,
        blowup_class,
        alpha2_sq,
        blowup_grad_ok,
        passed,
    };
    let runs = vec![
        LabeledRun {
            label: "decay".into(),
            trajectory: traj_dec,
        },
        LabeledRun {
            label: "blowup".into(),
            trajectory: traj_blw,
        },
    ];
    Ok((report, runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::TrajectorySample;
    use crate::well::{estimate_cstar, OptimizerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synthetic_traj(ts: &[f64], q: impl Fn(f64) -> f64) -> Trajectory {
        let mut traj = Trajectory::default();
        for &t in ts {
            let v = q(t);
            traj.samples.push(TrajectorySample {
                t,
                l2_sq: v,
                grad_sq: 0.0,
                p_pot: 0.0,
                j: 0.0,
                i: 0.0,
                l6: v,
                ut_sq: 0.0,
                m_acc: 0.0,
                linf: 0.0,
            });
        }
        traj
    }

    #[test]
    fn fit_rate_exact_exponential() {
        let ts: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let traj = synthetic_traj(&ts, |t| 3.0 * (-2.0 * t).exp());
        let fit = fit_rate(&traj, RateQuantity::LogL2Sq, (0.0, 5.0)).unwrap();
        assert!((fit.slope + 2.0).abs() <= 1e-12);
        assert!((fit.intercept - 3.0f64.ln()).abs() <= 1e-12);
        assert!((fit.r_squared.unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn fit_rate_degenerate_and_error_cases() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let constant = synthetic_traj(&ts, |_| 7.0);
        let fit = fit_rate(&constant, RateQuantity::LogL2Sq, (0.0, 20.0)).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert!(fit.r_squared.is_none());

        let with_zero = synthetic_traj(&ts, |t| if t > 10.0 { 0.0 } else { 1.0 });
        assert!(fit_rate(&with_zero, RateQuantity::LogL2Sq, (0.0, 20.0)).is_err());

        let few = synthetic_traj(&ts[..5], |_| 1.0);
        assert!(fit_rate(&few, RateQuantity::LogL2Sq, (0.0, 20.0)).is_err());
    }

    fn small_well(m: usize, p: f64) -> (GridSpec, ModelParams, KernelTable, WellCurve) {
        let grid = GridSpec::new(m).unwrap();
        let params = ModelParams::new(p).unwrap();
        let table = KernelTable::new(grid);
        let opt = OptimizerConfig {
            starts: 3,
            max_iter: 2000,
            ..OptimizerConfig::default()
        };
        let curve = estimate_cstar(grid, &params, &table, &opt);
        (grid, params, table, curve)
    }

    #[test]
    fn classify_initial_examples() {
        let (grid, params, table, well) = small_well(6, 2.0);
        assert_eq!(
            classify_initial(&ScalarField::zeros(grid), &params, &table, &well),
            InitialClass::WPrime
        );
        let phi = well.maximizer().unwrap().clone();
        let lam = crate::functionals::lambda_scale(1.0, &phi, &params, &table).unwrap();
        let below = phi.scaled(0.5 * lam);
        let above = phi.scaled(1.5 * lam);
        assert!(energy_j(&below, &params, &table) <= well.d_depth());
        assert!(energy_j(&above, &params, &table) <= well.d_depth());
        assert_eq!(classify_initial(&below, &params, &table, &well), InitialClass::WPrime);
        assert_eq!(classify_initial(&above, &params, &table, &well), InitialClass::ZPrime);
        // well above the depth on the rising branch: J > d
        let big = phi.scaled(0.999 * lam);
        if energy_j(&big, &params, &table) > well.d_depth() {
            assert_eq!(classify_initial(&big, &params, &table, &well), InitialClass::Outside);
        }
    }

    #[test]
    fn fiber_scale_hits_energy_targets_on_both_branches() {
        let (_, params, table, well) = small_well(6, 2.0);
        let phi = well.maximizer().unwrap();
        let d = well.d_depth();
        for frac in [0.3, 0.72, 0.99] {
            let target = frac * d;
            let s_lo = fiber_scale_for_energy(phi, target, FiberBranch::Rising, &params, &table).unwrap();
            let s_hi = fiber_scale_for_energy(phi, target, FiberBranch::Falling, &params, &table).unwrap();
            assert!(s_lo < s_hi);
            for s in [s_lo, s_hi] {
                let j = energy_j(&phi.scaled(s), &params, &table);
                assert!((j - target).abs() <= 1e-9 * d, "J = {j} target {target}");
            }
            assert!(nehari_i(&phi.scaled(s_lo), &params, &table) > 0.0);
            assert!(nehari_i(&phi.scaled(s_hi), &params, &table) < 0.0);
        }
        assert!(fiber_scale_for_energy(phi, 2.0 * d, FiberBranch::Rising, &params, &table).is_err());
        assert!(
            fiber_scale_for_energy(&ScalarField::zeros(phi.grid()), 0.1, FiberBranch::Rising, &params, &table)
                .is_err()
        );
    }

    #[test]
    fn vacuum_contrapositive_projection_exceeds_level() {
        // w = λ(δ₀, u) u for δ₀ inside (δ₁, δ₂) has J(w) >= d(δ₀) > e.
        let (grid, params, table, well) = small_well(5, 2.0);
        let e = 0.8 * well.d_depth();
        let (d1, d2) = well.roots_delta(e).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..10 {
            let u = ScalarField::random(grid, &mut rng, -1.0, 1.0);
            for frac in [0.25, 0.5, 0.75] {
                let delta0 = d1 + frac * (d2 - d1);
                let lam = crate::functionals::lambda_scale(delta0, &u, &params, &table).unwrap();
                let w = u.scaled(lam);
                let j_w = energy_j(&w, &params, &table);
                let d_delta0 = well.d_of_delta(delta0).unwrap();
                assert!(j_w >= d_delta0 * (1.0 - 1e-9));
                assert!(d_delta0 > e);
            }
        }
    }

    #[test]
    fn vacuum_check_requires_snapshots_and_valid_level() {
        let (_, params, table, well) = small_well(5, 2.0);
        let traj = Trajectory::default();
        assert!(vacuum_check(&traj, &well, &params, &table, 0.5 * well.d_depth(), 8).is_err());
        assert!(vacuum_check(&traj, &well, &params, &table, well.d_depth() * 2.0, 8).is_err());
    }

    #[test]
    fn heat_calibration_matches_implicit_euler_rate() {
        let grid = GridSpec::new(8).unwrap();
        let lam1 = min_eigenvalue(grid);
        let dt = 2e-4;
        let traj = heat_calibration_run(grid, dt, 400).unwrap();
        let fit = fit_rate(&traj, RateQuantity::LogL2Sq, tail_half_window(&traj).unwrap()).unwrap();
        let expected = -2.0 / dt * (1.0 + dt * lam1).ln();
        assert!(
            (fit.slope - expected).abs() <= 1e-6 * expected.abs(),
            "slope {} vs implicit-Euler rate {expected}",
            fit.slope
        );
        assert!((fit.slope + 2.0 * lam1).abs() <= 0.01 * 2.0 * lam1);
        assert!(fit.r_squared.unwrap() > 0.999999);
    }
}
