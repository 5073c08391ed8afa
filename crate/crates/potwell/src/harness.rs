//! Command-layer plumbing: JSON configuration, the three commands behind
//! the `potwell` CLI, and reproducible artifact output.
//!
//! Every output embeds the fully resolved config and seed. Files are
//! written to a temporary name and renamed into place, so failed commands
//! leave no partial artifacts. With a fixed seed and config, repeated
//! invocations produce byte-identical numeric outputs on the same platform
//! (all compute is single-threaded and deterministic).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::experiments::{
    critical_experiment, rates_experiment, threshold_scan, vacuum_experiment,
};
use crate::field::GridSpec;
use crate::flow::{run, RunOutcome, StepControl};
use crate::functionals::ModelParams;
use crate::nonlocal::KernelTable;
use crate::well::{estimate_cstar, OptimizerConfig, Provenance, WellCurve};

/// Experiment selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Vacuum,
    Threshold,
    Rates,
    Critical,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vacuum" => Ok(ExperimentKind::Vacuum),
            "threshold" => Ok(ExperimentKind::Threshold),
            "rates" => Ok(ExperimentKind::Rates),
            "critical" => Ok(ExperimentKind::Critical),
            other => Err(Error::Config(format!(
                "unknown experiment '{other}' (expected vacuum|threshold|rates|critical)"
            ))),
        }
    }
}

/// Per-experiment knobs, all with workable defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Which experiment `potwell experiment` runs unless overridden on the
    /// command line.
    pub which: Option<ExperimentKind>,
    /// Vacuum level as a fraction of the depth.
    pub e_frac: f64,
    /// δ-grid size inside (δ₁, δ₂).
    pub delta_grid_size: usize,
    /// Threshold bracket as fractions of the Nehari crossing.
    pub s_lo_frac: f64,
    pub s_hi_frac: f64,
    /// Initial energy of the rates runs as a fraction of the depth.
    pub rates_j0_frac: f64,
    /// Heat-only calibration stepping.
    pub heat_dt: f64,
    pub heat_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            which: None,
            e_frac: 0.8,
            delta_grid_size: 32,
            s_lo_frac: 0.8,
            s_hi_frac: 1.25,
            rates_j0_frac: 0.5,
            heat_dt: 2e-4,
            heat_steps: 1500,
        }
    }
}

/// The single JSON configuration document all commands consume.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub m: usize,
    pub p: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub control: StepControl,
    pub experiment: ExperimentConfig,
    pub out_dir: PathBuf,
    /// Existing well artifact to reuse (`well.json`; the maximizer
    /// checkpoint is looked up next to it). When absent, commands that need
    /// the well estimate it on the fly from the config seed.
    pub well_file: Option<PathBuf>,
    /// Default initial data for `simulate` when `--u0` is not given.
    pub u0: Option<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            m: 12,
            p: 2.0,
            seed: 42,
            optimizer: OptimizerConfig::default(),
            control: StepControl::default(),
            experiment: ExperimentConfig::default(),
            out_dir: PathBuf::from("out"),
            well_file: None,
            u0: None,
        }
    }
}

impl SimConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: SimConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.m)?;
        ModelParams::new(self.p)?;
        self.control.validate()?;
        if self.optimizer.starts == 0 {
            return Err(Error::Config("optimizer needs at least one start".into()));
        }
        Ok(())
    }

    fn grid(&self) -> GridSpec {
        GridSpec::new(self.m).expect("validated")
    }

    fn params(&self) -> ModelParams {
        ModelParams::new(self.p).expect("validated")
    }

    /// Optimizer config with the top-level seed folded in.
    fn optimizer_with_seed(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seed,
            ..self.optimizer.clone()
        }
    }
}

/// Writes `bytes` via a temporary sibling and rename, so no partial file
/// survives an interrupted command.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", dir.display()),
        )));
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn require_out_dir(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", dir.display()),
        )));
    }
    Ok(())
}

/// The `well.json` document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WellDoc {
    pub p: f64,
    pub m: usize,
    pub c_star: f64,
    pub d_depth: f64,
    pub starts: usize,
    pub iterations: usize,
    pub seed: u64,
    pub provenance: Provenance,
    pub config: SimConfig,
}

/// Number of rows in `d_of_delta.csv`.
pub const D_CURVE_POINTS: usize = 200;

/// Estimates the well and writes `well.json`, `maximizer.pwf`, and
/// `d_of_delta.csv` into the output directory.
pub fn cmd_well(config: &SimConfig) -> Result<()> {
    config.validate()?;
    require_out_dir(&config.out_dir)?;
    let grid = config.grid();
    let params = config.params();
    let table = KernelTable::new(grid);
    let curve = estimate_cstar(grid, &params, &table, &config.optimizer_with_seed());
    let provenance = curve
        .provenance()
        .expect("estimated curves carry provenance")
        .clone();

    let doc = WellDoc {
        p: params.p(),
        m: grid.m(),
        c_star: curve.c_star(),
        d_depth: curve.d_depth(),
        starts: provenance.starts,
        iterations: provenance.iterations,
        seed: provenance.seed,
        provenance,
        config: config.clone(),
    };
    write_json_atomic(&config.out_dir.join("well.json"), &doc)?;

    let maximizer = curve
        .maximizer()
        .ok_or_else(|| Error::InvalidParam("estimation produced no maximizer".into()))?;
    // write through a temp name as well
    let max_path = config.out_dir.join("maximizer.pwf");
    let tmp = config.out_dir.join("maximizer.pwf.tmp");
    write_checkpoint(&tmp, maximizer, 0, 0.0)?;
    fs::rename(&tmp, &max_path)?;

    let mut csv = String::from("delta,d\n");
    for i in 1..=D_CURVE_POINTS {
        let delta = params.p() * i as f64 / (D_CURVE_POINTS as f64 + 1.0);
        let d = curve.d_of_delta(delta)?;
        csv.push_str(&format!("{delta:.16e},{d:.16e}\n"));
    }
    write_atomic(&config.out_dir.join("d_of_delta.csv"), csv.as_bytes())?;
    Ok(())
}

/// Loads a well artifact (`well.json` plus `maximizer.pwf` next to it).
pub fn load_well(path: &Path) -> Result<WellCurve> {
    let text = fs::read_to_string(path)?;
    let doc: WellDoc = serde_json::from_str(&text)?;
    let max_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("maximizer.pwf");
    let maximizer = read_checkpoint(&max_path)?.field;
    if maximizer.grid().m() != doc.m {
        return Err(Error::Checkpoint(format!(
            "maximizer grid m = {} does not match well.json m = {}",
            maximizer.grid().m(),
            doc.m
        )));
    }
    Ok(WellCurve::from_parts(
        doc.c_star,
        doc.p,
        Some(maximizer),
        Some(doc.provenance),
    ))
}

/// Gets the well for a command: from `config.well_file` when set, else
/// estimated on the fly.
fn obtain_well(config: &SimConfig, table: &KernelTable) -> Result<WellCurve> {
    match &config.well_file {
        Some(path) => load_well(path),
        None => Ok(estimate_cstar(
            config.grid(),
            &config.params(),
            table,
            &config.optimizer_with_seed(),
        )),
    }
}

/// Source of initial data for `simulate`.
#[derive(Debug, Clone)]
pub enum U0Source {
    Checkpoint(PathBuf),
    /// `s` times the stored maximizer (which is normalized to `‖∇u‖ = 1`).
    ScaledMaximizer(f64),
}

impl std::str::FromStr for U0Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("builtin:scaled-maximizer:") {
            let scale: f64 = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad scale in u0 spec '{s}'")))?;
            Ok(U0Source::ScaledMaximizer(scale))
        } else if s.starts_with("builtin:") {
            Err(Error::Config(format!("unknown builtin u0 '{s}'")))
        } else {
            Ok(U0Source::Checkpoint(PathBuf::from(s)))
        }
    }
}

/// The `outcome.json` document of a simulate run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeDoc {
    pub outcome: RunOutcome,
    pub u0_source: String,
    pub d_depth: f64,
    pub c_star: f64,
    pub steps: usize,
    pub samples: usize,
    pub snapshots: usize,
    pub max_abs_residual: f64,
    pub config: SimConfig,
}

/// Runs the flow from `u0` and writes `trajectory.csv`, `outcome.json`,
/// and snapshot checkpoints under `snapshots/`.
pub fn cmd_simulate(config: &SimConfig, u0_source: &U0Source) -> Result<RunOutcome> {
    config.validate()?;
    require_out_dir(&config.out_dir)?;
    let grid = config.grid();
    let params = config.params();
    let table = KernelTable::new(grid);
    let well = obtain_well(config, &table)?;

    let (u0, label) = match u0_source {
        U0Source::Checkpoint(path) => {
            let ck = read_checkpoint(path)?;
            if ck.field.grid() != grid {
                return Err(Error::Checkpoint(format!(
                    "checkpoint grid m = {} does not match config m = {}",
                    ck.field.grid().m(),
                    grid.m()
                )));
            }
            (ck.field, format!("checkpoint:{}", path.display()))
        }
        U0Source::ScaledMaximizer(s) => {
            let phi = well.maximizer().ok_or_else(|| {
                Error::InvalidParam("well curve has no maximizer for builtin u0".into())
            })?;
            (phi.scaled(*s), format!("builtin:scaled-maximizer:{s}"))
        }
    };

    let (traj, outcome) = run(&u0, &config.control, &params, &table, &well);

    write_atomic(
        &config.out_dir.join("trajectory.csv"),
        traj.to_csv(well.d_depth()).as_bytes(),
    )?;

    let snap_dir = config.out_dir.join("snapshots");
    if !snap_dir.is_dir() {
        fs::create_dir(&snap_dir)?;
    }
    for snap in &traj.snapshots {
        let path = snap_dir.join(format!("snap_{:08}.pwf", snap.step));
        let tmp = snap_dir.join(format!("snap_{:08}.pwf.tmp", snap.step));
        write_checkpoint(&tmp, &snap.field, snap.step as u64, snap.t)?;
        fs::rename(&tmp, &path)?;
    }

    let doc = OutcomeDoc {
        outcome: outcome.clone(),
        u0_source: label,
        d_depth: well.d_depth(),
        c_star: well.c_star(),
        steps: traj.step_stats.len(),
        samples: traj.samples.len(),
        snapshots: traj.snapshots.len(),
        max_abs_residual: traj.max_abs_residual(),
        config: config.clone(),
    };
    write_json_atomic(&config.out_dir.join("outcome.json"), &doc)?;
    Ok(outcome)
}

/// Experiment report wrapper with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentDoc<T: Serialize> {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub d_depth: f64,
    pub c_star: f64,
    pub report: T,
    pub config: SimConfig,
}

/// Runs one experiment, writes its JSON report plus per-run trajectory
/// CSVs, and returns whether the theorem-level checks passed.
pub fn cmd_experiment(config: &SimConfig, which: ExperimentKind) -> Result<bool> {
    config.validate()?;
    require_out_dir(&config.out_dir)?;
    let grid = config.grid();
    let params = config.params();
    let table = KernelTable::new(grid);
    let well = obtain_well(config, &table)?;
    let ctrl = &config.control;
    let exp = &config.experiment;

    let passed = match which {
        ExperimentKind::Vacuum => {
            let (report, runs) =
                vacuum_experiment(&well, &params, &table, ctrl, exp.e_frac, exp.delta_grid_size)?;
            write_run_csvs(config, "vacuum", &runs, well.d_depth())?;
            write_experiment_doc(config, which, &well, &report, "vacuum.json")?;
            report.passed
        }
        ExperimentKind::Threshold => {
            let phi = well.maximizer().ok_or_else(|| {
                Error::InvalidParam("well curve has no maximizer field".into())
            })?;
            let lam = crate::functionals::lambda_scale(1.0, phi, &params, &table)?;
            let report = threshold_scan(
                phi,
                exp.s_lo_frac * lam,
                exp.s_hi_frac * lam,
                ctrl,
                &params,
                &table,
                &well,
            )?;
            write_experiment_doc(config, which, &well, &report, "threshold.json")?;
            report.passed
        }
        ExperimentKind::Rates => {
            let (report, runs) = rates_experiment(
                &well,
                &params,
                &table,
                ctrl,
                exp.rates_j0_frac,
                exp.heat_dt,
                exp.heat_steps,
            )?;
            write_run_csvs(config, "rates", &runs, well.d_depth())?;
            write_experiment_doc(config, which, &well, &report, "rates.json")?;
            report.passed
        }
        ExperimentKind::Critical => {
            let (report, runs) = critical_experiment(&well, &params, &table, ctrl)?;
            write_run_csvs(config, "critical", &runs, well.d_depth())?;
            write_experiment_doc(config, which, &well, &report, "critical.json")?;
            report.passed
        }
    };
    Ok(passed)
}

fn write_run_csvs(
    config: &SimConfig,
    experiment: &str,
    runs: &[crate::experiments::LabeledRun],
    d_depth: f64,
) -> Result<()> {
    for run in runs {
        let path = config
            .out_dir
            .join(format!("{experiment}_{}_trajectory.csv", run.label));
        write_atomic(&path, run.trajectory.to_csv(d_depth).as_bytes())?;
    }
    Ok(())
}

fn write_experiment_doc<T: Serialize>(
    config: &SimConfig,
    which: ExperimentKind,
    well: &WellCurve,
    report: &T,
    file: &str,
) -> Result<()> {
    let doc = ExperimentDoc {
        experiment: which,
        seed: config.seed,
        d_depth: well.d_depth(),
        c_star: well.c_star(),
        report,
        config: config.clone(),
    };
    write_json_atomic(&config.out_dir.join(file), &doc)
}

/// Exit-code mapping: 0 success, 1 operational error, 2 theorem-check
/// failure.
pub fn exit_code_for(result: &Result<bool>) -> i32 {
    match result {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(_) => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u0_source_parsing() {
        assert!(matches!(
            "builtin:scaled-maximizer:0.5".parse::<U0Source>().unwrap(),
            U0Source::ScaledMaximizer(s) if s == 0.5
        ));
        assert!(matches!(
            "some/path.pwf".parse::<U0Source>().unwrap(),
            U0Source::Checkpoint(_)
        ));
        assert!("builtin:mystery".parse::<U0Source>().is_err());
        assert!("builtin:scaled-maximizer:abc".parse::<U0Source>().is_err());
    }

    #[test]
    fn experiment_kind_parsing() {
        assert_eq!("vacuum".parse::<ExperimentKind>().unwrap(), ExperimentKind::Vacuum);
        assert_eq!("rates".parse::<ExperimentKind>().unwrap(), ExperimentKind::Rates);
        assert!("volcano".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn config_default_roundtrip_and_validation() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.m, cfg.m);
        assert_eq!(back.seed, cfg.seed);

        // minimal config: all fields defaulted
        let minimal: SimConfig = serde_json::from_str("{}").unwrap();
        minimal.validate().unwrap();

        let bad: SimConfig = serde_json::from_str(r#"{"m": 2}"#).unwrap();
        assert!(bad.validate().is_err());
        let bad: SimConfig = serde_json::from_str(r#"{"p": 7.0}"#).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn missing_out_dir_is_an_error_with_no_partials() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let cfg = SimConfig {
            m: 5,
            out_dir: missing.clone(),
            ..SimConfig::default()
        };
        assert!(cmd_well(&cfg).is_err());
        assert!(!missing.exists());
    }

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code_for(&Ok(true)), 0);
        assert_eq!(exit_code_for(&Ok(false)), 2);
        assert_eq!(exit_code_for(&Err(Error::Config("x".into()))), 1);
    }
}
