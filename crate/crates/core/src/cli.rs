//! Command-line front end.
//!
//! Every subcommand reads a JSON config, prints a JSON summary on stdout and,
//! with `--out DIR`, writes `summary.json` (plus `traces.csv` for `simulate`
//! and the frequency response `response.csv` for `norms`) into `DIR`.
//! Exit status: 0 success, 1 invalid input or config, 2 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::control::{
    h2_norm, h2_norm_quadrature, hinf_norm_brl, hinf_peak, spectral_radius, HinfOptions, StateSpaceSystem,
};
use crate::dpkalman::{design_kalman, ParticipantModel};
use crate::error::{Error, Result};
use crate::linalg::{from_rows, max_singular_complex, to_rows, Mat};
use crate::privacy::{gaussian_sigma, verify_dp_scalar, Adjacency, PrivacyBudget};
use crate::sdp::{write_triplets, SolverOptions};
use crate::synthesis::{
    stable_sdp, synth_stable_joint, synth_unstable_joint, unstable_sdp, JointSynthesis, LambdaMode,
    SynthesisParticipant,
};
use crate::traffic::{run_simulation, summary_json, write_traces_csv, SimulationConfig, F17};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "privfilter",
    version,
    about = "Differentially private filter design and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving summary.json (and CSV output where applicable).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Noise multiplier κ and Gaussian noise level for a budget and sensitivity.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        sensitivity: Option<f64>,
    },
    /// H2 and H-infinity norms of a system {"A","B","C","D"}.
    Norms {
        #[command(flatten)]
        common: Common,
    },
    /// Steady-state Kalman predictors and their predicted MSE.
    Kalman {
        #[command(flatten)]
        common: Common,
    },
    /// Privacy-aware filter synthesis with independent re-verification.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Write the semidefinite program in sparse-triplet form to this file.
        #[arg(long)]
        dump_sdp: Option<PathBuf>,
    },
    /// Monte Carlo evaluation of the private average-velocity estimators.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Half-line DP margin of the scalar Gaussian mechanism.
    VerifyDp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        sensitivity: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
}

/// Failure of a subcommand together with its exit status.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_validation() {
                EXIT_INVALID
            } else {
                EXIT_NUMERICAL
            },
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs the command line `argv` (program name first), printing to the given
/// streams; returns the exit status.
pub fn cli_dispatch<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Calibrate {
            common,
            epsilon,
            delta,
            sensitivity,
        } => calibrate(&common, epsilon, delta, sensitivity, stdout),
        Command::Norms { common } => norms(&common, stdout),
        Command::Kalman { common } => kalman(&common, stdout),
        Command::Synth { common, dump_sdp } => synth(&common, dump_sdp.as_deref(), stdout),
        Command::Simulate {
            common,
            seed,
            trials,
            threads,
        } => simulate(&common, seed, trials, threads, stdout),
        Command::VerifyDp {
            common,
            sigma,
            sensitivity,
            epsilon,
            delta,
        } => verify_dp(&common, sigma, sensitivity, epsilon, delta, stdout),
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn optional_config<T: for<'de> Deserialize<'de> + Default>(common: &Common) -> CliResult<T> {
    match &common.config {
        Some(p) => read_config(p),
        None => Ok(T::default()),
    }
}

fn required_config<T: for<'de> Deserialize<'de>>(common: &Common) -> CliResult<T> {
    match &common.config {
        Some(p) => read_config(p),
        None => Err(invalid("--config is required")),
    }
}

fn ensure_out(common: &Common) -> CliResult<Option<&Path>> {
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
            Ok(Some(dir.as_path()))
        }
        None => Ok(None),
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Prints the summary and stores it as `summary.json` when requested.
fn emit(common: &Common, summary: &Value, stdout: &mut dyn Write) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    if let Some(dir) = ensure_out(common)? {
        write_file(dir, "summary.json", text.as_bytes())?;
    }
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| invalid(format!("stdout: {e}")))
}

/// JSON number printed in shortest round-trip form; non-finite values are
/// `null`.
fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

fn mat_json(m: &Mat) -> Value {
    Value::Array(
        to_rows(m)
            .into_iter()
            .map(|r| Value::Array(r.into_iter().map(num).collect()))
            .collect(),
    )
}

fn pick(flag: Option<f64>, config: Option<f64>, name: &str) -> CliResult<f64> {
    flag.or(config)
        .ok_or_else(|| invalid(format!("missing `{name}` (flag --{name} or config field)")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BudgetConfig {
    epsilon: Option<f64>,
    delta: Option<f64>,
    sensitivity: Option<f64>,
    sigma: Option<f64>,
}

fn calibrate(
    common: &Common,
    epsilon: Option<f64>,
    delta: Option<f64>,
    sensitivity: Option<f64>,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let cfg: BudgetConfig = optional_config(common)?;
    let budget = PrivacyBudget::new(pick(epsilon, cfg.epsilon, "epsilon")?, pick(delta, cfg.delta, "delta")?)?;
    let sens = pick(sensitivity, cfg.sensitivity.or(Some(1.0)), "sensitivity")?;
    let sigma = gaussian_sigma(sens, &budget)?;
    let summary = json!({
        "epsilon": num(budget.epsilon()),
        "delta": num(budget.delta()),
        "sensitivity": num(sens),
        "kappa": num(budget.kappa()),
        "sigma": num(sigma),
    });
    emit(common, &summary, stdout)
}

fn verify_dp(
    common: &Common,
    sigma: Option<f64>,
    sensitivity: Option<f64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let cfg: BudgetConfig = optional_config(common)?;
    let budget = PrivacyBudget::new(pick(epsilon, cfg.epsilon, "epsilon")?, pick(delta, cfg.delta, "delta")?)?;
    let sens = pick(sensitivity, cfg.sensitivity.or(Some(1.0)), "sensitivity")?;
    // without an explicit sigma, check the calibrated mechanism
    let sigma = match sigma.or(cfg.sigma) {
        Some(s) => s,
        None => gaussian_sigma(sens, &budget)?,
    };
    let margin = verify_dp_scalar(sigma, sens, &budget)?;
    let summary = json!({
        "epsilon": num(budget.epsilon()),
        "delta": num(budget.delta()),
        "sensitivity": num(sens),
        "sigma": num(sigma),
        "margin": num(margin),
        "satisfied": margin >= 0.0,
    });
    emit(common, &summary, stdout)
}

/// A system in row-major JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSpec {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
}

fn matrix(rows: &[Vec<f64>], name: &str, shape_hint: Option<(usize, usize)>) -> Result<Mat> {
    if rows.is_empty() {
        if let Some((r, c)) = shape_hint {
            return Ok(Mat::zeros(r, c));
        }
    }
    from_rows(rows).map_err(|e| Error::Invalid(format!("matrix `{name}`: {e}")))
}

impl SystemSpec {
    fn build(&self) -> Result<StateSpaceSystem> {
        let a = matrix(&self.a, "A", None)?;
        let b = matrix(&self.b, "B", None)?;
        let c = matrix(&self.c, "C", None)?;
        let d = matrix(&self.d, "D", Some((c.nrows(), b.ncols())))?;
        StateSpaceSystem::new(a, b, c, d)
    }
}

fn norms(common: &Common, stdout: &mut dyn Write) -> CliResult<()> {
    let spec: SystemSpec = required_config(common)?;
    let sys = spec.build()?;
    let radius = spectral_radius(sys.a())?;
    if radius >= 1.0 {
        return Err(Error::Domain(format!(
            "system is not Schur stable (spectral radius {radius:.6}); norms are infinite"
        ))
        .into());
    }
    let h2 = h2_norm(&sys)?;
    let peak = hinf_peak(&sys, &HinfOptions::default())?;
    let summary = json!({
        "spectral_radius": num(radius),
        "h2": num(h2),
        "h2_quadrature": num(h2_norm_quadrature(&sys, 4096)?),
        "hinf": num(peak.norm),
        "hinf_frequency": num(peak.omega),
        "hinf_bisection": num(hinf_norm_brl(&sys, 1e-6)?),
    });
    if let Some(dir) = ensure_out(common)? {
        let mut csv = String::from("omega,sigma_max\n");
        let points = 512;
        for k in 0..=points {
            let w = std::f64::consts::PI * k as f64 / points as f64;
            let g = max_singular_complex(&sys.freq_response(w)?);
            csv.push_str(&format!("{},{}\n", F17::format(w), F17::format(g)));
        }
        write_file(dir, "response.csv", csv.as_bytes())?;
    }
    emit(common, &summary, stdout)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticipantSpec {
    #[serde(flatten)]
    system: SystemSpec,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    #[serde(default)]
    x0_mean: Option<Vec<f64>>,
    #[serde(default)]
    extra_noise_std: f64,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(default)]
    selection: Option<Vec<usize>>,
}

impl ParticipantSpec {
    fn build(&self) -> Result<ParticipantModel> {
        let system = self.system.build()?;
        let n = system.n_states();
        let l = matrix(&self.l, "L", None)?;
        let x0 = self.x0_mean.clone().unwrap_or_else(|| vec![0.0; n]);
        ParticipantModel::new(system, l, nalgebra::DVector::from_vec(x0))
    }

    fn adjacency(&self, i: usize) -> Result<Adjacency> {
        let rho = self
            .rho
            .ok_or_else(|| Error::Invalid(format!("participant {i}: field `rho` is required")))?;
        let selection = self
            .selection
            .clone()
            .ok_or_else(|| Error::Invalid(format!("participant {i}: field `selection` is required")))?;
        Adjacency::new(rho, selection)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KalmanConfig {
    participants: Vec<ParticipantSpec>,
}

fn annotate(i: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Invalid(m) => Error::Invalid(format!("participant {i}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("participant {i}: {m}")),
        Error::Domain(m) => Error::Domain(format!("participant {i}: {m}")),
        other => other,
    }
}

fn kalman(common: &Common, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg: KalmanConfig = required_config(common)?;
    let parts = cfg
        .participants
        .iter()
        .enumerate()
        .map(|(i, p)| p.build().map_err(annotate(i)))
        .collect::<Result<Vec<_>>>()?;
    let extra: Vec<f64> = cfg.participants.iter().map(|p| p.extra_noise_std).collect();
    let design = design_kalman(&parts, &extra)?;
    let per: Vec<Value> = design
        .riccati
        .iter()
        .zip(&design.per_participant_mse)
        .map(|(sol, mse)| {
            json!({
                "P": mat_json(&sol.p),
                "gain": mat_json(&sol.gain),
                "filter_gain": mat_json(&sol.filter_gain),
                "filtered_P": mat_json(&sol.filtered_p),
                "mse": num(*mse),
                "riccati_residual": num(sol.residual),
            })
        })
        .collect();
    let summary = json!({
        "predicted_mse": num(design.predicted_mse),
        "participants": per,
    });
    emit(common, &summary, stdout)
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
enum SynthMethod {
    #[default]
    Auto,
    Stable,
    Unstable,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    participants: Vec<ParticipantSpec>,
    epsilon: f64,
    delta: f64,
    /// Cap on the shared sensitivity bound; `null` leaves it free.
    #[serde(default)]
    lambda_cap: Option<f64>,
    #[serde(default)]
    method: SynthMethod,
}

fn synth(common: &Common, dump: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg: SynthConfig = required_config(common)?;
    let budget = PrivacyBudget::new(cfg.epsilon, cfg.delta)?;
    if cfg.participants.is_empty() {
        return Err(invalid("config field `participants`: list at least one participant"));
    }
    let mut parts = Vec::with_capacity(cfg.participants.len());
    let mut all_stable = true;
    for (i, p) in cfg.participants.iter().enumerate() {
        let sys = p.system.build().map_err(annotate(i))?;
        let l = matrix(&p.l, "L", None).map_err(annotate(i))?;
        all_stable &= spectral_radius(sys.a())? < 1.0;
        parts.push(SynthesisParticipant::new(sys, l, p.adjacency(i)?).map_err(annotate(i))?);
    }
    let restricted = match cfg.method {
        SynthMethod::Auto => !all_stable,
        SynthMethod::Stable => false,
        SynthMethod::Unstable => true,
    };
    let mode = match cfg.lambda_cap {
        Some(cap) => LambdaMode::Capped(cap),
        None => LambdaMode::Free,
    };
    if let Some(path) = dump {
        let prob = if restricted {
            unstable_sdp(&parts, &budget, mode)?
        } else {
            stable_sdp(&parts, &budget, mode)?
        };
        fs::write(path, write_triplets(&prob)).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    }
    let opts = SolverOptions::default();
    let joint: JointSynthesis = if restricted {
        synth_unstable_joint(&parts, &budget, mode, &opts)?
    } else {
        synth_stable_joint(&parts, &budget, mode, &opts)?
    };
    let results: Vec<Value> = joint
        .results
        .iter()
        .map(|r| {
            json!({
                "F": mat_json(&r.filter.f),
                "G": mat_json(&r.filter.g),
                "H": mat_json(&r.filter.h),
                "K": mat_json(&r.filter.k),
                "mu": num(r.mu),
                "verification": serde_json::to_value(&r.verified).expect("report serializes"),
            })
        })
        .collect();
    let verified = joint.all_verified();
    let summary = json!({
        "method": if restricted { "unstable" } else { "stable" },
        "lambda": num(joint.lambda),
        "mu_total": num(joint.mu_total),
        "objective": num(joint.objective),
        "kappa": num(joint.kappa),
        "duality_gap": num(joint.duality_gap),
        "verified": verified,
        "participants": results,
    });
    emit(common, &summary, stdout)?;
    if !verified {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: "independent re-verification of the synthesized filters failed".into(),
        });
    }
    Ok(())
}

fn simulate(
    common: &Common,
    seed: Option<u64>,
    trials: Option<usize>,
    threads: Option<usize>,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let path = common.config.as_ref().ok_or_else(|| invalid("--config is required"))?;
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut cfg: SimulationConfig =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    cfg.validate()?;
    let output = run_simulation(&cfg)?;
    let summary = summary_json(&output);
    if let Some(dir) = ensure_out(common)? {
        let file = fs::File::create(dir.join("traces.csv"))
            .map_err(|e| invalid(format!("{}: {e}", dir.join("traces.csv").display())))?;
        write_traces_csv(&output.traces, std::io::BufWriter::new(file))
            .map_err(|e| invalid(format!("traces.csv: {e}")))?;
        write_file(dir, "summary.json", summary.as_bytes())?;
    }
    stdout
        .write_all(summary.as_bytes())
        .map_err(|e| invalid(format!("stdout: {e}")))
}
