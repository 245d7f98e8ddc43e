//! `qpbo`: run the regularized flow, the identity suite and the studies from a
//! JSON config.
//!
//! Every exit path prints one final line `RESULT {"status":…,"summary_path":…}`.
//! Exit codes: 0 pass, 1 config error, 2 blow-up, 3 identity/property failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use qpbo::diagnostics::{
    fmt_float, identity_suite_with, inequality_audit, DiagnosticsConfig, ProductMode, IDENTITY_NAMES,
};
use qpbo::dynamics::{evolve_with, DynamicsError, FlowParams, TrajectoryRecord};
use qpbo::experiments::{
    calibrate_study, cauchy_study, conservation_drift_study, epsilon_interval, refined_bound_study,
    uniform_bound_study, write_report, BasisSpec, InitialData, StudyConfig, StudyError, StudyReport,
};
use qpbo::QpField;

const IDENTITY_TOLERANCE: f64 = 1e-12;
const LOCKFILE: &str = "gronwall_C.lock.json";
const STUDIES: [&str; 5] = ["uniform-bound", "refined-bound", "cauchy", "conservation-drift", "calibrate-C"];

#[derive(Parser)]
#[command(name = "qpbo", version, about = "Quasiperiodic regularized Benjamin-Ono flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run config; desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the initial data; writes trajectory.csv and final_state.qpf.
    Simulate(Common),
    /// Exact-identity suite and inequality audit over seeded fields.
    Identities(Common),
    /// One of: uniform-bound, refined-bound, cauchy, conservation-drift, calibrate-C.
    Study {
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnosticsSpec {
    /// Sobolev orders reported per snapshot; `0`, `1` and the flow's `s` are
    /// always included.
    #[serde(default)]
    s_list: Vec<f64>,
    /// Evaluate the identity residuals at every snapshot.
    #[serde(default)]
    identities: bool,
}

/// The JSON document read by every command. Missing keys take desk values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default = "BasisSpec::desk")]
    basis: BasisSpec,
    #[serde(default = "two_cosine")]
    initial: InitialData,
    /// Desk flow when absent: `s = 2.5` for `simulate` and `identities`,
    /// `s = 4` for studies.
    #[serde(default)]
    flow: Option<FlowParams>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    diagnostics: Option<DiagnosticsSpec>,
    /// Seeded fields for `identities`.
    #[serde(default = "default_trials")]
    trials: usize,
    /// Exact (alias-free) products in the identity suite.
    #[serde(default = "yes")]
    exact_products: bool,
    /// Support radius of the identity fields. Defaults to `K/3` with exact
    /// products, where every product in the suite stays alias-free, and to
    /// `K` with aliased ones, where folded modes reach the paired range.
    #[serde(default)]
    identity_support: Option<usize>,
    #[serde(default)]
    study: Option<serde_json::Value>,
}

fn two_cosine() -> InitialData {
    InitialData::TwoCosine
}
fn default_trials() -> usize {
    50
}
fn yes() -> bool {
    true
}

/// Study-only knobs, merged over the desk study defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyKnobs {
    snapshot_stride: Option<usize>,
    n_list: Option<Vec<f64>>,
    delta_list: Option<Vec<f64>>,
    refined_l: Option<f64>,
    epsilon: Option<f64>,
    nk_list: Option<Vec<(f64, usize)>>,
    c_exponents: Option<(i32, i32)>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    BlowUp(String, Option<PathBuf>),
    Property(String, Option<PathBuf>),
    Runtime(String),
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Config(m) => Failure::Config(m),
            StudyError::Dynamics(DynamicsError::InvalidParams(m)) => Failure::Config(m),
            StudyError::Dynamics(DynamicsError::BlowUp { time, .. }) => {
                Failure::BlowUp(format!("non-finite state at t = {time}"), None)
            }
            StudyError::Lattice(e) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl RunConfig {
    fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, Failure> {
        let mut cfg: RunConfig = match path {
            None => serde_json::from_str("{}").expect("empty config parses"),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", p.display())))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(de).map_err(|e| {
                    let field = e.path().to_string();
                    Failure::Config(format!("config field `{field}`: {}", e.inner()))
                })?
            }
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn knobs(&self) -> Result<StudyKnobs, Failure> {
        match &self.study {
            None => Ok(StudyKnobs::default()),
            Some(v) => serde_path_to_error::deserialize(v.clone())
                .map_err(|e| Failure::Config(format!("config field `study.{}`: {}", e.path(), e.inner()))),
        }
    }

    /// The flow for `simulate` and `identities`.
    fn run_flow(&self) -> FlowParams {
        self.flow.clone().unwrap_or_else(FlowParams::desk)
    }

    /// Run-config view used by `simulate` and `identities`.
    fn run_config(&self) -> Result<StudyConfig, Failure> {
        Ok(StudyConfig { flow: self.run_flow(), ..self.study_config()? })
    }

    fn study_config(&self) -> Result<StudyConfig, Failure> {
        let k = self.knobs()?;
        let d = StudyConfig::desk();
        Ok(StudyConfig {
            basis: self.basis.clone(),
            initial: self.initial.clone(),
            flow: self.flow.clone().unwrap_or_else(|| d.flow.clone()),
            seed: self.seed,
            snapshot_stride: k.snapshot_stride.unwrap_or(d.snapshot_stride),
            n_list: k.n_list.unwrap_or(d.n_list),
            delta_list: k.delta_list.unwrap_or(d.delta_list),
            refined_l: k.refined_l.unwrap_or(d.refined_l),
            epsilon: k.epsilon.or(d.epsilon),
            nk_list: k.nk_list.unwrap_or(d.nk_list),
            c_exponents: k.c_exponents.unwrap_or(d.c_exponents),
        })
    }

    fn validate(&self) -> Result<(), Failure> {
        self.study_config()?.validate()?;
        self.run_config()?.validate()?;
        if self.trials == 0 {
            return Err(Failure::Config("config field `trials`: trials >= 1 violated".into()));
        }
        if let Some(d) = &self.diagnostics {
            if d.s_list.iter().any(|&s| !(s >= 0.0)) {
                return Err(Failure::Config("config field `diagnostics.s_list`: every s >= 0 violated".into()));
            }
        }
        if let Some(r) = self.identity_support {
            if r > self.basis.box_radius {
                return Err(Failure::Config(format!(
                    "config field `identity_support`: support <= K = {} violated",
                    self.basis.box_radius
                )));
            }
        }
        Ok(())
    }

    fn diagnostics_config(&self) -> DiagnosticsConfig {
        let mut d = DiagnosticsConfig::for_s(self.run_flow().s);
        if let Some(spec) = &self.diagnostics {
            for &s in &spec.s_list {
                if !d.sobolev_s.contains(&s) {
                    d.sobolev_s.push(s);
                }
            }
            d.identities = spec.identities;
        }
        d
    }
}

fn write_trajectory(rec: &TrajectoryRecord, path: &Path) -> std::io::Result<()> {
    let mut csv = String::new();
    if let Some(first) = rec.diagnostics.first() {
        csv.push_str(&first.csv_header());
        csv.push('\n');
    }
    for d in &rec.diagnostics {
        csv.push_str(&d.csv_row());
        csv.push('\n');
    }
    std::fs::write(path, csv)
}

fn write_json(path: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("json serializes") + "\n")
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<PathBuf, Failure> {
    let sc = cfg.run_config()?;
    let u0 = sc.initial_field()?;
    std::fs::create_dir_all(out)?;
    let summary = out.join("simulate.json");
    let (rec, blowup) = match evolve_with(&u0, &sc.flow, sc.snapshot_stride, &cfg.diagnostics_config()) {
        Ok(rec) => (rec, None),
        Err(DynamicsError::BlowUp { time, partial }) => match partial {
            Some(p) => (*p, Some(time)),
            None => {
                write_json(&summary, &json!({ "status": "blow-up", "blowup_time": time, "config_hash": sc.hash() }))?;
                return Err(Failure::BlowUp(format!("non-finite state at t = {time}"), Some(summary)));
            }
        },
        Err(e) => return Err(StudyError::from(e).into()),
    };
    write_trajectory(&rec, &out.join("trajectory.csv"))?;
    rec.final_state()
        .write_to(out.join("final_state.qpf"))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    write_json(
        &summary,
        &json!({
            "status": if blowup.is_some() { "blow-up" } else { "pass" },
            "config_hash": sc.hash(),
            "snapshots": rec.times.len(),
            "final_time": rec.final_time(),
            "blowup_time": blowup,
        }),
    )?;
    println!("snapshots {} final time {}", rec.times.len(), rec.final_time());
    match blowup {
        Some(t) => Err(Failure::BlowUp(format!("non-finite state at t = {t}"), Some(summary))),
        None => Ok(summary),
    }
}

fn identities(cfg: &RunConfig, out: &Path) -> Result<PathBuf, Failure> {
    let basis = cfg.basis.build().map_err(Failure::from)?;
    let s = cfg.run_flow().s;
    let (mode, default_support) = if cfg.exact_products {
        (ProductMode::Exact, basis.box_radius() / 3)
    } else {
        (ProductMode::Aliased, basis.box_radius())
    };
    let support = cfg.identity_support.unwrap_or(default_support);
    let mut worst: BTreeMap<String, f64> = IDENTITY_NAMES.iter().map(|n| (n.to_string(), 0.0)).collect();
    for t in 0..cfg.trials as u64 {
        let u = QpField::random(&basis, cfg.seed.wrapping_add(t), support, s, 1.0, true);
        let res = identity_suite_with(&u, s, mode).map_err(|e| Failure::Runtime(e.to_string()))?;
        for (name, r) in res {
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(r);
        }
    }
    let audit = inequality_audit(&basis, cfg.seed, cfg.trials, s).map_err(|e| Failure::Runtime(e.to_string()))?;
    let ratio_tol = 1.0 + IDENTITY_TOLERANCE;
    let mut failures = vec![];
    let mut csv = String::from("identity,worst_residual\n");
    for (name, r) in &worst {
        println!("{name} {}", fmt_float(*r));
        csv += &format!("{name},{}\n", fmt_float(*r));
        if !(*r <= IDENTITY_TOLERANCE) {
            failures.push(format!("{name} residual {r:e} above {IDENTITY_TOLERANCE:e}"));
        }
    }
    let ratios = [
        ("interpolation", audit.interpolation),
        ("difference_est", audit.difference_est),
        ("rd1_j1", audit.rd1[0]),
        ("rd1_j2", audit.rd1[1]),
    ];
    for (name, r) in ratios {
        println!("{name} {}", fmt_float(r));
        csv += &format!("{name},{}\n", fmt_float(r));
        if !(r <= ratio_tol) {
            failures.push(format!("{name} ratio {r} above 1 + {IDENTITY_TOLERANCE:e}"));
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("identities.csv"), csv)?;
    let summary = out.join("identities.json");
    write_json(
        &summary,
        &json!({
            "pass": failures.is_empty(),
            "config_hash": cfg.run_config()?.hash(),
            "exact_products": cfg.exact_products,
            "trials": cfg.trials,
            "worst_residuals": worst,
            "audit": audit,
            "failures": failures,
        }),
    )?;
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(Failure::Property(failures.join("; "), Some(summary)))
    }
}

#[derive(Serialize, Deserialize)]
struct Lock {
    #[serde(rename = "C")]
    c: f64,
    config_hash: String,
}

/// The locked `C` if `out` holds one, otherwise an inline calibration.
fn gronwall_c(sc: &StudyConfig, out: &Path) -> Result<f64, Failure> {
    let path = out.join(LOCKFILE);
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        let lock: Lock = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("lockfile {}: {e}", path.display())))?;
        if !(lock.c > 0.0) {
            return Err(Failure::Config(format!("lockfile {}: C > 0 violated", path.display())));
        }
        println!("C = {} (from {})", lock.c, path.display());
        return Ok(lock.c);
    }
    let rep = calibrate_study(sc)?;
    let c = rep.details["C"].as_f64().ok_or_else(|| Failure::Runtime("calibration produced no C".into()))?;
    println!("C = {c} (calibrated inline)");
    Ok(c)
}

fn study(name: &str, cfg: &RunConfig, out: &Path) -> Result<PathBuf, Failure> {
    if !STUDIES.contains(&name) {
        return Err(Failure::Config(format!("unknown study `{name}`; expected one of {}", STUDIES.join(", "))));
    }
    let mut sc = cfg.study_config()?;
    let rep: StudyReport = match name {
        "calibrate-C" => {
            let rep = calibrate_study(&sc)?;
            let c = rep.details["C"].as_f64().unwrap_or(f64::NAN);
            println!("C = {c}");
            std::fs::create_dir_all(out)?;
            let lock = serde_json::to_value(Lock { c, config_hash: sc.hash() }).expect("lock serializes");
            write_json(&out.join(LOCKFILE), &lock)?;
            rep
        }
        "uniform-bound" => {
            let c = gronwall_c(&sc, out)?;
            uniform_bound_study(&sc, c)?
        }
        "cauchy" => {
            sc.flow.gronwall_c = gronwall_c(&sc, out)?;
            let eps = sc.epsilon.unwrap_or_else(|| epsilon_interval(sc.flow.s).midpoint());
            let n_list = sc.n_list.clone();
            cauchy_study(&sc, eps, &n_list)?.1
        }
        "refined-bound" => refined_bound_study(&sc, sc.refined_l)?,
        "conservation-drift" => conservation_drift_study(&sc)?,
        _ => unreachable!(),
    };
    let path = write_report(&rep, &sc.hash(), out)?;
    for (k, v) in &rep.fitted_exponents {
        println!("{k} {v}");
    }
    for f in &rep.failures {
        println!("failure: {f}");
    }
    if rep.pass {
        Ok(path)
    } else {
        Err(Failure::Property(format!("{} failed: {}", rep.study, rep.failures.join("; ")), Some(path)))
    }
}

fn result_line(status: &str, summary: Option<&Path>) -> String {
    let path = summary.map(|p| p.display().to_string());
    format!("RESULT {}", json!({ "status": status, "summary_path": path }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, Box<dyn Fn(&RunConfig, &Path) -> Result<PathBuf, Failure>>) = match &cli.command {
        Command::Simulate(c) => (c, Box::new(simulate)),
        Command::Identities(c) => (c, Box::new(identities)),
        Command::Study { name, common } => {
            let name = name.clone();
            (common, Box::new(move |cfg: &RunConfig, out: &Path| study(&name, cfg, out)))
        }
    };
    let outcome = RunConfig::load(common.config.as_deref(), common.seed).and_then(|cfg| run(&cfg, &common.out));
    let (code, line) = match outcome {
        Ok(path) => (0, result_line("pass", Some(&path))),
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            (1, result_line("config-error", None))
        }
        Err(Failure::BlowUp(m, path)) => {
            eprintln!("blow-up: {m}");
            (2, result_line("blow-up", path.as_deref()))
        }
        Err(Failure::Property(m, path)) => {
            eprintln!("failure: {m}");
            (3, result_line("fail", path.as_deref()))
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            (3, result_line("error", None))
        }
    };
    println!("{line}");
    ExitCode::from(code)
}
