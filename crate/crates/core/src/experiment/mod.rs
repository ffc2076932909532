//! Config-driven experiment runner: presets, reports and comparisons.

mod config;

pub use config::{
    BasisConfig, BlockConfig, ExperimentConfig, FitConfig, Format, GridPreset, MassSpec, OptimizationConfig,
    OutputConfig, ParticleConfig, PlacementConfig, SweepConfig, SystemConfig, CONFIG_VERSION,
};

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ecg::BasisSet;
use crate::error::{domain, Error, Result};
use crate::field_lab::{run_sweep, Protocol, SweepReport};
use crate::system::{InternalSpec, ParticleSystem};
use crate::variational::optimize_nonlinear;

pub const REPORT_VERSION: u32 = 1;

/// Below this `|e₁|` a fitted dipole counts as zero.
pub const NULL_DIPOLE_THRESHOLD: f64 = 1e-7;

/// A configuration shipped with the library.
#[derive(Clone, Copy, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub json: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "hydrogen-hf", json: include_str!("../../presets/hydrogen-hf.json") },
    Preset { name: "stark", json: include_str!("../../presets/stark.json") },
    Preset { name: "ca-null", json: include_str!("../../presets/ca-null.json") },
    Preset { name: "ca-pathology", json: include_str!("../../presets/ca-pathology.json") },
    Preset { name: "symmetric-reference", json: include_str!("../../presets/symmetric-reference.json") },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(self.json)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    /// Hash of the resolved masses and charges, used to pair reports.
    pub system_sha256: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParticle {
    pub label: String,
    pub mass: f64,
    pub charge: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreOptimization {
    pub epsilon: f64,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    pub size: usize,
    pub parity_closed: bool,
    pub pre_optimization: Option<PreOptimization>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub e0: Option<f64>,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    /// `-e₁`.
    pub dipole: Option<f64>,
    /// `-2 e₂`.
    pub polarizability: Option<f64>,
    pub verdict: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub report_version: u32,
    pub name: String,
    pub provenance: Provenance,
    /// The configuration exactly as run; feeding it back reproduces the report.
    pub config: ExperimentConfig,
    pub system: Vec<ResolvedParticle>,
    pub basis: BasisSummary,
    pub sweep: SweepReport,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn system_hash(system: &ParticleSystem) -> String {
    let canonical: Vec<(f64, f64)> = system.particles().iter().map(|p| (p.mass, p.charge)).collect();
    sha256_hex(serde_json::to_string(&canonical).expect("plain numbers serialize").as_bytes())
}

fn verdict(sweep: &SweepReport, parity_closed: bool) -> String {
    match sweep.dipole {
        Some(d) if d.e1_abs < NULL_DIPOLE_THRESHOLD => {
            format!("null dipole: |e1| = {:e} is below {:e}", d.e1_abs, NULL_DIPOLE_THRESHOLD)
        }
        Some(d) if sweep.protocol == Protocol::OneSided && !parity_closed => format!(
            "spurious dipole {:e}: one-sided grid on a basis without inversion symmetry (parity overlap {:.6})",
            d.dipole, sweep.parity_diag.parity_overlap
        ),
        Some(d) if sweep.protocol == Protocol::OneSided => format!(
            "nonzero dipole {:e} from a one-sided grid: odd fit terms absorb the even curvature",
            d.dipole
        ),
        Some(d) => format!("nonzero dipole {:e}", d.dipole),
        None if sweep.fit.is_even() => match sweep.fit.coeff(2) {
            Some(e2) => format!("even fit: no dipole term, polarizability {:.6}", -2.0 * e2),
            None => "even fit: no dipole term".into(),
        },
        None => "fit has no linear term".into(),
    }
}

/// Runs an experiment in memory.
pub fn execute(config: &ExperimentConfig) -> Result<(ExperimentReport, BasisSet)> {
    config.validate()?;
    let system = config.particle_system()?;
    let spec = InternalSpec::from_system(&system)?;
    let mut basis = config.seed_basis(&spec)?;
    let opts = config.optimize_options();

    let pre_optimization = match config.optimization.optimize_at {
        Some(eps) => {
            let out = optimize_nonlinear(&basis, &spec, eps, &opts)?;
            basis = out.basis;
            Some(PreOptimization {
                epsilon: eps,
                energy: out.state.energy,
                converged: out.converged,
                iterations: out.sweeps,
                stationarity_norm: out.state.stationarity_norm,
            })
        }
        None => None,
    };

    let fields = config.sweep.resolved_fields();
    let sweep = run_sweep(&basis, &spec, &fields, &config.fit.powers, &config.sweep_options())?;
    let parity_closed = basis.parity_closed();
    let summary = Summary {
        e0: sweep.fit.coeff(0),
        e1: sweep.fit.coeff(1),
        e2: sweep.fit.coeff(2),
        dipole: sweep.dipole.map(|d| d.dipole),
        polarizability: sweep.fit.coeff(2).map(|e2| -2.0 * e2),
        verdict: verdict(&sweep, parity_closed),
    };
    let config_json = serde_json::to_string(&serde_json::to_value(config)?)?;
    let report = ExperimentReport {
        report_version: REPORT_VERSION,
        name: config.name.clone(),
        provenance: Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config_json.as_bytes()),
            system_sha256: system_hash(&system),
            seed: config.seed,
        },
        config: config.clone(),
        system: system
            .particles()
            .iter()
            .map(|p| ResolvedParticle { label: p.label.clone(), mass: p.mass, charge: p.charge })
            .collect(),
        basis: BasisSummary { size: basis.len(), parity_closed, pre_optimization },
        sweep,
        summary,
    };
    Ok((report, basis))
}

/// Files written by [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub directory: PathBuf,
    pub files: Vec<PathBuf>,
    pub report: ExperimentReport,
}

/// Runs `config` and writes `report.json`, `sweep.csv` and `basis.json`
/// into `out_dir`, or the configured directory when `out_dir` is `None`.
pub fn run(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    config.validate()?;
    let directory = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&config.output.directory));
    std::fs::create_dir_all(&directory).map_err(|e| {
        Error::Validation(vec![format!("output.directory: cannot create {}: {e}", directory.display())])
    })?;
    let probe = directory.join(".write-check");
    std::fs::write(&probe, b"").map_err(|e| {
        Error::Validation(vec![format!("output.directory: {} is not writable: {e}", directory.display())])
    })?;
    std::fs::remove_file(&probe)?;

    let (report, basis) = execute(config)?;
    let mut files = Vec::new();
    if config.output.formats.contains(&Format::Json) {
        let path = directory.join("report.json");
        std::fs::write(&path, report.to_json()? + "\n")?;
        files.push(path);
        let path = directory.join("basis.json");
        std::fs::write(&path, basis.to_json()? + "\n")?;
        files.push(path);
    }
    if config.output.formats.contains(&Format::Csv) {
        let path = directory.join("sweep.csv");
        std::fs::write(&path, report.sweep.to_csv())?;
        files.push(path);
    }
    Ok(RunOutput { directory, files, report })
}

pub fn run_file(path: &Path, out_dir: Option<&Path>) -> Result<RunOutput> {
    let text = std::fs::read_to_string(path)?;
    run(&ExperimentConfig::from_json(&text)?, out_dir)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub quantity: &'static str,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `a / b`; exactly 1 when the values are equal, including both zero.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub a_name: String,
    pub b_name: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, quantity: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    let (a, b) = (a?, b?);
    Some(if a == b { 1.0 } else { a / b })
}

/// Side-by-side fit coefficients and diagnostics of two reports on the
/// same physical system.
pub fn compare(a: &ExperimentReport, b: &ExperimentReport) -> Result<Comparison> {
    if a.provenance.system_sha256 != b.provenance.system_sha256 {
        return Err(domain(format!(
            "reports describe different systems ({} vs {})",
            a.name, b.name
        )));
    }
    let quantities: [(&'static str, fn(&ExperimentReport) -> Option<f64>); 8] = [
        ("e0", |r| r.summary.e0),
        ("e1", |r| r.summary.e1),
        ("|e1|", |r| r.summary.e1.map(f64::abs)),
        ("e2", |r| r.summary.e2),
        ("dipole", |r| r.summary.dipole),
        ("polarizability", |r| r.summary.polarizability),
        ("mz_at_zero", |r| Some(r.sweep.parity_diag.mz_at_zero)),
        ("parity_overlap", |r| Some(r.sweep.parity_diag.parity_overlap)),
    ];
    Ok(Comparison {
        a_name: a.name.clone(),
        b_name: b.name.clone(),
        rows: quantities
            .iter()
            .map(|(q, f)| ComparisonRow { quantity: q, a: f(a), b: f(b), ratio: ratio(f(a), f(b)) })
            .collect(),
    })
}

pub fn compare_files(a: &Path, b: &Path) -> Result<Comparison> {
    let load = |p: &Path| -> Result<ExperimentReport> { ExperimentReport::from_json(&std::fs::read_to_string(p)?) };
    compare(&load(a)?, &load(b)?)
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into());
        writeln!(f, "{:<16} {:>15} {:>15} {:>13}", "quantity", self.a_name, self.b_name, "ratio a/b")?;
        for r in &self.rows {
            writeln!(f, "{:<16} {:>15} {:>15} {:>13}", r.quantity, cell(r.a), cell(r.b), cell(r.ratio))?;
        }
        Ok(())
    }
}
