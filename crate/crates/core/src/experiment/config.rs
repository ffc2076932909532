//! Versioned JSON experiment configuration.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ecg::{parity_close, seed_basis, BasisSet, Placement};
use crate::error::{Error, Result};
use crate::field_lab::{SweepOptions, CA_FIELDS, DEFAULT_FD_STEP};
use crate::system::{Particle, ParticleSystem, ELECTRON_MASS, FIXED_NUCLEUS_MASS, PROTON_MASS};
use crate::variational::{OptimizeOptions, DEFAULT_LIN_DEP_TOL};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Drives random basis placement and the optimizer's visiting order.
    pub seed: u64,
    pub system: SystemConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub optimization: OptimizationConfig,
    pub sweep: SweepConfig,
    pub fit: FitConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub particles: Vec<ParticleConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub label: String,
    pub mass: MassSpec,
    pub charge: f64,
}

/// A mass in electron masses or one of `electron`, `proton`,
/// `fixed-nucleus`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MassSpec {
    Value(f64),
    Preset(String),
}

impl MassSpec {
    pub fn resolve(&self) -> Option<f64> {
        match self {
            MassSpec::Value(v) => Some(*v),
            MassSpec::Preset(name) => match name.as_str() {
                "electron" => Some(ELECTRON_MASS),
                "proton" => Some(PROTON_MASS),
                "fixed-nucleus" => Some(FIXED_NUCLEUS_MASS),
                _ => None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    /// Members are the concatenation of all blocks, in order.
    pub blocks: Vec<BlockConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub size: usize,
    pub placement: PlacementConfig,
    /// Append the inversion partner of every member.
    #[serde(default)]
    pub parity_close: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlacementConfig {
    Origin,
    TwoCenter { separation: f64 },
    Random { scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    pub stat_tol: f64,
    pub max_iters: usize,
    pub parity_constrained: bool,
    pub reoptimize_per_field: bool,
    /// Optimize the seeded basis at this field before sweeping.
    pub optimize_at: Option<f64>,
    pub lin_dep_tol: f64,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        OptimizationConfig {
            stat_tol: o.stat_tol,
            max_iters: o.max_iters,
            parity_constrained: false,
            reoptimize_per_field: false,
            optimize_at: None,
            lin_dep_tol: DEFAULT_LIN_DEP_TOL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPreset {
    /// `{0, -0.0016, -0.0032}`.
    CaProtocol,
    /// `{0, 0.0016, 0.0032}`.
    CaProtocolPositive,
    /// `{0, ±0.001, ±0.002}`.
    #[serde(rename = "symmetric-5pt")]
    Symmetric5pt,
    /// `{0, ±0.0005, ±0.001, ±0.0015, ±0.002}`.
    Stark,
}

impl GridPreset {
    pub fn fields(self) -> Vec<f64> {
        match self {
            GridPreset::CaProtocol => CA_FIELDS.to_vec(),
            GridPreset::CaProtocolPositive => CA_FIELDS.iter().map(|f| -f + 0.0).collect(),
            GridPreset::Symmetric5pt => vec![-0.002, -0.001, 0.0, 0.001, 0.002],
            GridPreset::Stark => vec![-0.002, -0.0015, -0.001, -0.0005, 0.0, 0.0005, 0.001, 0.0015, 0.002],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<GridPreset>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Run the per-field Hellmann–Feynman check.
    #[serde(default = "default_true")]
    pub hf_check: bool,
}

fn default_fd_step() -> f64 {
    DEFAULT_FD_STEP
}

fn default_true() -> bool {
    true
}

impl SweepConfig {
    pub fn resolved_fields(&self) -> Vec<f64> {
        match (&self.fields, self.preset) {
            (Some(f), _) => f.clone(),
            (None, Some(p)) => p.fields(),
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub powers: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: "out".into(), formats: vec![Format::Json, Format::Csv] }
    }
}

/// Allowed keys per object, addressed by a path with array indices removed.
fn allowed_keys(path: &str) -> Option<&'static [&'static str]> {
    Some(match path {
        "" => &[
            "version", "name", "description", "seed", "system", "basis", "optimization", "sweep", "fit", "output",
        ],
        "system" => &["particles"],
        "system.particles[]" => &["label", "mass", "charge"],
        "basis" => &["blocks"],
        "basis.blocks[]" => &["size", "placement", "parity_close"],
        "basis.blocks[].placement" => &["kind", "separation", "scale"],
        "optimization" => &[
            "stat_tol",
            "max_iters",
            "parity_constrained",
            "reoptimize_per_field",
            "optimize_at",
            "lin_dep_tol",
        ],
        "sweep" => &["fields", "preset", "fd_step", "hf_check"],
        "fit" => &["powers"],
        "output" => &["directory", "formats"],
        _ => return None,
    })
}

fn collect_unknown(value: &Value, schema_path: &str, shown: &str, out: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            let Some(allowed) = allowed_keys(schema_path) else { return };
            for (key, child) in map {
                let shown_child = if shown.is_empty() { key.clone() } else { format!("{shown}.{key}") };
                if !allowed.contains(&key.as_str()) {
                    out.push(format!("{shown_child}: unknown key"));
                    continue;
                }
                let schema_child = if schema_path.is_empty() { key.clone() } else { format!("{schema_path}.{key}") };
                collect_unknown(child, &schema_child, &shown_child, out);
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                collect_unknown(item, &format!("{schema_path}[]"), &format!("{shown}[{i}]"), out);
            }
        }
        _ => {}
    }
}

impl ExperimentConfig {
    /// Parses and validates; every problem found is reported at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Validation(vec![format!("not valid JSON: {e}")]))?;
        let mut unknown = Vec::new();
        collect_unknown(&value, "", "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Validation(unknown));
        }
        let config: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Validation(vec![e.to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.version != CONFIG_VERSION {
            errs.push(format!("version: expected {CONFIG_VERSION}, got {}", self.version));
        }
        if self.name.trim().is_empty() {
            errs.push("name: must not be empty".into());
        }

        let particles = &self.system.particles;
        if particles.len() < 2 {
            errs.push(format!("system.particles: need at least 2, got {}", particles.len()));
        }
        for (i, p) in particles.iter().enumerate() {
            match p.mass.resolve() {
                None => errs.push(format!(
                    "system.particles[{i}].mass: unknown preset {:?} (use electron, proton, fixed-nucleus or a number)",
                    match &p.mass {
                        MassSpec::Preset(s) => s.as_str(),
                        MassSpec::Value(_) => "",
                    }
                )),
                Some(m) if !(m > 0.0 && m.is_finite()) => {
                    errs.push(format!("system.particles[{i}].mass: must be positive and finite, got {m}"))
                }
                Some(_) => {}
            }
            if !p.charge.is_finite() {
                errs.push(format!("system.particles[{i}].charge: must be finite"));
            }
        }

        if self.basis.blocks.is_empty() {
            errs.push("basis.blocks: at least one block is required".into());
        }
        for (i, b) in self.basis.blocks.iter().enumerate() {
            if b.size == 0 {
                errs.push(format!("basis.blocks[{i}].size: must be at least 1"));
            }
            match b.placement {
                PlacementConfig::TwoCenter { separation } if !separation.is_finite() => {
                    errs.push(format!("basis.blocks[{i}].placement.separation: must be finite"))
                }
                PlacementConfig::Random { scale } if !(scale >= 0.0 && scale.is_finite()) => {
                    errs.push(format!("basis.blocks[{i}].placement.scale: must be non-negative, got {scale}"))
                }
                _ => {}
            }
            let closed = b.parity_close || b.placement == PlacementConfig::Origin;
            if self.optimization.parity_constrained && !closed {
                errs.push(format!(
                    "basis.blocks[{i}]: parity_constrained optimization needs parity_close or origin placement"
                ));
            }
        }

        let o = &self.optimization;
        if !(o.stat_tol > 0.0 && o.stat_tol.is_finite()) {
            errs.push(format!("optimization.stat_tol: must be positive, got {}", o.stat_tol));
        }
        if !(o.lin_dep_tol > 0.0 && o.lin_dep_tol < 1.0) {
            errs.push(format!("optimization.lin_dep_tol: must lie in (0, 1), got {}", o.lin_dep_tol));
        }
        if let Some(f) = o.optimize_at {
            if !f.is_finite() {
                errs.push("optimization.optimize_at: must be finite".into());
            }
        }

        let s = &self.sweep;
        match (&s.fields, s.preset) {
            (Some(_), Some(_)) => errs.push("sweep: give either fields or preset, not both".into()),
            (None, None) => errs.push("sweep: one of fields or preset is required".into()),
            _ => {}
        }
        let fields = s.resolved_fields();
        if s.fields.is_some() {
            if fields.len() < 2 {
                errs.push(format!("sweep.fields: need at least 2 distinct fields, got {}", fields.len()));
            }
            for (i, f) in fields.iter().enumerate() {
                if !f.is_finite() {
                    errs.push(format!("sweep.fields[{i}]: must be finite"));
                } else if fields[..i].contains(f) {
                    errs.push(format!("sweep.fields[{i}]: duplicate field {f}"));
                }
            }
        }
        if !(s.fd_step > 0.0 && s.fd_step.is_finite()) {
            errs.push(format!("sweep.fd_step: must be positive, got {}", s.fd_step));
        }

        let powers = &self.fit.powers;
        if powers.is_empty() {
            errs.push("fit.powers: at least one power is required".into());
        }
        if powers.windows(2).any(|w| w[0] >= w[1]) {
            errs.push("fit.powers: must be strictly increasing".into());
        }
        if !fields.is_empty() && powers.len() > fields.len() {
            errs.push(format!(
                "fit.powers: {} powers cannot be fitted from {} fields",
                powers.len(),
                fields.len()
            ));
        }
        if self.output.formats.is_empty() {
            errs.push("output.formats: at least one format is required".into());
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn particle_system(&self) -> Result<ParticleSystem> {
        let particles = self
            .system
            .particles
            .iter()
            .map(|p| {
                let mass = p.mass.resolve().ok_or_else(|| Error::Validation(vec![format!("{}: bad mass", p.label)]))?;
                Ok(Particle::new(p.label.clone(), mass, p.charge))
            })
            .collect::<Result<Vec<_>>>()?;
        ParticleSystem::new(particles)
    }

    /// Seeds every block; random block `i` draws from `seed + i`.
    pub fn seed_basis(&self, spec: &crate::system::InternalSpec) -> Result<BasisSet> {
        let mut members = Vec::new();
        for (i, block) in self.basis.blocks.iter().enumerate() {
            let placement = match block.placement {
                PlacementConfig::Origin => Placement::Origin,
                PlacementConfig::TwoCenter { separation } => Placement::TwoCenter { separation },
                PlacementConfig::Random { scale } => Placement::Random {
                    seed: self.seed.wrapping_add(i as u64),
                    scale,
                },
            };
            let mut set = seed_basis(spec, block.size, placement)?;
            if block.parity_close {
                set = parity_close(&set);
            }
            members.extend(set.into_members());
        }
        BasisSet::new(members)
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        OptimizeOptions {
            max_iters: self.optimization.max_iters,
            stat_tol: self.optimization.stat_tol,
            seed: self.seed,
            parity_constrained: self.optimization.parity_constrained,
            lin_dep_tol: self.optimization.lin_dep_tol,
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            reoptimize_per_field: self.optimization.reoptimize_per_field,
            optimize: self.optimize_options(),
            fd_step: self.sweep.hf_check.then_some(self.sweep.fd_step),
        }
    }
}
