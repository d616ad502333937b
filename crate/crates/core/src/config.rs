//! Run configuration: typed settings, defaults, validation and the plain-text
//! format.
//!
//! The text format is TOML with six sections:
//!
//! ```toml
//! [simulation]
//! dimension = 1
//! particle_count = 2000
//! dt = 0.08
//!
//! [grid]
//! nodes_per_dim = 65
//!
//! [material]
//! [target]
//! name = "std_gaussian"
//! [init]
//! [output]
//! ```
//!
//! Every key is optional and falls back to the value in
//! [`SimConfig::default`]. Unknown sections or keys are errors. All problems
//! found in one document are reported together, each with its line number.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use toml::de::{DeTable, DeValue};

use crate::constitutive::{lame_from_elastic, ConstitutiveKind, MaterialParams};
use crate::grid::{GridSpec, StorageKind};
use crate::interp::KernelKind;
use crate::target::{AlphaSchedule, EvaluationSite, TargetSpec};
use crate::tensor::VecN;
use crate::transfer::TransferScheme;

/// Grids with more nodes than this use sparse storage under `storage = "auto"`.
pub const AUTO_SPARSE_THRESHOLD: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub simulation: SimulationConfig,
    pub grid: GridConfig,
    pub material: MaterialConfig,
    pub target: TargetSpec,
    pub init: InitConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    Pic,
    Apic,
    FlipBlend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageChoice {
    Auto,
    Dense,
    Sparse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Keep particles inside the stencil-safe interior box.
    Clamp,
    /// Leave particles alone; leaving the interior box is a runtime error.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proposal {
    Uniform,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub dimension: usize,
    pub particle_count: usize,
    pub dt: f64,
    pub max_iterations: usize,
    pub kernel: KernelKind,
    pub scheme: SchemeKind,
    /// PIC/FLIP blend weight; only read by the FLIP blend scheme.
    pub flip_alpha: f64,
    /// Score amplification α, reached after the warm-up ramp.
    pub score_alpha: f64,
    /// α at iteration 0 when a warm-up ramp is configured.
    pub score_alpha_start: f64,
    /// Warm-up length in iterations; 0 keeps α constant.
    pub score_alpha_ramp: usize,
    pub evaluation_site: EvaluationSite,
    pub gravity: Option<Vec<f64>>,
    pub seed: u64,
    /// Single-threaded, bit-reproducible execution.
    pub deterministic: bool,
    /// Courant number c in dt ≤ c·h / (v_max + wave speed).
    pub cfl: f64,
    pub stop_rule: bool,
    pub stop_window: usize,
    pub stop_tol_rel: f64,
    pub stop_kinetic_floor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub nodes_per_dim: usize,
    /// Edge length of the cubic domain.
    pub extent: f64,
    /// Lower corner; centred on the origin when absent.
    pub origin: Option<Vec<f64>>,
    pub storage: StorageChoice,
    pub boundary: BoundaryKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialConfig {
    pub constitutive: ConstitutiveKind,
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitConfig {
    pub proposal: Proposal,
    /// Uniform box corners; the central half of the domain when absent.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Gaussian centre; the domain centre when absent.
    pub mean: Option<Vec<f64>>,
    /// Gaussian standard deviation (isotropic).
    pub std: f64,
    /// Per-particle reference volume V⁰; box volume / M when absent.
    pub volume0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    /// Snapshot cadence in iterations; 0 writes only the initial and final
    /// states.
    pub snapshot_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            simulation: SimulationConfig {
                dimension: 1,
                particle_count: 2000,
                dt: 0.08,
                max_iterations: 6000,
                kernel: KernelKind::Cubic,
                scheme: SchemeKind::Apic,
                flip_alpha: 0.0,
                score_alpha: 1.43e-4,
                score_alpha_start: 0.0,
                score_alpha_ramp: 5000,
                evaluation_site: EvaluationSite::AtParticles,
                gravity: None,
                seed: 0,
                deterministic: false,
                cfl: 0.4,
                stop_rule: false,
                stop_window: 50,
                stop_tol_rel: 1e-6,
                stop_kinetic_floor: 0.0,
            },
            grid: GridConfig {
                nodes_per_dim: 65,
                extent: 16.0,
                origin: None,
                storage: StorageChoice::Auto,
                boundary: BoundaryKind::Clamp,
            },
            material: MaterialConfig {
                constitutive: ConstitutiveKind::NeoHookean,
                youngs_modulus: 0.1,
                poissons_ratio: 0.0,
            },
            target: TargetSpec::StdGaussian,
            init: InitConfig {
                proposal: Proposal::Uniform,
                lower: None,
                upper: None,
                mean: None,
                std: 1.0,
                volume0: None,
            },
            output: OutputConfig { snapshot_every: 0 },
        }
    }
}

/// One validation or syntax problem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    /// 1-based line, when the problem can be tied to a location.
    pub line: Option<usize>,
    /// Dotted key such as `simulation.dt`, when applicable.
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "{key}: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.issues.len();
        writeln!(f, "invalid configuration ({n} problem{}):", if n == 1 { "" } else { "s" })?;
        for issue in &self.issues {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl SimConfig {
    pub fn spacing(&self) -> f64 {
        self.grid.extent / (self.grid.nodes_per_dim as f64 - 1.0)
    }

    pub fn origin(&self) -> Vec<f64> {
        self.grid
            .origin
            .clone()
            .unwrap_or_else(|| vec![-0.5 * self.grid.extent; self.simulation.dimension])
    }

    pub fn grid_spec(&self) -> crate::error::Result<GridSpec<f64>> {
        GridSpec::cube(
            self.simulation.dimension,
            self.grid.nodes_per_dim,
            VecN::from_slice(&self.origin()),
            self.grid.extent,
        )
    }

    pub fn storage_kind(&self) -> StorageKind {
        let nodes = (self.grid.nodes_per_dim as f64).powi(self.simulation.dimension as i32);
        match self.grid.storage {
            StorageChoice::Dense => StorageKind::Dense,
            StorageChoice::Sparse => StorageKind::Sparse,
            StorageChoice::Auto if nodes > AUTO_SPARSE_THRESHOLD as f64 => StorageKind::Sparse,
            StorageChoice::Auto => StorageKind::Dense,
        }
    }

    /// Interior box in which every particle keeps a full stencil.
    pub fn interior_box(&self) -> (Vec<f64>, Vec<f64>) {
        let pad = self.simulation.kernel.support_radius() * self.spacing();
        let origin = self.origin();
        let lo = origin.iter().map(|o| o + pad).collect();
        let hi = origin.iter().map(|o| o + self.grid.extent - pad).collect();
        (lo, hi)
    }

    /// Box the initial particles are drawn from (uniform) or are expected to
    /// occupy (Gaussian: mean ± 3σ, intersected with the interior box).
    pub fn init_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.simulation.dimension;
        let origin = self.origin();
        let extent = self.grid.extent;
        match self.init.proposal {
            Proposal::Uniform => {
                let lower = self
                    .init
                    .lower
                    .clone()
                    .unwrap_or_else(|| origin.iter().map(|o| o + 0.25 * extent).collect());
                let upper = self
                    .init
                    .upper
                    .clone()
                    .unwrap_or_else(|| origin.iter().map(|o| o + 0.75 * extent).collect());
                (lower, upper)
            }
            Proposal::Gaussian => {
                let mean = self.gaussian_mean();
                let (lo, hi) = self.interior_box();
                let s = 3.0 * self.init.std;
                (
                    (0..d).map(|a| (mean[a] - s).max(lo[a])).collect(),
                    (0..d).map(|a| (mean[a] + s).min(hi[a])).collect(),
                )
            }
        }
    }

    pub fn gaussian_mean(&self) -> Vec<f64> {
        self.init.mean.clone().unwrap_or_else(|| {
            self.origin().iter().map(|o| o + 0.5 * self.grid.extent).collect()
        })
    }

    pub fn particle_mass(&self) -> f64 {
        1.0 / self.simulation.particle_count as f64
    }

    pub fn particle_volume0(&self) -> f64 {
        self.init.volume0.unwrap_or_else(|| {
            let (lo, hi) = self.init_box();
            let volume: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).product();
            volume / self.simulation.particle_count as f64
        })
    }

    /// ρ₀ = m_p / V_p⁰.
    pub fn reference_density(&self) -> f64 {
        self.particle_mass() / self.particle_volume0()
    }

    pub fn material_params(&self) -> crate::error::Result<MaterialParams<f64>> {
        lame_from_elastic(self.material.youngs_modulus, self.material.poissons_ratio)
    }

    /// Elastic wave speed sqrt((λ+2μ)/ρ₀).
    pub fn wave_speed(&self) -> crate::error::Result<f64> {
        let params = self.material_params()?;
        Ok((params.p_wave_modulus() / self.reference_density()).sqrt())
    }

    /// c·h / (v_max + sqrt((λ+2μ)/ρ₀)).
    pub fn cfl_bound(&self, max_speed: f64) -> crate::error::Result<f64> {
        Ok(self.simulation.cfl * self.spacing() / (max_speed + self.wave_speed()?))
    }

    pub fn transfer_scheme(&self) -> TransferScheme {
        match self.simulation.scheme {
            SchemeKind::Pic => TransferScheme::Pic,
            SchemeKind::Apic => TransferScheme::Apic,
            SchemeKind::FlipBlend => TransferScheme::FlipBlend {
                flip_alpha: self.simulation.flip_alpha,
            },
        }
    }

    pub fn alpha_schedule(&self) -> AlphaSchedule<f64> {
        let sim = &self.simulation;
        if sim.score_alpha_ramp == 0 {
            AlphaSchedule::Constant(sim.score_alpha)
        } else {
            AlphaSchedule::Linear {
                start: sim.score_alpha_start,
                end: sim.score_alpha,
                iterations: sim.score_alpha_ramp,
            }
        }
    }

    /// Checks every constraint and returns all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let issues = self.collect_issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    fn collect_issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |key: &str, message: String| {
            out.push(ConfigIssue {
                line: None,
                key: Some(key.to_string()),
                message,
            })
        };
        let sim = &self.simulation;
        let d = sim.dimension;

        if d == 0 {
            bad("simulation.dimension", "must be at least 1".into());
        }
        if sim.particle_count == 0 {
            bad("simulation.particle_count", "must be at least 1".into());
        }
        if !(sim.dt.is_finite() && sim.dt > 0.0) {
            bad("simulation.dt", format!("must be positive and finite, got {}", sim.dt));
        }
        if !(0.0..=1.0).contains(&sim.flip_alpha) {
            bad("simulation.flip_alpha", format!("must lie in [0, 1], got {}", sim.flip_alpha));
        }
        if !sim.score_alpha.is_finite() {
            bad("simulation.score_alpha", "must be finite".into());
        }
        if !sim.score_alpha_start.is_finite() {
            bad("simulation.score_alpha_start", "must be finite".into());
        }
        if let Some(g) = &sim.gravity {
            if g.len() != d {
                bad("simulation.gravity", format!("needs {d} components, got {}", g.len()));
            } else if g.iter().any(|x| !x.is_finite()) {
                bad("simulation.gravity", "components must be finite".into());
            }
        }
        if !(sim.cfl.is_finite() && sim.cfl > 0.0) {
            bad("simulation.cfl", format!("must be positive, got {}", sim.cfl));
        }
        if sim.stop_window == 0 {
            bad("simulation.stop_window", "must be at least 1".into());
        }
        if !(sim.stop_tol_rel >= 0.0 && sim.stop_tol_rel.is_finite()) {
            bad("simulation.stop_tol_rel", "must be non-negative".into());
        }
        if !(sim.stop_kinetic_floor >= 0.0 && sim.stop_kinetic_floor.is_finite()) {
            bad("simulation.stop_kinetic_floor", "must be non-negative".into());
        }

        let grid_ok = {
            let mut ok = true;
            if self.grid.nodes_per_dim < 4 {
                bad(
                    "grid.nodes_per_dim",
                    format!("must be at least 4, got {}", self.grid.nodes_per_dim),
                );
                ok = false;
            }
            if !(self.grid.extent.is_finite() && self.grid.extent > 0.0) {
                bad("grid.extent", format!("must be positive, got {}", self.grid.extent));
                ok = false;
            }
            if let Some(o) = &self.grid.origin {
                if o.len() != d {
                    bad("grid.origin", format!("needs {d} components, got {}", o.len()));
                    ok = false;
                } else if o.iter().any(|x| !x.is_finite()) {
                    bad("grid.origin", "components must be finite".into());
                    ok = false;
                }
            }
            if ok && d > 0 && self.grid_spec().is_err() {
                bad("grid.nodes_per_dim", "grid node count overflows".into());
                ok = false;
            }
            ok && d > 0
        };

        let material_ok = match self.material_params() {
            Ok(_) => true,
            Err(e) => {
                bad("material", e.to_string());
                false
            }
        };

        if d > 0 {
            if let Err(e) = self.target.build::<f64>(d) {
                bad("target", e.to_string());
            }
        }

        let init = &self.init;
        let mut init_ok = grid_ok;
        for (key, v) in [("init.lower", &init.lower), ("init.upper", &init.upper), ("init.mean", &init.mean)] {
            if let Some(v) = v {
                if v.len() != d {
                    bad(key, format!("needs {d} components, got {}", v.len()));
                    init_ok = false;
                } else if v.iter().any(|x| !x.is_finite()) {
                    bad(key, "components must be finite".into());
                    init_ok = false;
                }
            }
        }
        if !(init.std.is_finite() && init.std > 0.0) {
            bad("init.std", format!("must be positive, got {}", init.std));
            init_ok = false;
        }
        if let Some(v0) = init.volume0 {
            if !(v0.is_finite() && v0 > 0.0) {
                bad("init.volume0", format!("must be positive, got {v0}"));
                init_ok = false;
            }
        }
        if init_ok {
            let (lo, hi) = self.interior_box();
            match init.proposal {
                Proposal::Uniform => {
                    let (lower, upper) = self.init_box();
                    for a in 0..d {
                        if !(lower[a] < upper[a]) {
                            bad(
                                "init.lower",
                                format!("axis {a}: lower {} is not below upper {}", lower[a], upper[a]),
                            );
                            init_ok = false;
                        }
                        if lower[a] < lo[a] || upper[a] > hi[a] {
                            bad(
                                "init",
                                format!(
                                    "axis {a}: initial box [{}, {}] leaves the interior [{}, {}] \
                                     that keeps a kernel-support margin to the grid edge",
                                    lower[a], upper[a], lo[a], hi[a]
                                ),
                            );
                            init_ok = false;
                        }
                    }
                }
                Proposal::Gaussian => {
                    let mean = self.gaussian_mean();
                    for a in 0..d {
                        if mean[a] <= lo[a] || mean[a] >= hi[a] {
                            bad(
                                "init.mean",
                                format!(
                                    "axis {a}: mean {} outside the interior [{}, {}]",
                                    mean[a], lo[a], hi[a]
                                ),
                            );
                            init_ok = false;
                        }
                    }
                }
            }
        }

        if grid_ok && material_ok && init_ok && sim.particle_count > 0 && sim.dt > 0.0 && sim.cfl > 0.0 {
            if let Ok(bound) = self.cfl_bound(0.0) {
                if sim.dt > bound {
                    bad(
                        "simulation.dt",
                        format!(
                            "dt = {} exceeds the stability bound {:.6e} = cfl·h / sqrt((λ+2μ)/ρ₀) \
                             with cfl = {}, h = {}, ρ₀ = {:.6e}",
                            sim.dt,
                            bound,
                            sim.cfl,
                            self.spacing(),
                            self.reference_density()
                        ),
                    );
                }
            }
        }
        out
    }

    /// Parses and validates a configuration document.
    pub fn parse(text: &str) -> Result<SimConfig, ConfigError> {
        let mut reader = Reader::new(text);
        let config = reader.read();
        let mut issues = std::mem::take(&mut reader.issues);
        if issues.is_empty() {
            for mut issue in config.collect_issues() {
                issue.line = issue.key.as_ref().and_then(|k| reader.locate(k));
                issues.push(issue);
            }
        }
        issues.sort_by_key(|i| (i.line.is_none(), i.line));
        if issues.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError { issues })
        }
    }

    /// Renders every field, so that `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sim = &self.simulation;
        let _ = writeln!(s, "[simulation]");
        let _ = writeln!(s, "dimension = {}", sim.dimension);
        let _ = writeln!(s, "particle_count = {}", sim.particle_count);
        let _ = writeln!(s, "dt = {:?}", sim.dt);
        let _ = writeln!(s, "max_iterations = {}", sim.max_iterations);
        let _ = writeln!(s, "kernel = \"{}\"", sim.kernel.name());
        let _ = writeln!(s, "scheme = \"{}\"", scheme_keyword(sim.scheme));
        let _ = writeln!(s, "flip_alpha = {:?}", sim.flip_alpha);
        let _ = writeln!(s, "score_alpha = {:?}", sim.score_alpha);
        let _ = writeln!(s, "score_alpha_start = {:?}", sim.score_alpha_start);
        let _ = writeln!(s, "score_alpha_ramp = {}", sim.score_alpha_ramp);
        let _ = writeln!(s, "evaluation_site = \"{}\"", site_keyword(sim.evaluation_site));
        if let Some(g) = &sim.gravity {
            let _ = writeln!(s, "gravity = {}", float_list(g));
        }
        let _ = writeln!(s, "seed = {}", sim.seed);
        let _ = writeln!(s, "deterministic = {}", sim.deterministic);
        let _ = writeln!(s, "cfl = {:?}", sim.cfl);
        let _ = writeln!(s, "stop_rule = {}", sim.stop_rule);
        let _ = writeln!(s, "stop_window = {}", sim.stop_window);
        let _ = writeln!(s, "stop_tol_rel = {:?}", sim.stop_tol_rel);
        let _ = writeln!(s, "stop_kinetic_floor = {:?}", sim.stop_kinetic_floor);

        let _ = writeln!(s, "\n[grid]");
        let _ = writeln!(s, "nodes_per_dim = {}", self.grid.nodes_per_dim);
        let _ = writeln!(s, "extent = {:?}", self.grid.extent);
        if let Some(o) = &self.grid.origin {
            let _ = writeln!(s, "origin = {}", float_list(o));
        }
        let _ = writeln!(s, "storage = \"{}\"", storage_keyword(self.grid.storage));
        let _ = writeln!(s, "boundary = \"{}\"", boundary_keyword(self.grid.boundary));

        let _ = writeln!(s, "\n[material]");
        let _ = writeln!(s, "constitutive = \"{}\"", constitutive_keyword(self.material.constitutive));
        let _ = writeln!(s, "youngs_modulus = {:?}", self.material.youngs_modulus);
        let _ = writeln!(s, "poissons_ratio = {:?}", self.material.poissons_ratio);

        let _ = writeln!(s, "\n[target]");
        let _ = writeln!(s, "name = \"{}\"", self.target.name());
        match &self.target {
            TargetSpec::StdGaussian => {}
            TargetSpec::GaussianMixture {
                weights,
                means,
                covariances,
            } => {
                let _ = writeln!(s, "weights = {}", float_list(weights));
                let _ = writeln!(s, "means = {}", float_list(means));
                let _ = writeln!(s, "covariances = {}", float_list(covariances));
            }
            TargetSpec::Banana { scale, curvature } => {
                let _ = writeln!(s, "scale = {scale:?}");
                let _ = writeln!(s, "curvature = {curvature:?}");
            }
            TargetSpec::Donut { radius, width } => {
                let _ = writeln!(s, "radius = {radius:?}");
                let _ = writeln!(s, "width = {width:?}");
            }
        }

        let init = &self.init;
        let _ = writeln!(s, "\n[init]");
        let _ = writeln!(s, "proposal = \"{}\"", proposal_keyword(init.proposal));
        for (key, v) in [("lower", &init.lower), ("upper", &init.upper), ("mean", &init.mean)] {
            if let Some(v) = v {
                let _ = writeln!(s, "{key} = {}", float_list(v));
            }
        }
        let _ = writeln!(s, "std = {:?}", init.std);
        if let Some(v0) = init.volume0 {
            let _ = writeln!(s, "volume0 = {v0:?}");
        }

        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "snapshot_every = {}", self.output.snapshot_every);
        s
    }
}

fn float_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", items.join(", "))
}

fn scheme_keyword(k: SchemeKind) -> &'static str {
    match k {
        SchemeKind::Pic => "pic",
        SchemeKind::Apic => "apic",
        SchemeKind::FlipBlend => "flip_blend",
    }
}

fn site_keyword(k: EvaluationSite) -> &'static str {
    match k {
        EvaluationSite::AtNodes => "at_nodes",
        EvaluationSite::AtParticles => "at_particles",
    }
}

fn storage_keyword(k: StorageChoice) -> &'static str {
    match k {
        StorageChoice::Auto => "auto",
        StorageChoice::Dense => "dense",
        StorageChoice::Sparse => "sparse",
    }
}

fn boundary_keyword(k: BoundaryKind) -> &'static str {
    match k {
        BoundaryKind::Clamp => "clamp",
        BoundaryKind::Free => "free",
    }
}

fn constitutive_keyword(k: ConstitutiveKind) -> &'static str {
    match k {
        ConstitutiveKind::NeoHookean => "neo_hookean",
        ConstitutiveKind::LinearElastic => "linear_elastic",
    }
}

fn proposal_keyword(k: Proposal) -> &'static str {
    match k {
        Proposal::Uniform => "uniform",
        Proposal::Gaussian => "gaussian",
    }
}

const SECTIONS: [&str; 6] = ["simulation", "grid", "material", "target", "init", "output"];

struct Reader<'t> {
    text: &'t str,
    issues: Vec<ConfigIssue>,
    /// Dotted key → line of its value.
    lines: BTreeMap<String, usize>,
}

impl<'t> Reader<'t> {
    fn new(text: &'t str) -> Self {
        Reader {
            text,
            issues: Vec::new(),
            lines: BTreeMap::new(),
        }
    }

    fn line_of(&self, offset: usize) -> usize {
        let end = offset.min(self.text.len());
        self.text.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
    }

    fn locate(&self, key: &str) -> Option<usize> {
        if let Some(&l) = self.lines.get(key) {
            return Some(l);
        }
        let prefix = format!("{key}.");
        self.lines
            .iter()
            .find(|(k, _)| k.starts_with(&prefix))
            .map(|(_, &l)| l)
            .or_else(|| self.lines.get(key.split('.').next().unwrap_or(key)).copied())
    }

    fn issue(&mut self, offset: usize, key: &str, message: String) {
        let line = self.line_of(offset);
        self.issues.push(ConfigIssue {
            line: Some(line),
            key: Some(key.to_string()),
            message,
        });
    }

    fn read(&mut self) -> SimConfig {
        let mut config = SimConfig::default();
        let root = match DeTable::parse(self.text) {
            Ok(root) => root,
            Err(e) => {
                let line = e.span().map(|s| self.line_of(s.start));
                self.issues.push(ConfigIssue {
                    line,
                    key: None,
                    message: format!("syntax error: {}", e.message()),
                });
                return config;
            }
        };
        let mut target_keys: Vec<(String, usize, DeValue<'_>)> = Vec::new();
        let mut target_name: Option<(String, usize)> = None;
        for (section_key, section_value) in root.get_ref().iter() {
            let section = section_key.get_ref().as_ref();
            let offset = section_key.span().start;
            if !SECTIONS.contains(&section) {
                self.issue(offset, section, format!("unknown section [{section}]"));
                continue;
            }
            self.lines.insert(section.to_string(), self.line_of(offset));
            let DeValue::Table(table) = section_value.get_ref() else {
                self.issue(offset, section, "expected a table".into());
                continue;
            };
            for (key, value) in table.iter() {
                let name = key.get_ref().as_ref();
                let dotted = format!("{section}.{name}");
                let at = value.span().start;
                self.lines.insert(dotted.clone(), self.line_of(at));
                let v = value.get_ref();
                if section == "target" {
                    if name == "name" {
                        if let Some(s) = self.string(v, at, &dotted) {
                            target_name = Some((s, at));
                        }
                    } else {
                        target_keys.push((name.to_string(), at, v.clone()));
                    }
                    continue;
                }
                self.assign(&mut config, section, name, v, at, &dotted);
            }
        }
        if let Some(target) = self.read_target(target_name, target_keys) {
            config.target = target;
        }
        config
    }

    fn read_target(
        &mut self,
        name: Option<(String, usize)>,
        keys: Vec<(String, usize, DeValue<'_>)>,
    ) -> Option<TargetSpec> {
        let (name, name_at) = name.unwrap_or_else(|| ("std_gaussian".to_string(), 0));
        let allowed: &[&str] = match name.as_str() {
            "std_gaussian" => &[],
            "gaussian_mixture" => &["weights", "means", "covariances"],
            "banana" => &["scale", "curvature"],
            "donut" => &["radius", "width"],
            other => {
                self.issue(
                    name_at,
                    "target.name",
                    format!(
                        "unknown target `{other}` (expected std_gaussian, gaussian_mixture, banana or donut)"
                    ),
                );
                return None;
            }
        };
        let mut lists: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut scalars: BTreeMap<String, f64> = BTreeMap::new();
        for (key, at, value) in &keys {
            let dotted = format!("target.{key}");
            if !allowed.contains(&key.as_str()) {
                self.issue(*at, &dotted, format!("unknown key `{key}` for target `{name}`"));
                continue;
            }
            if name == "gaussian_mixture" {
                if let Some(v) = self.float_list(value, *at, &dotted) {
                    lists.insert(key.clone(), v);
                }
            } else if let Some(v) = self.float(value, *at, &dotted) {
                scalars.insert(key.clone(), v);
            }
        }
        let missing = |k: &str| format!("target `{name}` requires `{k}`");
        let need = |this: &mut Self, present: bool, k: &str| {
            if !present {
                this.issue(name_at, &format!("target.{k}"), missing(k));
            }
        };
        match name.as_str() {
            "std_gaussian" => Some(TargetSpec::StdGaussian),
            "gaussian_mixture" => {
                for k in allowed {
                    need(self, lists.contains_key(*k), k);
                }
                Some(TargetSpec::GaussianMixture {
                    weights: lists.remove("weights")?,
                    means: lists.remove("means")?,
                    covariances: lists.remove("covariances")?,
                })
            }
            "banana" => {
                for k in allowed {
                    need(self, scalars.contains_key(*k), k);
                }
                Some(TargetSpec::Banana {
                    scale: *scalars.get("scale")?,
                    curvature: *scalars.get("curvature")?,
                })
            }
            _ => {
                for k in allowed {
                    need(self, scalars.contains_key(*k), k);
                }
                Some(TargetSpec::Donut {
                    radius: *scalars.get("radius")?,
                    width: *scalars.get("width")?,
                })
            }
        }
    }

    fn assign(&mut self, c: &mut SimConfig, section: &str, name: &str, v: &DeValue<'_>, at: usize, key: &str) {
        macro_rules! set {
            ($field:expr, $conv:ident) => {
                if let Some(x) = self.$conv(v, at, key) {
                    $field = x;
                }
            };
            (opt $field:expr, $conv:ident) => {
                if let Some(x) = self.$conv(v, at, key) {
                    $field = Some(x);
                }
            };
        }
        let sim = &mut c.simulation;
        match (section, name) {
            ("simulation", "dimension") => set!(sim.dimension, usize),
            ("simulation", "particle_count") => set!(sim.particle_count, usize),
            ("simulation", "dt") => set!(sim.dt, float),
            ("simulation", "max_iterations") => set!(sim.max_iterations, usize),
            ("simulation", "kernel") => set!(sim.kernel, kernel),
            ("simulation", "scheme") => set!(sim.scheme, scheme),
            ("simulation", "flip_alpha") => set!(sim.flip_alpha, float),
            ("simulation", "score_alpha") => set!(sim.score_alpha, float),
            ("simulation", "score_alpha_start") => set!(sim.score_alpha_start, float),
            ("simulation", "score_alpha_ramp") => set!(sim.score_alpha_ramp, usize),
            ("simulation", "evaluation_site") => set!(sim.evaluation_site, site),
            ("simulation", "gravity") => set!(opt sim.gravity, float_list),
            ("simulation", "seed") => set!(sim.seed, u64),
            ("simulation", "deterministic") => set!(sim.deterministic, boolean),
            ("simulation", "cfl") => set!(sim.cfl, float),
            ("simulation", "stop_rule") => set!(sim.stop_rule, boolean),
            ("simulation", "stop_window") => set!(sim.stop_window, usize),
            ("simulation", "stop_tol_rel") => set!(sim.stop_tol_rel, float),
            ("simulation", "stop_kinetic_floor") => set!(sim.stop_kinetic_floor, float),
            ("grid", "nodes_per_dim") => set!(c.grid.nodes_per_dim, usize),
            ("grid", "extent") => set!(c.grid.extent, float),
            ("grid", "origin") => set!(opt c.grid.origin, float_list),
            ("grid", "storage") => set!(c.grid.storage, storage),
            ("grid", "boundary") => set!(c.grid.boundary, boundary),
            ("material", "constitutive") => set!(c.material.constitutive, constitutive),
            ("material", "youngs_modulus") => set!(c.material.youngs_modulus, float),
            ("material", "poissons_ratio") => set!(c.material.poissons_ratio, float),
            ("init", "proposal") => set!(c.init.proposal, proposal),
            ("init", "lower") => set!(opt c.init.lower, float_list),
            ("init", "upper") => set!(opt c.init.upper, float_list),
            ("init", "mean") => set!(opt c.init.mean, float_list),
            ("init", "std") => set!(c.init.std, float),
            ("init", "volume0") => set!(opt c.init.volume0, float),
            ("output", "snapshot_every") => set!(c.output.snapshot_every, usize),
            _ => self.issue(at, key, format!("unknown key `{name}` in [{section}]")),
        }
    }

    fn float(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<f64> {
        let parsed = match v {
            DeValue::Float(f) => f.as_str().replace('_', "").parse::<f64>().ok(),
            DeValue::Integer(i) => i64::from_str_radix(&i.as_str().replace('_', ""), i.radix())
                .ok()
                .map(|x| x as f64),
            _ => None,
        };
        if parsed.is_none() {
            self.issue(at, key, format!("expected a number, found {}", v.type_str()));
        }
        parsed
    }

    fn u64(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<u64> {
        let parsed = match v {
            DeValue::Integer(i) => u64::from_str_radix(&i.as_str().replace('_', ""), i.radix()).ok(),
            _ => None,
        };
        if parsed.is_none() {
            self.issue(at, key, format!("expected a non-negative integer, found {}", describe(v)));
        }
        parsed
    }

    fn usize(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<usize> {
        self.u64(v, at, key).and_then(|x| usize::try_from(x).ok())
    }

    fn boolean(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<bool> {
        let parsed = v.as_bool();
        if parsed.is_none() {
            self.issue(at, key, format!("expected true or false, found {}", v.type_str()));
        }
        parsed
    }

    fn string(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<String> {
        let parsed = v.as_str().map(str::to_string);
        if parsed.is_none() {
            self.issue(at, key, format!("expected a string, found {}", v.type_str()));
        }
        parsed
    }

    fn float_list(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<Vec<f64>> {
        let Some(items) = v.as_array() else {
            self.issue(at, key, format!("expected an array of numbers, found {}", v.type_str()));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items.iter() {
            out.push(self.float(item.get_ref(), item.span().start, key)?);
        }
        Some(out)
    }

    fn keyword<T: Copy>(&mut self, v: &DeValue<'_>, at: usize, key: &str, options: &[(&str, T)]) -> Option<T> {
        let s = self.string(v, at, key)?;
        let found = options.iter().find(|(k, _)| *k == s).map(|(_, t)| *t);
        if found.is_none() {
            let names: Vec<&str> = options.iter().map(|(k, _)| *k).collect();
            self.issue(at, key, format!("unknown value `{s}` (expected one of {})", names.join(", ")));
        }
        found
    }

    fn kernel(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<KernelKind> {
        self.keyword(
            v,
            at,
            key,
            &[
                ("linear", KernelKind::Linear),
                ("quadratic", KernelKind::Quadratic),
                ("cubic", KernelKind::Cubic),
            ],
        )
    }

    fn scheme(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<SchemeKind> {
        self.keyword(
            v,
            at,
            key,
            &[
                ("pic", SchemeKind::Pic),
                ("apic", SchemeKind::Apic),
                ("flip_blend", SchemeKind::FlipBlend),
            ],
        )
    }

    fn site(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<EvaluationSite> {
        self.keyword(
            v,
            at,
            key,
            &[
                ("at_nodes", EvaluationSite::AtNodes),
                ("at_particles", EvaluationSite::AtParticles),
            ],
        )
    }

    fn storage(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<StorageChoice> {
        self.keyword(
            v,
            at,
            key,
            &[
                ("auto", StorageChoice::Auto),
                ("dense", StorageChoice::Dense),
                ("sparse", StorageChoice::Sparse),
            ],
        )
    }

    fn boundary(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<BoundaryKind> {
        self.keyword(v, at, key, &[("clamp", BoundaryKind::Clamp), ("free", BoundaryKind::Free)])
    }

    fn constitutive(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<ConstitutiveKind> {
        self.keyword(
            v,
            at,
            key,
            &[
                ("neo_hookean", ConstitutiveKind::NeoHookean),
                ("linear_elastic", ConstitutiveKind::LinearElastic),
            ],
        )
    }

    fn proposal(&mut self, v: &DeValue<'_>, at: usize, key: &str) -> Option<Proposal> {
        self.keyword(v, at, key, &[("uniform", Proposal::Uniform), ("gaussian", Proposal::Gaussian)])
    }
}

fn describe(v: &DeValue<'_>) -> String {
    match v {
        DeValue::Integer(i) => format!("integer {}", i.as_str()),
        other => other.type_str().to_string(),
    }
}
