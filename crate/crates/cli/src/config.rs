//! Experiment configuration: the JSON file format, and its validation into
//! ready-to-run parameter sets.

use std::path::PathBuf;

use clap::Subcommand;
use serde::{Deserialize, Serialize};
use wander_core::discrete::{DiscreteOptions, DiscreteSystem, Domain, Piece, SurfaceSpec};
use wander_core::flow::FlowOptions;
use wander_core::measures::sampling::{Region, SamplingMethod};
use wander_core::sections::flowbox::ChartBox;
use wander_core::sections::{surface_status, SurfaceStatus};
use wander_core::{HamiltonianSystem, Perturbation, PotentialSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Riemannian and symplectic areas of the surfaces ℋ_m
    Area,
    /// Power-law fit of the areas against m
    Scaling,
    /// Both sides of the flow-box volume identity on a patch
    Flowbox,
    /// Poincaré maps between two surfaces with the volume check
    Poincare,
    /// Monte Carlo transition and collision measure on an energy surface
    Collision,
    /// Grid transition measure of a piecewise-affine map
    Discrete,
    /// Randomized checks of the Kähler and energy-surface identities
    Identities,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Area => "area",
            Experiment::Scaling => "scaling",
            Experiment::Flowbox => "flowbox",
            Experiment::Poincare => "poincare",
            Experiment::Collision => "collision",
            Experiment::Discrete => "discrete",
            Experiment::Identities => "identities",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand on the command line when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<Experiment>,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<MRange>,
    #[serde(default)]
    pub seed: u64,
    /// Integrator settings; each experiment has its own defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowOptions>,
    /// Wall-clock limit in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flowbox: Option<FlowboxConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poincare: Option<PoincareConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collision: Option<CollisionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentitiesConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub alpha: f64,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n: 2,
            alpha: 1.0,
            c: 1.0,
            perturbation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationConfig {
    /// `ε q_1 q_2`
    Bilinear { strength: f64 },
    /// Smooth bump supported in a ball.
    Bump {
        strength: f64,
        center: Vec<f64>,
        width: f64,
    },
}

/// Surface indices: an explicit list, every integer in `[from, to]`, or the
/// geometric sequence `from, from·factor, …` up to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MRange {
    List(Vec<u32>),
    Span {
        from: u32,
        to: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        factor: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PatchConfig {
    /// The hyperplane `x_index = value` in phase space.
    Plane { index: usize, value: f64 },
    /// The sphere `‖q‖ = radius` with all momenta.
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TubeConfig {
    Quadrature { nodes: usize },
    /// Seeded from the experiment seed.
    MonteCarlo { samples: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowboxConfig {
    pub patch: PatchConfig,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Tube half-width in time.
    pub t: f64,
    pub method: TubeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareConfig {
    pub source: u32,
    pub target: u32,
    pub starts: usize,
    /// Bound on the tangential momentum of the random starts.
    pub w_max: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionConfig {
    pub r_lo: f64,
    pub r_hi: f64,
    pub samples: usize,
    pub depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<u32>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub sampling: SamplingMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteConfig {
    pub domain: Domain,
    pub pieces: Vec<PieceConfig>,
    pub surfaces: SurfaceSpec,
    #[serde(default = "one")]
    pub m0: u32,
    pub depth: u32,
    #[serde(default)]
    pub options: DiscreteOptions,
    /// Cell width of the measure-preservation check.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
}

/// `x ↦ slope · x + offset` on `[lo, hi)`; a missing `hi` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    pub lo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    pub slope: f64,
    pub offset: f64,
}

impl PieceConfig {
    fn piece(&self) -> Piece {
        Piece::new(self.lo, self.hi.unwrap_or(f64::INFINITY), self.slope, self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesConfig {
    pub samples: usize,
    /// Random phase points are drawn from `[-box, box]^{2n}` with
    /// `‖q‖ ≥ box / 10`.
    #[serde(default = "two", rename = "box")]
    pub half_width: f64,
}

fn default_t_max() -> f64 {
    100.0
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_resolution() -> f64 {
    1e-3
}

fn one() -> u32 {
    1
}

fn two() -> f64 {
    2.0
}

/// A configuration that failed a precondition.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid<T>(msg: impl Into<String>) -> Result<T, Invalid> {
    Err(Invalid(msg.into()))
}

fn from_core(e: wander_core::Error) -> Invalid {
    Invalid(e.to_string())
}

fn finite(name: &str, v: f64) -> Result<(), Invalid> {
    if v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} = {v} is not finite"))
    }
}

/// Validated parameters, one variant per experiment.
pub enum Plan {
    Area {
        sys: HamiltonianSystem,
        ms: Vec<u32>,
    },
    Scaling {
        sys: HamiltonianSystem,
        ms: Vec<u32>,
    },
    Flowbox {
        sys: HamiltonianSystem,
        cfg: FlowboxConfig,
        chart_box: ChartBox,
        flow: FlowOptions,
    },
    Poincare {
        sys: HamiltonianSystem,
        cfg: PoincareConfig,
        flow: FlowOptions,
    },
    Collision {
        sys: HamiltonianSystem,
        cfg: CollisionConfig,
        region: Region,
        flow: FlowOptions,
    },
    Discrete {
        sys: DiscreteSystem,
        cfg: DiscreteConfig,
    },
    Identities {
        sys: HamiltonianSystem,
        cfg: IdentitiesConfig,
    },
}

impl SystemConfig {
    pub fn build(&self) -> Result<HamiltonianSystem, Invalid> {
        finite("alpha", self.alpha)?;
        finite("c", self.c)?;
        let pert = match &self.perturbation {
            None => None,
            Some(PerturbationConfig::Bilinear { strength }) => {
                finite("perturbation strength", *strength)?;
                if self.n < 2 {
                    return invalid("the bilinear perturbation needs n >= 2");
                }
                Some(Perturbation::bilinear(*strength))
            }
            Some(PerturbationConfig::Bump {
                strength,
                center,
                width,
            }) => {
                finite("perturbation strength", *strength)?;
                if center.len() != self.n {
                    return invalid(format!(
                        "bump center has {} components, n = {}",
                        center.len(),
                        self.n
                    ));
                }
                Some(Perturbation::bump(*strength, center.clone(), *width).map_err(from_core)?)
            }
        };
        let pot = PotentialSpec::new(self.alpha, self.c, pert).map_err(from_core)?;
        HamiltonianSystem::new(self.n, pot).map_err(from_core)
    }
}

impl MRange {
    pub fn values(&self) -> Result<Vec<u32>, Invalid> {
        let ms = match self {
            MRange::List(v) => v.clone(),
            MRange::Span { from, to, factor } => {
                if from > to {
                    return invalid(format!("m range from {from} to {to} is empty"));
                }
                match factor {
                    None => (*from..=*to).collect(),
                    Some(f) if *f >= 2 && *from >= 1 => {
                        let mut v = vec![*from];
                        while let Some(next) = v.last().unwrap().checked_mul(*f) {
                            if next > *to {
                                break;
                            }
                            v.push(next);
                        }
                        v
                    }
                    Some(f) => return invalid(format!("m range factor {f} must be >= 2")),
                }
            }
        };
        if ms.is_empty() {
            return invalid("no surface indices");
        }
        if ms.contains(&0) {
            return invalid("surface index m = 0");
        }
        Ok(ms)
    }
}

impl ExperimentConfig {
    fn surfaces(&self) -> Result<Vec<u32>, Invalid> {
        match &self.m {
            Some(r) => r.values(),
            None => invalid("missing surface indices `m`"),
        }
    }

    fn flow_or(&self, default: FlowOptions) -> Result<FlowOptions, Invalid> {
        let f = self.flow.unwrap_or(default);
        f.validate().map_err(from_core)?;
        Ok(f)
    }

    /// Checks every precondition of `exp` and assembles its parameters.
    pub fn plan(&self, exp: Experiment) -> Result<Plan, Invalid> {
        finite("energy", self.energy)?;
        if let Some(b) = self.budget_seconds {
            if !(b > 0.0) {
                return invalid(format!("budget_seconds = {b} must be positive"));
            }
        }
        let block = |present: bool| {
            if present {
                Ok(())
            } else {
                invalid(format!("missing `{}` block", exp.name()))
            }
        };
        match exp {
            Experiment::Area | Experiment::Scaling => {
                let sys = self.system.build()?;
                let ms = self.surfaces()?;
                for &m in &ms {
                    if surface_status(&sys, self.energy, m) == SurfaceStatus::Empty {
                        return invalid(format!("surface m = {m} is empty at E = {}", self.energy));
                    }
                }
                if exp == Experiment::Scaling && ms.len() < 2 {
                    return invalid("the fit needs at least two surface indices");
                }
                if exp == Experiment::Area {
                    Ok(Plan::Area { sys, ms })
                } else {
                    Ok(Plan::Scaling { sys, ms })
                }
            }
            Experiment::Flowbox => {
                block(self.flowbox.is_some())?;
                let cfg = self.flowbox.clone().unwrap();
                let sys = self.system.build()?;
                let n = sys.n();
                let want = match cfg.patch {
                    PatchConfig::Plane { index, value } => {
                        finite("plane value", value)?;
                        if index >= 2 * n {
                            return invalid(format!("plane index {index} >= 2n = {}", 2 * n));
                        }
                        2 * n - 1
                    }
                    PatchConfig::Sphere { radius } => {
                        if !(radius > 0.0 && radius.is_finite()) {
                            return invalid(format!("sphere radius {radius}"));
                        }
                        if n < 2 {
                            return invalid("sphere patches need n >= 2");
                        }
                        2 * n - 1
                    }
                };
                if cfg.lo.len() != want || cfg.hi.len() != want {
                    return invalid(format!("the chart box needs {want} coordinates"));
                }
                let chart_box = ChartBox::new(cfg.lo.clone(), cfg.hi.clone()).map_err(from_core)?;
                if !(cfg.t > 0.0 && cfg.t.is_finite()) {
                    return invalid(format!("tube half-width t = {}", cfg.t));
                }
                match cfg.method {
                    TubeConfig::Quadrature { nodes: 0 } => {
                        return invalid("quadrature with zero nodes")
                    }
                    TubeConfig::MonteCarlo { samples } if samples < 2 => {
                        return invalid("Monte Carlo needs at least two samples")
                    }
                    _ => {}
                }
                if cfg.patch_nodes == Some(0) {
                    return invalid("patch_nodes = 0");
                }
                let flow = self.flow_or(FlowOptions::default().with_tolerance(1e-11))?;
                Ok(Plan::Flowbox {
                    sys,
                    cfg,
                    chart_box,
                    flow,
                })
            }
            Experiment::Poincare => {
                block(self.poincare.is_some())?;
                let cfg = self.poincare.clone().unwrap();
                let sys = self.system.build()?;
                if sys.n() < 2 {
                    return invalid("Poincaré maps need n >= 2");
                }
                if cfg.source == 0 || cfg.target == 0 || cfg.source == cfg.target {
                    return invalid(format!(
                        "source {} and target {} must be distinct positive indices",
                        cfg.source, cfg.target
                    ));
                }
                if cfg.starts == 0 {
                    return invalid("starts = 0");
                }
                if !(cfg.w_max >= 0.0 && cfg.w_max.is_finite()) {
                    return invalid(format!("w_max = {}", cfg.w_max));
                }
                if !(cfg.t_max > 0.0 && cfg.t_max.is_finite()) {
                    return invalid(format!("t_max = {}", cfg.t_max));
                }
                if !(cfg.fd_step > 0.0 && cfg.fd_step < 1.0) {
                    return invalid(format!("fd_step = {}", cfg.fd_step));
                }
                for m in [cfg.source, cfg.target] {
                    wander_core::sections::SurfaceChart::new(sys.clone(), self.energy, m)
                        .map_err(from_core)?;
                }
                let flow = self.flow_or(FlowOptions::tight())?;
                Ok(Plan::Poincare { sys, cfg, flow })
            }
            Experiment::Collision => {
                block(self.collision.is_some())?;
                let cfg = self.collision.clone().unwrap();
                let sys = self.system.build()?;
                if sys.n() < 2 {
                    return invalid("energy-surface sampling needs n >= 2");
                }
                let region = Region::new(cfg.r_lo, cfg.r_hi).map_err(from_core)?;
                if cfg.samples == 0 {
                    return invalid("samples = 0");
                }
                if let Some(m0) = cfg.m0 {
                    if m0 == 0 || m0 > cfg.depth {
                        return invalid(format!("m0 = {m0} outside 1..={}", cfg.depth));
                    }
                }
                if cfg.depth == 0 {
                    return invalid("depth = 0");
                }
                if !(cfg.t_max > 0.0 && cfg.t_max.is_finite()) {
                    return invalid(format!("t_max = {}", cfg.t_max));
                }
                let flow = self.flow_or(FlowOptions::default())?;
                Ok(Plan::Collision {
                    sys,
                    cfg,
                    region,
                    flow,
                })
            }
            Experiment::Discrete => {
                block(self.discrete.is_some())?;
                let cfg = self.discrete.clone().unwrap();
                let sys = DiscreteSystem::new(
                    cfg.domain,
                    cfg.pieces.iter().map(PieceConfig::piece).collect(),
                    cfg.surfaces.clone(),
                )
                    .map_err(from_core)?;
                if cfg.m0 == 0 || cfg.depth < cfg.m0 {
                    return invalid(format!("surface range [{}, {}]", cfg.m0, cfg.depth));
                }
                let (lo, hi) = cfg.options.window;
                if cfg.options.grid == 0 || cfg.options.max_steps == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                    return invalid("empty grid window");
                }
                if !(cfg.resolution > 0.0) {
                    return invalid(format!("resolution = {}", cfg.resolution));
                }
                Ok(Plan::Discrete { sys, cfg })
            }
            Experiment::Identities => {
                block(self.identities.is_some())?;
                let cfg = self.identities.clone().unwrap();
                let sys = self.system.build()?;
                if !(1..=4).contains(&sys.n()) {
                    return invalid(format!("identity checks support n in 1..=4, got {}", sys.n()));
                }
                if cfg.samples == 0 {
                    return invalid("samples = 0");
                }
                if !(cfg.half_width > 0.0 && cfg.half_width.is_finite()) {
                    return invalid(format!("box = {}", cfg.half_width));
                }
                Ok(Plan::Identities { sys, cfg })
            }
        }
    }
}
