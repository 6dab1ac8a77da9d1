//! Executes a validated plan and collects its CSV table and JSON estimates.

use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};
use wander_core::discrete::{check_measure_preservation, estimate_transition_measure_discrete};
use wander_core::flow::HitEvent;
use wander_core::forms::{
    check_sigma_relation, eta_density, hodge_star, symplectic_form, wirtinger_gap,
    ComplexStructureOp, MetricTensor, Orientation,
};
use wander_core::measures::sampling::{energy_surface_mass, sample_energy_surface};
use wander_core::measures::transition::{estimate_transition_measure, Fate, TransitionOptions};
use wander_core::measures::{fit_scaling_exponent, riemannian_area, symplectic_area};
use wander_core::sections::flowbox::{
    flowbox_volume_check, FlowboxOptions, PlanePatch, SpherePatch, SurfacePatch, TubeMethod,
};
use wander_core::sections::sphere::angle_ranges;
use wander_core::sections::{
    poincare_map, surface_status, transversality_margin, PoincareOptions, SurfaceChart,
    SurfaceStatus,
};
use wander_core::{rng, Error, HamiltonianSystem, PhasePoint, ScalarField};

use crate::config::{PatchConfig, Plan, TubeConfig};

/// The wall-clock limit ran out.
#[derive(Debug)]
pub struct BudgetExceeded(pub f64);

impl std::fmt::Display for BudgetExceeded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "wall-clock budget of {} s exceeded", self.0)
    }
}

impl std::error::Error for BudgetExceeded {}

pub struct Budget {
    start: Instant,
    limit: Option<Duration>,
}

impl Budget {
    pub fn new(seconds: Option<f64>) -> Self {
        Self {
            start: Instant::now(),
            limit: seconds.map(Duration::from_secs_f64),
        }
    }

    pub fn check(&self) -> Result<(), BudgetExceeded> {
        match self.limit {
            Some(l) if self.start.elapsed() > l => Err(BudgetExceeded(l.as_secs_f64())),
            _ => Ok(()),
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            // 17 significant digits round-trip every f64
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

pub struct Outcome {
    pub table: Table,
    pub estimates: Value,
}

pub fn execute(plan: &Plan, energy: f64, seed: u64, budget: &Budget) -> anyhow::Result<Outcome> {
    match plan {
        Plan::Area { sys, ms } => {
            let (table, rows) = areas(sys, energy, ms, budget)?;
            let estimates = json!({ "areas": rows });
            Ok(Outcome { table, estimates })
        }
        Plan::Scaling { sys, ms } => {
            let (table, rows) = areas(sys, energy, ms, budget)?;
            let series = |key: &str| -> Vec<(f64, f64)> {
                rows.iter()
                    .map(|r| (r["m"].as_f64().unwrap(), r[key]["value"].as_f64().unwrap()))
                    .collect()
            };
            let (riem, symp) = (series("riemannian"), series("symplectic"));
            let fit_r = fit_scaling_exponent(&riem)?;
            let fit_s = fit_scaling_exponent(&symp)?;
            let pot = sys.potential();
            let mut estimates = json!({ "riemannian": fit_r, "symplectic": fit_s });
            if sys.is_radial() {
                estimates["radial_exponent"] =
                    json!((pot.alpha() - 2.0) * (sys.n() as f64 - 1.0) / 2.0);
            }
            Ok(Outcome { table, estimates })
        }
        Plan::Flowbox {
            sys,
            cfg,
            chart_box,
            flow,
        } => {
            let n = sys.n();
            let patch: Box<dyn SurfacePatch> = match cfg.patch {
                PatchConfig::Plane { index, value } => Box::new(PlanePatch { n, index, value }),
                PatchConfig::Sphere { radius } => Box::new(SpherePatch { n, radius }),
            };
            let method = match cfg.method {
                TubeConfig::Quadrature { nodes } => TubeMethod::Quadrature { nodes },
                TubeConfig::MonteCarlo { samples } => TubeMethod::MonteCarlo { samples, seed },
            };
            let opts = FlowboxOptions {
                patch_nodes: cfg.patch_nodes.unwrap_or(FlowboxOptions::default().patch_nodes),
                flow: *flow,
            };
            let r = flowbox_volume_check(sys, patch.as_ref(), chart_box, &|_| 1.0, cfg.t, method, &opts)?;
            budget.check()?;
            let mut table = Table::new(&["t", "lhs", "lhs_std_error", "rhs", "rhs_std_error", "z_score"]);
            table.rows.push(vec![
                Cell::Num(cfg.t),
                Cell::Num(r.lhs.value),
                Cell::Num(r.lhs.std_error),
                Cell::Num(r.rhs.value),
                Cell::Num(r.rhs.std_error),
                Cell::Num(r.z_score()),
            ]);
            let estimates = json!({ "lhs": r.lhs, "rhs": r.rhs, "z_score": finite_or_null(r.z_score()) });
            Ok(Outcome { table, estimates })
        }
        Plan::Poincare { sys, cfg, flow } => {
            let n = sys.n();
            let d = 2 * n - 2;
            let source = SurfaceChart::new(sys.clone(), energy, cfg.source)?;
            let opts = PoincareOptions {
                flow: *flow,
                t_max: cfg.t_max,
                fd_step: cfg.fd_step,
            };
            let mut header = vec!["index".to_string(), "status".into(), "time".into(), "det".into(), "residual".into()];
            header.extend((0..d).map(|i| format!("u{i}")));
            header.extend((0..d).map(|i| format!("v{i}")));
            let mut table = Table {
                header,
                rows: Vec::new(),
            };
            let target = SurfaceChart::new(sys.clone(), energy, cfg.target)?;
            let mut ok = 0usize;
            let mut worst: f64 = 0.0;
            for i in 0..cfg.starts {
                budget.check()?;
                let (u, point) = random_start(&source, n, cfg.w_max, seed, i as u64)?;
                let margin = transversality_margin(&point, cfg.source)?;
                let start = HitEvent {
                    m: cfg.source,
                    time: 0.0,
                    point,
                    margin,
                };
                let mut row = vec![Cell::Int(i as i64)];
                match poincare_map(sys, energy, &start, cfg.target, &opts) {
                    Ok(r) => {
                        ok += 1;
                        worst = worst.max(r.residual);
                        row.push(Cell::Text("ok".into()));
                        row.extend([r.hit.time, r.det, r.residual].map(Cell::Num));
                        row.extend(u.iter().map(|&v| Cell::Num(v)));
                        row.extend(target.coordinates(&r.hit.point).into_iter().map(Cell::Num));
                    }
                    Err(e) => {
                        row.push(Cell::Text(status_of(&e).into()));
                        row.extend([f64::NAN; 3].map(Cell::Num));
                        row.extend(u.iter().map(|&v| Cell::Num(v)));
                        row.extend((0..d).map(|_| Cell::Num(f64::NAN)));
                    }
                }
                table.rows.push(row);
            }
            let estimates = json!({
                "starts": cfg.starts,
                "mapped": ok,
                "max_residual": worst,
            });
            Ok(Outcome { table, estimates })
        }
        Plan::Collision {
            sys,
            cfg,
            region,
            flow,
        } => {
            let samples = sample_energy_surface(sys, energy, region, cfg.samples, seed, cfg.sampling)?;
            budget.check()?;
            let opts = TransitionOptions {
                flow: *flow,
                t_max: cfg.t_max,
                m0: cfg.m0,
                depth: cfg.depth,
            };
            let report = estimate_transition_measure(sys, energy, &samples, seed, &opts)?;
            budget.check()?;
            let mass = energy_surface_mass(sys, energy, region)?;
            let mut table = Table::new(&[
                "depth",
                "fraction",
                "ci_lo",
                "ci_hi",
                "censored",
                "transitions",
                "samples",
                "measure",
            ]);
            for r in &report.rows {
                table.rows.push(vec![
                    Cell::Int(r.depth as i64),
                    Cell::Num(r.fraction),
                    Cell::Num(r.ci_lo),
                    Cell::Num(r.ci_hi),
                    Cell::Num(r.censored),
                    Cell::Int(r.transitions as i64),
                    Cell::Int(r.samples as i64),
                    Cell::Num(r.fraction * mass.value),
                ]);
            }
            // smallest symplectic area among the regular surfaces crossed
            let area_bound = (report.m0..=report.depth)
                .filter(|&m| surface_status(sys, energy, m) == SurfaceStatus::Regular)
                .filter_map(|m| symplectic_area(sys, energy, m).ok())
                .map(|a| a.value)
                .fold(f64::INFINITY, f64::min);
            let fates: serde_json::Map<String, Value> = [
                ("transition", Fate::Transition),
                ("decided", Fate::Decided),
                ("collision", Fate::Collision),
                ("escape", Fate::Escape),
                ("censored", Fate::Censored),
            ]
            .iter()
            .map(|(k, f)| (k.to_string(), json!(report.count(*f))))
            .collect();
            let last = report.rows.last().expect("at least one depth");
            let estimates = json!({
                "m0": report.m0,
                "depth": report.depth,
                "mass": mass,
                "fraction": last.estimate(seed),
                "ci": [last.ci_lo, last.ci_hi],
                "measure": last.fraction * mass.value,
                "min_symplectic_area": finite_or_null(area_bound),
                "fates": fates,
            });
            Ok(Outcome { table, estimates })
        }
        Plan::Discrete { sys, cfg } => {
            let check = check_measure_preservation(sys, cfg.resolution)?;
            let report = estimate_transition_measure_discrete(sys, cfg.m0, cfg.depth, &cfg.options)?;
            budget.check()?;
            let mut table = Table::new(&["depth", "estimate", "censored", "surface_measure"]);
            for r in &report.rows {
                table.rows.push(vec![
                    Cell::Int(r.depth as i64),
                    Cell::Num(r.estimate.value),
                    Cell::Num(r.censored),
                    Cell::Num(sys.surfaces.measure(r.depth)),
                ]);
            }
            let estimates = json!({
                "preservation": check,
                "resolution": report.resolution,
                "final": report.final_estimate(),
            });
            Ok(Outcome { table, estimates })
        }
        Plan::Identities { sys, cfg } => identities(sys, cfg.samples, cfg.half_width, seed, budget),
    }
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn areas(
    sys: &HamiltonianSystem,
    energy: f64,
    ms: &[u32],
    budget: &Budget,
) -> anyhow::Result<(Table, Vec<Value>)> {
    let mut table = Table::new(&["m", "area_riem", "area_symp"]);
    let mut rows = Vec::new();
    for &m in ms {
        budget.check()?;
        let r = riemannian_area(sys, energy, m)?;
        let s = symplectic_area(sys, energy, m)?;
        table
            .rows
            .push(vec![Cell::Int(m as i64), Cell::Num(r.value), Cell::Num(s.value)]);
        rows.push(json!({ "m": m, "riemannian": r, "symplectic": s }));
    }
    Ok((table, rows))
}

fn status_of(e: &Error) -> &'static str {
    match e {
        Error::CollisionBeforeHit { .. } => "collision",
        Error::NoHit(_) => "no-hit",
        Error::TangentialHit { .. } => "tangential",
        Error::BudgetExhausted(_) => "budget",
        _ => "error",
    }
}

/// A uniformly drawn chart point with `‖w‖ ≤ w_max` on the inward half of
/// the source surface, redrawn where the momentum bound leaves the surface.
fn random_start(
    chart: &SurfaceChart,
    n: usize,
    w_max: f64,
    seed: u64,
    index: u64,
) -> anyhow::Result<(Vec<f64>, PhasePoint)> {
    let mut rng = rng::stream(seed, index);
    let ranges = angle_ranges(n);
    for _ in 0..10_000 {
        let mut u: Vec<f64> = ranges.iter().map(|&(a, b)| rng.random_range(a..b)).collect();
        let w: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-1.0..=1.0) * w_max).collect();
        if w.iter().map(|v| v * v).sum::<f64>() > w_max * w_max {
            continue;
        }
        u.extend(&w);
        if let Ok(x) = chart.embed(&u) {
            return Ok((u, x));
        }
    }
    anyhow::bail!(Error::InvalidParameter(format!(
        "w_max = {w_max} leaves no admissible start on the source surface"
    )))
}

/// `F(x) = ⟨a, x⟩`.
struct Linear(Vec<f64>);

impl ScalarField for Linear {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

fn identities(
    sys: &HamiltonianSystem,
    samples: usize,
    half_width: f64,
    seed: u64,
    budget: &Budget,
) -> anyhow::Result<Outcome> {
    let n = sys.n();
    let d = 2 * n;
    let g = MetricTensor::euclidean(d)?;
    let j = ComplexStructureOp::standard(n)?;
    let omega = symplectic_form(n)?;
    let mut hodge: f64 = 0.0;
    for k in 0..=n {
        let lhs = hodge_star(&omega.normalized_power(n - k)?, &g, Orientation::Symplectic)?;
        hodge = hodge.max(lhs.max_abs_diff(&omega.normalized_power(k)?)?);
    }
    let mut table = Table::new(&["index", "sigma_residual", "eta", "wirtinger_gap"]);
    let (mut max_sigma, mut max_eta, mut min_gap) = (0.0f64, 0.0f64, f64::INFINITY);
    for i in 0..samples {
        if i % 1024 == 0 {
            budget.check()?;
        }
        let mut rng = rng::stream(seed, i as u64);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-half_width..half_width)).collect()
        };
        let q = loop {
            let q = draw(n);
            if q.iter().map(|v| v * v).sum::<f64>().sqrt() >= 0.1 * half_width {
                break q;
            }
        };
        let x = PhasePoint::new(q, draw(n))?;
        let a = draw(d);
        let (y, z) = (draw(d), draw(d));
        let sigma = check_sigma_relation(&x, sys).unwrap_or(f64::NAN);
        let eta = eta_density(&x, sys, &Linear(a)).unwrap_or(f64::NAN);
        let gap = wirtinger_gap(&y, &z, &g, &j)?;
        max_sigma = max_sigma.max(sigma);
        max_eta = max_eta.max(eta.abs());
        min_gap = min_gap.min(gap);
        table.rows.push(vec![
            Cell::Int(i as i64),
            Cell::Num(sigma),
            Cell::Num(eta),
            Cell::Num(gap),
        ]);
    }
    let estimates = json!({
        "hodge_residual": hodge,
        "max_sigma_residual": max_sigma,
        "max_abs_eta": max_eta,
        "min_wirtinger_gap": min_gap,
    });
    Ok(Outcome { table, estimates })
}
