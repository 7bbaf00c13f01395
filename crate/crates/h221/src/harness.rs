//! Run configuration, residual reporting, and the command drivers behind
//! the thin CLI. Each driver wires parameters → flows → checks for one
//! layer of the construction and emits a machine-readable report plus CSV
//! data files.
//!
//! Reports are deterministic for a given configuration: all randomized
//! sampling derives from the config's seed, and the only nondeterministic
//! report field is the timestamp.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{commute_check_mutated, integrate, integrate_path, FieldMutation, FlowError, FlowPath, PathSegment, Trajectory};
use crate::hamiltonians::{KnsState, PhaseError, TimePoint, Form, State};
use crate::lax::{plain_family, reduced_family, zero_curvature_residual, DeformationPair};
use crate::lax::max_abs;
use crate::params::ParameterSet;
use crate::prlg::{self, PrlgError, PrlgMutation};
use crate::psi::{self, PsiError, PsiMutation, Transport};
use crate::{c, cr, C64};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("config error: {0}")]
    Config(#[from] serde_json::Error),
    #[error("unknown mutation id {given:?} for `{command}`; valid ids: {valid}")]
    UnknownMutation { command: &'static str, given: String, valid: String },
    #[error("step list must be nonempty, positive, and strictly decreasing")]
    BadSteps,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Prlg(#[from] PrlgError),
    #[error(transparent)]
    Psi(#[from] PsiError),
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Complex scalars in config files are `[re, im]` pairs.
pub type CPair = [f64; 2];

fn cx(p: CPair) -> C64 {
    C64::new(p[0], p[1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParameterConfig {
    pub kappa0: CPair,
    pub kappa1: CPair,
    pub gamma1: CPair,
    pub gamma2: CPair,
    pub theta1: CPair,
}

impl Default for ParameterConfig {
    fn default() -> Self {
        Self {
            kappa0: [2.6, 0.0],
            kappa1: [2.4, 0.0],
            gamma1: [1.0, 0.0],
            gamma2: [1.0, 0.0],
            theta1: [0.3, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    pub q1: CPair,
    pub q2: CPair,
    pub p1: CPair,
    pub p2: CPair,
    pub u: CPair,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self {
            q1: [0.6, 0.1],
            q2: [1.4, -0.05],
            p1: [0.35, 0.0],
            p2: [0.41, 0.08],
            u: [1.1, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    /// One of `"t"`, `"tau"`, `"s"`.
    pub chart: String,
    pub c1: CPair,
    pub c2: CPair,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { chart: "tau".into(), c1: [1.0, 0.0], c2: [0.8, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    /// First spectral anchor of the two-point kernel.
    pub zeta: CPair,
    /// Second spectral anchor.
    pub eta: CPair,
    /// Spectral nodes of the solution grid.
    pub grid: Vec<CPair>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            zeta: [1.5, 0.0],
            eta: [3.0, 0.0],
            grid: vec![
                [1.2, 0.0],
                [1.45, 0.0],
                [1.7, 0.0],
                [1.95, 0.0],
                [2.2, 0.0],
                [2.45, 0.0],
                [2.7, 0.0],
                [2.95, 0.0],
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeGridConfig {
    pub dt: f64,
    pub n1: usize,
    pub n2: usize,
}

impl Default for TimeGridConfig {
    fn default() -> Self {
        Self { dt: 0.05, n1: 5, n2: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrlgConfig {
    /// Grid spacings of the convergence ladder (coarse to fine).
    pub spacings: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
}

impl Default for PrlgConfig {
    fn default() -> Self {
        Self { spacings: vec![0.08, 0.04, 0.02], n1: 20, n2: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowRectangleConfig {
    pub dt1: f64,
    pub dt2: f64,
    /// Number of seeded random initial states for the commutativity check.
    pub commute_states: usize,
    /// Tolerance ladder for the deviation-vs-tolerance scaling check.
    pub commute_tols: Vec<f64>,
}

impl Default for FlowRectangleConfig {
    fn default() -> Self {
        Self { dt1: 0.1, dt2: 0.1, commute_states: 10, commute_tols: vec![1e-8, 1e-9, 1e-10] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Adaptive-integrator tolerance for all transports.
    pub ode_tol: f64,
    /// Per-sample algebraic invariant bound.
    pub invariant_max: f64,
    /// Flow-commutativity and reversibility deviation bound.
    pub commute_max: f64,
    /// Minimum least-squares order for every convergence ladder.
    pub min_order: f64,
    /// Extrapolated-floor bound for the deformation-compatibility ladder.
    pub curvature_floor_max: f64,
    /// Extrapolated-floor bound for the reduced-field ladders.
    pub prlg_floor_max: f64,
    /// Extrapolated-floor bound for the evolution-equation ladders.
    pub psi_floor_max: f64,
    /// Solution-slice determinant deviation bound on grids.
    pub det_max: f64,
    /// Closed-loop transport deviation bound.
    pub loop_max: f64,
    /// Kernel identity bounds (`M(ζ,ζ) = I`, inverse-pair consistency).
    pub kernel_identity_max: f64,
    /// Action-quadrature order-swap agreement bound.
    pub order_swap_max: f64,
    /// Exponent-grouping agreement bound for the scalar gauges.
    pub gauge_associativity_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ode_tol: 1e-10,
            invariant_max: 1e-10,
            commute_max: 1e-8,
            min_order: 1.8,
            curvature_floor_max: 1e-8,
            prlg_floor_max: 1e-7,
            psi_floor_max: 1e-6,
            det_max: 1e-8,
            loop_max: 1e-8,
            kernel_identity_max: 1e-10,
            order_swap_max: 1e-8,
            gauge_associativity_max: 1e-12,
        }
    }
}

fn default_fd_steps() -> Vec<f64> {
    psi::DEFAULT_RESIDUAL_STEPS.to_vec()
}

fn default_curvature_steps() -> Vec<f64> {
    vec![1e-3, 5e-4, 2.5e-4]
}

fn default_seed() -> u64 {
    91
}

/// Full description of one verification run. Every field has a default, so
/// a config file only needs to spell out what it changes; unknown keys are
/// rejected with line-precise errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub parameters: ParameterConfig,
    pub initial_state: StateConfig,
    pub base_time: TimeConfig,
    pub spectral: SpectralConfig,
    pub time_grid: TimeGridConfig,
    /// Stencil steps of the evolution-equation residual ladder.
    pub fd_steps: Vec<f64>,
    /// Steps of the deformation-compatibility residual ladder.
    pub curvature_steps: Vec<f64>,
    pub prlg: PrlgConfig,
    pub flow_rectangle: FlowRectangleConfig,
    pub tolerances: Tolerances,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            parameters: ParameterConfig::default(),
            initial_state: StateConfig::default(),
            base_time: TimeConfig::default(),
            spectral: SpectralConfig::default(),
            time_grid: TimeGridConfig::default(),
            fd_steps: default_fd_steps(),
            curvature_steps: default_curvature_steps(),
            prlg: PrlgConfig::default(),
            flow_rectangle: FlowRectangleConfig::default(),
            tolerances: Tolerances::default(),
            seed: default_seed(),
        }
    }
}

impl RunConfig {
    /// The built-in demonstration configuration (γ₁ = γ₂ = 1 locus).
    pub fn demo() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn parameter_set(&self) -> ParameterSet {
        let p = &self.parameters;
        ParameterSet::new(cx(p.kappa0), cx(p.kappa1), cx(p.gamma1), cx(p.gamma2), cx(p.theta1))
    }

    pub fn initial_kns(&self) -> KnsState {
        let s = &self.initial_state;
        KnsState::new(cx(s.q1), cx(s.q2), cx(s.p1), cx(s.p2), cx(s.u))
    }

    pub fn base_time_point(&self) -> TimePoint {
        let t = &self.base_time;
        match t.chart.as_str() {
            "t" => TimePoint::t(cx(t.c1), cx(t.c2)),
            "s" => TimePoint::s(cx(t.c1), cx(t.c2)),
            _ => TimePoint::tau(cx(t.c1), cx(t.c2)),
        }
    }

    /// Canonical serialized form used for the provenance hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a(self.canonical_json().as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn validate_steps(steps: &[f64]) -> Result<(), HarnessError> {
    if steps.is_empty() || steps.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
        return Err(HarnessError::BadSteps);
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HarnessError::BadSteps);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One residual measurement of a ladder: the step (or tolerance) it was
/// taken at and the worst residual over the evaluated nodes.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepResidual {
    pub h: f64,
    pub max_residual: f64,
}

/// One row of the verification table.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub id: String,
    pub nodes: usize,
    pub residuals: Vec<StepResidual>,
    pub fitted_order: Option<f64>,
    pub extrapolated_floor: Option<f64>,
    pub requirement: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub crate_version: String,
    pub mutation: Option<String>,
    pub steps_override: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub timestamp_unix_s: u64,
    pub provenance: Provenance,
    pub checks: Vec<CheckRow>,
    pub pass: bool,
}

impl Report {
    fn new(command: &str, cfg: &RunConfig, mutation: Option<&str>, steps: Option<&[f64]>, checks: Vec<CheckRow>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Report {
            command: command.to_string(),
            timestamp_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            provenance: Provenance {
                config_hash: cfg.hash(),
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                mutation: mutation.map(|s| s.to_string()),
                steps_override: steps.map(|s| s.to_vec()),
            },
            checks,
            pass,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn check(&self, id: &str) -> Option<&CheckRow> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Least-squares slope of `ln(residual)` against `ln(h)` — the empirical
/// convergence order of a residual ladder.
pub fn fitted_order(rows: &[StepResidual]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let n = rows.len() as f64;
    let xs: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_residual.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Extrapolated `h → 0` residual: fit `r ≈ C·h^p` through the extreme
/// ladder entries and report what remains of the finest residual after the
/// fitted decaying part is removed. A ladder that keeps decaying cleanly
/// extrapolates to ≈ 0; a plateau reports ≈ the plateau height.
pub fn extrapolated_floor(rows: &[StepResidual]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let coarse = rows.iter().fold(rows[0], |a, &b| if b.h > a.h { b } else { a });
    let fine = rows.iter().fold(rows[0], |a, &b| if b.h < a.h { b } else { a });
    if rows.len() < 2 || coarse.h <= fine.h {
        return Some(fine.max_residual);
    }
    let (rc, rf) = (coarse.max_residual, fine.max_residual);
    if rc <= rf || rf <= 0.0 {
        return Some(rf);
    }
    let p = (rc / rf).ln() / (coarse.h / fine.h).ln();
    if !p.is_finite() || p < 0.1 {
        return Some(rf);
    }
    let cst = (rc - rf) / (coarse.h.powf(p) - fine.h.powf(p));
    Some((rf - cst * fine.h.powf(p)).max(0.0))
}

fn ladder_row(id: &str, nodes: usize, rows: Vec<StepResidual>, min_order: f64, floor_max: f64) -> CheckRow {
    let order = fitted_order(&rows);
    let floor = extrapolated_floor(&rows);
    let pass = order.map_or(false, |o| o >= min_order) && floor.map_or(false, |f| f < floor_max);
    CheckRow {
        id: id.to_string(),
        nodes,
        residuals: rows,
        fitted_order: order,
        extrapolated_floor: floor,
        requirement: format!("fitted order >= {min_order} and extrapolated floor < {floor_max:e}"),
        pass,
    }
}

fn bound_row(id: &str, nodes: usize, value: f64, max: f64) -> CheckRow {
    CheckRow {
        id: id.to_string(),
        nodes,
        residuals: vec![StepResidual { h: 0.0, max_residual: value }],
        fitted_order: None,
        extrapolated_floor: None,
        requirement: format!("max residual < {max:e}"),
        pass: value < max,
    }
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

/// A finished command run: the report plus every file written.
pub struct CommandOutput {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

fn write_output(out_dir: &Path, name: &str, content: &str, files: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    fs::write(&path, content)?;
    files.push(path);
    Ok(())
}

fn finish(
    command: &str,
    cfg: &RunConfig,
    out_dir: &Path,
    mutation: Option<&str>,
    steps: Option<&[f64]>,
    checks: Vec<CheckRow>,
    mut files: Vec<PathBuf>,
    csvs: Vec<(&str, String)>,
) -> Result<CommandOutput, HarnessError> {
    for (name, content) in csvs {
        write_output(out_dir, name, &content, &mut files)?;
    }
    let report = Report::new(command, cfg, mutation, steps, checks);
    write_output(out_dir, "report.json", &report.to_json(), &mut files)?;
    Ok(CommandOutput { report, files })
}

fn fmt_c(v: C64) -> String {
    format!("{},{}", v.re, v.im)
}

// ---------------------------------------------------------------------------
// Random sampling
// ---------------------------------------------------------------------------

fn jitter(rng: &mut ChaCha8Rng, scale: f64) -> C64 {
    c(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
}

fn perturbed_state(base: &KnsState, rng: &mut ChaCha8Rng, scale: f64) -> KnsState {
    KnsState::new(
        base.q1 + jitter(rng, scale),
        base.q2 + jitter(rng, scale),
        base.p1 + jitter(rng, scale),
        base.p2 + jitter(rng, scale),
        base.u + jitter(rng, scale),
    )
}

fn kns_distance(a: &KnsState, b: &KnsState) -> f64 {
    [a.q1 - b.q1, a.q2 - b.q2, a.p1 - b.p1, a.p2 - b.p2, a.u - b.u]
        .iter()
        .map(|d| d.norm())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Command: flow
// ---------------------------------------------------------------------------

pub const FLOW_MUTATIONS: &[&str] = &["field-sign"];

fn parse_flow_mutation(mutate: Option<&str>) -> Result<FieldMutation, HarnessError> {
    match mutate {
        None => Ok(FieldMutation::None),
        Some("field-sign") => Ok(FieldMutation::FlipSecondMomentumRate),
        Some(other) => Err(HarnessError::UnknownMutation {
            command: "flow",
            given: other.to_string(),
            valid: FLOW_MUTATIONS.join(", "),
        }),
    }
}

/// Integrate the canonical flows, dump the trajectory, and check two-time
/// commutativity (absolute, tolerance scaling) and reversibility.
pub fn cmd_flow(cfg: &RunConfig, out_dir: &Path, mutate: Option<&str>) -> Result<CommandOutput, HarnessError> {
    let mutation = parse_flow_mutation(mutate)?;
    let pr = cfg.parameter_set();
    let st = cfg.initial_kns();
    let t0 = cfg.base_time_point().to_t();
    let tol = cfg.tolerances.ode_tol;
    let rect = &cfg.flow_rectangle;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Trajectory dump along the rectangle's two legs.
    let path = FlowPath {
        start: t0,
        segments: vec![
            PathSegment { j: 1, to: t0.c1 + cr(rect.dt1) },
            PathSegment { j: 2, to: t0.c2 + cr(rect.dt2) },
        ],
    };
    let traj = integrate_path(Form::Kns, &path, &State::Kns(st), &pr, tol)?;
    let csv = trajectory_csv(&traj);

    let mut checks = Vec::new();

    // Commutativity over seeded random regular initial states.
    let mut worst = 0.0f64;
    for _ in 0..rect.commute_states {
        let s = perturbed_state(&st, &mut rng, 0.15);
        let dev = commute_check_mutated(
            Form::Kns,
            &(t0, State::Kns(s)),
            cr(rect.dt1),
            cr(rect.dt2),
            &pr,
            tol,
            mutation,
        )?;
        worst = worst.max(dev);
    }
    checks.push(bound_row("commute-kns", rect.commute_states, worst, cfg.tolerances.commute_max));

    // Deviation scales with the integrator tolerance (slope of the log-log
    // fit across the tolerance ladder, expected ≈ 1 for adaptive control).
    let mut scaling = Vec::new();
    for &t in &rect.commute_tols {
        let dev = commute_check_mutated(
            Form::Kns,
            &(t0, State::Kns(st)),
            cr(rect.dt1),
            cr(rect.dt2),
            &pr,
            t,
            mutation,
        )?;
        scaling.push(StepResidual { h: t, max_residual: dev });
    }
    let slope = fitted_order(&scaling);
    let scale_max = scaling.iter().map(|r| r.max_residual).fold(0.0, f64::max);
    checks.push(CheckRow {
        id: "commute-tol-scaling".into(),
        nodes: 1,
        residuals: scaling,
        fitted_order: slope,
        extrapolated_floor: None,
        requirement: "deviation slope vs tolerance >= 0.5 and every deviation < 1e-6".into(),
        pass: slope.map_or(false, |s| s >= 0.5) && scale_max < 1e-6,
    });

    // Reversibility: out and back along each flow.
    let mut rev = 0.0f64;
    for j in [1u8, 2u8] {
        let dt = if j == 1 { rect.dt1 } else { rect.dt2 };
        let coord = if j == 1 { t0.c1 } else { t0.c2 };
        let fwd = integrate(Form::Kns, j, &(t0, State::Kns(st)), coord + cr(dt), &pr, tol)?;
        let back = integrate(Form::Kns, j, fwd.end(), coord, &pr, tol)?;
        if let State::Kns(end) = back.end().1 {
            rev = rev.max(kns_distance(&end, &st));
        }
    }
    checks.push(bound_row("reversibility-kns", 2, rev, cfg.tolerances.commute_max));

    finish("flow", cfg, out_dir, mutate, None, checks, Vec::new(), vec![("trajectory.csv", csv)])
}

fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    out.push_str("# canonical-flow trajectory v1\n");
    out.push_str("# columns: t1_re,t1_im,t2_re,t2_im,q1_re,q1_im,q2_re,q2_im,p1_re,p1_im,p2_re,p2_im,u_re,u_im\n");
    for (tp, state) in &traj.samples {
        if let State::Kns(k) = state {
            let t = tp.to_t();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_c(t.c1),
                fmt_c(t.c2),
                fmt_c(k.q1),
                fmt_c(k.q2),
                fmt_c(k.p1),
                fmt_c(k.p2),
                fmt_c(k.u)
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Command: lax-check
// ---------------------------------------------------------------------------

pub const LAX_MUTATIONS: &[&str] = &["state-offset"];

/// Algebraic invariants of the linear-system families over seeded random
/// samples, plus the deformation-compatibility residual ladder for all
/// three direction pairs.
pub fn cmd_lax_check(
    cfg: &RunConfig,
    out_dir: &Path,
    mutate: Option<&str>,
    steps_override: Option<&[f64]>,
) -> Result<CommandOutput, HarnessError> {
    let mutated = match mutate {
        None => false,
        Some("state-offset") => true,
        Some(other) => {
            return Err(HarnessError::UnknownMutation {
                command: "lax-check",
                given: other.to_string(),
                valid: LAX_MUTATIONS.join(", "),
            })
        }
    };
    let steps: Vec<f64> = steps_override.map(|s| s.to_vec()).unwrap_or_else(|| cfg.curvature_steps.clone());
    validate_steps(&steps)?;

    let pr = cfg.parameter_set();
    let st = cfg.initial_kns();
    let tau0 = cfg.base_time_point().to_tau();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tol = cfg.tolerances.invariant_max;

    // Invariants at 100 seeded random (time, state) samples.
    let samples = 100usize;
    let mut traceless = 0.0f64;
    let mut det_lower = 0.0f64;
    let mut offdiag = 0.0f64;
    let mut constraint = 0.0f64;
    for _ in 0..samples {
        let tp = TimePoint::tau(tau0.c1 + jitter(&mut rng, 0.2), tau0.c2 + jitter(&mut rng, 0.2));
        let s = perturbed_state(&st, &mut rng, 0.3);
        let fam = reduced_family(&tp, &s, &pr)?;
        let plain = plain_family(&tp, &s, &pr)?;
        for m in [&fam.b0_m1, &fam.b0_0, &fam.b1_0, &fam.b_inf, &fam.b1] {
            let scale = max_abs(m).max(1.0);
            traceless = traceless.max((m[(0, 0)] + m[(1, 1)]).norm() / scale);
        }
        let tau2 = tp.to_tau().c2;
        let det = fam.b0_m1[(0, 0)] * fam.b0_m1[(1, 1)] - fam.b0_m1[(0, 1)] * fam.b0_m1[(1, 0)];
        let scale = max_abs(&fam.b0_m1).max(1.0);
        det_lower = det_lower.max((det + tau2 * tau2 / 4.0).norm() / (scale * scale));
        for (a, b) in [(&plain.a0_m1, &fam.b0_m1), (&plain.a0_0, &fam.b0_0), (&plain.a1_0, &fam.b1_0)] {
            let scale = max_abs(b).max(1.0);
            offdiag = offdiag
                .max((a[(0, 1)] - b[(0, 1)]).norm() / scale)
                .max((a[(1, 0)] - b[(1, 0)]).norm() / scale);
        }
        let sample = prlg::extract(&tp, &s, &pr)?;
        constraint = constraint.max(prlg::constraint_residual(&sample));
    }
    let mut checks = vec![
        bound_row("family-traceless", samples, traceless, tol),
        bound_row("family-det-lower", samples, det_lower, tol),
        bound_row("family-offdiagonal-match", samples, offdiag, tol),
        bound_row("reduction-constraint", samples, constraint, tol),
    ];

    // Deformation-compatibility ladder, three direction pairs.
    let eta = cx(cfg.spectral.zeta);
    let mut csv = String::from("# deformation-compatibility residuals v1\n# columns: pair,h,residual\n");
    for (pair, id) in [
        (DeformationPair::EtaTau1, "curvature-eta-tau1"),
        (DeformationPair::EtaTau2, "curvature-eta-tau2"),
        (DeformationPair::Tau1Tau2, "curvature-tau1-tau2"),
    ] {
        let mut rows = Vec::new();
        for &h in &steps {
            let r = zero_curvature_residual(pair, &tau0, &st, eta, &pr, h, mutated)?;
            rows.push(StepResidual { h, max_residual: r });
            csv.push_str(&format!("{id},{h},{r}\n"));
        }
        checks.push(ladder_row(id, 1, rows, cfg.tolerances.min_order, cfg.tolerances.curvature_floor_max));
    }

    finish(
        "lax-check",
        cfg,
        out_dir,
        mutate,
        steps_override,
        checks,
        Vec::new(),
        vec![("curvature.csv", csv)],
    )
}

// ---------------------------------------------------------------------------
// Command: prlg
// ---------------------------------------------------------------------------

pub const PRLG_MUTATIONS: &[&str] = &["flip-d"];

/// Reduced-field grids: first-order system residuals, second-order
/// residuals, and the pointwise algebraic constraint, over a spacing ladder.
pub fn cmd_prlg(
    cfg: &RunConfig,
    out_dir: &Path,
    mutate: Option<&str>,
    steps_override: Option<&[f64]>,
) -> Result<CommandOutput, HarnessError> {
    let mutation = match mutate {
        None => PrlgMutation::None,
        Some("flip-d") => PrlgMutation::FlipD,
        Some(other) => {
            return Err(HarnessError::UnknownMutation {
                command: "prlg",
                given: other.to_string(),
                valid: PRLG_MUTATIONS.join(", "),
            })
        }
    };
    let spacings: Vec<f64> = steps_override.map(|s| s.to_vec()).unwrap_or_else(|| cfg.prlg.spacings.clone());
    validate_steps(&spacings)?;

    let pr = cfg.parameter_set();
    let st = cfg.initial_kns();
    let tau0 = cfg.base_time_point().to_tau();
    let (n1, n2) = (cfg.prlg.n1, cfg.prlg.n2);

    let mut first_rows = Vec::new();
    let mut second_rows = Vec::new();
    let mut constraint = 0.0f64;
    let mut finest_csv = String::new();
    for (k, &h) in spacings.iter().enumerate() {
        let grid = prlg::sample_flow_grid(&tau0, &st, &pr, h, n1, n2, mutation)?;
        let fo = prlg::first_order_residuals(&grid);
        let so = prlg::second_order_residuals(&grid)?;
        first_rows.push(StepResidual { h, max_residual: fo.max() });
        second_rows.push(StepResidual { h, max_residual: so.max() });
        constraint = constraint.max(grid.max_constraint_residual());
        if k == spacings.len() - 1 {
            finest_csv = prlg_csv(&grid);
        }
    }

    let nodes = n1 * n2;
    let checks = vec![
        ladder_row("prlg-first-order", nodes, first_rows, cfg.tolerances.min_order, cfg.tolerances.prlg_floor_max),
        ladder_row("prlg-second-order", nodes, second_rows, cfg.tolerances.min_order, cfg.tolerances.prlg_floor_max),
        bound_row("prlg-constraint", nodes * spacings.len(), constraint, cfg.tolerances.invariant_max),
    ];

    finish(
        "prlg",
        cfg,
        out_dir,
        mutate,
        steps_override,
        checks,
        Vec::new(),
        vec![("prlg_grid.csv", finest_csv)],
    )
}

fn prlg_csv(grid: &prlg::PrlgGrid) -> String {
    let mut out = String::new();
    out.push_str("# reduced-field grid v1\n");
    out.push_str("# columns: tau1_re,tau1_im,tau2_re,tau2_im,a_re,a_im,b_re,b_im,c_re,c_im,d_re,d_im,e_re,e_im,constraint_residual\n");
    let (n1, n2) = grid.dims();
    for i in 0..n1 {
        for j in 0..n2 {
            let s = grid.sample(i, j);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt_c(grid.tau1(i)),
                fmt_c(grid.tau2(j)),
                fmt_c(s.a),
                fmt_c(s.b),
                fmt_c(s.c),
                fmt_c(s.d),
                fmt_c(s.e),
                prlg::constraint_residual(s)
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Command: psi
// ---------------------------------------------------------------------------

pub const PSI_MUTATIONS: &[&str] = &[
    "potential-shift",
    "action-det-drop",
    "first-order-chain-drop",
    "log-weight-shift",
    "kappa-constant",
    "gamma-sign-flip",
    "pole-term",
    "kappa-perturb",
];

fn parse_psi_mutation(mutate: Option<&str>) -> Result<PsiMutation, HarnessError> {
    Ok(match mutate {
        None => PsiMutation::None,
        Some("potential-shift") => PsiMutation::ShiftG1,
        Some("action-det-drop") => PsiMutation::DropActionDet,
        Some("first-order-chain-drop") => PsiMutation::ChainDrop,
        Some("log-weight-shift") => PsiMutation::LogWeight,
        Some("kappa-constant") => PsiMutation::KappaConstant,
        Some("gamma-sign-flip") => PsiMutation::GammaSignFlip,
        Some("pole-term") => PsiMutation::PoleTerm,
        Some("kappa-perturb") => PsiMutation::KappaPerturb,
        Some(other) => {
            return Err(HarnessError::UnknownMutation {
                command: "psi",
                given: other.to_string(),
                valid: PSI_MUTATIONS.join(", "),
            })
        }
    })
}

/// The names of the ten evolution-equation residual families, in report
/// order: the kernel pair, the action-gauged pair, the ratio-coordinate
/// pair, the normalized pair, and the polynomial-chart pair.
pub const PSI_CHECK_IDS: [&str; 10] = [
    "kernel-tau1",
    "kernel-tau2",
    "w-tau1",
    "w-tau2",
    "xy-tau1",
    "xy-tau2",
    "psi-tau1",
    "psi-tau2",
    "poly-s1",
    "poly-s2",
];

fn residual_slots(r: &psi::NodeResiduals) -> [f64; 10] {
    [
        r.kernel[0],
        r.kernel[1],
        r.gauged[0],
        r.gauged[1],
        r.ratio[0],
        r.ratio[1],
        r.normalized[0],
        r.normalized[1],
        r.polynomial[0],
        r.polynomial[1],
    ]
}

/// Construct the two-point kernel, run the ten evolution-equation residual
/// ladders at several stencil centers, and certify the solution-grid
/// invariants (unimodularity, kernel identities, loop transport, action
/// quadrature, gauge grouping).
pub fn cmd_psi(
    cfg: &RunConfig,
    out_dir: &Path,
    mutate: Option<&str>,
    steps_override: Option<&[f64]>,
) -> Result<CommandOutput, HarnessError> {
    let mutation = parse_psi_mutation(mutate)?;
    let steps: Vec<f64> = steps_override.map(|s| s.to_vec()).unwrap_or_else(|| cfg.fd_steps.clone());
    validate_steps(&steps)?;

    let pr = cfg.parameter_set();
    let st = cfg.initial_kns();
    let tau0 = cfg.base_time_point().to_tau();
    let tols = &cfg.tolerances;
    let how = Transport::Adaptive(tols.ode_tol);
    let zeta = cx(cfg.spectral.zeta);
    let eta = cx(cfg.spectral.eta);
    let dt = cfg.time_grid.dt;

    // Stencil centers: the base point and three τ-shifted companions.
    let base = psi::base_point(&tau0, &st, zeta, eta, &pr, how)?;
    let shifted1 = psi::shift_time(&base, 1, cr(dt), &pr, how, false)?;
    let shifted2 = psi::shift_time(&base, 2, cr(dt), &pr, how, false)?;
    let shifted12 = psi::shift_time(&shifted1, 2, cr(dt), &pr, how, false)?;
    let centers = [base, shifted1, shifted2, shifted12];

    // Residual ladders: worst residual over the centers, per step.
    let mut per_id: Vec<Vec<StepResidual>> = vec![Vec::new(); PSI_CHECK_IDS.len()];
    let mut csv = String::from("# evolution-equation residuals v1\n");
    csv.push_str("# columns: h,tau1_re,tau1_im,tau2_re,tau2_im,zeta_re,zeta_im,eta_re,eta_im,");
    csv.push_str(&PSI_CHECK_IDS.join(","));
    csv.push('\n');
    for &h in &steps {
        let mut worst = [0.0f64; 10];
        for center in &centers {
            let r = psi::node_residuals(center, &pr, psi::StencilSpec::uniform(h), (0, 0), mutation)?;
            let slots = residual_slots(&r);
            let tau = center.time.to_tau();
            csv.push_str(&format!(
                "{},{},{},{},{}",
                h,
                fmt_c(tau.c1),
                fmt_c(tau.c2),
                fmt_c(center.zeta),
                fmt_c(center.eta)
            ));
            for s in slots {
                csv.push_str(&format!(",{s}"));
            }
            csv.push('\n');
            for (w, s) in worst.iter_mut().zip(slots) {
                *w = w.max(s);
            }
        }
        for (rows, w) in per_id.iter_mut().zip(worst) {
            rows.push(StepResidual { h, max_residual: w });
        }
    }
    let mut checks: Vec<CheckRow> = PSI_CHECK_IDS
        .iter()
        .zip(per_id)
        .map(|(id, rows)| ladder_row(id, centers.len(), rows, tols.min_order, tols.psi_floor_max))
        .collect();

    // Solution-grid invariants.
    let spectral: Vec<C64> = cfg.spectral.grid.iter().copied().map(cx).collect();
    let grid = psi::build_solution_grid(
        &tau0,
        &st,
        &pr,
        dt,
        cfg.time_grid.n1,
        cfg.time_grid.n2,
        &spectral,
        tols.ode_tol,
    )?;
    checks.push(bound_row(
        "grid-unimodular",
        grid.n1 * grid.n2 * spectral.len(),
        grid.max_det_deviation(),
        tols.det_max,
    ));

    let mut identity = 0.0f64;
    for i in 0..grid.n1 {
        for j in 0..grid.n2 {
            for k in 0..spectral.len() {
                let m = grid.kernel(i, j, k, k)?;
                identity = identity.max(max_abs(&(m - crate::M2::identity())));
            }
            for k in 0..spectral.len() {
                for l in (k + 1)..spectral.len() {
                    let fwd = grid.kernel(i, j, k, l)?;
                    let bwd = grid.kernel(i, j, l, k)?;
                    identity = identity.max(max_abs(&(fwd * bwd - crate::M2::identity())));
                }
            }
        }
    }
    checks.push(bound_row(
        "kernel-identity",
        grid.n1 * grid.n2 * spectral.len() * spectral.len(),
        identity,
        tols.kernel_identity_max,
    ));

    let dev = psi::loop_deviation(
        &tau0,
        &st,
        &pr,
        spectral[0],
        spectral[spectral.len() - 1],
        cr(dt),
        tols.ode_tol,
    )?;
    checks.push(bound_row("loop-deviation", 1, dev, tols.loop_max));

    // Action quadrature is order-independent.
    let a = psi::shift_time(&base, 1, cr(dt), &pr, how, false)?;
    let ab = psi::shift_time(&a, 2, cr(dt), &pr, how, false)?;
    let b = psi::shift_time(&base, 2, cr(dt), &pr, how, false)?;
    let ba = psi::shift_time(&b, 1, cr(dt), &pr, how, false)?;
    checks.push(bound_row(
        "action-order-swap",
        1,
        (ab.s_gauge - ba.s_gauge).norm(),
        tols.order_swap_max,
    ));

    // Grouping the gauge exponents either way agrees.
    let p = &shifted12;
    let m = psi::kernel(p)?[(0, 0)];
    let x = psi::ratio_coordinate(p.zeta)?;
    let y = psi::ratio_coordinate(p.eta)?;
    let f = psi::f1_gauge(x, y, &p.time, &pr, false) + psi::f2_gauge(&p.time, &pr, false);
    let grouped = (-f).exp() * ((-p.s_gauge).exp() * m);
    let flat = (-f - p.s_gauge).exp() * m;
    let assoc = (grouped - flat).norm() / flat.norm().max(1e-300);
    checks.push(bound_row("gauge-associativity", 1, assoc, tols.gauge_associativity_max));

    finish(
        "psi",
        cfg,
        out_dir,
        mutate,
        steps_override,
        checks,
        Vec::new(),
        vec![("residuals.csv", csv)],
    )
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Run one named command. `name` is the CLI subcommand spelling.
pub fn run_command(
    name: &str,
    cfg: &RunConfig,
    out_dir: &Path,
    mutate: Option<&str>,
    steps: Option<&[f64]>,
) -> Result<CommandOutput, HarnessError> {
    match name {
        "flow" => cmd_flow(cfg, out_dir, mutate),
        "lax-check" => cmd_lax_check(cfg, out_dir, mutate, steps),
        "prlg" => cmd_prlg(cfg, out_dir, mutate, steps),
        "psi" => cmd_psi(cfg, out_dir, mutate, steps),
        other => panic!("unknown command {other}"),
    }
}

// ---------------------------------------------------------------------------
