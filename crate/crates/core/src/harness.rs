//! Experiment orchestration: config ingestion, windowed runs with patching,
//! ε-sweeps with order fits, and report persistence.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mfe::{Expansion, Options, Snapshot};
use crate::mfe1d::build_modulation_1d;
use crate::mfe_nd::build_modulation_nd;
use crate::par::{map_ordered, with_jobs, Exec};
use crate::profiles::{parse_profile_labeled, validate_profile, ProblemSpec, SlowProfile};
use crate::solver::{integrate, Trajectory, WaveSystem};
use crate::spectral::{sobolev_norms, ModeSet, ModeState, DEFAULT_LABEL_CAP};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitMode {
    pub mode: Vec<i32>,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitRecipe {
    /// u_j = ε r Ω_j^{−s}, v_j = ε r' Ω_j^{1−s} with r, r' uniform in [−1, 1]
    Random {
        seed: u64,
        decay: f64,
    },
    Modes {
        modes: Vec<InitMode>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Windows(usize),
    /// ⌈1/ε⌉ windows, reaching t ≈ ε⁻²
    InvEps,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub dimension: usize,
    pub lengths: Vec<f64>,
    pub cutoff: i32,
    pub epsilons: Vec<f64>,
    pub order: usize,
    pub alpha: f64,
    pub speed_expr: String,
    pub coupling_expr: String,
    pub c0: f64,
    pub init: InitRecipe,
    pub init_scale_eps: bool,
    pub windows: Horizon,
    pub solver_tol: f64,
    pub grid_h: f64,
    pub nodes: usize,
    pub defect_stride: usize,
    pub ladder_tol: Option<f64>,
    pub label_cap: usize,
    pub fit_floor: f64,
    pub output_dir: Option<String>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    speed: SlowProfile,
    #[serde(skip)]
    coupling: SlowProfile,
}

const KEYS: &[&str] = &[
    "dimension",
    "lengths",
    "cutoff",
    "epsilons",
    "order",
    "alpha",
    "speed_expr",
    "coupling_expr",
    "c0",
    "init",
    "init_seed",
    "init_decay",
    "init_modes",
    "init_scale_eps",
    "windows",
    "solver_tol",
    "grid_h",
    "nodes",
    "defect_stride",
    "ladder_tol",
    "label_cap",
    "fit_floor",
    "output_dir",
];

struct Reader {
    table: toml::Table,
}

impl Reader {
    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.table.get(key)
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => as_float(v)
                .map(Some)
                .ok_or_else(|| Error::config(key, "expected a number")),
        }
    }

    fn int(&self, key: &str) -> Result<Option<i64>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) => Ok(Some(*i)),
            Some(_) => Err(Error::config(key, "expected an integer")),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        match self.int(key)? {
            None => Ok(None),
            Some(i) if i >= 1 => Ok(Some(i as usize)),
            Some(i) => Err(Error::config(key, format!("must be at least 1, got {i}"))),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::config(key, "expected a string")),
        }
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(Error::config(key, "expected true or false")),
        }
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| as_float(v).ok_or_else(|| Error::config(key, "expected an array of numbers")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Error::config(key, "expected an array of numbers")),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.float(key)?.unwrap_or(default);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::config(key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| Error::config(key, "missing required key"))
    }
}

fn as_float(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
    if let Some(k) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(Error::config(k.as_str(), "unknown key"));
    }
    let r = Reader { table };
    let mut warnings = Vec::new();

    let dimension = r.required("dimension", r.count("dimension")?)?;
    if dimension > 3 {
        return Err(Error::config(
            "dimension",
            format!("must be 1, 2 or 3, got {dimension}"),
        ));
    }
    let lengths = r
        .floats("lengths")?
        .unwrap_or_else(|| vec![std::f64::consts::PI; dimension]);
    if lengths.len() != dimension {
        return Err(Error::config(
            "lengths",
            format!("expected {dimension} entries, got {}", lengths.len()),
        ));
    }
    if lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::config("lengths", "lengths must be positive"));
    }
    let cutoff = r.required("cutoff", r.count("cutoff")?)? as i32;
    ModeSet::new(&lengths, cutoff).map_err(|e| Error::config("cutoff", e.to_string()))?;

    let mut epsilons = r.required("epsilons", r.floats("epsilons")?)?;
    if epsilons.is_empty() {
        return Err(Error::config("epsilons", "needs at least one value"));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::config("epsilons", format!("{e} not in (0, 1)")));
    }
    epsilons.sort_by(|a, b| b.total_cmp(a));
    epsilons.dedup();

    let order = r.required("order", r.count("order")?)?;
    if dimension > 1 && order < 4 {
        warnings.push(format!(
            "order {order} is below 4; the multi-dimensional estimates assume N >= 4"
        ));
    }
    let alpha = r.float("alpha")?.unwrap_or(1.0 / order as f64);
    if dimension > 1 && !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("{alpha} not in (0, 1)")));
    }

    let c0 = r.positive("c0", 0.25)?;
    let windows = match r.get("windows") {
        None => Horizon::Windows(1),
        Some(toml::Value::String(s)) if s == "inv_eps" => Horizon::InvEps,
        Some(toml::Value::Integer(_)) => Horizon::Windows(r.count("windows")?.unwrap_or(1)),
        Some(_) => return Err(Error::config("windows", "expected a positive integer or \"inv_eps\"")),
    };
    let horizon = epsilons.iter().map(|e| windows_for(windows, *e)).max().unwrap_or(1) as f64;

    let speed_expr = r.required("speed_expr", r.string("speed_expr")?)?;
    let speed = parse_profile_labeled(&speed_expr, "c", 2).map_err(|e| Error::config("speed_expr", e.to_string()))?;
    let samples = (2000.0 * horizon) as usize + 1;
    let rep = validate_profile(&speed, horizon, c0, samples).map_err(|e| Error::config("speed_expr", e.to_string()))?;
    if !rep.passed {
        return Err(Error::config(
            "speed_expr",
            format!("speed dips to {} at tau = {}, below c0 = {c0}", rep.min, rep.argmin),
        ));
    }
    let coupling_expr = r.string("coupling_expr")?.unwrap_or_else(|| "1".into());
    let coupling =
        parse_profile_labeled(&coupling_expr, "a", 2).map_err(|e| Error::config("coupling_expr", e.to_string()))?;
    validate_profile(&coupling, horizon, f64::NEG_INFINITY, samples)
        .map_err(|e| Error::config("coupling_expr", e.to_string()))?;

    let init_kind = r.string("init")?.unwrap_or_else(|| "random".into());
    let init = match init_kind.as_str() {
        "random" => {
            let seed = match r.int("init_seed")? {
                None => 0,
                Some(s) if s >= 0 => s as u64,
                Some(s) => return Err(Error::config("init_seed", format!("must be nonnegative, got {s}"))),
            };
            let decay = r.float("init_decay")?.unwrap_or(2.0);
            if !decay.is_finite() {
                return Err(Error::config("init_decay", "must be finite"));
            }
            InitRecipe::Random { seed, decay }
        }
        "modes" => InitRecipe::Modes {
            modes: init_modes(&r, dimension, &lengths, cutoff)?,
        },
        other => {
            return Err(Error::config(
                "init",
                format!("expected \"random\" or \"modes\", got \"{other}\""),
            ))
        }
    };
    let init_scale_eps = r.boolean("init_scale_eps")?.unwrap_or(true);

    let solver_tol = r.positive("solver_tol", 1e-12)?;
    let grid_h = r.positive("grid_h", 5e-3)?;
    if grid_h > 1.0 {
        return Err(Error::config("grid_h", "must not exceed the window length 1"));
    }
    let nodes = r.count("nodes")?.unwrap_or(32);
    if nodes < 4 {
        return Err(Error::config("nodes", "needs at least 4"));
    }
    let defect_stride = r.count("defect_stride")?.unwrap_or(if dimension == 1 { 1 } else { 20 });
    let ladder_tol = r.float("ladder_tol")?;
    if let Some(t) = ladder_tol {
        if !(t > 0.0) {
            return Err(Error::config("ladder_tol", "must be positive"));
        }
    }
    let label_cap = r.count("label_cap")?.unwrap_or(DEFAULT_LABEL_CAP);
    let fit_floor = r.float("fit_floor")?.unwrap_or(1e-14);
    if !(fit_floor >= 0.0) {
        return Err(Error::config("fit_floor", "must be nonnegative"));
    }
    let output_dir = r.string("output_dir")?;

    Ok(ExperimentConfig {
        dimension,
        lengths,
        cutoff,
        epsilons,
        order,
        alpha,
        speed_expr,
        coupling_expr,
        c0,
        init,
        init_scale_eps,
        windows,
        solver_tol,
        grid_h,
        nodes,
        defect_stride,
        ladder_tol,
        label_cap,
        fit_floor,
        output_dir,
        warnings,
        speed,
        coupling,
    })
}

fn init_modes(r: &Reader, dimension: usize, lengths: &[f64], cutoff: i32) -> Result<Vec<InitMode>> {
    const KEY: &str = "init_modes";
    let bad = || Error::config(KEY, format!("expected an array of [index x{dimension}, u, v] entries"));
    let Some(toml::Value::Array(items)) = r.get(KEY) else {
        return Err(Error::config(KEY, "required when init = \"modes\""));
    };
    let modes = ModeSet::new(lengths, cutoff)?;
    let mut out = Vec::new();
    for item in items {
        let toml::Value::Array(parts) = item else {
            return Err(bad());
        };
        if parts.len() != dimension + 2 {
            return Err(bad());
        }
        let mut mode = Vec::with_capacity(dimension);
        for p in &parts[..dimension] {
            match p {
                toml::Value::Integer(i) => mode.push(*i as i32),
                _ => return Err(bad()),
            }
        }
        let u = as_float(&parts[dimension]).ok_or_else(bad)?;
        let v = as_float(&parts[dimension + 1]).ok_or_else(bad)?;
        let mut key = [0i32; 3];
        key[..dimension].copy_from_slice(&mode);
        if modes.index_of_abs(&key).is_none() || mode.iter().any(|&j| j < 1) {
            return Err(Error::config(
                KEY,
                format!("mode {mode:?} is not a positive mode within the cutoff"),
            ));
        }
        out.push(InitMode { mode, u, v });
    }
    Ok(out)
}

fn windows_for(h: Horizon, eps: f64) -> usize {
    match h {
        Horizon::Windows(w) => w,
        Horizon::InvEps => ((1.0 / eps) - 1e-9).ceil().max(1.0) as usize,
    }
}

impl ExperimentConfig {
    pub fn spec(&self, eps: f64) -> Result<ProblemSpec> {
        ProblemSpec::new(
            self.lengths.clone(),
            self.speed.clone(),
            self.coupling.clone(),
            eps,
            self.c0,
        )
    }

    pub fn windows_for(&self, eps: f64) -> usize {
        windows_for(self.windows, eps)
    }

    /// Replaces the random-data seed; explicit mode lists are unaffected.
    pub fn set_seed(&mut self, seed: u64) {
        if let InitRecipe::Random { seed: s, .. } = &mut self.init {
            *s = seed;
        }
    }

    pub fn mode_set(&self) -> Result<ModeSet> {
        ModeSet::new(&self.lengths, self.cutoff)
    }

    pub fn initial_state(&self, eps: f64) -> Result<ModeState> {
        let modes = self.mode_set()?;
        let mut s = ModeState::zeros(modes.len());
        let scale = if self.init_scale_eps { eps } else { 1.0 };
        match &self.init {
            InitRecipe::Random { seed, decay } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                for (m, om) in modes.omegas.iter().enumerate() {
                    s.u[m] = scale * rng.gen_range(-1.0..1.0) * om.powf(-decay);
                    s.v[m] = scale * rng.gen_range(-1.0..1.0) * om.powf(1.0 - decay);
                }
            }
            InitRecipe::Modes { modes: list } => {
                for im in list {
                    let mut key = [0i32; 3];
                    key[..im.mode.len()].copy_from_slice(&im.mode);
                    let m = modes
                        .index_of_abs(&key)
                        .ok_or_else(|| Error::config("init_modes", format!("mode {:?} not present", im.mode)))?;
                    s.u[m] += scale * im.u;
                    s.v[m] += scale * im.v;
                }
            }
        }
        Ok(s)
    }

    /// Pretty JSON echo of the resolved configuration, defaults included.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the resolved configuration and the crate version.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        h.update(VERSION.as_bytes());
        format!("{:x}", h.finalize())
    }

    fn options(&self, exec: Exec) -> Options {
        Options {
            nodes: self.nodes,
            label_cap: self.label_cap,
            exec,
        }
    }
}

/// Builds the expansion for the window starting at τ₀ from a mode state at t = τ₀/ε.
pub fn build_expansion(
    cfg: &ExperimentConfig,
    eps: f64,
    start: &ModeState,
    tau0: f64,
    exec: Exec,
) -> Result<Expansion> {
    let spec = cfg.spec(eps)?;
    let opts = cfg.options(exec);
    if cfg.dimension == 1 {
        build_modulation_1d(start, &spec, cfg.cutoff, cfg.order, tau0, &opts)
    } else {
        build_modulation_nd(
            start,
            &spec,
            cfg.cutoff,
            cfg.order,
            cfg.alpha,
            cfg.ladder_tol,
            tau0,
            &opts,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: f64,
    pub action: f64,
    pub cal_i: f64,
    pub defect: Option<f64>,
    pub remainder: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSummary {
    pub index: usize,
    pub tau0: f64,
    pub labels: usize,
    pub cal_i_start: f64,
    pub cal_i_end: f64,
    /// |𝓘(τ₀+1) − 𝓘(τ₀)|
    pub drift: f64,
    pub defect_max: f64,
    pub remainder_end: f64,
    /// 2c Σ Ω²|z^{⟨j⟩}|² at τ₀
    pub leading: f64,
    pub link_cal: f64,
    pub link_action: f64,
    pub diag_norm: f64,
    pub off_norm: f64,
    pub near_work_max: f64,
    pub invariant_imag_max: f64,
    pub reconstruction_imag_max: f64,
}

pub struct WindowOutput {
    pub expansion: Expansion,
    pub rows: Vec<Row>,
    pub summary: WindowSummary,
    pub trajectory: Trajectory,
    pub end: ModeState,
}

/// One window [n, n+1] in slow time: expansion from the start state, reference
/// solution across the window, and the sampled comparison series.
pub fn run_window(
    cfg: &ExperimentConfig,
    eps: f64,
    start: &ModeState,
    index: usize,
    exec: Exec,
) -> Result<WindowOutput> {
    let tau0 = index as f64;
    let mut s0 = start.clone();
    s0.t = tau0 / eps;
    let ex = build_expansion(cfg, eps, &s0, tau0, exec)?;
    let sys = WaveSystem::new(cfg.spec(eps)?, cfg.cutoff)?;
    let traj = integrate(&sys, &s0, (tau0 + 1.0) / eps, cfg.solver_tol, cfg.grid_h / eps)?;
    let taus: Vec<f64> = traj.times.iter().map(|t| (t * eps).clamp(tau0, tau0 + 1.0)).collect();
    let probe = ex.probe(&taus)?;
    let inv = ex.invariant(&probe);
    let last = taus.len() - 1;
    let picked: Vec<usize> = (0..taus.len())
        .filter(|i| i % cfg.defect_stride == 0 || *i == last)
        .collect();
    let sub_taus: Vec<f64> = picked.iter().map(|&i| taus[i]).collect();
    let defect = ex.defect_report(&sub_taus)?.norm;

    let modes = &ex.setup.modes;
    let mut rows = Vec::with_capacity(taus.len());
    let mut recon_imag: f64 = 0.0;
    let mut next = 0;
    for (p, st) in traj.states.iter().enumerate() {
        let (rec, residue) = ex.reconstruct_at(&probe, p);
        recon_imag = recon_imag.max(residue);
        let mut diff = ModeState::zeros(modes.len());
        for m in 0..modes.len() {
            diff.u[m] = st.u[m] - rec.u[m];
            diff.v[m] = st.v[m] - rec.v[m];
        }
        let (g, v) = sobolev_norms(modes, &diff);
        let d = if next < picked.len() && picked[next] == p {
            next += 1;
            Some(defect[next - 1])
        } else {
            None
        };
        rows.push(Row {
            t: traj.times[p],
            action: traj.action[p],
            cal_i: inv[p].value,
            defect: d,
            remainder: g.hypot(v),
            window: index,
        });
    }

    let sub_probe = ex.probe(&sub_taus)?;
    let (mut diag_norm, mut off_norm) = (0.0f64, 0.0f64);
    for p in 0..sub_taus.len() {
        let n = ex.combined_norm(&sub_probe, p);
        diag_norm = diag_norm.max(n.diag);
        off_norm = off_norm.max(n.off);
    }
    let near_work_max = if cfg.dimension > 1 {
        ex.near_work(&sub_probe).iter().map(|w| w.norm()).fold(0.0, f64::max)
    } else {
        0.0
    };
    let summary = WindowSummary {
        index,
        tau0,
        labels: ex.label_count(),
        cal_i_start: inv[0].value,
        cal_i_end: inv[last].value,
        drift: (inv[last].value - inv[0].value).abs(),
        defect_max: defect.iter().copied().fold(0.0, f64::max),
        remainder_end: rows[last].remainder,
        leading: inv[0].leading,
        link_cal: (inv[0].value - inv[0].leading).abs(),
        link_action: (traj.action[0] - inv[0].leading).abs(),
        diag_norm,
        off_norm,
        near_work_max,
        invariant_imag_max: inv.iter().map(|s| s.imag.abs()).fold(0.0, f64::max),
        reconstruction_imag_max: recon_imag,
    };
    let end = traj.last().clone();
    Ok(WindowOutput {
        expansion: ex,
        rows,
        summary,
        trajectory: traj,
        end,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub defect: f64,
    pub remainder: f64,
    pub drift: f64,
    /// transition at the first interior boundary
    pub jump: Option<f64>,
    pub action_dev: f64,
    pub link_cal: f64,
    pub link_action: f64,
    pub diag: f64,
    pub off: f64,
    pub near_work: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub epsilon: f64,
    pub windows: Vec<WindowSummary>,
    /// |𝓘_n(n) − 𝓘_{n−1}(n)| at each interior boundary
    pub jumps: Vec<f64>,
    pub metrics: Metrics,
    #[serde(skip)]
    pub rows: Vec<Row>,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

/// Chains windows, rebuilding the expansion from the reference state at each boundary.
pub fn run_patched(cfg: &ExperimentConfig, eps: f64, windows: usize, exec: Exec) -> Result<RunResult> {
    if windows == 0 {
        return Err(Error::InvalidArgument("at least one window is required".into()));
    }
    let mut state = cfg.initial_state(eps)?;
    let mut summaries: Vec<WindowSummary> = Vec::with_capacity(windows);
    let mut jumps = Vec::new();
    let mut rows = Vec::new();
    let mut trajectory: Option<Trajectory> = None;
    for n in 0..windows {
        let out = run_window(cfg, eps, &state, n, exec)?;
        if let Some(prev) = summaries.last() {
            jumps.push((out.summary.cal_i_start - prev.cal_i_end).abs());
        }
        rows.extend(out.rows);
        trajectory = Some(match trajectory {
            None => out.trajectory,
            Some(mut acc) => {
                let tr = out.trajectory;
                acc.times.extend_from_slice(&tr.times[1..]);
                acc.states.extend_from_slice(&tr.states[1..]);
                acc.action.extend_from_slice(&tr.action[1..]);
                acc.grad_norm.extend_from_slice(&tr.grad_norm[1..]);
                acc.vel_norm.extend_from_slice(&tr.vel_norm[1..]);
                acc.stats.steps += tr.stats.steps;
                acc.stats.rejected += tr.stats.rejected;
                acc
            }
        });
        summaries.push(out.summary);
        state = out.end;
    }
    let trajectory = trajectory.expect("at least one window");
    let i0 = trajectory.action[0];
    let first = &summaries[0];
    let metrics = Metrics {
        defect: first.defect_max,
        remainder: first.remainder_end,
        drift: first.drift,
        jump: jumps.first().copied(),
        action_dev: trajectory.action.iter().map(|a| (a - i0).abs()).fold(0.0, f64::max),
        link_cal: first.link_cal,
        link_action: first.link_action,
        diag: first.diag_norm,
        off: first.off_norm,
        near_work: first.near_work_max,
    };
    Ok(RunResult {
        epsilon: eps,
        windows: summaries,
        jumps,
        metrics,
        rows,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub used: Vec<[f64; 2]>,
    /// ε values whose magnitude was at or below the floor
    pub below_floor: Vec<f64>,
}

/// Least-squares fit of log(magnitude) against log(ε).
pub fn estimate_order(points: &[(f64, f64)], floor: f64) -> Result<OrderFit> {
    let mut used = Vec::new();
    let mut below_floor = Vec::new();
    for &(e, m) in points {
        if !(e > 0.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("unusable point ({e}, {m})")));
        }
        if m <= floor || m <= 0.0 {
            below_floor.push(e);
        } else {
            used.push([e, m]);
        }
    }
    if used.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "order fit needs two points above the floor, have {}",
            used.len()
        )));
    }
    let n = used.len() as f64;
    let xs: Vec<f64> = used.iter().map(|p| p[0].ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| p[1].ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("order fit needs distinct epsilon values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if used.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(OrderFit {
        slope,
        intercept,
        stderr,
        used,
        below_floor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    BelowFloor,
    Insufficient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub name: String,
    pub expected: f64,
    pub tolerance: f64,
    /// whether the rule counts toward the overall verdict
    pub gated: bool,
    pub epsilons: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub fit: Option<OrderFit>,
    pub status: FitStatus,
    pub pass: bool,
}

struct Rule {
    name: &'static str,
    expected: f64,
    tolerance: f64,
    gated: bool,
    pick: fn(&Metrics) -> Option<f64>,
}

fn rules(cfg: &ExperimentConfig) -> Vec<Rule> {
    let n = cfg.order as f64;
    let mut out = Vec::new();
    let mut rule = |name, expected, tolerance, gated, pick| {
        out.push(Rule {
            name,
            expected,
            tolerance,
            gated,
            pick,
        })
    };
    if cfg.dimension == 1 {
        rule("defect", n + 2.0, 0.5, true, |m: &Metrics| Some(m.defect));
        rule("remainder", n + 1.0, 0.5, true, |m: &Metrics| Some(m.remainder));
        rule("drift", n + 2.0, 0.5, true, |m: &Metrics| Some(m.drift));
        rule("jump", n + 2.0, 0.5, true, |m: &Metrics| m.jump);
    } else {
        let a = cfg.alpha;
        rule("diag", 1.0, 0.3, true, |m: &Metrics| Some(m.diag));
        rule("off", 2.0 + a, 0.5, true, |m: &Metrics| Some(m.off));
        rule("defect", 4.0 - 1.0 / n, 0.5, true, |m: &Metrics| Some(m.defect));
        rule("remainder", 3.0 - a, 0.5, true, |m: &Metrics| Some(m.remainder));
        rule("drift", 4.0 - 1.0 / n, 0.5, true, |m: &Metrics| Some(m.drift));
        rule("near_work", 5.0 - 1.0 / n, 0.5, false, |m: &Metrics| Some(m.near_work));
        rule("jump", 4.0 - 1.0 / n, 0.5, false, |m: &Metrics| m.jump);
    }
    rule("action_dev", 3.0, 0.5, true, |m: &Metrics| Some(m.action_dev));
    rule("link_cal", 3.0, 0.5, true, |m: &Metrics| Some(m.link_cal));
    rule("link_action", 3.0, 0.5, true, |m: &Metrics| Some(m.link_action));
    out
}

pub fn fit_runs(cfg: &ExperimentConfig, runs: &[RunResult]) -> Vec<FitReport> {
    rules(cfg)
        .into_iter()
        .filter_map(|rule| {
            let pts: Vec<(f64, f64)> = runs
                .iter()
                .filter_map(|r| (rule.pick)(&r.metrics).map(|m| (r.epsilon, m)))
                .collect();
            if pts.is_empty() {
                return None;
            }
            let (fit, status) = match estimate_order(&pts, cfg.fit_floor) {
                Ok(f) => (Some(f), FitStatus::Fitted),
                Err(_) if pts.iter().all(|p| p.1 <= cfg.fit_floor) => (None, FitStatus::BelowFloor),
                Err(_) => (None, FitStatus::Insufficient),
            };
            let pass = match &fit {
                Some(f) => (f.slope - rule.expected).abs() <= rule.tolerance,
                None => status == FitStatus::BelowFloor || status == FitStatus::Insufficient,
            };
            Some(FitReport {
                name: rule.name.to_string(),
                expected: rule.expected,
                tolerance: rule.tolerance,
                gated: rule.gated,
                epsilons: pts.iter().map(|p| p.0).collect(),
                magnitudes: pts.iter().map(|p| p.1).collect(),
                fit,
                status,
                pass,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: Option<ExperimentConfig>,
    pub runs: Vec<RunResult>,
    pub fits: Vec<FitReport>,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn empty() -> ExperimentReport {
        ExperimentReport {
            tool: "wavemfe".into(),
            version: VERSION.into(),
            config_hash: String::new(),
            config: None,
            runs: Vec::new(),
            fits: Vec::new(),
            pass: true,
        }
    }

    fn from_runs(cfg: &ExperimentConfig, runs: Vec<RunResult>, fits: Vec<FitReport>) -> ExperimentReport {
        let pass = fits.iter().filter(|f| f.gated).all(|f| f.pass);
        ExperimentReport {
            tool: "wavemfe".into(),
            version: VERSION.into(),
            config_hash: cfg.hash(),
            config: Some(cfg.clone()),
            runs,
            fits,
            pass,
        }
    }
}

fn exec_for(jobs: usize) -> Exec {
    if jobs > 1 {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// A single run at the largest ε of the config, without order fits.
pub fn run_single(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    let eps = cfg.epsilons[0];
    let exec = exec_for(jobs);
    let run = with_jobs(jobs, || run_patched(cfg, eps, cfg.windows_for(eps), exec))?;
    Ok(ExperimentReport::from_runs(cfg, vec![run], Vec::new()))
}

/// All ε of the config, run concurrently up to `jobs`, followed by the order fits.
pub fn sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    let exec = exec_for(jobs);
    let runs = with_jobs(jobs, || {
        map_ordered(&cfg.epsilons, exec, |&eps| {
            run_patched(cfg, eps, cfg.windows_for(eps), exec)
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let fits = fit_runs(cfg, &runs);
    Ok(ExperimentReport::from_runs(cfg, runs, fits))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn run_csv(rows: &[Row]) -> String {
    let mut s = String::from("t,I,calI,defect_norm,remainder_H1L2,window_index\n");
    for r in rows {
        let d = r.defect.map(num).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            num(r.t),
            num(r.action),
            num(r.cal_i),
            d,
            num(r.remainder),
            r.window
        ));
    }
    s
}

pub fn run_file_name(eps: f64) -> String {
    format!("run_eps{eps}.csv")
}

pub fn trajectory_file_name(eps: f64) -> String {
    format!("trajectory_eps{eps}.csv")
}

/// Writes to a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRun<'a> {
    epsilon: f64,
    csv: String,
    trajectory_csv: String,
    #[serde(flatten)]
    run: &'a RunResult,
}

#[derive(Serialize)]
struct Summary<'a> {
    tool: &'a str,
    version: &'a str,
    config_hash: &'a str,
    config: &'a Option<ExperimentConfig>,
    runs: Vec<SummaryRun<'a>>,
    fits: &'a [FitReport],
    pass: bool,
}

/// Persists per-run CSVs and `summary.json`; returns the written paths.
pub fn emit_report(report: &ExperimentReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut written = Vec::new();
    let mut runs = Vec::new();
    for run in &report.runs {
        let csv = run_file_name(run.epsilon);
        let traj = trajectory_file_name(run.epsilon);
        let p = outdir.join(&csv);
        write_atomic(&p, run_csv(&run.rows).as_bytes())?;
        written.push(p);
        let p = outdir.join(&traj);
        write_atomic(&p, run.trajectory.to_csv().as_bytes())?;
        written.push(p);
        runs.push(SummaryRun {
            epsilon: run.epsilon,
            csv,
            trajectory_csv: traj,
            run,
        });
    }
    let summary = Summary {
        tool: &report.tool,
        version: &report.version,
        config_hash: &report.config_hash,
        config: &report.config,
        runs,
        fits: &report.fits,
        pass: report.pass,
    };
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    let p = outdir.join("summary.json");
    write_atomic(&p, text.as_bytes())?;
    written.push(p);
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotFile {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub snapshot: Snapshot,
}

/// Expansions of the first window for every ε of the config.
pub fn snapshots(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SnapshotFile>> {
    let exec = exec_for(jobs);
    let hash = cfg.hash();
    with_jobs(jobs, || {
        map_ordered(&cfg.epsilons, exec, |&eps| {
            let s0 = cfg.initial_state(eps)?;
            let ex = build_expansion(cfg, eps, &s0, 0.0, exec)?;
            Ok(SnapshotFile {
                tool: "wavemfe".into(),
                version: VERSION.into(),
                config_hash: hash.clone(),
                snapshot: ex.snapshot(),
            })
        })
    })
    .into_iter()
    .collect()
}

pub fn emit_snapshots(files: &[SnapshotFile], outdir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut written = Vec::new();
    for f in files {
        let p = outdir.join(format!("snapshot_eps{}.json", f.snapshot.epsilon));
        let mut text = serde_json::to_string_pretty(f).map_err(|e| Error::Internal(e.to_string()))?;
        text.push('\n');
        write_atomic(&p, text.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}
