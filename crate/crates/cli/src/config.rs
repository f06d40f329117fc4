use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ma_core::data::{FieldSpec, PlanarMode, ProblemSpec, StabilityOptions};
use ma_core::geometry::Domain;
use ma_core::minimizer::MinimizerOptions;
use ma_core::Mesh;
use serde::{Deserialize, Serialize};

/// Environment variable that replaces `output_dir` from the config file.
pub const OUTPUT_ENV: &str = "MA_MIN_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Disk { radius: f64 },
    BoundarySamples(Vec<[f64; 2]>),
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig::Disk { radius: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    /// Boundary quadrature nodes; 2n when absent.
    pub m: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 64, m: None }
    }
}

/// Thresholds for the `verify` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub n_chords: usize,
    pub chord_h_min: f64,
    pub chord_h_max: f64,
    /// Chord identity gap allowed, in units of the grid spacing.
    pub chord_gap_factor: f64,
    pub chord_positions: Vec<f64>,
    pub chord_heights: Vec<f64>,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub separation_min: f64,
    pub separation_max: f64,
    pub el_tests: usize,
    pub el_bound: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            n_chords: 20,
            chord_h_min: 0.1,
            chord_h_max: 0.8,
            chord_gap_factor: 10.0,
            chord_positions: vec![0.0, 0.3, 0.55],
            chord_heights: vec![0.25, 0.3, 0.35, 0.4],
            ratio_min: 0.05,
            ratio_max: 20.0,
            separation_min: 0.1,
            separation_max: 10.0,
            el_tests: 20,
            el_bound: 5e-2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PogorelovConfig {
    /// Dimension, at least 3.
    pub n: usize,
    pub gamma: f64,
    pub tmax: f64,
    /// Steepness of the truncating profile.
    pub k: f64,
    /// Weight of the v̄ comparison function.
    pub delta: f64,
    pub samples: usize,
    pub quadratics: usize,
}

impl Default for PogorelovConfig {
    fn default() -> Self {
        PogorelovConfig {
            n: 3,
            gamma: 0.5,
            tmax: 1.0,
            k: 10.0,
            delta: 0.1,
            samples: 50,
            quadratics: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub t0: f64,
    /// Tabulated (t, F, F′) CSV; the log-barrier cap with the given t0 when absent.
    pub table: Option<PathBuf>,
    pub tol: f64,
    pub max_outer: usize,
    pub floor_fraction: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            t0: 10.0,
            table: None,
            tol: 1e-3,
            max_outer: 200,
            floor_fraction: 0.01,
        }
    }
}

/// f_k = f + (perturbation modes)/k for each k; the limit is the unperturbed data.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompactnessConfig {
    pub ks: Vec<f64>,
    pub perturbation: Vec<PlanarMode>,
}

impl Default for CompactnessConfig {
    fn default() -> Self {
        CompactnessConfig {
            ks: vec![1.0, 2.0, 4.0, 8.0],
            perturbation: vec![PlanarMode {
                wavevector: [1.0, 0.0],
                cos: 0.0,
                sin: 1.0,
            }],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub domain: DomainConfig,
    pub grid: GridConfig,
    pub data: ProblemSpec,
    /// `solver.stability` is overwritten by the top-level `stability` table.
    pub solver: MinimizerOptions,
    pub stability: StabilityOptions,
    pub diagnostics: DiagnosticsConfig,
    pub pogorelov: PogorelovConfig,
    pub energy: EnergyConfig,
    pub compactness: CompactnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("run"),
            domain: DomainConfig::default(),
            grid: GridConfig::default(),
            data: ProblemSpec::default(),
            solver: MinimizerOptions::default(),
            stability: StabilityOptions::default(),
            diagnostics: DiagnosticsConfig::default(),
            pogorelov: PogorelovConfig::default(),
            energy: EnergyConfig::default(),
            compactness: CompactnessConfig::default(),
        }
    }
}

fn absolutize(p: &mut Option<PathBuf>, base: &Path) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn absolutize_field(f: &mut FieldSpec, base: &Path) {
    absolutize(&mut f.csv, base);
}

impl RunConfig {
    /// Reads a config file (defaults when `path` is None), resolves relative
    /// paths against the file's directory and applies the env override. All
    /// paths come out absolute so the echoed config reproduces the run.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let (mut cfg, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                (cfg, std::path::absolute(parent)?)
            }
            None => (RunConfig::default(), std::env::current_dir()?),
        };
        absolutize_field(&mut cfg.data.f, &base);
        absolutize_field(&mut cfg.data.sigma, &base);
        absolutize_field(&mut cfg.data.a, &base);
        absolutize(&mut cfg.energy.table, &base);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(dir) = std::env::var_os(OUTPUT_ENV) {
            cfg.output_dir = std::path::absolute(PathBuf::from(dir))?;
        }
        cfg.solver.stability = cfg.stability.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        let positive = [
            ("solver.ma.tol", s.ma.tol),
            ("solver.ma.t_bound", s.ma.t_bound),
            ("solver.ma.convexity_tol", s.ma.convexity_tol),
            ("solver.armijo", s.armijo),
            ("solver.initial_step", s.initial_step),
            ("solver.min_step", s.min_step),
            ("solver.stagnation", s.stagnation),
            ("solver.tol_el", s.tol_el.unwrap_or(1.0)),
            ("stability.mu_tol", self.stability.mu_tol),
            ("data.balance_tol", self.data.balance_tol),
            ("energy.t0", self.energy.t0),
            ("energy.tol", self.energy.tol),
            ("energy.floor_fraction", self.energy.floor_fraction),
            ("diagnostics.el_bound", self.diagnostics.el_bound),
            ("diagnostics.chord_gap_factor", self.diagnostics.chord_gap_factor),
            ("pogorelov.gamma", self.pogorelov.gamma),
            ("pogorelov.tmax", self.pogorelov.tmax),
            ("pogorelov.k", self.pogorelov.k),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                bail!("{name} must be positive and finite, got {v}");
            }
        }
        if self.grid.n < 4 {
            bail!("grid.n must be at least 4, got {}", self.grid.n);
        }
        if self.stability.n_directions == 0 || self.stability.n_offsets == 0 {
            bail!("stability sample sizes must be positive");
        }
        if self.pogorelov.n < 3 {
            bail!("pogorelov.n must be at least 3, got {}", self.pogorelov.n);
        }
        if self.pogorelov.delta < 0.0 {
            bail!("pogorelov.delta must be nonnegative");
        }
        if self.compactness.ks.is_empty() || self.compactness.ks.iter().any(|k| !(*k > 0.0)) {
            bail!("compactness.ks must be a nonempty list of positive numbers");
        }
        let d = &self.diagnostics;
        if !(d.chord_h_min > 0.0 && d.chord_h_min <= d.chord_h_max) || !(d.ratio_min < d.ratio_max) {
            bail!("diagnostics ranges are inverted");
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<Arc<Mesh>> {
        let domain = match &self.domain {
            DomainConfig::Disk { radius } => Domain::make_disk(*radius)?,
            DomainConfig::BoundarySamples(pts) => Domain::from_boundary_samples(pts)?,
        };
        Ok(Mesh::new(domain, self.grid.n, self.grid.m)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
