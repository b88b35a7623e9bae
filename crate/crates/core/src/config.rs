//! Versioned JSON experiment configuration and its diagnostics.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::SolveOptions;
use crate::error::{Error, Result};
use crate::estimates::{check_w1p_exponent, EstimateConfig};
use crate::grid::Grid;
use crate::sweep::{BumpForce, SweepSpec, WindowSpec};
use crate::tensor::{CoefficientField, FamilySpec, Tensor4};

pub const CONFIG_SCHEMA: &str = "stokes-homog/experiment/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Cell,
    Effective,
    Solve,
    EstimateSweep,
    Liouville,
    TwoScale,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Cell => "cell",
            ExperimentKind::Effective => "effective",
            ExperimentKind::Solve => "solve",
            ExperimentKind::EstimateSweep => "estimate-sweep",
            ExperimentKind::Liouville => "liouville",
            ExperimentKind::TwoScale => "two-scale",
        }
    }

    fn needs_cell_grid(self) -> bool {
        !matches!(self, ExperimentKind::Solve)
    }

    fn needs_box_grid(self) -> bool {
        matches!(self, ExperimentKind::Solve | ExperimentKind::EstimateSweep | ExperimentKind::TwoScale)
    }
}

/// Acceptance checks a run can report on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckId {
    /// Every corrector reaches the solver tolerance with vanishing mean and divergence.
    CorrectorResidual,
    /// Constant coefficients: zero correctors and `Â = A`.
    TrivialCorrectors,
    /// `(Â)* = (A*)^`.
    Duality,
    /// `μ(Â) ≥ μ(A)`.
    EffectiveEllipticity,
    SolverResidual,
    /// Second-order velocity convergence on a manufactured solution.
    ManufacturedOrder,
    /// The `r = 2` dilation solves the `ε/2` system.
    Rescaling,
    /// `‖u_ε − u₀‖` and every flux-pairing defect strictly decrease in `ε`.
    TwoScaleTrend,
    InteriorLipschitz,
    PressureOscillation,
    BoundaryHolder,
    W1pNorm,
    LiouvilleRank,
    LiouvilleResidual,
    LiouvilleDivergence,
}

impl CheckId {
    pub fn name(self) -> &'static str {
        match self {
            CheckId::CorrectorResidual => "corrector-residual",
            CheckId::TrivialCorrectors => "trivial-correctors",
            CheckId::Duality => "duality",
            CheckId::EffectiveEllipticity => "effective-ellipticity",
            CheckId::SolverResidual => "solver-residual",
            CheckId::ManufacturedOrder => "manufactured-order",
            CheckId::Rescaling => "rescaling",
            CheckId::TwoScaleTrend => "two-scale-trend",
            CheckId::InteriorLipschitz => "interior-lipschitz",
            CheckId::PressureOscillation => "pressure-oscillation",
            CheckId::BoundaryHolder => "boundary-holder",
            CheckId::W1pNorm => "w1p-norm",
            CheckId::LiouvilleRank => "liouville-rank",
            CheckId::LiouvilleResidual => "liouville-residual",
            CheckId::LiouvilleDivergence => "liouville-divergence",
        }
    }

    pub fn applies_to(self, kind: ExperimentKind) -> bool {
        use ExperimentKind as K;
        match self {
            CheckId::CorrectorResidual | CheckId::TrivialCorrectors => matches!(kind, K::Cell | K::Effective),
            CheckId::Duality | CheckId::EffectiveEllipticity => kind == K::Effective,
            CheckId::SolverResidual => matches!(kind, K::Solve | K::EstimateSweep | K::TwoScale),
            CheckId::ManufacturedOrder => kind == K::Solve,
            CheckId::Rescaling => matches!(kind, K::Solve | K::EstimateSweep | K::TwoScale),
            CheckId::TwoScaleTrend => matches!(kind, K::EstimateSweep | K::TwoScale),
            CheckId::InteriorLipschitz | CheckId::PressureOscillation | CheckId::BoundaryHolder | CheckId::W1pNorm => {
                kind == K::EstimateSweep
            }
            CheckId::LiouvilleRank | CheckId::LiouvilleResidual | CheckId::LiouvilleDivergence => kind == K::Liouville,
        }
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Resolution of the periodic unit cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<usize>,
    /// Box resolutions per side.
    #[serde(default, rename = "box", skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<usize>,
    #[serde(default = "default_length")]
    pub length: f64,
}

fn default_length() -> f64 {
    1.0
}

/// Right-hand side of a `solve` experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SolveData {
    /// Stream function `sin²(πx)sin²(πy)/π` with pressure `cos(πx)cos(πy)`
    /// on the unit square; needs a constant scalar family in `d = 2`.
    Manufactured,
    /// The configured [`BumpForce`].
    Force,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Windows {
    pub interior: WindowSpec,
    pub boundary: WindowSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub kind: ExperimentKind,
    pub dim: usize,
    pub family: FamilySpec,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<EstimateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<SolveData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<BumpForce>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<Windows>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub checks: Vec<CheckId>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Seed for every randomised step; overrides `estimates.seed`.
    #[serde(default)]
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// One validation finding, addressed by a JSON field path such as `eps[2]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Why a config could not be used.
#[derive(Debug)]
pub enum LoadError {
    Io(Error),
    Invalid(Vec<Diagnostic>),
}

impl ExperimentConfig {
    /// Parses JSON text; errors carry the path of the offending field.
    pub fn from_json(text: &str) -> std::result::Result<Self, Diagnostic> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "$".to_string() } else { path };
            Diagnostic::new(path, e.into_inner().to_string())
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Reads and validates `path`; table families resolve against its directory.
    pub fn load(path: &Path) -> std::result::Result<Self, LoadError> {
        let text = fs::read_to_string(path).map_err(|e| LoadError::Io(Error::io(path, e)))?;
        let cfg = Self::from_json(&text).map_err(|d| LoadError::Invalid(vec![d]))?;
        let diags = cfg.validate(path.parent());
        if diags.is_empty() {
            Ok(cfg)
        } else {
            Err(LoadError::Invalid(diags))
        }
    }

    pub fn field(&self, base_dir: Option<&Path>) -> Result<CoefficientField> {
        CoefficientField::with_base_dir(self.dim, self.family.clone(), base_dir)
    }

    /// The estimate settings with the run seed applied.
    pub fn estimate_config(&self) -> EstimateConfig {
        let mut cfg = self.estimates.clone().unwrap_or_else(|| EstimateConfig::for_dimension(self.dim));
        cfg.eps = self.eps.clone();
        cfg.seed = self.seed;
        cfg
    }

    /// The sweep described by an `estimate-sweep` or `two-scale` config.
    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let missing = |path: &str| Error::Config {
            path: path.into(),
            message: "required for this experiment kind".into(),
        };
        let reference = SweepSpec::reference();
        let windows = match (&self.windows, self.kind) {
            (Some(w), _) => w.clone(),
            (None, ExperimentKind::TwoScale) => Windows {
                interior: reference.interior,
                boundary: reference.boundary,
            },
            (None, _) => return Err(missing("windows")),
        };
        Ok(SweepSpec {
            family: self.family.clone(),
            dim: self.dim,
            n: *self.grid.boxes.first().ok_or_else(|| missing("grid.box"))?,
            length: self.grid.length,
            eps: self.eps.clone(),
            effective_resolution: self.grid.cell.ok_or_else(|| missing("grid.cell"))?,
            force: self.force.clone().ok_or_else(|| missing("force"))?,
            interior: windows.interior,
            boundary: windows.boundary,
            estimates: self.estimate_config(),
            solver: self.solver,
        })
    }

    /// Schema, range and divisibility checks. Never touches the filesystem
    /// beyond reading a coefficient table.
    pub fn validate(&self, base_dir: Option<&Path>) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.schema != CONFIG_SCHEMA {
            out.push(Diagnostic::new("schema", format!("expected \"{CONFIG_SCHEMA}\", found \"{}\"", self.schema)));
        }
        if !(2..=3).contains(&self.dim) {
            out.push(Diagnostic::new("dim", format!("dimension must be 2 or 3, got {}", self.dim)));
            return out;
        }
        let d = self.dim;
        let field = match self.field(base_dir) {
            Ok(f) => Some(f),
            Err(e) => {
                out.push(Diagnostic::new("family", e.to_string()));
                None
            }
        };
        self.validate_grid(&mut out);
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            out.push(Diagnostic::new("solver.tol", format!("tolerance must lie in (0, 1), got {}", self.solver.tol)));
        }
        if self.out.as_os_str().is_empty() {
            out.push(Diagnostic::new("out", "output directory is empty"));
        }

        let needs_eps = matches!(self.kind, ExperimentKind::EstimateSweep | ExperimentKind::TwoScale);
        if needs_eps && self.eps.is_empty() {
            out.push(Diagnostic::new("eps", "at least one ε is required"));
        }
        if !self.eps.is_empty() && !self.kind.needs_box_grid() {
            out.push(Diagnostic::new("eps", format!("not used by a {} experiment", self.kind.name())));
        }
        self.validate_eps(&mut out);

        match (&self.estimates, self.kind) {
            (Some(est), _) => validate_estimates(est, d, &mut out),
            (None, ExperimentKind::EstimateSweep) => out.push(Diagnostic::new("estimates", "required for an estimate-sweep experiment")),
            _ => {}
        }
        let needs_force = needs_eps || (self.kind == ExperimentKind::Solve && self.data == Some(SolveData::Force));
        match &self.force {
            Some(f) => validate_force(f, d, &mut out),
            None if needs_force => out.push(Diagnostic::new("force", "required by this experiment")),
            None => {}
        }
        match (&self.windows, self.kind) {
            (Some(w), _) => self.validate_windows(w, &mut out),
            (None, ExperimentKind::EstimateSweep) => out.push(Diagnostic::new("windows", "required for an estimate-sweep experiment")),
            _ => {}
        }
        match (self.data, self.kind) {
            (None, ExperimentKind::Solve) => out.push(Diagnostic::new("data", "a solve experiment needs `manufactured` or `force` data")),
            (Some(_), k) if k != ExperimentKind::Solve => out.push(Diagnostic::new("data", format!("not used by a {} experiment", k.name()))),
            (Some(SolveData::Manufactured), _) => {
                if d != 2 {
                    out.push(Diagnostic::new("data", "the manufactured solution is two-dimensional"));
                }
                if (self.grid.length - 1.0).abs() > 0.0 {
                    out.push(Diagnostic::new("grid.length", "the manufactured solution lives on the unit square"));
                }
                if let Some(f) = &field {
                    if constant_scalar(f).is_none() {
                        out.push(Diagnostic::new("family", "the manufactured solution needs a constant scalar family a·Id"));
                    }
                }
            }
            _ => {}
        }

        for (i, check) in self.checks.iter().enumerate() {
            let path = format!("checks[{i}]");
            if !check.applies_to(self.kind) {
                out.push(Diagnostic::new(path, format!("{check} does not apply to a {} experiment", self.kind.name())));
                continue;
            }
            match check {
                CheckId::TrivialCorrectors => {
                    if field.as_ref().is_some_and(|f| !f.is_constant()) {
                        out.push(Diagnostic::new(path, "trivial-correctors needs a constant family"));
                    }
                }
                CheckId::ManufacturedOrder => {
                    if self.data != Some(SolveData::Manufactured) {
                        out.push(Diagnostic::new(path, "manufactured-order needs `data.type = manufactured`"));
                    } else if self.grid.boxes.len() < 2 || self.grid.boxes.windows(2).any(|w| w[1] != 2 * w[0]) {
                        out.push(Diagnostic::new(path, "manufactured-order needs at least two box resolutions, each doubling the last"));
                    }
                }
                CheckId::Rescaling => {
                    if self.kind == ExperimentKind::Solve && self.eps.is_empty() {
                        out.push(Diagnostic::new(path, "rescaling needs an ε list"));
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn validate_grid(&self, out: &mut Vec<Diagnostic>) {
        let g = &self.grid;
        if !(g.length > 0.0 && g.length.is_finite()) {
            out.push(Diagnostic::new("grid.length", format!("length must be positive, got {}", g.length)));
        }
        match g.cell {
            Some(n) if n < 2 => out.push(Diagnostic::new("grid.cell", format!("need at least 2 cells, got {n}"))),
            None if self.kind.needs_cell_grid() => out.push(Diagnostic::new("grid.cell", "required for this experiment kind")),
            _ => {}
        }
        if self.kind.needs_box_grid() && g.boxes.is_empty() {
            out.push(Diagnostic::new("grid.box", "at least one box resolution is required"));
        }
        if matches!(self.kind, ExperimentKind::EstimateSweep | ExperimentKind::TwoScale) && g.boxes.len() > 1 {
            out.push(Diagnostic::new("grid.box", "a sweep runs on a single box resolution"));
        }
        for (i, &n) in g.boxes.iter().enumerate() {
            if n < 4 {
                out.push(Diagnostic::new(format!("grid.box[{i}]"), format!("need at least 4 cells per side, got {n}")));
            }
        }
    }

    fn validate_eps(&self, out: &mut Vec<Diagnostic>) {
        let len = self.grid.length;
        for (i, &eps) in self.eps.iter().enumerate() {
            let path = format!("eps[{i}]");
            if !(eps > 0.0 && eps <= len) {
                out.push(Diagnostic::new(path, format!("ε = {eps} must lie in (0, {len}]")));
                continue;
            }
            for &n in self.grid.boxes.iter().filter(|&&n| n >= 4) {
                let Ok(grid) = Grid::boxed(self.dim, n, len) else { continue };
                match grid.cells_per_period(eps) {
                    Err(_) => out.push(Diagnostic::new(
                        path.clone(),
                        format!("divisibility: ε = {eps} is not a multiple of the grid spacing h = {len}/{n}"),
                    )),
                    Ok(k) if k < 4 && self.kind != ExperimentKind::Solve => out.push(Diagnostic::new(
                        path.clone(),
                        format!("ε = {eps} resolves only {k} cells per period at N = {n}; at least 4 are needed"),
                    )),
                    Ok(_) => {}
                }
            }
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            out.push(Diagnostic::new("eps", "ε values must be strictly decreasing"));
        }
    }

    fn validate_windows(&self, w: &Windows, out: &mut Vec<Diagnostic>) {
        let Some(&n) = self.grid.boxes.first() else { return };
        let Ok(grid) = Grid::boxed(self.dim, n.max(4), self.grid.length) else { return };
        for (name, spec, boundary) in [("interior", &w.interior, false), ("boundary", &w.boundary, true)] {
            let path = format!("windows.{name}");
            if spec.face.is_some() != boundary {
                let want = if boundary { "a boundary window needs `face`" } else { "an interior window has no `face`" };
                out.push(Diagnostic::new(format!("{path}.face"), want));
                continue;
            }
            if spec.center.len() != self.dim {
                out.push(Diagnostic::new(format!("{path}.center"), format!("expected {} coordinates", self.dim)));
                continue;
            }
            if !(spec.radius > 0.0) {
                out.push(Diagnostic::new(format!("{path}.radius"), "radius must be positive"));
                continue;
            }
            let window = spec.window(grid.h(), 1.0);
            if let Err(e) = window.validate(&grid) {
                out.push(Diagnostic::new(path, e.to_string()));
            }
        }
    }
}

fn validate_estimates(est: &EstimateConfig, d: usize, out: &mut Vec<Diagnostic>) {
    let rho = est.rho(d);
    if !(est.q.is_finite() && rho > 0.0 && rho < 1.0) {
        out.push(Diagnostic::new(
            "estimates.q",
            format!("ρ out of (0,1): q = {} gives ρ = 1 − d/q = {rho} with d = {d}; need q > d", est.q),
        ));
    }
    if !(est.holder_rho > 0.0 && est.holder_rho < 1.0) {
        out.push(Diagnostic::new("estimates.holder_rho", format!("ρ out of (0,1): holder_rho = {}", est.holder_rho)));
    }
    for (i, &q) in est.w1p_exponents.iter().enumerate() {
        if let Err(e) = check_w1p_exponent(q) {
            out.push(Diagnostic::new(format!("estimates.w1p_exponents[{i}]"), e.to_string()));
        }
    }
    if !(est.band > 0.0) {
        out.push(Diagnostic::new("estimates.band", format!("band must be positive, got {}", est.band)));
    }
}

fn validate_force(f: &BumpForce, d: usize, out: &mut Vec<Diagnostic>) {
    if f.center.len() != d {
        out.push(Diagnostic::new("force.center", format!("expected {d} coordinates, got {}", f.center.len())));
    }
    if !(f.radius > 0.0) {
        out.push(Diagnostic::new("force.radius", format!("radius must be positive, got {}", f.radius)));
    }
}

/// `Some(a)` when `field` is the constant tensor `a·Id`.
pub fn constant_scalar(field: &CoefficientField) -> Option<f64> {
    if !field.is_constant() {
        return None;
    }
    let d = field.dimension();
    let a = field.evaluate(&vec![0.0; d]);
    let s = a.get(0, 0, 0, 0);
    (a.max_abs_diff(&Tensor4::scalar(d, s)) == 0.0).then_some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep_config() -> ExperimentConfig {
        let spec = SweepSpec::reference();
        ExperimentConfig {
            schema: CONFIG_SCHEMA.into(),
            kind: ExperimentKind::EstimateSweep,
            dim: 2,
            family: spec.family,
            grid: GridConfig {
                cell: Some(64),
                boxes: vec![256],
                length: 1.0,
            },
            eps: spec.eps,
            estimates: Some(EstimateConfig::for_dimension(2)),
            data: None,
            force: Some(spec.force),
            windows: Some(Windows {
                interior: spec.interior,
                boundary: spec.boundary,
            }),
            solver: SolveOptions::default(),
            checks: vec![CheckId::InteriorLipschitz, CheckId::W1pNorm],
            out: "out/sweep".into(),
            seed: 11,
        }
    }

    #[test]
    fn reference_sweep_is_valid() {
        assert_eq!(sweep_config().validate(None), vec![]);
    }

    #[test]
    fn json_round_trip() {
        let cfg = sweep_config();
        let text = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn third_is_not_a_grid_multiple() {
        let mut cfg = sweep_config();
        cfg.eps = vec![0.5, 1.0 / 3.0];
        let diags = cfg.validate(None);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!(diags[0].path, "eps[1]");
        assert!(diags[0].message.contains("divisibility"));
    }

    #[test]
    fn q_at_most_d_is_rejected() {
        let mut cfg = sweep_config();
        cfg.estimates.as_mut().unwrap().q = 2.0;
        let diags = cfg.validate(None);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert_eq!(diags[0].path, "estimates.q");
        assert!(diags[0].message.contains("ρ out of (0,1)"));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&sweep_config().to_json().unwrap()).unwrap();
        v["grid"]["box"] = serde_json::json!(["many"]);
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert_eq!(err.path, "grid.box[0]");
        v["grid"]["box"] = serde_json::json!([256]);
        v["colour"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).unwrap_err().message.contains("colour"));
    }

    #[test]
    fn checks_must_match_the_kind() {
        let mut cfg = sweep_config();
        cfg.checks = vec![CheckId::LiouvilleRank];
        let diags = cfg.validate(None);
        assert_eq!(diags[0].path, "checks[0]");
    }

    #[test]
    fn constant_scalar_detection() {
        assert_eq!(constant_scalar(&CoefficientField::identity(2)), Some(1.0));
        let lam = CoefficientField::new(2, FamilySpec::laminate_sine(2)).unwrap();
        assert_eq!(constant_scalar(&lam), None);
    }
}
