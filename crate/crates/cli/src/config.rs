//! Experiment configuration.
//!
//! Configs are TOML files with one table per pipeline. Every key has a
//! default, so an empty file (or no file) is a valid experiment. Unknown keys
//! are rejected so that typos surface as parse errors with a position.

use std::path::{Path, PathBuf};

use caslab::C64;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A complex number written either as a real scalar or as `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Real(f64),
    Pair([f64; 2]),
}

impl Num {
    pub fn c(self) -> C64 {
        match self {
            Num::Real(x) => C64::new(x, 0.0),
            Num::Pair([re, im]) => C64::new(re, im),
        }
    }

    fn finite(self) -> bool {
        let v = self.c();
        v.re.is_finite() && v.im.is_finite()
    }
}

impl Default for Num {
    fn default() -> Self {
        Num::Real(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    /// Output directory; not part of the config hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub grid: GridSpec,
    /// Filled with the subcommand's default when absent.
    pub metric: Option<MetricSpec>,
    pub cubic: CubicSpec,
    pub solver: SolverSpec,
    pub ray: RaySpec,
    pub spectrum: SpectrumSpec,
    pub holonomy: HolonomySpec,
    pub transport: TransportSpec,
    pub beltrami: BeltramiSpec,
    pub verify: VerifySpec,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            out: None,
            grid: GridSpec::default(),
            metric: None,
            cubic: CubicSpec::default(),
            solver: SolverSpec::default(),
            ray: RaySpec::default(),
            spectrum: SpectrumSpec::default(),
            holonomy: HolonomySpec::default(),
            transport: TransportSpec::default(),
            beltrami: BeltramiSpec::default(),
            verify: VerifySpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendName {
    Spectral,
    Fd4,
    Fd4Window,
    Fd6Window,
}

impl BackendName {
    pub fn backend(self) -> caslab::Backend {
        match self {
            BackendName::Spectral => caslab::Backend::Spectral,
            BackendName::Fd4 => caslab::Backend::Fd4Periodic,
            BackendName::Fd4Window => caslab::Backend::Fd4Window,
            BackendName::Fd6Window => caslab::Backend::Fd6Window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Nodes per axis; a power of two.
    pub n: usize,
    /// Side of the periodic square.
    pub length: f64,
    /// `[x0, x1, y0, y1]` for window metrics.
    pub window: Option<[f64; 4]>,
    pub backend: Option<BackendName>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n: 32, length: 1.0, window: None, backend: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Riemannian,
    Bers,
    Degenerate,
}

impl FamilyName {
    pub fn family(self, param: f64) -> caslab::spectra::MetricFamily {
        use caslab::spectra::MetricFamily;
        match self {
            FamilyName::Riemannian => MetricFamily::Riemannian { amplitude: param },
            FamilyName::Bers => MetricFamily::BersPerturbed { epsilon: param },
            FamilyName::Degenerate => MetricFamily::Degenerate { sup: param },
        }
    }
}

fn one() -> Num {
    Num::Real(1.0)
}

fn eps_default() -> Num {
    Num::Real(0.05)
}

fn a_default() -> Num {
    Num::Real(0.1)
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricSpec {
    /// Constant `λ` and `μ` on the periodic square.
    Flat {
        #[serde(default = "one")]
        lambda: Num,
        #[serde(default)]
        mu: Num,
    },
    /// `|dz|²/y²` on a window of the upper half plane.
    Hyperbolic {},
    /// Bers metric of `(z + a z², z̄ + ε z)`.
    Bers {
        #[serde(default = "a_default")]
        a: Num,
        #[serde(default = "eps_default")]
        epsilon: Num,
    },
    /// Sample `index` of a seeded family.
    Family {
        family: FamilyName,
        #[serde(default = "half")]
        param: f64,
        #[serde(default)]
        index: usize,
    },
    /// Three field snapshots.
    Snapshot { lambda: PathBuf, mu: PathBuf, wbar_dzbar: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CubicSpec {
    pub phi: Num,
    pub psibar: Num,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_iter: usize,
    /// Constant initial guess; also the Dirichlet data on windows.
    pub initial: Num,
    pub dense_threshold: usize,
    pub spectrum: bool,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { tol: 1e-12, max_iter: 30, initial: Num::default(), dense_threshold: 1024, spectrum: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RayModeName {
    Hll,
    Twistor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaySpec {
    pub mode: RayModeName,
    /// Twistor rate: `ζ = exp(t · rate)`.
    pub rate: Num,
    pub t_max: f64,
    pub ds: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub u_floor: f64,
    pub fold_tol: f64,
}

impl Default for RaySpec {
    fn default() -> Self {
        let s = caslab::gauss::RaySchedule::hll();
        RaySpec {
            mode: RayModeName::Hll,
            rate: Num::Pair([0.0, 1.0]),
            t_max: s.t_max,
            ds: s.ds,
            ds_max: s.ds_max,
            max_steps: s.max_steps,
            u_floor: s.u_floor,
            fold_tol: s.fold_tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumMode {
    /// Eigenvalues of one operator.
    Operator,
    /// Invertibility scan over a seeded family.
    Scan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorName {
    /// `Δ_h - shift`.
    Shifted,
    /// Linearized Gauss operator at the constant initial guess.
    Linearization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSpec {
    pub mode: SpectrumMode,
    pub operator: OperatorName,
    pub shift: f64,
    pub count: usize,
    pub family: FamilyName,
    pub param: f64,
    pub samples: usize,
    pub floor: f64,
    pub coarse: usize,
    pub fine: usize,
    pub stability: f64,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        let s = caslab::spectra::ScanSettings::default();
        SpectrumSpec {
            mode: SpectrumMode::Operator,
            operator: OperatorName::Shifted,
            shift: s.shift,
            count: 9,
            family: FamilyName::Riemannian,
            param: 0.5,
            samples: 20,
            floor: s.floor,
            coarse: s.coarse,
            fine: s.fine,
            stability: s.stability,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolonomySpec {
    /// Loop center; the middle of the chart when absent.
    pub center: Option<Num>,
    pub radius: f64,
    pub sides: usize,
    /// RK4 steps per side.
    pub steps: usize,
}

impl Default for HolonomySpec {
    fn default() -> Self {
        HolonomySpec { center: None, radius: 0.3, sides: 24, steps: 16 }
    }
}

/// A series given by name or by `[j, k, re, im]` coefficient rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesSpec {
    Named(String),
    Terms(Vec<[f64; 4]>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSpec {
    pub order: usize,
    /// Initial datum: `"exp-zbar"` or coefficient rows.
    pub data: SeriesSpec,
    /// Steady generator `g` as coefficient rows.
    pub generator: SeriesSpec,
    pub t: f64,
    pub dt: f64,
    pub richardson: bool,
    pub commute: bool,
    pub radius: f64,
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec {
            order: 12,
            data: SeriesSpec::Named("exp-zbar".into()),
            generator: SeriesSpec::Terms(vec![[0.0, 0.0, 1.0, 0.0]]),
            t: 1.0,
            dt: 0.05,
            richardson: true,
            commute: true,
            radius: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileName {
    /// `μ = k (r/σ)² e^{1 - r²/σ²} z/z̄`.
    Radial,
    /// `μ = k e^{-|z - c|²/σ²}`.
    Bump,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeltramiSpec {
    pub n: usize,
    pub half_width: f64,
    pub profile: ProfileName,
    pub k: Num,
    pub sigma: f64,
    pub center: Num,
    pub support_radius: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BeltramiSpec {
    fn default() -> Self {
        BeltramiSpec {
            n: 128,
            half_width: 4.0,
            profile: ProfileName::Radial,
            k: Num::Real(0.5),
            sigma: 0.5,
            center: Num::default(),
            support_radius: 3.8,
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub n: usize,
    pub half_width: f64,
    pub eps: Num,
    pub theta: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let s = caslab::examples::CatalogueSettings::default();
        VerifySpec { n: s.n, half_width: s.half_width, eps: Num::Pair([s.eps.re, s.eps.im]), theta: s.theta }
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

pub fn parse(text: &str) -> Result<Config, CliError> {
    toml::from_str(text).map_err(|e| {
        let pos = e.span().map(|s| line_col(text, s.start));
        CliError::Config { message: e.message().to_string(), position: pos }
    })
}

pub fn load(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config { message: format!("cannot read {}: {e}", path.display()), position: None })?;
    parse(&text)
}

fn invalid(message: String) -> CliError {
    CliError::Config { message, position: None }
}

impl Config {
    /// Checks the invariants that the parser cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, n) in [("grid.n", self.grid.n), ("beltrami.n", self.beltrami.n), ("verify.n", self.verify.n)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(invalid(format!("{name} = {n} must be a power of two, at least 8")));
            }
        }
        for (name, n) in [("spectrum.coarse", self.spectrum.coarse), ("spectrum.fine", self.spectrum.fine)] {
            if n < 8 {
                return Err(invalid(format!("{name} = {n} must be at least 8")));
            }
        }
        for (name, t) in [
            ("solver.tol", self.solver.tol),
            ("beltrami.tol", self.beltrami.tol),
            ("ray.ds", self.ray.ds),
            ("ray.ds_max", self.ray.ds_max),
            ("ray.fold_tol", self.ray.fold_tol),
            ("transport.dt", self.transport.dt),
            ("transport.radius", self.transport.radius),
            ("holonomy.radius", self.holonomy.radius),
            ("grid.length", self.grid.length),
            ("beltrami.sigma", self.beltrami.sigma),
            ("beltrami.half_width", self.beltrami.half_width),
            ("verify.half_width", self.verify.half_width),
        ] {
            if !(t.is_finite() && t > 0.0) {
                return Err(invalid(format!("{name} = {t} must be positive")));
            }
        }
        let nums = [self.cubic.phi, self.cubic.psibar, self.solver.initial, self.ray.rate, self.beltrami.k];
        if nums.iter().any(|v| !v.finite()) {
            return Err(invalid("complex parameters must be finite".into()));
        }
        if let Some(w) = self.grid.window {
            if !(w[0] < w[1] && w[2] < w[3]) {
                return Err(invalid(format!("grid.window {w:?} is not [x0 < x1, y0 < y1]")));
            }
        }
        if self.holonomy.sides < 3 || self.holonomy.steps == 0 {
            return Err(invalid("holonomy loops need at least 3 sides and 1 step".into()));
        }
        if let Some(MetricSpec::Snapshot { lambda, mu, wbar_dzbar }) = &self.metric {
            for p in [lambda, mu, wbar_dzbar] {
                if !p.is_file() {
                    return Err(invalid(format!("snapshot {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default() {
        assert_eq!(parse("").unwrap(), Config::default());
    }

    #[test]
    fn numbers_and_pairs() {
        let c = parse("[cubic]\nphi = 2\npsibar = [1.0, -0.5]\n").unwrap();
        assert_eq!(c.cubic.phi.c(), C64::new(2.0, 0.0));
        assert_eq!(c.cubic.psibar.c(), C64::new(1.0, -0.5));
    }

    #[test]
    fn metric_kinds() {
        let c = parse("[metric]\nkind = \"bers\"\nepsilon = [0.1, 0.0]\n").unwrap();
        assert!(matches!(c.metric, Some(MetricSpec::Bers { .. })));
        assert!(parse("[metric]\nkind = \"hyperbolic\"\nlambda = 2\n").is_err());
    }

    #[test]
    fn errors_carry_positions() {
        let text = "seed = 1\n[grid]\nn = 16\nbogus = 3\n";
        match parse(text) {
            Err(CliError::Config { position: Some((line, _)), .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        match parse("seed = 1\n[grid\n") {
            Err(CliError::Config { position: Some((line, col)), .. }) => assert_eq!((line, col), (2, 6)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation() {
        let mut c = Config::default();
        assert!(c.validate().is_ok());
        c.grid.n = 24;
        assert!(c.validate().is_err());
        c.grid.n = 32;
        c.solver.tol = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
