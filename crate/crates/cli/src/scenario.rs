//! Scenario files: a versioned envelope plus a per-command parameter record.

use carleman_core::builders::{ComplexSpec, ManifoldSpec, MetricSpec, OneFormSpec, Poly, ScalarSpec};
use carleman_core::carleman::WeightFamily;
use carleman_core::cgo::{CgoGrid, HolomorphicSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CheckWeight,
    CatalogVerify,
    Geodesic,
    XrayForward,
    XrayInvert,
    Pestov,
    Santalo,
    CgoScan,
    BoundaryRecover,
    GaugeCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CheckWeight => "check-weight",
            Command::CatalogVerify => "catalog-verify",
            Command::Geodesic => "geodesic",
            Command::XrayForward => "xray-forward",
            Command::XrayInvert => "xray-invert",
            Command::Pestov => "pestov",
            Command::Santalo => "santalo",
            Command::CgoScan => "cgo-scan",
            Command::BoundaryRecover => "boundary-recover",
            Command::GaugeCheck => "gauge-check",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    version: u32,
    command: Command,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub command: Command,
    pub seed: u64,
    pub params: Params,
}

#[derive(Clone, Debug)]
pub enum Params {
    CheckWeight(CheckWeight),
    CatalogVerify(CatalogVerify),
    Geodesic(Geodesic),
    XrayForward(XrayForward),
    XrayInvert(XrayInvert),
    Pestov(Pestov),
    Santalo(Santalo),
    CgoScan(CgoScan),
    BoundaryRecover(BoundaryRecover),
    GaugeCheck(GaugeCheck),
}

fn typed<T: DeserializeOwned>(m: serde_json::Map<String, serde_json::Value>) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::Object(m)).map_err(|e| format!("params: {e}"))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Scenario::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Scenario, String> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if env.version != SCENARIO_VERSION {
            return Err(format!("unsupported scenario version {} (expected {SCENARIO_VERSION})", env.version));
        }
        let p = env.params;
        let params = match env.command {
            Command::CheckWeight => Params::CheckWeight(typed(p)?),
            Command::CatalogVerify => Params::CatalogVerify(typed(p)?),
            Command::Geodesic => Params::Geodesic(typed(p)?),
            Command::XrayForward => Params::XrayForward(typed(p)?),
            Command::XrayInvert => Params::XrayInvert(typed(p)?),
            Command::Pestov => Params::Pestov(typed(p)?),
            Command::Santalo => Params::Santalo(typed(p)?),
            Command::CgoScan => Params::CgoScan(typed(p)?),
            Command::BoundaryRecover => Params::BoundaryRecover(typed(p)?),
            Command::GaugeCheck => Params::GaugeCheck(typed(p)?),
        };
        params.validate()?;
        Ok(Scenario { command: env.command, seed: env.seed, params })
    }
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

fn nonzero(name: &str, v: usize) -> Result<(), String> {
    if v > 0 {
        Ok(())
    } else {
        Err(format!("{name} must be at least 1"))
    }
}

impl Params {
    fn validate(&self) -> Result<(), String> {
        match self {
            Params::CheckWeight(p) => {
                nonzero("samples", p.samples)?;
                nonzero("directions", p.directions)?;
                positive("chart_radius", p.chart_radius)?;
                positive("sample_radius", p.sample_radius)?;
                if p.metric.dim() < 2 {
                    return Err("weights need dimension >= 2".into());
                }
                if let Some(pts) = &p.points {
                    if pts.is_empty() || pts.iter().any(|x| x.len() != p.metric.dim()) {
                        return Err("points must be nonempty and match the metric dimension".into());
                    }
                }
                positive("threshold", p.threshold)
            }
            Params::CatalogVerify(p) => {
                if p.dim < 2 {
                    return Err("dim must be at least 2".into());
                }
                nonzero("draws", p.draws)?;
                nonzero("points", p.points)?;
                nonzero("directions", p.directions)?;
                positive("radius", p.radius)?;
                positive("margin", p.margin)?;
                positive("threshold", p.threshold)
            }
            Params::Geodesic(p) => {
                if let Some(h) = p.step {
                    positive("step", h)?;
                }
                if p.index_grid < 3 {
                    return Err("index_grid must be at least 3".into());
                }
                Ok(())
            }
            Params::XrayForward(p) => p.fan.validate(),
            Params::XrayInvert(p) => {
                p.fan.validate()?;
                nonzero("grid[0]", p.grid[0])?;
                nonzero("grid[1]", p.grid[1])?;
                positive("regularization", p.regularization)?;
                if !(p.noise >= 0.0) {
                    return Err("noise must be nonnegative".into());
                }
                positive("max_error", p.max_error)
            }
            Params::Pestov(p) => {
                nonzero("samples", p.samples)?;
                positive("sample_radius", p.sample_radius)?;
                if let PestovMode::FiniteDifference { h } = p.mode {
                    positive("h", h)?;
                }
                positive("threshold", p.threshold)
            }
            Params::Santalo(p) => {
                p.fan.validate()?;
                nonzero("quadrature.radial", p.quadrature.radial)?;
                nonzero("quadrature.angular", p.quadrature.angular)?;
                nonzero("quadrature.fibre", p.quadrature.fibre)?;
                positive("threshold", p.threshold)
            }
            Params::CgoScan(p) => {
                positive("radius", p.radius)?;
                if p.h.is_empty() {
                    return Err("h list must be nonempty".into());
                }
                for h in &p.h {
                    positive("h", *h)?;
                }
                if p.slope_range[0] > p.slope_range[1] {
                    return Err("slope_range must be increasing".into());
                }
                Ok(())
            }
            Params::BoundaryRecover(p) => {
                p.coefficients.validate()?;
                positive("threshold", p.threshold)
            }
            Params::GaugeCheck(p) => {
                p.coefficients.validate()?;
                nonzero("draws", p.draws)?;
                positive("threshold", p.threshold)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Per-command records
// ---------------------------------------------------------------------------

fn euclidean3() -> MetricSpec {
    MetricSpec::Euclidean { dim: 3 }
}

fn flat_disc() -> ManifoldSpec {
    ManifoldSpec::FlatDisc { radius: 1.0 }
}

fn constant(value: f64) -> ComplexSpec {
    ComplexSpec::real(ScalarSpec::Constant { value })
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckWeight {
    pub metric: MetricSpec,
    pub weight: ScalarSpec,
    pub chart_radius: f64,
    /// Explicit evaluation points; otherwise `samples` random points.
    pub points: Option<Vec<Vec<f64>>>,
    pub samples: usize,
    pub sample_radius: f64,
    pub directions: usize,
    pub threshold: f64,
}

impl Default for CheckWeight {
    fn default() -> Self {
        CheckWeight {
            metric: euclidean3(),
            weight: ScalarSpec::Polynomial { terms: Poly(vec![carleman_core::builders::Monomial { coef: 1.0, pow: vec![1] }]) },
            chart_radius: 3.0,
            points: None,
            samples: 50,
            sample_radius: 1.0,
            directions: 16,
            threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogVerify {
    pub dim: usize,
    pub families: Vec<WeightFamily>,
    pub draws: usize,
    pub points: usize,
    pub directions: usize,
    /// Half-width of the sampling cube.
    pub radius: f64,
    /// Clearance from singular sets and branch cuts.
    pub margin: f64,
    pub threshold: f64,
}

impl Default for CatalogVerify {
    fn default() -> Self {
        CatalogVerify {
            dim: 3,
            families: WeightFamily::ALL.to_vec(),
            draws: 20,
            points: 50,
            directions: 16,
            radius: 2.0,
            margin: 0.1,
            threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geodesic {
    pub manifold: ManifoldSpec,
    pub start: [f64; 2],
    pub direction: [f64; 2],
    pub step: Option<f64>,
    pub attenuation: ComplexSpec,
    pub index_grid: usize,
}

impl Default for Geodesic {
    fn default() -> Self {
        Geodesic {
            manifold: flat_disc(),
            start: [1.0, 0.0],
            direction: [-1.0, 0.0],
            step: None,
            attenuation: constant(0.0),
            index_grid: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FanParams {
    pub boundary: usize,
    pub angles: usize,
    pub delta: f64,
    pub step: Option<f64>,
}

impl Default for FanParams {
    fn default() -> Self {
        FanParams { boundary: 32, angles: 32, delta: carleman_core::transport::GRAZING_GUARD, step: None }
    }
}

impl FanParams {
    fn validate(&self) -> Result<(), String> {
        nonzero("fan.boundary", self.boundary)?;
        nonzero("fan.angles", self.angles)?;
        if !(self.delta > 0.0 && self.delta < std::f64::consts::FRAC_PI_2) {
            return Err("fan.delta must lie in (0, π/2)".into());
        }
        if let Some(h) = self.step {
            positive("fan.step", h)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct XrayForward {
    pub manifold: ManifoldSpec,
    pub attenuation: ComplexSpec,
    pub f: ComplexSpec,
    pub form: Option<OneFormSpec>,
    pub fan: FanParams,
}

impl Default for XrayForward {
    fn default() -> Self {
        XrayForward { manifold: flat_disc(), attenuation: constant(0.0), f: constant(1.0), form: None, fan: FanParams::default() }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct XrayInvert {
    pub manifold: ManifoldSpec,
    pub attenuation: ComplexSpec,
    /// Function synthesized through the forward transform.
    pub truth: ComplexSpec,
    pub grid: [usize; 2],
    pub fan: FanParams,
    pub regularization: f64,
    /// Gaussian noise level relative to the RMS measurement.
    pub noise: f64,
    pub max_error: f64,
    pub singular_values: bool,
    pub cache: Option<PathBuf>,
}

impl Default for XrayInvert {
    fn default() -> Self {
        XrayInvert {
            manifold: flat_disc(),
            attenuation: constant(-0.2),
            truth: ComplexSpec::real(ScalarSpec::Gaussian { amp: 1.0, width: 0.5, center: vec![0.0, 0.0] }),
            grid: [32, 32],
            fan: FanParams { boundary: 64, angles: 64, ..FanParams::default() },
            regularization: 1e-6,
            noise: 0.0,
            max_error: 0.05,
            singular_values: false,
            cache: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PestovMode {
    Exact,
    FiniteDifference { h: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pestov {
    pub manifold: ManifoldSpec,
    pub samples: usize,
    /// Points are drawn from this ball about the manifold centre.
    pub sample_radius: f64,
    pub complex: bool,
    pub mode: PestovMode,
    pub threshold: f64,
}

impl Default for Pestov {
    fn default() -> Self {
        Pestov {
            manifold: ManifoldSpec::SphereCap { radius: 0.6 },
            samples: 200,
            sample_radius: 0.5,
            complex: true,
            mode: PestovMode::Exact,
            threshold: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Quadrature {
    pub radial: usize,
    pub angular: usize,
    pub fibre: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        let q = carleman_core::xray::SmQuadrature::default();
        Quadrature { radial: q.radial, angular: q.angular, fibre: q.fibre }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Santalo {
    pub manifold: ManifoldSpec,
    /// Function of `(x₁, x₂, ζ)`.
    pub v: ComplexSpec,
    pub fan: FanParams,
    pub quadrature: Quadrature,
    pub threshold: f64,
}

impl Default for Santalo {
    fn default() -> Self {
        Santalo {
            manifold: flat_disc(),
            v: constant(1.0),
            fan: FanParams { boundary: 256, angles: 128, ..FanParams::default() },
            quadrature: Quadrature::default(),
            threshold: 1e-3,
        }
    }
}

/// `(re + i·im) e^{ikθ}`.
#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub k: i32,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Magnetic {
    /// Components in product coordinates `(x₁, y₁, y₂)`.
    pub form: OneFormSpec,
    pub grid: CgoGrid,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgoScan {
    /// Conformal factor in product coordinates.
    pub c: ScalarSpec,
    pub curvature: f64,
    pub omega: [f64; 2],
    pub radius: f64,
    pub x1_range: Option<[f64; 2]>,
    pub amplitude: HolomorphicSpec,
    pub b: Vec<FourierMode>,
    pub q: ComplexSpec,
    pub h: Vec<f64>,
    pub grid: CgoGrid,
    pub magnetic: Option<Magnetic>,
    pub slope_range: [f64; 2],
    pub eikonal_max: f64,
    pub transport_rel: f64,
}

impl Default for CgoScan {
    fn default() -> Self {
        CgoScan {
            c: ScalarSpec::Constant { value: 1.0 },
            curvature: 0.0,
            omega: [0.0, 0.0],
            radius: 1.0,
            x1_range: None,
            amplitude: HolomorphicSpec::Exponential { lambda: 0.8 },
            b: vec![FourierMode { k: 0, re: 1.0, im: 0.0 }],
            q: constant(0.0),
            h: vec![0.1, 0.05, 0.025, 0.0125],
            grid: CgoGrid { x1: [-0.5, 0.5], r: [0.2, 0.9], n_x1: 6, n_r: 6, thetas: vec![0.5, 3.0] },
            magnetic: None,
            slope_range: [1.95, 2.05],
            eikonal_max: 1e-10,
            transport_rel: 1e-5,
        }
    }
}

/// Coefficient sets `(g, A, q)` near the boundary `x_n = 0`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Flat {
        dim: usize,
        #[serde(default)]
        q: [f64; 2],
    },
    /// Random normalized set drawn from the scenario seed.
    Random { dim: usize },
    /// Tangential metric `δ + P` with polynomial entries in all `n` variables.
    Custom {
        dim: usize,
        #[serde(default)]
        metric: Vec<(usize, usize, Poly)>,
        #[serde(default)]
        form: Option<Vec<ComplexSpec>>,
        potential: ComplexSpec,
    },
}

impl BoundarySpec {
    pub fn dim(&self) -> usize {
        match self {
            BoundarySpec::Flat { dim, .. } | BoundarySpec::Random { dim } | BoundarySpec::Custom { dim, .. } => *dim,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.dim() < 3 {
            return Err("boundary coefficient sets need dim >= 3".into());
        }
        if let BoundarySpec::Custom { dim, metric, form, .. } = self {
            if metric.iter().any(|(i, j, _)| *i >= dim - 1 || *j >= dim - 1) {
                return Err("tangential metric index out of range".into());
            }
            if form.as_ref().is_some_and(|f| f.len() != *dim) {
                return Err("form needs one component per coordinate".into());
            }
        }
        Ok(())
    }
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec::Random { dim: 3 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryRecover {
    pub coefficients: BoundarySpec,
    /// Boundary points `x'`; the centre of the box when absent.
    pub points: Option<Vec<Vec<f64>>>,
    pub threshold: f64,
}

impl Default for BoundaryRecover {
    fn default() -> Self {
        BoundaryRecover { coefficients: BoundarySpec::default(), points: None, threshold: 1e-6 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaugeCheck {
    pub coefficients: BoundarySpec,
    pub draws: usize,
    pub threshold: f64,
}

impl Default for GaugeCheck {
    fn default() -> Self {
        GaugeCheck { coefficients: BoundarySpec::default(), draws: 100, threshold: 1e-5 }
    }
}
