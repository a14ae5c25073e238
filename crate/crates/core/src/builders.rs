//! Named analytic builders for metrics, fields and test manifolds.
//!
//! Everything a scenario file can describe is constructed here from plain
//! serde records; no expression strings are parsed.

use crate::carleman::{euclidean_weight, WeightSpec};
use crate::error::{Error, Result};
use crate::expr::{CExpr, Expr};
use crate::geometry::{Chart, ChartMetric, OneFormField, ScalarField};
use crate::transport::SimpleManifold;
use serde::{Deserialize, Serialize};

/// `coef · Π x_i^{pow_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    pub pow: Vec<u32>,
}

/// Sum of monomials.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<Monomial>);

impl Poly {
    pub fn expr(&self) -> Expr {
        Expr::sum(self.0.iter().map(|m| {
            let mut e = Expr::c(m.coef);
            for (i, p) in m.pow.iter().enumerate() {
                if *p > 0 {
                    e = e * Expr::var(i).powi(*p as i32);
                }
            }
            e
        }))
    }
}

/// Real scalar field builders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarSpec {
    Constant { value: f64 },
    Polynomial { terms: Poly },
    /// `e^{p(x)}`.
    Exponential { exponent: Poly },
    /// `amp · exp(−|x − center|² / width²)`.
    Gaussian { amp: f64, width: f64, center: Vec<f64> },
    Weight { weight: WeightSpec },
}

impl ScalarSpec {
    pub fn expr(&self) -> Result<Expr> {
        Ok(match self {
            ScalarSpec::Constant { value } => Expr::c(*value),
            ScalarSpec::Polynomial { terms } => terms.expr(),
            ScalarSpec::Exponential { exponent } => exponent.expr().exp(),
            ScalarSpec::Gaussian { amp, width, center } => {
                let x = Expr::coords(center.len());
                let d: Vec<Expr> = x.into_iter().zip(center).map(|(x, c)| x - *c).collect();
                (Expr::dot(&d, &d) * (-1.0 / (width * width))).exp() * *amp
            }
            ScalarSpec::Weight { weight } => euclidean_weight(weight)?.field.value.re,
        })
    }
}

/// Complex scalar field: real part plus optional imaginary part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexSpec {
    pub re: ScalarSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<ScalarSpec>,
}

impl ComplexSpec {
    pub fn real(re: ScalarSpec) -> ComplexSpec {
        ComplexSpec { re, im: None }
    }

    pub fn field(&self, dim: usize) -> Result<ScalarField> {
        let re = self.re.expr()?;
        let im = match &self.im {
            Some(s) => s.expr()?,
            None => Expr::zero(),
        };
        Ok(ScalarField::complex(dim, CExpr::new(re, im)))
    }
}

/// One-form builders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OneFormSpec {
    Components { comps: Vec<ComplexSpec> },
    /// `d p` for a scalar `p`.
    Gradient { potential: ScalarSpec, dim: usize },
}

impl OneFormSpec {
    pub fn field(&self) -> Result<OneFormField> {
        match self {
            OneFormSpec::Components { comps } => {
                let n = comps.len();
                Ok(OneFormField { comps: comps.iter().map(|c| c.field(n).map(|f| f.value)).collect::<Result<_>>()? })
            }
            OneFormSpec::Gradient { potential, dim } => {
                Ok(ScalarField::real(*dim, potential.expr()?).differential())
            }
        }
    }
}

/// Metric builders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Euclidean { dim: usize },
    /// Identity plus polynomial perturbations `(i, j, p)` (mirrored to `(j, i)`).
    Polynomial { dim: usize, entries: Vec<(usize, usize, Poly)> },
    /// `e^{p(x)} δ`.
    ExpConformal { dim: usize, exponent: Poly },
    /// `c(x) δ` with any scalar builder for `c`.
    Conformal { dim: usize, factor: ScalarSpec },
    /// `diag(1, f(r)²)` in coordinates `(r, θ)` with `f` a polynomial in `r`.
    PolarForm { warp: Poly },
    /// `c · (1 ⊕ g₀)`.
    ProductForm { c: ScalarSpec, g0: Box<MetricSpec> },
    /// Constant curvature `K` in stereographic form `4/(1 + K|x|²)² δ`.
    Stereographic { dim: usize, curvature: f64 },
}

impl MetricSpec {
    pub fn dim(&self) -> usize {
        match self {
            MetricSpec::Euclidean { dim }
            | MetricSpec::Polynomial { dim, .. }
            | MetricSpec::ExpConformal { dim, .. }
            | MetricSpec::Conformal { dim, .. }
            | MetricSpec::Stereographic { dim, .. } => *dim,
            MetricSpec::PolarForm { .. } => 2,
            MetricSpec::ProductForm { g0, .. } => g0.dim() + 1,
        }
    }

    /// Component expressions.
    pub fn components(&self) -> Result<Vec<Vec<Expr>>> {
        let n = self.dim();
        let id = |i: usize, j: usize| if i == j { Expr::one() } else { Expr::zero() };
        let scaled = |c: Expr| (0..n).map(|i| (0..n).map(|j| if i == j { c.clone() } else { Expr::zero() }).collect()).collect();
        Ok(match self {
            MetricSpec::Euclidean { .. } => (0..n).map(|i| (0..n).map(|j| id(i, j)).collect()).collect(),
            MetricSpec::Polynomial { entries, .. } => {
                let mut g: Vec<Vec<Expr>> = (0..n).map(|i| (0..n).map(|j| id(i, j)).collect()).collect();
                for (i, j, p) in entries {
                    if *i >= n || *j >= n {
                        return Err(Error::Dimension("metric entry index out of range".into()));
                    }
                    let e = p.expr();
                    g[*i][*j] = g[*i][*j].clone() + e.clone();
                    if i != j {
                        g[*j][*i] = g[*j][*i].clone() + e;
                    }
                }
                g
            }
            MetricSpec::ExpConformal { exponent, .. } => scaled(exponent.expr().exp()),
            MetricSpec::Conformal { factor, .. } => scaled(factor.expr()?),
            MetricSpec::Stereographic { curvature, .. } => {
                let x = Expr::coords(n);
                scaled(4.0 / (1.0 + Expr::dot(&x, &x) * *curvature).sq())
            }
            MetricSpec::PolarForm { warp } => {
                vec![vec![Expr::one(), Expr::zero()], vec![Expr::zero(), warp.expr().sq()]]
            }
            MetricSpec::ProductForm { c, g0 } => {
                let c = c.expr()?;
                let shift: Vec<Expr> = (1..n).map(Expr::var).collect();
                let inner = g0.components()?;
                let mut g = vec![vec![Expr::zero(); n]; n];
                g[0][0] = c.clone();
                for i in 1..n {
                    for j in 1..n {
                        g[i][j] = c.clone() * inner[i - 1][j - 1].subst(&shift);
                    }
                }
                g
            }
        })
    }

    pub fn build(&self, chart: Chart) -> Result<ChartMetric> {
        if chart.dim != self.dim() {
            return Err(Error::Dimension("chart and metric dimensions differ".into()));
        }
        ChartMetric::new(chart, self.components()?)
    }
}

/// Surface test manifolds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    FlatDisc { radius: f64 },
    /// Disc of the given chart radius with metric `c(x) δ`.
    ConformalDisc { radius: f64, factor: ScalarSpec },
    /// Curvature +1 in stereographic coordinates.
    SphereCap { radius: f64 },
    /// Curvature −1 in the Poincaré disc model.
    HyperbolicPatch { radius: f64 },
    Ellipse { a: f64, b: f64 },
    /// Star-shaped domain `r(ψ) = 1 + 0.6 cos 2ψ`.
    Peanut,
}

impl ManifoldSpec {
    pub fn build(&self) -> Result<SimpleManifold> {
        Ok(match self {
            ManifoldSpec::FlatDisc { radius } => flat_disc(*radius),
            ManifoldSpec::ConformalDisc { radius, factor } => conformal_disc(*radius, factor.expr()?)?,
            ManifoldSpec::SphereCap { radius } => sphere_cap(*radius),
            ManifoldSpec::HyperbolicPatch { radius } => hyperbolic_patch(*radius),
            ManifoldSpec::Ellipse { a, b } => ellipse(*a, *b),
            ManifoldSpec::Peanut => peanut(),
        })
    }
}

fn disc_beta(radius: f64) -> Expr {
    let x = Expr::coords(2);
    radius * radius - Expr::dot(&x, &x)
}

fn disc_chart(radius: f64) -> Chart {
    Chart::cube(2, 1.25 * radius)
}

pub fn flat_disc(radius: f64) -> SimpleManifold {
    let chart = disc_chart(radius).with_boundary(disc_beta(radius));
    SimpleManifold::new(ChartMetric::euclidean(chart), disc_beta(radius)).expect("valid disc")
}

pub fn conformal_disc(radius: f64, factor: Expr) -> Result<SimpleManifold> {
    let chart = disc_chart(radius).with_boundary(disc_beta(radius));
    let g = ChartMetric::euclidean(chart).conformal(&factor);
    SimpleManifold::new(g, disc_beta(radius))
}

pub fn sphere_cap(radius: f64) -> SimpleManifold {
    let x = Expr::coords(2);
    conformal_disc(radius, 4.0 / (1.0 + Expr::dot(&x, &x)).sq()).expect("valid cap")
}

pub fn hyperbolic_patch(radius: f64) -> SimpleManifold {
    let x = Expr::coords(2);
    conformal_disc(radius, 4.0 / (1.0 - Expr::dot(&x, &x)).sq()).expect("valid patch")
}

pub fn ellipse(a: f64, b: f64) -> SimpleManifold {
    let x = Expr::coords(2);
    let beta = 1.0 - x[0].sq() / (a * a) - x[1].sq() / (b * b);
    let r = 1.25 * a.max(b);
    let chart = Chart::cube(2, r).with_boundary(beta.clone());
    SimpleManifold::new(ChartMetric::euclidean(chart), beta).expect("valid ellipse")
}

pub fn peanut() -> SimpleManifold {
    let x = Expr::coords(2);
    let r2 = Expr::dot(&x, &x);
    let beta = 1.0 + 0.6 * (x[0].sq() - x[1].sq()) / r2.clone() - r2.sqrt();
    // β has a removable singularity at the origin, so the chart is offset
    // slightly to keep its centre away from it.
    let chart = Chart::new(vec![-2.0, -2.0], vec![2.0, 2.0 + 1e-3]).expect("valid").with_boundary(beta.clone());
    SimpleManifold::new(ChartMetric::euclidean(chart), beta).expect("valid peanut")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_spec_round_trips_through_json() {
        let spec = MetricSpec::ProductForm {
            c: ScalarSpec::Exponential { exponent: Poly(vec![Monomial { coef: 0.2, pow: vec![1] }]) },
            g0: Box::new(MetricSpec::Stereographic { dim: 2, curvature: 1.0 }),
        };
        let s = serde_json::to_string(&spec).unwrap();
        let back: MetricSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
        let g = back.build(Chart::cube(3, 1.0)).unwrap();
        let v = g.value(&[0.5, 0.0, 0.0]).unwrap();
        assert!((v[(0, 0)] - (0.1f64).exp()).abs() < 1e-14);
        assert!((v[(1, 1)] - 4.0 * (0.1f64).exp()).abs() < 1e-14);
    }
}
