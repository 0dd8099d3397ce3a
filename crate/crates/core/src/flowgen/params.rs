use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FlowError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Cavity,
    Tube,
    Dam,
    Cylinder,
}

impl Problem {
    pub const ALL: [Problem; 4] = [Problem::Cavity, Problem::Tube, Problem::Dam, Problem::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Problem::Cavity => "cavity",
            Problem::Tube => "tube",
            Problem::Dam => "dam",
            Problem::Cylinder => "cylinder",
        }
    }

    /// Whether the in-house solver can generate this problem.
    pub fn generator_supported(self) -> bool {
        !matches!(self, Problem::Dam)
    }

    /// Length of the condition vector for this problem.
    pub fn omega_dim(self) -> usize {
        match self {
            Problem::Cylinder => 8,
            _ => 5,
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Problem {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cavity" => Ok(Problem::Cavity),
            "tube" => Ok(Problem::Tube),
            "dam" => Ok(Problem::Dam),
            "cylinder" => Ok(Problem::Cylinder),
            other => Err(FlowError::Config(format!("unknown problem '{other}' (expected cavity, tube, dam or cylinder)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Bc,
    Prop,
    Geo,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Prop, Subset::Bc, Subset::Geo];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Bc => "bc",
            Subset::Prop => "prop",
            Subset::Geo => "geo",
        }
    }

    /// Expands a comma list such as `prop,bc` or `all` into distinct subsets.
    pub fn parse_list(s: &str) -> Result<Vec<Subset>, FlowError> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let items = if part.eq_ignore_ascii_case("all") { Subset::ALL.to_vec() } else { vec![part.parse()?] };
            for item in items {
                if !out.contains(&item) {
                    out.push(item);
                }
            }
        }
        if out.is_empty() {
            return Err(FlowError::Config("empty subset list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subset {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bc" => Ok(Subset::Bc),
            "prop" => Ok(Subset::Prop),
            "geo" => Ok(Subset::Geo),
            other => Err(FlowError::Config(format!("unknown subset '{other}' (expected bc, prop, geo or all)"))),
        }
    }
}

/// Problem-specific geometry descriptors, in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    /// `l` along x, `w` along y.
    Cavity { l: f64, w: f64 },
    /// Channel height `d`, length `l`.
    Tube { d: f64, l: f64 },
    /// Obstacle height and width inside the fixed 1.5 m x 0.4 m domain.
    Dam { h: f64, w: f64 },
    /// Diameter and distances from the centre to the left, right, top and bottom walls.
    Cylinder { d: f64, x1: f64, x2: f64, y1: f64, y2: f64 },
}

pub const DAM_DOMAIN_M: (f64, f64) = (1.5, 0.4);
/// Distance from the dam inlet to the obstacle.
pub const DAM_OBSTACLE_X_M: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingParams {
    pub problem: Problem,
    pub u_b: f64,
    pub rho: f64,
    pub mu: f64,
    pub geometry: Geometry,
    pub dt: f64,
}

impl OperatingParams {
    pub fn baseline(problem: Problem) -> Self {
        let (u_b, rho, mu, geometry, dt) = match problem {
            Problem::Cavity => (10.0, 1.0, 1e-5, Geometry::Cavity { l: 0.01, w: 0.01 }, 0.1),
            Problem::Tube => (1.0, 100.0, 0.1, Geometry::Tube { d: 0.1, l: 1.0 }, 0.01),
            Problem::Dam => (1.0, 100.0, 0.1, Geometry::Dam { h: 0.1, w: 0.05 }, 0.1),
            Problem::Cylinder => (
                1.0,
                10.0,
                1e-3,
                Geometry::Cylinder { d: 0.02, x1: 0.06, x2: 0.16, y1: 0.06, y2: 0.06 },
                0.001,
            ),
        };
        Self { problem, u_b, rho, mu, geometry, dt }
    }

    /// Condition vector: boundary velocity, density, viscosity, then geometry.
    pub fn omega(&self) -> Vec<f64> {
        let mut v = vec![self.u_b, self.rho, self.mu];
        match self.geometry {
            Geometry::Cavity { l, w } => v.extend([l, w]),
            Geometry::Tube { d, l } => v.extend([d, l]),
            Geometry::Dam { h, w } => v.extend([h, w]),
            Geometry::Cylinder { d, x1, x2, y1, y2 } => v.extend([d, x1, x2, y1, y2]),
        }
        v
    }

    pub fn omega_names(problem: Problem) -> &'static [&'static str] {
        match problem {
            Problem::Cavity => &["u_b", "rho", "mu", "l", "w"],
            Problem::Tube => &["u_b", "rho", "mu", "d", "l"],
            Problem::Dam => &["u_b", "rho", "mu", "h", "w"],
            Problem::Cylinder => &["u_b", "rho", "mu", "d", "x1", "x2", "y1", "y2"],
        }
    }

    /// Physical domain size as (height along y, width along x).
    pub fn extents_m(&self) -> (f64, f64) {
        match self.geometry {
            Geometry::Cavity { l, w } => (w, l),
            Geometry::Tube { d, l } => (d, l),
            Geometry::Dam { .. } => (DAM_DOMAIN_M.1, DAM_DOMAIN_M.0),
            Geometry::Cylinder { x1, x2, y1, y2, .. } => (y1 + y2, x1 + x2),
        }
    }

    /// Reynolds number on the problem's characteristic length.
    pub fn reynolds(&self) -> f64 {
        let length = match self.geometry {
            Geometry::Cavity { l, .. } => l,
            Geometry::Tube { d, .. } => d,
            Geometry::Dam { h, .. } => h,
            Geometry::Cylinder { d, .. } => d,
        };
        self.rho * self.u_b * length / self.mu
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let geometry_ok = match (self.problem, self.geometry) {
            (Problem::Cavity, Geometry::Cavity { .. })
            | (Problem::Tube, Geometry::Tube { .. })
            | (Problem::Dam, Geometry::Dam { .. })
            | (Problem::Cylinder, Geometry::Cylinder { .. }) => true,
            _ => false,
        };
        if !geometry_ok {
            return Err(FlowError::Config(format!("geometry {:?} does not belong to problem {}", self.geometry, self.problem)));
        }
        let values = self.omega();
        // u_b may be zero (quiescent case); every other quantity must be positive.
        if !(self.u_b >= 0.0 && self.u_b.is_finite()) || values[1..].iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(self.dt > 0.0) {
            return Err(FlowError::Config(format!("non-positive operating parameter in {values:?} (dt {})", self.dt)));
        }
        Ok(())
    }
}

fn snap(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn series(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| snap(start + step * k as f64)).collect()
}

fn product(a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).collect()
}

const TUBE_DIAMETERS: [f64; 5] = [0.01, 0.05, 0.1, 0.3, 0.5];
const TUBE_RATIOS: [f64; 10] = [1.0, 2.0, 5.0, 7.5, 10.0, 15.0, 20.0, 50.0, 75.0, 100.0];
const CYLINDER_RE_BAND: (f64, f64) = (16.0, 1200.0);

fn tube_geometries() -> Vec<(f64, f64)> {
    TUBE_DIAMETERS
        .iter()
        .flat_map(|&d| {
            TUBE_RATIOS
                .iter()
                .map(move |&r| (d, snap(d * r)))
                .filter(|&(_, l)| (0.1..=10.0).contains(&l))
                .take(5)
        })
        .collect()
}

fn cylinder_densities() -> Vec<f64> {
    let mut rho = series(0.1, 0.1, 10);
    rho.extend([1.5, 2.5, 3.5, 4.5, 5.0]);
    rho.extend(series(6.0, 1.0, 5));
    rho.extend(series(20.0, 10.0, 24));
    rho.extend([300.0, 400.0, 500.0]);
    rho
}

/// The ordered case list for one problem/subset pair.
pub fn enumerate_cases(problem: Problem, subset: Subset) -> Vec<OperatingParams> {
    let base = OperatingParams::baseline(problem);
    let with_u = |u: f64| OperatingParams { u_b: u, ..base };
    let with_prop = |(rho, mu): (f64, f64)| OperatingParams { rho, mu, ..base };
    let with_geo = |geometry: Geometry| OperatingParams { geometry, ..base };
    let fluid_grid = || product(&series(10.0, 110.0, 10), &series(0.01, 0.11, 10));
    match (problem, subset) {
        (Problem::Cavity, Subset::Bc) => series(1.0, 1.0, 50).into_iter().map(with_u).collect(),
        (Problem::Cavity, Subset::Prop) => {
            let mut rho = vec![0.1, 0.5];
            rho.extend(series(1.0, 1.0, 10));
            let mu = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2];
            product(&rho, &mu).into_iter().map(with_prop).collect()
        }
        (Problem::Cavity, Subset::Geo) => {
            let sizes = series(0.01, 0.01, 5);
            product(&sizes, &sizes).into_iter().map(|(l, w)| with_geo(Geometry::Cavity { l, w })).collect()
        }
        (Problem::Tube, Subset::Bc) => series(0.1, 0.1, 50).into_iter().map(with_u).collect(),
        (Problem::Tube, Subset::Prop) | (Problem::Dam, Subset::Prop) => fluid_grid().into_iter().map(with_prop).collect(),
        (Problem::Tube, Subset::Geo) => tube_geometries().into_iter().map(|(d, l)| with_geo(Geometry::Tube { d, l })).collect(),
        (Problem::Dam, Subset::Bc) => {
            let mut u = series(0.05, 0.05, 20);
            u.extend(series(1.02, 0.02, 50));
            u.into_iter().map(with_u).collect()
        }
        (Problem::Dam, Subset::Geo) => product(&series(0.11, 0.01, 5), &series(0.01, 0.01, 10))
            .into_iter()
            .map(|(h, w)| with_geo(Geometry::Dam { h, w }))
            .collect(),
        (Problem::Cylinder, Subset::Bc) => series(0.1, 0.1, 50).into_iter().map(with_u).collect(),
        (Problem::Cylinder, Subset::Prop) => {
            let mu = [1e-4, 5e-4, 1e-3, 5e-3, 1e-2];
            let d = match base.geometry {
                Geometry::Cylinder { d, .. } => d,
                _ => unreachable!(),
            };
            product(&cylinder_densities(), &mu)
                .into_iter()
                .filter(|&(rho, mu)| {
                    let re = rho * base.u_b * d / mu;
                    re >= CYLINDER_RE_BAND.0 - 1e-9 && re <= CYLINDER_RE_BAND.1 + 1e-9
                })
                .map(with_prop)
                .collect()
        }
        (Problem::Cylinder, Subset::Geo) => {
            let Geometry::Cylinder { d, x1, x2, y1, y2 } = base.geometry else { unreachable!() };
            let near = series(0.02, 0.02, 5);
            let far = series(0.12, 0.02, 5);
            let mut out = Vec::new();
            out.extend(series(0.01, 0.01, 5).into_iter().map(|d| Geometry::Cylinder { d, x1, x2, y1, y2 }));
            out.extend(near.iter().map(|&x1| Geometry::Cylinder { d, x1, x2, y1, y2 }));
            out.extend(near.iter().map(|&y| Geometry::Cylinder { d, x1, x2, y1: y, y2: y }));
            out.extend(far.iter().map(|&x2| Geometry::Cylinder { d, x1, x2, y1, y2 }));
            out.into_iter().map(with_geo).collect()
        }
    }
}

/// Stable identifier of the `index`-th case of a subset.
pub fn case_id(problem: Problem, subset: Subset, index: usize) -> String {
    format!("{problem}_{subset}_{index:04}")
}
