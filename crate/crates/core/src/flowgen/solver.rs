//! Fractional-step projection on a staggered grid.
//!
//! `u` lives on vertical faces (`ny x (nx+1)`), `v` on horizontal faces
//! (`(ny+1) x nx`), pressure at cell centres (`ny x nx`). Row 0 is the bottom
//! of the domain. Each step: explicit upwind advection plus implicit
//! diffusion for the predictor, then a pressure Poisson solve and a
//! gradient correction that makes the discrete divergence vanish.

use serde::{Deserialize, Serialize};

use super::linear::{red_black_gauss_seidel, scaled_residual, BandCholesky, LinearSystem};
use super::mask::build_geometry_mask;
use super::params::{Geometry, OperatingParams, Problem};
use super::FlowError;
use crate::datakit::{CaseMeta, CaseRecord, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Banded Cholesky, factored once per run.
    Direct,
    RedBlackGaussSeidel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Grid as `[H, W]` cells.
    pub resolution: [usize; 2],
    /// Recorded frames, including the initial state.
    pub n_frames: usize,
    /// Replaces the case's frame interval when set.
    pub frame_dt: Option<f64>,
    /// Sets the frame interval to this fraction of the convective time
    /// (characteristic length over boundary velocity) when set.
    pub frame_flow_fraction: Option<f64>,
    /// Target Courant number for the explicit advection substeps.
    pub cfl: f64,
    pub linear_solver: LinearSolver,
    pub max_inner_iters: usize,
    pub residual_target: f64,
    pub divergence_tol: f64,
    /// Relaxation factor for iterative sweeps (1 = plain Gauss-Seidel).
    pub relaxation: f64,
    /// Cases above this cell Reynolds number are run at a reduced boundary velocity.
    pub max_cell_reynolds: f64,
    pub record_pressure: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            resolution: [64, 64],
            n_frames: 21,
            frame_dt: None,
            frame_flow_fraction: None,
            cfl: 0.8,
            linear_solver: LinearSolver::Direct,
            max_inner_iters: 20_000,
            residual_target: 1e-6,
            divergence_tol: 1e-6,
            relaxation: 1.0,
            max_cell_reynolds: 20.0,
            record_pressure: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let [h, w] = self.resolution;
        if h < 8 || w < 8 {
            return Err(FlowError::Config(format!("resolution {h}x{w} below 8 cells per axis")));
        }
        if self.n_frames < 2 {
            return Err(FlowError::Config("at least two frames are required".into()));
        }
        if !(self.residual_target > 0.0) || !(self.divergence_tol > 0.0) {
            return Err(FlowError::Config("residual target and divergence tolerance must be positive".into()));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(FlowError::Config(format!("cfl {} outside (0, 1]", self.cfl)));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(FlowError::Config(format!("relaxation {} outside (0, 2)", self.relaxation)));
        }
        if !(self.max_cell_reynolds > 0.0) {
            return Err(FlowError::Config("max_cell_reynolds must be positive".into()));
        }
        for v in [self.frame_dt, self.frame_flow_fraction].into_iter().flatten() {
            if !(v > 0.0) {
                return Err(FlowError::Config("frame interval settings must be positive".into()));
            }
        }
        Ok(())
    }

    fn cell_sizes(&self, params: &OperatingParams) -> (f64, f64) {
        let (hm, wm) = params.extents_m();
        (wm / self.resolution[1] as f64, hm / self.resolution[0] as f64)
    }

    /// Applies the laminar guard. Returns the parameters to simulate and, when
    /// the guard fired, the originally requested boundary velocity.
    pub fn laminar_params(&self, params: &OperatingParams) -> (OperatingParams, Option<f64>) {
        let (dx, dy) = self.cell_sizes(params);
        let h = dx.min(dy);
        let re_cell = params.rho * params.u_b * h / params.mu;
        if re_cell <= self.max_cell_reynolds {
            return (*params, None);
        }
        let u_b = params.u_b * self.max_cell_reynolds / re_cell;
        (OperatingParams { u_b, ..*params }, Some(params.u_b))
    }

    /// Frame interval for an already guarded parameter set.
    pub fn frame_interval(&self, params: &OperatingParams) -> f64 {
        if let Some(dt) = self.frame_dt {
            return dt;
        }
        if let (Some(f), true) = (self.frame_flow_fraction, params.u_b > 0.0) {
            let length = match params.geometry {
                Geometry::Cavity { l, .. } => l,
                Geometry::Tube { l, .. } => l,
                Geometry::Dam { .. } => super::params::DAM_DOMAIN_M.0,
                Geometry::Cylinder { d, .. } => d,
            };
            return f * length / params.u_b;
        }
        params.dt
    }
}

/// Velocity and pressure on the staggered grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    /// Cell mask, 1 = fluid.
    pub fluid: Vec<u8>,
}

impl FieldState {
    pub fn u_index(&self, j: usize, i: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn v_index(&self, j: usize, i: usize) -> usize {
        j * self.nx + i
    }

    /// Largest absolute discrete divergence over fluid cells.
    pub fn max_divergence(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                if self.fluid[j * self.nx + i] == 0 {
                    continue;
                }
                let du = self.u[self.u_index(j, i + 1)] - self.u[self.u_index(j, i)];
                let dv = self.v[self.v_index(j + 1, i)] - self.v[self.v_index(j, i)];
                worst = worst.max((du / self.dx + dv / self.dy).abs());
            }
        }
        worst
    }

    pub fn max_speed(&self) -> f64 {
        self.u.iter().chain(&self.v).fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).chain(&self.p).all(|x| x.is_finite())
    }

    /// Cell-centred velocity components; solid cells read zero.
    pub fn cell_velocity(&self) -> (Vec<f64>, Vec<f64>) {
        let mut uc = vec![0.0; self.nx * self.ny];
        let mut vc = vec![0.0; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let c = j * self.nx + i;
                if self.fluid[c] == 1 {
                    uc[c] = 0.5 * (self.u[self.u_index(j, i)] + self.u[self.u_index(j, i + 1)]);
                    vc[c] = 0.5 * (self.v[self.v_index(j, i)] + self.v[self.v_index(j + 1, i)]);
                }
            }
        }
        (uc, vc)
    }
}

/// Scaled residuals of one step's momentum and pressure systems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub step: usize,
    pub u: f64,
    pub v: f64,
    pub p: f64,
    /// Inner iterations of the pressure solve (1 for the direct solver).
    pub iterations: usize,
    pub max_divergence: f64,
}

impl ResidualReport {
    pub fn max_residual(&self) -> f64 {
        self.u.max(self.v).max(self.p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Face {
    Unknown(usize),
    Fixed(f64),
    /// Zero-gradient copy of the given face during the predictor.
    Mirror(usize),
}

#[derive(Clone, Copy, Debug)]
enum Nb {
    Face(usize),
    /// Ghost across a wall moving tangentially at the given speed.
    Wall(f64),
    Slip,
}

#[derive(Clone, Copy, Debug)]
struct Boundary {
    lid: f64,
    inflow: Option<f64>,
    outlet: bool,
    slip_walls: bool,
}

impl Boundary {
    fn of(params: &OperatingParams) -> Result<Self, FlowError> {
        match params.problem {
            Problem::Cavity => Ok(Self { lid: params.u_b, inflow: None, outlet: false, slip_walls: false }),
            Problem::Tube => Ok(Self { lid: 0.0, inflow: Some(params.u_b), outlet: true, slip_walls: false }),
            Problem::Cylinder => Ok(Self { lid: 0.0, inflow: Some(params.u_b), outlet: true, slip_walls: true }),
            Problem::Dam => Err(FlowError::Unsupported(
                "dam flow is two-phase and cannot be generated; convert external data with `ingest`".into(),
            )),
        }
    }
}

struct Component {
    status: Vec<Face>,
    /// Face index of each unknown.
    faces: Vec<usize>,
    /// Four neighbours and their coupling coefficient, per unknown.
    stencil: Vec<[(Nb, f64); 4]>,
    base_b: Vec<f64>,
    system: LinearSystem,
    factor: Option<BandCholesky>,
}

impl Component {
    fn build(status: Vec<Face>, stencil_of: impl Fn(usize) -> [(Nb, f64); 4], color_of: impl Fn(usize) -> u8) -> Self {
        let faces: Vec<usize> = status
            .iter()
            .enumerate()
            .filter_map(|(f, s)| matches!(s, Face::Unknown(_)).then_some(f))
            .collect();
        let mut system = LinearSystem::new();
        let mut base_b = Vec::with_capacity(faces.len());
        let mut stencil = Vec::with_capacity(faces.len());
        for &f in &faces {
            let st = stencil_of(f);
            let mut a_p = 1.0;
            let mut b = 0.0;
            let mut nbs = Vec::with_capacity(4);
            for &(nb, a) in &st {
                a_p += a;
                match nb {
                    Nb::Wall(w) => {
                        a_p += a;
                        b += 2.0 * a * w;
                    }
                    Nb::Slip => a_p -= a,
                    Nb::Face(g) => {
                        let target = match status[g] {
                            Face::Mirror(t) if t == f => {
                                a_p -= a;
                                continue;
                            }
                            Face::Mirror(t) => t,
                            _ => g,
                        };
                        match status[target] {
                            Face::Unknown(m) => nbs.push((m, a)),
                            Face::Fixed(val) => b += a * val,
                            Face::Mirror(_) => a_p -= a,
                        }
                    }
                }
            }
            system.push(a_p, b, &nbs, color_of(f));
            base_b.push(b);
            stencil.push(st);
        }
        Self { status, faces, stencil, base_b, system, factor: None }
    }

    fn neighbor_value(arr: &[f64], f: usize, nb: Nb) -> f64 {
        match nb {
            Nb::Face(g) => arr[g],
            Nb::Wall(w) => 2.0 * w - arr[f],
            Nb::Slip => arr[f],
        }
    }

    fn solve(&self, x: &mut [f64], solver: LinearSolver, cfg: &SolverConfig) -> Result<(f64, usize), FlowError> {
        match (solver, &self.factor) {
            (LinearSolver::Direct, Some(factor)) => {
                factor.solve(&self.system.b, x);
                Ok((scaled_residual(&self.system, x), 1))
            }
            _ => relaxed_sweeps(&self.system, x, cfg),
        }
    }
}

fn relaxed_sweeps(system: &LinearSystem, x: &mut [f64], cfg: &SolverConfig) -> Result<(f64, usize), FlowError> {
    if cfg.relaxation == 1.0 {
        return red_black_gauss_seidel(system, x, cfg.residual_target, cfg.max_inner_iters);
    }
    // Relaxed variant: blend each sweep with the previous iterate.
    let mut prev = x.to_vec();
    for it in 1..=cfg.max_inner_iters {
        red_black_gauss_seidel(system, x, 0.0, 1).ok();
        for (a, p) in x.iter_mut().zip(prev.iter_mut()) {
            *a = *p + cfg.relaxation * (*a - *p);
            *p = *a;
        }
        let r = scaled_residual(system, x);
        if r <= cfg.residual_target {
            return Ok((r, it));
        }
    }
    Err(FlowError::IterationLimit { step: None, iterations: cfg.max_inner_iters, residual: scaled_residual(system, x) })
}

/// Advances a [`FieldState`] by fixed time steps with prefactored systems.
pub struct Stepper {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    dt: f64,
    rho: f64,
    u_ref: f64,
    boundary: Boundary,
    fluid: Vec<u8>,
    u_comp: Component,
    v_comp: Component,
    p_system: LinearSystem,
    p_cells: Vec<usize>,
    p_index: Vec<Option<usize>>,
    p_factor: Option<BandCholesky>,
    phi: Vec<f64>,
    cfg: SolverConfig,
    steps: usize,
}

impl Stepper {
    pub fn new(params: &OperatingParams, cfg: &SolverConfig, dt: f64) -> Result<Self, FlowError> {
        cfg.validate()?;
        params.validate()?;
        if !(dt > 0.0) {
            return Err(FlowError::Config(format!("time step {dt} must be positive")));
        }
        let boundary = Boundary::of(params)?;
        let [ny, nx] = cfg.resolution;
        let (dx, dy) = cfg.cell_sizes(params);
        let fluid = build_geometry_mask(params, (ny, nx))?;
        let nu = params.mu / params.rho;
        let (ax, ay) = (dt * nu / (dx * dx), dt * nu / (dy * dy));
        let solid = |j: usize, i: usize| fluid[j * nx + i] == 0;

        let ui = |j: usize, i: usize| j * (nx + 1) + i;
        let mut u_status = vec![Face::Fixed(0.0); ny * (nx + 1)];
        let mut count = 0;
        for j in 0..ny {
            for i in 0..=nx {
                u_status[ui(j, i)] = if i == 0 {
                    Face::Fixed(boundary.inflow.unwrap_or(0.0))
                } else if i == nx {
                    if boundary.outlet && !solid(j, nx - 1) { Face::Mirror(ui(j, nx - 1)) } else { Face::Fixed(0.0) }
                } else if solid(j, i - 1) || solid(j, i) {
                    Face::Fixed(0.0)
                } else {
                    count += 1;
                    Face::Unknown(count - 1)
                };
            }
        }
        let u_comp = Component::build(
            u_status,
            |f| {
                let (j, i) = (f / (nx + 1), f % (nx + 1));
                let south = if j == 0 { if boundary.slip_walls { Nb::Slip } else { Nb::Wall(0.0) } } else { Nb::Face(ui(j - 1, i)) };
                let north = if j + 1 == ny {
                    if boundary.slip_walls { Nb::Slip } else { Nb::Wall(boundary.lid) }
                } else {
                    Nb::Face(ui(j + 1, i))
                };
                [(Nb::Face(ui(j, i - 1)), ax), (Nb::Face(ui(j, i + 1)), ax), (south, ay), (north, ay)]
            },
            |f| ((f / (nx + 1) + f % (nx + 1)) % 2) as u8,
        );

        let vi = |j: usize, i: usize| j * nx + i;
        let mut v_status = vec![Face::Fixed(0.0); (ny + 1) * nx];
        let mut count = 0;
        for j in 1..ny {
            for i in 0..nx {
                if !(solid(j - 1, i) || solid(j, i)) {
                    v_status[vi(j, i)] = Face::Unknown(count);
                    count += 1;
                }
            }
        }
        let v_comp = Component::build(
            v_status,
            |f| {
                let (j, i) = (f / nx, f % nx);
                let west = if i == 0 { Nb::Wall(0.0) } else { Nb::Face(vi(j, i - 1)) };
                let east = if i + 1 == nx {
                    if boundary.outlet { Nb::Slip } else { Nb::Wall(0.0) }
                } else {
                    Nb::Face(vi(j, i + 1))
                };
                [(west, ax), (east, ax), (Nb::Face(vi(j - 1, i)), ay), (Nb::Face(vi(j + 1, i)), ay)]
            },
            |f| ((f / nx + f % nx) % 2) as u8,
        );

        let mut stepper = Self {
            nx,
            ny,
            dx,
            dy,
            dt,
            rho: params.rho,
            u_ref: 2.0 * params.u_b,
            boundary,
            fluid,
            u_comp,
            v_comp,
            p_system: LinearSystem::new(),
            p_cells: Vec::new(),
            p_index: Vec::new(),
            p_factor: None,
            phi: Vec::new(),
            cfg: cfg.clone(),
            steps: 0,
        };
        stepper.build_pressure();
        if cfg.linear_solver == LinearSolver::Direct {
            stepper.u_comp.factor = Some(BandCholesky::factor(&stepper.u_comp.system)?);
            stepper.v_comp.factor = Some(BandCholesky::factor(&stepper.v_comp.system)?);
            stepper.p_factor = Some(BandCholesky::factor(&stepper.p_system)?);
        }
        Ok(stepper)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn u_correctable(&self, j: usize, i: usize) -> bool {
        match self.u_comp.status[j * (self.nx + 1) + i] {
            Face::Unknown(_) => true,
            Face::Mirror(_) => i == self.nx,
            Face::Fixed(_) => false,
        }
    }

    fn v_correctable(&self, j: usize, i: usize) -> bool {
        matches!(self.v_comp.status[j * self.nx + i], Face::Unknown(_))
    }

    fn build_pressure(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        let (cx, cy) = (1.0 / (self.dx * self.dx), 1.0 / (self.dy * self.dy));
        let mut index = vec![None; nx * ny];
        let mut cells = Vec::new();
        // Without a pressure outlet the Neumann problem has a constant null
        // space; the first fluid cell is pinned to zero.
        let pinned = if self.boundary.outlet { None } else { self.fluid.iter().position(|&m| m == 1) };
        for c in 0..nx * ny {
            if self.fluid[c] == 1 && Some(c) != pinned && self.cell_coupling(c, cx, cy).0 > 0.0 {
                index[c] = Some(cells.len());
                cells.push(c);
            }
        }
        let mut system = LinearSystem::new();
        for &c in &cells {
            let (a_p, nbs) = self.cell_coupling(c, cx, cy);
            let couplings: Vec<(usize, f64)> = nbs.iter().filter_map(|&(n, a)| index[n].map(|k| (k, a))).collect();
            system.push(a_p, 0.0, &couplings, ((c / nx + c % nx) % 2) as u8);
        }
        self.phi = vec![0.0; cells.len()];
        self.p_system = system;
        self.p_cells = cells;
        self.p_index = index;
    }

    /// Diagonal and neighbour cells coupled through correctable faces.
    fn cell_coupling(&self, c: usize, cx: f64, cy: f64) -> (f64, Vec<(usize, f64)>) {
        let (nx, j, i) = (self.nx, c / self.nx, c % self.nx);
        let mut a_p = 0.0;
        let mut nbs = Vec::with_capacity(4);
        if self.u_correctable(j, i + 1) {
            if i + 1 == nx {
                a_p += 2.0 * cx;
            } else {
                a_p += cx;
                nbs.push((c + 1, cx));
            }
        }
        if i > 0 && self.u_correctable(j, i) {
            a_p += cx;
            nbs.push((c - 1, cx));
        }
        if j + 1 < self.ny && self.v_correctable(j + 1, i) {
            a_p += cy;
            nbs.push((c + nx, cy));
        }
        if j > 0 && self.v_correctable(j, i) {
            a_p += cy;
            nbs.push((c - nx, cy));
        }
        (a_p, nbs)
    }

    /// Quiescent interior (uniform inflow for open problems) made divergence-free.
    pub fn initial_state(&mut self, params: &OperatingParams) -> Result<FieldState, FlowError> {
        let (nx, ny) = (self.nx, self.ny);
        let mut state = FieldState {
            nx,
            ny,
            dx: self.dx,
            dy: self.dy,
            u: vec![0.0; ny * (nx + 1)],
            v: vec![0.0; (ny + 1) * nx],
            p: vec![0.0; nx * ny],
            fluid: self.fluid.clone(),
        };
        for (f, s) in self.u_comp.status.iter().enumerate() {
            state.u[f] = match *s {
                Face::Fixed(val) => val,
                _ if params.problem == Problem::Cylinder => params.u_b,
                _ => 0.0,
            };
        }
        if let Geometry::Cylinder { d, x1, .. } = params.geometry {
            // Small asymmetric cross-flow in the near wake so shedding does not
            // wait on round-off.
            for (f, s) in self.v_comp.status.iter().enumerate() {
                let x = (f % nx) as f64 * self.dx + 0.5 * self.dx;
                let y_frac = (f / nx) as f64 / ny as f64;
                if matches!(s, Face::Unknown(_)) && x > x1 + 0.5 * d && x < x1 + 2.0 * d && y_frac > 0.5 {
                    state.v[f] = 0.05 * params.u_b;
                }
            }
        }
        self.project(&mut state)?;
        state.p.fill(0.0);
        self.phi.fill(0.0);
        Ok(state)
    }

    fn advection_rhs(&self, state: &FieldState) -> (Vec<f64>, Vec<f64>) {
        let (nx, dt, dx, dy) = (self.nx, self.dt, self.dx, self.dy);
        let (u, v) = (&state.u, &state.v);
        let upwind = |vel: f64, minus: f64, centre: f64, plus: f64, h: f64| {
            if vel >= 0.0 {
                vel * (centre - minus) / h
            } else {
                vel * (plus - centre) / h
            }
        };
        let ru = self
            .u_comp
            .faces
            .iter()
            .zip(&self.u_comp.stencil)
            .map(|(&f, st)| {
                let (j, i) = (f / (nx + 1), f % (nx + 1));
                let up = u[f];
                let vp = 0.25 * (v[j * nx + i - 1] + v[j * nx + i] + v[(j + 1) * nx + i - 1] + v[(j + 1) * nx + i]);
                let val = |k: usize| Component::neighbor_value(u, f, st[k].0);
                let adv = upwind(up, val(0), up, val(1), dx) + upwind(vp, val(2), up, val(3), dy);
                up - dt * adv
            })
            .collect();
        let rv = self
            .v_comp
            .faces
            .iter()
            .zip(&self.v_comp.stencil)
            .map(|(&f, st)| {
                let (j, i) = (f / nx, f % nx);
                let vp = v[f];
                let w = nx + 1;
                let up = 0.25 * (u[(j - 1) * w + i] + u[(j - 1) * w + i + 1] + u[j * w + i] + u[j * w + i + 1]);
                let val = |k: usize| Component::neighbor_value(v, f, st[k].0);
                let adv = upwind(up, val(0), vp, val(1), dx) + upwind(vp, val(2), vp, val(3), dy);
                vp - dt * adv
            })
            .collect();
        (ru, rv)
    }

    /// Pressure solve and velocity correction; returns (residual, iterations).
    fn project(&mut self, state: &mut FieldState) -> Result<(f64, usize), FlowError> {
        let (nx, dx, dy, dt) = (self.nx, self.dx, self.dy, self.dt);
        for (k, &c) in self.p_cells.iter().enumerate() {
            let (j, i) = (c / nx, c % nx);
            let div = (state.u[j * (nx + 1) + i + 1] - state.u[j * (nx + 1) + i]) / dx
                + (state.v[(j + 1) * nx + i] - state.v[j * nx + i]) / dy;
            self.p_system.b[k] = -div / dt;
        }
        let mut phi = std::mem::take(&mut self.phi);
        let outcome = match &self.p_factor {
            Some(factor) if self.cfg.linear_solver == LinearSolver::Direct => {
                factor.solve(&self.p_system.b, &mut phi);
                Ok((scaled_residual(&self.p_system, &phi), 1))
            }
            _ => relaxed_sweeps(&self.p_system, &mut phi, &self.cfg),
        };
        let cell_phi = |c: usize| self.p_index[c].map_or(0.0, |k| phi[k]);
        for j in 0..self.ny {
            for i in 1..=nx {
                if !self.u_correctable(j, i) {
                    continue;
                }
                let f = j * (nx + 1) + i;
                let grad = if i == nx {
                    -cell_phi(j * nx + nx - 1) / (0.5 * dx)
                } else {
                    (cell_phi(j * nx + i) - cell_phi(j * nx + i - 1)) / dx
                };
                state.u[f] -= dt * grad;
            }
        }
        for j in 1..self.ny {
            for i in 0..nx {
                if self.v_correctable(j, i) {
                    state.v[j * nx + i] -= dt * (cell_phi(j * nx + i) - cell_phi((j - 1) * nx + i)) / dy;
                }
            }
        }
        for c in 0..nx * self.ny {
            state.p[c] = self.rho * cell_phi(c);
        }
        self.phi = phi;
        outcome
    }

    /// One time step of length [`Stepper::dt`].
    pub fn step(&mut self, state: &mut FieldState) -> Result<ResidualReport, FlowError> {
        let step = self.steps;
        let (ru, rv) = self.advection_rhs(state);
        let solver = self.cfg.linear_solver;

        let mut xu: Vec<f64> = self.u_comp.faces.iter().map(|&f| state.u[f]).collect();
        for (k, r) in ru.iter().enumerate() {
            self.u_comp.system.b[k] = self.u_comp.base_b[k] + r;
        }
        let (res_u, _) = self.u_comp.solve(&mut xu, solver, &self.cfg).map_err(|e| e.at_step(step))?;
        for (&f, &x) in self.u_comp.faces.iter().zip(&xu) {
            state.u[f] = x;
        }
        for f in 0..state.u.len() {
            if let Face::Mirror(t) = self.u_comp.status[f] {
                state.u[f] = state.u[t];
            }
        }

        let mut xv: Vec<f64> = self.v_comp.faces.iter().map(|&f| state.v[f]).collect();
        for (k, r) in rv.iter().enumerate() {
            self.v_comp.system.b[k] = self.v_comp.base_b[k] + r;
        }
        let (res_v, _) = self.v_comp.solve(&mut xv, solver, &self.cfg).map_err(|e| e.at_step(step))?;
        for (&f, &x) in self.v_comp.faces.iter().zip(&xv) {
            state.v[f] = x;
        }

        let (res_p, iterations) = self.project(state).map_err(|e| e.at_step(step))?;
        self.steps += 1;
        let limit = 1e3 * self.u_ref.max(1e-12);
        if !state.is_finite() || state.max_speed() > limit {
            return Err(FlowError::Blowup { step });
        }
        let max_divergence = state.max_divergence();
        if max_divergence > self.cfg.divergence_tol {
            return Err(FlowError::MassConservation { step, divergence: max_divergence });
        }
        Ok(ResidualReport { step, u: res_u, v: res_v, p: res_p, iterations, max_divergence })
    }
}

/// Largest stable substep for the explicit advection at the configured Courant number.
fn substeps(frame_dt: f64, u_ref: f64, dx: f64, dy: f64, cfl: f64) -> usize {
    if u_ref <= 0.0 {
        return 1;
    }
    let dt_max = cfl / (u_ref / dx + u_ref / dy);
    ((frame_dt / dt_max).ceil() as usize).max(1)
}

/// One time step from `state`, rebuilding the solver for this call.
pub fn advance_timestep(
    state: &FieldState,
    params: &OperatingParams,
    cfg: &SolverConfig,
    dt: f64,
) -> Result<(FieldState, ResidualReport), FlowError> {
    let mut stepper = Stepper::new(params, cfg, dt)?;
    if state.nx != stepper.nx || state.ny != stepper.ny {
        return Err(FlowError::Config(format!(
            "state grid {}x{} differs from configured {}x{}",
            state.ny, state.nx, stepper.ny, stepper.nx
        )));
    }
    let mut next = state.clone();
    let report = stepper.step(&mut next)?;
    Ok((next, report))
}

/// Frames plus the per-step residual history of one simulated case.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub record: CaseRecord,
    pub reports: Vec<ResidualReport>,
    pub final_state: FieldState,
}

/// Simulates a case and samples `cfg.n_frames` frames (the first is the initial state).
pub fn simulate(params: &OperatingParams, cfg: &SolverConfig) -> Result<Simulation, FlowError> {
    cfg.validate()?;
    params.validate()?;
    Boundary::of(params)?;
    let (run, requested_u) = cfg.laminar_params(params);
    let frame_dt = cfg.frame_interval(&run);
    let (dx, dy) = cfg.cell_sizes(&run);
    let n_sub = substeps(frame_dt, 2.0 * run.u_b, dx, dy, cfg.cfl);
    let mut stepper = Stepper::new(&run, cfg, frame_dt / n_sub as f64)?;
    let mut state = stepper.initial_state(&run)?;
    let [h, w] = cfg.resolution;
    let channels = if cfg.record_pressure { 3 } else { 2 };
    let mut frames = Vec::with_capacity(cfg.n_frames * channels * h * w);
    let push_frame = |state: &FieldState, frames: &mut Vec<f32>| {
        let (uc, vc) = state.cell_velocity();
        frames.extend(uc.iter().map(|&x| x as f32));
        frames.extend(vc.iter().map(|&x| x as f32));
        if cfg.record_pressure {
            frames.extend(state.p.iter().map(|&x| x as f32));
        }
    };
    push_frame(&state, &mut frames);
    let mut reports = Vec::with_capacity((cfg.n_frames - 1) * n_sub);
    for _ in 1..cfg.n_frames {
        for _ in 0..n_sub {
            reports.push(stepper.step(&mut state)?);
        }
        push_frame(&state, &mut frames);
    }

    let mut flags = serde_json::Map::new();
    if let Some(u) = requested_u {
        flags.insert("laminar_guard".into(), serde_json::json!({ "requested_u_b": u, "simulated_u_b": run.u_b }));
    }
    flags.insert("substeps_per_frame".into(), n_sub.into());
    let max_res = reports.iter().map(ResidualReport::max_residual).fold(0.0, f64::max);
    let max_div = reports.iter().map(|r| r.max_divergence).fold(0.0, f64::max);
    flags.insert("max_scaled_residual".into(), max_res.into());
    flags.insert("max_divergence".into(), max_div.into());
    let (hm, wm) = run.extents_m();
    let mut channel_names = vec!["u".to_string(), "v".to_string()];
    if cfg.record_pressure {
        channel_names.push("p".into());
    }
    let meta = CaseMeta {
        schema_version: SCHEMA_VERSION,
        problem: run.problem,
        subset: None,
        case_id: String::new(),
        params: run,
        dt: frame_dt,
        extents_m: [hm, wm],
        resolution: [h, w],
        n_frames: cfg.n_frames,
        channels: channel_names,
        flags,
    };
    let record = CaseRecord::new(meta, frames, state.fluid.clone()).map_err(|e| FlowError::Config(e.to_string()))?;
    Ok(Simulation { record, reports, final_state: state })
}

/// Simulates a case and returns its frame record.
pub fn solve_case(params: &OperatingParams, cfg: &SolverConfig) -> Result<CaseRecord, FlowError> {
    simulate(params, cfg).map(|s| s.record)
}
