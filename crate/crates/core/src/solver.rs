//! Reference incompressible Navier–Stokes solver.
//!
//! Taylor–Hood elements with an incremental pressure-correction splitting:
//!
//! 1. tentative velocity `u*` from `(u* - u^n)/dt + (u^n . grad) u* - nu lap u* = -grad p^n`,
//! 2. pressure increment `lap phi = div u* / dt` with `phi = 0` on the outflow,
//! 3. correction `u^{n+1} = u* - dt grad phi`, `p^{n+1} = p^n + phi`.
//!
//! Velocity is prescribed on the inflow (parabolic profile) and walls; the
//! outflow is a natural boundary for velocity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{interpolate_p1, TaylorHood, QUADRATURE};
use crate::geometry::{DomainSpec, Point, CHANNEL_HEIGHT};
use crate::mesher::{Mesh, BOUNDARY_TOL};
use crate::sparse::{bicgstab, dot, CsrMatrix, EnvelopeCholesky, IterativeConfig, LinearSolveError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("linear solve failed in {stage} at t = {time:.5}: {source}")]
    Linear {
        stage: &'static str,
        time: f64,
        #[source]
        source: LinearSolveError,
    },
    #[error("non-finite field value at t = {time:.5}")]
    NonFinite { time: f64 },
    #[error("invalid quantity-of-interest request: {0}")]
    Qoi(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Kinematic viscosity.
    pub viscosity: f64,
    /// Time between stored frames.
    pub frame_interval: f64,
    pub frames: usize,
    /// Internal step used at `base_peak`; scaled inversely with the peak.
    pub base_dt: f64,
    pub base_peak: f64,
    pub linear_tol: f64,
    pub max_linear_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            viscosity: 0.001,
            frame_interval: 0.01,
            frames: 300,
            base_dt: 0.00025,
            base_peak: 1.25,
            linear_tol: 1e-8,
            max_linear_iter: 500,
        }
    }
}

impl SolverConfig {
    pub fn end_time(&self) -> f64 {
        self.frames as f64 * self.frame_interval
    }
}

/// Parabolic inflow profile `(U * 4 y (H - y) / H^2, 0)` of the 0.41-high channel.
pub fn inflow_profile(y: f64, peak: f64) -> [f64; 2] {
    let h = CHANNEL_HEIGHT;
    [peak * 4.0 * y * (h - y) / (h * h), 0.0]
}

/// Internal step for inflow peak `peak`: `base_dt * base_peak / peak`,
/// shortened so that a whole number of steps fills one frame interval.
/// Returns the step and the number of steps per frame.
pub fn internal_timestep(peak: f64, cfg: &SolverConfig) -> (f64, usize) {
    let raw = cfg.base_dt * cfg.base_peak / peak;
    let ratio = cfg.frame_interval / raw;
    // Absorb round-off so that exact divisors are not bumped up by one.
    let substeps = ((ratio - 1e-9).ceil() as usize).max(1);
    (cfg.frame_interval / substeps as f64, substeps)
}

/// Velocity and pressure sampled at mesh vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub velocity: Vec<[f64; 2]>,
    pub pressure: Vec<f64>,
}

/// A mesh and its frames at times `frame_interval * (1..=frames.len())`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub spec: DomainSpec,
    pub mesh: Mesh,
    pub frame_interval: f64,
    pub frames: Vec<Frame>,
    /// Produced by a learned model rather than the reference solver.
    pub predicted: bool,
}

impl Trajectory {
    pub fn time(&self, frame: usize) -> f64 {
        (frame + 1) as f64 * self.frame_interval
    }

    /// Keeps only the first `frames` frames.
    pub fn truncated(mut self, frames: usize) -> Trajectory {
        self.frames.truncate(frames);
        self
    }
}

/// Dirichlet velocity values at vertices: the inflow profile on inflow
/// vertices, zero on walls, `None` elsewhere.
pub fn vertex_dirichlet(mesh: &Mesh, peak: f64) -> Vec<Option<[f64; 2]>> {
    use crate::mesher::NodeType;
    mesh.vertices
        .iter()
        .zip(&mesh.node_types)
        .map(|(p, t)| match t {
            NodeType::Inflow => Some(inflow_profile(p[1], peak)),
            NodeType::Wall => Some([0.0, 0.0]),
            _ => None,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EdgeKind {
    Inflow,
    Outflow,
    Wall,
}

/// Per-step instantaneous drag, lift and pressure difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoiSample {
    pub time: f64,
    pub drag: f64,
    pub lift: f64,
    pub pressure_difference: f64,
}

/// Benchmark quantities over a window of developed flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Qoi {
    pub max_drag: f64,
    pub max_lift: f64,
    pub pressure_difference: f64,
    /// Shedding frequency in 1/s.
    pub frequency: f64,
    /// Dimensionless `f D / U_mean`.
    pub strouhal: f64,
    pub window: (f64, f64),
}

pub struct IpcsSolver {
    space: TaylorHood,
    cfg: SolverConfig,
    dt: f64,
    time: f64,
    ux: Vec<f64>,
    uy: Vec<f64>,
    p: Vec<f64>,
    prev_ux: Vec<f64>,
    prev_uy: Vec<f64>,
    mass: CsrMatrix,
    /// `M / dt + nu K` on the P2 pattern.
    base: CsrMatrix,
    work: CsrMatrix,
    div: [CsrMatrix; 2],
    grad: [CsrMatrix; 2],
    p1_mass: CsrMatrix,
    fixed: Vec<bool>,
    fixed_values: [Vec<f64>; 2],
    pressure_fixed: Vec<bool>,
    base_factor: EnvelopeCholesky,
    mass_factor: EnvelopeCholesky,
    pressure_factor: EnvelopeCholesky,
    p1_mass_factor: EnvelopeCholesky,
    /// P2 dofs on each obstacle boundary.
    obstacle_dofs: Vec<Vec<usize>>,
    pub last_iterations: [usize; 2],
}

impl IpcsSolver {
    pub fn new(mesh: &Mesh, spec: &DomainSpec, cfg: SolverConfig) -> Result<IpcsSolver, SolverError> {
        let space = TaylorHood::new(mesh);
        let (dt, _) = internal_timestep(spec.inflow_peak, &cfg);
        let n = space.n_dofs;
        let wrap = |stage| move |source| SolverError::Linear { stage, time: 0.0, source };

        let length = mesh.channel.length;
        let on = |x: f64, v: f64| (x - v).abs() <= BOUNDARY_TOL;
        let mut edge_use: std::collections::HashMap<(usize, usize), u32> = Default::default();
        for t in &mesh.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *edge_use.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut fixed = vec![false; n];
        let mut fixed_values = [vec![0.0; n], vec![0.0; n]];
        let mut pressure_fixed = vec![false; space.n_vertices];
        let mut boundary_edges: Vec<(usize, usize)> = edge_use
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(e, _)| e)
            .collect();
        boundary_edges.sort_unstable();
        for &(a, b) in &boundary_edges {
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            let kind = if on(pa[0], 0.0) && on(pb[0], 0.0) {
                EdgeKind::Inflow
            } else if on(pa[0], length) && on(pb[0], length) {
                EdgeKind::Outflow
            } else {
                EdgeKind::Wall
            };
            let mid = space.edge_dof(a, b).expect("mesh edge");
            match kind {
                EdgeKind::Outflow => {
                    pressure_fixed[a] = true;
                    pressure_fixed[b] = true;
                }
                EdgeKind::Inflow | EdgeKind::Wall => {
                    for d in [a, b, mid] {
                        fixed[d] = true;
                    }
                }
            }
        }
        for d in 0..n {
            if fixed[d] {
                let p = space.dof_points[d];
                // Inflow values vanish at the channel corners, so wall and
                // inflow agree wherever both apply.
                if on(p[0], 0.0) {
                    let v = inflow_profile(p[1], spec.inflow_peak);
                    fixed_values[0][d] = v[0];
                    fixed_values[1][d] = v[1];
                }
            }
        }

        let obstacle_dofs = mesh
            .obstacle_boundaries
            .iter()
            .map(|lp| {
                let mut dofs = lp.clone();
                for i in 0..lp.len() {
                    dofs.push(space.edge_dof(lp[i], lp[(i + 1) % lp.len()]).expect("obstacle edge"));
                }
                dofs
            })
            .collect();

        let (mass, stiff) = space.mass_and_stiffness();
        let base = mass.linear_combination(1.0 / dt, &stiff, cfg.viscosity);
        let mut base_elim = base.clone();
        base_elim.eliminate_symmetric(&fixed);
        let base_factor = EnvelopeCholesky::factor(&base_elim).map_err(wrap("setup"))?;
        let mut mass_elim = mass.clone();
        mass_elim.eliminate_symmetric(&fixed);
        let mass_factor = EnvelopeCholesky::factor(&mass_elim).map_err(wrap("setup"))?;
        let (p1_mass, p1_stiff) = space.p1_mass_and_stiffness();
        let mut lap = p1_stiff;
        lap.eliminate_symmetric(&pressure_fixed);
        let pressure_factor = EnvelopeCholesky::factor(&lap).map_err(wrap("setup"))?;
        let p1_mass_factor = EnvelopeCholesky::factor(&p1_mass).map_err(wrap("setup"))?;
        let div = space.divergence();
        let grad = space.gradient();
        let work = base.clone();

        Ok(IpcsSolver {
            dt,
            time: 0.0,
            ux: vec![0.0; n],
            uy: vec![0.0; n],
            p: vec![0.0; space.n_vertices],
            prev_ux: vec![0.0; n],
            prev_uy: vec![0.0; n],
            space,
            cfg,
            mass,
            base,
            work,
            div,
            grad,
            p1_mass,
            fixed,
            fixed_values,
            pressure_fixed,
            base_factor,
            mass_factor,
            pressure_factor,
            p1_mass_factor,
            obstacle_dofs,
            last_iterations: [0; 2],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn space(&self) -> &TaylorHood {
        &self.space
    }

    /// Current state sampled at the mesh vertices.
    pub fn frame(&self) -> Frame {
        let nv = self.space.n_vertices;
        Frame {
            velocity: (0..nv).map(|i| [self.ux[i], self.uy[i]]).collect(),
            pressure: self.p.clone(),
        }
    }

    fn linear_error(&self, stage: &'static str) -> impl Fn(LinearSolveError) -> SolverError {
        let time = self.time;
        move |source| SolverError::Linear { stage, time, source }
    }

    /// Advances one internal step.
    pub fn step(&mut self) -> Result<(), SolverError> {
        let n = self.space.n_dofs;
        let dt = self.dt;
        self.prev_ux.copy_from_slice(&self.ux);
        self.prev_uy.copy_from_slice(&self.uy);

        // Tentative velocity with the previous velocity as advecting field.
        self.work.values.copy_from_slice(&self.base.values);
        self.space.add_convection(&self.prev_ux, &self.prev_uy, &mut self.work);
        let linear = IterativeConfig {
            rel_tol: self.cfg.linear_tol,
            max_iter: self.cfg.max_linear_iter,
        };
        let mut tentative = [vec![0.0; n], vec![0.0; n]];
        for c in 0..2 {
            let prev = if c == 0 { &self.prev_ux } else { &self.prev_uy };
            let mut rhs = self.mass.mul_vec(prev);
            rhs.iter_mut().for_each(|v| *v /= dt);
            self.grad[c].mul_vec_add(-1.0, &self.p, &mut rhs);
            let mut lifted = prev.clone();
            for d in 0..n {
                if self.fixed[d] {
                    lifted[d] = self.fixed_values[c][d];
                }
            }
            self.work.mul_vec_add(-1.0, &lifted, &mut rhs);
            for d in 0..n {
                if self.fixed[d] {
                    rhs[d] = 0.0;
                }
            }
            let mut delta = vec![0.0; n];
            let work = &self.work;
            let fixed = &self.fixed;
            let op = |x: &[f64], y: &mut [f64]| {
                work.mul_vec_into(x, y);
                for d in 0..x.len() {
                    if fixed[d] {
                        y[d] = x[d];
                    }
                }
            };
            let its = bicgstab(op, &self.base_factor, &rhs, &mut delta, linear)
                .map_err(self.linear_error("tentative velocity"))?;
            self.last_iterations[c] = its;
            for d in 0..n {
                lifted[d] += delta[d];
            }
            tentative[c] = lifted;
        }

        // Pressure increment.
        let mut rhs_p = self.div[0].mul_vec(&tentative[0]);
        self.div[1].mul_vec_add(1.0, &tentative[1], &mut rhs_p);
        for (q, v) in rhs_p.iter_mut().enumerate() {
            *v = if self.pressure_fixed[q] { 0.0 } else { -*v / dt };
        }
        let phi = self.pressure_factor.solve(&rhs_p);

        // Velocity correction.
        for c in 0..2 {
            let mut rhs = vec![0.0; n];
            self.grad[c].mul_vec_add(-dt, &phi, &mut rhs);
            for d in 0..n {
                if self.fixed[d] {
                    rhs[d] = 0.0;
                }
            }
            let delta = self.mass_factor.solve(&rhs);
            let target = if c == 0 { &mut self.ux } else { &mut self.uy };
            for d in 0..n {
                target[d] = tentative[c][d] + delta[d];
            }
        }
        for (p, f) in self.p.iter_mut().zip(&phi) {
            *p += f;
        }
        self.time += dt;
        let finite = self.ux.iter().chain(&self.uy).chain(&self.p).all(|v| v.is_finite());
        if !finite {
            return Err(SolverError::NonFinite { time: self.time });
        }
        Ok(())
    }

    /// `||u^{n+1} - u^n|| / (dt ||u^{n+1}||)` in the L2 norm, for steady-state detection.
    pub fn relative_rate(&self) -> f64 {
        let dx: Vec<f64> = self.ux.iter().zip(&self.prev_ux).map(|(a, b)| a - b).collect();
        let dy: Vec<f64> = self.uy.iter().zip(&self.prev_uy).map(|(a, b)| a - b).collect();
        let change = (dot(&dx, &self.mass.mul_vec(&dx)) + dot(&dy, &self.mass.mul_vec(&dy))).sqrt();
        change / (self.dt * self.velocity_l2().max(f64::MIN_POSITIVE))
    }

    /// Steps until [`relative_rate`](Self::relative_rate) drops below `tol`
    /// or `max_time` is reached; returns whether the state became steady.
    pub fn run_to_steady(&mut self, tol: f64, max_time: f64) -> Result<bool, SolverError> {
        while self.time < max_time {
            self.step()?;
            if self.relative_rate() < tol {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn velocity_l2(&self) -> f64 {
        let mx = self.mass.mul_vec(&self.ux);
        let my = self.mass.mul_vec(&self.uy);
        (dot(&self.ux, &mx) + dot(&self.uy, &my)).sqrt()
    }

    /// L2 norm of the P1 projection of `div u`.
    pub fn divergence_l2(&self) -> f64 {
        let mut b = self.div[0].mul_vec(&self.ux);
        self.div[1].mul_vec_add(1.0, &self.uy, &mut b);
        let d = self.p1_mass_factor.solve(&b);
        dot(&d, &self.p1_mass.mul_vec(&d)).max(0.0).sqrt()
    }

    /// Force exerted by the fluid on obstacle `k`, from the weak momentum
    /// residual tested with the indicator of the obstacle boundary dofs.
    pub fn obstacle_force(&self, k: usize) -> [f64; 2] {
        let nu = self.cfg.viscosity;
        let s = &self.space;
        let mut indicator = vec![false; s.n_dofs];
        for &d in &self.obstacle_dofs[k] {
            indicator[d] = true;
        }
        let mut force = [0.0; 2];
        for e in 0..s.n_elements() {
            let dofs = &s.element_dofs[e];
            if !dofs.iter().any(|&d| indicator[d]) {
                continue;
            }
            let w: [f64; 6] = dofs.map(|d| if indicator[d] { 1.0 } else { 0.0 });
            let ux = dofs.map(|d| self.ux[d]);
            let uy = dofs.map(|d| self.uy[d]);
            let px = dofs.map(|d| self.prev_ux[d]);
            let py = dofs.map(|d| self.prev_uy[d]);
            let v = s.element_vertices[e];
            for (q, (l, wq)) in QUADRATURE.iter().enumerate() {
                let phi = &s.phi[q];
                let g = &s.grad_phi[e][q];
                let wa = wq * s.area[e];
                let val = |c: &[f64; 6]| (0..6).map(|a| phi[a] * c[a]).sum::<f64>();
                let grad = |c: &[f64; 6]| {
                    [
                        (0..6).map(|a| g[a][0] * c[a]).sum::<f64>(),
                        (0..6).map(|a| g[a][1] * c[a]).sum::<f64>(),
                    ]
                };
                let (u, gu) = ([val(&ux), val(&uy)], [grad(&ux), grad(&uy)]);
                let dudt = [(u[0] - val(&px)) / self.dt, (u[1] - val(&py)) / self.dt];
                let p = (0..3).map(|i| l[i] * self.p[v[i]]).sum::<f64>();
                let wv = val(&w);
                let gw = grad(&w);
                for c in 0..2 {
                    // Test function w e_c.
                    let conv = u[0] * gu[c][0] + u[1] * gu[c][1];
                    let mut visc = 0.0;
                    for j in 0..2 {
                        // (grad u + grad u^T)_{c j} * d(w)/dx_j
                        visc += (gu[c][j] + gu[j][c]) * gw[j];
                    }
                    let pres = p * gw[c];
                    force[c] -= wa * ((dudt[c] + conv) * wv + nu * visc - pres);
                }
            }
        }
        force
    }

    pub fn state(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.ux, &self.uy, &self.p)
    }
}

/// Solves from rest and samples every frame; `observe` runs after every
/// internal step.
pub fn solve_trajectory_with(
    mesh: &Mesh,
    spec: &DomainSpec,
    cfg: &SolverConfig,
    mut observe: impl FnMut(&IpcsSolver),
) -> Result<Trajectory, SolverError> {
    let mut solver = IpcsSolver::new(mesh, spec, *cfg)?;
    let (_, substeps) = internal_timestep(spec.inflow_peak, cfg);
    let mut frames = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        for _ in 0..substeps {
            solver.step()?;
            observe(&solver);
        }
        frames.push(solver.frame());
    }
    Ok(Trajectory {
        spec: spec.clone(),
        mesh: mesh.clone(),
        frame_interval: cfg.frame_interval,
        frames,
        predicted: false,
    })
}

pub fn solve_trajectory(mesh: &Mesh, spec: &DomainSpec, cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    solve_trajectory_with(mesh, spec, cfg, |_| {})
}

/// Instantaneous benchmark sample for obstacle 0: drag and lift coefficients
/// `2 F / (U_mean^2 D)` and `p(x_front) - p(x_back)`.
pub fn qoi_sample(
    solver: &IpcsSolver,
    mesh: &Mesh,
    diameter: f64,
    mean_velocity: f64,
    front: Point,
    back: Point,
) -> QoiSample {
    let f = solver.obstacle_force(0);
    let scale = 2.0 / (mean_velocity * mean_velocity * diameter);
    let (_, _, p) = solver.state();
    let pf = interpolate_p1(mesh, p, front).unwrap_or(f64::NAN);
    let pb = interpolate_p1(mesh, p, back).unwrap_or(f64::NAN);
    QoiSample {
        time: solver.time(),
        drag: scale * f[0],
        lift: scale * f[1],
        pressure_difference: pf - pb,
    }
}

/// Benchmark quantities over the last full lift period inside `window`:
/// maxima of drag and lift between the two last lift maxima, the pressure
/// difference at the period midpoint, and the shedding frequency.
pub fn compute_qoi(
    samples: &[QoiSample],
    window: (f64, f64),
    diameter: f64,
    mean_velocity: f64,
) -> Result<Qoi, SolverError> {
    let inside: Vec<&QoiSample> = samples
        .iter()
        .filter(|s| s.time >= window.0 && s.time <= window.1)
        .collect();
    let peaks: Vec<usize> = (1..inside.len().saturating_sub(1))
        .filter(|&i| inside[i].lift > inside[i - 1].lift && inside[i].lift >= inside[i + 1].lift)
        .collect();
    if peaks.len() < 2 {
        return Err(SolverError::Qoi(format!(
            "window [{}, {}] contains {} lift maxima, need at least one full period",
            window.0,
            window.1,
            peaks.len()
        )));
    }
    let (a, b) = (peaks[peaks.len() - 2], peaks[peaks.len() - 1]);
    let period = &inside[a..=b];
    let max_drag = period.iter().map(|s| s.drag).fold(f64::NEG_INFINITY, f64::max);
    let max_lift = period.iter().map(|s| s.lift).fold(f64::NEG_INFINITY, f64::max);
    let (t0, t1) = (inside[a].time, inside[b].time);
    let mid = 0.5 * (t0 + t1);
    let at_mid = period
        .iter()
        .min_by(|x, y| (x.time - mid).abs().total_cmp(&(y.time - mid).abs()))
        .expect("non-empty period");
    let frequency = 1.0 / (t1 - t0);
    Ok(Qoi {
        max_drag,
        max_lift,
        pressure_difference: at_mid.pressure_difference,
        frequency,
        strouhal: frequency * diameter / mean_velocity,
        window: (t0, t1),
    })
}

/// Runs the single-cylinder benchmark to `end_time`, sampling every internal
/// step at or after `window.0`, and evaluates the quantities of interest.
/// The mean inflow velocity is two thirds of the peak.
pub fn benchmark_qoi(
    mesh: &Mesh,
    spec: &DomainSpec,
    cfg: &SolverConfig,
    window: (f64, f64),
    mut progress: impl FnMut(f64),
) -> Result<(Vec<QoiSample>, Qoi), SolverError> {
    let obstacle = spec
        .obstacles
        .first()
        .ok_or_else(|| SolverError::Qoi("domain has no obstacle".into()))?;
    let radius = match obstacle.shape {
        crate::geometry::Shape::Circle { radius } => radius,
        _ => return Err(SolverError::Qoi("benchmark obstacle must be a circle".into())),
    };
    let diameter = 2.0 * radius;
    let mean_velocity = 2.0 * spec.inflow_peak / 3.0;
    let [cx, cy] = obstacle.center;
    let (front, back) = ([cx - radius, cy], [cx + radius, cy]);
    let mut solver = IpcsSolver::new(mesh, spec, *cfg)?;
    let mut samples = Vec::new();
    let mut next_report = 0.0;
    // Half a step of slack so the final step is not lost to round-off.
    while solver.time() < window.1 - 0.5 * solver.dt() {
        solver.step()?;
        if solver.time() >= window.0 - 0.5 * solver.dt() {
            samples.push(qoi_sample(&solver, mesh, diameter, mean_velocity, front, back));
        }
        if solver.time() >= next_report {
            progress(solver.time());
            next_report += 1.0;
        }
    }
    let qoi = compute_qoi(&samples, window, diameter, mean_velocity)?;
    Ok((samples, qoi))
}
