//! Bird's-eye latent grid, the frozen stencil encoder and the
//! trajectory-conditioned world decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_in_polygon, project_to_grid, GridSpec, OrientedBox, Point2};
use crate::nnet::{Activation, FieldSampler, Graph, Mlp, NodeId};
use crate::world::scenario::{EgoState, Scenario, EGO_HALF_EXTENTS};

/// Raster planes: agent occupancy, ego occupancy, drivable mask, route
/// tangent x, route tangent y, ego speed / 10, agent velocity x / 10, agent
/// velocity y / 10.
pub const RASTER_PLANES: usize = 8;

const SUBSAMPLES: usize = 3;
/// Route tangents fade out linearly over this distance from the route.
const ROUTE_FALLOFF: f64 = 6.0;
const SPEED_SCALE: f64 = 10.0;
/// Trajectory coordinates fed to the decoder are divided by this.
const TRAJ_SCALE: f64 = 10.0;

/// A `C`-channel feature grid. Values are stored cell-major:
/// `data[(j·width + i)·C + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub spec: GridSpec,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(spec: GridSpec, channels: usize, data: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if spec.width < 2 || spec.height < 2 {
            return Err(Error::Shape("latent grids need at least 2×2 cells".into()));
        }
        if channels == 0 || data.len() != spec.cells() * channels {
            return Err(Error::Shape(format!(
                "grid {}×{} with {channels} channels needs {} values, got {}",
                spec.width,
                spec.height,
                spec.cells() * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent grid values".into()));
        }
        Ok(LatentGrid { spec, channels, data })
    }

    pub fn zeros(spec: GridSpec, channels: usize) -> Result<Self> {
        Self::new(spec, channels, vec![0.0; spec.cells() * channels])
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let k = self.spec.index(i, j) * self.channels;
        &self.data[k..k + self.channels]
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.cell(i, j)[c]
    }

    /// One channel as a row-major `height × width` plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Neighborhood of `(i, j)` with the given side length, zero padded at
    /// the border, flattened neighbor-major then channel.
    pub fn stencil(&self, i: usize, j: usize, side: usize, out: &mut Vec<f64>) {
        let r = (side / 2) as isize;
        for dj in -r..=r {
            for di in -r..=r {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii >= self.spec.width as isize || jj >= self.spec.height as isize {
                    out.extend(std::iter::repeat_n(0.0, self.channels));
                } else {
                    out.extend_from_slice(self.cell(ii as usize, jj as usize));
                }
            }
        }
    }

    /// `cells × (side²·C)` matrix of every cell's stencil.
    pub fn stencil_matrix(&self, side: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.cells() * side * side * self.channels);
        for j in 0..self.spec.height {
            for i in 0..self.spec.width {
                self.stencil(i, j, side, &mut out);
            }
        }
        out
    }

    fn center_spec(&self) -> GridSpec {
        let half = self.spec.cell_size * 0.5;
        GridSpec {
            origin: self.spec.origin + Point2::new(half, half),
            cell_size: self.spec.cell_size,
            width: self.spec.width - 1,
            height: self.spec.height - 1,
        }
    }
}

impl FieldSampler for LatentGrid {
    fn channels(&self) -> usize {
        self.channels
    }

    /// Bilinear interpolation between the four surrounding cell centers.
    /// Outside the span of cell centers the position clamps to the border
    /// and the derivative along the clamped axis is zero.
    fn sample(&self, p: Point2, out: &mut [f64], dx: &mut [f64], dy: &mut [f64]) {
        let cspec = self.center_spec();
        let g = project_to_grid(p, &cspec);
        let gx = (p.x - cspec.origin.x) / cspec.cell_size;
        let gy = (p.y - cspec.origin.y) / cspec.cell_size;
        let clamp_x = !(gx >= 0.0 && gx < cspec.width as f64);
        let clamp_y = !(gy >= 0.0 && gy < cspec.height as f64);
        let (u, v) = (g.frac_u, g.frac_v);
        let v00 = self.cell(g.i, g.j);
        let v10 = self.cell(g.i + 1, g.j);
        let v01 = self.cell(g.i, g.j + 1);
        let v11 = self.cell(g.i + 1, g.j + 1);
        let inv = 1.0 / self.spec.cell_size;
        for c in 0..self.channels {
            out[c] = (1.0 - u) * (1.0 - v) * v00[c] + u * (1.0 - v) * v10[c] + (1.0 - u) * v * v01[c] + u * v * v11[c];
            dx[c] = if clamp_x { 0.0 } else { ((1.0 - v) * (v10[c] - v00[c]) + v * (v11[c] - v01[c])) * inv };
            dy[c] = if clamp_y { 0.0 } else { ((1.0 - u) * (v01[c] - v00[c]) + u * (v11[c] - v10[c])) * inv };
        }
    }
}

/// Which trajectory the world decoder is conditioned on during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderInput {
    /// The planner's own trajectory, gradients detached.
    Predicted,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub grid: GridSpec,
    pub channels: usize,
    /// Side length of the square neighborhood read by encoder and decoder.
    pub stencil: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub decoder_input: DecoderInput,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            grid: GridSpec { origin: Point2::new(-16.0, -32.0), cell_size: 1.0, width: 64, height: 64 },
            channels: 16,
            stencil: 3,
            encoder_hidden: 32,
            decoder_hidden: 32,
            decoder_input: DecoderInput::Predicted,
        }
    }
}

impl WorldConfig {
    /// A coarser grid over the same area, for quick experiments.
    pub fn compact() -> Self {
        WorldConfig {
            grid: GridSpec { origin: Point2::new(-16.0, -32.0), cell_size: 2.0, width: 32, height: 32 },
            channels: 16,
            stencil: 3,
            encoder_hidden: 32,
            decoder_hidden: 24,
            decoder_input: DecoderInput::Predicted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.grid.width < 2 || self.grid.height < 2 {
            return Err(Error::Config("grid must be at least 2×2".into()));
        }
        if self.stencil.is_multiple_of(2) {
            return Err(Error::Config(format!("stencil side must be odd, got {}", self.stencil)));
        }
        if self.channels == 0 || self.encoder_hidden == 0 || self.decoder_hidden == 0 {
            return Err(Error::Config("world model sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder and decoder nets; their parameters live in a shared flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelParams {
    pub cfg: WorldConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl WorldModelParams {
    /// Lays out encoder then decoder starting at `offset` for a trajectory
    /// of `horizon` points.
    pub fn new(cfg: WorldConfig, horizon: usize, offset: usize) -> Self {
        let s2 = cfg.stencil * cfg.stencil;
        let encoder = Mlp::new(vec![s2 * RASTER_PLANES, cfg.encoder_hidden, cfg.channels], Activation::Tanh, offset);
        let decoder = Mlp::new(
            vec![s2 * cfg.channels + 2 * horizon, cfg.decoder_hidden, cfg.channels],
            Activation::Tanh,
            encoder.end(),
        );
        WorldModelParams { cfg, encoder, decoder }
    }

    pub fn end(&self) -> usize {
        self.decoder.end()
    }

    pub fn horizon(&self) -> usize {
        (self.decoder.input_dim() - self.cfg.stencil * self.cfg.stencil * self.cfg.channels) / 2
    }
}

/// Rasterizes the scene with agents at script step `agent_step` and the ego
/// at `ego`.
pub fn rasterize(s: &Scenario, spec: &GridSpec, agent_step: usize, ego: EgoState) -> Result<LatentGrid> {
    let agents = s.agent_boxes(agent_step)?;
    let velocities: Vec<Point2> = s
        .agents
        .iter()
        .map(|a| {
            let k = agent_step.min(a.poses.len() - 1);
            let (i, j) = if k + 1 < a.poses.len() { (k, k + 1) } else { (k.saturating_sub(1), k) };
            if i == j {
                Point2::ORIGIN
            } else {
                (a.poses[j].position - a.poses[i].position).scale(1.0 / (s.dt() * SPEED_SCALE))
            }
        })
        .collect();
    let ego_box = OrientedBox::at_pose(ego.pose(), EGO_HALF_EXTENTS)?;
    let tangents: Vec<(Point2, Point2, Point2)> = s
        .route
        .windows(2)
        .filter_map(|w| {
            let d = w[1] - w[0];
            let n = d.norm();
            (n > 0.0).then(|| (w[0], w[1], d.scale(1.0 / n)))
        })
        .collect();
    let mut data = Vec::with_capacity(spec.cells() * RASTER_PLANES);
    let cs = spec.cell_size;
    let sub = SUBSAMPLES as f64;
    for j in 0..spec.height {
        for i in 0..spec.width {
            let mut agent_hits = 0usize;
            let mut ego_hits = 0usize;
            let mut vel = Point2::ORIGIN;
            for b in 0..SUBSAMPLES {
                for a in 0..SUBSAMPLES {
                    let p = Point2::new(
                        spec.origin.x + (i as f64 + (a as f64 + 0.5) / sub) * cs,
                        spec.origin.y + (j as f64 + (b as f64 + 0.5) / sub) * cs,
                    );
                    if let Some(k) = agents.iter().position(|bx| bx.contains(p)) {
                        agent_hits += 1;
                        vel = vel + velocities[k];
                    }
                    if ego_box.contains(p) {
                        ego_hits += 1;
                    }
                }
            }
            let n = (SUBSAMPLES * SUBSAMPLES) as f64;
            let c = spec.cell_center(i, j);
            let drivable = if point_in_polygon(c, &s.drivable)? { 1.0 } else { 0.0 };
            let (mut best, mut dir) = (f64::INFINITY, Point2::ORIGIN);
            for &(a, b, t) in &tangents {
                let d = segment_distance(a, b, c);
                if d < best {
                    best = d;
                    dir = t;
                }
            }
            let w = (1.0 - best / ROUTE_FALLOFF).max(0.0);
            data.extend_from_slice(&[
                agent_hits as f64 / n,
                ego_hits as f64 / n,
                drivable,
                w * dir.x,
                w * dir.y,
                ego.speed / SPEED_SCALE,
                vel.x / n,
                vel.y / n,
            ]);
        }
    }
    LatentGrid::new(*spec, RASTER_PLANES, data)
}

fn segment_distance(a: Point2, b: Point2, p: Point2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    p.distance(a + ab.scale(t))
}

/// Applies the encoder to every cell's raster stencil.
pub fn encode_raster(raster: &LatentGrid, wm: &WorldModelParams, params: &[f64]) -> Result<LatentGrid> {
    if raster.channels != RASTER_PLANES {
        return Err(Error::Shape(format!("expected {RASTER_PLANES} raster planes")));
    }
    let side = wm.cfg.stencil;
    let mut data = Vec::with_capacity(raster.spec.cells() * wm.cfg.channels);
    let mut buf = Vec::with_capacity(side * side * RASTER_PLANES);
    for j in 0..raster.spec.height {
        for i in 0..raster.spec.width {
            buf.clear();
            raster.stencil(i, j, side, &mut buf);
            data.extend(wm.encoder.eval(params, &buf));
        }
    }
    LatentGrid::new(raster.spec, wm.cfg.channels, data)
}

/// Latent state at planning time.
pub fn encode_latent(s: &Scenario, wm: &WorldModelParams, params: &[f64]) -> Result<LatentGrid> {
    let raster = rasterize(s, &wm.cfg.grid, 0, s.ego_start)?;
    encode_raster(&raster, wm, params)
}

/// Latent state one step later: agents advance along their scripts and the
/// ego moves to the first expert point.
pub fn encode_next_latent(s: &Scenario, wm: &WorldModelParams, params: &[f64]) -> Result<LatentGrid> {
    let raster = rasterize(s, &wm.cfg.grid, 1, s.ego_after_first_step())?;
    encode_raster(&raster, wm, params)
}

/// Decoder input: each cell's latent stencil followed by the trajectory's
/// world points relative to that cell's center, scaled down.
pub fn decoder_inputs(w: &LatentGrid, traj_world: &[Point2], wm: &WorldModelParams) -> Result<Vec<f64>> {
    if w.spec != wm.cfg.grid || w.channels != wm.cfg.channels {
        return Err(Error::Shape("latent grid does not match the world model".into()));
    }
    if traj_world.len() != wm.horizon() {
        return Err(Error::Shape(format!(
            "decoder expects {} trajectory points, got {}",
            wm.horizon(),
            traj_world.len()
        )));
    }
    let side = wm.cfg.stencil;
    let mut out = Vec::with_capacity(w.spec.cells() * wm.decoder.input_dim());
    for j in 0..w.spec.height {
        for i in 0..w.spec.width {
            w.stencil(i, j, side, &mut out);
            let c = w.spec.cell_center(i, j);
            for p in traj_world {
                out.push((p.x - c.x) / TRAJ_SCALE);
                out.push((p.y - c.y) / TRAJ_SCALE);
            }
        }
    }
    Ok(out)
}

/// Records the decoder on `g`; returns a `cells × C` node.
pub fn decoder_graph(g: &mut Graph, wm: &WorldModelParams, params: &[f64], inputs: Vec<f64>) -> NodeId {
    let rows = wm.cfg.grid.cells();
    let x = g.constant_matrix(inputs, rows, wm.decoder.input_dim());
    wm.decoder.apply(g, params, x)
}

/// Predicted next latent grid given a world-frame trajectory.
pub fn predict_next_latent(
    w: &LatentGrid,
    traj_world: &[Point2],
    wm: &WorldModelParams,
    params: &[f64],
) -> Result<LatentGrid> {
    let inputs = decoder_inputs(w, traj_world, wm)?;
    let d = wm.decoder.input_dim();
    let data: Vec<f64> = inputs.chunks(d).flat_map(|row| wm.decoder.eval(params, row)).collect();
    LatentGrid::new(w.spec, wm.cfg.channels, data)
}

/// Mean squared error over all cells and channels.
pub fn reconstruction_loss(pred: &LatentGrid, actual: &LatentGrid) -> Result<f64> {
    if pred.spec != actual.spec || pred.channels != actual.channels {
        return Err(Error::Shape("reconstruction needs matching grids".into()));
    }
    let sum: f64 = pred.data.iter().zip(&actual.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.data.len() as f64)
}

/// Graph version of [`reconstruction_loss`].
pub fn reconstruction_loss_graph(g: &mut Graph, pred: NodeId, actual: &LatentGrid) -> NodeId {
    let (r, c) = g.shape(pred);
    let target = g.constant_matrix(actual.data.clone(), r, c);
    let diff = g.sub(pred, target);
    let sq = g.square(diff);
    g.mean(sq)
}
