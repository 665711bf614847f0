//! Hierarchical planning head.
//!
//! Three learned queries attend over the latent grid, talk to each other
//! through self-attention, and decode a Laplace target region, a spatial
//! path and a trajectory (as increments). A refinement loop then samples
//! the latent grid around the current plan and applies residual updates.
//!
//! Everything is recorded on an [`nnet::Graph`](crate::nnet::Graph) so the
//! same code path serves inference and training.

mod layout;
mod output;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geom::{Point2, Pose};
use crate::nnet::{Graph, NodeId};
use crate::world::{Command, LatentGrid, Scenario};

pub use layout::{PlannerConfig, PlannerLayout, B_FLOOR, INCR_SCALE, PATH_SCALE, SIGMA_FLOOR, TARGET_SCALE};
pub use output::{PlanIterate, PlanOutput, QueryOutput, SpatialPath, TargetRegion};

/// Per-scenario inputs to the planner.
#[derive(Clone)]
pub struct PlanContext {
    pub latent: Arc<LatentGrid>,
    pub command: Command,
    /// Ego pose in world coordinates; plans are expressed in this frame.
    pub ego: Pose,
    keys: Arc<Vec<f64>>,
    pos_dim: usize,
}

impl PlanContext {
    pub fn new(latent: Arc<LatentGrid>, command: Command, ego: Pose, pos_dim: usize) -> Self {
        let keys = Arc::new(key_table(&latent, pos_dim));
        PlanContext { latent, command, ego, keys, pos_dim }
    }

    pub fn for_scenario(s: &Scenario, latent: Arc<LatentGrid>, pos_dim: usize) -> Self {
        Self::new(latent, s.command, s.ego_start.pose(), pos_dim)
    }

    /// Key rows: each cell's latent features followed by its positional
    /// encoding.
    pub fn keys(&self) -> &[f64] {
        &self.keys
    }
}

/// Sinusoidal encoding of a world position; `dim` is a multiple of 4.
pub fn positional_encoding(p: Point2, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for f in 0..dim / 4 {
        let s = 8.0 * 3f64.powi(f as i32);
        out.extend_from_slice(&[(p.x / s).sin(), (p.x / s).cos(), (p.y / s).sin(), (p.y / s).cos()]);
    }
    out
}

fn key_table(w: &LatentGrid, pos_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.spec.cells() * (w.channels + pos_dim));
    for j in 0..w.spec.height {
        for i in 0..w.spec.width {
            out.extend_from_slice(w.cell(i, j));
            out.extend(positional_encoding(w.spec.cell_center(i, j), pos_dim));
        }
    }
    out
}

/// Graph nodes of one plan iterate.
#[derive(Debug, Clone, Copy)]
pub struct PlanState {
    /// `[μx, μy, b-logit x, b-logit y]`
    pub target: NodeId,
    /// `2N` interleaved path coordinates, ego frame.
    pub path: NodeId,
    /// `2T` interleaved increments.
    pub incr: NodeId,
}

impl PlanState {
    pub fn mu(&self, g: &mut Graph) -> NodeId {
        g.slice(self.target, 0, 2)
    }

    /// `b = softplus(logit) + floor`, optionally shared between axes.
    pub fn scale(&self, g: &mut Graph, shared: bool) -> NodeId {
        let mut logits = g.slice(self.target, 2, 2);
        if shared {
            let m = g.mean(logits);
            let both = g.concat(&[m, m]);
            logits = both;
        }
        let sp = g.softplus(logits);
        g.shift(sp, B_FLOOR)
    }

    /// Trajectory points (running sums of the increments).
    pub fn points(&self, g: &mut Graph) -> NodeId {
        g.cumsum2(self.incr)
    }
}

/// Everything recorded by [`build_plan`].
pub struct PlanGraph {
    /// Queries after cross- and self-attention (Q'').
    pub queries: [NodeId; 3],
    /// Queries after cross-attention only (Q').
    pub stage1: [NodeId; 3],
    pub attention: [Vec<f64>; 3],
    pub history: Vec<PlanState>,
    /// Per-point, per-axis standard deviations of the increments (`2T`).
    pub sigma: NodeId,
}

impl PlanGraph {
    pub fn last(&self) -> PlanState {
        *self.history.last().expect("history is never empty")
    }
}

/// Cross-attention of the three queries over the grid, then self-attention
/// among them. Returns `(Q'', Q', attention weights)`.
pub fn interact_graph(
    g: &mut Graph,
    lay: &PlannerLayout,
    params: &[f64],
    ctx: &PlanContext,
) -> Result<([NodeId; 3], [NodeId; 3], [Vec<f64>; 3])> {
    let w = &ctx.latent;
    if w.channels != lay.channels || ctx.pos_dim != lay.cfg.pos_dim {
        return Err(Error::Shape(format!(
            "planner expects {} channels / {} positional dims, context has {} / {}",
            lay.channels, lay.cfg.pos_dim, w.channels, ctx.pos_dim
        )));
    }
    let d = lay.cfg.d_model;
    let cells = w.spec.cells();
    let kdim = lay.channels + lay.cfg.pos_dim;
    let keys = g.constant_matrix(ctx.keys.to_vec(), cells, kdim);
    let values = g.constant_matrix(w.data.clone(), cells, lay.channels);
    let cmd = g.constant(ctx.command.one_hot().to_vec());
    let key_scale = 1.0 / (kdim as f64).sqrt();

    let mut stage1 = Vec::with_capacity(3);
    let mut attention: Vec<Vec<f64>> = Vec::with_capacity(3);
    for s in 0..3 {
        let q0 = g.param(params, lay.queries + s * d, 1, d);
        let q_in = g.concat(&[q0, cmd]);
        let q = lay.q_in.apply(g, params, q_in);
        let k = lay.key.apply(g, params, q);
        let logits = g.affine(keys, k, None);
        let logits = g.reshape(logits, 1, cells);
        let logits = g.scale(logits, key_scale);
        let a = g.softmax(logits);
        attention.push(g.value(a).to_vec());
        let pooled = g.mat_t_vec(values, a);
        let v = lay.value.apply(g, params, pooled);
        stage1.push(g.add(q, v));
    }
    let stack = g.concat(&stage1);
    let stack = g.reshape(stack, 3, d);
    let qs = lay.sa_q.apply(g, params, stack);
    let ks = lay.sa_k.apply(g, params, stack);
    let vs = lay.sa_v.apply(g, params, stack);
    let scores = g.affine(qs, ks, None);
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let mut out = Vec::with_capacity(3);
    for (s, &q1) in stage1.iter().enumerate() {
        let row = g.slice(scores, 3 * s, 3);
        let a = g.softmax(row);
        let mixed = g.mat_t_vec(vs, a);
        out.push(g.add(q1, mixed));
    }
    let attention: [Vec<f64>; 3] = attention.try_into().expect("three queries");
    Ok(([out[0], out[1], out[2]], [stage1[0], stage1[1], stage1[2]], attention))
}

pub fn decode_target_graph(g: &mut Graph, lay: &PlannerLayout, params: &[f64], q: NodeId) -> NodeId {
    let raw = lay.head_target.apply(g, params, q);
    let mu = g.slice(raw, 0, 2);
    let mu = g.scale(mu, TARGET_SCALE);
    let logits = g.slice(raw, 2, 2);
    g.concat(&[mu, logits])
}

pub fn decode_path_graph(g: &mut Graph, lay: &PlannerLayout, params: &[f64], q: NodeId) -> NodeId {
    let raw = lay.head_path.apply(g, params, q);
    let raw = g.reshape(raw, 1, 2 * lay.cfg.path_points);
    g.scale(raw, PATH_SCALE)
}

pub fn decode_traj_graph(g: &mut Graph, lay: &PlannerLayout, params: &[f64], q: NodeId) -> NodeId {
    let raw = lay.head_traj.apply(g, params, q);
    let raw = g.reshape(raw, 1, 2 * lay.cfg.horizon);
    g.scale(raw, INCR_SCALE)
}

fn to_world(g: &mut Graph, ego: Pose, pts: NodeId) -> NodeId {
    let n = g.size(pts) / 2;
    let (s, c) = ego.heading.sin_cos();
    let rot = g.constant_matrix(vec![c, -s, s, c], 2, 2);
    let shift = g.constant(vec![ego.position.x, ego.position.y]);
    let m = g.reshape(pts, n, 2);
    let w = g.affine(m, rot, Some(shift));
    g.reshape(w, 1, 2 * n)
}

/// Runs `iters` refinement rounds from `init`. Returns every iterate
/// (including `init`) and the last fused trajectory feature, if any round ran.
pub fn refine_graph(
    g: &mut Graph,
    lay: &PlannerLayout,
    params: &[f64],
    ctx: &PlanContext,
    queries: [NodeId; 3],
    init: PlanState,
    iters: usize,
) -> (Vec<PlanState>, Option<NodeId>) {
    let cfg = &lay.cfg;
    let field: Arc<dyn crate::nnet::FieldSampler> = ctx.latent.clone();
    let mut history = vec![init];
    let mut fused_traj = None;
    for _ in 0..iters {
        let st = *history.last().unwrap();
        let mu = st.mu(g);
        let b = st.scale(g, cfg.shared_scale);
        let pos = st.points(g);
        let mu_s = g.scale(mu, 0.1);
        let path_s = g.scale(st.path, 0.1);
        let pos_s = g.scale(pos, 0.1);
        let fs_in = g.concat(&[mu_s, b, path_s, pos_s]);
        let fs = lay.state_enc.apply(g, params, fs_in);
        let fs = g.tanh(fs);
        let fb = lay.unc_enc.apply(g, params, b);
        let fb = g.tanh(fb);

        let points = [mu, st.path, pos];
        let mut deltas = Vec::with_capacity(3);
        for s in 0..3 {
            let off_in = g.concat(&[queries[s], fs]);
            let off = lay.offsets[s].apply(g, params, off_in);
            let off = g.reshape(off, 1, g.size(off));
            let off = g.scale(off, cfg.offset_scale);
            let world = to_world(g, ctx.ego, points[s]);
            let at = g.add(world, off);
            let local = g.bilinear(field.clone(), at);
            let local = g.reshape(local, 1, g.size(local));
            let fuse_in = g.concat(&[local, queries[s], fs, fb]);
            let fused = lay.fusion[s].apply(g, params, fuse_in);
            let fused = g.tanh(fused);
            if s == 2 {
                fused_traj = Some(fused);
            }
            let delta = lay.delta[s].apply(g, params, fused);
            let delta = g.reshape(delta, 1, g.size(delta));
            deltas.push(g.scale(delta, cfg.delta_scale));
        }
        // μ moves by α·Δ; the scale logits take the re-decoded correction
        let dmu = g.slice(deltas[0], 0, 2);
        let dmu = g.scale(dmu, cfg.alpha);
        let mu_next = g.add(mu, dmu);
        let logit = g.slice(st.target, 2, 2);
        let dlogit = g.slice(deltas[0], 2, 2);
        let logit_next = g.add(logit, dlogit);
        let target = g.concat(&[mu_next, logit_next]);
        let dp = g.scale(deltas[1], cfg.alpha);
        let path = g.add(st.path, dp);
        let di = g.scale(deltas[2], cfg.alpha);
        let incr = g.add(st.incr, di);
        history.push(PlanState { target, path, incr });
    }
    (history, fused_traj)
}

/// Standard deviations from the variance head; its input is detached.
pub fn sigma_graph(g: &mut Graph, lay: &PlannerLayout, params: &[f64], feature: NodeId) -> NodeId {
    let f = g.detach(feature);
    let raw = lay.variance.apply(g, params, f);
    let raw = g.reshape(raw, 1, g.size(raw));
    let sp = g.softplus(raw);
    g.shift(sp, SIGMA_FLOOR)
}

/// Full pipeline: interaction, decoding, `iters` refinement rounds and the
/// variance head.
pub fn build_plan(
    g: &mut Graph,
    lay: &PlannerLayout,
    params: &[f64],
    ctx: &PlanContext,
    iters: usize,
) -> Result<PlanGraph> {
    let (queries, stage1, attention) = interact_graph(g, lay, params, ctx)?;
    let init = PlanState {
        target: decode_target_graph(g, lay, params, queries[0]),
        path: decode_path_graph(g, lay, params, queries[1]),
        incr: decode_traj_graph(g, lay, params, queries[2]),
    };
    let (history, fused) = refine_graph(g, lay, params, ctx, queries, init, iters);
    let sigma = sigma_graph(g, lay, params, fused.unwrap_or(queries[2]));
    Ok(PlanGraph { queries, stage1, attention, history, sigma })
}

/// Plans with the configured number of refinement rounds.
pub fn plan(lay: &PlannerLayout, params: &[f64], ctx: &PlanContext) -> Result<PlanOutput> {
    plan_with_iters(lay, params, ctx, lay.cfg.refine_iters)
}

pub fn plan_with_iters(lay: &PlannerLayout, params: &[f64], ctx: &PlanContext, iters: usize) -> Result<PlanOutput> {
    let mut g = Graph::new();
    let pg = build_plan(&mut g, lay, params, ctx, iters)?;
    PlanOutput::read(&g, lay, &pg.history, g.value(pg.sigma).to_vec())
}

/// Query interaction alone, as plain values.
pub fn query_interact(lay: &PlannerLayout, params: &[f64], ctx: &PlanContext) -> Result<QueryOutput> {
    let mut g = Graph::new();
    let (q, s1, attention) = interact_graph(&mut g, lay, params, ctx)?;
    Ok(QueryOutput { queries: q.map(|n| g.value(n).to_vec()), stage1: s1.map(|n| g.value(n).to_vec()), attention })
}

pub fn decode_target(lay: &PlannerLayout, params: &[f64], q_target: &[f64]) -> TargetRegion {
    let mut g = Graph::new();
    let q = g.constant(q_target.to_vec());
    let t = decode_target_graph(&mut g, lay, params, q);
    TargetRegion::from_raw(g.value(t), lay.cfg.shared_scale)
}

pub fn decode_path(lay: &PlannerLayout, params: &[f64], q_path: &[f64]) -> SpatialPath {
    let mut g = Graph::new();
    let q = g.constant(q_path.to_vec());
    let p = decode_path_graph(&mut g, lay, params, q);
    SpatialPath::from_flat(g.value(p))
}

pub fn decode_traj(lay: &PlannerLayout, params: &[f64], q_traj: &[f64]) -> Result<crate::geom::IncrementSeq> {
    let mut g = Graph::new();
    let q = g.constant(q_traj.to_vec());
    let t = decode_traj_graph(&mut g, lay, params, q);
    crate::geom::IncrementSeq::from_flat(g.value(t), lay.cfg.dt)
}

/// Refines an existing plan for `iters` rounds given interacted queries.
pub fn refine(
    lay: &PlannerLayout,
    params: &[f64],
    ctx: &PlanContext,
    queries: &[Vec<f64>; 3],
    plan: &PlanIterate,
    iters: usize,
) -> Result<PlanOutput> {
    let d = lay.cfg.d_model;
    if queries.iter().any(|q| q.len() != d) {
        return Err(Error::Shape(format!("queries must have dimension {d}")));
    }
    if plan.path.points.len() != lay.cfg.path_points || plan.increments.len() != lay.cfg.horizon {
        return Err(Error::Shape("plan does not match the planner configuration".into()));
    }
    let mut g = Graph::new();
    let q = [0, 1, 2].map(|s| g.constant(queries[s].clone()));
    let init = PlanState {
        target: g.constant(plan.target.raw().to_vec()),
        path: g.constant(plan.path.to_flat()),
        incr: g.constant(plan.increments.to_flat()),
    };
    let (history, fused) = refine_graph(&mut g, lay, params, ctx, q, init, iters);
    let sigma = sigma_graph(&mut g, lay, params, fused.unwrap_or(q[2]));
    let sigma = g.value(sigma).to_vec();
    PlanOutput::read(&g, lay, &history, sigma)
}

#[cfg(test)]
mod tests;
