//! Imitation pretraining: Laplace target NLL, L1 path/trajectory losses and
//! the self-supervised world-prediction loss, plus the epoch loop that
//! produces the reference policy.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::harness::metrics::{ade, collision_flags};
use crate::model::{PolicySnapshot, SceneCache};
use crate::nnet::{Graph, NodeId, OptimizerKind, OptimizerState};
use crate::planner::{build_plan, PlanGraph, PlanOutput, PlanState, TargetRegion};
use crate::rng::stream;
use crate::world::{
    decoder_graph, decoder_inputs, predict_next_latent, reconstruction_loss, reconstruction_loss_graph, DecoderInput,
    Scenario,
};

/// Weights of the combined objective. The semantic slot exists for
/// structural parity and is always zero here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub semantic: f64,
    /// Reconstruction (β).
    pub rec: f64,
    /// Target NLL (γ).
    pub target: f64,
    /// Path + trajectory L1 (η).
    pub traj: f64,
    /// Weight of the auxiliary copy of the losses on the unrefined iterate;
    /// only used when refinement runs.
    pub aux_initial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { semantic: 0.0, rec: 0.2, target: 0.001, traj: 1.0, aux_initial: 0.3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.rec, self.target, self.traj, self.aux_initial];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and ≥ 0".into()));
        }
        if self.semantic != 0.0 {
            return Err(Error::Config("semantic supervision is not available; keep its weight at 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Stop once validation ADE has not improved for this many epochs.
    pub patience: Option<usize>,
    /// Return the parameters of the epoch with the best validation ADE.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            weights: LossWeights::default(),
            epochs: 60,
            lr: 1e-3,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            patience: Some(10),
            keep_best: true,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    /// Full-scale settings: Adam at 5e-5, batch 8, 12 epochs.
    pub fn full_scale() -> Self {
        PretrainConfig { epochs: 12, lr: 5e-5, patience: None, keep_best: false, ..PretrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub target: f64,
    pub path_l1: f64,
    pub traj_l1: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `β·rec + γ·target + η·(path_l1 + traj_l1)`.
    pub fn compose(rec: f64, target: f64, path_l1: f64, traj_l1: f64, w: &LossWeights) -> f64 {
        w.rec * rec + w.target * target + w.traj * (path_l1 + traj_l1)
    }

    fn accumulate(&mut self, o: &LossBreakdown) {
        self.rec += o.rec;
        self.target += o.target;
        self.path_l1 += o.path_l1;
        self.traj_l1 += o.traj_l1;
        self.total += o.total;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.rec *= s;
        self.target *= s;
        self.path_l1 *= s;
        self.traj_l1 *= s;
        self.total *= s;
        self
    }
}

/// Per-axis Laplace negative log-likelihood `Σᵢ log(2bᵢ) + |yᵢ−μᵢ|/bᵢ`.
pub fn laplace_nll(y: Point2, region: &TargetRegion) -> Result<f64> {
    let b = region.b;
    if !(b[0] > 0.0 && b[1] > 0.0) {
        return Err(Error::Domain(format!("Laplace scales must be > 0, got {b:?}")));
    }
    let d = y - region.mu;
    Ok((2.0 * b[0]).ln() + d.x.abs() / b[0] + (2.0 * b[1]).ln() + d.y.abs() / b[1])
}

/// Mean absolute error over all coordinates.
pub fn traj_l1(pred: &[Point2], gt: &[Point2]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!("L1 needs equal non-empty lengths, got {} and {}", pred.len(), gt.len())));
    }
    let s: f64 = pred.iter().zip(gt).map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs()).sum();
    Ok(s / (2 * pred.len()) as f64)
}

/// Points at arc lengths `spacing, 2·spacing, …` along `poly`, continuing
/// along the last segment's direction past its end.
pub fn resample_arc_length(poly: &[Point2], n: usize, spacing: f64) -> Result<Vec<Point2>> {
    if poly.len() < 2 || !(spacing > 0.0) {
        return Err(Error::Argument("resampling needs ≥ 2 vertices and spacing > 0".into()));
    }
    let segs: Vec<(Point2, Point2, f64)> =
        poly.windows(2).map(|w| (w[0], w[1], w[0].distance(w[1]))).filter(|s| s.2 > 0.0).collect();
    if segs.is_empty() {
        return Err(Error::InvalidGeometry("polyline has zero length".into()));
    }
    let mut out = Vec::with_capacity(n);
    let (mut seg, mut start) = (0usize, 0.0f64);
    for k in 1..=n {
        let s = k as f64 * spacing;
        while seg + 1 < segs.len() && s > start + segs[seg].2 {
            start += segs[seg].2;
            seg += 1;
        }
        let (a, b, len) = segs[seg];
        out.push(a + (b - a).scale((s - start) / len));
    }
    Ok(out)
}

/// Supervision targets of one scenario, ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub traj: Vec<Point2>,
    pub path: Vec<Point2>,
    pub target: Point2,
}

/// Ground-truth path: the polyline from the ego through the expert points,
/// continued along the route beyond the expert's last point, resampled
/// every `spacing` meters.
pub fn path_ground_truth(s: &Scenario, n: usize, spacing: f64) -> Result<Vec<Point2>> {
    let pose = s.ego_start.pose();
    let mut poly = vec![Point2::ORIGIN];
    poly.extend_from_slice(&s.expert.points);
    let last = pose.to_parent(*s.expert.points.last().unwrap());
    let (mut best, mut seg) = (f64::INFINITY, 0usize);
    for (k, w) in s.route.windows(2).enumerate() {
        let ab = w[1] - w[0];
        let t = if ab.dot(ab) > 0.0 { ((last - w[0]).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0) } else { 0.0 };
        let d = last.distance(w[0] + ab.scale(t));
        if d < best {
            best = d;
            seg = k;
        }
    }
    poly.extend(s.route[seg + 1..].iter().map(|&p| pose.to_local(p)));
    resample_arc_length(&poly, n, spacing)
}

impl Targets {
    pub fn for_scenario(s: &Scenario, path_points: usize, spacing: f64) -> Result<Self> {
        Ok(Targets {
            traj: s.expert.points.clone(),
            path: path_ground_truth(s, path_points, spacing)?,
            target: *s.expert.points.last().unwrap(),
        })
    }
}

fn flat(pts: &[Point2]) -> Vec<f64> {
    pts.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Graph nodes of the four loss parts and the weighted total.
pub struct LossNodes {
    pub rec: NodeId,
    pub target: NodeId,
    pub path_l1: NodeId,
    pub traj_l1: NodeId,
    pub total: NodeId,
}

fn l1_node(g: &mut Graph, pred: NodeId, gt: &[Point2]) -> NodeId {
    let c = g.constant(flat(gt));
    let d = g.sub(pred, c);
    let a = g.abs(d);
    g.mean(a)
}

/// `Σ log(2b) + |y−μ|/b` on the graph.
pub fn laplace_nll_graph(g: &mut Graph, st: &PlanState, y: Point2, shared: bool) -> NodeId {
    let mu = st.mu(g);
    let b = st.scale(g, shared);
    let b2 = g.scale(b, 2.0);
    let logs = g.ln(b2);
    let yc = g.constant(vec![y.x, y.y]);
    let d = g.sub(yc, mu);
    let ad = g.abs(d);
    let inv = g.recip(b);
    let ratio = g.mul(ad, inv);
    let both = g.add(logs, ratio);
    g.sum(both)
}

/// Records the combined loss for a recorded plan.
pub fn loss_graph(
    g: &mut Graph,
    pol: &PolicySnapshot,
    params: &[f64],
    cache: &SceneCache,
    targets: &Targets,
    pg: &PlanGraph,
    w: &LossWeights,
) -> Result<LossNodes> {
    let shared = pol.cfg.planner.shared_scale;
    let k = pg.history.len() - 1;
    let mut supervised = vec![(pg.history[k], 1.0)];
    if k > 0 && w.aux_initial > 0.0 {
        supervised.push((pg.history[0], w.aux_initial));
    }
    let (mut tg, mut pa, mut tr) = (Vec::new(), Vec::new(), Vec::new());
    for (st, weight) in supervised {
        let nll = laplace_nll_graph(g, &st, targets.target, shared);
        let pl = l1_node(g, st.path, &targets.path);
        let pos = st.points(g);
        let tl = l1_node(g, pos, &targets.traj);
        tg.push(g.scale(nll, weight));
        pa.push(g.scale(pl, weight));
        tr.push(g.scale(tl, weight));
    }
    let target = g.add_all(&tg);
    let path_l1 = g.add_all(&pa);
    let traj_l1 = g.add_all(&tr);

    let wm = &pol.layout.world;
    let traj_world = match wm.cfg.decoder_input {
        DecoderInput::Predicted => {
            let last = pg.last();
            let pos = st_points_value(g, &last);
            pol_points_world(cache, &pos)
        }
        DecoderInput::Expert => pol_points_world(cache, &targets.traj),
    };
    let inputs = decoder_inputs(&cache.now, &traj_world, wm)?;
    let pred = decoder_graph(g, wm, params, inputs);
    let rec = reconstruction_loss_graph(g, pred, &cache.next);

    let a = g.scale(rec, w.rec);
    let b = g.scale(target, w.target);
    let pt = g.add(path_l1, traj_l1);
    let c = g.scale(pt, w.traj);
    let total = g.add_all(&[a, b, c]);
    Ok(LossNodes { rec, target, path_l1, traj_l1, total })
}

fn st_points_value(g: &mut Graph, st: &PlanState) -> Vec<Point2> {
    let inc = g.detach(st.incr);
    let v = g.value(inc);
    let mut acc = Point2::ORIGIN;
    v.chunks(2)
        .map(|c| {
            acc = acc + Point2::new(c[0], c[1]);
            acc
        })
        .collect()
}

fn pol_points_world(cache: &SceneCache, pts: &[Point2]) -> Vec<Point2> {
    pts.iter().map(|&p| cache.ctx.ego.to_parent(p)).collect()
}

/// Loss breakdown of a finished plan (value-level).
pub fn compute_losses(s: &Scenario, plan: &PlanOutput, pol: &PolicySnapshot, w: &LossWeights) -> Result<LossBreakdown> {
    let cfg = &pol.cfg.planner;
    let targets = Targets::for_scenario(s, cfg.path_points, cfg.path_spacing)?;
    let cache = pol.encode(s)?;
    let k = plan.history.len() - 1;
    let mut supervised = vec![(&plan.history[k], 1.0)];
    if k > 0 && w.aux_initial > 0.0 {
        supervised.push((&plan.history[0], w.aux_initial));
    }
    let (mut target, mut path_l1, mut traj) = (0.0, 0.0, 0.0);
    for (it, weight) in supervised {
        target += weight * laplace_nll(targets.target, &it.target)?;
        path_l1 += weight * traj_l1(&it.path.points, &targets.path)?;
        traj += weight * traj_l1(&it.trajectory().points, &targets.traj)?;
    }
    let cond = match pol.cfg.world.decoder_input {
        DecoderInput::Predicted => plan.trajectory().points,
        DecoderInput::Expert => targets.traj.clone(),
    };
    let pred = predict_next_latent(&cache.now, &pol_points_world(&cache, &cond), &pol.layout.world, &pol.params)?;
    let rec = reconstruction_loss(&pred, &cache.next)?;
    Ok(LossBreakdown {
        rec,
        target,
        path_l1,
        traj_l1: traj,
        total: LossBreakdown::compose(rec, target, path_l1, traj, w),
    })
}

/// Loss and parameter gradient for one scenario.
pub fn scenario_gradient(
    pol: &PolicySnapshot,
    cache: &SceneCache,
    targets: &Targets,
    w: &LossWeights,
    iters: usize,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut g = Graph::new();
    let pg = build_plan(&mut g, &pol.layout.planner, &pol.params, &cache.ctx, iters)?;
    let nodes = loss_graph(&mut g, pol, &pol.params, cache, targets, &pg, w)?;
    let mut grads = vec![0.0; pol.params.len()];
    g.backward(nodes.total, &[1.0], &mut grads);
    Ok((read_breakdown(&g, &nodes), grads))
}

fn read_breakdown(g: &Graph, n: &LossNodes) -> LossBreakdown {
    LossBreakdown {
        rec: g.scalar(n.rec),
        target: g.scalar(n.target),
        path_l1: g.scalar(n.path_l1),
        traj_l1: g.scalar(n.traj_l1),
        total: g.scalar(n.total),
    }
}

/// A training example with its cached latents and targets.
#[derive(Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub cache: SceneCache,
    pub targets: Targets,
}

pub fn prepare(pol: &PolicySnapshot, corpus: &[Scenario]) -> Result<Vec<Prepared>> {
    let cfg = &pol.cfg.planner;
    corpus
        .par_iter()
        .map(|s| {
            Ok(Prepared {
                scenario: s.clone(),
                cache: pol.encode(s)?,
                targets: Targets::for_scenario(s, cfg.path_points, cfg.path_spacing)?,
            })
        })
        .collect()
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub rec: f64,
    pub target: f64,
    pub path_l1: f64,
    pub traj_l1: f64,
    pub total: f64,
    pub val_ade: f64,
    /// Collision rate on the validation set, percent.
    pub val_cr: f64,
    pub val_total: f64,
}

/// Mean breakdown over a set, without training.
pub fn mean_losses(pol: &PolicySnapshot, data: &[Prepared], w: &LossWeights) -> Result<LossBreakdown> {
    let iters = pol.cfg.planner.refine_iters;
    let parts: Vec<LossBreakdown> = data
        .par_iter()
        .map(|p| {
            let mut g = Graph::new();
            let pg = build_plan(&mut g, &pol.layout.planner, &pol.params, &p.cache.ctx, iters)?;
            let nodes = loss_graph(&mut g, pol, &pol.params, &p.cache, &p.targets, &pg, w)?;
            Ok(read_breakdown(&g, &nodes))
        })
        .collect::<Result<_>>()?;
    let mut acc = LossBreakdown::default();
    for p in &parts {
        acc.accumulate(p);
    }
    Ok(acc.scaled(1.0 / parts.len().max(1) as f64))
}

/// Validation ADE (meters) and collision rate (percent).
pub fn validate_policy(pol: &PolicySnapshot, data: &[Prepared]) -> Result<(f64, f64)> {
    let rows: Vec<(f64, Vec<bool>)> = data
        .par_iter()
        .map(|p| {
            let out = crate::planner::plan(&pol.layout.planner, &pol.params, &p.cache.ctx)?;
            let traj = out.trajectory();
            let a = ade(&traj, &p.scenario.expert)?;
            Ok((a.average, collision_flags(&traj, &p.scenario)?))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let ade_mean = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let cr = crate::harness::metrics::collision_rate_from_flags(rows.iter().map(|r| r.1.as_slice()))?;
    Ok((ade_mean, cr))
}

/// Averages per-example gradients in index order and checks finiteness.
pub fn reduce_gradients(parts: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = parts.len() as f64;
    let mut out = vec![0.0; parts[0].len()];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!("non-finite gradient at parameter {i}")));
    }
    Ok(out)
}

/// Result of [`pretrain`].
pub struct PretrainOutcome {
    pub policy: PolicySnapshot,
    pub log: Vec<EpochLog>,
    pub optimizer: OptimizerState,
    pub best_epoch: usize,
    /// Position of the epoch-order stream after training.
    pub rng: crate::rng::StreamState,
}

/// Trains on `train`, validating on `val` after every epoch. Row 0 of the
/// log evaluates the initial parameters.
pub fn pretrain(
    init: &PolicySnapshot,
    train: &[Scenario],
    val: &[Scenario],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("pretraining needs a non-empty corpus".into()));
    }
    let mut pol = init.clone();
    let train_set = prepare(&pol, train)?;
    let val_set = prepare(&pol, val)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, pol.params.len())?;
    let mut rng = stream(cfg.seed, "pretrain-order");
    let iters = pol.cfg.planner.refine_iters;

    let evaluate = |pol: &PolicySnapshot, epoch: usize, train_mean: LossBreakdown| -> Result<EpochLog> {
        let (val_ade, val_cr) = validate_policy(pol, &val_set)?;
        let val_total = if val_set.is_empty() { f64::NAN } else { mean_losses(pol, &val_set, &cfg.weights)?.total };
        Ok(EpochLog {
            epoch,
            rec: train_mean.rec,
            target: train_mean.target,
            path_l1: train_mean.path_l1,
            traj_l1: train_mean.traj_l1,
            total: train_mean.total,
            val_ade,
            val_cr,
            val_total,
        })
    };

    let mut log = vec![evaluate(&pol, 0, mean_losses(&pol, &train_set, &cfg.weights)?)?];
    let mut best = (log[0].val_ade, 0usize, pol.params.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(LossBreakdown, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let p = &train_set[i];
                    scenario_gradient(&pol, &p.cache, &p.targets, &cfg.weights, iters)
                })
                .collect::<Result<_>>()?;
            for (b, _) in &results {
                if !b.total.is_finite() {
                    return Err(Error::Diverged(format!("non-finite loss {b:?} in epoch {epoch}")));
                }
                acc.accumulate(b);
            }
            let grads: Vec<Vec<f64>> = results.into_iter().map(|r| r.1).collect();
            let g = reduce_gradients(&grads)?;
            opt.step(&mut pol.params, &g)?;
        }
        let row = evaluate(&pol, epoch, acc.scaled(1.0 / train_set.len() as f64))?;
        log.push(row);
        if row.val_ade < best.0 || best.0.is_nan() {
            best = (row.val_ade, epoch, pol.params.clone());
        }
        if let Some(p) = cfg.patience {
            if epoch - best.1 >= p {
                break;
            }
        }
    }
    let best_epoch = best.1;
    if cfg.keep_best && !val_set.is_empty() {
        pol.params = best.2;
    }
    Ok(PretrainOutcome { policy: pol, log, optimizer: opt, best_epoch, rng: crate::rng::capture(cfg.seed, &rng) })
}

/// Writes the training log with its fixed column order.
pub fn write_training_log(path: &std::path::Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "rec", "target", "path_l1", "traj_l1", "total", "val_ade", "val_cr"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            r.rec.to_string(),
            r.target.to_string(),
            r.path_l1.to_string(),
            r.traj_l1.to_string(),
            r.total.to_string(),
            r.val_ade.to_string(),
            r.val_cr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
