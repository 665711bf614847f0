//! Reinforcement fine-tuning: Gaussianized trajectories, group rollouts,
//! collision rewards, group-relative advantages and the regularized clipped
//! surrogate.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{integrate_increments, obb_overlap, IncrementSeq, Point2, Trajectory};
use crate::imitation::{loss_graph, prepare, reduce_gradients, LossWeights, Prepared};
use crate::model::{PolicySnapshot, SceneCache};
use crate::nnet::{Graph, NodeId, OptimizerKind, OptimizerState};
use crate::planner::{build_plan, plan, SIGMA_FLOOR};
use crate::rng::stream;
use crate::world::{boxes_along, Scenario, EGO_HALF_EXTENTS};

/// Guard added to the group standard deviation.
pub const STD_EPS: f64 = 1e-8;

/// Diagonal Gaussian over per-step increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicyOutput {
    pub mu: IncrementSeq,
    /// Standard deviations, interleaved `[σx0, σy0, σx1, ...]`.
    pub sigma: Vec<f64>,
}

impl GaussianPolicyOutput {
    pub fn new(mu: IncrementSeq, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != 2 * mu.deltas.len() {
            return Err(Error::Shape(format!(
                "{} standard deviations for {} increments",
                sigma.len(),
                mu.deltas.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s >= SIGMA_FLOOR && s.is_finite())) {
            return Err(Error::Domain(format!("standard deviation {s} below the {SIGMA_FLOOR} floor")));
        }
        Ok(GaussianPolicyOutput { mu, sigma })
    }

    pub fn from_plan(out: &crate::planner::PlanOutput) -> Result<Self> {
        GaussianPolicyOutput::new(out.increments.clone(), out.sigma.clone())
    }

    pub fn horizon(&self) -> usize {
        self.mu.deltas.len()
    }

    fn mean_flat(&self) -> Vec<f64> {
        self.mu.to_flat()
    }
}

/// Which agent poses a planned point is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentTiming {
    /// Point `j` (time `(j+1)·dt`) against script step `j+1`.
    TimeMatched,
    /// Every point against the initial agent poses.
    Frozen,
}

/// `−1` where the ego box placed along the ego-frame trajectory overlaps an
/// agent, `0` elsewhere.
pub fn collision_rewards(
    traj: &Trajectory,
    s: &Scenario,
    ego_half_extents: [f64; 2],
    timing: AgentTiming,
) -> Result<Vec<f64>> {
    let world = s.points_to_world(&traj.points);
    let ego = boxes_along(s.ego_start.pose(), &world, ego_half_extents)?;
    ego.iter()
        .enumerate()
        .map(|(j, e)| {
            let step = match timing {
                AgentTiming::TimeMatched => j + 1,
                AgentTiming::Frozen => 0,
            };
            for a in &s.agents {
                if obb_overlap(e, &a.box_at(step)?)? {
                    return Ok(-1.0);
                }
            }
            Ok(0.0)
        })
        .collect()
}

/// Draws `g` increment sequences, every coordinate independently.
pub fn sample_group<R: Rng + ?Sized>(pol: &GaussianPolicyOutput, g: usize, rng: &mut R) -> Result<Vec<IncrementSeq>> {
    if g < 2 {
        return Err(Error::Argument(format!("group size must be ≥ 2, got {g}")));
    }
    let mu = pol.mean_flat();
    (0..g)
        .map(|_| {
            let flat: Vec<f64> =
                mu.iter().zip(&pol.sigma).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect();
            IncrementSeq::from_flat(&flat, pol.mu.dt)
        })
        .collect()
}

fn check_matrix(m: &[Vec<f64>], what: &str) -> Result<usize> {
    let t = m.first().map_or(0, |r| r.len());
    if m.iter().any(|r| r.len() != t) {
        return Err(Error::Shape(format!("{what}: ragged rows")));
    }
    Ok(t)
}

/// Column-wise `(r − mean)/(std + 1e-8)` with the population std.
pub fn normalize_rewards(raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let g = raw.len();
    if g < 2 {
        return Err(Error::Argument(format!("group size must be ≥ 2, got {g}")));
    }
    let t = check_matrix(raw, "rewards")?;
    let mut out = vec![vec![0.0; t]; g];
    for j in 0..t {
        let mean = raw.iter().map(|r| r[j]).sum::<f64>() / g as f64;
        let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / g as f64;
        let den = var.sqrt() + STD_EPS;
        for i in 0..g {
            out[i][j] = (raw[i][j] - mean) / den;
        }
    }
    Ok(out)
}

/// Suffix sums along time: `Adv_j = Σ_{t≥j} r̃_t`.
pub fn advantages(rtilde: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rtilde
        .iter()
        .map(|row| {
            let mut out = row.clone();
            for j in (0..out.len().saturating_sub(1)).rev() {
                out[j] = row[j] + out[j + 1];
            }
            out
        })
        .collect()
}

/// Per-point diagonal Gaussian log-density
/// `−½ Σ_axes [log(2πσ²) + (x−μ)²/σ²]`.
pub fn log_prob(x: &IncrementSeq, pol: &GaussianPolicyOutput) -> Result<Vec<f64>> {
    if x.deltas.len() != pol.horizon() {
        return Err(Error::Shape(format!("{} increments against a horizon of {}", x.deltas.len(), pol.horizon())));
    }
    let xf = x.to_flat();
    let mu = pol.mean_flat();
    Ok((0..pol.horizon())
        .map(|j| {
            (0..2)
                .map(|a| {
                    let k = 2 * j + a;
                    let s2 = pol.sigma[k] * pol.sigma[k];
                    -0.5 * ((2.0 * PI * s2).ln() + (xf[k] - mu[k]).powi(2) / s2)
                })
                .sum()
        })
        .collect())
}

/// `(1/G) Σ_i Σ_j min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)` with `ρ = exp(new − old)`.
pub fn surrogate(logp_new: &[Vec<f64>], logp_old: &[Vec<f64>], adv: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    let t = check_matrix(adv, "advantages")?;
    if logp_new.len() != adv.len()
        || logp_old.len() != adv.len()
        || check_matrix(logp_new, "log-probs")? != t
        || check_matrix(logp_old, "log-probs")? != t
    {
        return Err(Error::Shape("surrogate inputs must share one G×T shape".into()));
    }
    let mut acc = 0.0;
    for i in 0..adv.len() {
        for j in 0..t {
            let r = (logp_new[i][j] - logp_old[i][j]).exp();
            let a = adv[i][j];
            acc += (r * a).min(r.clamp(1.0 - epsilon, 1.0 + epsilon) * a);
        }
    }
    Ok(acc / adv.len() as f64)
}

/// The printed "KL" expression, summed over points:
/// `½[log|Σ| + (μ_ref−μ)ᵀΣ⁻¹(μ_ref−μ) + 2 log 2π]` with diagonal Σ.
pub fn gaussian_kl(mu_ref: &IncrementSeq, pol: &GaussianPolicyOutput) -> Result<f64> {
    if mu_ref.deltas.len() != pol.horizon() {
        return Err(Error::Shape("reference and policy horizons differ".into()));
    }
    let r = mu_ref.to_flat();
    let mu = pol.mean_flat();
    Ok((0..pol.horizon())
        .map(|j| {
            let mut logdet = 0.0;
            let mut quad = 0.0;
            for a in 0..2 {
                let k = 2 * j + a;
                let s2 = pol.sigma[k] * pol.sigma[k];
                logdet += s2.ln();
                quad += (r[k] - mu[k]).powi(2) / s2;
            }
            0.5 * (logdet + quad + 2.0 * (2.0 * PI).ln())
        })
        .sum())
}

/// Differential entropy `Σ_points ½ Σ_axes [1 + log(2πσ²)]`.
pub fn entropy(pol: &GaussianPolicyOutput) -> f64 {
    pol.sigma.iter().map(|s| 0.5 * (1.0 + (2.0 * PI * s * s).ln())).sum()
}

/// Mean over batch and time of per-point distances between means.
pub fn reference_loss(mu_theta: &[IncrementSeq], mu_ref: &[IncrementSeq]) -> Result<f64> {
    if mu_theta.is_empty() || mu_theta.len() != mu_ref.len() {
        return Err(Error::Shape("reference loss needs aligned non-empty batches".into()));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (a, b) in mu_theta.iter().zip(mu_ref) {
        if a.deltas.len() != b.deltas.len() {
            return Err(Error::Shape("reference loss: horizon mismatch".into()));
        }
        for (p, q) in a.deltas.iter().zip(&b.deltas) {
            acc += p.distance(*q);
            n += 1;
        }
    }
    Ok(acc / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RftConfig {
    pub group_size: usize,
    pub epsilon: f64,
    /// KL weight inside the objective J.
    pub beta: f64,
    /// KL weight in the loss.
    pub lambda: f64,
    pub c_ref: f64,
    pub c_ent: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Gradient steps per rollout set; the old policy is refreshed per batch.
    pub inner_epochs: usize,
    pub optimizer: OptimizerKind,
    pub timing: AgentTiming,
    pub seed: u64,
}

impl Default for RftConfig {
    fn default() -> Self {
        RftConfig {
            group_size: 10,
            epsilon: 0.2,
            beta: 0.0,
            lambda: 0.1,
            c_ref: 0.12,
            c_ent: 0.1,
            lr: 1e-4,
            epochs: 10,
            batch_size: 8,
            inner_epochs: 1,
            optimizer: OptimizerKind::Adam,
            timing: AgentTiming::TimeMatched,
            seed: 0,
        }
    }
}

impl RftConfig {
    /// Full-scale settings: lr 3e-6 with the default group and coefficients.
    pub fn full_scale() -> Self {
        RftConfig { lr: 3e-6, ..RftConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group size must be ≥ 2".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config("clip radius must lie in (0, 1)".into()));
        }
        let coef = [self.beta, self.lambda, self.c_ref, self.c_ent];
        if coef.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("regularizer coefficients must be finite and ≥ 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 || self.inner_epochs == 0 {
            return Err(Error::Config("lr must be > 0 and batch size, inner epochs ≥ 1".into()));
        }
        Ok(())
    }
}

/// Rollouts of one scenario sampled from the old policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub samples: Vec<IncrementSeq>,
    pub rewards: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
    pub logp_old: Vec<Vec<f64>>,
}

/// Samples, scores and evaluates a group under `old`.
pub fn rollout_group<R: Rng + ?Sized>(
    old: &GaussianPolicyOutput,
    s: &Scenario,
    cfg: &RftConfig,
    rng: &mut R,
) -> Result<RolloutGroup> {
    let samples = sample_group(old, cfg.group_size, rng)?;
    let rewards = samples
        .iter()
        .map(|x| {
            let traj = integrate_increments(x, Point2::ORIGIN)?;
            collision_rewards(&traj, s, EGO_HALF_EXTENTS, cfg.timing)
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized = normalize_rewards(&rewards)?;
    let advantages = advantages(&normalized);
    let logp_old = samples.iter().map(|x| log_prob(x, old)).collect::<Result<Vec<_>>>()?;
    Ok(RolloutGroup { samples, rewards, normalized, advantages, logp_old })
}

/// Graph nodes of the fine-tuning loss terms for one scenario.
pub struct RftNodes {
    pub ratio: NodeId,
    pub surrogate: NodeId,
    pub kl: NodeId,
    pub entropy: NodeId,
    pub ref_loss: NodeId,
    pub total: NodeId,
}

/// `1×T` per-point log-densities of the constant sample `x`.
pub fn log_prob_graph(g: &mut Graph, mu: NodeId, sigma: NodeId, x: &[f64]) -> NodeId {
    let xc = g.constant(x.to_vec());
    let d = g.sub(xc, mu);
    let inv = g.recip(sigma);
    let z = g.mul(d, inv);
    let zz = g.square(z);
    let half = g.scale(zz, -0.5);
    let ls = g.ln(sigma);
    let nls = g.scale(ls, -1.0);
    let per = g.add(half, nls);
    let per = g.shift(per, -0.5 * (2.0 * PI).ln());
    let m = g.reshape(per, x.len() / 2, 2);
    g.row_sum(m)
}

/// Records `−(J − β·KL) + λ·KL + c_ref·L_ref − c_ent·H` given the planner's
/// mean and standard-deviation nodes.
pub fn rft_loss_graph(
    g: &mut Graph,
    mu: NodeId,
    sigma: NodeId,
    group: &RolloutGroup,
    mu_ref: &[f64],
    cfg: &RftConfig,
) -> RftNodes {
    let lps: Vec<NodeId> = group.samples.iter().map(|x| log_prob_graph(g, mu, sigma, &x.to_flat())).collect();
    let lp = g.concat(&lps);
    let old = g.constant(group.logp_old.concat());
    let diff = g.sub(lp, old);
    let ratio = g.exp(diff);
    let clipped = g.ppo_clip(ratio, &group.advantages.concat(), cfg.epsilon);
    let total_clip = g.sum(clipped);
    let surrogate = g.scale(total_clip, 1.0 / group.samples.len() as f64);

    let n = mu_ref.len();
    let ls = g.ln(sigma);
    let sum_ls = g.sum(ls);
    let rc = g.constant(mu_ref.to_vec());
    let d = g.sub(rc, mu);
    let inv = g.recip(sigma);
    let z = g.mul(d, inv);
    let zz = g.square(z);
    let q = g.sum(zz);
    let hq = g.scale(q, 0.5);
    let kl = g.add(sum_ls, hq);
    let kl = g.shift(kl, (n / 2) as f64 * (2.0 * PI).ln());

    let entropy = g.shift(sum_ls, n as f64 * 0.5 * (1.0 + (2.0 * PI).ln()));

    let dm = g.sub(mu, rc);
    let norms = g.point_norm(dm);
    let ref_loss = g.mean(norms);

    let bk = g.scale(kl, cfg.beta);
    let j = g.sub(surrogate, bk);
    let neg_j = g.scale(j, -1.0);
    let lk = g.scale(kl, cfg.lambda);
    let lr = g.scale(ref_loss, cfg.c_ref);
    let le = g.scale(entropy, -cfg.c_ent);
    let total = g.add_all(&[neg_j, lk, lr, le]);
    RftNodes { ratio, surrogate, kl, entropy, ref_loss, total }
}

/// Per-step training diagnostics (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RftDiagnostics {
    pub step: usize,
    pub mean_reward: f64,
    /// Share of rollouts with at least one collision.
    pub collision_frac: f64,
    /// Share of points whose ratio lies outside the clip interval.
    pub clip_frac: f64,
    pub kl: f64,
    pub entropy: f64,
    pub ref_loss: f64,
    pub surrogate: f64,
}

impl RftDiagnostics {
    fn accumulate(&mut self, o: &RftDiagnostics) {
        self.mean_reward += o.mean_reward;
        self.collision_frac += o.collision_frac;
        self.clip_frac += o.clip_frac;
        self.kl += o.kl;
        self.entropy += o.entropy;
        self.ref_loss += o.ref_loss;
        self.surrogate += o.surrogate;
    }

    fn scale(&mut self, s: f64) {
        self.mean_reward *= s;
        self.collision_frac *= s;
        self.clip_frac *= s;
        self.kl *= s;
        self.entropy *= s;
        self.ref_loss *= s;
        self.surrogate *= s;
    }
}

/// Loss gradient of one scenario under the current parameters.
pub fn scenario_rft_gradient(
    pol: &PolicySnapshot,
    cache: &SceneCache,
    group: &RolloutGroup,
    mu_ref: &[f64],
    cfg: &RftConfig,
) -> Result<(RftDiagnostics, Vec<f64>)> {
    let mut g = Graph::new();
    let pg = build_plan(&mut g, &pol.layout.planner, &pol.params, &cache.ctx, pol.cfg.planner.refine_iters)?;
    let nodes = rft_loss_graph(&mut g, pg.last().incr, pg.sigma, group, mu_ref, cfg);
    let total = g.scalar(nodes.total);
    if !total.is_finite() {
        return Err(Error::Diverged(format!("non-finite fine-tuning loss {total}")));
    }
    let mut grads = vec![0.0; pol.params.len()];
    g.backward(nodes.total, &[1.0], &mut grads);
    let rows = group.rewards.len() as f64;
    let points = group.rewards.iter().map(|r| r.len()).sum::<usize>() as f64;
    let clipped = g.value(nodes.ratio).iter().filter(|r| (**r - 1.0).abs() > cfg.epsilon).count() as f64;
    let diag = RftDiagnostics {
        step: 0,
        mean_reward: group.rewards.iter().flatten().sum::<f64>() / points,
        collision_frac: group.rewards.iter().filter(|r| r.iter().any(|&v| v < 0.0)).count() as f64 / rows,
        clip_frac: clipped / points,
        kl: g.scalar(nodes.kl),
        entropy: g.scalar(nodes.entropy),
        ref_loss: g.scalar(nodes.ref_loss),
        surrogate: g.scalar(nodes.surrogate),
    };
    Ok((diag, grads))
}

/// Reference means of every example, computed once.
pub fn reference_means(reference: &PolicySnapshot, data: &[Prepared]) -> Result<Vec<Vec<f64>>> {
    data.par_iter()
        .map(|p| Ok(plan(&reference.layout.planner, &reference.params, &p.cache.ctx)?.increments.to_flat()))
        .collect()
}

/// One optimizer update on a batch. `old` is the snapshot rollouts are drawn
/// from; `step` keys the rollout streams.
pub fn rft_step(
    pol: &mut PolicySnapshot,
    opt: &mut OptimizerState,
    batch: &[(&Prepared, &[f64])],
    old: &PolicySnapshot,
    cfg: &RftConfig,
    step: usize,
) -> Result<RftDiagnostics> {
    let groups: Vec<RolloutGroup> = batch
        .par_iter()
        .enumerate()
        .map(|(k, (p, _))| {
            let out = plan(&old.layout.planner, &old.params, &p.cache.ctx)?;
            let gp = GaussianPolicyOutput::from_plan(&out)?;
            let mut rng = stream(cfg.seed, &format!("rollout/{step}/{k}"));
            rollout_group(&gp, &p.scenario, cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut diag = RftDiagnostics::default();
    for _ in 0..cfg.inner_epochs {
        let results: Vec<(RftDiagnostics, Vec<f64>)> = batch
            .par_iter()
            .zip(&groups)
            .map(|((p, mu_ref), grp)| scenario_rft_gradient(pol, &p.cache, grp, mu_ref, cfg))
            .collect::<Result<_>>()?;
        diag = RftDiagnostics::default();
        for (d, _) in &results {
            diag.accumulate(d);
        }
        diag.scale(1.0 / results.len() as f64);
        let grads: Vec<Vec<f64>> = results.into_iter().map(|r| r.1).collect();
        let g = reduce_gradients(&grads)?;
        opt.step(&mut pol.params, &g)?;
    }
    diag.step = step;
    Ok(diag)
}

pub struct RftOutcome {
    pub policy: PolicySnapshot,
    pub diagnostics: Vec<RftDiagnostics>,
    pub optimizer: OptimizerState,
    /// Position of the batch-order stream after training.
    pub rng: crate::rng::StreamState,
}

/// Fine-tunes `reference` on `corpus`; the reference also anchors the KL and
/// reference-loss terms.
pub fn rft(reference: &PolicySnapshot, corpus: &[Scenario], cfg: &RftConfig) -> Result<RftOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Argument("fine-tuning needs a non-empty corpus".into()));
    }
    let data = prepare(reference, corpus)?;
    let refs = reference_means(reference, &data)?;
    let mut pol = reference.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, pol.params.len())?;
    let mut rng = stream(cfg.seed, "rft-order");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut diagnostics = Vec::new();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Prepared, &[f64])> = chunk.iter().map(|&i| (&data[i], refs[i].as_slice())).collect();
            let old = pol.clone();
            diagnostics.push(rft_step(&mut pol, &mut opt, &batch, &old, cfg, step)?);
            step += 1;
        }
    }
    Ok(RftOutcome { policy: pol, diagnostics, optimizer: opt, rng: crate::rng::capture(cfg.seed, &rng) })
}

/// Supervised fine-tuning baseline: the pretraining loss with each
/// trajectory point's L1 weighted by `1 + penalty·[mean plan collides there]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub weights: LossWeights,
    pub collision_penalty: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig { weights: LossWeights::default(), collision_penalty: 1.0 }
    }
}

fn sft_gradient(pol: &PolicySnapshot, p: &Prepared, sft: &SftConfig, timing: AgentTiming) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let pg = build_plan(&mut g, &pol.layout.planner, &pol.params, &p.cache.ctx, pol.cfg.planner.refine_iters)?;
    let nodes = loss_graph(&mut g, pol, &pol.params, &p.cache, &p.targets, &pg, &sft.weights)?;
    let last = pg.last();
    let pos = last.points(&mut g);
    let pts: Vec<Point2> = g.value(pos).chunks(2).map(|c| Point2::new(c[0], c[1])).collect();
    let traj = Trajectory::new(pts, pol.cfg.planner.dt)?;
    let flags = collision_rewards(&traj, &p.scenario, EGO_HALF_EXTENTS, timing)?;
    let mask: Vec<f64> = flags.iter().flat_map(|&r| [-r, -r]).collect();
    let total = if mask.iter().any(|&m| m > 0.0) {
        let gt: Vec<f64> = p.targets.traj.iter().flat_map(|q| [q.x, q.y]).collect();
        let c = g.constant(gt);
        let d = g.sub(pos, c);
        let a = g.abs(d);
        let m = g.constant(mask.clone());
        let am = g.mul(a, m);
        let s = g.sum(am);
        let extra = g.scale(s, sft.weights.traj * sft.collision_penalty / mask.len() as f64);
        g.add(nodes.total, extra)
    } else {
        nodes.total
    };
    let loss = g.scalar(total);
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("non-finite SFT loss {loss}")));
    }
    let mut grads = vec![0.0; pol.params.len()];
    g.backward(total, &[1.0], &mut grads);
    Ok((loss, grads))
}

/// SFT with the same epochs, batches, order and optimizer as [`rft`].
pub fn sft(
    reference: &PolicySnapshot,
    corpus: &[Scenario],
    cfg: &RftConfig,
    sft: &SftConfig,
) -> Result<(PolicySnapshot, Vec<f64>)> {
    cfg.validate()?;
    sft.weights.validate()?;
    if corpus.is_empty() {
        return Err(Error::Argument("fine-tuning needs a non-empty corpus".into()));
    }
    let data = prepare(reference, corpus)?;
    let mut pol = reference.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, pol.params.len())?;
    let mut rng = stream(cfg.seed, "rft-order");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            for _ in 0..cfg.inner_epochs {
                let results: Vec<(f64, Vec<f64>)> =
                    chunk.par_iter().map(|&i| sft_gradient(&pol, &data[i], sft, cfg.timing)).collect::<Result<_>>()?;
                losses.push(results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64);
                let grads: Vec<Vec<f64>> = results.into_iter().map(|r| r.1).collect();
                let g = reduce_gradients(&grads)?;
                opt.step(&mut pol.params, &g)?;
            }
        }
    }
    Ok((pol, losses))
}

/// Writes the diagnostics CSV with its fixed column order.
pub fn write_diagnostics(path: &std::path::Path, rows: &[RftDiagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "mean_reward", "collision_frac", "clip_frac", "kl", "entropy", "ref_loss", "surrogate"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.mean_reward.to_string(),
            r.collision_frac.to_string(),
            r.clip_frac.to_string(),
            r.kl.to_string(),
            r.entropy.to_string(),
            r.ref_loss.to_string(),
            r.surrogate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::model::ModelConfig;
    use crate::world::{generate_corpus, generate_scenario, Agent, Difficulty};
    use proptest::prelude::*;

    fn seq(v: &[(f64, f64)]) -> IncrementSeq {
        IncrementSeq::new(v.iter().map(|&(x, y)| Point2::new(x, y)).collect(), 0.5).unwrap()
    }

    fn unit_policy(mu: &[(f64, f64)], sigma: f64) -> GaussianPolicyOutput {
        GaussianPolicyOutput::new(seq(mu), vec![sigma; 2 * mu.len()]).unwrap()
    }

    fn blocked(seed: u64, window: std::ops::Range<usize>) -> Scenario {
        // Agent parked on the expert path, present only during `window`
        // script steps (elsewhere it sits far away).
        let mut s = generate_scenario(seed, Difficulty::Easy).unwrap();
        let at = s.to_world(s.expert.points[2]);
        let far = Pose::new(at.x + 500.0, at.y + 500.0, 0.0);
        let here = Pose::new(at.x, at.y, s.ego_start.heading);
        s.agents = vec![Agent {
            half_extents: [2.0, 1.0],
            poses: (0..=s.horizon()).map(|k| if window.contains(&k) { here } else { far }).collect(),
        }];
        s
    }

    #[test]
    fn agent_free_rewards_are_zero() {
        let mut s = generate_scenario(1, Difficulty::Hard).unwrap();
        s.agents.clear();
        let r = collision_rewards(&s.expert, &s, EGO_HALF_EXTENTS, AgentTiming::TimeMatched).unwrap();
        assert_eq!(r, vec![0.0; 6]);
    }

    #[test]
    fn static_agent_penalizes_the_overlap_window() {
        let s = blocked(2, 0..7);
        let r = collision_rewards(&s.expert, &s, EGO_HALF_EXTENTS, AgentTiming::TimeMatched).unwrap();
        // Oracle: overlap of each placed ego box with the agent at the same time.
        let boxes = s.ego_boxes_along(&s.expert.points).unwrap();
        for (j, b) in boxes.iter().enumerate() {
            let hit = obb_overlap(b, &s.agents[0].box_at(j + 1).unwrap()).unwrap();
            assert_eq!(r[j], if hit { -1.0 } else { 0.0 });
        }
        assert_eq!(r[2], -1.0);
    }

    #[test]
    fn timing_selects_the_script_step() {
        // Agent only present at script step 3, the time of point 2.
        let s = blocked(3, 3..4);
        let matched = collision_rewards(&s.expert, &s, EGO_HALF_EXTENTS, AgentTiming::TimeMatched).unwrap();
        assert_eq!(matched[2], -1.0);
        assert!(matched.iter().enumerate().all(|(j, &r)| j == 2 || r == 0.0));
        let frozen = collision_rewards(&s.expert, &s, EGO_HALF_EXTENTS, AgentTiming::Frozen).unwrap();
        assert_eq!(frozen, vec![0.0; 6]);
    }

    #[test]
    fn rewards_invariant_under_translation() {
        for seed in 0..5 {
            let s = blocked(seed, 0..7);
            let moved = s.translated(Point2::new(1234.5, -987.25));
            let a = collision_rewards(&s.expert, &s, EGO_HALF_EXTENTS, AgentTiming::TimeMatched).unwrap();
            let b = collision_rewards(&s.expert, &moved, EGO_HALF_EXTENTS, AgentTiming::TimeMatched).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn floor_variance_samples_hug_the_mean() {
        let p = unit_policy(&[(1.0, 2.0), (3.0, -1.0)], SIGMA_FLOOR);
        let mut rng = stream(1, "t");
        for x in sample_group(&p, 50, &mut rng).unwrap() {
            for (a, b) in x.to_flat().iter().zip(p.mu.to_flat()) {
                assert!((a - b).abs() < 6.0 * SIGMA_FLOOR);
            }
        }
    }

    #[test]
    fn sample_mean_converges() {
        let mu = [(0.5, -0.25), (2.0, 1.0)];
        let sigma = vec![0.3, 0.7, 1.1, 0.2];
        let p = GaussianPolicyOutput::new(seq(&mu), sigma.clone()).unwrap();
        let n = 100_000;
        let mut rng = stream(2, "t");
        let draws = sample_group(&p, n, &mut rng).unwrap();
        let m = p.mu.to_flat();
        for k in 0..4 {
            let mean = draws.iter().map(|d| d.to_flat()[k]).sum::<f64>() / n as f64;
            assert!((mean - m[k]).abs() < 3.0 * sigma[k] / (n as f64).sqrt() * 1.5, "coord {k}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = unit_policy(&[(1.0, 0.0); 6], 0.3);
        let a = sample_group(&p, 10, &mut stream(3, "t")).unwrap();
        let b = sample_group(&p, 10, &mut stream(3, "t")).unwrap();
        assert_eq!(a, b);
        assert!(sample_group(&p, 1, &mut stream(3, "t")).is_err());
    }

    #[test]
    fn normalize_hand_example() {
        let raw = vec![vec![-1.0], vec![0.0], vec![0.0], vec![0.0]];
        let n = normalize_rewards(&raw).unwrap();
        let std = 0.1875f64.sqrt();
        let expect = [-0.75 / (std + 1e-8), 0.25 / (std + 1e-8)];
        assert!((n[0][0] - expect[0]).abs() < 1e-9);
        for r in &n[1..] {
            assert!((r[0] - expect[1]).abs() < 1e-9);
        }
        assert!((n[0][0] + 1.7321).abs() < 1e-4 && (n[1][0] - 0.5774).abs() < 1e-4);
    }

    #[test]
    fn degenerate_column_normalizes_to_zero() {
        let n = normalize_rewards(&vec![vec![0.0, -1.0]; 5]).unwrap();
        assert!(n.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn advantage_hand_examples() {
        assert_eq!(advantages(&[vec![0.0, 0.0, -1.0]]), vec![vec![-1.0, -1.0, -1.0]]);
        assert_eq!(advantages(&vec![vec![0.0; 4]; 3]), vec![vec![0.0; 4]; 3]);
    }

    fn matrix(g: usize, t: usize, v: &[f64]) -> Vec<Vec<f64>> {
        (0..g).map(|i| v[i * t..(i + 1) * t].to_vec()).collect()
    }

    proptest! {
        #[test]
        fn normalized_columns_are_standardized(v in proptest::collection::vec(prop_oneof![Just(-1.0), Just(0.0)], 40)) {
            let raw = matrix(8, 5, &v);
            let n = normalize_rewards(&raw).unwrap();
            for j in 0..5 {
                let mean: f64 = n.iter().map(|r| r[j]).sum::<f64>() / 8.0;
                prop_assert!(mean.abs() < 1e-9);
                let degenerate = raw.iter().all(|r| r[j] == raw[0][j]);
                if !degenerate {
                    let var: f64 = n.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 8.0;
                    prop_assert!((var - 1.0).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn advantages_match_double_loop(v in proptest::collection::vec(-3.0..3.0f64, 1..60), t in 1usize..7) {
            let g = v.len() / t;
            prop_assume!(g >= 1);
            let m = matrix(g, t, &v);
            let a = advantages(&m);
            for i in 0..g {
                for j in 0..t {
                    let mut s = 0.0;
                    for k in (j..t).rev() {
                        s += m[i][k];
                    }
                    prop_assert_eq!(a[i][j], s);
                }
            }
        }

        #[test]
        fn unclipped_when_ratios_inside(d in proptest::collection::vec(-0.15..0.15f64, 12), adv in proptest::collection::vec(-2.0..2.0f64, 12)) {
            let new = matrix(3, 4, &d);
            let old = vec![vec![0.0; 4]; 3];
            let a = matrix(3, 4, &adv);
            let plain: f64 = (0..3).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| new[i][j].exp() * a[i][j]).sum::<f64>() / 3.0;
            prop_assert!((surrogate(&new, &old, &a, 0.2).unwrap() - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn log_prob_examples() {
        let p = unit_policy(&[(0.5, -0.5)], 1.0);
        let lp = log_prob(&seq(&[(0.5, -0.5)]), &p).unwrap();
        assert!((lp[0] + (2.0 * PI).ln()).abs() < 1e-12);
        let wide = unit_policy(&[(0.5, -0.5)], 2.0);
        let lw = log_prob(&seq(&[(0.5, -0.5)]), &wide).unwrap();
        assert!((lp[0] - lw[0] - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        // 1-D marginal: integrate over x with y fixed at its mean, then
        // divide out the y factor.
        let sigma = 0.7;
        let p = unit_policy(&[(0.3, 0.0)], sigma);
        let y_factor = 1.0 / (sigma * (2.0 * PI).sqrt());
        let h = 1e-3;
        let mut total = 0.0;
        let mut x = -10.0;
        while x < 10.0 {
            total += log_prob(&seq(&[(x, 0.0)]), &p).unwrap()[0].exp() * h;
            x += h;
        }
        assert!((total / y_factor - 1.0).abs() < 1e-3);
    }

    #[test]
    fn surrogate_examples() {
        let adv = vec![vec![1.0, -2.0], vec![0.5, 0.0]];
        let z = vec![vec![0.0; 2]; 2];
        assert!((surrogate(&z, &z, &adv, 0.2).unwrap() - (1.0 - 2.0 + 0.5) / 2.0).abs() < 1e-12);
        let up = vec![vec![1.5f64.ln()]];
        assert!((surrogate(&up, &[vec![0.0]], &[vec![1.0]], 0.2).unwrap() - 1.2).abs() < 1e-12);
        let down = vec![vec![0.5f64.ln()]];
        assert!((surrogate(&down, &[vec![0.0]], &[vec![-1.0]], 0.2).unwrap() + 0.8).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = unit_policy(&[(1.0, 2.0)], 1.0);
        assert!((gaussian_kl(&seq(&[(1.0, 2.0)]), &p).unwrap() - (2.0 * PI).ln()).abs() < 1e-12);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..10 {
            let v = gaussian_kl(&seq(&[(1.0 + 0.3 * k as f64, 2.0)]), &p).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn kl_is_negative_log_density_of_the_reference_mean() {
        let mu = [(0.2, 0.1), (1.0, -0.4), (0.0, 0.3)];
        let p = GaussianPolicyOutput::new(seq(&mu), vec![0.3, 0.5, 0.9, 1.2, 0.2, 0.4]).unwrap();
        let r = seq(&[(0.0, 0.0), (1.5, 0.1), (-0.2, 0.2)]);
        let nll: f64 = -log_prob(&r, &p).unwrap().iter().sum::<f64>();
        // The printed expression keeps 2 log 2π per point where the density
        // has log 2π per point.
        assert!((gaussian_kl(&r, &p).unwrap() - nll).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let p = unit_policy(&[(0.0, 0.0)], 1.0);
        assert!((entropy(&p) - (1.0 + (2.0 * PI).ln())).abs() < 1e-12);
        let wide = unit_policy(&[(0.0, 0.0)], 2.0);
        assert!((entropy(&wide) - entropy(&p) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let mut q = p.clone();
        q.sigma[1] = 1.01;
        assert!(entropy(&q) > entropy(&p));
    }

    #[test]
    fn reference_loss_examples() {
        let a = vec![seq(&[(1.0, 1.0), (2.0, 0.0)]), seq(&[(0.0, 0.0), (0.5, 0.5)])];
        assert_eq!(reference_loss(&a, &a).unwrap(), 0.0);
        let b: Vec<IncrementSeq> = a
            .iter()
            .map(|s| IncrementSeq::new(s.deltas.iter().map(|&d| d + Point2::new(3.0, 4.0)).collect(), 0.5).unwrap())
            .collect();
        assert!((reference_loss(&b, &a).unwrap() - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn reference_loss_matches_loop(v in proptest::collection::vec(-5.0..5.0f64, 48)) {
            let a: Vec<IncrementSeq> = v[..24].chunks(8).map(|c| IncrementSeq::from_flat(c, 0.5).unwrap()).collect();
            let b: Vec<IncrementSeq> = v[24..].chunks(8).map(|c| IncrementSeq::from_flat(c, 0.5).unwrap()).collect();
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..4 {
                    let (p, q) = (a[i].deltas[j], b[i].deltas[j]);
                    s += ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
                }
            }
            prop_assert!((reference_loss(&a, &b).unwrap() - s / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_terms_match_value_formulas() {
        let mu = [(0.2, 0.1), (1.0, -0.4), (0.0, 0.3)];
        let sigma = vec![0.3, 0.5, 0.9, 1.2, 0.2, 0.4];
        let p = GaussianPolicyOutput::new(seq(&mu), sigma.clone()).unwrap();
        let cfg = RftConfig { group_size: 4, beta: 0.05, ..RftConfig::default() };
        let samples = sample_group(&p, 4, &mut stream(5, "t")).unwrap();
        let rewards = vec![vec![-1.0, 0.0, 0.0], vec![0.0; 3], vec![0.0, -1.0, -1.0], vec![0.0; 3]];
        let normalized = normalize_rewards(&rewards).unwrap();
        let adv = advantages(&normalized);
        // Old log-probs under a shifted mean, so some ratios clip.
        let old_pol = GaussianPolicyOutput::new(seq(&[(0.3, 0.1), (0.8, -0.4), (0.0, 0.5)]), sigma.clone()).unwrap();
        let logp_old: Vec<Vec<f64>> = samples.iter().map(|x| log_prob(x, &old_pol).unwrap()).collect();
        let group = RolloutGroup {
            samples: samples.clone(),
            rewards,
            normalized,
            advantages: adv.clone(),
            logp_old: logp_old.clone(),
        };
        let mu_ref = seq(&[(0.0, 0.0), (1.1, -0.2), (0.1, 0.1)]);
        let mut g = Graph::new();
        let mn = g.input(p.mu.to_flat());
        let sn = g.input(sigma.clone());
        let nodes = rft_loss_graph(&mut g, mn, sn, &group, &mu_ref.to_flat(), &cfg);
        let logp_new: Vec<Vec<f64>> = samples.iter().map(|x| log_prob(x, &p).unwrap()).collect();
        let j = surrogate(&logp_new, &logp_old, &adv, cfg.epsilon).unwrap();
        let kl = gaussian_kl(&mu_ref, &p).unwrap();
        let h = entropy(&p);
        let lref = reference_loss(std::slice::from_ref(&p.mu), std::slice::from_ref(&mu_ref)).unwrap();
        assert!((g.scalar(nodes.surrogate) - j).abs() < 1e-12);
        assert!((g.scalar(nodes.kl) - kl).abs() < 1e-12);
        assert!((g.scalar(nodes.entropy) - h).abs() < 1e-12);
        assert!((g.scalar(nodes.ref_loss) - lref).abs() < 1e-12);
        let total = -(j - cfg.beta * kl) + cfg.lambda * kl + cfg.c_ref * lref - cfg.c_ent * h;
        assert!((g.scalar(nodes.total) - total).abs() < 1e-12);

        // finite differences on μ and σ for the total
        let grads = g.backward(nodes.total, &[1.0], &mut []);
        let f = |m: &[f64], s: &[f64]| {
            let mut g = Graph::new();
            let mn = g.input(m.to_vec());
            let sn = g.input(s.to_vec());
            let n = rft_loss_graph(&mut g, mn, sn, &group, &mu_ref.to_flat(), &cfg);
            g.scalar(n.total)
        };
        let m0 = p.mu.to_flat();
        for k in 0..6 {
            let (mut a, mut b) = (m0.clone(), m0.clone());
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (f(&a, &sigma) - f(&b, &sigma)) / 2e-6;
            assert!((fd - grads.get(mn).unwrap()[k]).abs() < 1e-6 * (1.0 + fd.abs()), "mu {k}");
            let (mut a, mut b) = (sigma.clone(), sigma.clone());
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (f(&m0, &a) - f(&m0, &b)) / 2e-6;
            assert!((fd - grads.get(sn).unwrap()[k]).abs() < 1e-6 * (1.0 + fd.abs()), "sigma {k}");
        }
    }

    #[test]
    fn collision_free_batch_leaves_only_regularizers() {
        let p = unit_policy(&[(1.0, 0.0); 3], 0.3);
        let samples = sample_group(&p, 5, &mut stream(6, "t")).unwrap();
        let rewards = vec![vec![0.0; 3]; 5];
        let normalized = normalize_rewards(&rewards).unwrap();
        let adv = advantages(&normalized);
        assert!(adv.iter().flatten().all(|&a| a == 0.0));
        let logp_old = samples.iter().map(|x| log_prob(x, &p).unwrap()).collect();
        let group = RolloutGroup { samples, rewards, normalized, advantages: adv, logp_old };
        let cfg = RftConfig { c_ref: 0.0, lambda: 0.0, c_ent: 0.0, ..RftConfig::default() };
        let mut g = Graph::new();
        let mn = g.input(p.mu.to_flat());
        let sn = g.input(p.sigma.clone());
        let nodes = rft_loss_graph(&mut g, mn, sn, &group, &p.mu.to_flat(), &cfg);
        let grads = g.backward(nodes.total, &[1.0], &mut []);
        assert!(grads.get(mn).is_none_or(|v| v.iter().all(|&x| x == 0.0)));
        assert!(grads.get(sn).is_none_or(|v| v.iter().all(|&x| x == 0.0)));
    }

    fn small_cfg() -> RftConfig {
        RftConfig { epochs: 1, batch_size: 4, group_size: 4, lr: 1e-3, ..RftConfig::default() }
    }

    #[test]
    fn rft_is_deterministic() {
        let corpus = generate_corpus(8, Difficulty::Hard, 40).unwrap();
        let pol = PolicySnapshot::new(ModelConfig::tiny(), 7).unwrap();
        let a = rft(&pol, &corpus, &small_cfg()).unwrap();
        let b = rft(&pol, &corpus, &small_cfg()).unwrap();
        assert_eq!(a.policy.params, b.policy.params);
        assert_eq!(a.diagnostics, b.diagnostics);
        assert_eq!(a.diagnostics.len(), 2);
        assert_ne!(a.policy.params, pol.params);
    }

    #[test]
    fn strong_reference_pull_shrinks_reference_loss() {
        let corpus = generate_corpus(4, Difficulty::Medium, 60).unwrap();
        let reference = PolicySnapshot::new(ModelConfig::tiny(), 8).unwrap();
        // Start away from the reference, then train with only the pull.
        let mut start = reference.clone();
        let lay = start.layout.planner.clone();
        for v in lay.head_traj.last_bias_mut(&mut start.params) {
            *v += 0.5;
        }
        let cfg = RftConfig {
            c_ref: 10.0,
            lambda: 0.0,
            c_ent: 0.0,
            epochs: 30,
            batch_size: 4,
            group_size: 4,
            lr: 3e-3,
            ..RftConfig::default()
        };
        let data = prepare(&reference, &corpus).unwrap();
        let refs = reference_means(&reference, &data).unwrap();
        let mut pol = start.clone();
        let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, pol.params.len()).unwrap();
        let batch: Vec<(&Prepared, &[f64])> = data.iter().zip(&refs).map(|(p, r)| (p, r.as_slice())).collect();
        let mut first = None;
        let mut last = 0.0;
        for step in 0..cfg.epochs {
            let old = pol.clone();
            let d = rft_step(&mut pol, &mut opt, &batch, &old, &cfg, step).unwrap();
            first.get_or_insert(d.ref_loss);
            last = d.ref_loss;
        }
        assert!(last < 0.2 * first.unwrap(), "{first:?} → {last}");
    }

    #[test]
    fn sft_runs_and_is_deterministic() {
        let corpus = generate_corpus(6, Difficulty::Hard, 70).unwrap();
        let pol = PolicySnapshot::new(ModelConfig::tiny(), 9).unwrap();
        let (a, la) = sft(&pol, &corpus, &small_cfg(), &SftConfig::default()).unwrap();
        let (b, lb) = sft(&pol, &corpus, &small_cfg(), &SftConfig::default()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(la, lb);
        assert_eq!(la.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(RftConfig::default().validate().is_ok());
        assert!(RftConfig { group_size: 1, ..RftConfig::default() }.validate().is_err());
        assert!(RftConfig { epsilon: 1.0, ..RftConfig::default() }.validate().is_err());
        assert!(RftConfig { c_ent: -0.1, ..RftConfig::default() }.validate().is_err());
        assert_eq!(RftConfig::full_scale().lr, 3e-6);
    }
}
