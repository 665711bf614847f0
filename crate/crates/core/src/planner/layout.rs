use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::DEFAULT_DT;
use crate::nnet::{Activation, Mlp};
use crate::rng::StreamRng;
use rand::Rng;

/// Output scaling of the target-center head.
pub const TARGET_SCALE: f64 = 10.0;
/// Output scaling of the path head.
pub const PATH_SCALE: f64 = 10.0;
/// Output scaling of the increment head.
pub const INCR_SCALE: f64 = 2.0;
/// Lower bound added to the Laplace scales.
pub const B_FLOOR: f64 = 1e-3;
/// Lower bound added to the trajectory standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Query dimension (D).
    pub d_model: usize,
    pub hidden: usize,
    /// Width of the state encoding F_s.
    pub state_dim: usize,
    /// Width of the uncertainty encoding F_b.
    pub unc_dim: usize,
    /// Positional-encoding width appended to attention keys (multiple of 4).
    pub pos_dim: usize,
    /// Path points (N).
    pub path_points: usize,
    /// Arc-length spacing of ground-truth path points, meters.
    pub path_spacing: f64,
    /// Trajectory points (T).
    pub horizon: usize,
    /// Refinement rounds (K).
    pub refine_iters: usize,
    /// Residual step size.
    pub alpha: f64,
    /// Multiplier on refinement head outputs.
    pub delta_scale: f64,
    /// Multiplier on learned sampling offsets, meters.
    pub offset_scale: f64,
    pub variance_hidden: usize,
    /// Standard deviation produced by a freshly initialized variance head.
    pub sigma_init: f64,
    /// One Laplace scale shared by both axes instead of one per axis.
    pub shared_scale: bool,
    pub dt: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            d_model: 64,
            hidden: 64,
            state_dim: 32,
            unc_dim: 16,
            pos_dim: 8,
            path_points: 30,
            path_spacing: 2.0,
            horizon: 6,
            refine_iters: 3,
            alpha: 0.1,
            delta_scale: 5.0,
            offset_scale: 1.0,
            variance_hidden: 32,
            sigma_init: 0.3,
            shared_scale: false,
            dt: DEFAULT_DT,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.d_model,
            self.hidden,
            self.state_dim,
            self.unc_dim,
            self.path_points,
            self.horizon,
            self.variance_hidden,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("planner sizes must be positive".into()));
        }
        if !self.pos_dim.is_multiple_of(4) {
            return Err(Error::Config(format!("pos_dim must be a multiple of 4, got {}", self.pos_dim)));
        }
        let pos = [self.path_spacing, self.dt, self.sigma_init];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("path spacing, dt and sigma_init must be > 0".into()));
        }
        if !(self.alpha.is_finite() && self.delta_scale.is_finite() && self.offset_scale.is_finite()) {
            return Err(Error::Config("refinement scales must be finite".into()));
        }
        Ok(())
    }

    /// Points sampled by each subtask during refinement.
    pub fn sample_points(&self) -> [usize; 3] {
        [1, self.path_points, self.horizon]
    }
}

/// Offsets of every planner net inside the shared flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerLayout {
    pub cfg: PlannerConfig,
    /// Latent channels (C).
    pub channels: usize,
    /// Offset of the three initial queries, `3 × D`.
    pub queries: usize,
    pub q_in: Mlp,
    pub key: Mlp,
    pub value: Mlp,
    pub sa_q: Mlp,
    pub sa_k: Mlp,
    pub sa_v: Mlp,
    pub head_target: Mlp,
    pub head_path: Mlp,
    pub head_traj: Mlp,
    pub state_enc: Mlp,
    pub unc_enc: Mlp,
    pub offsets: [Mlp; 3],
    pub fusion: [Mlp; 3],
    pub delta: [Mlp; 3],
    pub variance: Mlp,
}

struct Cursor(usize);

impl Cursor {
    fn net(&mut self, sizes: Vec<usize>) -> Mlp {
        let m = Mlp::new(sizes, Activation::Tanh, self.0);
        self.0 = m.end();
        m
    }
}

impl PlannerLayout {
    pub fn new(cfg: PlannerConfig, channels: usize, offset: usize) -> Self {
        let (d, h) = (cfg.d_model, cfg.hidden);
        let (n, t) = (cfg.path_points, cfg.horizon);
        let mut c = Cursor(offset + 3 * d);
        let q_in = c.net(vec![d + 3, d]);
        let key = c.net(vec![d, channels + cfg.pos_dim]);
        let value = c.net(vec![channels, d]);
        let sa_q = c.net(vec![d, d]);
        let sa_k = c.net(vec![d, d]);
        let sa_v = c.net(vec![d, d]);
        let head_target = c.net(vec![d, h, 4]);
        let head_path = c.net(vec![d, h, 2 * n]);
        let head_traj = c.net(vec![d, h, 2 * t]);
        let state_enc = c.net(vec![4 + 2 * n + 2 * t, h, cfg.state_dim]);
        let unc_enc = c.net(vec![2, cfg.unc_dim, cfg.unc_dim]);
        let pts = cfg.sample_points();
        let outs = [4, 2 * n, 2 * t];
        let offsets = pts.map(|p| c.net(vec![d + cfg.state_dim, 2 * p]));
        let fusion = pts.map(|p| c.net(vec![p * channels + d + cfg.state_dim + cfg.unc_dim, h, d]));
        let delta = outs.map(|o| c.net(vec![d, o]));
        let variance = c.net(vec![d, cfg.variance_hidden, 2 * t]);
        PlannerLayout {
            cfg,
            channels,
            queries: offset,
            q_in,
            key,
            value,
            sa_q,
            sa_k,
            sa_v,
            head_target,
            head_path,
            head_traj,
            state_enc,
            unc_enc,
            offsets,
            fusion,
            delta,
            variance,
        }
    }

    pub fn start(&self) -> usize {
        self.queries
    }

    pub fn end(&self) -> usize {
        self.variance.end()
    }

    fn nets(&self) -> Vec<&Mlp> {
        let mut v = vec![
            &self.q_in,
            &self.key,
            &self.value,
            &self.sa_q,
            &self.sa_k,
            &self.sa_v,
            &self.head_target,
            &self.head_path,
            &self.head_traj,
            &self.state_enc,
            &self.unc_enc,
        ];
        v.extend(self.offsets.iter());
        v.extend(self.fusion.iter());
        v.extend(self.delta.iter());
        v.push(&self.variance);
        v
    }

    /// Named parameter ranges, for diagnostics and gradient checks.
    pub fn groups(&self) -> Vec<(&'static str, Range<usize>)> {
        vec![
            ("attention", self.queries..self.sa_v.end()),
            ("target", self.head_target.offset..self.head_target.end()),
            ("path", self.head_path.offset..self.head_path.end()),
            ("traj", self.head_traj.offset..self.head_traj.end()),
            ("refinement", self.state_enc.offset..self.delta[2].end()),
            ("variance", self.variance.offset..self.variance.end()),
        ]
    }

    /// Glorot everywhere, except: sampling offsets and refinement Δ heads
    /// start at zero (refinement begins as the identity) and the variance
    /// head starts as the constant `sigma_init`.
    pub fn init(&self, params: &mut [f64], rng: &mut StreamRng) {
        let d = self.cfg.d_model;
        let lim = (6.0 / (2 * d) as f64).sqrt();
        for v in &mut params[self.queries..self.queries + 3 * d] {
            *v = rng.random_range(-lim..=lim);
        }
        for net in self.nets() {
            net.init_glorot(params, rng);
        }
        for net in &self.offsets {
            net.zero(params);
        }
        for net in &self.delta {
            net.zero_last_layer(params);
        }
        self.variance.zero_last_layer(params);
        let b = inverse_softplus(self.cfg.sigma_init - SIGMA_FLOOR);
        self.variance.last_bias_mut(params).fill(b);
    }
}

/// `x` with `softplus(x) = y`, for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
