//! The full learnable model: frozen encoder, world decoder and planner,
//! all addressed inside one flat parameter vector.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{GridSpec, Point2};
use crate::planner::{PlanContext, PlannerConfig, PlannerLayout};
use crate::rng::stream;
use crate::world::{
    encode_latent, encode_next_latent, DecoderInput, LatentGrid, Scenario, WorldConfig, WorldModelParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    pub world: WorldConfig,
    pub planner: PlannerConfig,
}

impl ModelConfig {
    /// Compact grid and narrower nets; what the experiment drivers use.
    pub fn compact() -> Self {
        ModelConfig {
            world: WorldConfig::compact(),
            planner: PlannerConfig {
                d_model: 32,
                hidden: 48,
                state_dim: 24,
                unc_dim: 8,
                variance_hidden: 16,
                ..PlannerConfig::default()
            },
        }
    }

    /// A very small model for tests and smoke runs.
    pub fn tiny() -> Self {
        ModelConfig {
            world: WorldConfig {
                grid: GridSpec::new(Point2::new(-8.0, -16.0), 4.0, 10, 8).expect("static grid"),
                channels: 3,
                stencil: 3,
                encoder_hidden: 6,
                decoder_hidden: 5,
                decoder_input: DecoderInput::Predicted,
            },
            planner: PlannerConfig {
                d_model: 8,
                hidden: 8,
                state_dim: 6,
                unc_dim: 4,
                pos_dim: 4,
                path_points: 5,
                variance_hidden: 5,
                ..PlannerConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.planner.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub world: WorldModelParams,
    pub planner: PlannerLayout,
}

impl ModelLayout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let world = WorldModelParams::new(cfg.world.clone(), cfg.planner.horizon, 0);
        let planner = PlannerLayout::new(cfg.planner.clone(), cfg.world.channels, world.end());
        Ok(ModelLayout { world, planner })
    }

    pub fn n_params(&self) -> usize {
        self.planner.end()
    }

    /// Named parameter ranges.
    pub fn groups(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let mut g = vec![
            ("encoder", self.world.encoder.offset..self.world.encoder.end()),
            ("world_decoder", self.world.decoder.offset..self.world.decoder.end()),
        ];
        g.extend(self.planner.groups());
        g
    }
}

/// Flat parameters plus the architecture they belong to. Used for the
/// current, old and reference policies alike.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub cfg: ModelConfig,
    pub layout: ModelLayout,
    pub params: Vec<f64>,
}

impl PolicySnapshot {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let layout = ModelLayout::new(&cfg)?;
        let mut params = vec![0.0; layout.n_params()];
        let mut rng = stream(seed, "model-init");
        layout.world.encoder.init_glorot(&mut params, &mut rng);
        layout.world.decoder.init_glorot(&mut params, &mut rng);
        layout.planner.init(&mut params, &mut rng);
        Ok(PolicySnapshot { cfg, layout, params })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let layout = ModelLayout::new(&cfg)?;
        if params.len() != layout.n_params() {
            return Err(Error::Architecture(format!(
                "configuration needs {} parameters, got {}",
                layout.n_params(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(PolicySnapshot { cfg, layout, params })
    }

    /// Textual architecture descriptor stored alongside checkpoints.
    pub fn descriptor(&self) -> String {
        architecture_descriptor(&self.cfg, self.layout.n_params())
    }

    /// Encodes the current and next latent grids for a scenario.
    pub fn encode(&self, s: &Scenario) -> Result<SceneCache> {
        let now = Arc::new(encode_latent(s, &self.layout.world, &self.params)?);
        let next = Arc::new(encode_next_latent(s, &self.layout.world, &self.params)?);
        let ctx = PlanContext::for_scenario(s, now.clone(), self.cfg.planner.pos_dim);
        Ok(SceneCache { now, next, ctx })
    }
}

pub fn architecture_descriptor(cfg: &ModelConfig, n_params: usize) -> String {
    format!("latplan/v1 params={n_params} {}", serde_json::to_string(cfg).expect("config serializes"))
}

/// Latent grids of one scenario. The encoder is never trained, so these
/// stay valid for the lifetime of a parameter vector's encoder slice.
#[derive(Clone)]
pub struct SceneCache {
    pub now: Arc<LatentGrid>,
    pub next: Arc<LatentGrid>,
    pub ctx: PlanContext,
}
