//! Synthetic driving scenes and the bird's-eye latent world model.

mod generate;
mod latent;
mod scenario;

pub use generate::{expert_clearance, generate_corpus, generate_scenario, generate_with, GeneratorConfig};
pub use latent::{
    decoder_graph, decoder_inputs, encode_latent, encode_next_latent, encode_raster, predict_next_latent, rasterize,
    reconstruction_loss, reconstruction_loss_graph, DecoderInput, LatentGrid, WorldConfig, WorldModelParams,
    RASTER_PLANES,
};
pub use scenario::{
    boxes_along, headings_along, Agent, Command, Difficulty, EgoState, Scenario, EGO_HALF_EXTENTS, MIN_HEADING_STEP,
};
