//! Generator `G`, decoder `F` and the conditional patch discriminator `D`.

mod config;
mod forward;
mod params;

pub use config::ModelConfig;
pub use forward::{
    condition_cube_batch, decode_graph, discriminate, discriminate_graph, discriminator_layers,
    discriminator_stage1_preactivation, encode_g1, encode_graph, generate, generate_graph, make_condition_cube,
    merge_preactivation, merge_preactivation_graph, receptive_field, reconstruct, reconstruct_graph, ConditionCube,
    Occupation, LEAKY_SLOPE, NORM_EPS,
};
pub use params::{
    bind, gradients, init_params, named_tensors, parameter_count, Conv, ConvNorm, DecoderParams, DiscStage,
    Discriminator, DiscriminatorParams, GeneratorParams, ModelParams, NamedParams, Norm, ResidualBlock,
    TranslatorNet, INIT_STD, RESIDUAL_BLOCKS,
};
