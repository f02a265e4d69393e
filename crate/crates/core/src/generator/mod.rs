//! Style-based synthesis network, its layer table, and the matching
//! discriminator.

mod discriminator;
mod layout;
mod modulation;
mod synthesis;

pub use discriminator::Discriminator;
pub use layout::{
    build_layer_table, is_power_of_two, layer_count, style_map_shapes, GeneratorConfig, LayerDescriptor, LayerKind,
};
pub use modulation::{demodulated_conv, inject_style_map, DEMOD_EPS};
pub use synthesis::{Generator, SynthesisTrace};
