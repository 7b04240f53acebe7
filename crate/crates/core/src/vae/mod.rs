//! Convolutional VAEs (f8 reference, asymmetric f16) and free energies.

mod config;
mod free_energy;
mod linear;
mod model;
mod params;

pub use config::{ChannelExpand, HeadVariant, VaeConfig, IMAGE_CHANNELS};
pub use free_energy::{
    draw_noise, free_energy, free_energy_in, free_energy_weighted_in, reparameterize,
    reparameterize_in, FreeEnergy, FreeEnergyVars,
};
pub use linear::LinearGaussianVae;
pub use model::{init_f16_from_f8, Codec, LatentDist, VaeModel, LOGVAR_MAX, LOGVAR_MIN};
pub use params::{fan_in_uniform, Bound, Group, Param, ParamStore};
