#pragma once

#include <json.hpp>

#include "mriuq/data.hpp"
#include "mriuq/kspace.hpp"
#include "mriuq/model.hpp"

// JSON mappings for configuration structs. Missing keys keep their defaults,
// so partial config files are accepted.

namespace mriuq {

NLOHMANN_JSON_SERIALIZE_ENUM(PhaseMode, {{PhaseMode::zero, "zero"}, {PhaseMode::smooth_random, "smooth-random"}})

NLOHMANN_JSON_SERIALIZE_ENUM(InputMode, {{InputMode::zero_filled, "zero-filled"},
                                         {InputMode::density_compensated, "density-compensated"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PhantomSpec, width, height, n_ellipses, intensity_low, intensity_high,
                                                phase_mode, supersample, family_seed, slice, seed)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VdMaskParams, width, height, acceleration, calib_fraction,
                                                density_power)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainingConfig, eta, lambda, learning_rate, beta1, beta2, eps_adam,
                                                batch_size, n_iterations, latent_dim, n_recurrent_blocks, seed,
                                                encoder_hidden, decoder_hidden, discriminator_hidden,
                                                logvar_init_bias, lr_halving_interval, augment_flips, acceleration, calib_fraction,
                                                density_power, noise_std, input_mode, density_masks)

} // namespace mriuq
