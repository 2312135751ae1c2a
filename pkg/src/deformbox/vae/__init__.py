from .nn import SPVAE, LatentCode, LossTerms, PartVAE, kl_divergence, vae_loss
from .optim import AdamState, NonFiniteGradientError, adam_step, learning_rate
from .train import (
    VaeConfig,
    VaeParams,
    decode,
    encode_mean,
    fill_latents,
    init_partvae,
    init_spvae,
    interpolate,
    partvae_forward,
    reconstruction_error,
    sample_shape,
    shape_matrix,
    spvae_forward,
    train,
    train_partvae,
    train_spvae,
)
from .weights import WeightFormatError, load_weights, save_weights, weights_to_json
