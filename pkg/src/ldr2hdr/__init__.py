"""Single-image LDR to HDR reconstruction.

A conditional adversarial image-to-image translation pipeline: a three-stage
generator (linearization, mask-gated over-exposure correction, refinement)
built from attention recurrent-residual U-Nets, trained against a patch
discriminator with a range-compressed L1 + perceptual objective.
"""

from .data import (
    DatasetManifest,
    ExposureModel,
    PairedSample,
    build_exposure_stack,
    iterate,
    load_manifest,
    make_toy_scene,
    synthesize_ldr,
    write_toy_dataset,
)
from .errors import ConfigurationError, DataError, DivergenceError, FormatError
from .image_io import HdrImage, LdrImage, load_hdr, load_ldr, resize, save_hdr, save_ldr
from .losses import LossWeights, RandomFeaturePyramid, gan_loss_d, gan_loss_g, perceptual_loss, rec_loss, total_g_loss
from .masks import OEMask, ThresholdMaskProvider, dilate_mask, load_mask_png, threshold_mask
from .metrics import MetricReport, evaluate, psnr, ssim
from .networks import ArchConfig, GeneratorOutputs, GeneratorPipeline, PatchDiscriminator, init_normal
from .tonemap import MuLawParams, mu_inverse, mu_tonemap, mu_tonemap_grad, mu_tonemap_tensor
from .training import TrainConfig, LossRecord, fit, load_generator, lr_at, train_step

__version__ = "0.1.0"
