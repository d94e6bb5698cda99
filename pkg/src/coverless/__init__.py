"""Coverless image steganography: a secret image is never embedded, it is mapped.

A sender-side generator turns a registered secret into a natural-looking cover;
a receiver-side generator, keyed by that cover's perceptual fingerprint, maps it
back. Both are trained adversarially (WGAN with weight clipping) on a small
numpy network engine.
"""

from .adversarial import TrainingConfig, TrainingReport, exact_w1, train_pair
from .errors import CoverlessError, NoMatchingModel
from .imaging import ImageBuffer, load_pgm, psnr, read_pgm, save_pgm, ssim, write_pgm
from .modeldb import GeneratorModel, ModelDatabase, load_model, save_model
from .protocol import build_pair, hide, reveal

__all__ = [
    "TrainingConfig", "TrainingReport", "exact_w1", "train_pair", "CoverlessError",
    "NoMatchingModel", "ImageBuffer", "load_pgm", "psnr", "read_pgm", "save_pgm", "ssim",
    "write_pgm", "GeneratorModel", "ModelDatabase", "load_model", "save_model", "build_pair",
    "hide", "reveal",
]
