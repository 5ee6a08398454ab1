"""Adversarial-robustness workbench: wavelet denoising followed by super-resolution."""

from .attacks import AttackConfig, AttackResult, run_attack
from .classifier import Classifier, ClassifierSpec, build, train
from .config import RunConfig, load_config, parse_config
from .data import LabeledImageSet, load_dataset, select_correct_subset
from .defense import Defense, DefenseConfig, defend, defended_predict
from .sr import SRNet, SRNetSpec, super_resolve, train_sr
from .wavelet import ShrinkConfig, wavelet_denoise

__version__ = "0.1.0"
