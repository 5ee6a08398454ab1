"""Evaluation protocols: each returns an EvalTable or a report object."""

from .advtrain import adversarial_training, evaluate_robustness, merge_columns, robustness_attacks
from .cam import cam, cam_agreement, class_activation_map
from .graybox import defended_labels, generate, graybox_eval, whitebox_eval
from .probe import ProbeConfig, ProbeReport, manifold_probe, pca, train_probe
from .spectrum import SpectrumReport, spectrum_report
from .sweep import hyperparam_sweep
from .tables import EvalTable, destruction_rate
from .transfer import common_correct_subset, cross_model_transfer
