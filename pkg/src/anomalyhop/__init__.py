"""AnomalyHop: image anomaly localization with channel-wise Saab features.

Pipeline: :mod:`~anomalyhop.saab` extracts per-hop features,
:mod:`~anomalyhop.normality` fits Gaussian models and scores them,
:mod:`~anomalyhop.anomaly` fuses per-hop maps, :mod:`~anomalyhop.evalx`
computes pixel-level ROC-AUC.
"""

from .anomaly import AnomalyMap, FusionConfig, fuse, rescale_map, segment
from .bundle import ModelBundle, load_bundle, save_bundle
from .config import ClassConfig, load_config
from .evalx import RocResult, auc_roc, evaluate_class, summarize
from .normality import (GaussianParams, NormalityModel, fit_location_aware,
                        fit_location_independent, fit_self_reference, mahalanobis, score_map)
from .saab import HopPipeline, HopSpec, SaabKernel, apply_saab, fit_pipeline, fit_saab

__version__ = "0.1.0"
