"""Dual-pathway EEG phoneme decoding benchmark.

ERP and delay-differential feature extraction, a Conformer classifier with
multi-task heads, classical baselines, and a LOSO evaluation suite with
confound controls, runnable end to end on seeded synthetic data.
"""

__version__ = "0.1.0"

from .core import (DatasetSplit, EpochSet, Event, LabelRecord, PHONEMES,
                   Recording, derive_labels, expanded_split, fixed_split,
                   make_loso_folds)
from .dda import DdaParams, DdaSeries, dda_pipeline, sliding_dda, solve_window
from .erp import IcaResult, erp_pipeline
from .metrics import classification_metrics, levenshtein, wer
from .model import ModelConfig, PhonemeConformer, ensemble_logits
from .stats import (block_permutation_test, bootstrap_ci, oneway_anova,
                    paired_ttest)
from .synth import SynthSpec, generate_synthetic
from .training import TrainConfig, train

__all__ = [
    "__version__",
    "PHONEMES", "derive_labels", "LabelRecord", "Event", "Recording",
    "EpochSet", "DatasetSplit", "make_loso_folds", "fixed_split",
    "expanded_split",
    "erp_pipeline", "IcaResult",
    "DdaParams", "DdaSeries", "solve_window", "sliding_dda", "dda_pipeline",
    "ModelConfig", "PhonemeConformer", "ensemble_logits",
    "TrainConfig", "train",
    "levenshtein", "wer", "classification_metrics",
    "paired_ttest", "oneway_anova", "bootstrap_ci", "block_permutation_test",
    "SynthSpec", "generate_synthetic",
]
