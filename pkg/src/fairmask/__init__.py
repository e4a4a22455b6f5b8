"""Fair classification by training with the sensitive features and masking them at prediction time."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Dataset,
    DatasetSchema,
    FairmaskError,
    FairnessReport,
    ScoreModel,
    SensitiveColumn,
    Split,
    decide,
    load_model,
    save_model,
    split_dataset,
)
from .models import MlpArchitecture, TrainConfig, predict_scores, train_linear_svm, train_logistic, train_mlp  # noqa: E402
from .fairness import MaskSpec, TauSweepResult, mask, select_tau, tau_sweep, train_then_mask  # noqa: E402
from .baselines import majority, massage, omit_sensitive, unconstrained  # noqa: E402
from .metrics import (  # noqa: E402
    EvalFrame,
    accuracy,
    admittance,
    fairness_report,
    group_discrimination,
    knn_consistency,
    latent_discrimination,
    pair_subsample_ld,
    strict_latent_discrimination,
)
from .data import SyntheticSpec, load_csv, load_schema, preprocess, synthesize, toy_table2  # noqa: E402
