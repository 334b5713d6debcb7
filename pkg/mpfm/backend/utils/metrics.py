import numpy as np
from scipy.stats import rankdata

from mpfm.backend.models.errors import RejectedInputError, UndefinedMetricError


def roc_auc(scores, labels) -> float:
    """
    Mann-Whitney AUC: the fraction of (positive, negative) pairs where
    the positive scores higher, ties counting one half.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size != labels.size:
        raise RejectedInputError(f"Got {scores.size} scores but {labels.size} labels")
    if not np.all(np.isfinite(scores)):
        raise RejectedInputError("Scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise RejectedInputError("Labels must be 0 or 1")

    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")

    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
