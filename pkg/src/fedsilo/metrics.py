"""ROC-AUC evaluation: per-center AUC, mAUC, out-of-domain with AdaBN."""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import bnorm, nn


class UndefinedAUCError(ValueError):
    """Both classes are required for a ROC-AUC."""


class LeakError(RuntimeError):
    """Adaptation data overlapped the evaluation split."""


def roc_auc(scores, labels):
    """Mann-Whitney AUC via rank sums, ties credited 1/2, O(n log n)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores/labels length mismatch")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC undefined: need at least one sample "
                                "of each class")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    s = scores[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def score_dataset(spec, params, images, batch_size=256, dtype=None):
    """Tumor-class (class 1) softmax probabilities in eval mode."""
    if dtype is None:
        dtype = next(iter(params.values())).dtype
    out = []
    for start in range(0, images.shape[0], batch_size):
        x = images[start:start + batch_size].astype(dtype)
        logits, _ = nn.forward(spec, params, x, mode="eval")
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out.append(e[:, 1] / e.sum(axis=1))
    return np.concatenate(out)


@dataclass
class EvalReport:
    per_center_auc: dict
    mauc: float
    per_center_std: dict = field(default_factory=dict)
    n_seeds: int = 1


def evaluate_intra(spec, models, test_sets):
    """Per-center AUC and their unweighted mean.

    ``models`` is either a single ParamSet (Pooled/FedAvg/FedProx) applied
    to every center, or a dict center_id -> ParamSet (Local/SiloBN), in
    which case each center's model is scored on its own test set.
    """
    # a bare ParamSet is itself a dict, but keyed by (layer, name) tuples;
    # a personalized mapping is keyed by integer center ids
    personalized = isinstance(models, dict) and all(
        isinstance(k, int) for k in models)
    per_center = {}
    for center_id, ds in test_sets.items():
        if personalized:
            if center_id not in models:
                raise KeyError(f"no model for center {center_id} under a "
                               "personalized strategy")
            params = models[center_id]
        else:
            params = models
        scores = score_dataset(spec, params, ds.images)
        per_center[center_id] = roc_auc(scores, ds.labels)
    mauc = float(np.mean(list(per_center.values())))
    return EvalReport(per_center_auc=per_center, mauc=mauc)


def _row_digests(images):
    return {hashlib.sha1(np.ascontiguousarray(row).tobytes()).digest()
            for row in images}


def evaluate_out_of_domain(spec, shared_params, donor_stats, target_test,
                           adapt=False, adaptation_batches=None):
    """AUC on an unseen center's test split.

    The evaluation model combines the shared parameters with BN statistics:
    the donor's as-is (adapt=False) or AdaBN-recomputed on the provided
    adaptation batches (adapt=True). Adaptation batches must come from the
    target's training split; any overlap with the test split raises.
    """
    if target_test.n == 0:
        raise ValueError("empty target test split")
    params = nn.copy_params(shared_params)
    for k, v in donor_stats.items():
        params[k] = v.copy()
    if adapt:
        if not adaptation_batches:
            raise ValueError("adapt=True requires adaptation batches")
        test_rows = _row_digests(target_test.images)
        for batch in adaptation_batches:
            for row in batch:
                digest = hashlib.sha1(
                    np.ascontiguousarray(row.astype(np.float32)).tobytes()
                ).digest()
                if digest in test_rows:
                    raise LeakError("adaptation batch contains a target "
                                    "test-split sample")
        dtype = next(iter(params.values())).dtype
        bnorm.adabn_recompute(spec, params,
                              [b.astype(dtype) for b in adaptation_batches])
    scores = score_dataset(spec, params, target_test.images)
    return roc_auc(scores, target_test.labels)
