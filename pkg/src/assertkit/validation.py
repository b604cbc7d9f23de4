"""Input checks shared by the estimators and the functional API."""
from __future__ import annotations

import numpy as np


def as_feature_array(x, dim: int | None = None) -> np.ndarray:
    """Return a finite 2-D T x D array from a FeatureMatrix or array-like."""
    data = getattr(x, "data", x)
    arr = np.asarray(data, dtype=np.float64 if np.asarray(data).dtype.kind in "iub" else None)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"feature matrix must be T x D with T, D >= 1, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"feature dimension {arr.shape[1]} != expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature matrix contains non-finite values")
    return arr


def check_feature_list(X, dim: int | None = None) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    X = [as_feature_array(x, dim) for x in X]
    if not X:
        raise ValueError("need at least one feature matrix")
    dims = {x.shape[1] for x in X}
    if len(dims) != 1:
        raise ValueError(f"feature matrices disagree on dimension: {sorted(dims)}")
    return X


def check_binary_keys(keys) -> np.ndarray:
    """Map keys (bool, 0/1, or 'bonafide'/'spoof') to a boolean bonafide mask."""
    keys = np.asarray(keys)
    if keys.dtype.kind in "US" or keys.dtype == object:
        low = np.char.lower(keys.astype(str))
        bad = ~np.isin(low, ("bonafide", "spoof"))
        if bad.any():
            raise ValueError(f"unknown key token {keys[bad][0]!r}")
        mask = low == "bonafide"
    else:
        if not np.isin(keys, (0, 1)).all():
            raise ValueError("numeric keys must be 0 (spoof) or 1 (bonafide)")
        mask = keys.astype(bool)
    if mask.ndim != 1:
        raise ValueError("keys must be one-dimensional")
    return mask


def check_scores(scores, keys) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    bona = check_binary_keys(keys)
    if scores.ndim != 1 or scores.shape != bona.shape:
        raise ValueError(f"scores {scores.shape} and keys {bona.shape} must be matching 1-D arrays")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if bona.all() or not bona.any():
        raise ValueError("need at least one bonafide and one spoof trial")
    return scores, bona


def check_score_matrix(S, keys) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if S.ndim != 2:
        raise ValueError("score matrix must be trials x systems")
    bona = check_binary_keys(keys)
    if bona.shape[0] != S.shape[0]:
        raise ValueError(f"{S.shape[0]} score rows but {bona.shape[0]} keys")
    if not np.all(np.isfinite(S)):
        raise ValueError("scores must be finite")
    if bona.all() or not bona.any():
        raise ValueError("need at least one bonafide and one spoof trial")
    return S, bona
