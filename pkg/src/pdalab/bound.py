"""Auditing the estimation error of the class transferable probability.

The class weights are estimated as the mean target prediction; their
true counterpart is the target label frequency, known only to an
oracle.  The L1 error between the two is bounded by exactly computable
quantities over the empirical target set:

    w_error_l1 <= 2*delta_bar + 2*e_type1 + 2*e_tgt_shared

where delta_bar is the mean complement of the row-max confidence,
e_type1 the fraction of target predictions falling outside the shared
class set, and e_tgt_shared the error of the shared-class-restricted
argmax against the true labels.  This intermediate inequality holds
verbatim for the empirical measure and is asserted on every report.

The full right-hand side swaps the target restricted error for the
source one plus a feature-distribution divergence.  The divergence is
only estimable (a held-out domain-classifier proxy), so the full bound
is reported, never asserted.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .selection import class_transferable_probability, true_class_weights

# Fixed budget of the proxy domain classifier; keeps traces deterministic.
PROXY_STEPS = 200
PROXY_LR = 0.1
PROXY_TEST_FRACTION = 0.2

INTERMEDIATE_TOL = 1e-9


class BoundViolationError(RuntimeError):
    """The intermediate inequality failed: an implementation bug, not data."""


@dataclass(frozen=True)
class OracleContext:
    """Ground truth withheld from training: shared classes and target labels."""

    shared_classes: tuple[int, ...]
    target_labels: np.ndarray

    def __post_init__(self):
        shared = tuple(sorted(set(int(c) for c in self.shared_classes)))
        if not shared:
            raise ValueError("shared class set must be nonempty")
        object.__setattr__(self, "shared_classes", shared)
        labels = np.asarray(self.target_labels)
        if labels.size and not np.isin(labels, shared).all():
            raise ValueError("target labels must lie inside the shared class set")
        object.__setattr__(self, "target_labels", labels)


@dataclass(frozen=True)
class BoundReport:
    """Every bound term at one training checkpoint."""

    delta_bar: float
    e_type1: float
    e_src_shared: float
    e_tgt_shared: float
    d_hdh_proxy: float
    w_error_l1: float
    rhs_intermediate: float
    rhs_full: float
    epoch: int

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "BoundReport":
        return BoundReport(**{f.name: d[f.name] for f in fields(BoundReport)})


def _pred_matrix(preds) -> np.ndarray:
    p = np.asarray(preds, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("a nonempty 2-d prediction matrix is required")
    return p


def delta_bar(target_preds) -> float:
    """Mean complement of the classifier confidence, E[1 - max_row]."""
    p = _pred_matrix(target_preds)
    return float(np.mean(1.0 - p.max(axis=1)))


def type1_error(target_preds, shared_classes) -> float:
    """Fraction of rows whose argmax falls outside the shared class set."""
    p = _pred_matrix(target_preds)
    shared = np.asarray(sorted(set(shared_classes)))
    return float(np.mean(~np.isin(p.argmax(axis=1), shared)))


def restricted_argmax(preds, shared_classes) -> np.ndarray:
    """Argmax over shared-class columns only; ties go to the lowest index."""
    p = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    shared = np.asarray(sorted(set(shared_classes)))
    if shared.size == 0:
        raise ValueError("shared class set must be nonempty")
    return shared[p[:, shared].argmax(axis=1)]


def shared_error(preds, labels, shared_classes) -> float:
    """Fraction of samples misclassified by the shared-class-restricted argmax."""
    p = _pred_matrix(preds)
    labels = np.asarray(labels)
    shared = sorted(set(shared_classes))
    if not np.isin(labels, shared).all():
        raise ValueError("labels must lie inside the shared class set")
    return float(np.mean(restricted_argmax(p, shared) != labels))


def w_estimation_error(target_preds, oracle: OracleContext) -> float:
    """L1 distance between estimated and true class transferable probability."""
    p = _pred_matrix(target_preds)
    w_hat = class_transferable_probability(p)
    w_true = true_class_weights(oracle.target_labels, p.shape[1])
    return float(np.abs(w_true - w_hat).sum())


def _train_logistic(x, y, steps, lr):
    w = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(steps):
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - y
        w -= lr * (x.T @ err) / n
        b -= lr * err.mean()
    return w, b


def estimate_hdh_divergence(source_features, target_features,
                            rng: np.random.Generator, *,
                            steps: int = PROXY_STEPS, lr: float = PROXY_LR,
                            test_fraction: float = PROXY_TEST_FRACTION) -> float:
    """Proxy divergence 2*(1 - 2*eps), floored at 0.

    eps is the held-out error of a small logistic domain classifier
    trained on an 80/20 split of the frozen features with a fixed
    full-batch budget.  The proxy may under-estimate the supremum
    divergence, so it is reported but never asserted against.
    """
    xs = np.asarray(source_features, dtype=np.float64)
    xt = np.asarray(target_features, dtype=np.float64)
    if xs.ndim != 2 or xt.ndim != 2 or xs.shape[0] == 0 or xt.shape[0] == 0:
        raise ValueError("both feature sets must be nonempty 2-d arrays")
    n_test_s = int(round(xs.shape[0] * test_fraction))
    n_test_t = int(round(xt.shape[0] * test_fraction))
    if n_test_s < 1 or n_test_t < 1 or n_test_s >= xs.shape[0] or n_test_t >= xt.shape[0]:
        raise ValueError("degenerate train/test split sizes")
    ps = rng.permutation(xs.shape[0])
    pt = rng.permutation(xt.shape[0])
    xs_tr, xs_te = xs[ps[n_test_s:]], xs[ps[:n_test_s]]
    xt_tr, xt_te = xt[pt[n_test_t:]], xt[pt[:n_test_t]]

    x_tr = np.vstack([xs_tr, xt_tr])
    y_tr = np.concatenate([np.ones(len(xs_tr)), np.zeros(len(xt_tr))])
    mu = x_tr.mean(axis=0)
    sd = np.maximum(x_tr.std(axis=0), 1e-8)
    w, b = _train_logistic((x_tr - mu) / sd, y_tr, steps, lr)

    x_te = np.vstack([xs_te, xt_te])
    y_te = np.concatenate([np.ones(len(xs_te)), np.zeros(len(xt_te))])
    pred = ((x_te - mu) / sd) @ w + b >= 0.0
    eps = float(np.mean(pred != y_te.astype(bool)))
    return max(0.0, 2.0 * (1.0 - 2.0 * eps))


def check_bound(target_preds, oracle: OracleContext, source_preds, source_labels,
                source_features, target_features, rng: np.random.Generator,
                epoch: int = 0) -> BoundReport:
    """Compute every bound term and assert the intermediate inequality.

    The source-side error and divergence proxy are evaluated on the
    source subdomain restricted to the shared classes.
    """
    p_t = _pred_matrix(target_preds)
    db = delta_bar(p_t)
    e1 = type1_error(p_t, oracle.shared_classes)
    e_tgt = shared_error(p_t, oracle.target_labels, oracle.shared_classes)
    w_err = w_estimation_error(p_t, oracle)

    src_labels = np.asarray(source_labels)
    shared_mask = np.isin(src_labels, oracle.shared_classes)
    if not shared_mask.any():
        raise ValueError("no source samples fall inside the shared class set")
    p_s = _pred_matrix(source_preds)
    e_src = shared_error(p_s[shared_mask], src_labels[shared_mask], oracle.shared_classes)
    d_proxy = estimate_hdh_divergence(np.asarray(source_features)[shared_mask],
                                      target_features, rng)

    rhs_i = 2.0 * (db + e1 + e_tgt)
    rhs_f = 2.0 * (db + e1 + e_src + d_proxy)
    if w_err > rhs_i + INTERMEDIATE_TOL:
        raise BoundViolationError(
            f"intermediate inequality violated: {w_err} > {rhs_i} (epoch {epoch})")
    return BoundReport(delta_bar=db, e_type1=e1, e_src_shared=e_src,
                       e_tgt_shared=e_tgt, d_hdh_proxy=d_proxy, w_error_l1=w_err,
                       rhs_intermediate=rhs_i, rhs_full=rhs_f, epoch=epoch)
