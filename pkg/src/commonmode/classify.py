"""Classifiers used to score reduced tensors.

``Rank1TensorClassifier`` is logistic regression whose weight tensor is
constrained to ``beta * w_1 o w_2 o ... o w_N`` with unit-norm ``w_n``.
Fixing all factors but one makes the score linear in that factor, so the
model is trained block by block with plain gradient descent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .tensor_core import as_stack


def block_features(X, factors, mode: int) -> np.ndarray:
    """Contract every mode but ``mode`` (1-based) with its factor.

    Row ``m`` equals ``matricize(X[m], mode) @ kron_chain(factors, mode)``.
    """
    out = np.asarray(X, dtype=np.float64)
    # contract from the last mode down so earlier axis numbers stay valid
    for a in reversed(range(len(factors))):
        if a == mode - 1:
            continue
        out = np.tensordot(out, factors[a], axes=([a + 1], [0]))
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def block_objective(features, y01, v, bias, reg_lambda):
    """Penalized logistic loss of the block problem and its gradient.

    ``v`` is the unnormalized block weight ``beta * w_n``. Returns
    ``(loss, grad_v, grad_bias)``.
    """
    z = features @ v + bias
    loss = float(np.mean(_softplus(z) - y01 * z) + 0.5 * reg_lambda * np.dot(v, v))
    r = (expit(z) - y01) / features.shape[0]
    return loss, features.T @ r + reg_lambda * v, float(np.sum(r))


@dataclass
class TrainReport:
    loss: list[float] = field(default_factory=list)
    epochs: int = 0

    def to_dict(self):
        return {"loss": list(self.loss), "epochs": self.epochs}


class Rank1TensorClassifier(ClassifierMixin, BaseEstimator):
    """Binary logistic classifier with a rank-1 weight tensor.

    Parameters
    ----------
    lr : float, default=0.1
        Initial gradient step. A step that would increase the loss is halved
        until it does not, so the loss never goes up.
    reg_lambda : float, default=1e-4
        L2 penalty on the weight tensor (``reg_lambda / 2 * beta**2``).
    inner_steps : int, default=50
        Gradient steps per block update.
    epochs : int, default=20
        Sweeps over all modes.
    rescale : bool, default=True
        Divide inputs by the root-mean-square entry of the training tensors
        before anything else. A single scalar, so scores stay linear in the
        input; it only spares the step size from depending on feature units.

    Attributes
    ----------
    factors_ : list of ndarray
        Unit-norm weight vector per mode.
    scale_ : float
    bias_ : float
    input_scale_ : float
        Divisor applied to inputs (1.0 when ``rescale=False``).
    classes_ : ndarray of shape (2,)
    report_ : TrainReport
    """

    def __init__(self, lr=0.1, reg_lambda=1e-4, inner_steps=50, epochs=20, rescale=True):
        self.lr = lr
        self.reg_lambda = reg_lambda
        self.inner_steps = inner_steps
        self.epochs = epochs
        self.rescale = rescale

    def fit(self, X, y):
        X = as_stack(check_array(X, allow_nd=True, ensure_2d=False))
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary labels required, got classes {self.classes_.tolist()}")
        y01 = (y == self.classes_[1]).astype(np.float64)
        dims = X.shape[1:]
        self.input_dims_ = tuple(dims)
        rms = float(np.sqrt(np.mean(X * X)))
        self.input_scale_ = rms if self.rescale and rms > 0 else 1.0
        X = X / self.input_scale_
        factors = [np.full(d, 1.0 / np.sqrt(d)) for d in dims]
        scale, bias = 1.0, 0.0

        def full_loss():
            z = scale * block_features(X, factors, 1) @ factors[0] + bias
            return float(np.mean(_softplus(z) - y01 * z) + 0.5 * self.reg_lambda * scale**2)

        report = TrainReport(loss=[full_loss()])
        for epoch in range(self.epochs):
            for n in range(len(dims)):
                feats = block_features(X, factors, n + 1)
                v = scale * factors[n]
                loss, gv, gb = block_objective(feats, y01, v, bias, self.reg_lambda)
                for _ in range(self.inner_steps):
                    step = self.lr
                    while True:
                        v_new, b_new = v - step * gv, bias - step * gb
                        new_loss, new_gv, new_gb = block_objective(feats, y01, v_new, b_new, self.reg_lambda)
                        if not np.isfinite(new_loss):
                            raise FloatingPointError(
                                f"rank-1 training diverged (non-finite loss) at learning rate {self.lr}"
                            )
                        if new_loss <= loss or step < 1e-12:
                            break
                        step /= 2
                    if new_loss > loss:
                        break
                    v, bias, loss, gv, gb = v_new, b_new, new_loss, new_gv, new_gb
                norm = float(np.linalg.norm(v))
                if norm > 0:
                    factors[n] = v / norm
                scale = norm
            report.loss.append(full_loss())
            report.epochs = epoch + 1

        self.factors_ = factors
        self.scale_ = scale
        self.bias_ = bias
        self.report_ = report
        return self

    def _check_input(self, X):
        check_is_fitted(self, "factors_")
        X = as_stack(check_array(X, allow_nd=True, ensure_2d=False))
        if X.shape[1:] != self.input_dims_:
            raise ValueError(f"sample shape {X.shape[1:]} does not match training shape {self.input_dims_}")
        return X

    def decision_function(self, X):
        X = self._check_input(X) / self.input_scale_
        return self.scale_ * block_features(X, self.factors_, 1) @ self.factors_[0] + self.bias_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return np.where(expit(self.decision_function(X)) > 0.5, self.classes_[1], self.classes_[0])


class NearestCentroidTensor(ClassifierMixin, BaseEstimator):
    """Assigns each tensor to the class whose mean is nearest in Frobenius norm.

    Exact ties go to ``classes_[0]``.
    """

    def fit(self, X, y):
        X = as_stack(check_array(X, allow_nd=True, ensure_2d=False))
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary labels required, got classes {self.classes_.tolist()}")
        self.input_dims_ = tuple(X.shape[1:])
        self.centroids_ = np.stack([X[y == c].mean(axis=0) for c in self.classes_])
        return self

    def predict(self, X):
        check_is_fitted(self, "centroids_")
        X = as_stack(check_array(X, allow_nd=True, ensure_2d=False))
        if X.shape[1:] != self.input_dims_:
            raise ValueError(f"sample shape {X.shape[1:]} does not match training shape {self.input_dims_}")
        flat = X.reshape(X.shape[0], -1)
        d = [np.sum((flat - c.ravel()) ** 2, axis=1) for c in self.centroids_]
        return np.where(d[1] < d[0], self.classes_[1], self.classes_[0])


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: list[float]
    confusion: list[list[int]]
    classes: list
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion,
            "classes": self.classes,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def evaluate(model, X, y, config: Optional[dict] = None) -> EvalReport:
    """Accuracy and confusion counts (rows: true class, columns: predicted)."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("test set is empty")
    pred = model.predict(X)
    classes = list(model.classes_)
    confusion = [[int(np.sum((y == t) & (pred == p))) for p in classes] for t in classes]
    per_class = []
    for i, row in enumerate(confusion):
        total = sum(row)
        per_class.append(row[i] / total if total else None)
    overall = (confusion[0][0] + confusion[1][1]) / y.size
    return EvalReport(
        overall_accuracy=float(overall),
        per_class_accuracy=[None if v is None else float(v) for v in per_class],
        confusion=confusion,
        classes=[c.item() if hasattr(c, "item") else c for c in classes],
        config=dict(config or {}),
    )
