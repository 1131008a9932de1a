"""
Supervised baselines on encoded features: multinomial logistic regression,
k-nearest neighbours and a one-hidden-layer MLP, plus the metric report.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, precision_recall_fscore_support
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from pathx.ml.numeric import (
    AdamState,
    Rng,
    adam_step,
    check_finite,
    flatten_params,
    he_uniform,
    relu,
    softmax,
    unflatten_params,
    xavier_uniform,
)
from pathx.models.models import ClassMetrics, MethodReport, MetricsReport
from pathx.schemas.schemas import ClassifyConfig

logger = logging.getLogger(__name__)

LOGREG = "Logistic Regression"
KNN = "KNN"
MLP = "MLP"


@dataclass
class LabeledDataset:
    features: np.ndarray            # (n, d)
    labels: np.ndarray              # (n,) class indices into class_names
    class_names: List[str]
    case_ids: Optional[List[str]] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label index outside the class set")

    @classmethod
    def from_labels(cls, features, labels: Sequence[str], case_ids: Optional[List[str]] = None) -> "LabeledDataset":
        class_names = sorted({str(label) for label in labels})
        index = {name: i for i, name in enumerate(class_names)}
        return cls(features, np.array([index[str(label)] for label in labels]), class_names, case_ids)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, rows: np.ndarray) -> "LabeledDataset":
        ids = [self.case_ids[i] for i in rows] if self.case_ids is not None else None
        return LabeledDataset(self.features[rows], self.labels[rows], self.class_names, ids)


def stratified_split(dataset: LabeledDataset, test_fraction: float, rng: Rng) -> Tuple[LabeledDataset, LabeledDataset]:
    """Seeded split keeping per-class proportions"""
    rows = np.arange(dataset.labels.size)
    try:
        train_rows, test_rows = train_test_split(
            rows, test_size=test_fraction, stratify=dataset.labels, random_state=rng.int_seed()
        )
    except ValueError as e:
        logger.warning(f"⚠️ Stratified split impossible ({e}); falling back to a plain shuffled split")
        train_rows, test_rows = train_test_split(rows, test_size=test_fraction, random_state=rng.int_seed())
    return dataset.subset(np.sort(train_rows)), dataset.subset(np.sort(test_rows))


def _require_classes(train: LabeledDataset) -> None:
    if train.labels.size == 0:
        raise ValueError("empty training set")
    if np.unique(train.labels).size < 2:
        raise ValueError("training set has a single class")


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    picked = np.sum(probs * targets, axis=1)
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


# -- logistic regression --

@dataclass
class LinearModel:
    weights: np.ndarray             # (d, classes)
    bias: np.ndarray                # (classes,)
    class_names: List[str]


def logreg_loss_and_grads(model: LinearModel, x: np.ndarray, labels: np.ndarray, l2: float):
    """Mean cross-entropy + (l2 / 2) * ||W||^2 and gradients (dW, db)"""
    targets = _one_hot(labels, model.weights.shape[1])
    probs = softmax(x @ model.weights + model.bias)
    loss = _cross_entropy(probs, targets) + 0.5 * l2 * float(np.sum(model.weights ** 2))
    residual = (probs - targets) / x.shape[0]
    return loss, x.T @ residual + l2 * model.weights, residual.sum(axis=0)


def train_logreg(train: LabeledDataset, l2: float, epochs: int, lr: float, rng: Optional[Rng] = None) -> LinearModel:
    """
    Full-batch gradient descent from zero weights.

    rng keeps the trainer signatures aligned; the fit draws no random numbers,
    so every seed gives the same weights.
    """
    _require_classes(train)
    d, c = train.features.shape[1], train.num_classes
    model = LinearModel(np.zeros((d, c)), np.zeros(c), list(train.class_names))
    for _ in range(epochs):
        _, d_w, d_b = logreg_loss_and_grads(model, train.features, train.labels, l2)
        model.weights = model.weights - lr * d_w
        model.bias = model.bias - lr * d_b
    check_finite(model.weights, "logistic regression weights")
    return model


def predict_logreg_proba(model: LinearModel, x) -> np.ndarray:
    return softmax(np.atleast_2d(np.asarray(x, dtype=np.float64)) @ model.weights + model.bias)


def predict_logreg(model: LinearModel, x) -> np.ndarray:
    return np.argmax(predict_logreg_proba(model, x), axis=1)


# -- k nearest neighbours --

def predict_knn(train: LabeledDataset, query, k: int) -> np.ndarray:
    """Majority vote of the k nearest training rows; distance ties keep the lower row, vote ties the smaller class"""
    if train.labels.size == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= train.labels.size:
        raise ValueError(f"k must be between 1 and {train.labels.size}")
    q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    d2 = cdist(q, train.features, "sqeuclidean")
    predictions = np.empty(q.shape[0], dtype=int)
    for row in range(q.shape[0]):
        nearest = np.argsort(d2[row], kind="stable")[:k]
        votes = np.bincount(train.labels[nearest], minlength=train.num_classes)
        predictions[row] = int(np.argmax(votes))
    return predictions


# -- MLP --

@dataclass
class MLPModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    class_names: List[str]

    def shapes(self):
        return [self.w1.shape, self.b1.shape, self.w2.shape, self.b2.shape]

    def to_vector(self) -> np.ndarray:
        return flatten_params([self.w1, self.b1, self.w2, self.b2])

    def with_vector(self, vector: np.ndarray) -> "MLPModel":
        w1, b1, w2, b2 = unflatten_params(vector, self.shapes())
        return MLPModel(w1, b1, w2, b2, self.class_names)


def init_mlp(input_dim: int, hidden: int, num_classes: int, rng: Rng, class_names: List[str]) -> MLPModel:
    return MLPModel(
        w1=he_uniform(rng, input_dim, hidden),
        b1=np.zeros(hidden),
        w2=xavier_uniform(rng, hidden, num_classes),
        b2=np.zeros(num_classes),
        class_names=list(class_names),
    )


def mlp_loss_and_grads(model: MLPModel, x: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient as a flat vector in to_vector order"""
    targets = _one_hot(labels, model.w2.shape[1])
    pre = x @ model.w1 + model.b1
    hidden = relu(pre)
    probs = softmax(hidden @ model.w2 + model.b2)
    loss = _cross_entropy(probs, targets)

    d_logits = (probs - targets) / x.shape[0]
    d_w2 = hidden.T @ d_logits
    d_b2 = d_logits.sum(axis=0)
    d_pre = (d_logits @ model.w2.T) * (pre > 0.0)
    d_w1 = x.T @ d_pre
    d_b1 = d_pre.sum(axis=0)
    return loss, flatten_params([d_w1, d_b1, d_w2, d_b2])


def train_mlp(train: LabeledDataset, hidden: int, epochs: int, lr: float, rng: Rng) -> MLPModel:
    """Full-batch Adam on cross-entropy"""
    _require_classes(train)
    model = init_mlp(train.features.shape[1], hidden, train.num_classes, rng, train.class_names)
    vector = model.to_vector()
    state = AdamState.zeros(vector.size, learning_rate=lr)
    for _ in range(epochs):
        _, grads = mlp_loss_and_grads(model, train.features, train.labels)
        vector, state = adam_step(vector, grads, state)
        model = model.with_vector(vector)
    check_finite(vector, "MLP weights")
    return model


def predict_mlp_proba(model: MLPModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return softmax(relu(x @ model.w1 + model.b1) @ model.w2 + model.b2)


def predict_mlp(model: MLPModel, x) -> np.ndarray:
    return np.argmax(predict_mlp_proba(model, x), axis=1)


# -- metrics --

def compute_metrics(truth: Sequence, predicted: Sequence, labels: Optional[Sequence] = None) -> MetricsReport:
    """
    Accuracy, macro F1 and weighted F1.

    Macro and weighted averages run over the classes present in truth; any
    0/0 precision, recall or F1 counts as 0.
    """
    truth = [str(t) for t in truth]
    predicted = [str(p) for p in predicted]
    if len(truth) != len(predicted):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(predicted)} predictions")
    if not truth:
        raise ValueError("empty input")

    names = [str(label) for label in labels] if labels is not None else sorted(set(truth) | set(predicted))
    names += sorted((set(truth) | set(predicted)) - set(names))
    seen = set(truth)
    present = [name for name in names if name in seen]

    precision, recall, f1, support = precision_recall_fscore_support(
        truth, predicted, labels=names, average=None, zero_division=0
    )
    per_class = [
        ClassMetrics(label=name, precision=float(p), recall=float(r), f1=float(f), support=int(s))
        for name, p, r, f, s in zip(names, precision, recall, f1, support)
    ]
    return MetricsReport(
        accuracy=float(accuracy_score(truth, predicted)),
        macro_f1=float(f1_score(truth, predicted, labels=present, average="macro", zero_division=0)),
        weighted_f1=float(f1_score(truth, predicted, labels=present, average="weighted", zero_division=0)),
        per_class=per_class,
        labels=names,
        confusion_matrix=confusion_matrix(truth, predicted, labels=names).tolist(),
    )


def evaluate_methods(dataset: LabeledDataset, config: ClassifyConfig, rng: Rng) -> Tuple[List[MethodReport], Dict]:
    """Split, standardise on the training part, fit all three methods and score them on the test part"""
    train, test = stratified_split(dataset, config.test_fraction, rng.child(0))
    _require_classes(train)

    scaler = StandardScaler().fit(train.features)
    train = LabeledDataset(scaler.transform(train.features), train.labels, train.class_names, train.case_ids)
    test = LabeledDataset(scaler.transform(test.features), test.labels, test.class_names, test.case_ids)
    truth = [dataset.class_names[i] for i in test.labels]

    def named(indices):
        return [dataset.class_names[i] for i in indices]

    logreg = train_logreg(train, config.logreg_l2, config.logreg_epochs, config.logreg_learning_rate, rng.child(2))
    k = min(config.knn_k, train.labels.size)
    mlp = train_mlp(train, config.mlp_hidden, config.mlp_epochs, config.mlp_learning_rate, rng.child(1))

    reports = [
        MethodReport(method=LOGREG, metrics=compute_metrics(truth, named(predict_logreg(logreg, test.features)), dataset.class_names)),
        MethodReport(method=KNN, metrics=compute_metrics(truth, named(predict_knn(train, test.features, k)), dataset.class_names)),
        MethodReport(method=MLP, metrics=compute_metrics(truth, named(predict_mlp(mlp, test.features)), dataset.class_names)),
    ]
    for report in reports:
        logger.info(
            f"{report.method}: accuracy {report.metrics.accuracy:.4f}, "
            f"macro F1 {report.metrics.macro_f1:.4f}, weighted F1 {report.metrics.weighted_f1:.4f}"
        )
    split = {"train_size": int(train.labels.size), "test_size": int(test.labels.size), "knn_k": k}
    return reports, split
