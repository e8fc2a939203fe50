"""Single gradient-boosted decision tree with a logistic objective.

One boosting round, exact greedy splits: this is deliberately the smallest
member of the gradient-boosted-tree family, so the learned model stays
readable as a rule list.  The split objective is the standard regularised
gain

    gain = 1/2 * (GL^2/(HL + lambda) + GR^2/(HR + lambda)
                  - (GL + GR)^2/(HL + HR + lambda)) - gamma

with per-sample gradients g = p - y and hessians h = p (1 - p) from the
logistic loss around the constant base score.  Split candidates are the
midpoints between consecutive distinct sorted feature values; ties in gain
are broken toward the lower feature index, then the lower threshold.  A
gain at or below GAIN_EPS (floating-point zero guard) means no split.

Routing: a sample goes left when feature < threshold; a missing feature
(NaN) follows the node's missing rule, which this trainer always sets to
left.  Leaf weight is -G / (H + lambda); the predicted probability is
sigmoid(base_score + leaf weight).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, TrainingError, UsageError

TREE_FORMAT = "stuckwatch-tree"
TREE_VERSION = 1

PROB_CLAMP = 1e-7
GAIN_EPS = 1e-10  # gains at or below this count as zero


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 6
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    # One boosting round from an even prior caps leaf probabilities near
    # sigmoid(2) = 0.88, so 0.75 (3:1 posterior odds) separates leaves the
    # round can saturate from mixed leaves it cannot.
    decision_threshold: float = 0.75
    num_trees: int = 1  # fixed; kept explicit so configs are self-describing

    def validate(self) -> None:
        if self.max_depth < 1:
            raise UsageError("max_depth must be >= 1")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise UsageError("reg_lambda, gamma and min_child_weight must be >= 0")
        if not (0.0 < self.decision_threshold < 1.0):
            raise UsageError("decision_threshold must lie in (0, 1)")
        if self.num_trees != 1:
            raise UsageError("this model is a single tree; num_trees must be 1")


@dataclass
class TreeNode:
    """Internal node (feature/threshold/children) or leaf (weight)."""

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    weight: float | None = None
    n_samples: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


@dataclass
class TreeModel:
    root: TreeNode
    base_score: float
    params: TreeParams
    feature_names: list[str]
    trained_on: str = ""

    def max_depth(self) -> int:
        return self.root.depth()


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def logistic_stats(labels: np.ndarray, prob: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient p - y and hessian p (1 - p), with p clamped to avoid zeros."""
    labels = np.asarray(labels, dtype=np.float64)
    prob = np.clip(np.asarray(prob, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return prob - labels, prob * (1.0 - prob)


@dataclass(frozen=True)
class SplitChoice:
    feature: int
    threshold: float
    gain: float


def _leaf_terms(g_sum: float, h_sum: float, reg_lambda: float) -> float:
    return g_sum * g_sum / (h_sum + reg_lambda)


def best_split(
    x: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    reg_lambda: float = 1.0,
    gamma: float = 0.0,
    min_child_weight: float = 1.0,
) -> SplitChoice | None:
    """Exhaustive best split of (x, g, h), or None when nothing clears zero gain.

    ``x`` has shape (n, features).  Candidate thresholds sit halfway between
    consecutive distinct sorted values; if the midpoint rounds onto the
    lower value it is bumped to the upper so the realised partition always
    matches the scanned one.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n, n_features = x.shape
    if n < 2:
        return None
    g_total = float(g.sum())
    h_total = float(h.sum())
    parent = _leaf_terms(g_total, h_total, reg_lambda)

    best: SplitChoice | None = None
    for f in range(n_features):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        distinct = xs[:-1] < xs[1:]
        if not distinct.any():
            continue
        gr = g_total - gl
        hr = h_total - hl
        valid = distinct & (hl >= min_child_weight) & (hr >= min_child_weight)
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent) - gamma
        gains = np.where(valid & np.isfinite(raw), raw, -np.inf)
        i = int(np.argmax(gains))  # first max <=> lowest threshold
        gain = float(gains[i])
        if gain <= GAIN_EPS:
            continue
        lo_val, hi_val = xs[i], xs[i + 1]
        threshold = 0.5 * (lo_val + hi_val)
        if threshold <= lo_val:
            threshold = hi_val
        if best is None or gain > best.gain:
            best = SplitChoice(f, float(threshold), gain)
    return best


def _route_left(values: np.ndarray, threshold: float) -> np.ndarray:
    return (values < threshold) | np.isnan(values)


def train_tree(
    x: np.ndarray,
    y: np.ndarray,
    params: TreeParams | None = None,
    feature_names: list[str] | None = None,
    trained_on: str = "",
) -> TreeModel:
    """Fit the single tree on binary labels.

    base_score is the log-odds of the positive fraction; one round of
    gradients/hessians around it drives recursive exact-greedy growth down
    to ``max_depth``.  Deterministic for a fixed input order.
    """
    params = params or TreeParams()
    params.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DataError(f"bad training shapes x{x.shape} y{y.shape}")
    if x.shape[0] < 2:
        raise TrainingError("need at least two samples to train")
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(x.shape[1])]
    if len(feature_names) != x.shape[1]:
        raise DataError("feature_names length must match the feature count")
    positive = float(y.mean())
    if positive == 0.0 or positive == 1.0:
        raise TrainingError(
            f"training labels are single-class (positive fraction {positive:.3f}); "
            "a discriminative split cannot be learned"
        )

    p0 = min(max(positive, PROB_CLAMP), 1.0 - PROB_CLAMP)
    base_score = math.log(p0 / (1.0 - p0))
    prob = np.full(y.shape, sigmoid(base_score))
    g, h = logistic_stats(y, prob)

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        g_sum = float(g[idx].sum())
        h_sum = float(h[idx].sum())
        leaf = TreeNode(weight=-g_sum / (h_sum + params.reg_lambda), n_samples=idx.size)
        if depth >= params.max_depth or idx.size < 2:
            return leaf
        choice = best_split(
            x[idx], g[idx], h[idx],
            reg_lambda=params.reg_lambda,
            gamma=params.gamma,
            min_child_weight=params.min_child_weight,
        )
        if choice is None:
            return leaf
        going_left = _route_left(x[idx, choice.feature], choice.threshold)
        node = TreeNode(
            feature=choice.feature,
            threshold=choice.threshold,
            n_samples=idx.size,
        )
        node.left = grow(idx[going_left], depth + 1)
        node.right = grow(idx[~going_left], depth + 1)
        return node

    root = grow(np.arange(x.shape[0]), 0)
    return TreeModel(root, base_score, params, list(feature_names), trained_on)


def _leaf_weights(model: TreeModel, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0], dtype=np.float64)

    def apply(node: TreeNode, idx: np.ndarray) -> None:
        if node.is_leaf:
            out[idx] = node.weight
            return
        left = _route_left(x[idx, node.feature], node.threshold)
        apply(node.left, idx[left])
        apply(node.right, idx[~left])

    apply(model.root, np.arange(x.shape[0]))
    return out


def predict(model: TreeModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and binary flags for one feature row or a matrix."""
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    x = features[None, :] if single else features
    if x.shape[1] != len(model.feature_names):
        raise DataError(
            f"feature count {x.shape[1]} does not match the model's {len(model.feature_names)}"
        )
    probs = sigmoid(model.base_score + _leaf_weights(model, x))
    flags = (probs >= model.params.decision_threshold).astype(np.uint8)
    if single:
        return float(probs[0]), int(flags[0])
    return probs, flags


@dataclass
class Rule:
    """Root-to-leaf conjunction with the leaf's statistics."""

    conditions: list[str]
    weight: float
    probability: float
    n_samples: int
    verdict: str

    def __str__(self) -> str:
        clause = " AND ".join(self.conditions) if self.conditions else "(always)"
        return (
            f"IF {clause} THEN {self.verdict} "
            f"(p={self.probability:.4f}, weight={self.weight:+.4f}, n={self.n_samples})"
        )


@dataclass
class RuleSet:
    rules: list[Rule]
    split_counts: dict[str, int]

    def __str__(self) -> str:
        lines = [str(rule) for rule in self.rules]
        lines.append("")
        lines.append("splits per feature:")
        for name, count in sorted(self.split_counts.items(), key=lambda kv: (-kv[1], kv[0])):
            lines.append(f"  {name}: {count}")
        return "\n".join(lines)


def export_rules(model: TreeModel) -> RuleSet:
    """Flatten the tree into readable root-to-leaf rules plus split counts."""
    rules: list[Rule] = []
    counts: dict[str, int] = {}

    def walk(node: TreeNode, conditions: list[str]) -> None:
        if node.is_leaf:
            prob = float(sigmoid(model.base_score + node.weight))
            verdict = "FAULT" if prob >= model.params.decision_threshold else "NOMINAL"
            rules.append(Rule(list(conditions), node.weight, prob, node.n_samples, verdict))
            return
        name = model.feature_names[node.feature]
        counts[name] = counts.get(name, 0) + 1
        walk(node.left, conditions + [f"{name} < {node.threshold:.6g}"])
        walk(node.right, conditions + [f"{name} >= {node.threshold:.6g}"])

    walk(model.root, [])
    return RuleSet(rules, counts)


def _nodes_to_list(root: TreeNode) -> list[dict]:
    nodes: list[dict] = []

    def add(node: TreeNode) -> int:
        node_id = len(nodes)
        nodes.append({})
        if node.is_leaf:
            nodes[node_id] = {
                "id": node_id,
                "leaf": True,
                "weight": node.weight,
                "n_samples": node.n_samples,
            }
        else:
            left_id = add(node.left)
            right_id = add(node.right)
            nodes[node_id] = {
                "id": node_id,
                "leaf": False,
                "feature": node.feature,
                "threshold": node.threshold,
                "missing": "left",
                "left": left_id,
                "right": right_id,
                "n_samples": node.n_samples,
            }
        return node_id

    add(root)
    return nodes


def _nodes_from_list(nodes: list[dict], node_id: int = 0) -> TreeNode:
    data = nodes[node_id]
    if data["leaf"]:
        return TreeNode(weight=data["weight"], n_samples=data["n_samples"])
    node = TreeNode(
        feature=data["feature"],
        threshold=data["threshold"],
        n_samples=data["n_samples"],
    )
    node.left = _nodes_from_list(nodes, data["left"])
    node.right = _nodes_from_list(nodes, data["right"])
    return node


def to_json(model: TreeModel) -> str:
    payload = {
        "format": TREE_FORMAT,
        "version": TREE_VERSION,
        "base_score": model.base_score,
        "params": {
            "max_depth": model.params.max_depth,
            "reg_lambda": model.params.reg_lambda,
            "gamma": model.params.gamma,
            "min_child_weight": model.params.min_child_weight,
            "decision_threshold": model.params.decision_threshold,
            "num_trees": model.params.num_trees,
        },
        "feature_names": model.feature_names,
        "trained_on": model.trained_on,
        "nodes": _nodes_to_list(model.root),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> TreeModel:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"tree model is not valid JSON: {exc}") from exc
    if payload.get("format") != TREE_FORMAT:
        raise DataError("not a stuckwatch tree model file")
    if payload.get("version") != TREE_VERSION:
        raise DataError(f"unsupported tree model version {payload.get('version')}")
    params = TreeParams(**payload["params"])
    return TreeModel(
        root=_nodes_from_list(payload["nodes"]),
        base_score=payload["base_score"],
        params=params,
        feature_names=list(payload["feature_names"]),
        trained_on=payload.get("trained_on", ""),
    )


def save_tree(model: TreeModel, path) -> Path:
    path = Path(path)
    path.write_text(to_json(model))
    return path


def load_tree(path) -> TreeModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"tree model file not found: {path}")
    return from_json(path.read_text())
