"""Portable boosted-tree binary classifier.

Model JSON schema::

    {"modality": "audio" | "kinematic",
     "base_score": float,            # log-odds offset
     "window_len_s": float, "fs_hz": float,
     "feature_names": [name, ...],   # registry names; defines the extraction mask
     "trees": [[node, ...], ...]}    # node 0 is the root of each tree

    node := {"f": name, "t": threshold, "l": left, "r": right, "d": "l" | "r"}
          | {"leaf": score}

A sample goes left when ``value < threshold``. ``d`` names the branch taken
when the feature is missing or NaN; without it a missing value is an error.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import registry
from .errors import InferenceError, InvalidArgument, ModelLoadError


@dataclass(frozen=True)
class Split:
    feature: str
    threshold: float
    left: int
    right: int
    default: str | None = None


@dataclass(frozen=True)
class Leaf:
    score: float


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple
    base_score: float = 0.0
    feature_names: tuple = ()
    modality: str = "audio"
    window_len: float = 0.8
    fs: float = 8000.0
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def mask(self) -> frozenset:
        used = {node.feature for tree in self.trees for node in tree if isinstance(node, Split)}
        return frozenset(used) | frozenset(self.feature_names)

    @property
    def n_nodes(self):
        return sum(len(t) for t in self.trees)

    def to_dict(self) -> dict:
        def node_dict(n):
            if isinstance(n, Leaf):
                return {"leaf": n.score}
            d = {"f": n.feature, "t": n.threshold, "l": n.left, "r": n.right}
            if n.default is not None:
                d["d"] = n.default
            return d

        return {
            "modality": self.modality,
            "base_score": self.base_score,
            "window_len_s": self.window_len,
            "fs_hz": self.fs,
            "feature_names": list(self.feature_names),
            "trees": [[node_dict(n) for n in tree] for tree in self.trees],
            **self.extras,
        }


def _parse_node(raw, where):
    if not isinstance(raw, dict):
        raise ModelLoadError(f"{where}: node must be an object")
    if "leaf" in raw:
        if set(raw) - {"leaf"}:
            raise ModelLoadError(f"{where}: leaf node has extra keys {sorted(set(raw) - {'leaf'})}")
        return Leaf(float(raw["leaf"]))
    try:
        default = raw.get("d")
        if default not in (None, "l", "r"):
            raise ModelLoadError(f"{where}: default branch must be 'l' or 'r', got {default!r}")
        return Split(str(raw["f"]), float(raw["t"]), int(raw["l"]), int(raw["r"]), default)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelLoadError(f"{where}: malformed split node ({exc})") from exc


def _validate_tree(tree, t_idx):
    n = len(tree)
    if n == 0:
        raise ModelLoadError(f"tree {t_idx}: empty tree")
    seen = set()
    stack = [0]
    while stack:
        i = stack.pop()
        if i in seen:
            raise ModelLoadError(f"tree {t_idx}: node {i} reached twice (cycle or shared child)")
        seen.add(i)
        node = tree[i]
        if isinstance(node, Split):
            for child in (node.left, node.right):
                if not 0 <= child < n:
                    raise ModelLoadError(f"tree {t_idx}: node {i} child index {child} out of range [0, {n})")
                stack.append(child)


def ensemble_from_dict(doc: Mapping, source="model") -> TreeEnsemble:
    if not isinstance(doc, Mapping):
        raise ModelLoadError(f"{source}: model must be a JSON object")
    modality = doc.get("modality", "audio")
    if modality not in ("audio", "kinematic"):
        raise ModelLoadError(f"{source}: unknown modality {modality!r}")
    names = tuple(doc.get("feature_names", ()))
    trees = []
    for t_idx, raw_tree in enumerate(doc.get("trees", ())):
        if not isinstance(raw_tree, list):
            raise ModelLoadError(f"{source}: tree {t_idx} must be a list of nodes")
        tree = tuple(_parse_node(raw, f"{source}: tree {t_idx} node {i}") for i, raw in enumerate(raw_tree))
        _validate_tree(tree, t_idx)
        trees.append(tree)
    used = {n.feature for tree in trees for n in tree if isinstance(n, Split)}
    undeclared = sorted(used - set(names))
    if undeclared:
        raise ModelLoadError(f"{source}: splits use features not in feature_names: {', '.join(undeclared)}")
    unknown = [n for n in names if not registry.is_registered(n)]
    if unknown:
        raise ModelLoadError(f"{source}: unknown feature names: {', '.join(unknown)}")
    known_keys = {"modality", "base_score", "window_len_s", "fs_hz", "feature_names", "trees"}
    return TreeEnsemble(
        trees=tuple(trees),
        base_score=float(doc.get("base_score", 0.0)),
        feature_names=names,
        modality=modality,
        window_len=float(doc.get("window_len_s", 0.8 if modality == "audio" else 0.5)),
        fs=float(doc.get("fs_hz", 8000.0 if modality == "audio" else 100.0)),
        extras={k: v for k, v in doc.items() if k not in known_keys},
    )


def load_model(path) -> TreeEnsemble:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return ensemble_from_dict(doc, str(path))


def save_model(model: TreeEnsemble, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def tree_score(tree, features: Mapping[str, float]) -> float:
    node = tree[0]
    while isinstance(node, Split):
        value = features.get(node.feature)
        if value is None or value != value:
            if node.default is None:
                raise InferenceError(f"missing feature {node.feature!r} and no default branch")
            nxt = node.left if node.default == "l" else node.right
        else:
            nxt = node.left if value < node.threshold else node.right
        node = tree[nxt]
    return node.score


def decision_function(model: TreeEnsemble, features: Mapping[str, float]) -> float:
    return model.base_score + sum(tree_score(t, features) for t in model.trees)


def predict_proba(model: TreeEnsemble, features: Mapping[str, float]) -> float:
    """Cough probability: logistic of base score plus the sum of reached leaves."""
    return logistic(decision_function(model, features))


def feature_importance(model: TreeEnsemble) -> tuple[dict, dict]:
    """Split counts per feature and their percentage of all splits."""
    counts = Counter(n.feature for tree in model.trees for n in tree if isinstance(n, Split))
    order = {name: i for i, name in enumerate(model.feature_names)}
    ordered = sorted(counts, key=lambda f: order.get(f, len(order)))
    counts = {f: counts[f] for f in ordered}
    total = sum(counts.values())
    percent = {f: 100.0 * c / total for f, c in counts.items()} if total else {}
    return counts, percent


def _rank_key(order):
    if order is None:
        return None
    return {name: i for i, name in enumerate(order)}


def eliminate_lowest(importances: Mapping[str, float], k: int = 10, order: Sequence[str] | None = None) -> list:
    """Drop the ``k`` least important features.

    Ties are broken by position in ``order`` (registry order by default for
    registered names, else insertion order): later features go first.
    Returns the surviving names in their original order.
    """
    names = list(importances)
    if not 0 <= k < len(names):
        raise InvalidArgument(f"cannot remove {k} of {len(names)} features", module="inference")
    if order is None:
        if all(registry.is_registered(n) for n in names):
            rank = {n: registry.registry_index(n) for n in names}
        else:
            rank = {n: i for i, n in enumerate(names)}
    else:
        rank = _rank_key(order)
        missing = [n for n in names if n not in rank]
        if missing:
            raise InvalidArgument(f"features absent from tie-break order: {missing}", module="inference")
    doomed = set(sorted(names, key=lambda n: (importances[n], -rank[n]))[:k])
    return [n for n in names if n not in doomed]


def eliminate_to(importances: Mapping[str, float], target: int, k: int = 10, order=None) -> list[list]:
    """Repeated elimination down to ``target`` features; the last step removes fewer if needed.

    Returns the surviving feature list after every step. Importances are
    static here: re-fitting between steps is the trainer's job.
    """
    if not 0 < target <= len(importances):
        raise InvalidArgument(f"target {target} outside (0, {len(importances)}]", module="inference")
    current = dict(importances)
    history = []
    while len(current) > target:
        step = min(k, len(current) - target)
        survivors = eliminate_lowest(current, step, order)
        current = {n: current[n] for n in survivors}
        history.append(survivors)
    return history
