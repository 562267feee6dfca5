import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgecough import registry
from edgecough.errors import InferenceError, InvalidArgument, ModelLoadError
from edgecough.inference import (ensemble_from_dict, eliminate_lowest, eliminate_to, feature_importance, load_model,
                                 predict_proba, save_model)

F = "audio/time/rms"
G = "audio/time/zcr"


def stump(feature=F, t=1.0, lo=-2.0, hi=2.0, base=0.0, default="l"):
    node = {"f": feature, "t": t, "l": 1, "r": 2}
    if default:
        node["d"] = default
    return {"modality": "audio", "base_score": base, "feature_names": [feature],
            "trees": [[node, {"leaf": lo}, {"leaf": hi}]]}


def random_ensemble(rng, names, n_trees=5, depth=3):
    trees = []
    for _ in range(n_trees):
        nodes = []

        def grow(d):
            i = len(nodes)
            nodes.append(None)
            if d == depth or rng.random() < 0.2:
                nodes[i] = {"leaf": float(rng.normal())}
            else:
                left = grow(d + 1)
                right = grow(d + 1)
                nodes[i] = {"f": str(rng.choice(names)), "t": float(rng.normal()), "l": left, "r": right, "d": "l"}
            return i

        grow(0)
        trees.append(nodes)
    return {"modality": "audio", "base_score": float(rng.normal()), "feature_names": list(names), "trees": trees}


class TestLoad:
    def test_stump(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps(stump()))
        m = load_model(p)
        assert len(m.trees) == 1 and m.n_nodes == 3

    def test_mask_contains_split_features(self):
        m = ensemble_from_dict(stump("audio/mel60/max"))
        assert "audio/mel60/max" in m.mask

    def test_declared_extras_in_mask(self):
        doc = stump()
        doc["feature_names"].append(G)
        assert ensemble_from_dict(doc).mask == {F, G}

    def test_roundtrip(self, tmp_path, rng):
        m = ensemble_from_dict(random_ensemble(rng, [F, G]))
        save_model(m, tmp_path / "m.json")
        assert load_model(tmp_path / "m.json") == m

    def test_child_out_of_range(self):
        doc = stump()
        doc["trees"][0][0]["r"] = 7
        with pytest.raises(ModelLoadError, match="out of range"):
            ensemble_from_dict(doc)

    def test_cycle(self):
        doc = stump()
        doc["trees"][0][0]["r"] = 0
        with pytest.raises(ModelLoadError, match="twice"):
            ensemble_from_dict(doc)

    def test_unknown_feature(self):
        with pytest.raises(ModelLoadError, match="audio/nope"):
            ensemble_from_dict(stump("audio/nope"))

    def test_undeclared_split_feature(self):
        doc = stump()
        doc["feature_names"] = []
        with pytest.raises(ModelLoadError, match=F):
            ensemble_from_dict(doc)

    def test_bad_json_reports_line(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{\n"trees": [\n}')
        with pytest.raises(ModelLoadError, match="line 3"):
            load_model(p)


class TestPredict:
    def test_empty_ensemble(self):
        m = ensemble_from_dict({"modality": "audio", "base_score": 0.0, "trees": []})
        assert predict_proba(m, {}) == 0.5

    def test_hand_traced_stump(self):
        m = ensemble_from_dict(stump())
        assert predict_proba(m, {F: 5.0}) == pytest.approx(1 / (1 + math.exp(-2)))
        assert predict_proba(m, {F: 5.0}) == pytest.approx(0.8808, abs=1e-4)
        assert predict_proba(m, {F: 0.5}) == pytest.approx(1 / (1 + math.exp(2)))

    def test_strict_less_goes_left(self):
        m = ensemble_from_dict(stump())
        assert predict_proba(m, {F: 1.0}) > 0.5

    def test_missing_uses_default(self):
        m = ensemble_from_dict(stump(default="r"))
        assert predict_proba(m, {}) > 0.5
        assert predict_proba(m, {F: float("nan")}) > 0.5

    def test_missing_without_default(self):
        with pytest.raises(InferenceError, match=F):
            predict_proba(ensemble_from_dict(stump(default=None)), {})

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-1e6, 1e6))
    def test_bounded_and_monotone_in_leaf(self, lo, bump, x):
        a = ensemble_from_dict(stump(lo=lo))
        b = ensemble_from_dict(stump(lo=lo + abs(bump)))
        p = predict_proba(a, {F: x})
        assert 0.0 <= p <= 1.0
        if x < 1.0:
            assert predict_proba(b, {F: x}) >= p

    def test_monotone_in_base_score(self):
        ps = [predict_proba(ensemble_from_dict(stump(base=b)), {F: 0.0}) for b in np.linspace(-5, 5, 11)]
        assert all(x < y for x, y in zip(ps, ps[1:]))

    def test_deterministic(self, rng):
        m = ensemble_from_dict(random_ensemble(rng, [F, G]))
        x = {F: 0.3, G: -0.1}
        assert predict_proba(m, x) == predict_proba(m, dict(x))


class TestImportance:
    def test_stump(self):
        counts, pct = feature_importance(ensemble_from_dict(stump()))
        assert counts == {F: 1} and pct == {F: 100.0}

    def test_two_trees(self):
        tree = [{"f": F, "t": 0, "l": 1, "r": 2, "d": "l"}, {"leaf": 0},
                {"f": G, "t": 0, "l": 3, "r": 4, "d": "l"}, {"leaf": 0}, {"leaf": 1}]
        m = ensemble_from_dict({"modality": "audio", "feature_names": [F, G], "trees": [tree, tree]})
        counts, pct = feature_importance(m)
        assert counts == {F: 2, G: 2}
        assert pct == {F: 50.0, G: 50.0}

    def test_random_against_node_walk(self, rng):
        names = list(registry.audio_feature_names()[:12])
        for _ in range(20):
            doc = random_ensemble(rng, names, n_trees=8, depth=4)
            counts, pct = feature_importance(ensemble_from_dict(doc))
            ref = {}
            for tree in doc["trees"]:
                for node in tree:
                    if "f" in node:
                        ref[node["f"]] = ref.get(node["f"], 0) + 1
            assert counts == ref
            assert sum(counts.values()) == sum("f" in n for t in doc["trees"] for n in t)
            if counts:
                assert sum(pct.values()) == pytest.approx(100.0)


class TestEliminate:
    def test_distinct(self):
        names = list(registry.audio_feature_names()[:20])
        imp = {n: i for i, n in enumerate(names)}
        assert eliminate_lowest(imp, 10) == names[10:]

    def test_ties_drop_last_in_registry_order(self):
        names = list(registry.audio_feature_names()[:20])
        imp = {n: 1 for n in reversed(names)}
        assert set(eliminate_lowest(imp, 10)) == set(names[:10])

    def test_k_too_large(self):
        with pytest.raises(InvalidArgument):
            eliminate_lowest({F: 1, G: 2}, 2)

    def test_down_to_84(self, rng):
        names = registry.audio_feature_names("mel")
        imp = {n: int(rng.integers(0, 50)) for n in names}
        history = eliminate_to(imp, 84)
        assert [len(h) for h in history] == list(range(283, 84, -10)) + [84]
        assert all(set(b) <= set(a) for a, b in zip(history, history[1:]))
