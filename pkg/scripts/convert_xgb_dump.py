#!/usr/bin/env python3
"""Convert an XGBoost JSON tree dump into the edgecough model format.

The dump is what ``Booster.get_dump(dump_format="json")`` returns, written
as a JSON list (one nested tree object per entry). XGBoost sends a sample to
the ``yes`` child when ``value < split_condition``, which matches the
evaluator here, and ``missing`` names the default branch.

Split names may be registry names already, or ``f<index>`` placeholders
resolved through ``--feature-names`` (one registry name per line, in the
column order used at training time).

Example::

    python scripts/convert_xgb_dump.py dump.json --modality audio \\
        --feature-names audio_features.txt --base-score 0.0 -o audio_model.json
"""

import argparse
import json
import math
import sys
from pathlib import Path

from edgecough.inference import ensemble_from_dict, save_model


def flatten(tree, names):
    """Nested dump node -> flat node list with the root at index 0."""
    order = []
    index = {}

    def visit(node):
        index[node["nodeid"]] = len(order)
        order.append(node)
        for child in node.get("children", ()):
            visit(child)

    visit(tree)
    flat = []
    for node in order:
        if "leaf" in node:
            flat.append({"leaf": float(node["leaf"])})
            continue
        name = node["split"]
        if names is not None and name.startswith("f") and name[1:].isdigit():
            name = names[int(name[1:])]
        entry = {"f": name, "t": float(node["split_condition"]),
                 "l": index[node["yes"]], "r": index[node["no"]]}
        if "missing" in node:
            entry["d"] = "l" if node["missing"] == node["yes"] else "r"
        flat.append(entry)
    return flat


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dump", help="JSON list of nested trees")
    ap.add_argument("--modality", choices=("audio", "kinematic"), required=True)
    ap.add_argument("--feature-names", help="text file, one registry name per line")
    ap.add_argument("--base-score", type=float, default=0.0,
                    help="log-odds offset (XGBoost stores base_score as a probability: pass logit(p))")
    ap.add_argument("--base-prob", type=float, help="base score as a probability; converted to log-odds")
    ap.add_argument("--window", type=float, help="window length in s (default 0.8 audio, 0.5 kinematic)")
    ap.add_argument("--fs", type=float, help="sampling rate in Hz (default 8000 audio, 100 kinematic)")
    ap.add_argument("-o", "--out", required=True)
    args = ap.parse_args(argv)

    trees = json.loads(Path(args.dump).read_text())
    names = None
    if args.feature_names:
        names = [ln.strip() for ln in Path(args.feature_names).read_text().splitlines() if ln.strip()]
    flat = [flatten(t, names) for t in trees]
    used = []
    for tree in flat:
        for node in tree:
            if "f" in node and node["f"] not in used:
                used.append(node["f"])
    base = args.base_score
    if args.base_prob is not None:
        base = math.log(args.base_prob / (1.0 - args.base_prob))
    audio = args.modality == "audio"
    doc = {
        "modality": args.modality,
        "base_score": base,
        "window_len_s": args.window or (0.8 if audio else 0.5),
        "fs_hz": args.fs or (8000.0 if audio else 100.0),
        "feature_names": used,
        "trees": flat,
    }
    model = ensemble_from_dict(doc, args.dump)
    save_model(model, args.out)
    print(f"{len(flat)} trees, {model.n_nodes} nodes, {len(used)} features -> {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
