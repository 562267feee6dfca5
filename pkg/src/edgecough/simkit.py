"""Trace-driven energy/runtime estimation, threshold sweeps and Pareto fronts."""

from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, InvalidArgument
from .evaluation import match_events, metrics
from .ingest import as_intervals
from .postproc import EventAccumulator, PhysioConstants, segment_power_peaks
from .scheduler import (AUDIO, KINEMATIC, ExecutionTrace, SchedulerConfig, _audio_config_for, _check_model,
                        _ModelProb, drive)


@dataclass(frozen=True)
class ModelCost:
    energy_j: float
    runtime_s: float

    def __post_init__(self):
        if self.energy_j < 0 or self.runtime_s < 0:
            raise ConfigError("per-window costs must be non-negative", module="simkit")


@dataclass(frozen=True)
class CostTable:
    models: Mapping[str, ModelCost]
    idle_w: float = 0.0
    notes: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.idle_w < 0:
            raise ConfigError("idle power must be non-negative", module="simkit")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CostTable":
        models = {}
        for name in (AUDIO, KINEMATIC):
            if name in doc:
                entry = doc[name]
                try:
                    models[name] = ModelCost(float(entry["energy_j"]), float(entry["runtime_s"]))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"cost entry for {name!r} is malformed ({exc})", module="simkit") from exc
        notes = {k: v for k, v in doc.items() if k not in (AUDIO, KINEMATIC, "idle_w")}
        return cls(models, float(doc.get("idle_w", 0.0)), notes)

    @classmethod
    def load(cls, path) -> "CostTable":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}", module="simkit") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = {name: asdict(c) for name, c in self.models.items()}
        doc["idle_w"] = self.idle_w
        doc.update(self.notes)
        return doc


def reference_cost_table() -> CostTable:
    """Per-window costs derived from published whole-test-set totals (see the file's notes)."""
    text = resources.files("edgecough").joinpath("data/reference_costs.json").read_text()
    return CostTable.from_dict(json.loads(text))


@dataclass(frozen=True)
class Estimate:
    energy_j: float
    runtime_s: float
    counts: Mapping[str, int]
    shares: Mapping[str, float]  # percent of entries
    duration_s: float = 0.0

    @property
    def duty_cycle(self) -> float:
        return self.runtime_s / self.duration_s if self.duration_s > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "energy_j": self.energy_j,
            "runtime_s": self.runtime_s,
            "counts": dict(self.counts),
            "shares_pct": dict(self.shares),
            "duration_s": self.duration_s,
            "duty_cycle": self.duty_cycle,
        }


def estimate(trace: ExecutionTrace, costs: CostTable) -> Estimate:
    counts = {}
    for e in trace.entries:
        counts[e.model] = counts.get(e.model, 0) + 1
    missing = sorted(set(counts) - set(costs.models))
    if missing:
        raise ConfigError(f"cost table has no entry for model(s): {', '.join(missing)}", module="simkit")
    energy = sum(costs.models[m].energy_j * n for m, n in counts.items())
    runtime = sum(costs.models[m].runtime_s * n for m, n in counts.items())
    if costs.idle_w:
        energy += costs.idle_w * max(0.0, trace.duration - runtime)
    total = sum(counts.values())
    shares = {m: 100.0 * counts.get(m, 0) / total if total else 0.0 for m in (AUDIO, KINEMATIC)}
    return Estimate(energy, runtime, {m: counts.get(m, 0) for m in (AUDIO, KINEMATIC)}, shares, trace.duration)


def energy_saving(baseline_j: float, candidate_j: float) -> float:
    """Percentage of baseline energy saved by the candidate."""
    if baseline_j <= 0:
        raise InvalidArgument("baseline energy must be positive", module="simkit")
    return 100.0 * (1.0 - candidate_j / baseline_j)


# --- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class GridPoint:
    mode: str
    n_windows_max: int
    th_kin: float
    th_audio: float

    def config(self, base: SchedulerConfig) -> SchedulerConfig:
        return SchedulerConfig(self.mode, self.n_windows_max, self.th_kin, self.th_audio,
                               base.audio_window, base.audio_hop, base.kin_window, base.kin_hop)


def threshold_axis(lo=0.05, hi=0.5, step=0.05) -> tuple:
    n = int(round((hi - lo) / step)) + 1
    return tuple(round(lo + k * step, 10) for k in range(n))


@dataclass(frozen=True)
class Grid:
    modes: tuple = ("rerun",)
    n_windows_max: tuple = (4,)
    th_kin: tuple = threshold_axis()
    th_audio: tuple = threshold_axis()

    def points(self) -> list[GridPoint]:
        pts = {GridPoint(m, int(n), float(k), float(a))
               for m, n, k, a in itertools.product(self.modes, self.n_windows_max, self.th_kin, self.th_audio)}
        return sorted(pts, key=lambda p: (p.mode, p.n_windows_max, p.th_kin, p.th_audio))


class SweepSession:
    """One recording reduced to cached per-window probabilities and regions.

    ``kin_prob`` / ``audio_prob`` map a window start to a probability;
    ``regions`` maps an audio window start to its raw cough regions. All
    three are memoised so repeated grid points reuse earlier work.
    """

    def __init__(self, duration: float, kin_prob: Callable, audio_prob: Callable,
                 regions: Optional[Callable] = None, truth=(), t0: float = 0.0):
        self.duration = duration
        self.t0 = t0
        self.truth = as_intervals(truth)
        self._kin, self._audio, self._regions = kin_prob, audio_prob, regions
        self._cache = {KINEMATIC: {}, AUDIO: {}, "regions": {}}

    def _memo(self, kind, fn, t):
        cache = self._cache[kind]
        if t not in cache:
            cache[t] = fn(t)
        return cache[t]

    def kin_prob(self, t):
        return self._memo(KINEMATIC, self._kin, t)

    def audio_prob(self, t):
        return self._memo(AUDIO, self._audio, t)

    def regions(self, t):
        return self._memo("regions", self._regions, t) if self._regions else []

    def run(self, config: SchedulerConfig, constants: PhysioConstants = PhysioConstants()):
        trace = drive(config, self.duration, self.kin_prob, self.audio_prob, self.t0)
        acc = EventAccumulator(constants)
        for e in trace.entries:
            if e.model == AUDIO and e.is_cough:
                acc.add(r for r in self.regions(e.t_start) if r.t_peak >= acc.last_boundary)
        return trace, acc.finish()


def session_from_streams(audio, kinematic, audio_model, kin_model, truth=(), meta=None,
                         audio_config=None, base: SchedulerConfig = SchedulerConfig()) -> SweepSession:
    _check_model(audio_model, AUDIO, base.audio_window, audio.fs)
    _check_model(kin_model, KINEMATIC, base.kin_window, kinematic.fs)
    audio_fn = _ModelProb(audio_model, audio, base.audio_window, meta, _audio_config_for(audio_model, audio_config))
    kin_fn = _ModelProb(kin_model, kinematic, base.kin_window, meta)
    t0 = max(audio.t0, kinematic.t0)
    duration = min(audio.t0 + audio.duration, kinematic.t0 + kinematic.duration) - t0
    return SweepSession(max(duration, 0.0), kin_fn, audio_fn, _WindowRegions(audio_fn), truth, t0)


class _WindowRegions:
    # picklable stand-in for a closure, so sessions can cross process boundaries
    def __init__(self, prob_fn):
        self.prob_fn = prob_fn

    def __call__(self, t):
        return segment_power_peaks(self.prob_fn.window(t))


@dataclass(frozen=True)
class SweepRow:
    mode: str
    n_windows_max: int
    th_kin: float
    th_audio: float
    f1: float
    energy_j: float
    audio_share: float
    kinematic_share: float


def _evaluate(point: GridPoint, sessions: Sequence[SweepSession], costs: CostTable,
              base: SchedulerConfig, constants: PhysioConstants) -> SweepRow:
    cfg = point.config(base)
    f1s, energy = [], 0.0
    counts = {AUDIO: 0, KINEMATIC: 0}
    for s in sessions:
        trace, events = s.run(cfg, constants)
        est = estimate(trace, costs)
        energy += est.energy_j
        for m in counts:
            counts[m] += est.counts[m]
        hours = s.duration / 3600.0
        if hours > 0:
            f1s.append(metrics(match_events(events, s.truth), hours).f1)
    total = sum(counts.values())
    audio_share = 100.0 * counts[AUDIO] / total if total else 0.0
    kin_share = 100.0 - audio_share if total else 0.0
    return SweepRow(point.mode, point.n_windows_max, point.th_kin, point.th_audio,
                    float(np.mean(f1s)) if f1s else 0.0, energy, audio_share, kin_share)


def _evaluate_chunk(args):
    points, sessions, costs, base, constants = args
    return [_evaluate(p, sessions, costs, base, constants) for p in points]


def sweep(sessions: Sequence[SweepSession], grid, costs: CostTable, base: SchedulerConfig = SchedulerConfig(),
          constants: PhysioConstants = PhysioConstants(), jobs: int = 1) -> list[SweepRow]:
    """One deterministic multimodal run per grid point; rows come back in canonical grid order."""
    points = grid.points() if isinstance(grid, Grid) else sorted(
        set(grid), key=lambda p: (p.mode, p.n_windows_max, p.th_kin, p.th_audio))
    if not points:
        raise InvalidArgument("sweep grid is empty", module="simkit")
    if not sessions:
        raise InvalidArgument("sweep needs at least one session", module="simkit")
    if jobs <= 1 or len(points) == 1:
        return [_evaluate(p, sessions, costs, base, constants) for p in points]
    chunks = [points[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(_evaluate_chunk, [(c, sessions, costs, base, constants) for c in chunks]))
    by_point = {}
    for chunk, rows in zip(chunks, results):
        by_point.update(zip(chunk, rows))
    return [by_point[p] for p in points]


def pareto_front(rows: Sequence, f1: Callable = lambda r: r.f1, energy: Callable = lambda r: r.energy_j) -> list:
    """Rows not dominated in (F1 up, energy down); input order is preserved.

    Sort by energy and sweep: a row survives when it has the best F1 of its
    energy level and beats every strictly cheaper row.
    """
    order = sorted(range(len(rows)), key=lambda i: energy(rows[i]))
    keep = set()
    best_cheaper = -np.inf
    i = 0
    while i < len(order):
        j = i
        e = energy(rows[order[i]])
        while j < len(order) and energy(rows[order[j]]) == e:
            j += 1
        group = order[i:j]
        top = max(f1(rows[k]) for k in group)
        if top > best_cheaper:
            keep.update(k for k in group if f1(rows[k]) == top)
        best_cheaper = max(best_cheaper, top)
        i = j
    return [rows[k] for k in range(len(rows)) if k in keep]


SWEEP_COLUMNS = ("mode", "n_windows_max", "th_kin", "th_audio", "f1", "energy_j", "audio_share", "kinematic_share")


def sweep_csv(rows: Sequence[SweepRow], mark_pareto: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS + (("pareto",) if mark_pareto else ()))
    front = {id(r) for r in pareto_front(rows)} if mark_pareto else set()
    for r in rows:
        values = [getattr(r, c) for c in SWEEP_COLUMNS]
        cells = [f"{v:.6g}" if isinstance(v, float) else str(v) for v in values]
        if mark_pareto:
            cells.append("1" if id(r) in front else "0")
        writer.writerow(cells)
    return buf.getvalue()


def savings_report(totals: Mapping[str, float], baseline: str = "audio") -> dict:
    """Savings of every configuration against the baseline total."""
    if baseline not in totals:
        raise InvalidArgument(f"baseline {baseline!r} missing from totals", module="simkit")
    base = totals[baseline]
    return {name: round(energy_saving(base, value), 6) for name, value in totals.items()}
