import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgecough.errors import ConfigError, InvalidArgument
from edgecough.inference import ensemble_from_dict
from edgecough.scheduler import (AUDIO, COUGH, KINEMATIC, NON_COUGH, ExecutionTrace, SchedulerConfig, SchedulerState,
                                 TraceEntry, drive, drive_single, next_grid_point, run_session, run_single_model, step)

EPS = 1e-9


def scripted(seed, p_kin=0.3, p_audio=0.6):
    """Independent seeded probability streams for the two models."""
    rng = np.random.default_rng(seed)
    cache = {}

    def make(p_hit):
        def prob(t):
            key = (p_hit, round(t, 6))
            if key not in cache:
                cache[key] = float(rng.uniform(0.5, 1.0) if rng.random() < p_hit else rng.uniform(0.0, 0.04))
            return cache[key]
        return prob

    return make(p_kin), make(p_audio)


def check_trace(trace, config, t0=0.0):
    """Assert every scheduler trace invariant; returns the number of audio runs."""
    entries = trace.entries
    end = t0 + trace.duration
    last = {}
    for e in entries:
        win = config.audio_window if e.model == AUDIO else config.kin_window
        assert abs((e.t_end - e.t_start) - win) < EPS
        assert e.t_start >= t0 - EPS and e.t_end <= end + EPS
        assert e.decision == (COUGH if e.probability >= (config.th_audio if e.model == AUDIO else config.th_kin)
                              else NON_COUGH)
        if e.model in last:
            assert e.t_start > last[e.model] + EPS
        last[e.model] = e.t_start
    for a, b in zip(entries, entries[1:]):
        assert b.t_start >= a.t_start - EPS or (a.model == AUDIO and b.model == KINEMATIC)
    runs = 0
    i = 0
    while i < len(entries):
        if entries[i].model != AUDIO:
            i += 1
            continue
        trigger = entries[i - 1]
        assert i > 0 and trigger.model == KINEMATIC and trigger.is_cough
        j = i
        while j < len(entries) and entries[j].model == AUDIO:
            j += 1
        run = entries[i:j]
        assert len(run) <= config.n_windows_max
        cut_off = j == len(entries) and run[-1].t_start + config.audio_hop + config.audio_window > end + EPS
        if len(run) < config.n_windows_max and not cut_off:
            assert not run[-1].is_cough
        assert all(e.is_cough for e in run[:-1])
        if config.mode == "rerun":
            assert abs(run[0].t_start - trigger.t_start) < EPS
            assert run[0].t_start <= trigger.t_start < run[0].t_end
        else:
            assert abs(run[0].t_start - trigger.t_end) < EPS
            assert all(e.t_start >= trigger.t_end - EPS for e in run)
        for x, y in zip(run, run[1:]):
            assert abs(y.t_start - x.t_start - config.audio_hop) < EPS
        if j < len(entries):
            nxt = entries[j].t_start
            assert nxt >= run[-1].t_end - EPS
            assert abs((nxt - t0) / config.kin_hop - round((nxt - t0) / config.kin_hop)) < 1e-6
        runs += 1
        i = j
    return runs


class TestStep:
    def test_rerun_anchor(self):
        cfg = SchedulerConfig(mode="rerun")
        state, entry = step(SchedulerState(next_window_start=3.0), cfg, 0.9)
        assert entry == TraceEntry(3.0, 3.5, KINEMATIC, 0.9, COUGH)
        assert state.active_model == AUDIO and state.next_window_start == 3.0

    def test_no_rerun_anchor(self):
        state, _ = step(SchedulerState(next_window_start=3.0), SchedulerConfig(mode="no_rerun"), 0.9)
        assert state.active_model == AUDIO and state.next_window_start == 3.5

    def test_threshold_inclusive(self):
        state, entry = step(SchedulerState(), SchedulerConfig(), 0.05)
        assert entry.is_cough and state.active_model == AUDIO

    def test_cap_at_four(self):
        cfg = SchedulerConfig(n_windows_max=4)
        state, _ = step(SchedulerState(), cfg, 0.9)
        models = []
        for _ in range(5):
            p = 0.9
            state, entry = step(state, cfg, p)
            models.append(entry.model)
        assert models == [AUDIO] * 4 + [KINEMATIC]

    def test_non_cough_ends_run_and_resumes_on_grid(self):
        cfg = SchedulerConfig()
        state, _ = step(SchedulerState(next_window_start=1.0), cfg, 0.9)
        state, entry = step(state, cfg, 0.1)
        assert entry.model == AUDIO and not entry.is_cough
        assert state.active_model == KINEMATIC
        assert state.next_window_start == 2.0  # audio [1.0, 1.8) -> lattice point 2.0

    @pytest.mark.parametrize("p", [-0.01, 1.01, float("nan")])
    def test_bad_probability(self, p):
        with pytest.raises(InvalidArgument):
            step(SchedulerState(), SchedulerConfig(), p)

    def test_grid_point(self):
        assert next_grid_point(1.8, 0.0, 0.25) == 2.0
        assert next_grid_point(2.0, 0.0, 0.25) == 2.0
        assert next_grid_point(2.0000000001, 0.0, 0.25) == 2.0
        assert next_grid_point(1.1, 0.1, 0.25) == 1.1


class TestConfig:
    @pytest.mark.parametrize("kw", [{"mode": "sometimes"}, {"n_windows_max": 0}, {"n_windows_max": 2.5},
                                    {"th_kin": 1.5}, {"th_audio": -0.1}, {"audio_hop": 0.0},
                                    {"kin_hop": 0.6}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SchedulerConfig(**kw)

    def test_defaults(self):
        cfg = SchedulerConfig()
        assert (cfg.mode, cfg.n_windows_max, cfg.th_kin, cfg.th_audio) == ("rerun", 4, 0.05, 0.3)


class TestDrive:
    def test_never_triggered(self):
        trace = drive(SchedulerConfig(), 20.0, lambda t: 0.0, lambda t: 1.0)
        assert trace.count(AUDIO) == 0
        assert trace.count(KINEMATIC) == 79

    def test_always_triggered(self):
        cfg = SchedulerConfig(th_kin=0.0)
        full = drive(cfg, 20.0, lambda t: 0.0, lambda t: 1.0)
        share = full.count(AUDIO) / len(full.entries)
        for seed in range(20):
            _, audio = scripted(seed)
            trace = drive(cfg, 20.0, lambda t: 0.0, audio)
            assert trace.count(AUDIO) / len(trace.entries) <= share + EPS

    @pytest.mark.parametrize("mode", ["rerun", "no_rerun"])
    @pytest.mark.parametrize("n_max", [1, 2, 4, 7])
    def test_invariants(self, mode, n_max):
        cfg = SchedulerConfig(mode=mode, n_windows_max=n_max)
        runs = 0
        for seed in range(25):
            kin, audio = scripted(seed)
            runs += check_trace(drive(cfg, 30.0, kin, audio, t0=1.5), cfg, t0=1.5)
        assert runs > 0

    @given(st.integers(0, 2**32 - 1), st.sampled_from(["rerun", "no_rerun"]), st.integers(1, 6),
           st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=60)
    def test_invariants_property(self, seed, mode, n_max, th_kin, th_audio):
        cfg = SchedulerConfig(mode=mode, n_windows_max=n_max, th_kin=th_kin, th_audio=th_audio)
        rng = np.random.default_rng(seed)
        trace = drive(cfg, 12.0, lambda t: float(rng.random()), lambda t: float(rng.random()))
        check_trace(trace, cfg)

    def test_multimodal_audio_not_above_audio_only(self):
        for mode in ("rerun", "no_rerun"):
            cfg = SchedulerConfig(mode=mode, n_windows_max=6)
            for seed in range(30):
                kin, audio = scripted(seed, p_kin=0.8, p_audio=0.9)
                multi = drive(cfg, 25.0, kin, audio)
                only = drive_single(AUDIO, cfg, 25.0, audio)
                assert multi.count(AUDIO) <= only.count(AUDIO)

    def test_deterministic(self):
        cfg = SchedulerConfig()
        a = drive(cfg, 15.0, *scripted(3))
        b = drive(cfg, 15.0, *scripted(3))
        assert a.entries == b.entries

    def test_single_model_streams(self):
        cfg = SchedulerConfig()
        audio = drive_single(AUDIO, cfg, 4.0, lambda t: 0.5)
        assert [e.t_start for e in audio.entries] == [0.0, 0.4, 0.8, 1.2, 1.6, 2.0, 2.4, 2.8, 3.2]
        kin = drive_single(KINEMATIC, cfg, 4.0, lambda t: 0.0)
        assert kin.count(KINEMATIC) == len(kin.entries) == 15


class TestTraceFile:
    def test_roundtrip(self, tmp_path):
        trace = drive(SchedulerConfig(), 10.0, *scripted(1))
        trace.write(tmp_path / "t.jsonl")
        back = ExecutionTrace.read(tmp_path / "t.jsonl", duration=10.0)
        assert back.entries == trace.entries and back.duration == 10.0

    def test_inferred_duration(self):
        text = ExecutionTrace([TraceEntry(1.0, 1.5, KINEMATIC, 0.0, NON_COUGH),
                               TraceEntry(1.25, 1.75, KINEMATIC, 0.0, NON_COUGH)]).to_jsonl()
        assert ExecutionTrace.from_jsonl(text).duration == pytest.approx(0.75)

    def test_concatenation(self):
        a = ExecutionTrace([TraceEntry(0, 0.5, KINEMATIC, 0.0, NON_COUGH)], 1.0)
        b = ExecutionTrace([TraceEntry(0, 0.8, AUDIO, 0.9, COUGH)], 2.0)
        c = a + b
        assert len(c.entries) == 2 and c.duration == 3.0


class TestModelBacked:
    def test_session_windows_are_cough_audio(self, session3, models):
        cfg = SchedulerConfig()
        res = run_session(session3.audio, session3.kinematic, *models, cfg, session3.meta)
        check_trace(res.trace, cfg)
        coughs = [e for e in res.trace.entries if e.model == AUDIO and e.is_cough]
        assert [w.t_start for w in res.cough_windows] == [e.t_start for e in coughs]
        assert res.trace.duration == 10.0
        assert len(coughs) >= 3

    def test_quiet_session_never_runs_audio(self, models):
        from edgecough.fixtures import gen_session

        s = gen_session(seed=5, n_events=0, duration=6.0)
        res = run_session(s.audio, s.kinematic, *models, SchedulerConfig(), s.meta)
        assert res.trace.count(AUDIO) == 0 and res.cough_windows == []

    def test_single_model(self, session3, models):
        audio_model, kin_model = models
        cfg = SchedulerConfig()
        a = run_single_model(session3.audio, audio_model, cfg, session3.meta)
        k = run_single_model(session3.kinematic, kin_model, cfg, session3.meta)
        assert a.trace.count(AUDIO) == len(a.trace.entries) == 24
        assert k.trace.count(KINEMATIC) == len(k.trace.entries) == 39
        multi = run_session(session3.audio, session3.kinematic, *models, cfg, session3.meta)
        assert multi.trace.count(AUDIO) <= a.trace.count(AUDIO)

    def test_window_mismatch(self, session3, models):
        audio_model, kin_model = models
        doc = audio_model.to_dict()
        doc["window_len_s"] = 1.0
        with pytest.raises(ConfigError):
            run_session(session3.audio, session3.kinematic, ensemble_from_dict(doc), kin_model, SchedulerConfig())

    def test_swapped_models(self, session3, models):
        audio_model, kin_model = models
        with pytest.raises(ConfigError):
            run_session(session3.audio, session3.kinematic, kin_model, audio_model, SchedulerConfig())
