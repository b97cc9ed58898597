import math

import numpy as np
import pytest

from adaptcast.adaptive import (
    LossPanel,
    SelectorConfig,
    decay_profile,
    filter_candidates,
    global_loss,
    local_loss,
    nearest_rank,
    penalty,
    run_selector,
    select,
    selections_frame,
    selections_from_frame,
)
from adaptcast.common import ConfigError, ValidationError
from adaptcast.model_zoo import ModelSpec


def test_local_loss_pieces():
    assert local_loss(0.5, 1.0, 3.0) == 0.0
    assert local_loss(2.0, 1.0, 3.0) == pytest.approx(0.5)
    assert local_loss(4.0, 1.0, 3.0) == pytest.approx(4.0)
    with pytest.raises(ValidationError):
        local_loss(-0.1, 1.0, 3.0)


def test_local_loss_is_smooth_at_the_knots(rng):
    eps, h = 1e-14, 1e-6
    for _ in range(100):
        c1, c2 = np.sort(rng.uniform(0.01, 5, 2))
        for knot, slope in ((c1, 0.0), (c2, c2 - c1)):
            assert local_loss(knot + eps, c1, c2) == pytest.approx(local_loss(knot - eps, c1, c2), abs=1e-12)
            central = (local_loss(knot + h, c1, c2) - local_loss(knot - h, c1, c2)) / (2 * h)
            assert central == pytest.approx(slope, abs=1e-6)


def test_nearest_rank():
    values = np.array([4.0, 1.0, 3.0, 2.0])
    assert [nearest_rank(values, q) for q in (0.25, 0.5, 0.75)] == [1.0, 2.0, 3.0]
    assert nearest_rank(np.arange(1.0, 11.0), 0.25) == 3.0
    with pytest.raises(ValidationError):
        nearest_rank(np.array([]), 0.5)


def test_global_loss_flat_decay():
    assert global_loss([0.3] * 48, 1.0, 0.0, 10.0) == pytest.approx(48 * 0.3**2 / 2)
    # newest term carries weight 1
    assert global_loss([1.0, 0.0], 0.5, 0.0, 10.0) == pytest.approx(0.25)
    assert global_loss([0.0, 1.0], 0.5, 0.0, 10.0) == pytest.approx(0.5)


def test_filter_band_edges():
    mask = filter_candidates([1.05, 1.0499, 0.951, 0.949, np.nan, -1.0], 1.0)
    assert mask.tolist() == [False, True, True, False, False, False]
    with pytest.raises(ValidationError):
        filter_candidates([1.0], 0.0)


def test_filter_band_is_monotone(rng):
    forecasts = rng.uniform(90, 110, 200)
    narrow = filter_candidates(forecasts, 100.0, 0.03)
    wide = filter_candidates(forecasts, 100.0, 0.05)
    assert not (narrow & ~wide).any()


def test_penalty_terms():
    a = ModelSpec(0, 12, 1, 1, 0)
    b = ModelSpec(0, 24, 1, 1, 0)
    assert penalty(a, None, 1, 10.0) == 0.0
    assert penalty(a, b, 0, 10.0) == 0.0
    # c4 = l*/168: one unit per bracket of window change
    assert penalty(a, b, 1, 168.0) == pytest.approx(12.0)
    assert penalty(ModelSpec(0, 12, 2, 1, 0), a, 1, 10.0) == pytest.approx(1.0)
    moved = ModelSpec(0, 48, 2, 2, 0)
    prev = ModelSpec(0, 48, 1, 1, 0)
    # type 3 drops the p+q term when d changes
    assert penalty(moved, prev, 3, 8.0) == pytest.approx(-0.5 * 8.0)
    assert penalty(moved, prev, 2, 8.0) == pytest.approx(1.0 - 0.5 * 8.0)
    assert penalty(ModelSpec(0, 12, 1, 1, 0), a, 2, 72.0) == pytest.approx(-36.0)


def test_decay_profile():
    frame = decay_profile().set_index("lambda")
    assert frame.loc[0.8, "half_period"] == pytest.approx(3.106, abs=1e-3)
    assert frame.loc[0.95, "half_period"] == pytest.approx(13.513, abs=1e-3)
    assert math.isinf(frame.loc[1.0, "half_period"])
    assert frame.loc[1.0, "oldest_weight"] == 1.0
    with pytest.raises(ValidationError):
        decay_profile([1.5])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"mode": "group13", "penalty_type": 1},
        {"mode": "group14", "penalty_type": 0},
        {"mode": "group15"},
        {"lam": 0.0},
        {"lam": 1.2},
        {"c1": 0.3},
        {"c1": 0.5, "c2": 0.5},
        {"c1": 0.75, "c2": 0.25},
        {"loss_window": 0},
        {"filter_band": 0.0},
    ],
)
def test_selector_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        SelectorConfig(**kwargs)


def test_selector_code_and_fractions():
    cfg = SelectorConfig(mode="group14", penalty_type=2, lam=0.9, c4_frac=-0.5)
    assert cfg.code == "MG14_25+75_type-2_0.9"
    assert cfg.fractions == {"c3": 1 / 8, "c4": -0.5, "c5": -1 / 2}
    assert SelectorConfig().fractions == {}
    assert SelectorConfig(loss_window=5).effective_warmup == 5


def _oracle(abs_err, forecasts, y_now, specs, cfg):
    n_models, n_times = abs_err.shape
    c1 = [nearest_rank(abs_err[:, k], cfg.c1) for k in range(n_times)]
    c2 = [nearest_rank(abs_err[:, k], cfg.c2) for k in range(n_times)]
    picks = []
    previous = None
    for k in range(cfg.effective_warmup, n_times):
        lo = max(0, k - cfg.loss_window)
        best, best_obj = None, None
        scores = {}
        for h in range(n_models):
            if abs(forecasts[h, k] / y_now - 1.0) >= cfg.filter_band:
                continue
            scores[h] = global_loss(abs_err[h, lo:k], cfg.lam, c1[lo:k], c2[lo:k])
        if not scores:
            picks.append(None)
            continue
        l_star = min(scores.values())
        for h, g in scores.items():
            obj = g
            if cfg.mode == "group14":
                obj += penalty(specs[h], previous, cfg.penalty_type, l_star, cfg.fractions)
            if best_obj is None or obj < best_obj:
                best, best_obj = h, obj
        picks.append(specs[best])
        previous = specs[best]
    return picks


def test_selector_matches_brute_force(rng, table_factory):
    for trial in range(50):
        n_times = 14
        abs_err = rng.uniform(0, 3, size=(10, n_times))
        # a few forecasts far enough away to fail the band
        far = rng.random((10, n_times)) < 0.1
        abs_err[far] = 8.0
        table = table_factory(abs_err)
        mode = "group13" if trial % 2 == 0 else "group14"
        cfg = SelectorConfig(
            name=f"trial{trial}",
            mode=mode,
            penalty_type=0 if mode == "group13" else int(rng.integers(1, 4)),
            lam=float(rng.choice([0.8, 0.9, 0.95, 1.0])),
            c1=0.25,
            c2=float(rng.choice([0.5, 0.75])),
            loss_window=int(rng.integers(3, 8)),
        )
        records = run_selector(table, cfg)
        expected = _oracle(np.abs(table.errors), table.forecasts, 100.0, table.specs, cfg)
        assert [r.spec for r in records] == expected
        assert [r.t for r in records] == list(range(cfg.effective_warmup, n_times))


def test_dominated_model_is_never_chosen(rng, table_factory):
    base = rng.uniform(0.5, 3, size=(4, 20))
    base[1] = base[0] * 1.5 + 0.1
    table = table_factory(base)
    dominated = table.specs[1]
    records = run_selector(table, SelectorConfig(loss_window=4, c1=0.25, c2=0.5))
    assert all(r.spec != dominated for r in records)


@pytest.mark.parametrize("lam", [0.8, 0.9, 1.0])
def test_uniformly_best_model_is_always_chosen(rng, table_factory, lam):
    n_times = 20
    others = [0, 1, 2, 4, 5]
    base = np.empty((6, n_times))
    base[3] = 0.5 + rng.uniform(0, 0.1, n_times)
    for j, row in enumerate(others):
        # one competitor per column sits at C1 and scores zero there
        base[row] = 1.0 + 0.5 * ((j + np.arange(n_times)) % 5) + rng.uniform(0, 0.1, n_times)
    table = table_factory(base)
    records = run_selector(table, SelectorConfig(lam=lam, loss_window=5))
    assert records
    assert all(r.spec == table.specs[3] and r.loss == 0.0 for r in records)


def test_ties_go_to_the_first_model(table_factory):
    errors = np.tile([[1.0], [1.0], [2.0]], (1, 6))
    table = table_factory(errors)
    record = select(5, table, SelectorConfig(loss_window=3))
    assert record.spec == table.specs[0]
    assert record.filter_size == 3


def test_large_window_reward_picks_the_shortest_window(table_factory):
    specs = [ModelSpec(0, w, 0, 1, 0) for w in (12, 24, 48, 96)]
    cols = [[4.0, 3.0, 2.0, 1.0] if k % 2 else [4.0, 3.0, 1.0, 2.0] for k in range(10)]
    table = table_factory(np.array(cols).T, specs=specs)
    cfg = SelectorConfig(mode="group14", penalty_type=2, c4_frac=-1000.0, loss_window=4)
    records = run_selector(table, cfg)
    assert records[0].spec.w in (48, 96)
    assert all(r.spec.w == 12 for r in records[1:])


def test_fallback_when_everything_is_filtered(table_factory):
    abs_err = np.ones((3, 6))
    abs_err[:, 5] = 50.0
    table = table_factory(abs_err)
    records = run_selector(table, SelectorConfig(loss_window=3))
    assert [r.fallback for r in records] == [False, False, True]
    assert records[-1].forecast == 100.0
    assert records[-1].filter_size == 0

    frame = selections_frame(records)
    assert frame["fallback"].tolist() == [0, 0, 1]
    back = selections_from_frame(frame)
    assert [r.spec for r in back] == [r.spec for r in records]


def test_selector_guards(table_factory):
    table = table_factory(np.ones((3, 4)))
    assert run_selector(table, SelectorConfig(loss_window=10)) == []
    with pytest.raises(ValidationError):
        select(0, table, SelectorConfig())
    shuffled = table.subset(list(reversed(table.specs)))
    with pytest.raises(ValidationError):
        run_selector(shuffled, SelectorConfig(loss_window=2))


def test_panel_fills_missing_errors_with_the_median(table_factory):
    abs_err = np.array([[1.0, 1.0], [2.0, np.nan], [3.0, 3.0]])
    table = table_factory(abs_err)
    panel = LossPanel.build(table, 0.25, 0.75)
    assert panel.c1[1] == 1.0 and panel.c2[1] == 3.0
    # the missing cell takes the median of the present errors
    assert panel.losses[1, 1] == pytest.approx(local_loss(2.0, 1.0, 3.0))
