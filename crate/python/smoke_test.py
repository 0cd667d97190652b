"""Smoke test for the smartkde_py extension module.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import math
import random

import smartkde_py as sk

S2 = 336


def synthetic_week_profile(weeks, seed=3):
    rng = random.Random(seed)
    values = []
    for t in range(weeks * S2):
        slot = t % 48
        base = 1.0 if 34 <= slot < 44 else 0.3
        values.append(base * (0.8 + 0.4 * rng.random()))
    return values


def main():
    raw = sk.Series("m1", "2010-01-04T00:00", synthetic_week_profile(10))
    assert len(raw) == 10 * S2
    assert raw.period_of_week(0) == 1

    in_sample = 9 * S2
    series = raw.standardize(0, in_sample)
    assert abs(max(series.values[:in_sample]) - 1.0) < 1e-12
    grid = sk.Grid.from_values(series.values[:in_sample])
    assert len(grid.points) == 100

    params = sk.MethodParams.published("CKD-IC", "residential")
    origin = in_sample - 1
    week = sk.forecast_week(series, grid, params, origin)
    assert len(week) == S2 and week[0].horizon == 1
    f = week[0]
    assert abs(f.cdf_values[-1] - 1.0) < 1e-9
    assert f.quantile(0.05) <= f.median() <= f.quantile(0.95)
    observed = series.values[origin + 1]
    assert 0.0 <= f.crps(observed) < 1.0
    assert sk.coverage([0.5, 0.6], [0.1, 0.2]) == 100.0

    hwt = sk.HwtParams(0.01, 0.05, 0.1, 0.5, 0.05)
    hwt_week = sk.hwt_forecast(series, hwt, grid, origin, iterations=200, seed=7)
    again = sk.hwt_forecast(series, hwt, grid, origin, iterations=200, seed=7)
    assert [x.cdf_values for x in hwt_week] == [x.cdf_values for x in again]

    tariffs = {t.name: t for t in sk.tariff_catalog()}
    assert tariffs["A"].rate_at("2010-03-02T18:00") == 20.0
    first = series.timestamp(origin + 1)
    costs = [(name, sk.weekly_cost(week, first, t, raw_scale(series), samples=2000, seed=1))
             for name, t in tariffs.items()]
    chosen = sk.select_tariff(costs, "mean")
    assert chosen in tariffs
    assert all(math.isfinite(c.quantile(0.95)) for _, c in costs)

    try:
        sk.MethodParams("KD-X", 0.01)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print(f"ok: CRPS {f.crps(observed):.4f}, cheapest tariff by mean cost {chosen}")


def raw_scale(series):
    return series.max_raw if series.max_raw is not None else 1.0


if __name__ == "__main__":
    main()
