"""Smoke test for the pyshopent extension.

Build and install first:

    pip install maturin
    maturin develop -m crates/py/Cargo.toml --release

then run `python python/smoke_test.py`.
"""

import json
import math

import pyshopent as se

SPEC = {
    "cohorts": [
        {
            "name": "routine",
            "count": 60,
            "n_stores": [4, 8],
            "zipf_s": [1.5, 2.5],
            "trips_per_week": [4, 7],
            "trip_burst_q": 0.8,
            "routine_strength": [0.7, 0.95],
            "income": 40000,
        },
        {
            "name": "varied",
            "count": 60,
            "n_stores": [15, 30],
            "zipf_s": [0.3, 0.8],
            "trips_per_week": [4, 7],
            "trip_burst_q": 0.8,
            "income": 40000,
        },
    ],
    "window": "2014-01-06:2014-04-05",
    "seed": 3,
}


def main():
    s_rand, s_unc, s_true = se.entropy_rates(["a", "b"] * 500)
    assert s_rand == 1.0 and s_unc == 1.0 and s_true < s_unc

    symbols, rate = se.oracle_iid(4, 20000, 1)
    assert rate == 2.0
    est = se.entropy_rates([str(s) for s in symbols])[2]
    assert abs(est - rate) / rate < 0.15, est

    spec = json.dumps(SPEC)
    text = se.generate_csv(spec)
    assert text == se.generate_csv(spec), "generation is not deterministic"
    assert text.startswith("account_id,timestamp,merchant_id,mcc,amount,direction\n")

    ds = se.Dataset.from_csv_text(text)
    assert len(ds) == 120 and ds.parse_errors == 0
    first = ds.accounts()[0]
    report = ds.entropy(first)
    assert report["s_rand"] >= report["s_unc"] >= 0.0
    assert len(ds.sequence(first)) == report["n_events"]

    fit = se.fit_zipf(ds, 1, 5, resamples=50)
    assert math.isfinite(fit["s"]) and fit["s_stderr"] >= 0.0

    sim = se.simulate(ds, mode="sort_week", sample=50, seed=1)
    reductions = [a["baseline"] - a["transformed_mean"] for a in sim["per_account"]]
    assert sum(reductions) / len(reductions) > 0.0

    top, bottom = ds.quintile("top"), ds.quintile("bottom")
    ov = se.overlap(ds, top, bottom, monte_carlo=200000, seed=2)
    assert ov["within_group_prob"] > ov["cross_group_prob"]
    assert abs(ov["cross_group_prob"] - ov["monte_carlo"]["cross_group_prob"]) < 0.01

    try:
        se.Dataset.from_csv_text("account_id,timestamp\n", strict=True)
    except ValueError:
        pass
    else:
        raise AssertionError("strict parse of a bad header should raise")

    print("pyshopent", se.__version__, "smoke test ok")


if __name__ == "__main__":
    main()
