"""Smoke test for the proxtrace Python module.

Build and run:

    cargo build -p proxtrace-py --release --offline
    cp target/release/libproxtrace_py.so python/proxtrace_py.so
    python3 python/smoke_test.py
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import proxtrace_py as pt

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def check_channel():
    ch = pt.Channel()
    near, far = ch.mean_rss(0.5), ch.mean_rss(4.0)
    assert near > far
    assert ch.mean_rss(1.0, "crosswise") < ch.mean_rss(1.0, "direct")
    assert abs(ch.distance_for_rss(ch.mean_rss(2.5)) - 2.5) < 1e-9
    draws = ch.sample(1.0, 5000, seed=3)
    mean = sum(draws) / len(draws)
    assert abs(mean - ch.mean_rss(1.0)) < 0.3, mean
    assert pt.moving_average([1.0, 3.0, 5.0], 2) == [1.0, 2.0, 4.0]


def check_protocol():
    a = pt.Device(1, seed=1, t_window_ms=1000)
    b = pt.Device(2, seed=2, t_window_ms=1000)
    sig = a.generate_signature(0)
    b.generate_signature(0)
    t = 1
    while not b.is_listening(t):
        t += 1
    assert b.receive(pt.payload_from_hex(sig), -65.0, t)
    bundle = a.publish_infected(t)
    hits = b.match_exposure(bundle)
    assert len(hits) == 1 and hits[0][0] == sig
    assert a.match_exposure(b.publish_infected(t)) == []


def check_learning():
    data = pt.simulate(seed=1)
    x, y = data["direct"]
    assert len(x) == len(y) == 240
    assert set(y) == {1, -1}
    for kind in ["dt", "lda", "nb", "knn"]:
        report = pt.evaluate(kind, x, y, reps=10)
        mean, lo, hi = report["accuracy"]
        assert lo <= mean <= hi and mean > 0.8, (kind, report)
    model = pt.Model.train("dt", x, y)
    again = pt.Model.from_json(model.to_json())
    assert model.predict(x) == again.predict(x)
    assert model.kind == "DT"

    rows = pt.extract_features(
        list(range(0, 20000, 100)),
        [-60.0] * 200,
        distances_m=[1.0] * 100 + [3.0] * 100,
        threshold_m=2.0,
    )
    assert [r["label"] for r in rows] == [1.0, -1.0]
    assert rows[0]["n_samples"] == 100.0


def check_drill():
    alerts = pt.drill(os.path.join(ROOT, "scenarios", "outbreak_drill.toml"), 1)
    alerted = [a[0] for a in alerts if a[1]]
    assert alerted == [2], alerts


def check_errors():
    try:
        pt.Model.train("svm", [[0.0]], [1])
    except ValueError:
        pass
    else:
        raise AssertionError("unknown classifier accepted")
    try:
        pt.drill("/no/such/scenario.toml", 1)
    except OSError:
        pass
    else:
        raise AssertionError("missing scenario accepted")


if __name__ == "__main__":
    for check in [check_channel, check_protocol, check_learning, check_drill, check_errors]:
        check()
        print(f"{check.__name__}: ok")
