import math
import os

import numpy as np
import pytest

import treewave as tw

DATA = os.environ.get("TREEWAVE_DATA_DIR", os.path.join(os.path.dirname(__file__), "..", "..", "data"))


def load(name):
    return tw.load_network(os.path.join(DATA, name))


def test_network_round_trip():
    g, pot = load("fig1.net")
    assert len(g) == 10
    assert len(g.external_nodes) == 7
    assert pot == {}
    text = tw.serialize_network(g, {"e01": [1.0, 2.0]})
    g2, pot2 = tw.parse_network(text)
    assert g2.graph_hash() == g.graph_hash()
    assert pot2 == {"e01": [1.0, 2.0]}


def test_validation_errors_map_to_value_error():
    with pytest.raises(ValueError):
        tw.parse_network("node A external\nedge e0 A B 1\n")
    bad = tw.make_tree([("A", "external"), ("B", "external"), ("C", "internal")],
                       [("x", "A", "C", 1.0), ("y", "C", "B", 1.0), ("z", "A", "B", 1.0)])
    assert tw.validate_tree(bad)
    with pytest.raises(tw.ValidationError):
        tw.peel_schedule(bad, "A")


def test_peel_schedule_figure1():
    g, _ = load("fig1.net")
    stages = tw.peel_schedule(g, "Q7")
    assert len(stages) == 4
    assert sorted(e for s in stages for e in s) == sorted(e[0] for e in g.edges)


def test_star_peel_recovers_potential():
    g, _ = load("star3.net")
    truth = {"a": [1.0 + 0.5 * math.sin(math.pi * i / 20) for i in range(21)],
             "b": [0.5] * 2, "c": [1.0, 1.5]}
    meas = tw.simulate(g, truth, tw.default_peel_horizon(g, "Q3"), 0.005)
    assert set(meas.neumann) == {"Q1", "Q2", "Q3"}
    assert isinstance(meas.neumann["Q1"], np.ndarray)
    assert meas.neumann["Q1"].std() > 0.0
    res = tw.peel(g, meas.without("Q3"), "Q3", alpha=1e-6, target_dx=0.01, bound_M=3.0, truth=truth)
    assert res["stages"] == 2
    assert {e["edge"] for e in res["edges"]} == {"a", "b", "c"}
    assert res["error"] < 0.05
    assert tw.relative_network_error(g, res["potential"], truth) == pytest.approx(res["error"])


def test_reznitzkaya_linear_trace_gives_one():
    dtau = 1e-3
    tau = np.arange(0, 11.0, dtau)
    u = tw.reznitzkaya(tau, dtau, 0.01, 100)
    assert u.shape == (100,)
    assert np.max(np.abs(u[9:] - 1.0)) < 1e-6
    # w = tau^3: u_H = 6 t
    u3 = tw.reznitzkaya(tau ** 3, dtau, 0.01, 100)
    t = 0.01 * np.arange(1, 101)
    assert np.max(np.abs(u3[9:] / (6.0 * t[9:]) - 1.0)) < 1e-5
    with pytest.raises(ValueError):
        tw.reznitzkaya(tau[:1000], dtau, 0.01, 100)


def test_experiments():
    g, _ = load("edge.net")
    modes = [{"e0": [math.sin(k * math.pi * i / 200) for i in range(201)]} for k in (1, 2)]
    obs = tw.observability(g, {}, modes, [3.0], target_dx=0.005)
    assert obs["constants"][0][1] == pytest.approx(1.0 / 3.0, rel=1e-2)
    assert "experiment: observability" in obs["text"]

    p = tw.random_smooth_potential(g, 1, 3.0)
    q = tw.random_smooth_potential(g, 2, 3.0)
    assert p == tw.random_smooth_potential(g, 1, 3.0)
    st = tw.stability(g, [(p, q), (p, p)], 3.0)
    assert np.isfinite(st["ratios"][0]) and np.isnan(st["ratios"][1])

    uq = tw.uniqueness(g, p, p, 3.0)
    assert uq["consistent"]
    assert not tw.uniqueness(g, p, q, 3.0)["consistent"]


def test_random_tree_is_valid():
    g = tw.random_tree(25, 4)
    assert len(g) == 25
    assert tw.validate_tree(g) == []
    assert tw.random_tree(25, 4).graph_hash() == g.graph_hash()
