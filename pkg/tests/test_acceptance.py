"""Acceptance gate: one test per criterion, each at its stated tolerance.

The terminal summary lists ``criterion N: PASS|FAIL`` for every test here.
"""
import itertools
import json

import numpy as np
import pytest

from netgen import alphabeta_case, avgpool_net, dense_relu_net, kink_free_input, random_supported_net
from relprop import numerics as nx
from relprop.cli import main
from relprop.evaluate import PerturbationPlan, perturbation_curve
from relprop.gradient import backward_gradient, explain_sa, finite_difference_gradient
from relprop.lrp import explain_lrp, lrp_alphabeta_layer, lrp_epsilon_layer, token_relevance
from relprop.model import Conv, Dense, Embedding, Flatten, Model, ReLU, forward
from relprop.relevance import RuleConfig

EPS0 = RuleConfig.eps(0.0)


def run(*argv):
    return main([str(a) for a in argv])


def test_criterion_1_conservation():
    rng = np.random.default_rng(2024)
    checked = 0
    for i in range(150):
        model = dense_relu_net(rng, bias=False) if i % 2 else avgpool_net(rng, bias=False)
        x = rng.normal(size=model.input_shape)
        c = int(rng.integers(model.n_classes))
        rmap = explain_lrp(model, x, c, EPS0)
        f = float(forward(model, x).logits[c])
        assert rmap.conservation.f_value == f
        for layer_r in rmap.layer_relevances:
            assert abs(float(np.sum(layer_r)) - f) <= 1e-9 * abs(f), (i, f)
        checked += 1
    assert checked >= 100


@pytest.mark.parametrize("alpha,beta", [(1.0, 0.0), (2.0, 1.0)])
def test_criterion_2_alphabeta_conservation(alpha, beta):
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 100:
        case = alphabeta_case(rng)
        if case is None:
            continue
        model, x = case
        rmap = explain_lrp(model, x, int(rng.integers(model.n_classes)), RuleConfig.alphabeta(alpha, beta))
        f = rmap.conservation.f_value
        assert rmap.conservation.unassigned == 0
        for layer_r in rmap.layer_relevances:
            assert abs(float(np.sum(layer_r)) - f) <= 1e-9 * abs(f)
        checked += 1


def test_criterion_3_gradient_oracle():
    rng = np.random.default_rng(99)
    h = 1e-4
    checked = 0
    while checked < 120:
        model = random_supported_net(rng)
        x = kink_free_input(rng, model, 10 * h)
        if x is None:
            continue
        c = int(rng.integers(model.n_classes))
        exact = backward_gradient(model, forward(model, x), c).values
        fd = finite_difference_gradient(model, x, c, h).values
        err = np.abs(exact - fd)
        assert np.all(err <= np.maximum(1e-6 * np.abs(exact), 1e-9)), (checked, float(err.max()))
        checked += 1


def test_criterion_4_hand_examples():
    np.testing.assert_array_equal(lrp_epsilon_layer([1, 2], [[1], [1]], [0], [3], 0.0), [1, 2])
    r = lrp_epsilon_layer([1, 2], [[1], [1]], [0], [3], 0.1)
    assert np.round(r, 4).tolist() == [0.9677, 1.9355]
    model = Model((2,), [Dense([[1, 0], [1, 0]])], ["a", "b"])
    leak = explain_lrp(model, [1, 2], 0, RuleConfig.eps(0.1)).conservation.epsilon_leaked
    assert round(leak, 4) == 0.0968
    np.testing.assert_array_equal(lrp_alphabeta_layer([1, 1], [[2], [-1]], [0], [1], 1, 0), [1, 0])
    np.testing.assert_array_equal(lrp_alphabeta_layer([1, 1], [[2], [-1]], [0], [1], 2, 1), [2, -1])
    linear = Model((3,), [Dense([[1, 0], [2, 0], [3, 0]])], ["a", "b"])
    rmap = explain_lrp(linear, [1, 1, 1], 0, EPS0)
    np.testing.assert_array_equal(rmap.values, [1, 2, 3])
    curve = perturbation_curve(linear, [1, 1, 1], rmap, PerturbationPlan("zero", steps=3))
    assert curve.absolute_scores == [6, 3, 1, 0]
    assert [round(v, 4) for v in curve.relative_scores] == [1, 0.5, 0.1667, 0]


def test_criterion_5_ranking_optimality():
    rng = np.random.default_rng(5)
    for _ in range(60):
        n = int(rng.integers(2, 7))
        w = rng.uniform(0.05, 3.0, n)
        x = rng.uniform(0.05, 3.0, n)
        model = Model((n,), [Dense(np.stack([w, np.zeros(n)], axis=1))], ["pos", "other"])
        rmap = explain_lrp(model, x, 0, EPS0)
        lrp_curve = perturbation_curve(model, x, rmap, PerturbationPlan("zero", steps=n)).relative_scores
        f0 = float(np.dot(w, x))
        for perm in itertools.permutations(range(n)):
            xp = x.copy()
            other = [1.0]
            for j in perm:
                xp[j] = 0.0
                other.append(float(np.dot(w, xp)) / f0)
            assert all(a <= b + 1e-12 for a, b in zip(lrp_curve, other)), (w, x, perm)


def test_criterion_6_desk_scale_evaluation(tmp_path):
    data, model, out = tmp_path / "groups.csv", tmp_path / "model", tmp_path / "eval"
    assert run("synth", "--kind", "groups", "--n", 200, "--seed", 3, "--out", data) == 0
    assert run("train", "--data", data, "--label", "y", "--layers", "20,16,2", "--epochs", 50, "--lr", 0.05,
               "--seed", 3, "--out", model) == 0
    accuracy = json.loads((model / "run_manifest.json").read_text())["metrics"]["train_accuracy"]
    assert accuracy >= 0.95
    assert run("evaluate", "--model", model, "--data", data, "--label", "y", "--methods", "lrp-eps,sa,random",
               "--perturb", "zero", "--steps", 10, "--seed", 3, "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    aucs = summary["aucs"]
    print(f"train accuracy {accuracy:.4f}; AUC lrp-eps {aucs['lrp-eps']:.4f} sa {aucs['sa']:.4f} "
          f"random {aucs['random']:.4f}")
    assert aucs["lrp-eps"] < aucs["sa"] < aucs["random"]
    for m in summary["methods"]:
        assert m["mean_relative_score"][0] == 1.0
        assert len(m["mean_relative_score"]) == 11
    rows = (out / "curves.csv").read_text().splitlines()
    assert rows[0] == "step,method,mean_relative_score,n_samples"
    assert all(float(r.split(",")[2]) == 1.0 for r in rows[1:] if r.startswith("0,"))


def test_criterion_7_sign_separation():
    # vocabulary: 0 pad, 1 "excellent" (supports class pos), 2 "awful" (contradicts it)
    table = np.array([[0.0], [1.0], [1.0]])
    w = np.array([[2.0, -2.0], [-1.5, 1.5], [0.0, 0.0]])
    model = Model((3,), [Embedding(table, "sequence"), Flatten(), Dense(w)], ["pos", "neg"])
    x = [1, 2, 0]
    assert forward(model, x).predicted_class == 0
    tokens = token_relevance(explain_lrp(model, x, 0, EPS0), model)
    assert tokens[0] > 0 > tokens[1]
    assert tokens[2] == 0
    sa = explain_sa(model, x, 0)
    assert np.all(sa.values >= 0)
    assert np.all(token_relevance(sa, model) >= 0)


def test_criterion_8_rule_consistency():
    rng = np.random.default_rng(8)
    for _ in range(200):
        n, m = (int(v) for v in rng.integers(1, 16, size=2))
        x = rng.uniform(0.0, 2.0, n)
        x[rng.random(n) < 0.2] = 0.0
        w = rng.uniform(0.0, 2.0, (n, m))
        r = rng.normal(size=m)
        a = lrp_alphabeta_layer(x, w, np.zeros(m), r, 1, 0)
        e = lrp_epsilon_layer(x, w, np.zeros(m), r, 0.0)
        assert np.all(np.abs(a - e) <= 1e-12 * np.maximum(np.abs(e), 1.0))

    for trial in range(40):
        c, h, wd = int(rng.integers(1, 3)), int(rng.integers(3, 7)), int(rng.integers(3, 7))
        k = int(rng.integers(1, 4))
        o = int(rng.integers(1, 4))
        spec = nx.ConvSpec(rng.normal(size=(o, c, k, k)), rng.normal(0, 0.1, o) * (trial % 2),
                           int(rng.integers(1, 3)), int(rng.integers(0, 2)))
        oshape = spec.output_shape((c, h, wd))
        head = Dense(rng.normal(size=(int(np.prod(oshape)), 2)))
        conv_model = Model((c, h, wd), [Conv(spec.kernel, spec.bias, spec.stride, spec.padding), ReLU(), Flatten(),
                                        head], ["a", "b"])
        wmat, bvec = nx.conv_as_dense(spec, (c, h, wd))
        dense_model = Model((c, h, wd), [Flatten(), Dense(wmat, bvec), ReLU(), head], ["a", "b"])
        x = rng.normal(size=(c, h, wd))
        for cfg in (EPS0, RuleConfig.eps(0.01), RuleConfig.alphabeta(1), RuleConfig.alphabeta(2)):
            a = explain_lrp(conv_model, x, 0, cfg).values
            b = explain_lrp(dense_model, x, 0, cfg).values.reshape(a.shape)
            scale = max(float(np.abs(b).max()), 1e-300)
            assert np.all(np.abs(a - b) <= 1e-12 * np.maximum(np.abs(b), scale)), (trial, cfg)


def test_criterion_9_determinism(tmp_path):
    data, model = tmp_path / "blobs.csv", tmp_path / "model"
    assert run("synth", "--kind", "blobs", "--n", 60, "--seed", 2, "--out", data) == 0
    assert run("train", "--data", data, "--label", "y", "--layers", "2,6,2", "--epochs", 5, "--lr", 0.1,
               "--seed", 4, "--out", model) == 0
    sample = tmp_path / "x.json"
    sample.write_text("[1.5, 0.25]")
    assert run("explain", "--model", model, "--input", sample, "--method", "lrp-ab", "--alpha", 2,
               "--render", tmp_path / "r.ppm", "--out", tmp_path / "r.json") == 0
    assert run("render", "--relevance", tmp_path / "r.json", "--out", tmp_path / "again.ppm") == 0
    for workers in (1, 3):
        assert run("evaluate", "--model", model, "--data", data, "--label", "y", "--methods", "lrp-eps,sa",
                   "--steps", 2, "--seed", 5, "--workers", workers, "--out", tmp_path / f"ev{workers}") == 0
    for name in ("curves.csv", "summary.json"):
        assert (tmp_path / "ev1" / name).read_bytes() == (tmp_path / "ev3" / name).read_bytes()

    manifests = [data.with_name("blobs.manifest.json"), model / "run_manifest.json", tmp_path / "r.manifest.json",
                 tmp_path / "again.manifest.json", tmp_path / "ev1" / "run_manifest.json",
                 tmp_path / "ev3" / "run_manifest.json"]
    for manifest in manifests:
        before = json.loads(manifest.read_text())["outputs"]
        assert before
        assert run("replay", manifest) == 0, manifest
        assert json.loads(manifest.read_text())["outputs"] == before
