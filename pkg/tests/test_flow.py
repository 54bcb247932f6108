import json
import math

import numpy as np
import pytest

import adaflow as af
from adaflow.flow import (
    AdaBN,
    BNStats,
    FlowModel,
    LinearLDU,
    build_flow,
    default_flow,
    model_from_document,
    model_to_document,
)

from _oracles import fd_jacobian, random_model, sample_kink_safe


def identity_model(dim: int) -> FlowModel:
    model = FlowModel(dim, [])
    model.register_domain("k", {})
    return model


def test_empty_stack_is_identity():
    model = identity_model(3)
    x = np.array([0.3, -1.2, 4.0])
    z, logdet = model.normalize(x, "k")
    np.testing.assert_allclose(z, x)
    assert logdet == 0.0
    np.testing.assert_allclose(model.generate(x, "k"), x)


def test_single_linear_layer():
    layer = LinearLDU(np.zeros((2, 2)), np.zeros((2, 2)), [2.0, 3.0], [0.0, 0.0])
    model = FlowModel(2, [layer])
    model.register_domain("k", {})
    z, logdet = model.normalize([1.0, 1.0], "k")
    np.testing.assert_allclose(z, [2.0, 3.0])
    assert logdet == pytest.approx(math.log(6.0))


def test_log_likelihood_standard_normal_values():
    model = identity_model(2)
    assert model.log_likelihood([0.0, 0.0], "k") == pytest.approx(-math.log(2 * math.pi))
    model1 = identity_model(1)
    assert model1.log_likelihood([2.0], "k") == pytest.approx(
        -0.5 * math.log(2 * math.pi) - 2.0
    )


def test_round_trip_d16_m6():
    rng = np.random.default_rng(0)
    model = random_model(16, 6, rng)
    X = rng.normal(0.0, 2.0, size=(100, 16))
    Z, _ = model.normalize(X, "k")
    back = model.generate(Z, "k")
    rel = np.linalg.norm(back - X, axis=1) / (1.0 + np.linalg.norm(X, axis=1))
    assert rel.max() < 1e-8


def test_cross_domain_composition_is_affine_for_adabn_stack():
    rng = np.random.default_rng(1)
    dim = 3
    layers = [AdaBN(rng.uniform(0.5, 2.0, dim), rng.normal(size=dim)) for _ in range(3)]
    model = FlowModel(dim, layers)
    for k in ("k1", "k2"):
        model.register_domain(k, {
            i: BNStats(rng.normal(size=dim), rng.uniform(0.5, 2.0, dim))
            for i in model.adabn_indices()
        })

    def t(x):
        z, _ = model.normalize(x, "k2")
        return model.generate(z, "k1")

    for _ in range(10):
        x, y = rng.normal(size=dim), rng.normal(size=dim)
        lam = rng.uniform()
        np.testing.assert_allclose(
            t(lam * x + (1 - lam) * y), lam * t(x) + (1 - lam) * t(y), atol=1e-9
        )


def test_logdet_matches_fd_jacobian_three_layers():
    rng = np.random.default_rng(2)
    for trial in range(20):
        dim = int(rng.integers(2, 9))
        model = random_model(dim, 3, rng)
        x = sample_kink_safe(model, rng)
        _, logdet = model.normalize(x, "k")
        J = fd_jacobian(lambda v: model.normalize(v, "k")[0], x)
        _, fd_logdet = np.linalg.slogdet(J)
        assert logdet == pytest.approx(fd_logdet, abs=1e-4)


def test_density_integrates_to_one_1d():
    layer = LinearLDU(np.zeros((1, 1)), np.zeros((1, 1)), [2.0], [0.3])
    model = FlowModel(1, [layer])
    model.register_domain("k", {})
    grid = np.linspace(-10.0, 10.0, 4001).reshape(-1, 1)
    ll = model.log_likelihood(grid, "k")
    integral = np.trapezoid(np.exp(ll), grid[:, 0])
    assert 0.99 <= integral <= 1.01


def test_latent_law_after_training():
    # domain-k training data normalized with domain-k stats is ~ N(0, I)
    rng = np.random.default_rng(3)
    X = rng.normal(1.5, 2.0, size=(2000, 2))
    model = default_flow(2, seed=4)
    af.pretrain(model, {"k": X}, af.TrainConfig(epochs=40, batch_size=256,
                                                learning_rate=3e-3, seed=0))
    Z, _ = model.normalize(X[:1000], "k")
    assert np.all(np.abs(Z.mean(axis=0)) < 0.1)
    assert np.all(np.abs(Z.var(axis=0) - 1.0) < 0.15)


def test_unknown_domain_and_bad_input():
    model = identity_model(2)
    with pytest.raises(ValueError, match="unknown domain"):
        model.normalize([0.0, 0.0], "nope")
    with pytest.raises(ValueError, match="non-finite"):
        model.normalize([np.inf, 0.0], "k")
    with pytest.raises(ValueError):
        model.normalize([0.0, 0.0, 0.0], "k")


def test_stats_must_cover_adabn_layers():
    model = FlowModel(2, [AdaBN([1.0, 1.0], [0.0, 0.0])])
    with pytest.raises(ValueError, match="cover exactly"):
        model.register_domain("k", {})
    with pytest.raises(ValueError, match="cover exactly"):
        model.register_domain("k", {0: BNStats([0.0, 0.0], [1.0, 1.0]),
                                    1: BNStats([0.0, 0.0], [1.0, 1.0])})


def test_mixed_alpha_rejected():
    with pytest.raises(ValueError, match="alpha"):
        FlowModel(2, [af.LeakyReLU(0.2), af.LeakyReLU(0.3)])


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    model = random_model(5, 6, rng, domain="a")
    stats = {i: BNStats(rng.normal(size=5), rng.uniform(0.5, 2.0, 5))
             for i in model.adabn_indices()}
    model.register_domain("b", stats)
    path = tmp_path / "model.json"
    af.save_model(model, path)
    loaded = af.load_model(path)

    assert loaded.dim == model.dim
    assert loaded.alpha == model.alpha
    for a, b in zip(model.layers, loaded.layers):
        assert a.kind == b.kind
        if isinstance(a, LinearLDU):
            np.testing.assert_array_equal(a.lower, b.lower)
            np.testing.assert_array_equal(a.upper, b.upper)
            np.testing.assert_array_equal(a.d, b.d)
            np.testing.assert_array_equal(a.b, b.b)
        elif isinstance(a, AdaBN):
            np.testing.assert_array_equal(a.gamma, b.gamma)
            np.testing.assert_array_equal(a.beta, b.beta)
    assert set(loaded.domains) == {"a", "b"}
    for k in loaded.domains:
        for i, st in model.domains[k].items():
            np.testing.assert_array_equal(st.mu, loaded.domains[k][i].mu)
            np.testing.assert_array_equal(st.sigma, loaded.domains[k][i].sigma)

    x = rng.normal(size=(4, 5))
    np.testing.assert_array_equal(model.log_likelihood(x, "a"),
                                  loaded.log_likelihood(x, "a"))


def test_serialized_floats_carry_17_significant_digits(tmp_path):
    model = FlowModel(1, [LinearLDU(np.zeros((1, 1)), np.zeros((1, 1)),
                                    [1.0 / 3.0], [0.1])])
    model.register_domain("k", {})
    path = tmp_path / "m.json"
    af.save_model(model, path)
    text = path.read_text()
    doc = json.loads(text)
    assert doc["version"] == 1 and doc["dim"] == 1
    assert "3.33333333333333315e-01" in text  # 18 significant digits, exact round trip
    assert model_from_document(doc).layers[0].d[0] == 1.0 / 3.0


def test_document_schema_fields():
    model = default_flow(3, seed=0)
    doc = model_to_document(model)
    assert set(doc) == {"version", "dim", "alpha", "layers", "domains"}
    kinds = [entry["kind"] for entry in doc["layers"]]
    # stored order is generate order; normalize order is its reverse
    assert kinds == ["adabn", "linear_ldu", "leaky_relu", "adabn", "linear_ldu"]


def test_build_flow_normalize_order():
    model = build_flow(2, ["linear", "adabn"], seed=0)
    # normalize applies the linear first: stored list ends with it
    assert model.layers[-1].kind == "linear_ldu"
    assert model.layers[0].kind == "adabn"
