import numpy as np
import pytest

from binep.dynamics import (
    RelaxationConfig,
    TraceWriter,
    energy,
    init_state,
    loss,
    primitive,
    relax,
    step,
)
from binep.errors import DivergenceError, InvalidParameterError
from binep.network import encode_target

from conftest import make_net, small_conv, small_fc


def test_config_validation():
    for bad in (dict(T=0), dict(dt=0.0), dict(dt=1.5), dict(beta=0.0), dict(sigma=0.0), dict(nudge="x")):
        with pytest.raises(InvalidParameterError):
            RelaxationConfig(**bad)
    cfg = RelaxationConfig()
    assert cfg.init_value(small_fc()) == 0.0
    assert cfg.init_value(small_fc(activation="heaviside")) == 1.0
    assert RelaxationConfig(state_init=0.25).init_value(small_fc()) == 0.25


@pytest.mark.parametrize("seed", range(10))
def test_energy_descent(seed):
    rng = np.random.default_rng(seed)
    arch = small_conv() if seed % 3 == 0 else small_fc((8, 7, 6, 4))
    snap = make_net(arch, seed).snapshot()
    x = rng.uniform(0, 1, size=(3,) + arch.input_shape)
    cfg = RelaxationConfig(dt=0.5)
    values = []
    relax(snap, x, cfg, steps=60, trace=lambda ph, t, v, d: values.append(v))
    assert np.all(np.diff(values) <= 1e-9)


def test_energy_matches_definition_on_fc():
    arch = small_fc((4, 3, 2))
    net = make_net(arch, 1)
    snap = net.snapshot()
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(1, 4))
    s1, s2 = rng.uniform(-0.2, 1.2, size=(1, 3)), rng.uniform(-0.2, 1.2, size=(1, 2))
    r1, r2 = np.clip(s1, 0, 1), np.clip(s2, 0, 1)
    w1, w2 = snap.weights
    b1, b2 = snap.biases
    e = 0.5 * (s1 @ s1.T + s2 @ s2.T) - r1 @ w1 @ x.T - r2 @ w2 @ r1.T - r1 @ b1 - r2 @ b2
    assert energy(snap, [s1, s2], x) == pytest.approx(float(e[0, 0]), abs=1e-12)
    p = s1 @ w1 @ x.T + s2 @ w2 @ s1.T + s1 @ b1 + s2 @ b2
    assert primitive(snap, [s1, s2], x) == pytest.approx(float(p[0, 0]), abs=1e-12)


def test_contraction_diagnostic():
    arch = small_fc((10, 8, 4))
    snap = make_net(arch, 2).snapshot()
    x = np.random.default_rng(2).uniform(size=(5, 10))
    res = relax(snap, x, RelaxationConfig(T=200))
    assert res.diagnostic < 1e-6
    assert res.steps == 200


@pytest.mark.parametrize("setting", ["energy_based", "prototypical"])
def test_zero_beta_from_fixed_point_is_idempotent(setting):
    arch = small_fc((10, 8, 4), setting=setting)
    snap = make_net(arch, 3).snapshot()
    x = np.random.default_rng(3).uniform(size=(4, 10))
    cfg = RelaxationConfig(T=400)
    free = relax(snap, x, cfg, stop_below=1e-15).state
    again = relax(snap, x, cfg, steps=10, state=free).state
    for a, b in zip(free, again):
        assert np.allclose(a, b, atol=1e-13)


def test_prototypical_fixed_point_after_T_steps():
    arch = small_fc((784, 64, 10), setting="prototypical")
    snap = make_net(arch, 0).snapshot()
    x = np.random.default_rng(0).uniform(size=(8, 784))
    cfg = RelaxationConfig(T=50)
    state = relax(snap, x, cfg).state
    nxt = step(snap, state, x, cfg)
    assert max(float(np.max(np.abs(a - b))) for a, b in zip(state, nxt)) < 1e-4


def test_opposite_nudges_give_distinct_states(rcfg):
    arch = small_fc((6, 5, 3))
    snap = make_net(arch, 0).snapshot()
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(2, 6))
    y = encode_target([0, 2], 3)
    free = relax(snap, x, rcfg).state
    plus = relax(snap, x, rcfg, state=free, target=y, beta=0.5).state
    minus = relax(snap, x, rcfg, state=free, target=y, beta=-0.5).state
    assert not np.allclose(plus[-1], minus[-1])
    # a positive nudge lowers the loss, a negative one raises it
    assert loss(plus, y) < loss(free, y) < loss(minus, y)


def test_target_none_means_free_phase(rcfg):
    arch = small_fc()
    snap = make_net(arch).snapshot()
    x = np.ones((1, 6))
    a = relax(snap, x, rcfg).state
    b = relax(snap, x, rcfg, beta=5.0).state
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_constant_nudge_uses_cached_output():
    arch = small_fc((6, 5, 3))
    snap = make_net(arch, 1).snapshot()
    x = np.random.default_rng(1).uniform(size=(2, 6))
    y = encode_target([1, 0], 3)
    live = RelaxationConfig(nudge="live", beta=0.5)
    const = RelaxationConfig(nudge="constant", beta=0.5)
    free = relax(snap, x, live).state
    s_live = step(snap, free, x, live, target=y, beta=0.5, y_star=free[-1])
    s_const = step(snap, free, x, const, target=y, beta=0.5, y_star=free[-1])
    # at the first step the two coincide; afterwards the constant nudge ignores the moving output
    assert np.allclose(s_live[-1], s_const[-1])
    off = np.full_like(free[-1], 0.5)
    moved = step(snap, free, x, const, target=y, beta=0.5, y_star=off)
    assert not np.allclose(moved[-1], s_const[-1])


def test_heaviside_activity_is_binary_and_prototypical_refuses():
    arch = small_fc((6, 9, 4), activation="heaviside")
    snap = make_net(arch, 0).snapshot()
    x = np.random.default_rng(0).uniform(size=(3, 6))
    res = relax(snap, x, RelaxationConfig(T=20))
    for s in res.state:
        assert np.all((s >= 0) & (s <= 1))
    with pytest.raises(InvalidParameterError):
        from binep.dynamics import step_prototypical

        step_prototypical(snap, res.state, x, RelaxationConfig())


def test_divergence_names_the_step():
    arch = small_fc(setting="energy_based")
    snap = make_net(arch).snapshot()
    x = np.ones((1, 6))
    bad = snap.with_bias(0, np.full(5, np.inf))
    with pytest.raises(DivergenceError) as info:
        relax(bad, x, RelaxationConfig(clamp=False))
    assert info.value.step == 1
    assert "step 1" in str(info.value)


def test_input_shape_checked():
    snap = make_net(small_fc()).snapshot()
    with pytest.raises(InvalidParameterError):
        relax(snap, np.ones((1, 7)), RelaxationConfig())
    with pytest.raises(InvalidParameterError):
        relax(snap, np.ones((1, 6)), RelaxationConfig(), target=np.ones((1, 4)), beta=0.1)


def test_flat_input_accepted_for_conv(rcfg):
    arch = small_conv()
    snap = make_net(arch).snapshot()
    x = np.random.default_rng(0).uniform(size=(2, 1, 6, 6))
    a = relax(snap, x, rcfg).output
    b = relax(snap, x.reshape(2, 36), rcfg).output
    assert np.array_equal(a, b)


def test_trace_writer(tmp_path, rcfg):
    snap = make_net(small_fc()).snapshot()
    path = tmp_path / "t.tsv"
    with TraceWriter(str(path)) as tw:
        relax(snap, np.ones((1, 6)), rcfg, steps=5, trace=tw)
    lines = path.read_text().splitlines()
    assert lines[0] == "phase\tstep\tvalue\tmax_delta"
    assert len(lines) == 6 and lines[-1].startswith("free\t5\t")


def test_init_state_shapes():
    arch = small_conv()
    st = init_state(arch, 3, 1.0)
    assert [s.shape for s in st] == [(3, 2, 3, 3), (3, 5), (3, 3)]
    assert all(np.all(s == 1.0) for s in st)
