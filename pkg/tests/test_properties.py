import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from histoswin.data.dataset import Sample, split_dataset
from histoswin.data.transforms import resize_bilinear
from histoswin.contour import image_features
from histoswin.errors import DataError
from histoswin.metrics import metrics_from_confusion
from histoswin.tensor import cross_entropy, softmax
from histoswin.train import OptimizerState, adam_step

finite = st.floats(-50, 50, allow_nan=False, width=32)


@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite))
def test_softmax_simplex(logits):
    p = softmax(logits).data
    assert np.all(p >= 0)
    assert np.abs(p.sum(axis=-1) - 1).max() <= 1e-6


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=st.floats(-30, 30)),
       st.data())
def test_cross_entropy_nonnegative(logits, data):
    p = softmax(logits).data
    y = np.array([data.draw(st.integers(0, p.shape[1] - 1)) for _ in range(len(p))])
    loss = float(cross_entropy(p, y).data)
    assert loss >= 0
    if np.all(p[np.arange(len(y)), y] == 1.0):
        assert loss == 0.0


@settings(max_examples=100)
@given(arrays(np.int64, st.integers(2, 6).map(lambda k: (k, k)), elements=st.integers(0, 50)))
def test_accuracy_is_trace_over_total(conf):
    conf[0, 0] += 1
    r = metrics_from_confusion(conf)
    assert r.accuracy == np.trace(conf) / conf.sum()
    for p, q, f in zip(r.precision, r.recall, r.f1):
        assert 0 <= p <= 1 and 0 <= q <= 1
        assert f == (0.0 if p + q == 0 else 2 * p * q / (p + q))


@given(st.lists(st.integers(1, 40), min_size=1, max_size=4), st.integers(0, 2 ** 31 - 1))
def test_split_invariants(counts, seed):
    labels = [c for c, n in enumerate(counts) for _ in range(n)]
    data = [Sample(np.zeros((3, 1, 1), np.float32), c, f"id{i}") for i, c in enumerate(labels)]
    s = split_dataset(data, seed)
    ids = s.train + s.val + s.test
    assert len(ids) == len(set(ids)) == len(data)
    n = len(data)
    assert len(s.val) == len(s.test) == int(np.floor(0.15 * n + 1e-9))
    for c, nc in enumerate(counts):
        for part in (s.train, s.val, s.test):
            got = sum(labels[int(i[2:])] == c for i in part)
            assert abs(got - nc * len(part) / n) <= 1


@given(st.integers(1, 50), arrays(np.float32, st.integers(1, 8), elements=finite))
def test_adam_zero_gradient_identity(steps, theta):
    params = {"w": theta.copy()}
    state = OptimizerState.for_params(params, lr=0.1)
    state.m["w"][:] = 0
    for _ in range(steps):
        adam_step(params, {"w": np.zeros_like(theta)}, state)
    assert np.array_equal(params["w"], theta)
    assert state.t == steps and np.all(state.v["w"] >= 0)


@given(st.floats(0, 1), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12))
def test_resize_constant(value, h, w, th, tw):
    img = np.full((3, h, w), value, np.float64)
    assert np.all(resize_bilinear(img, (th, tw)) == value)


@settings(max_examples=40)
@given(arrays(np.bool_, (16, 16)))
def test_extent_bounded(mask):
    img = np.repeat(np.where(mask, 0.9, 0.1)[None], 3, axis=0)
    try:
        f = image_features(img)
    except DataError:
        assert mask.all() or not mask.any()
        return
    assert 0 < f.extent <= 1 + 1e-9
    assert f.min_value <= f.mean_color <= f.max_value
    assert f.epsilon == 0.01 * f.perimeter
