import numpy as np
import pytest

from hybridreg.config import RegistrationConfig
from hybridreg.exceptions import DimensionMismatchError, NonFiniteError
from hybridreg.loss import HybridLoss
from hybridreg.optimizer import OptimState, adam_step, build_pyramid, early_stop, register_pair
from hybridreg.resample import downsample2
from hybridreg.synth import PhantomSpec, make_pair, make_phantom
from hybridreg.volume_core import DisplacementField, Level, Volume, normalize_intensities, one_hot


def half_state(dims=(2, 2, 2)):
    return OptimState.start(DisplacementField.zeros(dims, level=Level.HALF))


def test_zero_gradient_step():
    s = adam_step(half_state(), np.zeros((3, 2, 2, 2)), RegistrationConfig())
    assert s.step == 1 and np.all(s.field.components == 0)


def test_first_step_is_signed_lr():
    cfg = RegistrationConfig()
    g = np.full((3, 2, 2, 2), -3.0)
    s = adam_step(half_state(), g, cfg)
    expected = -cfg.learning_rate * (-3.0) / (3.0 + cfg.eps)
    np.testing.assert_allclose(s.field.components, expected, rtol=1e-15)


def scalar_adam(grads, lr, b1, b2, eps):
    x = m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x -= lr * mh / (vh ** 0.5 + eps)
    return x, m, v


def test_two_steps_match_scalar_oracle(rng):
    cfg = RegistrationConfig(learning_rate=0.3, beta1=0.8, beta2=0.99)
    g1, g2 = rng.normal(size=(3, 2, 2, 2)), rng.normal(size=(3, 2, 2, 2))
    s = adam_step(adam_step(half_state(), g1, cfg), g2, cfg)
    assert s.step == 2
    for idx in np.ndindex(3, 2, 2, 2):
        x, m, v = scalar_adam([g1[idx], g2[idx]], 0.3, 0.8, 0.99, cfg.eps)
        assert s.field.components[idx] == pytest.approx(x, rel=1e-13)
        assert s.m[idx] == pytest.approx(m, rel=1e-13)
        assert s.v[idx] == pytest.approx(v, rel=1e-13) and s.v[idx] >= 0


def test_adam_step_pure():
    s0 = half_state()
    adam_step(s0, np.ones((3, 2, 2, 2)), RegistrationConfig())
    assert s0.step == 0 and np.all(s0.m == 0)


def test_adam_rejects_bad_gradients():
    g = np.zeros((3, 2, 2, 2))
    g[1, 0, 1, 0] = np.nan
    with pytest.raises(NonFiniteError, match=r"\(1, 0, 1, 0\)"):
        adam_step(half_state(), g, RegistrationConfig())
    with pytest.raises(DimensionMismatchError):
        adam_step(half_state(), np.zeros((3, 2, 2, 3)), RegistrationConfig())


def test_early_stop_examples():
    assert not early_stop([5, 4, 3, 2, 1], patience=2)
    assert early_stop([1.0] * 5, patience=3)
    # best improves at index 3; with patience 3 the run ends at index 5,
    # i.e. exactly patience - 1 steps since the last improvement
    hist = [1.0, 1.2, 0.9, 0.8, 0.85, 0.82]
    assert not early_stop(hist, patience=3)
    assert early_stop(hist + [0.81], patience=3)
    # improvements smaller than min_delta do not count
    assert early_stop([1.0, 0.999, 0.998, 0.997], patience=3, min_delta=0.01)
    assert not early_stop([1.0], patience=None)


def test_pyramid_shapes():
    img, lab = make_phantom(PhantomSpec(dims=(20, 16, 12), num_blobs=2))
    s = one_hot(lab)
    pyr = build_pyramid(img, img, s, s, levels=3)
    assert [p[0].dims for p in pyr] == [(20, 16, 12), (10, 8, 6), (5, 4, 3)]
    assert pyr[2][0].spacing == (4.0, 4.0, 4.0)
    np.testing.assert_allclose(pyr[2][2].data.sum(axis=0), 1.0, atol=1e-12)
    tiny = build_pyramid(Volume(np.zeros((6, 6, 6))), Volume(np.zeros((6, 6, 6))),
                         None, None, levels=4)
    assert len(tiny) == 2


def test_zero_steps_is_noop():
    img, lab = make_phantom(PhantomSpec(dims=(16, 16, 16), num_blobs=2))
    half, full, hist = register_pair(img, img, lab, lab, RegistrationConfig(steps_per_level=0))
    assert hist == []
    assert np.all(half.components == 0) and np.all(full.components == 0)
    assert half.level is Level.HALF and full.level is Level.FULL
    assert half.dims == (8, 8, 8) and full.dims == (16, 16, 16)


def test_input_checks():
    a, b = Volume(np.zeros((8, 8, 8))), Volume(np.zeros((8, 8, 6)))
    with pytest.raises(DimensionMismatchError):
        register_pair(a, b)
    with pytest.raises(DimensionMismatchError):
        register_pair(a, Volume(np.zeros((8, 8, 8)), (1, 1, 2)))


@pytest.fixture(scope="module")
def identity_run():
    img, lab = make_phantom(PhantomSpec(dims=(32, 32, 32), num_blobs=5, seed=0))
    cfg = RegistrationConfig()
    half, full, hist = register_pair(img, img, lab, lab, cfg)
    return img, lab, cfg, half, full, hist


def test_identity_pair_stays_near_zero(identity_run):
    img, lab, cfg, half, full, hist = identity_run
    assert np.abs(full.components).mean() < 0.05
    loss = HybridLoss(normalize_intensities(img), normalize_intensities(img),
                      one_hot(lab), one_hot(lab), cfg)
    final = loss(half.components, with_grad=False).total
    start = loss(np.zeros_like(half.components), with_grad=False).total
    assert final <= start + 1e-9


def test_history_bookkeeping(identity_run):
    *_, half, full, hist = identity_run
    assert len(hist) == sum(RegistrationConfig().steps_per_level)
    assert [h.step for h in hist] == list(range(len(hist)))
    for level in (0, 1, 2):
        best = [h.best_total for h in hist if h.level == level]
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert best[-1] == min(h.report.total for h in hist if h.level == level)
    assert [h.level for h in hist][0] == 2 and hist[-1].level == 0


def test_deterministic():
    spec = PhantomSpec(dims=(16, 16, 16), num_blobs=3, seed=4)
    img, lab = make_phantom(spec)
    u = np.zeros((3, 16, 16, 16))
    u[1] = 1.0
    m, f, ml, fl = make_pair(spec, DisplacementField(u))
    cfg = RegistrationConfig(steps_per_level=(10, 10, 10))
    a = register_pair(m, f, ml, fl, cfg)
    b = register_pair(m, f, ml, fl, cfg)
    assert a[0].components.tobytes() == b[0].components.tobytes()


def test_constant_shift_recovered():
    spec = PhantomSpec(dims=(32, 32, 32), num_blobs=5, seed=0)
    u = np.zeros((3, 32, 32, 32))
    u[0] = 2.0
    m, f, ml, fl = make_pair(spec, DisplacementField(u))
    _, full, _ = register_pair(m, f, ml, fl, RegistrationConfig())
    fg = fl.labels > 0
    assert full.components[0][fg].mean() == pytest.approx(2.0, abs=0.3)


def test_label_free_mode(caplog):
    spec = PhantomSpec(dims=(16, 16, 16), num_blobs=2)
    img, lab = make_phantom(spec)
    _, _, hist = register_pair(img, img, lab, None, RegistrationConfig(steps_per_level=2))
    assert all(h.report.boundary == 0 for h in hist)
    assert "boundary term dropped" in caplog.text


def test_patience_stops_early():
    img, lab = make_phantom(PhantomSpec(dims=(16, 16, 16), num_blobs=2))
    cfg = RegistrationConfig(steps_per_level=50, patience=3, min_delta=1.0)
    _, _, hist = register_pair(img, img, lab, lab, cfg)
    assert len(hist) == 3 * 4
