"""Backend equivalence: the numba kernels agree with their numpy twins."""

import numpy as np
import pytest

from lexgate import kernels

try:
    NUMBA = kernels.get_impls("numba")
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

NUMPY = kernels.get_impls("numpy")

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba unavailable")

rng = np.random.default_rng(11)


def cases():
    x = rng.normal(scale=2.0, size=(7, 9))
    return np.ascontiguousarray(x)


@needs_numba
class TestBackendAgreement:
    def test_softmax_rows(self):
        x = cases()
        np.testing.assert_allclose(
            NUMBA["softmax_rows"](x), NUMPY["softmax_rows"](x), atol=1e-14
        )

    def test_softmax_rows_bwd(self):
        x = cases()
        y = NUMPY["softmax_rows"](x)
        dy = np.ascontiguousarray(rng.normal(size=x.shape))
        np.testing.assert_allclose(
            NUMBA["softmax_rows_bwd"](y, dy), NUMPY["softmax_rows_bwd"](y, dy), atol=1e-14
        )

    def test_layernorm(self):
        x = cases()
        g = np.ascontiguousarray(1 + 0.1 * rng.normal(size=(1, x.shape[1])))
        b = np.ascontiguousarray(0.1 * rng.normal(size=(1, x.shape[1])))
        for a, e in zip(NUMBA["layernorm"](x, g, b, 1e-12), NUMPY["layernorm"](x, g, b, 1e-12)):
            np.testing.assert_allclose(a, e, atol=1e-13)

    def test_layernorm_bwd(self):
        x = cases()
        g = np.ascontiguousarray(1 + 0.1 * rng.normal(size=(1, x.shape[1])))
        b = np.zeros((1, x.shape[1]))
        _, mu, rstd = NUMPY["layernorm"](x, g, b, 1e-12)
        dy = np.ascontiguousarray(rng.normal(size=x.shape))
        for a, e in zip(
            NUMBA["layernorm_bwd"](x, g, mu, rstd, dy),
            NUMPY["layernorm_bwd"](x, g, mu, rstd, dy),
        ):
            np.testing.assert_allclose(a, e, atol=1e-12)

    def test_gelu(self):
        x = cases()
        np.testing.assert_allclose(NUMBA["gelu"](x), NUMPY["gelu"](x), atol=1e-14)

    def test_gelu_bwd(self):
        x = cases()
        dy = np.ascontiguousarray(rng.normal(size=x.shape))
        np.testing.assert_allclose(
            NUMBA["gelu_bwd"](x, dy), NUMPY["gelu_bwd"](x, dy), atol=1e-14
        )

    def test_gate_mix(self):
        s = np.ascontiguousarray(rng.normal(size=(6, 6)))
        g = np.ascontiguousarray(rng.uniform(size=(6, 1)))
        sim = np.ascontiguousarray(rng.uniform(size=(6, 6)))
        dissim = np.ascontiguousarray(1 - sim)
        np.testing.assert_allclose(
            NUMBA["gate_mix"](s, g, sim, dissim), NUMPY["gate_mix"](s, g, sim, dissim),
            atol=1e-14,
        )

    def test_gate_mix_bwd(self):
        s = np.ascontiguousarray(rng.normal(size=(6, 6)))
        g = np.ascontiguousarray(rng.uniform(size=(6, 1)))
        sim = np.ascontiguousarray(rng.uniform(size=(6, 6)))
        dissim = np.ascontiguousarray(1 - sim)
        dp = np.ascontiguousarray(rng.normal(size=(6, 6)))
        for a, e in zip(
            NUMBA["gate_mix_bwd"](s, g, sim, dissim, dp),
            NUMPY["gate_mix_bwd"](s, g, sim, dissim, dp),
        ):
            np.testing.assert_allclose(a, e, atol=1e-13)

    def test_sigmoid(self):
        x = cases() * 10
        np.testing.assert_allclose(NUMBA["sigmoid"](x), NUMPY["sigmoid"](x), atol=1e-15)

    def test_adam_step(self):
        p1 = np.ascontiguousarray(rng.normal(size=(4, 5)))
        p2 = p1.copy()
        g = np.ascontiguousarray(rng.normal(size=(4, 5)))
        m1, v1 = np.zeros_like(p1), np.zeros_like(p1)
        m2, v2 = np.zeros_like(p1), np.zeros_like(p1)
        for t in (1, 2, 3):
            NUMBA["adam_step"](p1, g, m1, v1, 1e-2, 0.9, 0.999, 1e-8, t)
            NUMPY["adam_step"](p2, g, m2, v2, 1e-2, 0.9, 0.999, 1e-8, t)
        np.testing.assert_allclose(p1, p2, atol=1e-14)
        np.testing.assert_allclose(m1, m2, atol=1e-14)
        np.testing.assert_allclose(v1, v2, atol=1e-14)


class TestNumpyBackendSemantics:
    def test_sigmoid_extremes_stable(self):
        x = np.array([[-800.0, 800.0]])
        out = NUMPY["sigmoid"](x)
        assert out[0, 0] == 0.0 and out[0, 1] == 1.0

    def test_adam_matches_reference_formula(self):
        p = np.array([[1.0]])
        g = np.array([[0.5]])
        m, v = np.zeros((1, 1)), np.zeros((1, 1))
        NUMPY["adam_step"](p, g, m, v, 0.1, 0.9, 0.999, 1e-8, 1)
        mhat = 0.05 / (1 - 0.9)
        vhat = 0.5**2 * 0.001 / (1 - 0.999)
        expected = 1.0 - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
        assert p[0, 0] == pytest.approx(expected, abs=1e-15)

    def test_softmax_matches_exp_normalize(self):
        x = np.array([[1.0, 2.0, 3.0]])
        e = np.exp(x)
        np.testing.assert_allclose(NUMPY["softmax_rows"](x), e / e.sum(), atol=1e-15)

    def test_active_backend_exported(self):
        assert kernels.ACTIVE_BACKEND in ("numpy", "numba")
        assert callable(kernels.softmax_rows)
