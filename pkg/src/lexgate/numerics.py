"""Dense 2-D float64 linear algebra, masked softmax, and gradients.

Matrices are plain C-contiguous float64 ``numpy.ndarray`` of ndim 2.
``GradTape`` records operations in construction order and replays them in
reverse to produce exact analytic gradients of a scalar loss; its output is
checked against ``finite_diff_gradient``, an independent central-difference
oracle.
"""

import numpy as np

from . import kernels

MASK_DROP = -1e9  # additive mask value for dropped attention positions
LAYERNORM_EPS = 1e-12


def as_matrix(a):
    """Validate and return ``a`` as a 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


def check_finite(arr, stage):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values after {stage}")
    return arr


def matmul(a, b):
    """Matrix product with shape validation and finite-output check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.shape} x {b.shape} (inner dims differ)"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul")


def softmax_masked(scores, mask):
    """Row-wise softmax of ``scores + mask``.

    ``mask`` entries are 0 (keep) or MASK_DROP (drop). Rows are stabilised by
    max subtraction; a row whose every position is dropped is degenerate and
    raises.
    """
    scores = as_matrix(scores)
    mask = as_matrix(mask)
    if scores.shape != mask.shape:
        raise ValueError(
            f"softmax_masked shape mismatch: scores {scores.shape} vs mask {mask.shape}"
        )
    dropped = mask <= MASK_DROP / 2
    if np.any(dropped.all(axis=1)):
        row = int(np.nonzero(dropped.all(axis=1))[0][0])
        raise ValueError(f"degenerate attention row {row}: all positions dropped")
    out = kernels.softmax_rows(np.ascontiguousarray(scores + mask))
    return check_finite(out, "softmax_masked")


def finite_diff_gradient(loss_fn, params, epsilon=1e-5):
    """Central-difference gradient of ``loss_fn`` w.r.t. every parameter.

    Args:
        loss_fn: deterministic scalar function of a dict name -> 2-D array.
        params: dict of name -> 2-D float64 array; perturbed copies are used,
            the originals are left untouched.
        epsilon: step size, must lie in [1e-7, 1e-3].

    Returns:
        dict of name -> gradient array of the same shape.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {}
    for name, tensor in work.items():
        grad = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up = loss_fn(work)
            flat[idx] = orig - epsilon
            down = loss_fn(work)
            flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(
                    f"non-finite loss while perturbing parameter {name!r} at index {idx}"
                )
            gflat[idx] = (up - down) / (2.0 * epsilon)
        grads[name] = grad
    return grads


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


class Var:
    """A node in the tape: a value plus an accumulated gradient."""

    __slots__ = ("value", "grad", "_bwd", "name")

    def __init__(self, value, name=None):
        self.value = value
        self.grad = None
        self._bwd = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape


def _val(x):
    return x.value if isinstance(x, Var) else x


def _acc(node, grad):
    if isinstance(node, Var):
        node.grad = grad if node.grad is None else node.grad + grad


class GradTape:
    """Reverse-mode autodiff over 2-D float64 matrices.

    Operations are recorded in construction order, which is a topological
    order of the computation graph; ``backward`` walks the record in reverse.
    Operands may be ``Var`` nodes or plain arrays (constants, no gradient).
    A tape is single-threaded and single-use: record one forward pass, call
    ``backward`` once.
    """

    def __init__(self):
        self._nodes = []

    def _record(self, value, bwd):
        node = Var(value)
        node._bwd = bwd
        self._nodes.append(node)
        return node

    def leaf(self, value, name=None):
        """A trainable leaf; its gradient is readable after ``backward``."""
        node = Var(value, name=name)
        self._nodes.append(node)
        return node

    # -- ops ---------------------------------------------------------------

    def matmul(self, a, b):
        av, bv = _val(a), _val(b)
        out = av @ bv

        def bwd(g):
            _acc(a, g @ bv.T)
            _acc(b, av.T @ g)

        return self._record(out, bwd)

    def matmul_t(self, a, b):
        """a @ b.T without materialising a transpose node."""
        av, bv = _val(a), _val(b)
        out = av @ bv.T

        def bwd(g):
            _acc(a, g @ bv)
            _acc(b, g.T @ av)

        return self._record(out, bwd)

    def add(self, a, b):
        av, bv = _val(a), _val(b)
        out = av + bv

        def bwd(g):
            _acc(a, _unbroadcast(g, av.shape))
            _acc(b, _unbroadcast(g, bv.shape))

        return self._record(out, bwd)

    def sub(self, a, b):
        av, bv = _val(a), _val(b)
        out = av - bv

        def bwd(g):
            _acc(a, _unbroadcast(g, av.shape))
            _acc(b, _unbroadcast(-g, bv.shape))

        return self._record(out, bwd)

    def mul(self, a, b):
        av, bv = _val(a), _val(b)
        out = av * bv

        def bwd(g):
            _acc(a, _unbroadcast(g * bv, av.shape))
            _acc(b, _unbroadcast(g * av, bv.shape))

        return self._record(out, bwd)

    def scale(self, a, c):
        av = _val(a)
        out = av * c

        def bwd(g):
            _acc(a, g * c)

        return self._record(out, bwd)

    def sigmoid(self, a):
        out = kernels.sigmoid(np.ascontiguousarray(_val(a)))

        def bwd(g):
            _acc(a, g * out * (1.0 - out))

        return self._record(out, bwd)

    def tanh(self, a):
        out = np.tanh(_val(a))

        def bwd(g):
            _acc(a, g * (1.0 - out * out))

        return self._record(out, bwd)

    def gelu(self, a):
        av = np.ascontiguousarray(_val(a))
        out = kernels.gelu(av)

        def bwd(g):
            _acc(a, kernels.gelu_bwd(av, np.ascontiguousarray(g)))

        return self._record(out, bwd)

    def softmax_rows(self, a, additive_mask=None):
        av = _val(a)
        if additive_mask is not None:
            dropped = additive_mask <= MASK_DROP / 2
            if np.any(dropped.all(axis=1)):
                row = int(np.nonzero(dropped.all(axis=1))[0][0])
                raise ValueError(
                    f"degenerate attention row {row}: all positions dropped"
                )
            av = av + additive_mask
        out = kernels.softmax_rows(np.ascontiguousarray(av))

        def bwd(g):
            _acc(a, kernels.softmax_rows_bwd(out, np.ascontiguousarray(g)))

        return self._record(out, bwd)

    def layernorm(self, x, gamma, beta, eps=LAYERNORM_EPS):
        xv = np.ascontiguousarray(_val(x))
        gv = np.ascontiguousarray(_val(gamma))
        out, mu, rstd = kernels.layernorm(xv, gv, np.ascontiguousarray(_val(beta)), eps)

        def bwd(g):
            dx, dgamma, dbeta = kernels.layernorm_bwd(
                xv, gv, mu, rstd, np.ascontiguousarray(g)
            )
            _acc(x, dx)
            _acc(gamma, dgamma)
            _acc(beta, dbeta)

        return self._record(out, bwd)

    def gather_rows(self, table, ids):
        tv = _val(table)
        ids = np.asarray(ids, dtype=np.intp)
        out = tv[ids]

        def bwd(g):
            if isinstance(table, Var):
                dt = np.zeros_like(tv)
                # row loop beats np.add.at by ~30x at these sizes
                for r in range(ids.shape[0]):
                    dt[ids[r]] += g[r]
                _acc(table, dt)

        return self._record(out, bwd)

    def concat_cols(self, parts):
        vals = [_val(p) for p in parts]
        out = np.concatenate(vals, axis=1)
        splits = np.cumsum([v.shape[1] for v in vals])[:-1]

        def bwd(g):
            for part, piece in zip(parts, np.split(g, splits, axis=1)):
                _acc(part, piece)

        return self._record(out, bwd)

    def slice_rows(self, a, start, stop):
        av = _val(a)
        out = av[start:stop]

        def bwd(g):
            if isinstance(a, Var):
                da = np.zeros_like(av)
                da[start:stop] = g
                _acc(a, da)

        return self._record(out, bwd)

    def gate_mix(self, scores, gate, sim, dissim):
        """scores * (1 + g*sim + (1-g)*dissim) with g a per-row column vector."""
        sv = np.ascontiguousarray(_val(scores))
        gv = np.ascontiguousarray(_val(gate))
        out = kernels.gate_mix(sv, gv, sim, dissim)

        def bwd(g):
            dscores, dgate = kernels.gate_mix_bwd(
                sv, gv, sim, dissim, np.ascontiguousarray(g)
            )
            _acc(scores, dscores)
            _acc(gate, dgate)

        return self._record(out, bwd)

    def bce_with_logit(self, logit, target):
        """Binary cross-entropy of sigmoid(logit) against a {0,1} target.

        Stable form softplus(z) - z*t; backward is sigmoid(z) - t.
        """
        z = float(_val(logit)[0, 0])
        softplus = max(z, 0.0) + np.log1p(np.exp(-abs(z)))
        out = np.array([[softplus - z * target]])

        def bwd(g):
            s = 1.0 / (1.0 + np.exp(-z)) if z >= 0 else np.exp(z) / (1.0 + np.exp(z))
            _acc(logit, g * (s - target))

        return self._record(out, bwd)

    # -- driver ------------------------------------------------------------

    def backward(self, loss, seed=1.0):
        """Accumulate d(loss)/d(leaf) into every leaf's ``.grad``."""
        if loss.value.shape != (1, 1):
            raise ValueError(f"loss must be scalar (1,1), got {loss.value.shape}")
        loss.grad = np.array([[float(seed)]])
        for node in reversed(self._nodes):
            if node.grad is not None and node._bwd is not None:
                node._bwd(node.grad)
