"""Dense float64 tensors with reverse-mode gradients recorded on an explicit tape.

Everything downstream (conditioner, denoiser, training) is built from the
primitives here. Ops compute eagerly on numpy arrays; when a ``Tape`` is
active and an input requires gradients, the op also records a backward rule.
Gradients are checked against central finite differences by ``grad_check``,
which stays independent of the tape rules on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class ShapeMismatchError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _require_finite(arr: Array, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {context}")


class Tensor:
    """Immutable-by-convention dense array, optionally tracked for gradients.

    ``grad`` is a same-shape accumulator present exactly when
    ``requires_grad`` is set. Repeated backward passes accumulate into it
    until ``zero_grad`` is called.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _require_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{req})"

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swap_last_axes(self) -> "Tensor":
        return swap_last_axes(self)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[Array], Sequence[Array | None]]


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed differentiable ops.

    Ops are appended in execution order, which makes the record topologically
    sorted by construction. One training step owns one tape.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, node: _Node) -> None:
        self._nodes.append(node)
        self._produced.add(id(node.out))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(result: Array, parents: tuple[Tensor, ...], backward, context: str) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed."""
    _require_finite(result, context)
    out = Tensor.__new__(Tensor)
    out.data = result
    out.requires_grad = False
    out.grad = None
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(result)
        tape._record(_Node(out=out, parents=parents, backward=backward))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    result = a.data + b.data

    def backward(g: Array):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(result, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    result = a.data - b.data

    def backward(g: Array):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(result, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    result = a.data * b.data

    def backward(g: Array):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(result, (a, b), backward, "mul")


def reciprocal(a: Tensor) -> Tensor:
    result = 1.0 / a.data

    def backward(g: Array):
        return (-g * result * result,)

    return _emit(result, (a,), backward, "reciprocal")


def tanh(a: Tensor) -> Tensor:
    result = np.tanh(a.data)

    def backward(g: Array):
        return (g * (1.0 - result * result),)

    return _emit(result, (a,), backward, "tanh")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's stacked-batch semantics on >=2-D inputs."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(
            f"matmul needs >=2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner dimensions disagree: {a.shape} vs {b.shape}"
        )
    result = a.data @ b.data

    def backward(g: Array):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(result, (a, b), backward, "matmul")


def swap_last_axes(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeMismatchError(f"swap_last_axes needs >=2-D input, got {a.shape}")
    result = np.swapaxes(a.data, -1, -2).copy()

    def backward(g: Array):
        return (np.swapaxes(g, -1, -2),)

    return _emit(result, (a,), backward, "swap_last_axes")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    result = a.data.reshape(shape)

    def backward(g: Array):
        return (g.reshape(a.shape),)

    return _emit(result, (a,), backward, "reshape")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    result = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _emit(result, (a,), backward, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def softmax(x: Tensor, axis: int) -> Tensor:
    """Stable softmax along ``axis`` (max-subtraction before exponentials)."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    result = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array):
        inner = (g * result).sum(axis=axis, keepdims=True)
        return (result * (g - inner),)

    return _emit(result, (x,), backward, "softmax")


def feature_std_scale(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Scale rows by their last-axis standard deviation: gamma*x/(sigma+eps)+beta.

    No mean subtraction; sigma is the population std of each row. Zero-variance
    rows are kept finite by the eps floor rather than any special-case branch,
    so the output there is x/eps + beta by design.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatchError(
            f"gamma/beta must have shape ({d},); got {gamma.shape} and {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    sigma = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    denom = sigma + eps
    scaled = x.data / denom
    result = gamma.data * scaled + beta.data

    def backward(g: Array):
        gg = g * gamma.data
        gx = gg / denom
        # chain through sigma; the floor only guards exact-zero variance rows,
        # where centered == 0 makes the whole term vanish anyway
        dsigma = -(gg * x.data).sum(axis=-1, keepdims=True) / (denom * denom)
        gx = gx + dsigma * centered / (d * np.maximum(sigma, 1e-300))
        reduce_axes = tuple(range(g.ndim - 1))
        ggamma = (g * scaled).sum(axis=reduce_axes)
        gbeta = g.sum(axis=reduce_axes)
        return gx, ggamma, gbeta

    return _emit(result, (x, gamma, beta), backward, "feature_std_scale")


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every tracked tensor.

    Repeated calls accumulate; callers zero grads between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ValueError("loss was not produced on this tape")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape._nodes):
        g_out = grads.get(id(node.out))
        if g_out is None:
            continue
        parent_grads = node.backward(g_out)
        for parent, g in zip(node.parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                tensors[key] = parent
    for key, tensor in tensors.items():
        if tensor.requires_grad:
            tensor.grad += grads[key].reshape(tensor.shape)


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    n_coordinates: int


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare the tape gradient of a scalar function against central differences.

    The finite-difference side never touches the tape, so the two routes stay
    independent. A mismatch yields ``passed=False`` without raising; non-finite
    function values raise ``NonFiniteError``.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(probe)
    backward(tape, loss)
    analytic = probe.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = numeric.reshape(-1)
    base = x.data.copy()
    for i in range(base.size):
        shifted = base.reshape(-1).copy()
        shifted[i] = base.reshape(-1)[i] + h
        f_plus = f(Tensor(shifted.reshape(base.shape))).item()
        shifted[i] = base.reshape(-1)[i] - h
        f_minus = f(Tensor(shifted.reshape(base.shape))).item()
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError("non-finite function value during grad_check")
        flat[i] = (f_plus - f_minus) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(
        max_rel_error=max_rel, passed=max_rel <= tol, n_coordinates=base.size
    )
