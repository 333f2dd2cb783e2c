"""
Dense tensors with reverse-mode differentiation.

A `Tensor` wraps a row-major numpy array (32-bit float by default, 64-bit on
request). Operations record themselves on the innermost active `Tape`; a
tape is a context manager and keeps its nodes in execution order, so the
reverse of that order is a valid topological order for the backward pass.

    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)
    x.grad  # -> 2 * x.data

Every public operation checks its result for NaN/Inf and raises
`NumericError` naming the operation instead of propagating the value.
A tape can be walked backward once; a second `backward` raises
`ContractError` until the forward pass is recorded again.
"""

from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from trajformer.errors import ContractError, DimensionError, NumericError

SUPPORTED_DTYPES = (np.float32, np.float64)

_ACTIVE_TAPES: List["Tape"] = []


def _resolve_dtype(dtype) -> np.dtype:
    if dtype is None:
        return np.dtype(np.float32)
    resolved = np.dtype(dtype)
    if resolved.type not in SUPPORTED_DTYPES:
        raise ContractError(f"Unsupported tensor dtype: {resolved}")
    return resolved


class Tensor:
    """Numeric array with shape metadata and optional gradient tracking.

    Attributes:
        data: Row-major values as a numpy array
        requires_grad: True for leaves (parameters) and for every tensor
            derived from one while a tape is recording
        grad: Gradient filled in by `Tape.backward` for leaves
        name: Optional canonical name, used by parameter stores
    """

    __array_priority__ = 100.0

    def __init__(
        self,
        data,
        dtype=None,
        requires_grad: bool = False,
        name: Optional[str] = None
    ) -> None:
        if dtype is None and isinstance(data, np.ndarray) \
                and data.dtype.type in SUPPORTED_DTYPES:
            dtype = data.dtype
        self.data: np.ndarray = np.ascontiguousarray(
            data, dtype=_resolve_dtype(dtype))
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(
                f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.shape}, dtype={self.dtype}, "
                f"requires_grad={self.requires_grad})")

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Node(NamedTuple):
    """One recorded operation: its output, inputs and vector-Jacobian rule."""
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op_name: str


class Tape:
    """Ordered record of operations for one forward/backward pass.

    Attributes:
        nodes: Operation records in execution order
        leaves: Leaf tensors (requires_grad, no producing node) seen so far
    """

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.leaves: Dict[int, Tensor] = {}
        self._produced: set = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TAPES.remove(self)

    def watch(self, *tensors: Tensor) -> None:
        """Register leaves that must receive a gradient even if unused."""
        for leaf in tensors:
            if leaf.requires_grad and id(leaf) not in self._produced:
                self.leaves[id(leaf)] = leaf

    def record(self, node: Node) -> None:
        """Append a node, noting any leaf inputs."""
        for operand in node.inputs:
            if operand.requires_grad and id(operand) not in self._produced:
                self.leaves.setdefault(id(operand), operand)
        self._produced.add(id(node.output))
        self.nodes.append(node)

    def backward(self, output: Tensor) -> Dict[int, np.ndarray]:
        """
        Propagate d(output)/d(leaf) to every leaf on this tape.

        Args:
            output: Scalar tensor produced on this tape

        Returns:
            Gradients keyed by id(leaf); the same arrays are stored in
            each leaf's `grad` attribute

        Raises:
            ContractError: If output is not a scalar, was not recorded on
                this tape, or the tape was already walked backward
        """
        if self._consumed:
            raise ContractError(
                "Tape already consumed by a previous backward pass; "
                "record the forward pass again")
        if output.size != 1:
            raise ContractError(
                f"backward needs a scalar output, got shape {output.shape}")
        if id(output) not in self._produced:
            raise ContractError("backward output was not recorded on this tape")
        self._consumed = True

        grads: Dict[int, np.ndarray] = {
            id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for operand, grad in zip(node.inputs, input_grads):
                if grad is None or not operand.requires_grad:
                    continue
                grad = np.asarray(grad, dtype=operand.dtype)
                if grad.shape != operand.shape:
                    grad = _unbroadcast(grad, operand.shape)
                if not np.all(np.isfinite(grad)):
                    raise NumericError(
                        f"Non-finite gradient in backward of '{node.op_name}'")
                key = id(operand)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad

        result: Dict[int, np.ndarray] = {}
        for key, leaf in self.leaves.items():
            leaf.grad = grads.get(key, np.zeros_like(leaf.data))
            result[key] = leaf.grad
        return result


def current_tape() -> Optional[Tape]:
    """Return the innermost recording tape, if any."""
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Wrap a constant (scalar or array) as a non-tracking tensor."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_finite(values: np.ndarray, op_name: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"Operation '{op_name}' produced NaN or Inf")


def _apply(
    op_name: str,
    values: np.ndarray,
    inputs: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
) -> Tensor:
    _check_finite(values, op_name)
    dtype = np.result_type(*[operand.dtype for operand in inputs])
    out = Tensor(values, dtype=dtype)
    tape = current_tape()
    if tape is not None and any(operand.requires_grad for operand in inputs):
        out.requires_grad = True
        tape.record(Node(out, tuple(inputs), backward, op_name))
    return out


def _binary_operands(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _apply("add", a.data + b.data, (a, b),
                  lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _apply("sub", a.data - b.data, (a, b),
                  lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _apply("mul", a.data * b.data, (a, b),
                  lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _apply(
        "div", a.data / b.data, (a, b),
        lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def neg(x: Tensor) -> Tensor:
    return _apply("neg", -x.data, (x,), lambda g: (-g,))


# --------------------------------------------------------------------------
# Linear algebra and reductions
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product over the last two axes (leading axes broadcast).

    Raises:
        DimensionError: If either operand has fewer than two axes or the
            inner dimensions differ; the message names both shapes
    """
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward(g: np.ndarray):
        return (g @ np.swapaxes(b.data, -1, -2),
                np.swapaxes(a.data, -1, -2) @ g)

    return _apply("matmul", a.data @ b.data, (a, b), backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _apply("sum", np.sum(x.data, axis=axis, keepdims=keepdims),
                  (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod(
        [x.shape[a] for a in np.atleast_1d(axis)]))
    return div(tensor_sum(x, axis=axis, keepdims=keepdims), float(count))


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _apply("reshape", x.data.reshape(shape), (x,),
                  lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _apply("transpose", np.transpose(x.data, axes), (x,),
                  lambda g: (np.transpose(g, inverse),))


def getitem(x: Tensor, index) -> Tensor:
    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _apply("getitem", x.data[index], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, splits, axis=axis))

    return _apply("concat", np.concatenate([t.data for t in tensors], axis),
                  tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g: np.ndarray):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _apply("stack", np.stack([t.data for t in tensors], axis),
                  tensors, backward)


# --------------------------------------------------------------------------
# Nonlinearities
# --------------------------------------------------------------------------

def exp(x: Tensor) -> Tensor:
    values = np.exp(x.data)
    return _apply("exp", values, (x,), lambda g: (g * values,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("Operation 'log' received a non-positive value")
    return _apply("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    values = np.tanh(x.data)
    return _apply("tanh", values, (x,),
                  lambda g: (g * (1.0 - values * values),))


def sigmoid(x: Tensor) -> Tensor:
    values = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _apply("sigmoid", values, (x,),
                  lambda g: (g * values * (1.0 - values),))


def softplus(x: Tensor) -> Tensor:
    values = np.logaddexp(0.0, x.data).astype(x.dtype)
    slope = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _apply("softplus", values, (x,), lambda g: (g * slope,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    u = x.data
    inner = _GELU_C * (u + 0.044715 * u ** 3)
    t = np.tanh(inner)
    values = 0.5 * u * (1.0 + t)

    def backward(g: np.ndarray):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * u * u)
        return (g * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * d_inner),)

    return _apply("gelu", values, (x,), backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; the gradient is zero outside the interval."""
    inside = (x.data >= low) & (x.data <= high)
    return _apply("clip", np.clip(x.data, low, high), (x,),
                  lambda g: (g * inside,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """
    Softmax along `axis`, computed with max-subtraction.

    Raises:
        DimensionError: If axis is out of bounds
    """
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(
            f"softmax axis {axis} out of bounds for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    exps = np.exp(shifted)
    values = exps / np.sum(exps, axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (values * (g - np.sum(g * values, axis=axis, keepdims=True)),)

    return _apply("softmax", values, (x,), backward)


def layer_norm(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    eps: float = 1e-5
) -> Tensor:
    """
    Normalize each row over the last axis, then apply gain and bias.

    Raises:
        DimensionError: If gain or bias does not match the last axis
    """
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm expects gain/bias of shape ({width},), "
            f"got {gain.shape} and {bias.shape} for input {x.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(-1, keepdims=True)
                            + eps)
    normalized = centered * inv_std

    def backward(g: np.ndarray):
        reduce_axes = tuple(range(g.ndim - 1))
        d_norm = g * gain.data
        d_x = inv_std * (
            d_norm
            - d_norm.mean(axis=-1, keepdims=True)
            - normalized * (d_norm * normalized).mean(axis=-1, keepdims=True))
        return (d_x,
                (g * normalized).sum(axis=reduce_axes),
                g.sum(axis=reduce_axes))

    return _apply("layer_norm", normalized * gain.data + bias.data,
                  (x, gain, bias), backward)


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error max|a - n| / max(max|a|, max|n|)."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradcheck(
    loss_fn: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    step: float = 1e-5
) -> float:
    """
    Compare analytic gradients with central finite differences.

    Args:
        loss_fn: Zero-argument callable rebuilding the scalar loss from
            the current leaf values
        leaves: Leaf tensors to check (64-bit recommended)
        step: Finite-difference step h

    Returns:
        The largest norm-wise relative error over all leaves
    """
    with Tape() as tape:
        tape.watch(*leaves)
        loss = loss_fn()
    tape.backward(loss)
    analytic = [leaf.grad.copy() for leaf in leaves]

    worst = 0.0
    for leaf, grad in zip(leaves, analytic):
        numeric = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = loss_fn().item()
            flat[i] = original - step
            minus = loss_fn().item()
            flat[i] = original
            numeric_flat[i] = (plus - minus) / (2 * step)
        worst = max(worst, relative_error(grad, numeric))
    return worst
