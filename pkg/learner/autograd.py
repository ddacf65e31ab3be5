"""
Minimal reverse-mode differentiation over numpy arrays.

Every differentiable value is a ``Variable`` holding a float64 array and a
closure that maps its output gradient to gradients of its parents. A
``GradientTape`` records the variables created while it is active, in
creation order, so walking that list backwards is a topological order of
the graph. Parameters live in a ``ParamStore``; the tape exposes them as
leaf variables and ``backward`` adds leaf gradients into ``store.grads``.

Operations whose operands carry no tape run eagerly and record nothing,
which is how inference and finite-difference evaluation reuse the same
network code.
"""

import hashlib
import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .exceptions import NonFiniteError, ShapeMismatchError, TapeUsageError


logger = logging.getLogger(__name__)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Variable:
    """A float64 array that remembers how it was computed."""

    __array_ufunc__ = None

    def __init__(
        self,
        value,
        tape: Optional["GradientTape"] = None,
        parents: Tuple["Variable", ...] = (),
        backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
        name: Optional[str] = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.parents = parents
        self._backward = backward
        self.grad: Optional[np.ndarray] = None
        self.name = name
        if tape is not None and backward is not None:
            tape._record(self)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Variable{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator overloads

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


VariableLike = Union[Variable, np.ndarray, float, int]


def as_variable(x: VariableLike) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def constant(x: VariableLike) -> Variable:
    """Detached copy: same value, no gradient path."""
    return Variable(x.value if isinstance(x, Variable) else x)


def _result(value, parents: Tuple[Variable, ...], backward) -> Variable:
    tapes = {id(p.tape): p.tape for p in parents if p.tape is not None}
    if len(tapes) > 1:
        raise TapeUsageError("Operands were recorded on different tapes")
    if not tapes:
        return Variable(value)
    return Variable(value, tape=next(iter(tapes.values())), parents=parents, backward=backward)


class GradientTape:
    """
    Records one forward pass.

    ``backward`` may be called more than once on the same tape; every call
    adds the full gradient into the parameter stores again.
    """

    def __init__(self):
        self.nodes: List[Variable] = []
        self._leaves: Dict[Tuple[int, str], Tuple["ParamStore", str, Variable]] = {}
        self._inputs: List[Variable] = []

    def _record(self, node: Variable) -> None:
        self.nodes.append(node)

    def param(self, store: "ParamStore", name: str) -> Variable:
        """Leaf variable bound to ``store.params[name]``."""
        key = (id(store), name)
        if key not in self._leaves:
            if name not in store.params:
                raise ShapeMismatchError(f"Unknown parameter {name!r}", details={"known": store.names})
            self._leaves[key] = (store, name, Variable(store.params[name], tape=self, name=name))
        return self._leaves[key][2]

    def watch(self, value) -> Variable:
        """Differentiable input that is not a stored parameter."""
        watched = Variable(np.array(value, dtype=np.float64), tape=self)
        self._inputs.append(watched)
        return watched

    def backward(self, output: Variable, output_grad: Optional[np.ndarray] = None) -> None:
        if output.tape is not self or not (self.nodes or self._leaves or self._inputs):
            raise TapeUsageError()

        for node in self.nodes + self._inputs:
            node.grad = None
        for _, _, leaf in self._leaves.values():
            leaf.grad = None

        seed = np.ones_like(output.value) if output_grad is None else np.asarray(output_grad, dtype=np.float64)
        if seed.shape != output.shape:
            raise ShapeMismatchError(
                "Output gradient shape does not match output",
                details={"output": list(output.shape), "gradient": list(seed.shape)},
            )
        output.grad = seed

        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            for parent, grad in zip(node.parents, node._backward(node.grad)):
                if grad is None or parent.tape is None:
                    continue
                grad = unbroadcast(grad, parent.shape)
                parent.grad = grad if parent.grad is None else parent.grad + grad

        for store, name, leaf in self._leaves.values():
            if leaf.grad is not None:
                store.grads[name] += leaf.grad


def backward(tape: GradientTape, output: Variable, output_grad: Optional[np.ndarray] = None) -> None:
    tape.backward(output, output_grad)


def param(store: "ParamStore", name: str, tape: Optional[GradientTape] = None) -> Variable:
    """Parameter as a leaf on ``tape``, or as a constant without one."""
    if tape is None:
        return Variable(store.params[name])
    return tape.param(store, name)


# ----- elementwise arithmetic -----

def add(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    return _result(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    return _result(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    return _result(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def div(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    return _result(
        a.value / b.value,
        (a, b),
        lambda g: (g / b.value, -g * a.value / b.value ** 2),
    )


def neg(x: VariableLike) -> Variable:
    x = as_variable(x)
    return _result(-x.value, (x,), lambda g: (-g,))


def reciprocal(x: VariableLike) -> Variable:
    x = as_variable(x)
    y = 1.0 / x.value
    return _result(y, (x,), lambda g: (-g * y ** 2,))


def square(x: VariableLike) -> Variable:
    x = as_variable(x)
    return _result(x.value ** 2, (x,), lambda g: (2.0 * x.value * g,))


def sqrt(x: VariableLike) -> Variable:
    x = as_variable(x)
    y = np.sqrt(x.value)
    return _result(y, (x,), lambda g: (0.5 * g / y,))


def exp(x: VariableLike) -> Variable:
    x = as_variable(x)
    y = np.exp(x.value)
    return _result(y, (x,), lambda g: (g * y,))


def log(x: VariableLike) -> Variable:
    x = as_variable(x)
    return _result(np.log(x.value), (x,), lambda g: (g / x.value,))


# ----- activations -----

def relu(x: VariableLike) -> Variable:
    x = as_variable(x)
    return _result(np.maximum(x.value, 0.0), (x,), lambda g: (g * (x.value > 0),))


def tanh(x: VariableLike) -> Variable:
    x = as_variable(x)
    y = np.tanh(x.value)
    return _result(y, (x,), lambda g: (g * (1.0 - y ** 2),))


def softplus(x: VariableLike) -> Variable:
    """``ln(1 + e^x)``, evaluated without overflow."""
    x = as_variable(x)
    return _result(np.logaddexp(0.0, x.value), (x,), lambda g: (g * expit(x.value),))


def softmax(x: VariableLike, axis: int = -1) -> Variable:
    x = as_variable(x)
    shifted = np.exp(x.value - x.value.max(axis=axis, keepdims=True))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), _backward)


def clip(x: VariableLike, low: float, high: float) -> Variable:
    x = as_variable(x)
    mask = (x.value >= low) & (x.value <= high)
    return _result(np.clip(x.value, low, high), (x,), lambda g: (g * mask,))


def maximum(x: VariableLike, floor: float) -> Variable:
    """Elementwise ``max(x, floor)`` against a constant floor."""
    x = as_variable(x)
    mask = x.value >= floor
    return _result(np.maximum(x.value, floor), (x,), lambda g: (g * mask,))


def minimum(a: VariableLike, b: VariableLike) -> Variable:
    """Elementwise minimum of two variables; ties route the gradient to ``a``."""
    a, b = as_variable(a), as_variable(b)
    mask = a.value <= b.value
    return _result(np.where(mask, a.value, b.value), (a, b), lambda g: (g * mask, g * ~mask))


# ----- linear algebra and shape -----

def matmul(a: VariableLike, b: VariableLike) -> Variable:
    a, b = as_variable(a), as_variable(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"Cannot multiply {a.shape} by {b.shape}",
            details={"left": list(a.shape), "right": list(b.shape)},
        )
    return _result(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def reduce_sum(x: VariableLike, axis=None, keepdims: bool = False) -> Variable:
    x = as_variable(x)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.value.sum(axis=axis, keepdims=keepdims), (x,), _backward)


def reduce_mean(x: VariableLike, axis=None, keepdims: bool = False) -> Variable:
    x = as_variable(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def concat(items: Sequence[VariableLike], axis: int = -1) -> Variable:
    items = tuple(as_variable(item) for item in items)
    sizes = [item.shape[axis] for item in items]
    boundaries = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, boundaries, axis=axis))

    return _result(np.concatenate([item.value for item in items], axis=axis), items, _backward)


def broadcast_to(x: VariableLike, shape: Tuple[int, ...]) -> Variable:
    x = as_variable(x)
    return _result(np.broadcast_to(x.value, shape).copy(), (x,), lambda g: (g,))


def reshape(x: VariableLike, shape) -> Variable:
    x = as_variable(x)
    return _result(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: VariableLike, index) -> Variable:
    x = as_variable(x)

    def _backward(g):
        full = np.zeros_like(x.value)
        np.add.at(full, index, g)
        return (full,)

    return _result(x.value[index], (x,), _backward)


def check_finite(name: str, x: VariableLike) -> None:
    """Fail fast naming the offending term."""
    value = x.value if isinstance(x, Variable) else np.asarray(x)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"Non-finite value in {name}", details={"term": name})


# ----- parameters and optimisation -----

class ParamStore:
    """
    Named float64 parameter arrays with their gradients and Adam moments.

    Shapes are fixed once a parameter is added.
    """

    def __init__(self, params: Optional[Dict[str, np.ndarray]] = None):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise ShapeMismatchError(f"Parameter {name!r} already exists")
        array = np.array(value, dtype=np.float64)
        self.params[name] = array
        self.grads[name] = np.zeros_like(array)
        self.m[name] = np.zeros_like(array)
        self.v[name] = np.zeros_like(array)

    @property
    def names(self) -> List[str]:
        return list(self.params)

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def assign(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.params[name].shape:
            raise ShapeMismatchError(
                f"Cannot assign shape {value.shape} to parameter {name!r} of shape {self.params[name].shape}",
            )
        self.params[name][...] = value

    def zero_grad(self) -> None:
        for grad in self.grads.values():
            grad.fill(0.0)

    def copy(self) -> "ParamStore":
        """Deep copy including optimiser state."""
        clone = ParamStore(self.params)
        for name in self.params:
            clone.grads[name] = self.grads[name].copy()
            clone.m[name] = self.m[name].copy()
            clone.v[name] = self.v[name].copy()
        clone.step = self.step
        return clone

    def check_compatible(self, other: "ParamStore") -> None:
        if self.names != other.names:
            raise ShapeMismatchError(
                "Parameter stores hold different names",
                details={"left": self.names, "right": other.names},
            )
        for name in self.params:
            if self.params[name].shape != other.params[name].shape:
                raise ShapeMismatchError(
                    f"Parameter {name!r} has shape {self.params[name].shape} vs {other.params[name].shape}",
                )

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"step": np.array(self.step, dtype=np.int64)}
        for name in self.params:
            state[f"param/{name}"] = self.params[name]
            state[f"m/{name}"] = self.m[name]
            state[f"v/{name}"] = self.v[name]
        return state

    @classmethod
    def from_state_dict(cls, state: Dict[str, np.ndarray]) -> "ParamStore":
        store = cls()
        for key, value in state.items():
            if key.startswith("param/"):
                store.add(key[len("param/"):], value)
        for name in store.params:
            store.m[name] = np.array(state[f"m/{name}"], dtype=np.float64)
            store.v[name] = np.array(state[f"v/{name}"], dtype=np.float64)
        store.step = int(state["step"])
        return store

    def fingerprint(self) -> str:
        """SHA-256 over parameter names, shapes and bytes."""
        digest = hashlib.sha256()
        for name in sorted(self.params):
            value = np.ascontiguousarray(self.params[name])
            digest.update(name.encode("utf-8"))
            digest.update(str(value.shape).encode("utf-8"))
            digest.update(value.tobytes())
        return digest.hexdigest()


def adam_step(
    store: ParamStore,
    lr: float = 0.003,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update of every parameter in ``store``, in place."""
    for name, grad in store.grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(
                f"Non-finite gradient for parameter {name!r}",
                details={"parameter": name},
            )

    store.step += 1
    correction1 = 1.0 - beta1 ** store.step
    correction2 = 1.0 - beta2 ** store.step
    for name, value in store.params.items():
        grad = store.grads[name]
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad ** 2
        value -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


def soft_update(target: ParamStore, online: ParamStore, eta: float = 0.005) -> None:
    """Polyak averaging ``target <- eta * online + (1 - eta) * target``."""
    target.check_compatible(online)
    for name, value in target.params.items():
        value[...] = eta * online.params[name] + (1.0 - eta) * value


def gradcheck(
    loss_fn: Callable[[Optional[GradientTape]], Variable],
    stores: Iterable[ParamStore],
    eps: float = 1e-4,
    max_entries: int = 8,
    atol: float = 1e-4,
    seed: int = 0,
) -> float:
    """
    Largest relative error between tape gradients and central differences.

    ``loss_fn(tape)`` must be deterministic and return a scalar; it is called
    with ``None`` for the perturbed evaluations. At most ``max_entries``
    entries of each parameter array are probed.
    """
    stores = list(stores)
    for store in stores:
        store.zero_grad()
    tape = GradientTape()
    tape.backward(loss_fn(tape))
    analytic = [{name: grad.copy() for name, grad in store.grads.items()} for store in stores]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for store, grads in zip(stores, analytic):
        for name, value in store.params.items():
            flat = value.reshape(-1)
            probes = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
            for j in probes:
                original = flat[j]
                flat[j] = original + eps
                up = float(loss_fn(None).value)
                flat[j] = original - eps
                down = float(loss_fn(None).value)
                flat[j] = original
                numeric = (up - down) / (2.0 * eps)
                exact = grads[name].reshape(-1)[j]
                error = abs(exact - numeric) / max(abs(exact), abs(numeric), atol)
                if error > worst:
                    logger.debug(f"gradcheck {name}[{j}]: analytic={exact:.6e} numeric={numeric:.6e}")
                    worst = error
    return worst
