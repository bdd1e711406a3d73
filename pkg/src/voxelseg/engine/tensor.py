"""Dense tensors and the reverse-mode differentiation tape.

A ``Tensor`` wraps a contiguous row-major numpy buffer of float32 (training
default) or float64 (verification).  Operations executed while a ``Tape`` is
active record ``Node`` entries -- one per produced tensor -- holding the
backward rule as a closure over the forward activations.  Node ids are
assigned in execution order, so every input id is smaller than its consumer's
id and a single reverse sweep visits each node exactly once.
"""

import numpy as np

from ..errors import EngineError, ShapeError
from .rng import Rng

MAX_RANK = 5
_DTYPES = (np.float32, np.float64)


def _check_dtype(dtype):
    if dtype not in (np.float32, np.float64) and np.dtype(dtype) not in [np.dtype(d) for d in _DTYPES]:
        raise ShapeError(f"unsupported element type {dtype!r}; use float32 or float64")
    return np.dtype(dtype)


class Tensor:
    """Immutable dense array value, optionally linked to a tape node."""

    __slots__ = ("data", "node", "tape")

    def __init__(self, data: np.ndarray):
        arr = np.ascontiguousarray(data)
        if arr.dtype not in (np.float32, np.float64):
            raise ShapeError(f"tensor dtype must be float32/float64, got {arr.dtype}")
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds maximum of {MAX_RANK}")
        if arr.size == 0:
            raise ShapeError(f"zero-extent tensor of shape {arr.shape} rejected")
        self.data = arr
        self.node = None
        self.tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    # Operator sugar; the real implementations live in ops.py and are bound
    # at import time by engine/__init__ to avoid a circular import.
    def __add__(self, other):
        return _OPS["add"](self, other)

    def __sub__(self, other):
        return _OPS["sub"](self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _OPS["scale"](self, float(other))
        return _OPS["mul"](self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return _OPS["neg"](self)


_OPS: dict = {}


def _register_operator(name, fn):
    _OPS[name] = fn


class Node:
    """One recorded operation: tag, input node ids, and its backward rule."""

    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op: str, inputs: tuple, vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


_ACTIVE_TAPE = None


def active_tape():
    return _ACTIVE_TAPE


class Tape:
    """Single-writer record of one differentiable computation.

    Use as a context manager around a forward pass; call :meth:`backward`
    with the scalar loss to obtain gradients for every watched leaf.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise EngineError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, op: str, inputs: tuple, vjp) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(op, inputs, vjp))
        return nid

    def watch(self, t: Tensor) -> Tensor:
        """Register ``t`` as a differentiable leaf (e.g. a parameter)."""
        nid = self.record("leaf", (), None)
        t.node = nid
        t.tape = self
        self._leaves[nid] = t
        return t

    def backward(self, loss: Tensor) -> dict:
        """Gradients of the scalar ``loss`` w.r.t. every watched leaf.

        Returns a mapping from leaf node id to gradient array; leaves the
        loss does not depend on get zero gradients of matching shape.
        """
        if loss.tape is not self or loss.node is None:
            raise EngineError("loss tensor was not recorded on this tape")
        if loss.data.size != 1:
            raise EngineError(f"loss must be scalar, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.node] = np.ones_like(loss.data)
        for nid in range(loss.node, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.vjp is None:
                continue
            for in_id, gin in zip(node.inputs, node.vjp(g)):
                if gin is None:
                    continue
                if grads[in_id] is None:
                    grads[in_id] = gin
                else:
                    grads[in_id] = grads[in_id] + gin
        out = {}
        for nid, leaf in self._leaves.items():
            g = grads[nid]
            out[nid] = np.zeros_like(leaf.data) if g is None else g
        return out


def backward(tape: Tape, loss: Tensor) -> dict:
    return tape.backward(loss)


def gradients_by_name(tape: Tape, loss: Tensor, named: dict) -> dict:
    """Convenience: backward pass returning gradients keyed by parameter name."""
    by_id = tape.backward(loss)
    return {name: by_id[t.node] for name, t in named.items()}


def record_op(op: str, out_data: np.ndarray, inputs, vjp_all) -> Tensor:
    """Wrap ``out_data`` in a Tensor, recording a tape node when needed.

    ``vjp_all(grad_out)`` must return one gradient array per entry of
    ``inputs`` (entries for inputs that turn out to be constants are simply
    discarded).  Recording happens only when a tape is active and at least
    one input is itself recorded on that tape.
    """
    t = Tensor(out_data)
    tape = _ACTIVE_TAPE
    if tape is None:
        return t
    tracked = [(pos, x.node) for pos, x in enumerate(inputs)
               if x.tape is tape and x.node is not None]
    if not tracked:
        return t
    positions = tuple(pos for pos, _ in tracked)
    ids = tuple(nid for _, nid in tracked)

    if len(positions) == len(inputs):
        vjp = vjp_all
    else:
        def vjp(g, _positions=positions, _vjp=vjp_all):
            full = _vjp(g)
            return tuple(full[p] for p in _positions)

    t.node = tape.record(op, ids, vjp)
    t.tape = tape
    return t


# ---------------------------------------------------------------------------
# Creation
# ---------------------------------------------------------------------------

def _check_build_shape(shape):
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= MAX_RANK:
        raise ShapeError(f"rank must be in [1, {MAX_RANK}], got {len(shape)}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(_check_build_shape(shape), dtype=_check_dtype(dtype)))


def full(shape, value: float, dtype=np.float32) -> Tensor:
    return Tensor(np.full(_check_build_shape(shape), value, dtype=_check_dtype(dtype)))


def normal(shape, mean: float, std: float, rng: Rng, *subkeys: int,
           dtype=np.float32) -> Tensor:
    """Seeded normal draw from the init stream."""
    shape = _check_build_shape(shape)
    return Tensor(rng.normal(shape, mean, std, "init", *subkeys,
                             dtype=_check_dtype(dtype)))


def from_array(data, dtype=None) -> Tensor:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(_check_dtype(dtype))
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


def ones_like(t: Tensor) -> Tensor:
    return Tensor(np.ones_like(t.data))
