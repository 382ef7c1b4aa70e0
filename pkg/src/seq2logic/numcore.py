"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` records every primitive applied while it is active.  Ops run
outside a tape (or on tensors that do not require gradients) are plain numpy
evaluations, which is what finite-difference probes and frozen decoding use.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64


class Tensor:
    """Dense array with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitives; use as a context manager."""

    _active: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @staticmethod
    def current() -> "Tape | None":
        return Tape._active[-1] if Tape._active else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def primitive(op: str, values: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``values`` as the output of ``op`` and record it if differentiable.

    ``vjp`` maps the output cotangent to one cotangent per input (``None``
    for inputs that need nothing).
    """
    tape = Tape.current()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.requires_grad = needs
    out.name = None
    if needs:
        tape.nodes.append(Node(op, tuple(inputs), out, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return primitive("add", a.values + b.values, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return primitive("sub", a.values - b.values, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    return primitive("mul", av * bv, (a, b),
                     lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def matmul(a, b) -> Tensor:
    """Matrix/vector product with numpy ``@`` semantics for 1-D and 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D/2-D operands, got {av.shape} @ {bv.shape}")

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:  # (k,) @ (k, n)
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:  # (n, k) @ (k,)
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return primitive("matmul", av @ bv, (a, b), vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.values)
    return primitive("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.values)
    return primitive("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.values)
    return primitive("exp", e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    return primitive("log", np.log(av), (a,), lambda g: (g / av,))


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    return primitive("sum", np.array(a.values.sum()), (a,),
                     lambda g: (np.broadcast_to(g, shape).copy(),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return primitive("concat", np.concatenate([p.values for p in parts], axis=axis), parts,
                     lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    return primitive("stack", np.stack([p.values for p in parts]), parts,
                     lambda g: tuple(g[i] for i in range(len(parts))))


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (int, np.integer, slice)) for p in parts)

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return primitive("getitem", np.array(a.values[idx]), (a,), vjp)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max()
    lse = np.log(np.exp(shifted).sum())
    out = shifted - lse
    p = np.exp(out)
    return primitive("log_softmax", out, (a,), lambda g: (g - p * g.sum(),))


def logsumexp(a) -> Tensor:
    a = as_tensor(a)
    m = a.values.max()
    w = np.exp(a.values - m)
    z = w.sum()
    return primitive("logsumexp", np.array(m + np.log(z)), (a,), lambda g: (g * w / z,))


def softmax_t(a) -> Tensor:
    """Differentiable softmax over a 1-D tensor."""
    a = as_tensor(a)
    p = softmax(a.values)
    return primitive("softmax", p, (a,), lambda g: (p * (g - (g * p).sum()),))


# ------------------------------------------------------------ numeric helpers


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(v) -> np.ndarray:
    """Max-shifted softmax of a finite, nonempty real vector."""
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise ValueError(f"softmax input not finite at index {int(bad[0])}: {v.flat[bad[0]]}")
    e = np.exp(v - v.max())
    return e / e.sum()


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()) -> dict[int, np.ndarray]:
    """Propagate d(loss) back through ``tape``.

    Every tensor in ``params`` gets ``.grad`` assigned; parameters the loss does
    not reach get zeros.  Leaf tensors seen on the tape also receive grads.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    produced = set()
    for node in reversed(tape.nodes):
        produced.add(id(node.output))
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.array(gi, dtype=DTYPE)
    leaves = {}
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in produced:
                leaves[id(inp)] = inp
    for p in params:
        leaves[id(p)] = p
    for key, t in leaves.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.values) if g is None else g.reshape(t.shape)
    return grads


# ------------------------------------------------------------ gradient checks


@dataclass
class GradCheckReport:
    """Worst relative error per parameter from :func:`finite_diff_check`."""

    tol: float
    worst: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.worst.items() if not err <= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.worst.values(), default=0.0)

    def table(self) -> str:
        rows = [f"{'parameter':<16} {'entries':>8} {'max rel err':>12}  status"]
        for name, err in self.worst.items():
            status = "pass" if err <= self.tol else "FAIL"
            rows.append(f"{name:<16} {self.checked[name]:>8} {err:>12.3e}  {status}")
        return "\n".join(rows)


class NonDeterministicError(RuntimeError):
    pass


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tol: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` with central differences.

    ``f`` takes no arguments and reads the parameter tensors in place.  With
    ``max_entries`` set, that many entries per parameter are probed (chosen by
    ``rng``); otherwise every entry is.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    first, second = f().item(), f().item()
    if first != second:
        raise NonDeterministicError(f"f returned {first!r} then {second!r} for identical inputs")
    with Tape() as tape:
        loss = f()
    backward(tape, loss, params.values())
    report = GradCheckReport(tol=tol)
    rng = rng or np.random.default_rng(0)
    for name, p in params.items():
        flat = p.values.reshape(-1)
        analytic = p.grad.reshape(-1).copy()
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for k in entries:
            orig = flat[k]
            flat[k] = orig + step
            hi = f().item()
            flat[k] = orig - step
            lo = f().item()
            flat[k] = orig
            numeric = (hi - lo) / (2.0 * step)
            worst = max(worst, relative_error(analytic[k], numeric))
        report.worst[name] = worst
        report.checked[name] = int(entries.size)
    return report


# ---------------------------------------------------------------------- rng


@dataclass(frozen=True)
class SeededRng:
    """A (seed, stream) pair naming an independent, reproducible draw sequence."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(self.stream & (2**64 - 1),))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, name: str | int) -> "SeededRng":
        return SeededRng(self.seed, stream_id(name, self.stream))


def stream_id(name: str | int, parent: int = 0) -> int:
    if isinstance(name, int):
        key = f"{parent}:#{name}"
    else:
        key = f"{parent}:{name}"
    return zlib.crc32(key.encode("utf-8"))


# ---------------------------------------------------------------- checkpoint

CHECKPOINT_MAGIC = b"S2LCKPT\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: Mapping[str, Tensor | np.ndarray]) -> None:
    """Write a versioned manifest plus little-endian float64 payloads."""
    manifest, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = np.asarray(t.values if isinstance(t, Tensor) else t, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path, expected: Mapping[str, tuple[int, ...]] | None = None) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = 8 + struct.calcsize("<IQ")
    manifest = json.loads(blob[start:start + hlen].decode("utf-8"))
    base = start + hlen
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        lo = base + entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=lo).reshape(shape)
        out[entry["name"]] = arr.astype(DTYPE)
    if expected is not None:
        missing = set(expected) - set(out)
        if missing:
            raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
        for name, shape in expected.items():
            if tuple(out[name].shape) != tuple(shape):
                raise CheckpointError(
                    f"{path}: shape mismatch for {name}: file {out[name].shape}, expected {tuple(shape)}")
    return out
