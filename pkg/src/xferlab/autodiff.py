"""Tape-based reverse-mode differentiation over dense numpy arrays.

Every operation appends a node to a :class:`Tape`; :func:`grad` walks the
tape backwards from the last registered output.  Only the handful of ops the
classifiers and the meta learner need are provided.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class AutodiffError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    aux: Any = None


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.tape.const(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(self.tape.const(other), self)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self):
        return vsum(self)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.outputs: list[int] = []

    def _push(self, op, inputs, value, aux=None) -> Var:
        value = np.asarray(value, dtype=float)
        self.nodes.append(Node(op, tuple(inputs), value, aux))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> Var:
        return self._push("leaf", (), np.array(value, dtype=float))

    def const(self, value) -> Var:
        return self._push("const", (), np.asarray(value, dtype=float))

    def output(self, var: Var) -> Var:
        self.outputs.append(var.index)
        return var

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise AutodiffError("variable belongs to a different tape")
            return x
        return self.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise AutodiffError("at least one operand must be a tape variable")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    return t._push("add", (a.index, b.index), a.value + b.value)


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    return t._push("sub", (a.index, b.index), a.value - b.value)


def mul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    return t._push("mul", (a.index, b.index), a.value * b.value)


def matmul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise AutodiffError("matmul expects 2-d operands")
    return t._push("matmul", (a.index, b.index), a.value @ b.value)


def tanh(a: Var) -> Var:
    return a.tape._push("tanh", (a.index,), np.tanh(a.value))


def square(a: Var) -> Var:
    return a.tape._push("square", (a.index,), a.value * a.value)


def vsum(a: Var) -> Var:
    return a.tape._push("sum", (a.index,), np.sum(a.value))


def mean_rows(a: Var) -> Var:
    """Mean over axis 0, keeping a leading axis of length one."""
    return a.tape._push("mean_rows", (a.index,), a.value.mean(axis=0, keepdims=True))


def take(a: Var, key) -> Var:
    return a.tape._push("take", (a.index,), a.value[key], aux=key)


def reshape(a: Var, shape) -> Var:
    return a.tape._push("reshape", (a.index,), a.value.reshape(shape))


def softmax_xent(logits: Var, targets) -> Var:
    """Summed cross-entropy of row-wise softmax against probability targets.

    ``targets`` may be one-hot rows or soft class-probability rows.
    """
    targets = np.asarray(targets, dtype=float)
    z = logits.value
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -np.sum(targets * logp)
    return logits.tape._push("xent", (logits.index,), loss, aux=(np.exp(logp), targets))


def _backward(node: Node, g: np.ndarray, nodes: list[Node]):
    op = node.op
    ins = [nodes[i].value for i in node.inputs]
    if op == "add":
        return [_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)]
    if op == "sub":
        return [_unbroadcast(g, ins[0].shape), _unbroadcast(-g, ins[1].shape)]
    if op == "mul":
        return [_unbroadcast(g * ins[1], ins[0].shape), _unbroadcast(g * ins[0], ins[1].shape)]
    if op == "matmul":
        return [g @ ins[1].T, ins[0].T @ g]
    if op == "tanh":
        return [g * (1.0 - node.value**2)]
    if op == "square":
        return [2.0 * ins[0] * g]
    if op == "sum":
        return [np.broadcast_to(g, ins[0].shape).copy()]
    if op == "mean_rows":
        return [np.broadcast_to(g / ins[0].shape[0], ins[0].shape).copy()]
    if op == "take":
        out = np.zeros_like(ins[0])
        np.add.at(out, node.aux, g)
        return [out]
    if op == "reshape":
        return [g.reshape(ins[0].shape)]
    if op == "xent":
        probs, targets = node.aux
        return [g * (probs * targets.sum(axis=1, keepdims=True) - targets)]
    raise AutodiffError(f"no backward rule for op {op!r}")


def grad(tape: Tape, wrt: Sequence[Var | int]) -> np.ndarray:
    """Gradient of the tape's last output w.r.t. the given leaves, flattened and concatenated."""
    if not tape.outputs:
        raise AutodiffError("tape has no registered output")
    out = tape.outputs[-1]
    nodes = tape.nodes
    if nodes[out].value.size != 1:
        raise AutodiffError(f"output node #{out} is not scalar (shape {nodes[out].value.shape})")
    idx = [w.index if isinstance(w, Var) else int(w) for w in wrt]
    for i in idx:
        if nodes[i].op not in ("leaf", "const"):
            raise AutodiffError(f"node #{i} ({nodes[i].op}) is not a leaf")

    adj: dict[int, np.ndarray] = {out: np.ones_like(nodes[out].value)}
    for i in range(out, -1, -1):
        g = adj.pop(i, None) if i not in idx else adj.get(i)
        node = nodes[i]
        if not np.all(np.isfinite(node.value)):
            raise AutodiffError(f"non-finite value at node #{i} ({node.op})")
        if g is None or not node.inputs:
            continue
        if not np.all(np.isfinite(g)):
            raise AutodiffError(f"non-finite adjoint at node #{i} ({node.op})")
        for j, gj in zip(node.inputs, _backward(node, g, nodes)):
            if j in adj:
                adj[j] = adj[j] + gj
            else:
                adj[j] = gj
    parts = [adj.get(i, np.zeros_like(nodes[i].value)).ravel() for i in idx]
    return np.concatenate(parts) if parts else np.zeros(0)


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], params, step: float = 1e-5) -> np.ndarray:
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.array(params, dtype=float).ravel()
    out = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        fp = float(loss_fn(theta.copy()))
        theta[i] = orig - step
        fm = float(loss_fn(theta.copy()))
        theta[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise AutodiffError(f"loss_fn returned a non-finite value at coordinate {i}")
        out[i] = (fp - fm) / (2.0 * step)
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs_base: int = 200
    epochs_meta: int = 200
    learning_rate: float = 0.05
    early_stop_loss: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs_base < 0 or self.epochs_meta < 0:
            raise ValueError("epochs must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainLog:
    epochs_run: int = 0
    losses: list[float] = field(default_factory=list)
    stopped_early: bool = False


DIVERGENCE_LOSS = 1e6


def descend(
    theta0: np.ndarray,
    build_loss: Callable[[Tape, Var], Var],
    n_examples: int,
    epochs: int,
    learning_rate: float,
    early_stop_loss: float | None = None,
) -> tuple[np.ndarray, TrainLog]:
    """Full-batch descent on a summed loss: theta -= lr * sum_i dL_i/dtheta.

    ``build_loss`` records the summed loss over all examples on the tape.
    Stops once the mean epoch loss is at or below ``early_stop_loss``.
    """
    theta = np.array(theta0, dtype=float)
    log = TrainLog()
    for _ in range(epochs):
        tape = Tape()
        th = tape.leaf(theta)
        loss = tape.output(build_loss(tape, th))
        mean_loss = float(loss.value) / max(n_examples, 1)
        if not np.isfinite(mean_loss) or mean_loss > DIVERGENCE_LOSS:
            raise TrainingDiverged(
                f"training diverged (mean loss {mean_loss:.3g}); try a smaller learning rate"
            )
        log.losses.append(mean_loss)
        if early_stop_loss is not None and mean_loss <= early_stop_loss:
            log.stopped_early = True
            break
        theta = theta - learning_rate * grad(tape, [th])
        log.epochs_run += 1
    return theta, log
