"""Two-hidden-layer ReLU network with an action head and a message head.

All parameters of one network live in a single flat float64 vector; the
per-layer arrays are views into it. The native kernel relies on this layout
(see ``LAYOUT``), so keep the two in sync.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Stream

HIDDEN = (25, 15)
N_OUT = 4


class Head(enum.IntEnum):
    ACTION = 0
    MESSAGE = 1


def layout(input_dim: int) -> dict[str, tuple[int, tuple[int, ...]]]:
    """Offset and shape of every parameter block inside the flat vector."""
    h1, h2 = HIDDEN
    shapes = [
        ("w1", (input_dim, h1)),
        ("b1", (h1,)),
        ("w2", (h1, h2)),
        ("b2", (h2,)),
        ("wa", (h2, N_OUT)),
        ("ba", (N_OUT,)),
        ("wm", (h2, N_OUT)),
        ("bm", (N_OUT,)),
    ]
    out = {}
    offset = 0
    for name, shape in shapes:
        out[name] = (offset, shape)
        offset += math.prod(shape)
    return out


def n_params(input_dim: int) -> int:
    return sum(math.prod(shape) for _, shape in layout(input_dim).values())


LAYOUT = layout(9)


@dataclass
class Mlp:
    input_dim: int
    flat: np.ndarray

    w1: np.ndarray = field(init=False, repr=False)
    b1: np.ndarray = field(init=False, repr=False)
    w2: np.ndarray = field(init=False, repr=False)
    b2: np.ndarray = field(init=False, repr=False)
    wa: np.ndarray = field(init=False, repr=False)
    ba: np.ndarray = field(init=False, repr=False)
    wm: np.ndarray = field(init=False, repr=False)
    bm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (n_params(self.input_dim),):
            raise ValueError(f"expected {n_params(self.input_dim)} parameters, got {self.flat.shape}")
        for name, (off, shape) in layout(self.input_dim).items():
            setattr(self, name, self.flat[off : off + math.prod(shape)].reshape(shape))

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *HIDDEN, N_OUT, N_OUT)

    def copy(self) -> "Mlp":
        return Mlp(self.input_dim, self.flat.copy())

    def dump(self) -> str:
        """Text dump: header with layer sizes, then one parameter per line."""
        header = "layers " + " ".join(str(s) for s in self.layer_sizes)
        return header + "\n" + "\n".join(repr(float(v)) for v in self.flat) + "\n"

    @classmethod
    def load(cls, text: str) -> "Mlp":
        lines = text.split()
        if lines[0] != "layers":
            raise ValueError("missing 'layers' header")
        input_dim = int(lines[1])
        values = np.array([float(v) for v in lines[1 + len(HIDDEN) + 3 :]], dtype=np.float64)
        return cls(input_dim, values)


def init(input_dim: int, rng: Stream) -> Mlp:
    """He-style fan-in uniform weights, zero biases, drawn block by block."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    net = Mlp(input_dim, np.zeros(n_params(input_dim)))
    for name in ("w1", "w2", "wa", "wm"):
        w = getattr(net, name)
        bound = math.sqrt(6.0 / w.shape[0])
        values = [(2.0 * rng.uniform() - 1.0) * bound for _ in range(w.size)]
        w[...] = np.asarray(values).reshape(w.shape)
    return net


def zeros(input_dim: int) -> Mlp:
    return Mlp(input_dim, np.zeros(n_params(input_dim)))


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {net.input_dim}")
    h1 = np.maximum(x @ net.w1 + net.b1, 0.0)
    h2 = np.maximum(h1 @ net.w2 + net.b2, 0.0)
    return h2 @ net.wa + net.ba, h2 @ net.wm + net.bm


def forward_cache(net: Mlp, x: np.ndarray):
    """Batched forward pass that also returns the hidden activations."""
    h1 = np.maximum(x @ net.w1 + net.b1, 0.0)
    h2 = np.maximum(h1 @ net.w2 + net.b2, 0.0)
    return h1, h2, h2 @ net.wa + net.ba, h2 @ net.wm + net.bm


def backward_batch(
    net: Mlp,
    x: np.ndarray,
    cache,
    d_action: np.ndarray,
    d_message: np.ndarray,
) -> np.ndarray:
    """Flat gradient of ``sum(d_action * Qa) + sum(d_message * Qm)`` over a batch."""
    h1, h2, _, _ = cache
    g = np.zeros_like(net.flat)
    grads = Mlp(net.input_dim, g)
    grads.wa[...] = h2.T @ d_action
    grads.ba[...] = d_action.sum(axis=0)
    grads.wm[...] = h2.T @ d_message
    grads.bm[...] = d_message.sum(axis=0)
    dh2 = (d_action @ net.wa.T + d_message @ net.wm.T) * (h2 > 0)
    grads.w2[...] = h1.T @ dh2
    grads.b2[...] = dh2.sum(axis=0)
    dh1 = (dh2 @ net.w2.T) * (h1 > 0)
    grads.w1[...] = x.T @ dh1
    grads.b1[...] = dh1.sum(axis=0)
    return g


def backward(net: Mlp, x: np.ndarray, head: Head, unit_index: int, loss_grad: float) -> Mlp:
    """Gradient of one output unit times ``loss_grad``, as an Mlp-shaped container."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != net.input_dim:
        raise ValueError(f"input has {x.shape[1]} features, network expects {net.input_dim}")
    d_action = np.zeros((1, N_OUT))
    d_message = np.zeros((1, N_OUT))
    (d_action if Head(head) is Head.ACTION else d_message)[0, unit_index] = loss_grad
    g = backward_batch(net, x, forward_cache(net, x), d_action, d_message)
    return Mlp(net.input_dim, g)


@dataclass
class Optimizer:
    """SGD or Adam state over a flat parameter vector."""

    algorithm: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def __post_init__(self) -> None:
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def bind(self, size: int) -> "Optimizer":
        if self.algorithm == "adam":
            if self.m is None:
                self.m = np.zeros(size)
                self.v = np.zeros(size)
            elif self.m.shape != (size,) or self.v.shape != (size,):
                raise ValueError("optimizer moments do not match parameter count")
        return self


def step(net: Mlp, opt: Optimizer, grad: np.ndarray | Mlp) -> None:
    """Apply one optimizer update in place."""
    g = grad.flat if isinstance(grad, Mlp) else np.asarray(grad, dtype=np.float64)
    if g.shape != net.flat.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {net.flat.shape}")
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise FloatingPointError(
            f"non-finite gradient in {bad.size} entries (first flat index {bad[0]}, "
            f"value {g[bad[0]]}); max |param| = {np.max(np.abs(net.flat)):.3g}"
        )
    if opt.algorithm == "sgd":
        net.flat -= opt.learning_rate * g
        return
    opt.bind(g.size)
    opt.t += 1
    opt.m *= opt.beta1
    opt.m += (1.0 - opt.beta1) * g
    opt.v *= opt.beta2
    opt.v += (1.0 - opt.beta2) * (g * g)
    m_hat = opt.m / (1.0 - opt.beta1**opt.t)
    v_hat = opt.v / (1.0 - opt.beta2**opt.t)
    net.flat -= opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
