"""Minimal dense networks with explicit reverse-mode gradients.

The models in this library are small fixed pipelines, so gradients are
written out by hand against a forward tape instead of a general autodiff
graph; `gradcheck` validates any parameterized scalar against central
finite differences. All randomness goes through numpy's PCG64 generator so
streams are reproducible and splittable across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dense",
    "MlpParams",
    "DenseGrads",
    "Tape",
    "mlp_forward",
    "mlp_backward",
    "init_gaussian",
    "init_mlp",
    "SgdState",
    "AdamState",
    "sgd_step",
    "adam_step",
    "GradCheckReport",
    "gradcheck",
    "rng_from_seed",
    "save_arrays",
    "load_arrays",
]

_ACTIVATIONS = ("relu", "identity")


def rng_from_seed(*entropy) -> np.random.Generator:
    """PCG64 generator from an entropy tuple; same tuple, same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass
class Dense:
    """One dense layer: y = act(w @ x + b), with w shaped (out, in)."""

    w: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ValueError(f"inconsistent dense shapes {self.w.shape} / {self.b.shape}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_out(self) -> int:
        return self.w.shape[0]

    @property
    def n_in(self) -> int:
        return self.w.shape[1]


@dataclass
class MlpParams:
    layers: list[Dense]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.n_in != prev.n_out:
                raise ValueError("consecutive layer shapes do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].n_out

    def parameters(self) -> list[np.ndarray]:
        """Flat view [w0, b0, w1, b1, ...]; arrays are shared, not copied."""
        out = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([Dense(l.w.copy(), l.b.copy(), l.activation) for l in self.layers])


@dataclass
class Tape:
    """Cached forward state; consumed by mlp_backward."""

    params: MlpParams
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]     # pre-activation of each layer
    squeeze: bool             # input was 1-D


@dataclass
class DenseGrads:
    dw: np.ndarray
    db: np.ndarray


def mlp_forward(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the network on a vector or a batch of row vectors.

    Returns the output and a tape of cached activations for the matching
    backward pass.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != p.in_dim:
        raise ValueError(f"input dim {h.shape[1]} != expected {p.in_dim}")
    inputs, pre = [], []
    for layer in p.layers:
        inputs.append(h)
        z = h @ layer.w.T + layer.b
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    y = h[0] if squeeze else h
    return y, Tape(p, inputs, pre, squeeze)


def mlp_backward(p: MlpParams, tape: Tape, dy: np.ndarray) -> tuple[np.ndarray, list[DenseGrads]]:
    """Reverse-mode pass; dy has the shape of the forward output."""
    if tape.params is not p:
        raise ValueError("tape does not belong to these parameters")
    dy = np.asarray(dy, dtype=float)
    g = dy[None, :] if tape.squeeze else dy
    grads: list[DenseGrads] = [None] * len(p.layers)  # type: ignore[list-item]
    for i in range(len(p.layers) - 1, -1, -1):
        layer = p.layers[i]
        if layer.activation == "relu":
            g = g * (tape.pre[i] > 0.0)
        grads[i] = DenseGrads(g.T @ tape.inputs[i], g.sum(axis=0))
        g = g @ layer.w
    dx = g[0] if tape.squeeze else g
    return dx, grads


def init_gaussian(shape: tuple[int, int], mean: float, std: float, seed,
                  activation: str = "relu") -> Dense:
    """Dense layer with N(mean, std) weights and zero bias; reproducible from seed.

    `seed` may be an int tuple or an existing Generator (consumed in place).
    """
    if std < 0:
        raise ValueError("std must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else rng_from_seed(seed)
    w = mean + std * rng.standard_normal(shape)
    return Dense(w, np.zeros(shape[0]), activation)


def init_mlp(dims: list[int], mean: float, std: float, rng: np.random.Generator,
             hidden_activation: str = "relu", last_bias: float = 0.0) -> MlpParams:
    """Stack of gaussian-initialized layers; hidden relu, identity head."""
    layers = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        act = "identity" if last else hidden_activation
        layer = init_gaussian((dims[i + 1], dims[i]), mean, std, rng, act)
        if last and last_bias != 0.0:
            layer.b[:] = last_bias
        layers.append(layer)
    return MlpParams(layers)


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def set_lr(self, lr: float):
        self.lr = lr


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    def set_lr(self, lr: float):
        self.lr = lr


def _check_aligned(params, grads):
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch {p.shape} vs {g.shape}")


def sgd_step(state: SgdState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """In-place SGD update with optional momentum and coupled weight decay."""
    _check_aligned(params, grads)
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    for p, g, vel in zip(params, grads, state.velocity):
        eff = g + state.weight_decay * p if state.weight_decay else g
        if state.momentum:
            vel *= state.momentum
            vel += eff
            p -= state.lr * vel
        else:
            p -= state.lr * eff


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """In-place Adam update with bias-corrected moments."""
    _check_aligned(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        eff = g + state.weight_decay * p if state.weight_decay else g
        m *= state.beta1
        m += (1.0 - state.beta1) * eff
        v *= state.beta2
        v += (1.0 - state.beta2) * eff * eff
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class GradCheckReport:
    """Result of a finite-difference comparison over probed coordinates."""

    max_rel_err: float
    worst: tuple[int, int]        # (param index, flat coordinate)
    n_checked: int
    excluded: list[tuple[int, int]]

    def ok(self, tol: float) -> bool:
        return self.n_checked > 0 and self.max_rel_err <= tol


def _rel_err(a: float, b: float, floor: float = 1e-10) -> float:
    if abs(a) < floor and abs(b) < floor:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def gradcheck(f, params: list[np.ndarray], h: float = 1e-5,
              n_coords: int | None = None, rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of a scalar function against central differences.

    `f(params) -> (value, grads)` must be deterministic. Every coordinate is
    probed unless `n_coords` limits to a random subsample. A coordinate where
    the h and h/2 difference quotients disagree by more than 10% is excluded
    as non-smooth (e.g. a relu kink straddling the probe) instead of failed.
    """
    coords = [(pi, ci) for pi, p in enumerate(params) for ci in range(p.size)]
    if n_coords is not None and n_coords < len(coords):
        if rng is None:
            rng = rng_from_seed(0)
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[int(i)] for i in picked]

    _, grads = f(params)
    max_err, worst, n_checked = 0.0, (-1, -1), 0
    excluded: list[tuple[int, int]] = []
    for pi, ci in coords:
        flat = params[pi].reshape(-1)
        orig = flat[ci]

        def probe(delta):
            flat[ci] = orig + delta
            val = f(params)[0]
            flat[ci] = orig
            return val

        fd = (probe(h) - probe(-h)) / (2.0 * h)
        fd_half = (probe(0.5 * h) - probe(-0.5 * h)) / h
        if _rel_err(fd, fd_half) > 0.1:
            excluded.append((pi, ci))
            continue
        err = _rel_err(float(grads[pi].reshape(-1)[ci]), fd)
        n_checked += 1
        if err > max_err:
            max_err, worst = err, (pi, ci)
    return GradCheckReport(max_err, worst, n_checked, excluded)


_CKPT_HEADER = "detweight-ckpt v1"
_FMT = "{:.9g}"


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Versioned text checkpoint: header, then per-array shape line and
    row-major values at 9 significant digits. Keys are written sorted."""
    with open(path, "w") as fh:
        fh.write(_CKPT_HEADER + "\n")
        for name in sorted(arrays):
            a = np.asarray(arrays[name], dtype=float)
            dims = " ".join(str(d) for d in a.shape)
            fh.write(f"array {name} {a.ndim} {dims}\n")
            flat = a.reshape(-1)
            for start in range(0, flat.size, 8):
                fh.write(" ".join(_FMT.format(v) for v in flat[start:start + 8]) + "\n")


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != _CKPT_HEADER:
            raise ValueError(f"unrecognized checkpoint header {header!r}")
        out: dict[str, np.ndarray] = {}
        line = fh.readline()
        while line:
            parts = line.split()
            if not parts:
                line = fh.readline()
                continue
            if parts[0] != "array":
                raise ValueError(f"malformed checkpoint line: {line!r}")
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(d) for d in parts[3:3 + ndim])
            n = int(np.prod(shape)) if shape else 1
            vals: list[float] = []
            while len(vals) < n:
                vals.extend(float(v) for v in fh.readline().split())
            out[name] = np.array(vals, dtype=float).reshape(shape)
            line = fh.readline()
    return out
