"""Feedforward GELU networks: evaluation, Taylor jets, combinators, audit, I/O.

A network with layers (A_1, b_1), ..., (A_L, b_L) computes

    h_0 = x,  h_j = GELU(A_j h_{j-1} - b_j)  for j < L,  f(x) = A_L h_{L-1} - b_L.

The shift is subtracted, and the last layer is affine.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import sparse

from .activation import MAX_ORDER, gelu, gelu_taylor

CONVENTION = "pre_act = A*h - b"
FORMAT_VERSION = 1
# points per block when propagating jets, keeps temporaries a few hundred MB at most
_JET_CHUNK = 2048
# compensated summation is used for output layers up to this many rows
_COMPENSATED_ROWS = 8


class NetworkError(ValueError):
    """Dimension-chain violations, malformed documents and similar input errors."""


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        w = np.array(self.weight, dtype=float, copy=True)
        b = np.array(self.shift, dtype=float, copy=True).reshape(-1)
        if w.ndim != 2:
            raise NetworkError("layer weight must be a matrix")
        if b.shape[0] != w.shape[0]:
            raise NetworkError(
                f"shift length {b.shape[0]} does not match weight rows {w.shape[0]}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NetworkError("layer entries must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "shift", b)

    @property
    def rows(self) -> int:
        return self.weight.shape[0]

    @property
    def cols(self) -> int:
        return self.weight.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Layer):
            return NotImplemented
        return np.array_equal(self.weight, other.weight) and np.array_equal(
            self.shift, other.shift
        )


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise NetworkError("a network needs at least one layer")
        for j in range(1, len(layers)):
            if layers[j].cols != layers[j - 1].rows:
                raise NetworkError(
                    f"width chain broken between layers {j} and {j + 1}: "
                    f"{layers[j - 1].rows} outputs feed {layers[j].cols} inputs"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].cols

    @property
    def output_dim(self) -> int:
        return self.layers[-1].rows

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + tuple(layer.rows for layer in self.layers)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            a == b for a, b in zip(self.layers, other.layers)
        )

    def __call__(self, x):
        return evaluate(self, x)


def affine(weight, shift=None) -> Network:
    """Single-layer network x -> weight @ x - shift."""
    w = np.atleast_2d(np.asarray(weight, dtype=float))
    b = np.zeros(w.shape[0]) if shift is None else shift
    return Network((Layer(w, b),))


def identity_network(n: int) -> Network:
    return affine(np.eye(n))


def zero_network(n_in: int = 1, n_out: int = 1) -> Network:
    return affine(np.zeros((n_out, n_in)))


# ---------------------------------------------------------------- evaluation


def _split(a):
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


def _compensated_affine(w: np.ndarray, h: np.ndarray, b: np.ndarray) -> np.ndarray:
    """w @ h - b[:, None] accumulated with error-free transformations.

    The result is as accurate as if computed in twice the working precision
    and then rounded, so exact cancellations between terms survive.
    """
    s = np.broadcast_to(-b[:, None], (w.shape[0], h.shape[1])).copy()
    comp = np.zeros_like(s)
    for j in range(w.shape[1]):
        a = w[:, j : j + 1]
        if not np.any(a):
            continue
        x = h[j : j + 1, :]
        p = a * x
        ah, al = _split(a)
        xh, xl = _split(x)
        pe = ((ah * xh - p) + ah * xl + al * xh) + al * xl
        t = s + p
        z = t - s
        se = (s - (t - z)) + (p - z)
        s = t
        comp += se + pe
    return s + comp


def _affine_apply(layer: Layer, h: np.ndarray, last: bool, constant: bool = True) -> np.ndarray:
    """Apply one affine map to columns of ``h``; ``constant`` toggles the shift."""
    b = layer.shift if constant else np.zeros(layer.rows)
    if last and layer.rows <= _COMPENSATED_ROWS:
        return _compensated_affine(layer.weight, h, b)
    out = layer.weight @ h
    if constant:
        out -= b[:, None]
    return out


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x, single = x.reshape(1, 1), True
    elif x.ndim == 1:
        if x.shape[0] == net.input_dim:
            x, single = x.reshape(1, -1), True
        elif net.input_dim == 1:
            x, single = x.reshape(-1, 1), False
        else:
            raise NetworkError(f"input has {x.shape[0]} coordinates, network expects {net.input_dim}")
    else:
        single = False
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise NetworkError(f"input shape {x.shape} does not fit {net.input_dim} network inputs")
    return x, single


def evaluate(net: Network, x) -> np.ndarray:
    """Evaluate ``net`` at a point of shape (input_dim,) or a batch (n, input_dim).

    A 1-D array is read as a batch of scalars when the network has a single
    input. Returns shape (output_dim,) for one point and (n, output_dim)
    for a batch.
    """
    xb, single = _as_batch(net, x)
    h = xb.T
    for j, layer in enumerate(net.layers):
        last = j == net.depth - 1
        h = _affine_apply(layer, h, last)
        if not last:
            h = gelu(h)
    out = h.T
    return out[0] if single else out


# ---------------------------------------------------------------- Taylor jets


@lru_cache(maxsize=None)
def multi_indices(n: int, m: int) -> tuple:
    """All multi-indices in n variables with total degree <= m, graded order."""
    out = []
    for deg in range(m + 1):
        for combo in itertools.combinations_with_replacement(range(n), deg):
            k = [0] * n
            for i in combo:
                k[i] += 1
            out.append(tuple(k))
    return tuple(out)


@lru_cache(maxsize=None)
def _index_map(n: int, m: int) -> dict:
    return {k: i for i, k in enumerate(multi_indices(n, m))}


@lru_cache(maxsize=None)
def _product_plan(n: int, m: int):
    """Sparse plan for the truncated product of a jet without constant term and a jet."""
    idx = multi_indices(n, m)
    pos = _index_map(n, m)
    left, right, target = [], [], []
    for i, a in enumerate(idx):
        if sum(a) == 0:
            continue
        for j, b in enumerate(idx):
            if sum(a) + sum(b) > m:
                continue
            left.append(i)
            right.append(j)
            target.append(pos[tuple(x + y for x, y in zip(a, b))])
    left = np.array(left, dtype=np.intp)
    right = np.array(right, dtype=np.intp)
    gather = sparse.csr_matrix(
        (np.ones(len(target)), (np.array(target), np.arange(len(target)))),
        shape=(len(idx), len(target)),
    )
    return left, right, gather


def _jet_mul(delta: np.ndarray, other: np.ndarray, n: int, m: int) -> np.ndarray:
    left, right, gather = _product_plan(n, m)
    if left.size == 0:
        return np.zeros_like(other)
    prod = delta[left] * other[right]
    shape = prod.shape
    return (gather @ prod.reshape(shape[0], -1)).reshape((gather.shape[0],) + shape[1:])


def _gelu_jet(z: np.ndarray, n: int, m: int) -> np.ndarray:
    """Compose GELU with a jet by Horner substitution of the centred series."""
    c = z[0]
    g = gelu_taylor(c, m)
    if m == 0:
        return g[:1]
    delta = z.copy()
    delta[0] = 0.0
    out = delta * (g[m] / math.factorial(m))
    out[0] += g[m - 1] / math.factorial(m - 1)
    for k in range(m - 2, -1, -1):
        out = _jet_mul(delta, out, n, m)
        out[0] += g[k] / math.factorial(k)
    return out


def taylor_coefficients(net: Network, x, m: int) -> np.ndarray:
    """Taylor coefficients d^k f / k! at each point, for all |k| <= m.

    Returns shape (n_coef, output_dim, n_points) in :func:`multi_indices`
    order.
    """
    if m > MAX_ORDER:
        raise NetworkError(f"order {m} exceeds capacity {MAX_ORDER}")
    xb, _ = _as_batch(net, x)
    n = net.input_dim
    if m >= 3 and n > 8:
        raise NetworkError("jets of order >= 3 support at most 8 inputs")
    idx = multi_indices(n, m)
    blocks = []
    for start in range(0, xb.shape[0], _JET_CHUNK):
        pts = xb[start : start + _JET_CHUNK].T
        h = np.zeros((len(idx), n, pts.shape[1]))
        h[0] = pts
        for i in range(n):
            if m >= 1:
                h[1 + i, i] = 1.0
        for j, layer in enumerate(net.layers):
            last = j == net.depth - 1
            z = np.empty((len(idx), layer.rows, pts.shape[1]))
            z[0] = _affine_apply(layer, h[0], last)
            if len(idx) > 1:
                flat = h[1:].transpose(1, 0, 2).reshape(layer.cols, -1)
                zf = _affine_apply(layer, flat, last, constant=False)
                z[1:] = zf.reshape(layer.rows, len(idx) - 1, -1).transpose(1, 0, 2)
            h = z if last else _gelu_jet(z, n, m)
        blocks.append(h)
    return np.concatenate(blocks, axis=2)


def _factorials(n: int, m: int) -> np.ndarray:
    return np.array([math.prod(math.factorial(v) for v in k) for k in multi_indices(n, m)], dtype=float)


def derivatives(net: Network, x, m: int) -> np.ndarray:
    """All partial derivatives d^k f for |k| <= m; same layout as taylor_coefficients."""
    coef = taylor_coefficients(net, x, m)
    return coef * _factorials(net.input_dim, m)[:, None, None]


@dataclass(frozen=True)
class Jet:
    """Truncated multivariate Taylor expansion of one output at one point."""

    variables: int
    order: int
    coefficients: dict

    def derivative(self, k) -> float:
        k = tuple(k)
        return self.coefficients[k] * math.prod(math.factorial(v) for v in k)

    def value(self) -> float:
        return self.coefficients[(0,) * self.variables]


def partials(net: Network, x, order: int, output_index: int = 0) -> Jet:
    """Jet of output ``output_index`` at the single point ``x``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    coef = taylor_coefficients(net, x, order)[:, output_index, 0]
    idx = multi_indices(net.input_dim, order)
    return Jet(net.input_dim, order, {k: float(c) for k, c in zip(idx, coef)})


# ---------------------------------------------------------------- combinators


def compose(outer: Network, inner: Network) -> Network:
    """Network for outer(inner(x)); the boundary affine maps are fused."""
    if inner.output_dim != outer.input_dim:
        raise NetworkError(
            f"cannot compose: inner outputs {inner.output_dim}, outer expects {outer.input_dim}"
        )
    a_in, b_in = inner.layers[-1].weight, inner.layers[-1].shift
    a_out, b_out = outer.layers[0].weight, outer.layers[0].shift
    fused = Layer(a_out @ a_in, a_out @ b_in + b_out)
    return Network(inner.layers[:-1] + (fused,) + outer.layers[1:])


def compose_all(*nets: Network) -> Network:
    """compose_all(f_k, ..., f_1) = f_k o ... o f_1."""
    out = nets[-1]
    for net in reversed(nets[:-1]):
        out = compose(net, out)
    return out


def _block_diag(mats: Sequence[np.ndarray]) -> np.ndarray:
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r : r + m.shape[0], c : c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def parallel(nets: Sequence[Network], shared_input: bool = False) -> Network:
    """Stack networks side by side; outputs are concatenated in order.

    With ``shared_input`` every member reads the same input vector,
    otherwise the input is the concatenation of the members' inputs.
    """
    nets = list(nets)
    if not nets:
        raise NetworkError("parallel needs at least one network")
    depth = nets[0].depth
    if any(n.depth != depth for n in nets):
        raise NetworkError(f"parallel needs equal depths, got {[n.depth for n in nets]}")
    if shared_input and any(n.input_dim != nets[0].input_dim for n in nets):
        raise NetworkError("shared-input parallel needs equal input dimensions")
    layers = []
    for j in range(depth):
        shifts = np.concatenate([n.layers[j].shift for n in nets])
        if j == 0 and shared_input:
            weight = np.vstack([n.layers[0].weight for n in nets])
        else:
            weight = _block_diag([n.layers[j].weight for n in nets])
        layers.append(Layer(weight, shifts))
    return Network(tuple(layers))


def weighted_sum(nets: Sequence[Network], coeffs, shared_input: bool = False) -> Network:
    """Network for sum_k coeffs[k] * nets[k], members with scalar output."""
    nets = list(nets)
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
    if len(coeffs) != len(nets):
        raise NetworkError("one coefficient per network is required")
    if any(n.output_dim != 1 for n in nets):
        raise NetworkError("weighted_sum members must have a single output")
    stacked = parallel(nets, shared_input=shared_input)
    return compose(affine(coeffs.reshape(1, -1)), stacked)


# ---------------------------------------------------------------- audit


@dataclass(frozen=True)
class NetworkConfig:
    depth: int
    widths: tuple
    nonzeros: int
    magnitude: float

    @property
    def max_width(self) -> int:
        return max(self.widths)

    def within(self, depth=None, width=None, nonzeros=None, magnitude=None) -> bool:
        """Membership in the class NN(depth, width, nonzeros, magnitude); None skips a field."""
        return (
            (depth is None or self.depth <= depth)
            and (width is None or self.max_width <= width)
            and (nonzeros is None or self.nonzeros <= nonzeros)
            and (magnitude is None or self.magnitude <= magnitude)
        )

    def as_dict(self) -> dict:
        return {
            "depth": self.depth,
            "widths": list(self.widths),
            "max_width": self.max_width,
            "nonzeros": self.nonzeros,
            "magnitude": self.magnitude,
        }


def audit(net: Network) -> NetworkConfig:
    nonzeros = 0
    magnitude = 0.0
    for layer in net.layers:
        nonzeros += int(np.count_nonzero(layer.weight)) + int(np.count_nonzero(layer.shift))
        for arr in (layer.weight, layer.shift):
            if arr.size:
                magnitude = max(magnitude, float(np.max(np.abs(arr))))
    return NetworkConfig(net.depth, net.widths, nonzeros, magnitude)


# ---------------------------------------------------------------- serialization


def to_document(net: Network, meta: dict | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "convention": CONVENTION,
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "layers": [
            {
                "rows": layer.rows,
                "cols": layer.cols,
                "a": [float(v) for v in layer.weight.reshape(-1)],
                "b": [float(v) for v in layer.shift],
            }
            for layer in net.layers
        ],
        "meta": dict(meta or {}),
    }


def serialize(net: Network, meta: dict | None = None) -> str:
    # json writes floats with repr, the shortest string that round-trips
    return json.dumps(to_document(net, meta), allow_nan=False)


def from_document(doc: dict) -> Network:
    try:
        if doc.get("format_version") != FORMAT_VERSION:
            raise NetworkError(f"unsupported format_version {doc.get('format_version')!r}")
        if doc.get("convention", CONVENTION) != CONVENTION:
            raise NetworkError(f"unsupported bias convention {doc.get('convention')!r}")
        layers = []
        for i, item in enumerate(doc["layers"]):
            rows, cols = int(item["rows"]), int(item["cols"])
            a = np.asarray(item["a"], dtype=float)
            b = np.asarray(item["b"], dtype=float)
            if a.size != rows * cols or b.size != rows:
                raise NetworkError(f"layer {i + 1}: entry count does not match rows x cols")
            layers.append(Layer(a.reshape(rows, cols), b))
        net = Network(tuple(layers))
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc}") from exc
    if net.input_dim != doc.get("input_dim", net.input_dim) or net.output_dim != doc.get(
        "output_dim", net.output_dim
    ):
        raise NetworkError("declared input/output dimensions disagree with the layers")
    return net


def deserialize(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"malformed network document: {exc}") from exc
    if not isinstance(doc, dict):
        raise NetworkError("network document must be a JSON object")
    return from_document(doc)


def load(path) -> tuple[Network, dict]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    net = deserialize(text)
    return net, json.loads(text).get("meta", {})


def save(net: Network, path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(net, meta))
