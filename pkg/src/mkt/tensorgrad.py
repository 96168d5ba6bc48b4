"""Dense 2-D tensor engine with reverse-mode automatic differentiation.

Every model in this package expresses its forward math through the ops in
this module. Values are float64 matrices; a fresh graph (tape) is built per
training step and discarded after backward(). Gradients accumulate with +=
across fan-out, so a node used twice receives the sum of both paths.

Column-vector convention: a sample's feature vector is a (d, 1) tensor, and
a batch of B samples is the (d, B) matrix whose columns are the samples.
There is no implicit broadcasting; the only shape-bending binary op is
mul() with a (1, 1) operand (scalar scale). Explicit tiling/segment ops
cover everything else.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ContractError, DimensionError, ValidationError

__all__ = [
    "Tensor", "Node", "Parameter", "leaf", "constant", "set_finite_checks",
    "matmul", "add", "sub", "mul", "scale", "relu", "sigmoid", "tanh",
    "concat", "vconcat", "transpose", "row", "gather_rows", "repeat_rows",
    "tile_cols", "tsum", "colsum", "colscale", "softmax_cols",
    "repeat_cols", "segment_colsum", "segment_softmax_row",
    "cosine", "bce_with_logits", "backward", "zero_grads",
    "Sgd", "Adam", "make_optimizer",
    "save_checkpoint", "load_checkpoint", "file_sha256",
]

_finite_checks = False


def set_finite_checks(enabled):
    """Toggle the debug assertion that every forward result is finite."""
    global _finite_checks
    _finite_checks = bool(enabled)


class Tensor:
    """Immutable (rows, cols) float64 matrix."""

    __slots__ = ("data",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got ndim={arr.ndim}")
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def _wrap(cls, arr):
        # Trusted fast path: takes ownership of a fresh float64 2-D array.
        t = cls.__new__(cls)
        arr.setflags(write=False)
        t.data = arr
        return t

    @classmethod
    def zeros(cls, rows, cols):
        return cls._wrap(np.zeros((rows, cols)))

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


_node_ids = itertools.count()


class Node:
    """One vertex of the autodiff graph.

    value is the forward result; grad is a float64 array of the same shape,
    allocated lazily the first time backward() reaches the node. _bw pushes
    this node's grad into its parents' grads.
    """

    __slots__ = ("id", "op", "parents", "value", "grad", "_bw")

    def __init__(self, op, parents, value, bw=None):
        self.id = next(_node_ids)
        self.op = op
        self.parents = parents
        self.value = value
        self.grad = None
        self._bw = bw
        if _finite_checks and not np.all(np.isfinite(value.data)):
            raise ContractError(f"non-finite values out of op '{op}'")

    @property
    def shape(self):
        return self.value.data.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op}, shape={self.shape})"

    # Light operator sugar; the function API below is primary.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)


class Parameter:
    """Named trainable leaf. trainable=False means optimizers skip it."""

    __slots__ = ("name", "node", "trainable")

    def __init__(self, name, tensor, trainable=True):
        self.name = name
        self.node = leaf(tensor)
        self.trainable = trainable

    def set_value(self, tensor):
        if tensor.shape != self.node.value.shape:
            raise ValidationError(
                f"parameter '{self.name}': shape {tensor.shape} "
                f"does not match {self.node.value.shape}")
        self.node.value = tensor

    def __repr__(self):
        return f"Parameter({self.name}, {self.node.value.shape}, trainable={self.trainable})"


def leaf(tensor):
    """A graph leaf holding an externally supplied value."""
    if not isinstance(tensor, Tensor):
        tensor = Tensor(tensor)
    return Node("leaf", (), tensor)


def constant(values):
    """A leaf that never receives gradient updates by convention."""
    return leaf(values if isinstance(values, Tensor) else Tensor(values))


def _acc(node, g):
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad += g


def _check_same_shape(op, a, b):
    if a.value.data.shape != b.value.data.shape:
        raise DimensionError(
            f"{op}: shapes {a.value.data.shape} and {b.value.data.shape} differ")


# ---------------------------------------------------------------------------
# core arithmetic


def matmul(a, b):
    """Matrix product (m,k)x(k,n) -> (m,n)."""
    ad, bd = a.value.data, b.value.data
    if ad.shape[1] != bd.shape[0]:
        raise DimensionError(
            f"matmul: inner dims differ for shapes {ad.shape} and {bd.shape}")
    out = ad @ bd

    def bw(g):
        _acc(a, g @ bd.T)
        _acc(b, ad.T @ g)

    return Node("matmul", (a, b), Tensor._wrap(out), bw)


def add(a, b):
    _check_same_shape("add", a, b)
    out = a.value.data + b.value.data

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    return Node("add", (a, b), Tensor._wrap(out), bw)


def sub(a, b):
    _check_same_shape("sub", a, b)
    out = a.value.data - b.value.data

    def bw(g):
        _acc(a, g)
        _acc(b, -g)

    return Node("sub", (a, b), Tensor._wrap(out), bw)


def mul(a, b):
    """Elementwise product. One operand may be (1,1), acting as a scalar."""
    ad, bd = a.value.data, b.value.data
    if ad.shape != bd.shape and ad.shape != (1, 1) and bd.shape != (1, 1):
        raise DimensionError(f"mul: shapes {ad.shape} and {bd.shape} differ")
    out = ad * bd

    def bw(g):
        ga = g * bd
        gb = g * ad
        _acc(a, ga if ad.shape == ga.shape else np.array([[ga.sum()]]))
        _acc(b, gb if bd.shape == gb.shape else np.array([[gb.sum()]]))

    return Node("mul", (a, b), Tensor._wrap(out), bw)


def scale(a, c):
    """Multiply by a Python float constant."""
    c = float(c)
    out = a.value.data * c

    def bw(g):
        _acc(a, g * c)

    return Node("scale", (a,), Tensor._wrap(out), bw)


def relu(a):
    """relu'(0) is defined as 0."""
    ad = a.value.data
    out = np.maximum(ad, 0.0)

    def bw(g):
        _acc(a, g * (ad > 0.0))

    return Node("relu", (a,), Tensor._wrap(out), bw)


def sigmoid(a):
    out = _sigmoid(a.value.data)

    def bw(g):
        _acc(a, g * out * (1.0 - out))

    return Node("sigmoid", (a,), Tensor._wrap(out), bw)


def tanh(a):
    out = np.tanh(a.value.data)

    def bw(g):
        _acc(a, g * (1.0 - out * out))

    return Node("tanh", (a,), Tensor._wrap(out), bw)


def _sigmoid(x):
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# shape ops


def concat(parts):
    """Concatenate along columns: [(m,c1), (m,c2), ...] -> (m, sum(ci))."""
    parts = tuple(parts)
    if not parts:
        raise DimensionError("concat: empty part list")
    m = parts[0].value.data.shape[0]
    for p in parts:
        if p.value.data.shape[0] != m:
            raise DimensionError(
                f"concat: row counts differ "
                f"({[q.value.data.shape for q in parts]})")
    out = np.concatenate([p.value.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.value.data.shape[1] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _acc(p, g[:, lo:hi])

    return Node("concat", parts, Tensor._wrap(out), bw)


def vconcat(parts):
    """Concatenate along rows: [(r1,n), (r2,n), ...] -> (sum(ri), n)."""
    parts = tuple(parts)
    if not parts:
        raise DimensionError("vconcat: empty part list")
    n = parts[0].value.data.shape[1]
    for p in parts:
        if p.value.data.shape[1] != n:
            raise DimensionError(
                f"vconcat: column counts differ "
                f"({[q.value.data.shape for q in parts]})")
    out = np.concatenate([p.value.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.value.data.shape[0] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _acc(p, g[lo:hi, :])

    return Node("vconcat", parts, Tensor._wrap(out), bw)


def transpose(a):
    out = a.value.data.T.copy()

    def bw(g):
        _acc(a, g.T)

    return Node("transpose", (a,), Tensor._wrap(out), bw)


def row(a, i):
    """Slice row i as a (1, n) tensor."""
    ad = a.value.data
    out = ad[i:i + 1, :].copy()

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(ad)
        a.grad[i, :] += g[0, :]

    return Node("row", (a,), Tensor._wrap(out), bw)


def gather_rows(a, ids):
    """Select rows by index: (V, d) gathered at ids -> (len(ids), d).

    Repeated ids are allowed; backward scatters with accumulation, which is
    what embedding-table lookups need.
    """
    ids = np.asarray(ids, dtype=np.intp)
    ad = a.value.data
    out = ad[ids, :].copy()

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(ad)
        np.add.at(a.grad, ids, g)

    return Node("gather_rows", (a,), Tensor._wrap(out), bw)


def repeat_rows(a, times):
    """Repeat each row `times` times: (r, c) -> (r*times, c)."""
    r, c = a.value.data.shape
    out = np.repeat(a.value.data, times, axis=0)

    def bw(g):
        _acc(a, g.reshape(r, times, c).sum(axis=1))

    return Node("repeat_rows", (a,), Tensor._wrap(out), bw)


def tile_cols(a, n):
    """Tile a (r, 1) column n times into (r, n); used for bias broadcast."""
    ad = a.value.data
    if ad.shape[1] != 1:
        raise DimensionError(f"tile_cols needs a (r,1) tensor, got {ad.shape}")
    out = np.repeat(ad, n, axis=1)

    def bw(g):
        _acc(a, g.sum(axis=1, keepdims=True))

    return Node("tile_cols", (a,), Tensor._wrap(out), bw)


# ---------------------------------------------------------------------------
# reductions and column-wise helpers


def tsum(a):
    """Sum all entries into a (1,1) scalar."""
    out = np.array([[a.value.data.sum()]])
    shape = a.value.data.shape

    def bw(g):
        _acc(a, np.full(shape, g[0, 0]))

    return Node("tsum", (a,), Tensor._wrap(out), bw)


def colsum(a):
    """Sum rows per column: (r, c) -> (1, c)."""
    r = a.value.data.shape[0]
    out = a.value.data.sum(axis=0, keepdims=True)

    def bw(g):
        _acc(a, np.repeat(g, r, axis=0))

    return Node("colsum", (a,), Tensor._wrap(out), bw)


def colscale(a, s):
    """Scale column j of a (r, c) tensor by s[0, j]; s is (1, c)."""
    ad, sd = a.value.data, s.value.data
    if sd.shape != (1, ad.shape[1]):
        raise DimensionError(
            f"colscale: scales {sd.shape} do not match columns of {ad.shape}")
    out = ad * sd

    def bw(g):
        _acc(a, g * sd)
        _acc(s, (g * ad).sum(axis=0, keepdims=True))

    return Node("colscale", (a, s), Tensor._wrap(out), bw)


def softmax_cols(a):
    """Softmax over the rows of each column: output columns sum to 1."""
    ad = a.value.data
    e = np.exp(ad - ad.max(axis=0, keepdims=True))
    out = e / e.sum(axis=0, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=0, keepdims=True)
        _acc(a, out * (g - dot))

    return Node("softmax_cols", (a,), Tensor._wrap(out), bw)


def _seg_bounds(counts, total):
    ends = np.cumsum(counts)
    if len(ends) and ends[-1] != total:
        raise DimensionError(
            f"segment counts sum to {ends[-1]}, expected {total}")
    if not len(ends) and total != 0:
        raise DimensionError(f"no segments for {total} columns")
    starts = ends - counts
    return starts, ends


def _segsum(arr, starts, ends):
    # Per-segment sums along the last axis; robust to empty segments.
    c = np.concatenate(
        [np.zeros(arr.shape[:-1] + (1,)), np.cumsum(arr, axis=-1)], axis=-1)
    return c[..., ends] - c[..., starts]


def repeat_cols(a, counts):
    """Repeat column j of a (r, B) tensor counts[j] times -> (r, sum(counts))."""
    counts = np.asarray(counts, dtype=np.intp)
    ad = a.value.data
    if len(counts) != ad.shape[1]:
        raise DimensionError(
            f"repeat_cols: {len(counts)} counts for {ad.shape[1]} columns")
    out = np.repeat(ad, counts, axis=1)
    starts, ends = _seg_bounds(counts, out.shape[1])

    def bw(g):
        _acc(a, _segsum(g, starts, ends))

    return Node("repeat_cols", (a,), Tensor._wrap(out), bw)


def segment_colsum(a, counts):
    """Sum consecutive column segments: (r, sum(counts)) -> (r, len(counts)).

    Empty segments yield zero columns, which is how empty behavior
    sequences pool to the zero vector.
    """
    counts = np.asarray(counts, dtype=np.intp)
    ad = a.value.data
    starts, ends = _seg_bounds(counts, ad.shape[1])
    out = _segsum(ad, starts, ends)

    def bw(g):
        _acc(a, np.repeat(g, counts, axis=1))

    return Node("segment_colsum", (a,), Tensor._wrap(out), bw)


def segment_softmax_row(a, counts):
    """Softmax within consecutive segments of a (1, N) row.

    Each segment's outputs sum to 1; empty segments contribute nothing.
    """
    counts = np.asarray(counts, dtype=np.intp)
    ad = a.value.data
    if ad.shape[0] != 1:
        raise DimensionError(f"segment_softmax_row needs (1, N), got {ad.shape}")
    starts, ends = _seg_bounds(counts, ad.shape[1])
    out = np.empty_like(ad)
    x = ad[0]
    for lo, hi in zip(starts, ends):
        if hi > lo:
            e = np.exp(x[lo:hi] - x[lo:hi].max())
            out[0, lo:hi] = e / e.sum()

    def bw(g):
        dots = _segsum(g * out, starts, ends)  # (1, B)
        rep = np.repeat(dots, counts, axis=1)
        _acc(a, out * (g - rep))

    return Node("segment_softmax_row", (a,), Tensor._wrap(out), bw)


# ---------------------------------------------------------------------------
# losses


_COS_EPS = 1e-12


def cosine(a, b):
    """Column-wise cosine similarity: (d, B) x (d, B) -> (1, B).

    An epsilon inside each norm keeps zero vectors finite (result ~0).
    For single column vectors this is the plain cosine similarity scalar.
    """
    _check_same_shape("cosine", a, b)
    ad, bd = a.value.data, b.value.data
    na = np.sqrt((ad * ad).sum(axis=0, keepdims=True) + _COS_EPS)
    nb = np.sqrt((bd * bd).sum(axis=0, keepdims=True) + _COS_EPS)
    dot = (ad * bd).sum(axis=0, keepdims=True)
    out = dot / (na * nb)

    def bw(g):
        _acc(a, g * (bd / (na * nb) - out * ad / (na * na)))
        _acc(b, g * (ad / (na * nb) - out * bd / (nb * nb)))

    return Node("cosine", (a, b), Tensor._wrap(out), bw)


def bce_with_logits(logits, labels):
    """Summed binary cross-entropy from logits.

    logits is (1, B); labels is an int/float sequence (or scalar) of B
    values in {0, 1}. Returns the (1, 1) sum over the batch; divide by B
    for the mean. Numerically stable via max(z,0) - z*y + log1p(exp(-|z|)).
    """
    z = logits.value.data
    if z.shape[0] != 1:
        raise DimensionError(f"bce_with_logits needs (1, B) logits, got {z.shape}")
    y = np.asarray(labels, dtype=np.float64).reshape(1, -1)
    if y.shape != z.shape:
        raise DimensionError(
            f"bce_with_logits: {y.shape[1]} labels for {z.shape[1]} logits")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("labels must be 0 or 1")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.array([[per.sum()]])

    def bw(g):
        _acc(logits, g[0, 0] * (_sigmoid(z) - y))

    return Node("bce", (logits,), Tensor._wrap(out), bw)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Populate grads of every ancestor of a scalar loss node."""
    if loss.value.data.shape != (1, 1):
        raise ContractError(
            f"backward needs a scalar (1,1) loss, got {loss.value.data.shape}")
    topo = _toposort(loss)
    loss.grad = np.ones((1, 1))
    for node in reversed(topo):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)


def _toposort(root):
    out = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            out.append(node)
            continue
        if node.id in visited:
            continue
        visited.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in visited:
                stack.append((p, False))
    return out


def zero_grads(params):
    for p in params:
        p.node.grad = None


# ---------------------------------------------------------------------------
# optimizers


class Sgd:
    """Plain gradient descent."""

    def __init__(self, lr):
        if lr < 0:
            raise ValidationError(f"learning rate must be >= 0, got {lr}")
        self.lr = float(lr)
        self.steps = 0

    def step(self, params):
        self.steps += 1
        for p in params:
            g = p.node.grad
            if p.trainable and g is not None:
                p.node.value = Tensor._wrap(p.node.value.data - self.lr * g)
        zero_grads(params)


class Adam:
    """Adam with bias correction; moments exist only for trainable params."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValidationError(f"learning rate must be >= 0, got {lr}")
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = {}
        self._v = {}

    def step(self, params):
        self.steps += 1
        t = self.steps
        b1, b2 = self.beta1, self.beta2
        for p in params:
            g = p.node.grad
            if not p.trainable or g is None:
                continue
            m = self._m.get(p.name)
            if m is None:
                m = self._m[p.name] = np.zeros_like(g)
                self._v[p.name] = np.zeros_like(g)
            v = self._v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p.node.value = Tensor._wrap(
                p.node.value.data - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        zero_grads(params)


def make_optimizer(kind, lr):
    if kind == "sgd":
        return Sgd(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValidationError(f"unknown optimizer '{kind}' (valid: sgd, adam)")


# ---------------------------------------------------------------------------
# checkpoint I/O


def save_checkpoint(named, path, meta=None):
    """Write parameters as `name<TAB>rows<TAB>cols<TAB>v1,v2,...` lines.

    Values use 17 significant digits, which round-trips float64 exactly.
    Optional metadata is stored in `#key<TAB>json` header lines.
    """
    import json

    with open(path, "w") as f:
        for key, val in (meta or {}).items():
            f.write(f"#{key}\t{json.dumps(val)}\n")
        for name, tensor in named.items():
            arr = tensor.data
            vals = ",".join(f"{v:.17g}" for v in arr.ravel())
            f.write(f"{name}\t{arr.shape[0]}\t{arr.shape[1]}\t{vals}\n")


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint -> (params, meta)."""
    import json

    from .errors import ParseError

    named = {}
    meta = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                try:
                    key, payload = line[1:].split("\t", 1)
                    meta[key] = json.loads(payload)
                except Exception as exc:
                    raise ParseError(f"bad metadata header: {exc}", line=lineno)
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(
                    f"expected 4 tab-separated fields, got {len(parts)}",
                    line=lineno)
            name, rows_s, cols_s, vals_s = parts
            try:
                rows, cols = int(rows_s), int(cols_s)
                arr = np.array(
                    [float(v) for v in vals_s.split(",")], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad record for '{name}': {exc}", line=lineno)
            if arr.size != rows * cols:
                raise ParseError(
                    f"'{name}' declares {rows}x{cols} but has {arr.size} values",
                    line=lineno)
            named[name] = Tensor._wrap(arr.reshape(rows, cols))
    return named, meta


def file_sha256(path):
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def gradcheck_scalar(fn, params, eps=1e-5):
    """Central finite differences of a scalar-valued fn over Parameter leaves.

    fn() must rebuild the graph from the params' current values and return
    the loss node. Returns {name: fd_grad_array}. Test-support code, but it
    lives here so model modules can self-check during development.
    """
    fd = {}
    for p in params:
        base = p.node.value.data
        g = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            for sign in (+1.0, -1.0):
                bumped = base.copy()
                bumped[idx] += sign * eps
                p.node.value = Tensor._wrap(bumped)
                val = fn().value.item()
                g[idx] += sign * val
            it.iternext()
        g /= 2 * eps
        p.node.value = Tensor._wrap(base.copy())
        fd[p.name] = g
    return fd
