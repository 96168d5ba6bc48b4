"""Parameter registry, initializers, and the two tiny layer types.

Every parameter is initialized from its own RNG substream keyed by
(seed, full parameter name), so adding or removing parameters never shifts
the draws of the others. That is what makes a standalone target model and
the target model inside the full pipeline bit-identical at init for the
same seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensorgrad import Node, Parameter, Tensor, add, matmul, relu, tile_cols


def substream(seed, name):
    """Deterministic, machine-independent RNG for a named stream."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]))


def _init_array(rng, rows, cols, init):
    if init == "zeros":
        return np.zeros((rows, cols))
    if init == "uniform_embed":
        return rng.uniform(-0.05, 0.05, size=(rows, cols))
    if init == "uniform_small":
        return rng.uniform(-0.01, 0.01, size=(rows, cols))
    if init == "glorot":
        limit = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols))
    if isinstance(init, tuple) and init[0] == "const":
        return np.full((rows, cols), float(init[1]))
    raise ValidationError(f"unknown init '{init}'")


class ParamStore:
    """Flat name -> Parameter registry for one model."""

    def __init__(self, seed, prefix=""):
        self.seed = seed
        self.prefix = prefix
        self._params = {}

    def add(self, name, rows, cols, init="glorot", trainable=True):
        full = self.prefix + name
        if full in self._params:
            raise ValidationError(f"duplicate parameter name '{full}'")
        rng = substream(self.seed, "init." + full)
        p = Parameter(full, Tensor._wrap(_init_array(rng, rows, cols, init)),
                      trainable=trainable)
        self._params[full] = p
        return p.node

    def params(self):
        return list(self._params.values())

    def trainable(self):
        return [p for p in self._params.values() if p.trainable]

    def get(self, name):
        return self._params[self.prefix + name]

    def state(self):
        return {name: p.node.value for name, p in self._params.items()}

    def load_state(self, named):
        """Replace values from a checkpoint dict; all names must match."""
        mismatches = []
        missing = [n for n in self._params if n not in named]
        extra = [n for n in named if n not in self._params]
        for name, p in self._params.items():
            if name in named and named[name].shape != p.node.value.shape:
                mismatches.append(
                    f"{name}: file {named[name].shape} vs model {p.node.value.shape}")
        if missing or extra or mismatches:
            raise ValidationError(
                "checkpoint does not match model: "
                f"missing={missing} extra={extra} shape_mismatch={mismatches}")
        for name, p in self._params.items():
            p.node.value = named[name]

    def set_trainable(self, value):
        for p in self._params.values():
            p.trainable = value


@dataclass
class Linear:
    w: Node
    b: Node

    def __call__(self, x):
        n = x.value.data.shape[1]
        wx = matmul(self.w, x)
        if n == 1:
            return add(wx, self.b)
        return add(wx, tile_cols(self.b, n))


def linear(store, name, out_dim, in_dim, w_init="glorot", b_init="zeros"):
    return Linear(
        w=store.add(f"{name}.w", out_dim, in_dim, init=w_init),
        b=store.add(f"{name}.b", out_dim, 1, init=b_init),
    )


@dataclass
class Mlp2:
    """Two affine layers with a ReLU in between."""

    l1: Linear
    l2: Linear

    def __call__(self, x):
        return self.l2(relu(self.l1(x)))


def mlp2(store, name, in_dim, hidden, out_dim):
    return Mlp2(
        l1=linear(store, f"{name}.1", hidden, in_dim),
        l2=linear(store, f"{name}.2", out_dim, hidden),
    )
