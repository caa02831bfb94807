"""Parameter containers, initializers and the Adam optimizer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, NonFiniteError


class ParameterSet:
    """Ordered name -> learnable :class:`Tensor` map.

    Names are dotted; the first component is the module (``mul`` or ``kg``).
    """

    def __init__(self, tensors=None):
        self._t = {}
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name, value):
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._t[name] = t
        return t

    def __getitem__(self, name):
        return self._t[name]

    def __contains__(self, name):
        return name in self._t

    def __iter__(self):
        return iter(self._t)

    def __len__(self):
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self, module=None):
        if module is None:
            return list(self._t)
        return [n for n in self._t if n.split(".", 1)[0] == module]

    def tensors(self, module=None):
        return [self._t[n] for n in self.names(module)]

    def zero_grad(self):
        for t in self._t.values():
            t.grad = None

    def copy(self):
        return ParameterSet({n: Tensor(t.value.copy()) for n, t in self._t.items()})

    def state(self):
        return {n: t.value.copy() for n, t in self._t.items()}

    def load_state(self, state):
        for n, v in state.items():
            self._t[n].value = np.array(v, dtype=np.float64)


def xavier_uniform(rng, shape):
    fan_in, fan_out = shape[-2], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def normal(rng, shape, std):
    return rng.normal(0.0, std, size=shape)


@dataclass(frozen=True)
class ModelDims:
    num_users: int
    num_items: int
    num_entities: int
    num_relations: int
    dim: int = 32
    layers: int = 2


def init_params(dims, seed=0, kg_std=0.1, prelu_init=0.25):
    """Fresh parameters for both modules.

    Multi-behavior tensors are Xavier-uniform, knowledge tensors are normal.
    Relation projections start at ``N(0, 1/d)`` so a projection roughly
    preserves norms. PReLU slopes start at ``prelu_init``.
    """
    d = dims.dim
    if d <= 0:
        raise ConfigError(f"embedding dimension must be positive, got {d}")
    if dims.layers < 1:
        raise ConfigError(f"propagation depth must be >= 1, got {dims.layers}")
    rng_mul, rng_kg = np.random.default_rng(seed).spawn(2)
    I, J, L = dims.num_users, dims.num_items, dims.layers
    E, R = max(dims.num_entities, J), max(dims.num_relations, 1)
    p = ParameterSet()
    p.add("mul.user", xavier_uniform(rng_mul, (I, d)))
    p.add("mul.item", xavier_uniform(rng_mul, (J, d)))
    for side in ("user", "item"):
        p.add(f"mul.W_{side}", xavier_uniform(rng_mul, (d, d)))
        p.add(f"mul.Wl_{side}", xavier_uniform(rng_mul, ((L + 1) * d, d)))
        p.add(f"mul.prelu_{side}", np.full((1, 1), prelu_init))

    p.add("kg.user", normal(rng_kg, (I, d), kg_std))
    p.add("kg.att_W1", normal(rng_kg, (3 * d, 1), kg_std))
    p.add("kg.att_b1", normal(rng_kg, (1, 1), kg_std))
    p.add("kg.att_W2", normal(rng_kg, (d, d), 1.0 / math.sqrt(d)))
    p.add("kg.att_b2", normal(rng_kg, (1, 1), kg_std))
    for view in ("td", "sm"):
        p.add(f"kg.{view}.entity", normal(rng_kg, (E, d), kg_std))
        p.add(f"kg.{view}.relation", normal(rng_kg, (R, d), kg_std))
        p.add(f"kg.{view}.proj", normal(rng_kg, (R, d, d), 1.0 / math.sqrt(d)))
    p.add("kg.sm.diag", normal(rng_kg, (1, d), kg_std))
    return p


class Adam:
    """Adam with a decoupled L2 shrink.

    The shrink ``p -= lr * 2 * weight_decay * p`` is the gradient step of
    ``weight_decay * ||p||^2`` applied outside the moment estimates.
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m, self._v, self._t = {}, {}, {}

    def step(self, tensors, lr, weight_decay=0.0):
        for t in tensors:
            if t.grad is not None and not np.all(np.isfinite(t.grad)):
                raise NonFiniteError(f"non-finite gradient in tensor {t.name or t!r}")
        for t in tensors:
            key = t.name or id(t)
            g = t.grad if t.grad is not None else np.zeros_like(t.value)
            m = self._m.get(key)
            if m is None:
                m = self._m[key] = np.zeros_like(t.value)
                self._v[key] = np.zeros_like(t.value)
                self._t[key] = 0
            v = self._v[key]
            self._t[key] += 1
            n = self._t[key]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** n)
            v_hat = v / (1 - self.beta2 ** n)
            t.value = t.value - lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if weight_decay:
                t.value = t.value - lr * 2.0 * weight_decay * t.value
            if not np.all(np.isfinite(t.value)):
                raise NonFiniteError(f"tensor {t.name or t!r} became non-finite after update")
            t.grad = None


def adam_step(params, optimizer, lr, weight_decay=0.0, module=None):
    """One Adam update over ``params`` (optionally one module); zeroes grads."""
    optimizer.step(params.tensors(module), lr, weight_decay)
