"""Minimal differentiable MLP engine.

Two layers of machinery live here:

* a reverse-mode tape over numpy arrays (`Node` plus a small set of
  primitives), giving gradients of any scalar with respect to network
  parameters;
* an MLP whose forward pass propagates, layer by layer, the value together
  with the Jacobian and Hessian with respect to the *network inputs*.

Because the bundle propagation is itself expressed in tape primitives, a
scalar built from values, input-Jacobians or input-Hessians can be
backpropagated to the parameters (nested differentiation).  Activation
derivatives are analytic up to third order, which is exactly what a
second-order forward bundle needs under one reverse pass.

Everything is float64.  Evaluation is pure; training state is owned by the
caller.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DivergenceError, ShapeError

logger = logging.getLogger(__name__)

Array = np.ndarray


# ---------------------------------------------------------------------------
# activations: value and derivatives up to order 3
# ---------------------------------------------------------------------------

def _tanh_base(x: Array) -> Array:
    return np.tanh(x)


def _tanh_from_base(x: Array, t: Array, order: int) -> Array:
    if order == 0:
        return t
    s = 1.0 - t * t  # tanh'
    if order == 1:
        return s
    if order == 2:
        return -2.0 * t * s
    if order == 3:
        return -2.0 * s * (1.0 - 3.0 * t * t)
    raise ValueError(f"tanh derivative order {order} not implemented")


def _silu_base(x: Array) -> Array:
    return expit(x)


def _silu_from_base(x: Array, sig: Array, order: int) -> Array:
    if order == 0:
        return x * sig
    d1 = sig * (1.0 - sig)
    if order == 1:
        return sig + x * d1
    d2 = d1 * (1.0 - 2.0 * sig)
    if order == 2:
        # equivalently sig*(1-sig)*(2 + x*(1-2*sig))
        return 2.0 * d1 + x * d2
    if order == 3:
        d3 = d2 * (1.0 - 2.0 * sig) - 2.0 * d1 * d1
        return 3.0 * d2 + x * d3
    raise ValueError(f"silu derivative order {order} not implemented")


def _identity_base(x: Array) -> Array:
    return x


def _identity_from_base(x: Array, base: Array, order: int) -> Array:
    if order == 0:
        return x
    if order == 1:
        return np.ones_like(x)
    return np.zeros_like(x)


_ACT_PARTS = {
    "tanh": (_tanh_base, _tanh_from_base),
    "silu": (_silu_base, _silu_from_base),
    "identity": (_identity_base, _identity_from_base),
}


def _make_act(kind):
    base_fn, from_base = _ACT_PARTS[kind]

    def fn(x, order):
        return from_base(x, base_fn(x), order)

    return fn


ACTIVATIONS = {k: _make_act(k) for k in _ACT_PARTS}


def activation_value(kind: str, x: Array, order: int = 0) -> Array:
    """Elementwise activation derivative of the given order (0 = value)."""
    return ACTIVATIONS[kind](np.asarray(x, dtype=float), order)


# ---------------------------------------------------------------------------
# reverse-mode tape
# ---------------------------------------------------------------------------

class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("val", "grad", "_parents")
    __array_priority__ = 100  # ndarray op Node defers to Node's reflected ops

    def __init__(self, val, parents=()):
        self.val = np.asarray(val, dtype=float)
        self.grad = None
        self._parents = parents  # tuple of (Node, vjp callable)

    @property
    def shape(self):
        return self.val.shape

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_node(other)))

    def __rsub__(self, other):
        return add(as_node(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, c):
        if isinstance(c, Node):
            raise TypeError("tape division only supports constant divisors")
        return mul(self, 1.0 / float(c))

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g: Array, shape) -> Array:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    if not isinstance(a, Node) and not isinstance(b, Node):
        return a + b
    a, b = as_node(a), as_node(b)
    return Node(a.val + b.val, (
        (a, lambda g: _unbroadcast(g, a.val.shape)),
        (b, lambda g: _unbroadcast(g, b.val.shape)),
    ))


def neg(a):
    if not isinstance(a, Node):
        return -a
    return Node(-a.val, ((a, lambda g: -g),))


def mul(a, b):
    if not isinstance(a, Node) and not isinstance(b, Node):
        return a * b
    if not isinstance(b, Node) and np.isscalar(b):
        a = as_node(a)
        c = float(b)
        return Node(a.val * c, ((a, lambda g: g * c),))
    if not isinstance(a, Node) and np.isscalar(a):
        return mul(b, a)
    a, b = as_node(a), as_node(b)
    return Node(a.val * b.val, (
        (a, lambda g: _unbroadcast(g * b.val, a.val.shape)),
        (b, lambda g: _unbroadcast(g * a.val, b.val.shape)),
    ))


def bmm(a, b):
    """Matrix product with numpy `matmul` broadcasting (operands >= 2-d).

    Like the other structural ops here, plain arrays pass straight through
    numpy, so bundle-composition formulas can be written once and reused on
    recorded graphs and on frozen numpy bundles alike.
    """
    if not isinstance(a, Node) and not isinstance(b, Node):
        return np.matmul(a, b)
    a, b = as_node(a), as_node(b)
    if a.val.ndim < 2 or b.val.ndim < 2:
        raise ShapeError("bmm operands must have ndim >= 2")

    def vjp_a(g):
        if a.val.ndim == 2 and g.ndim > 2:
            # broadcast weight: contract the batch immediately
            return np.tensordot(g, b.val, axes=([0, 2], [0, 2]))
        return _unbroadcast(np.matmul(g, np.swapaxes(b.val, -1, -2)), a.val.shape)

    def vjp_b(g):
        if b.val.ndim == 2 and g.ndim > 2:
            return np.tensordot(a.val, g, axes=([0, 1], [0, 1]))
        return _unbroadcast(np.matmul(np.swapaxes(a.val, -1, -2), g), b.val.shape)

    return Node(np.matmul(a.val, b.val), ((a, vjp_a), (b, vjp_b)))


def transpose(a, axes=None):
    arr = a.val if isinstance(a, Node) else np.asarray(a)
    if axes is None:
        axes = tuple(range(arr.ndim - 2)) + (arr.ndim - 1, arr.ndim - 2)
    if not isinstance(a, Node):
        return np.transpose(arr, axes)
    inv = np.argsort(axes)
    return Node(np.transpose(a.val, axes), ((a, lambda g: np.transpose(g, inv)),))


def reshape(a, shape):
    if not isinstance(a, Node):
        return np.asarray(a).reshape(shape)
    old = a.val.shape
    return Node(a.val.reshape(shape), ((a, lambda g: g.reshape(old)),))


def getitem(a, idx):
    if not isinstance(a, Node):
        return np.asarray(a)[idx]

    def vjp(g):
        out = np.zeros_like(a.val)
        np.add.at(out, idx, g)
        return out

    return Node(a.val[idx], ((a, vjp),))


def act(a, kind: str, order: int = 0):
    if not isinstance(a, Node):
        return ACTIVATIONS[kind](np.asarray(a, dtype=float), order)
    fn = ACTIVATIONS[kind]
    return Node(fn(a.val, order), ((a, lambda g: g * fn(a.val, order + 1)),))


def act_triple(a, kind: str):
    """Activation value plus first and second derivatives, one shared base.

    All four derivative orders are evaluated once up front; the backward
    closures only multiply.
    """
    base_fn, from_base = _ACT_PARTS[kind]
    if not isinstance(a, Node):
        x = np.asarray(a, dtype=float)
        base = base_fn(x)
        return tuple(from_base(x, base, k) for k in range(3))
    x = a.val
    base = base_fn(x)
    orders = [from_base(x, base, k) for k in range(4)]
    out = []
    for k in range(3):
        def vjp(g, k=k):
            return g * orders[k + 1]

        out.append(Node(orders[k], ((a, vjp),)))
    return tuple(out)


def nsum(a, axis=None):
    if not isinstance(a, Node):
        return np.asarray(a).sum(axis=axis)
    shape = a.val.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return Node(a.val.sum(axis=axis), ((a, vjp),))


def nmean(a, axis=None):
    if not isinstance(a, Node):
        return np.asarray(a).mean(axis=axis)
    n = a.val.size if axis is None else a.val.shape[axis]
    return mul(nsum(a, axis=axis), 1.0 / n)


def value_of(a) -> Array:
    """The numpy payload of a node, or the array itself."""
    return a.val if isinstance(a, Node) else np.asarray(a)


def _toposort(root: Node):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node, seed=None):
    """Accumulate d(root)/d(node) into `.grad` over the graph below `root`."""
    order = _toposort(root)
    for n in order:
        n.grad = None
    root.grad = np.ones_like(root.val) if seed is None else np.asarray(seed, dtype=float)
    for n in reversed(order):
        g = n.grad
        if g is None:
            continue
        for parent, vjp in n._parents:
            pg = vjp(g)
            parent.grad = pg if parent.grad is None else parent.grad + pg


def backprop_scalar(scalar: Node, params: list[Node]) -> list[Array]:
    """Gradients of a recorded scalar with respect to parameter nodes.

    Parameters that the scalar does not depend on get zero gradients and a
    logged diagnostic, mirroring a silently detached loss term.
    """
    if scalar.val.ndim != 0:
        raise ShapeError("backprop_scalar expects a scalar node")
    for p in params:
        p.grad = None  # clear leftovers from earlier passes over shared graphs
    backward(scalar)
    grads = []
    disconnected = 0
    for p in params:
        if p.grad is None:
            grads.append(np.zeros_like(p.val))
            disconnected += 1
        else:
            grads.append(p.grad)
    if disconnected == len(params) and params:
        logger.warning("scalar is not connected to any parameter; gradients are zero")
    return grads


def grad_norm(grads: list[Array]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


# ---------------------------------------------------------------------------
# the MLP and its bundles
# ---------------------------------------------------------------------------

@dataclass
class EvalBundle:
    """Value, input-Jacobian and input-Hessian of a network at a batch.

    Shapes are (n, d_out), (n, d_out, d_in) and (n, d_out, d_in, d_in); the
    Hessian is symmetric in its trailing indices by construction.
    """

    value: Array
    jacobian: Array
    hessian: Array


@dataclass
class BundleVars:
    """Tape-node counterpart of `EvalBundle`, used while building a loss."""

    value: Node
    jacobian: Node
    hessian: Node


@dataclass
class Mlp:
    layer_dims: list[int]
    weights: list[Array]
    biases: list[Array]
    activation: str = "tanh"
    seed: int = 0

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def flat_params(self) -> list[Array]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_flat_params(self, arrays: list[Array]):
        it = iter(arrays)
        for k in range(len(self.weights)):
            self.weights[k] = next(it)
            self.biases[k] = next(it)


def init_mlp(layer_dims, activation="tanh", seed=0) -> Mlp:
    """Xavier-uniform initialisation; the seed fully determines the weights."""
    if len(layer_dims) < 2:
        raise ShapeError("an MLP needs at least input and output dims")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = math.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return Mlp(list(layer_dims), weights, biases, activation, seed)


def _check_input(net: Mlp, x: Array) -> Array:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ShapeError(
            f"input of shape {x.shape} incompatible with input dim {net.layer_dims[0]}")
    return x, single


def forward(net: Mlp, x: Array) -> Array:
    """Plain MLP evaluation; the output layer is linear."""
    x, single = _check_input(net, x)
    a = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if k == last else activation_value(net.activation, z)
    return a[0] if single else a


def param_nodes(net: Mlp) -> list[Node]:
    """Wrap the parameters as tape nodes, ordered [W0, b0, W1, b1, ...]."""
    out = []
    for w, b in zip(net.weights, net.biases):
        out.extend([Node(w), Node(b)])
    return out


def forward_graph(params: list[Node], activation: str, x: Array) -> Node:
    """Recorded forward pass; `x` enters as a constant batch (n, d_in)."""
    a = Node(np.asarray(x, dtype=float))
    n_layers = len(params) // 2
    for k in range(n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        z = add(bmm(a, transpose(w)), b)
        a = z if k == n_layers - 1 else act(z, activation, 0)
    return a


def bundle_graph(params: list[Node], activation: str, x: Array) -> BundleVars:
    """Recorded forward pass carrying (value, Jacobian, Hessian) w.r.t. `x`.

    Per layer, with pre-activation z = W a + b and activation phi:

        J_z = W J_a,            H_z = W . H_a
        J_y = phi'(z) * J_z,    H_y = phi''(z) * J_z (x) J_z + phi'(z) * H_z

    The first-layer Jacobian is W itself (broadcast over the batch) and the
    first-layer Hessian is zero, so both terms stay cheap.
    """
    x = np.asarray(x, dtype=float)
    n, d_in = x.shape
    a = Node(x)
    ja = None   # None encodes the identity input Jacobian
    ha = None   # None encodes an exactly zero Hessian
    n_layers = len(params) // 2
    for k in range(n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        d_out = w.val.shape[0]
        z = add(bmm(a, transpose(w)), b)
        if ja is None:
            jz = reshape(w, (1, d_out, d_in))
            hz = None
        else:
            jz = bmm(w, ja)
            if ha is None:
                hz = None
            else:
                d_prev = ha.val.shape[1]
                hz = reshape(bmm(w, reshape(ha, (-1, d_prev, d_in * d_in))),
                             (-1, d_out, d_in, d_in))
        if k == n_layers - 1:
            a, ja, ha = z, jz, hz
            break
        a, p1, p2 = act_triple(z, activation)
        jz_l = reshape(jz, jz.val.shape[:2] + (d_in, 1))
        jz_r = reshape(jz, jz.val.shape[:2] + (1, d_in))
        outer = mul(jz_l, jz_r)
        ja = mul(reshape(p1, (n, d_out, 1)), jz)
        ha = mul(reshape(p2, (n, d_out, 1, 1)), outer)
        if hz is not None:
            ha = add(ha, mul(reshape(p1, (n, d_out, 1, 1)), hz))
    d_out = a.val.shape[1]
    if ja.val.shape[0] == 1 and n != 1:
        ja = mul(ja, Node(np.ones((n, 1, 1))))
    if ha is None:
        ha = Node(np.zeros((n, d_out, d_in, d_in)))
    return BundleVars(a, ja, ha)


def _bundle_forward_pass(weights, biases, activation, x):
    """Shared forward sweep with per-layer caches for the fused reverse pass.

    Derivative arrays keep the feature axis last -- ja (n, d_in, d) and ha
    (n, d_in^2, d) -- so every linear contraction is one large GEMM over the
    flattened leading axes.
    """
    n, d_in = x.shape
    n_layers = len(weights)
    caches = []
    a, ja, ha = x, None, None   # None: identity Jacobian / zero Hessian
    for k in range(n_layers):
        w, b = weights[k], biases[k]
        d_out = w.shape[0]
        z = a @ w.T + b
        if ja is None:
            jz = np.broadcast_to(w.T[None], (n, d_in, d_out)).copy()
        else:
            jz = (ja.reshape(n * d_in, -1) @ w.T).reshape(n, d_in, d_out)
        hz = None if ha is None else \
            (ha.reshape(n * d_in * d_in, -1) @ w.T).reshape(n, d_in * d_in, d_out)
        if k == n_layers - 1:
            caches.append({"a_in": a, "ja_in": ja, "ha_in": ha, "w": w,
                           "last": True})
            a, ja = z, jz
            ha = np.zeros((n, d_in * d_in, d_out)) if hz is None else hz
            break
        base_fn, from_base = _ACT_PARTS[activation]
        base = base_fn(z)
        t = [from_base(z, base, i) for i in range(4)]
        outer = (jz[:, :, None, :] * jz[:, None, :, :]).reshape(n, d_in * d_in, d_out)
        a_out = t[0]
        ja_out = t[1][:, None, :] * jz
        ha_out = t[2][:, None, :] * outer
        if hz is not None:
            ha_out += t[1][:, None, :] * hz
        caches.append({"a_in": a, "ja_in": ja, "ha_in": ha, "w": w, "last": False,
                       "jz": jz, "hz": hz, "t": t, "outer": outer})
        a, ja, ha = a_out, ja_out, ha_out
    return a, ja, ha, caches


def _bundle_reverse_pass(caches, ga, gja, gha, d_in):
    """Pull output-bundle gradients back to per-layer parameter gradients."""
    n = ga.shape[0]
    param_grads = []
    for cache in reversed(caches):
        w = cache["w"]
        if cache["last"]:
            gz, gjz, ghz = ga, gja, gha
        else:
            t, jz, hz, outer = cache["t"], cache["jz"], cache["hz"], cache["outer"]
            dt1 = (gja * jz).sum(axis=1)
            if hz is not None:
                dt1 += (gha * hz).sum(axis=1)
            dt2 = (gha * outer).sum(axis=1)
            gz = ga * t[1] + dt1 * t[2] + dt2 * t[3]
            d_out = w.shape[0]
            gmat = gha.reshape(n, d_in, d_in, d_out)
            gsym = gmat + np.swapaxes(gmat, 1, 2)
            gjz = gja * t[1][:, None, :] \
                + t[2][:, None, :] * (gsym * jz[:, None, :, :]).sum(axis=2)
            ghz = None if hz is None else t[1][:, None, :] * gha
        a_in, ja_in, ha_in = cache["a_in"], cache["ja_in"], cache["ha_in"]
        gw = gz.T @ a_in
        gb = gz.sum(axis=0)
        if ja_in is None:
            gw += gjz.sum(axis=0).T
        else:
            gw += gjz.reshape(n * d_in, -1).T @ ja_in.reshape(n * d_in, -1)
        if ghz is not None and ha_in is not None:
            gw += ghz.reshape(n * d_in * d_in, -1).T @ ha_in.reshape(n * d_in * d_in, -1)
        param_grads.append((gw, gb))
        if len(param_grads) < len(caches):
            ga = gz @ w
            gja = (gjz.reshape(n * d_in, -1) @ w).reshape(n, d_in, -1)
            if ghz is not None and ha_in is not None:
                gha = (ghz.reshape(n * d_in * d_in, -1) @ w).reshape(n, d_in * d_in, -1)
            else:
                gha = np.zeros((n, d_in * d_in, w.shape[1]))
    grads = []
    for gw, gb in reversed(param_grads):
        grads.extend([gw, gb])
    return grads


def bundle_graph_fused(params: list[Node], activation: str, x: Array) -> BundleVars:
    """Fused bundle propagation: one recorded op, hand-written pullback.

    Mathematically identical to `bundle_graph`; the per-layer cache makes
    training an order of magnitude cheaper than the generic node-per-op
    graph on wide layers.
    """
    x = np.asarray(x, dtype=float)
    n, d_in = x.shape
    weights = [params[2 * k].val for k in range(len(params) // 2)]
    biases = [params[2 * k + 1].val for k in range(len(params) // 2)]
    a, ja, ha, caches = _bundle_forward_pass(weights, biases, activation, x)
    d_out = a.shape[1]
    packed = np.concatenate([a[:, :, None], np.swapaxes(ja, 1, 2),
                             np.swapaxes(ha, 1, 2)], axis=2)

    memo = []

    def reverse_all(g):
        for g_prev, grads_prev in memo:
            if g_prev is g:
                return grads_prev
        ga = np.ascontiguousarray(g[:, :, 0])
        gja = np.ascontiguousarray(np.swapaxes(g[:, :, 1:1 + d_in], 1, 2))
        gha = np.ascontiguousarray(np.swapaxes(g[:, :, 1 + d_in:], 1, 2))
        grads = _bundle_reverse_pass(caches, ga, gja, gha, d_in)
        memo.append((g, grads))
        if len(memo) > 8:
            memo.pop(0)
        return grads

    parents = tuple(
        (params[i], (lambda g, i=i: reverse_all(g)[i])) for i in range(len(params)))
    holder = Node(packed, parents)
    value = getitem(holder, (slice(None), slice(None), 0))
    jac = getitem(holder, (slice(None), slice(None), slice(1, 1 + d_in)))
    hess = reshape(getitem(holder, (slice(None), slice(None), slice(1 + d_in, None))),
                   (n, d_out, d_in, d_in))
    return BundleVars(value, jac, hess)


def forward_bundle(net: Mlp, x: Array) -> EvalBundle:
    """Value plus analytic first/second input derivatives at `x`."""
    x2, single = _check_input(net, x)
    a, ja, ha, _ = _bundle_forward_pass(net.weights, net.biases, net.activation, x2)
    n, d_in = x2.shape
    jac = np.ascontiguousarray(np.swapaxes(ja, 1, 2))
    hess = np.ascontiguousarray(
        np.moveaxis(ha.reshape(n, d_in, d_in, -1), 3, 1))
    if single:
        return EvalBundle(a[0], jac[0], hess[0])
    return EvalBundle(a, jac, hess)


# ---------------------------------------------------------------------------
# optimiser and schedule
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[Array]
    v: list[Array]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[Array]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params])


def adam_step(params: list[Array], grads: list[Array], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> list[Array]:
    """One Adam update; returns new parameter arrays and mutates `state`."""
    if len(params) != len(state.m):
        raise ShapeError("Adam state does not match the parameter list")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                "non-finite gradient encountered",
                diagnostics={"grad_max": [float(np.max(np.abs(g))) for g in grads
                                          if np.all(np.isfinite(g))]})
    state.t += 1
    t = state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        mhat = state.m[i] / (1 - beta1 ** t)
        vhat = state.v[i] / (1 - beta2 ** t)
        out.append(p - lr * mhat / (np.sqrt(vhat) + eps))
    return out


def cosine_lr(epoch: int, total: int, lr0: float, lr_min: float) -> float:
    """Cosine annealing from lr0 at epoch 0 down to lr_min at `total`."""
    if total <= 0:
        return lr_min
    frac = min(max(epoch / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# checkpoint format: magic, json header, then raw row-major float64 arrays
# ---------------------------------------------------------------------------

_MAGIC = b"RPNN"


def save_mlp(path, net: Mlp):
    header = json.dumps({
        "layer_dims": net.layer_dims,
        "activation": net.activation,
        "seed": net.seed,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_mlp(path) -> Mlp:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        dims = header["layer_dims"]
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(fh.read(8 * d_in * d_out), dtype="<f8").reshape(d_out, d_in)
            b = np.frombuffer(fh.read(8 * d_out), dtype="<f8")
            weights.append(w.astype(float))
            biases.append(b.astype(float))
    return Mlp(dims, weights, biases, header["activation"], header["seed"])
