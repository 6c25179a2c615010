"""Tape-based reverse-mode autodiff over dense float64 arrays.

Backward rules emit graph nodes (not raw arrays), so gradients are themselves
differentiable: grad() can be applied to expressions built from earlier grad()
results. This is what makes the double-backprop path through the gradient
penalty work without any special casing.

Conventions:
  - tensors are numpy float64 arrays of rank 0, 1 or 2
  - a Tape is confined to one thread; independent tapes may run in parallel
  - all values must stay finite; a NaN/Inf surfacing from any primitive is an
    error, not a silent poison
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray


def as_tensor(value) -> Tensor:
    return np.asarray(value, dtype=np.float64)


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class DomainError(AutodiffError):
    pass


class UnboundLeafError(AutodiffError):
    pass


class Node:
    """One recorded primitive application (or leaf/const) on a Tape."""

    __slots__ = ("tape", "id", "op", "inputs", "meta", "shape",
                 "requires_grad", "name", "_value", "_version")

    def __init__(self, tape, nid, op, inputs, meta, shape, requires_grad, name=None):
        self.tape = tape
        self.id = nid
        self.op = op
        self.inputs = inputs
        self.meta = meta
        self.shape = shape
        self.requires_grad = requires_grad
        self.name = name
        self._value = None
        self._version = -1

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"


def _sigmoid(x):
    # stable on both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# forward rules: op -> fn(input_values, meta) -> array
_FORWARD = {}
# shape rules: op -> fn(input_shapes, meta) -> shape (raises ShapeError)
_SHAPES = {}
# backward rules: op -> fn(node, g) -> list of (input_node, contribution_node)
# masks and noise carriers have no backward entry: no gradient flows into them
_BACKWARD = {}


def _register(op, shape_fn, fwd_fn, bwd_fn=None):
    _SHAPES[op] = shape_fn
    _FORWARD[op] = fwd_fn
    if bwd_fn is not None:
        _BACKWARD[op] = bwd_fn


def _same_shape(op, shapes, meta):
    a, b = shapes
    if a == b:
        return a
    raise ShapeError(f"{op}: mismatched shapes {a} vs {b}")


# ---------------------------------------------------------------- arithmetic

def _add_shape(shapes, meta):
    a, b = shapes
    if a == b:
        return a
    # row broadcast: (n, m) + (m,)
    if len(a) == 2 and b == (a[1],):
        return a
    raise ShapeError(f"add: incompatible shapes {a} vs {b}")


def _add_bwd(node, g):
    a, b = node.inputs
    if a.shape == b.shape:
        return [(a, g), (b, g)]
    return [(a, g), (b, sum_axis0(g))]


_register("add", _add_shape, lambda v, m: v[0] + v[1], _add_bwd)


def _mul_shape(shapes, meta):
    a, b = shapes
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    raise ShapeError(f"mul: incompatible shapes {a} vs {b}")


def _mul_bwd(node, g):
    a, b = node.inputs
    ga = mul(g, b)
    gb = mul(g, a)
    if a.shape == () and b.shape != ():
        ga = sum_all(ga)
    if b.shape == () and a.shape != ():
        gb = sum_all(gb)
    return [(a, ga), (b, gb)]


_register("mul", _mul_shape, lambda v, m: v[0] * v[1], _mul_bwd)


def _matmul_shape(shapes, meta):
    a, b = shapes
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        raise ShapeError(f"matmul: incompatible shapes {a} vs {b}")
    return (a[0], b[1])


_register("matmul", _matmul_shape, lambda v, m: v[0] @ v[1],
          lambda node, g: [(node.inputs[0], matmul(g, transpose(node.inputs[1]))),
                           (node.inputs[1], matmul(transpose(node.inputs[0]), g))])


def _transpose_shape(shapes, meta):
    (a,) = shapes
    if len(a) != 2:
        raise ShapeError(f"transpose: rank-2 input required, got {a}")
    return (a[1], a[0])


_register("transpose", _transpose_shape, lambda v, m: v[0].T,
          lambda node, g: [(node.inputs[0], transpose(g))])

_register("scale", lambda s, m: s[0], lambda v, m: v[0] * m["c"],
          lambda node, g: [(node.inputs[0], scale(g, node.meta["c"]))])

_register("add_scalar", lambda s, m: s[0], lambda v, m: v[0] + m["c"],
          lambda node, g: [(node.inputs[0], g)])

_register("square", lambda s, m: s[0], lambda v, m: v[0] * v[0],
          lambda node, g: [(node.inputs[0], mul(g, scale(node.inputs[0], 2.0)))])


def _recip0_fwd(v, m):
    x = v[0]
    out = np.zeros_like(x)
    nz = x != 0.0
    out[nz] = 1.0 / x[nz]
    return out


# d(1/x) = -(1/x)^2; the guarded form is 0 at x=0, consistent with the value
_register("recip0", lambda s, m: s[0], _recip0_fwd,
          lambda node, g: [(node.inputs[0], mul(g, scale(square(node), -1.0)))])


def _sqrt0_fwd(v, m):
    x = v[0]
    if np.any(x < 0):
        raise DomainError("sqrt0: negative input")
    return np.sqrt(x)


# derivative 1/(2 sqrt x), defined as 0 at x=0 via the guarded reciprocal
_register("sqrt0", lambda s, m: s[0], _sqrt0_fwd,
          lambda node, g: [(node.inputs[0], mul(g, scale(recip0(node), 0.5)))])


def _log_fwd(v, m):
    x = v[0]
    if np.any(x <= 0):
        raise DomainError("log: non-positive input (clamp before taking log)")
    return np.log(x)


_register("log", lambda s, m: s[0], _log_fwd,
          lambda node, g: [(node.inputs[0], mul(g, recip0(node.inputs[0])))])

# ------------------------------------------------------------- nonlinearity

_register("sigmoid", lambda s, m: s[0], lambda v, m: _sigmoid(v[0]),
          lambda node, g: [(node.inputs[0],
                            mul(g, mul(node, add_scalar(scale(node, -1.0), 1.0))))])


def _lrelu_fwd(v, m):
    x = v[0]
    return np.where(x > 0, x, m["slope"] * x)


# at exactly 0 the derivative is the negative-side slope (tie-break)
def _lrelu_mask_fwd(v, m):
    x = v[0]
    return np.where(x > 0, 1.0, m["slope"])


_register("leaky_relu", lambda s, m: s[0], _lrelu_fwd,
          lambda node, g: [(node.inputs[0],
                            mul(g, node.tape.apply("lrelu_mask", node.inputs[0],
                                                   slope=node.meta["slope"],
                                                   _no_grad=True)))])
_register("lrelu_mask", lambda s, m: s[0], _lrelu_mask_fwd)


def _clamp_fwd(v, m):
    return np.clip(v[0], m["lo"], m["hi"])


def _clamp_mask_fwd(v, m):
    x = v[0]
    return ((x > m["lo"]) & (x < m["hi"])).astype(np.float64)


_register("clamp", lambda s, m: s[0], _clamp_fwd,
          lambda node, g: [(node.inputs[0],
                            mul(g, node.tape.apply("clamp_mask", node.inputs[0],
                                                   lo=node.meta["lo"], hi=node.meta["hi"],
                                                   _no_grad=True)))])
_register("clamp_mask", lambda s, m: s[0], _clamp_mask_fwd)

# --------------------------------------------------------- shape operations


def _concat_shape(shapes, meta):
    axis = meta["axis"]
    first = shapes[0]
    for s in shapes:
        if len(s) != len(first):
            raise ShapeError(f"concat: mixed ranks {shapes}")
        if len(s) <= axis:
            raise ShapeError(f"concat: axis {axis} out of range for shape {s}")
        for d in range(len(s)):
            if d != axis and s[d] != first[d]:
                raise ShapeError(f"concat: off-axis mismatch {shapes}")
    out = list(first)
    out[axis] = sum(s[axis] for s in shapes)
    return tuple(out)


def _concat_bwd(node, g):
    axis = node.meta["axis"]
    out = []
    lo = 0
    for inp in node.inputs:
        hi = lo + inp.shape[axis]
        out.append((inp, slice_along(g, axis, lo, hi)))
        lo = hi
    return out


_register("concat", _concat_shape,
          lambda v, m: np.concatenate(v, axis=m["axis"]), _concat_bwd)


def _slice_shape(shapes, meta):
    (a,) = shapes
    axis, lo, hi = meta["axis"], meta["lo"], meta["hi"]
    if len(a) <= axis or not (0 <= lo <= hi <= a[axis]):
        raise ShapeError(f"slice: bounds [{lo},{hi}) axis {axis} invalid for {a}")
    out = list(a)
    out[axis] = hi - lo
    return tuple(out)


def _slice_fwd(v, m):
    idx = [slice(None)] * v[0].ndim
    idx[m["axis"]] = slice(m["lo"], m["hi"])
    return v[0][tuple(idx)]


def _slice_bwd(node, g):
    total = node.inputs[0].shape[node.meta["axis"]]
    return [(node.inputs[0],
             node.tape.apply("pad", g, axis=node.meta["axis"],
                             lo=node.meta["lo"], total=total))]


_register("slice", _slice_shape, _slice_fwd, _slice_bwd)


def _pad_shape(shapes, meta):
    (a,) = shapes
    out = list(a)
    out[meta["axis"]] = meta["total"]
    return tuple(out)


def _pad_fwd(v, m):
    x = v[0]
    shape = list(x.shape)
    shape[m["axis"]] = m["total"]
    out = np.zeros(shape)
    idx = [slice(None)] * x.ndim
    idx[m["axis"]] = slice(m["lo"], m["lo"] + x.shape[m["axis"]])
    out[tuple(idx)] = x
    return out


def _pad_bwd(node, g):
    lo = node.meta["lo"]
    hi = lo + node.inputs[0].shape[node.meta["axis"]]
    return [(node.inputs[0], slice_along(g, node.meta["axis"], lo, hi))]


_register("pad", _pad_shape, _pad_fwd, _pad_bwd)

# ---------------------------------------------------------------- reduction

_register("sum_all", lambda s, m: (), lambda v, m: np.sum(v[0]),
          lambda node, g: [(node.inputs[0],
                            node.tape.apply("broadcast_full", g,
                                            shape=node.inputs[0].shape))])

_register("broadcast_full", lambda s, m: m["shape"],
          lambda v, m: np.broadcast_to(v[0], m["shape"]).copy(),
          lambda node, g: [(node.inputs[0], sum_all(g))])


def _sum_axis0_shape(shapes, meta):
    (a,) = shapes
    if len(a) != 2:
        raise ShapeError(f"sum_axis0: rank-2 input required, got {a}")
    return (a[1],)


_register("sum_axis0", _sum_axis0_shape, lambda v, m: np.sum(v[0], axis=0),
          lambda node, g: [(node.inputs[0],
                            node.tape.apply("broadcast_rows", g,
                                            n=node.inputs[0].shape[0]))])


def _broadcast_rows_shape(shapes, meta):
    (a,) = shapes
    if len(a) != 1:
        raise ShapeError(f"broadcast_rows: rank-1 input required, got {a}")
    return (meta["n"], a[0])


_register("broadcast_rows", _broadcast_rows_shape,
          lambda v, m: np.broadcast_to(v[0], (m["n"], v[0].shape[0])).copy(),
          lambda node, g: [(node.inputs[0], sum_axis0(g))])


def _sum_axis1_shape(shapes, meta):
    (a,) = shapes
    if len(a) != 2:
        raise ShapeError(f"sum_axis1: rank-2 input required, got {a}")
    return (a[0],)


_register("sum_axis1", _sum_axis1_shape, lambda v, m: np.sum(v[0], axis=1),
          lambda node, g: [(node.inputs[0],
                            node.tape.apply("broadcast_cols", g,
                                            n=node.inputs[0].shape[1]))])


def _broadcast_cols_shape(shapes, meta):
    (a,) = shapes
    if len(a) != 1:
        raise ShapeError(f"broadcast_cols: rank-1 input required, got {a}")
    return (a[0], meta["n"])


_register("broadcast_cols", _broadcast_cols_shape,
          lambda v, m: np.repeat(v[0][:, None], m["n"], axis=1),
          lambda node, g: [(node.inputs[0], sum_axis1(g))])

_register("l2_norm", lambda s, m: (),
          lambda v, m: np.sqrt(np.sum(v[0] * v[0])),
          # subgradient at the zero vector is zero via the guarded reciprocal
          lambda node, g: [(node.inputs[0],
                            mul(g, mul(node.inputs[0], recip0(node))))])

_register("leaf", lambda s, m: m["shape"], None)
_register("const", lambda s, m: m["shape"], None)


class Tape:
    """Ordered record of Nodes plus leaf bindings.

    Values are computed lazily and memoized; rebinding a leaf invalidates the
    memo (cheaply, via a version counter), so the same graph can be replayed
    under perturbed bindings, e.g. for finite-difference checks.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.version = 0

    def _new(self, op, inputs, meta, shape, requires_grad, name=None):
        node = Node(self, len(self.nodes), op, inputs, meta, shape,
                    requires_grad, name)
        self.nodes.append(node)
        return node

    def leaf(self, value=None, requires_grad=False, name=None, shape=None) -> Node:
        """Leaf node; bind a value now, or declare a shape and bind later."""
        if value is not None:
            shape = as_tensor(value).shape
        elif shape is not None:
            shape = tuple(shape)
        node = self._new("leaf", (), {"shape": shape}, shape, requires_grad, name)
        if value is not None:
            self.bind(node, value)
        return node

    def const(self, value) -> Node:
        v = as_tensor(value)
        node = self._new("const", (), {"shape": v.shape}, v.shape, False)
        node._value = v
        node._version = -2  # never invalidated
        return node

    def bind(self, leaf: Node, value) -> None:
        if leaf.op != "leaf":
            raise AutodiffError(f"bind target {leaf!r} is not a leaf")
        v = as_tensor(value)
        if leaf.shape is not None and v.shape != leaf.shape:
            raise ShapeError(f"bind: leaf shape {leaf.shape} vs value {v.shape}")
        leaf.shape = v.shape
        leaf.meta["shape"] = v.shape
        self.version += 1
        leaf._value = v
        leaf._version = -2

    def apply(self, op, *inputs, _no_grad=False, **meta) -> Node:
        if op not in _FORWARD or op in ("leaf", "const"):
            raise AutodiffError(f"unknown primitive {op!r}")
        for inp in inputs:
            if inp.tape is not self:
                raise AutodiffError(f"{op}: input {inp!r} lives on a different tape")
            if inp.shape is None:
                raise UnboundLeafError(
                    f"{op}: leaf {inp.name or inp.id} has no bound value")
        shape = _SHAPES[op](tuple(i.shape for i in inputs), meta)
        rg = (not _no_grad) and any(i.requires_grad for i in inputs)
        return self._new(op, tuple(inputs), meta, shape, rg)

    def evaluate(self, node: Node) -> Tensor:
        """Value of node under current leaf bindings, memoized on the tape."""
        if node._version == -2 or node._version == self.version:
            return node._value
        # collect unevaluated ancestors iteratively (graphs run deep)
        stack = [node]
        pending = []
        seen = set()
        while stack:
            n = stack.pop()
            if n.id in seen or n._version == -2 or n._version == self.version:
                continue
            seen.add(n.id)
            if n.op == "leaf":
                raise UnboundLeafError(f"leaf {n.name or n.id} has no bound value")
            pending.append(n)
            stack.extend(n.inputs)
        pending.sort(key=lambda n: n.id)
        for n in pending:
            vals = [i._value for i in n.inputs]
            # overflow surfaces as a non-finite check below, not a warning
            with np.errstate(over="ignore", invalid="ignore"):
                out = as_tensor(_FORWARD[n.op](vals, n.meta))
            if not np.all(np.isfinite(out)):
                raise AutodiffError(f"non-finite value produced by {n.op} (node {n.id})")
            n._value = out
            n._version = self.version
        return node._value

    def grad(self, output: Node, wrt) -> list[Node]:
        """Nodes holding d(output)/d(w) for each w in wrt.

        The returned nodes live on this tape and may feed further primitives;
        grad may be applied again to expressions built from them.
        """
        if output.shape is None:
            raise UnboundLeafError("grad: output is an unbound leaf")
        if output.shape not in ((), (1,), (1, 1)):
            raise ShapeError(f"grad: output must be scalar-shaped, got {output.shape}")
        wrt = list(wrt)
        # restrict the backward sweep to ancestors of output
        reachable = set()
        stack = [output]
        while stack:
            n = stack.pop()
            if n.id in reachable:
                continue
            reachable.add(n.id)
            stack.extend(n.inputs)
        wrt_ids = {w.id for w in wrt}
        adjoint: dict[int, Node] = {output.id: self.const(np.ones(output.shape))}
        order = sorted(reachable, reverse=True)
        for nid in order:
            n = self.nodes[nid]
            g = adjoint.get(nid)
            if g is None or n.op in ("leaf", "const"):
                continue
            bwd = _BACKWARD.get(n.op)
            if bwd is None:
                continue
            for inp, contrib in bwd(n, g):
                if not inp.requires_grad and inp.id not in wrt_ids:
                    continue
                prev = adjoint.get(inp.id)
                adjoint[inp.id] = contrib if prev is None else add(prev, contrib)
        out = []
        for w in wrt:
            g = adjoint.get(w.id)
            if g is None:
                # wrt unreachable from output: gradient is exactly zero
                g = self.const(np.zeros(w.shape))
            out.append(g)
        return out


# ------------------------------------------------- free-function primitives

def add(a: Node, b: Node) -> Node:
    return a.tape.apply("add", a, b)


def sub(a: Node, b: Node) -> Node:
    return add(a, scale(b, -1.0))


def mul(a: Node, b: Node) -> Node:
    return a.tape.apply("mul", a, b)


def matmul(a: Node, b: Node) -> Node:
    return a.tape.apply("matmul", a, b)


def transpose(a: Node) -> Node:
    return a.tape.apply("transpose", a)


def scale(a: Node, c: float) -> Node:
    return a.tape.apply("scale", a, c=float(c))


def add_scalar(a: Node, c: float) -> Node:
    return a.tape.apply("add_scalar", a, c=float(c))


def square(a: Node) -> Node:
    return a.tape.apply("square", a)


def sqrt0(a: Node) -> Node:
    return a.tape.apply("sqrt0", a)


def recip0(a: Node) -> Node:
    return a.tape.apply("recip0", a)


def log(a: Node) -> Node:
    return a.tape.apply("log", a)


def sigmoid(a: Node) -> Node:
    return a.tape.apply("sigmoid", a)


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    return a.tape.apply("leaky_relu", a, slope=float(slope))


def clamp(a: Node, lo: float, hi: float) -> Node:
    return a.tape.apply("clamp", a, lo=float(lo), hi=float(hi))


def concat(nodes, axis: int = 0) -> Node:
    nodes = list(nodes)
    return nodes[0].tape.apply("concat", *nodes, axis=axis)


def slice_along(a: Node, axis: int, lo: int, hi: int) -> Node:
    return a.tape.apply("slice", a, axis=axis, lo=lo, hi=hi)


def sum_all(a: Node) -> Node:
    return a.tape.apply("sum_all", a)


def sum_axis0(a: Node) -> Node:
    return a.tape.apply("sum_axis0", a)


def sum_axis1(a: Node) -> Node:
    return a.tape.apply("sum_axis1", a)


def mean_all(a: Node) -> Node:
    size = 1
    for d in a.shape:
        size *= d
    return scale(sum_all(a), 1.0 / size)


def l2_norm(a: Node) -> Node:
    return a.tape.apply("l2_norm", a)
