"""Computation graphs with reverse-mode differentiation over numpy f64.

A Graph is an append-only node list: inputs always precede outputs, so
the graph is acyclic by construction and a plain index walk is a
topological order. Shape inference runs when a node is added, so a
mismatched op raises immediately, naming the op and both shapes.

backward() emits the gradient computation as ordinary graph nodes.
Because every op's vector-Jacobian product is itself built from ops
that have vector-Jacobian products, backward can be applied to the
output of backward — the route used for the discriminator gradient
penalty, whose parameter gradient differentiates through an image
gradient.

Op kinds are registered into OPS by the ops module at import time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GraphError(Exception):
    pass


class ShapeMismatch(GraphError):
    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


@dataclass(frozen=True)
class OpDef:
    """One op kind: numpy forward plus gradient builder.

    vjp(g, out, inputs, attrs) returns one Tensor (or None for "no
    gradient flows") per input. g and out are Tensors in the same graph.
    Output shapes are inferred by the op builders in ganinv.ops at
    graph-construction time.
    """

    forward: object
    vjp: object


# populated by ganinv.ops at import
OPS: dict[str, OpDef] = {}


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    attrs: tuple  # sorted (key, value) pairs; value arrays allowed


class Graph:
    def __init__(self):
        self.nodes: list[Node] = []
        self._plans: dict[tuple[int, ...], "_Plan"] = {}

    def __len__(self):
        return len(self.nodes)

    def add(self, kind: str, inputs: tuple[int, ...], shape, attrs: dict | None = None) -> "Tensor":
        for i in inputs:
            if not (0 <= i < len(self.nodes)):
                raise GraphError(f"{kind}: input node {i} not in graph")
        packed = tuple(sorted((attrs or {}).items(), key=lambda kv: kv[0]))
        self.nodes.append(Node(kind, tuple(inputs), tuple(int(d) for d in shape), packed))
        self._plans.clear()
        return Tensor(self, len(self.nodes) - 1)

    def leaf(self, shape, name: str | None = None) -> "Tensor":
        return self.add("leaf", (), shape, {"name": name})

    def const(self, value) -> "Tensor":
        arr = np.asarray(value, dtype=np.float64)
        return self.add("const", (), arr.shape, {"value": arr})


@dataclass(frozen=True)
class Tensor:
    """Handle to one graph node. Values are numpy float64 arrays."""

    graph: Graph
    nid: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.graph.nodes[self.nid].shape

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    # Arithmetic sugar; scalars lift to consts.
    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.graph is not self.graph:
                raise GraphError("operands belong to different graphs")
            return other
        return self.graph.const(other)

    def __add__(self, other):
        from ganinv import ops

        return ops.add(self, self._lift(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        from ganinv import ops

        return ops.add(self, ops.scale(self._lift(other), -1.0))

    def __rsub__(self, other):
        from ganinv import ops

        return ops.add(self._lift(other), ops.scale(self, -1.0))

    def __mul__(self, other):
        from ganinv import ops

        return ops.mul(self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        from ganinv import ops

        return ops.div(self, self._lift(other))

    def __rtruediv__(self, other):
        from ganinv import ops

        return ops.div(self._lift(other), self)

    def __neg__(self):
        from ganinv import ops

        return ops.scale(self, -1.0)


def _attrs_dict(node: Node) -> dict:
    return dict(node.attrs)


class _Plan:
    """Execution order for a target set, with last-use bookkeeping.

    Nodes whose ancestors are all constants are evaluated once at plan
    construction and reused across calls (training graphs re-evaluate
    with fresh leaf bindings every iteration; constant subtrees like
    frozen weights' derived quantities should not be recomputed).
    """

    __slots__ = ("order", "last_use", "targets", "baseline")

    def __init__(self, graph: Graph, targets: tuple[int, ...]):
        needed = set()
        stack = list(targets)
        while stack:
            nid = stack.pop()
            if nid in needed:
                continue
            needed.add(nid)
            stack.extend(graph.nodes[nid].inputs)
        self.targets = targets
        ordered = sorted(needed)

        const_pure = set()
        for nid in ordered:
            node = graph.nodes[nid]
            if node.kind == "const":
                const_pure.add(nid)
            elif node.kind != "leaf" and node.inputs and all(i in const_pure for i in node.inputs):
                const_pure.add(nid)
        # fold what the dynamic region (or the target list) actually reads
        boundary = set(t for t in targets if t in const_pure)
        for nid in ordered:
            if nid in const_pure:
                continue
            for i in graph.nodes[nid].inputs:
                if i in const_pure:
                    boundary.add(i)
        self.baseline: dict[int, np.ndarray] = {}
        if boundary:
            fold: dict[int, np.ndarray] = {}
            for nid in ordered:
                if nid not in const_pure:
                    continue
                node = graph.nodes[nid]
                if node.kind == "const":
                    fold[nid] = _attrs_dict(node)["value"]
                else:
                    op = OPS[node.kind]
                    fold[nid] = op.forward(_attrs_dict(node), *[fold[i] for i in node.inputs])
            self.baseline = {nid: fold[nid] for nid in boundary}

        self.order = [nid for nid in ordered if nid not in const_pure]
        tset = set(targets)
        last = {}
        for nid in self.order:
            for i in graph.nodes[nid].inputs:
                last[i] = nid
        # after executing node `at`, cache entries in last_use[at] are dead
        self.last_use: dict[int, list[int]] = {}
        for src, at in last.items():
            if src not in tset and src not in self.baseline:
                self.last_use.setdefault(at, []).append(src)


def _plan(graph: Graph, targets: tuple[int, ...]) -> _Plan:
    plan = graph._plans.get(targets)
    if plan is None:
        plan = _Plan(graph, targets)
        graph._plans[targets] = plan
    return plan


def evaluate(target, bindings: dict | None = None, cache: dict | None = None):
    """Forward-evaluate one Tensor or a sequence of Tensors.

    bindings maps leaf Tensors to numpy arrays. Evaluation is memoized
    per call; passing an external `cache` dict shares memoization across
    calls on the same graph (then no intermediate is freed).
    """
    single = isinstance(target, Tensor)
    targets = [target] if single else list(target)
    if not targets:
        return []
    graph = targets[0].graph
    bound: dict[int, np.ndarray] = {}
    for t, value in (bindings or {}).items():
        node = graph.nodes[t.nid]
        if node.kind != "leaf":
            raise GraphError("bindings must map leaf tensors")
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != node.shape:
            raise ShapeMismatch("leaf", f"bound value shape {arr.shape} != leaf shape {node.shape}")
        bound[t.nid] = arr
    keep_all = cache is not None
    plan = _plan(graph, tuple(t.nid for t in targets))
    if cache is not None:
        values = cache
        for nid, val in plan.baseline.items():
            values.setdefault(nid, val)
    else:
        values = dict(plan.baseline)
    nodes = graph.nodes
    for nid in plan.order:
        if nid in values:
            continue
        node = nodes[nid]
        if node.kind == "leaf":
            if nid not in bound:
                name = _attrs_dict(node).get("name")
                raise GraphError(f"leaf {name or nid} is unbound")
            values[nid] = bound[nid]
        elif node.kind == "const":
            values[nid] = _attrs_dict(node)["value"]
        else:
            op = OPS[node.kind]
            args = [values[i] for i in node.inputs]
            values[nid] = op.forward(_attrs_dict(node), *args)
        if not keep_all:
            for dead in plan.last_use.get(nid, ()):
                values.pop(dead, None)
    out = [values[t.nid] for t in targets]
    return out[0] if single else out


def backward(loss: Tensor, wrt) -> list[Tensor]:
    """Emit gradient nodes of a scalar `loss` with respect to `wrt`.

    Returns one Tensor per entry of wrt; entries that loss does not
    depend on get a zero-constant tensor. The returned tensors are
    ordinary graph nodes and can be differentiated again.
    """
    graph = loss.graph
    wrt = list(wrt)
    if any(w.graph is not graph for w in wrt):
        raise GraphError("wrt tensors must live in the loss graph")
    if loss.size != 1:
        raise ShapeMismatch("backward", f"source must be scalar, got shape {loss.shape}")

    # ancestors of loss
    anc = set()
    stack = [loss.nid]
    while stack:
        nid = stack.pop()
        if nid in anc:
            continue
        anc.add(nid)
        stack.extend(graph.nodes[nid].inputs)
    # restrict to nodes that can reach a wrt target (inputs precede outputs)
    wrt_ids = {w.nid for w in wrt}
    active = set()
    for nid in sorted(anc):
        node = graph.nodes[nid]
        if nid in wrt_ids or any(i in active for i in node.inputs):
            active.add(nid)

    from ganinv import ops

    grads: dict[int, Tensor] = {}
    if loss.nid in active:
        grads[loss.nid] = graph.const(np.ones(loss.shape, dtype=np.float64))
    for nid in sorted(anc & active, reverse=True):
        g = grads.get(nid)
        if g is None:
            continue
        node = graph.nodes[nid]
        if node.kind in ("leaf", "const"):
            continue
        out = Tensor(graph, nid)
        ins = tuple(Tensor(graph, i) for i in node.inputs)
        partials = OPS[node.kind].vjp(g, out, ins, _attrs_dict(node))
        for inp, part in zip(node.inputs, partials):
            if part is None or inp not in active:
                continue
            if part.shape != graph.nodes[inp].shape:
                raise ShapeMismatch(
                    node.kind, f"vjp produced shape {part.shape} for input of shape {graph.nodes[inp].shape}"
                )
            acc = grads.get(inp)
            grads[inp] = part if acc is None else ops.add(acc, part)
    results = []
    for w in wrt:
        g = grads.get(w.nid)
        if g is None:
            g = graph.const(np.zeros(graph.nodes[w.nid].shape, dtype=np.float64))
        results.append(g)
    return results
