"""Layer DAG with a hierarchical parameter registry."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .layers import Cache, CacheError, Layer, layer_from_dict
from .tensor import ShapeError

INPUT = "input"


@dataclass(frozen=True)
class Node:
    name: str
    layer: Layer
    inputs: tuple[str, ...]


class GraphBuilder:
    """Appends nodes under a name prefix; used by the architecture builders."""

    def __init__(self, graph: "ModelGraph", prefix: str = ""):
        self.graph = graph
        self.prefix = prefix

    def scope(self, name: str) -> "GraphBuilder":
        return GraphBuilder(self.graph, f"{self.prefix}{name}.")

    def add(self, name: str, layer: Layer, *inputs: str) -> str:
        full = f"{self.prefix}{name}"
        self.graph.add_node(full, layer, inputs or (self.graph.last,))
        return full


class ModelGraph:
    """Topologically ordered layer DAG.

    Parameters are registered as ``<node-name>.<param>`` (for example
    ``backbone.block1.conv0.kernel``); batchnorm running statistics live in
    ``buffers`` under the same naming scheme.
    """

    def __init__(self, input_shape: tuple[int, int, int], descriptor: dict | None = None):
        self.input_shape = tuple(input_shape)
        self.descriptor = dict(descriptor or {})
        self.nodes: list[Node] = []
        self._index: dict[str, Node] = {}
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._caches: dict[str, Cache] | None = None
        self._shapes: dict[str, tuple[int, ...]] = {INPUT: (1,) + self.input_shape}

    # ------------------------------------------------------------------ building

    @property
    def last(self) -> str:
        return self.nodes[-1].name if self.nodes else INPUT

    @property
    def output(self) -> str:
        return self.last

    def add_node(self, name: str, layer: Layer, inputs: tuple[str, ...]) -> None:
        if name in self._index or name == INPUT:
            raise ValueError(f"duplicate node name {name!r}")
        for src in inputs:
            if src != INPUT and src not in self._index:
                raise ValueError(f"node {name!r} consumes unknown or later node {src!r}")
        if len(inputs) != layer.n_inputs:
            raise ValueError(f"{layer.kind} takes {layer.n_inputs} inputs, got {len(inputs)}")
        # shape propagation doubles as validation
        self._shapes[name] = tuple(layer.output_shape(*(self._shapes[s] for s in inputs)))
        node = Node(name, layer, tuple(inputs))
        self.nodes.append(node)
        self._index[name] = node

    def shape_of(self, name: str, batch: int = 1) -> tuple[int, ...]:
        return (batch,) + self._shapes[name][1:]

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._shapes[self.output]

    def node(self, name: str) -> Node:
        return self._index[name]

    def layers(self, kind: str | None = None) -> Iterator[Node]:
        return (n for n in self.nodes if kind is None or n.layer.kind == kind)

    def count(self, kind: str) -> int:
        return sum(1 for _ in self.layers(kind))

    # ------------------------------------------------------------------ parameters

    def param_spec(self) -> "OrderedDict[str, tuple[int, ...]]":
        spec = OrderedDict()
        for n in self.nodes:
            for p, shape in n.layer.param_shapes().items():
                spec[f"{n.name}.{p}"] = tuple(shape)
        return spec

    def parameter_count(self) -> int:
        return int(sum(np.prod(s) for s in self.param_spec().values()))

    def initialize(self, seed: int = 0, dtype=np.float32) -> "ModelGraph":
        rng = np.random.default_rng(seed)
        self.params.clear()
        self.buffers.clear()
        for n in self.nodes:
            for p, arr in n.layer.init_params(rng, dtype).items():
                self.params[f"{n.name}.{p}"] = arr
            for b, arr in n.layer.init_buffers(dtype).items():
                self.buffers[f"{n.name}.{b}"] = arr
        return self

    def astype(self, dtype) -> "ModelGraph":
        for store in (self.params, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)
        return self

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype if self.params else np.float32

    def _local(self, store, node: Node) -> dict[str, np.ndarray]:
        prefix = node.name + "."
        names = list(node.layer.param_shapes()) if store is self.params else list(node.layer.buffer_shapes())
        return {k: store[prefix + k] for k in names}

    # ------------------------------------------------------------------ execution

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        upto: str | None = None,
        frozen: tuple[str, ...] = (),
        patterns: dict[str, np.ndarray] | None = None,
    ) -> np.ndarray:
        """Evaluate the graph.

        Batchnorm nodes under a ``frozen`` prefix run in inference mode so that
        their running statistics stay fixed. ``patterns`` (see
        ``activation_patterns``) pins ReLU masks and max-pool winners.
        """
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"model expects input [B,{','.join(map(str, self.input_shape))}], got {x.shape}")
        if self._caches:
            for c in self._caches.values():
                c.valid = False
        values = {INPUT: x.astype(self.dtype, copy=False)}
        caches: dict[str, Cache] = {}
        frozen = tuple(frozen)
        for n in self.nodes:
            node_train = train and not (frozen and n.layer.kind == "BatchNorm" and n.name.startswith(frozen))
            extra = {"pattern": patterns[n.name]} if patterns and n.name in patterns else {}
            y, cache = n.layer.forward(
                self._local(self.params, n),
                *(values[s] for s in n.inputs),
                train=node_train,
                buffers=self._local(self.buffers, n),
                **extra,
            )
            values[n.name] = y
            caches[n.name] = cache
            if n.name == upto:
                break
        self._caches = caches
        return values[upto or self.output]

    def activation_patterns(self) -> dict[str, np.ndarray]:
        """ReLU masks and max-pool winner indices from the last forward pass."""
        out = {}
        for name, cache in (self._caches or {}).items():
            for key in ("mask", "idx"):
                if key in cache.data:
                    out[name] = cache.data[key].copy()
        return out

    def backward(self, grad_out: np.ndarray, skip_output: bool = False):
        """Backpropagate ``grad_out`` from the output node.

        With ``skip_output`` the gradient is taken to be with respect to the
        output node's *input* (used for fused softmax + cross-entropy).
        Returns ``(grad_input, grads)`` where ``grads`` maps parameter names
        to gradients.
        """
        if self._caches is None:
            raise CacheError("backward called before forward")
        grads: dict[str, np.ndarray] = {}
        pending: dict[str, np.ndarray] = {}
        out = self.nodes[-1]
        if skip_output:
            pending[out.inputs[0]] = grad_out
            order = self.nodes[:-1]
        else:
            pending[out.name] = grad_out
            order = self.nodes
        for n in reversed(order):
            g = pending.pop(n.name, None)
            if g is None:
                continue
            gin, gp = n.layer.backward(self._local(self.params, n), self._caches[n.name], g)
            for k, v in gp.items():
                grads[f"{n.name}.{k}"] = v
            for src, gi in zip(n.inputs, gin):
                pending[src] = pending[src] + gi if src in pending else gi
        for c in self._caches.values():
            c.valid = False
        self._caches = None
        for k, v in self.params.items():
            grads.setdefault(k, np.zeros_like(v))
        return pending.get(INPUT), grads

    # ------------------------------------------------------------------ (de)serialisation

    def topology(self) -> list[dict]:
        return [{"name": n.name, "layer": n.layer.to_dict(), "inputs": list(n.inputs)} for n in self.nodes]

    @classmethod
    def from_topology(cls, input_shape, topology: list[dict], descriptor: dict | None = None) -> "ModelGraph":
        g = cls(tuple(input_shape), descriptor)
        for entry in topology:
            g.add_node(entry["name"], layer_from_dict(entry["layer"]), tuple(entry["inputs"]))
        return g
