"""ModelGraph: ordered layer specs plus named parameter tensors."""

import copy
import hashlib
from enum import StrEnum
from typing import Any, Iterable, Literal, Mapping, Optional, Sequence, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, TypeAdapter

from bgcut.errors import ShapeError
from bgcut.tensor import ops
from bgcut.tensor.autograd import ArrayLike, Variable, as_variable


logger = structlog.get_logger()


class LayerKind(StrEnum):
    INPUT = "input"
    CONV = "conv"
    DECONV = "deconv"
    BATCH_NORM = "batch_norm"
    RELU = "relu"
    MAX_POOL = "max_pool"
    ADD = "add"
    CONCAT = "concat"
    GLOBAL_POOL = "global_pool"
    UPSAMPLE = "upsample"


FILTER_KINDS = (LayerKind.CONV, LayerKind.DECONV)


class LayerSpec(BaseModel):
    """One node of a model graph.

    ``upsample`` layers take ``(x, reference)`` and resize ``x`` to the reference's
    spatial size. ``input`` layers declare their channel count in ``out_channels``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    kind: LayerKind
    inputs: tuple[str, ...] = ()
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    dilation: int = 1
    bias: bool = True
    mode: Literal["tile", "bilinear"] = "bilinear"
    prunable: bool = True


_layer_list = TypeAdapter(list[LayerSpec])


def weight_name(layer: str) -> str:
    return f"{layer}.weight"


def bias_name(layer: str) -> str:
    return f"{layer}.bias"


class ModelGraph:
    """Executable network description.

    Parameters are Variables so gradients accumulate on them while a tape is active;
    batch-norm running statistics are plain buffers. ``masks`` records, per filter
    layer, which of the originally built filters are still present.
    """

    FORMAT_VERSION = 1

    def __init__(
        self,
        layers: Sequence[LayerSpec],
        params: Mapping[str, np.ndarray],
        buffers: Optional[Mapping[str, np.ndarray]] = None,
        outputs: Sequence[str] = (),
        masks: Optional[Mapping[str, np.ndarray]] = None,
        name: str = "model",
    ) -> None:
        self.name = name
        self.layers: list[LayerSpec] = list(layers)
        self.params: dict[str, Variable] = {
            key: Variable(np.asarray(value), requires_grad=True, name=key)
            for key, value in params.items()
        }
        self.buffers: dict[str, np.ndarray] = {
            key: np.array(value, copy=True) for key, value in (buffers or {}).items()
        }
        self.outputs: tuple[str, ...] = tuple(outputs) or (self.layers[-1].name,)
        self.masks: dict[str, np.ndarray] = {
            key: np.asarray(value, dtype=bool) for key, value in (masks or {}).items()
        }
        for layer in self.layers:
            if layer.kind in FILTER_KINDS and layer.name not in self.masks:
                self.masks[layer.name] = np.ones(layer.out_channels, dtype=bool)
        self._fingerprint: Optional[tuple[tuple[int, ...], str]] = None
        self.validate()

    # -- structure -----------------------------------------------------------------

    @property
    def input_names(self) -> list[str]:
        return [layer.name for layer in self.layers if layer.kind == LayerKind.INPUT]

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def filter_layers(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.kind in FILTER_KINDS]

    def param(self, name: str) -> np.ndarray:
        return self.params[name].value

    def parameter_count(self) -> int:
        return int(sum(v.value.size for v in self.params.values()))

    @property
    def dtype(self) -> np.dtype:
        for variable in self.params.values():
            return variable.dtype
        return np.dtype(np.float32)

    def channels(self) -> dict[str, int]:
        """Output channel count of every node, checking each edge on the way."""
        out: dict[str, int] = {}
        for layer in self.layers:
            for src in layer.inputs:
                if src not in out:
                    raise ShapeError(f"layer {layer.name} consumes {src} before it is defined")
            ins = [out[src] for src in layer.inputs]
            kind = layer.kind

            if kind == LayerKind.INPUT:
                out[layer.name] = layer.out_channels
            elif kind in FILTER_KINDS:
                if ins[0] != layer.in_channels:
                    raise ShapeError(
                        f"layer {layer.name} expects {layer.in_channels} input channels, "
                        f"producer {layer.inputs[0]} gives {ins[0]}"
                    )
                w = self.param(weight_name(layer.name))
                expected = (
                    (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
                    if kind == LayerKind.CONV
                    else (layer.in_channels, layer.out_channels, layer.kernel, layer.kernel)
                )
                if w.shape != expected:
                    raise ShapeError(f"layer {layer.name} weight {w.shape} != {expected}")
                if layer.bias and self.param(bias_name(layer.name)).shape != (layer.out_channels,):
                    raise ShapeError(f"layer {layer.name} bias does not match its filters")
                out[layer.name] = layer.out_channels
            elif kind == LayerKind.BATCH_NORM:
                for key in (f"{layer.name}.gamma", f"{layer.name}.beta"):
                    if self.param(key).shape != (ins[0],):
                        raise ShapeError(f"{key} does not match {ins[0]} channels")
                for key in (f"{layer.name}.running_mean", f"{layer.name}.running_var"):
                    if self.buffers[key].shape != (ins[0],):
                        raise ShapeError(f"{key} does not match {ins[0]} channels")
                out[layer.name] = ins[0]
            elif kind == LayerKind.ADD:
                if ins[0] != ins[1]:
                    raise ShapeError(
                        f"add {layer.name} joins {ins[0]} and {ins[1]} channels "
                        f"({layer.inputs[0]}, {layer.inputs[1]})"
                    )
                out[layer.name] = ins[0]
            elif kind == LayerKind.CONCAT:
                out[layer.name] = sum(ins)
            else:
                out[layer.name] = ins[0]
        return out

    def validate(self) -> None:
        """Assert channel consistency on every edge and that outputs exist."""
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError("layer names must be unique")
        channels = self.channels()
        for name in self.outputs:
            if name not in channels:
                raise ShapeError(f"graph output {name} is not a layer")
        for layer in self.filter_layers():
            mask = self.masks[layer.name]
            if int(mask.sum()) != layer.out_channels:
                raise ShapeError(f"mask of {layer.name} keeps {mask.sum()} != {layer.out_channels}")

    # -- execution -----------------------------------------------------------------

    def forward(
        self,
        inputs: Union[Mapping[str, ArrayLike], ArrayLike],
        training: bool = False,
        freeze_bn: bool = False,
        outputs: Optional[Sequence[str]] = None,
    ) -> dict[str, Variable]:
        """Evaluate the graph.

        Args:
            inputs: Mapping from input-layer name to value, or a single value when the
                graph has one input
            training: Batch norm uses batch statistics and updates running buffers
            freeze_bn: Keep batch norm in inference mode even when training
            outputs: Node names to return; defaults to the graph outputs

        Returns:
            Output Variables by node name
        """
        if not isinstance(inputs, Mapping):
            names = self.input_names
            if len(names) != 1:
                raise ShapeError(f"graph has inputs {names}; pass a mapping")
            inputs = {names[0]: inputs}

        bn_training = training and not freeze_bn
        values: dict[str, Variable] = {}
        for layer in self.layers:
            xs = [values[src] for src in layer.inputs]
            values[layer.name] = self._run(layer, xs, inputs, bn_training)

        wanted = outputs or self.outputs
        return {name: values[name] for name in wanted}

    def __call__(self, x: ArrayLike, training: bool = False) -> Variable:
        return self.forward(x, training=training)[self.outputs[0]]

    def _run(
        self,
        layer: LayerSpec,
        xs: list[Variable],
        inputs: Mapping[str, ArrayLike],
        bn_training: bool,
    ) -> Variable:
        kind = layer.kind
        if kind == LayerKind.INPUT:
            if layer.name not in inputs:
                raise ShapeError(f"missing graph input {layer.name}")
            value = as_variable(inputs[layer.name])
            if value.value.ndim != 4 or value.shape[1] != layer.out_channels:
                raise ShapeError(
                    f"input {layer.name} must be N×{layer.out_channels}×H×W, got {value.shape}"
                )
            return value
        if kind == LayerKind.CONV:
            bias = self.params[bias_name(layer.name)] if layer.bias else None
            return ops.conv2d(
                xs[0],
                self.params[weight_name(layer.name)],
                bias,
                stride=layer.stride,
                pad=layer.pad,
                dilation=layer.dilation,
            )
        if kind == LayerKind.DECONV:
            bias = self.params[bias_name(layer.name)] if layer.bias else None
            return ops.conv2d_transpose(
                xs[0],
                self.params[weight_name(layer.name)],
                bias,
                stride=layer.stride,
                pad=layer.pad,
            )
        if kind == LayerKind.BATCH_NORM:
            return ops.batch_norm(
                xs[0],
                self.params[f"{layer.name}.gamma"],
                self.params[f"{layer.name}.beta"],
                self.buffers[f"{layer.name}.running_mean"],
                self.buffers[f"{layer.name}.running_var"],
                training=bn_training,
            )
        if kind == LayerKind.RELU:
            return ops.relu(xs[0])
        if kind == LayerKind.MAX_POOL:
            return ops.max_pool2d(xs[0], kernel=layer.kernel, stride=layer.stride, pad=layer.pad)
        if kind == LayerKind.ADD:
            return ops.add(xs[0], xs[1])
        if kind == LayerKind.CONCAT:
            return ops.concat_channels(xs)
        if kind == LayerKind.GLOBAL_POOL:
            return ops.global_avg_pool(xs[0])
        if kind == LayerKind.UPSAMPLE:
            _, _, h, w = xs[1].shape
            return ops.upsample(xs[0], h, w, mode=layer.mode)
        raise ShapeError(f"unsupported layer kind {kind}")

    # -- copies and identity -------------------------------------------------------

    def state(self) -> dict[str, Any]:
        return {
            "layers": self.layers,
            "params": {k: v.value for k, v in self.params.items()},
            "buffers": self.buffers,
            "outputs": self.outputs,
            "masks": self.masks,
            "name": self.name,
        }

    def copy(self) -> "ModelGraph":
        state = copy.deepcopy(self.state())
        return ModelGraph(**state)

    def astype(self, dtype: Union[np.dtype, type]) -> "ModelGraph":
        state = self.state()
        state["params"] = {k: v.astype(dtype) for k, v in state["params"].items()}
        state["buffers"] = {k: v.astype(dtype) for k, v in state["buffers"].items()}
        return ModelGraph(**copy.deepcopy(state))

    def subgraph(self, outputs: Sequence[str], name: Optional[str] = None) -> "ModelGraph":
        """Copy of the layers needed to compute ``outputs``."""
        needed: set[str] = set(outputs)
        for layer in reversed(self.layers):
            if layer.name in needed:
                needed.update(layer.inputs)
        layers = [layer for layer in self.layers if layer.name in needed]
        prefixes = tuple(f"{layer.name}." for layer in layers)
        state = copy.deepcopy(self.state())
        return ModelGraph(
            layers=layers,
            params={k: v for k, v in state["params"].items() if k.startswith(prefixes)},
            buffers={k: v for k, v in state["buffers"].items() if k.startswith(prefixes)},
            outputs=outputs,
            masks={k: v for k, v in state["masks"].items() if k in needed},
            name=name or self.name,
        )

    def layers_json(self) -> bytes:
        return _layer_list.dump_json(self.layers)

    @staticmethod
    def layers_from_json(data: bytes) -> list[LayerSpec]:
        return _layer_list.validate_json(data)

    def fingerprint(self) -> str:
        """SHA-256 over the architecture and parameter bytes."""
        key = tuple(id(v.value) for v in self.params.values())
        if self._fingerprint is not None and self._fingerprint[0] == key:
            return self._fingerprint[1]
        digest = hashlib.sha256(self.layers_json())
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name].value).tobytes())
        value = digest.hexdigest()
        self._fingerprint = (key, value)
        return value

    def trainable(self, prefix: str = "") -> dict[str, Variable]:
        return {f"{prefix}{k}": v for k, v in self.params.items()}

    def zero_grad(self) -> None:
        for variable in self.params.values():
            variable.zero_grad()


class GraphBuilder:
    """Appends layers and initialises their parameters from one seeded generator."""

    def __init__(self, seed: int, dtype: type = np.float32) -> None:
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.layers: list[LayerSpec] = []
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.masks: dict[str, np.ndarray] = {}
        self._channels: dict[str, int] = {}

    def channels(self, name: str) -> int:
        return self._channels[name]

    def _add(self, spec: LayerSpec, channels: int) -> str:
        self.layers.append(spec)
        self._channels[spec.name] = channels
        return spec.name

    def input(self, name: str, channels: int) -> str:
        spec = LayerSpec(name=name, kind=LayerKind.INPUT, out_channels=channels)
        return self._add(spec, channels)

    def conv(
        self,
        name: str,
        src: str,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        pad: int = 0,
        dilation: int = 1,
        bias: bool = True,
        prunable: bool = True,
        init_std: Optional[float] = None,
    ) -> str:
        cin = self._channels[src]
        # He initialisation unless overridden
        std = init_std if init_std is not None else np.sqrt(2.0 / (cin * kernel * kernel))
        self.params[weight_name(name)] = (
            self.rng.standard_normal((out_channels, cin, kernel, kernel)) * std
        ).astype(self.dtype)
        if bias:
            self.params[bias_name(name)] = np.zeros(out_channels, dtype=self.dtype)
        spec = LayerSpec(
            name=name,
            kind=LayerKind.CONV,
            inputs=(src,),
            in_channels=cin,
            out_channels=out_channels,
            kernel=kernel,
            stride=stride,
            pad=pad,
            dilation=dilation,
            bias=bias,
            prunable=prunable,
        )
        return self._add(spec, out_channels)

    def deconv(
        self,
        name: str,
        src: str,
        out_channels: int,
        kernel: int,
        stride: int,
        pad: int,
        prunable: bool = True,
    ) -> str:
        cin = self._channels[src]
        std = np.sqrt(2.0 / (cin * kernel * kernel / (stride * stride)))
        self.params[weight_name(name)] = (
            self.rng.standard_normal((cin, out_channels, kernel, kernel)) * std
        ).astype(self.dtype)
        self.params[bias_name(name)] = np.zeros(out_channels, dtype=self.dtype)
        spec = LayerSpec(
            name=name,
            kind=LayerKind.DECONV,
            inputs=(src,),
            in_channels=cin,
            out_channels=out_channels,
            kernel=kernel,
            stride=stride,
            pad=pad,
            prunable=prunable,
        )
        return self._add(spec, out_channels)

    def batch_norm(self, name: str, src: str) -> str:
        c = self._channels[src]
        self.params[f"{name}.gamma"] = np.ones(c, dtype=self.dtype)
        self.params[f"{name}.beta"] = np.zeros(c, dtype=self.dtype)
        self.buffers[f"{name}.running_mean"] = np.zeros(c, dtype=self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(c, dtype=self.dtype)
        return self._add(LayerSpec(name=name, kind=LayerKind.BATCH_NORM, inputs=(src,)), c)

    def relu(self, name: str, src: str) -> str:
        c = self._channels[src]
        return self._add(LayerSpec(name=name, kind=LayerKind.RELU, inputs=(src,)), c)

    def max_pool(self, name: str, src: str, kernel: int, stride: int, pad: int) -> str:
        spec = LayerSpec(
            name=name, kind=LayerKind.MAX_POOL, inputs=(src,), kernel=kernel, stride=stride, pad=pad
        )
        return self._add(spec, self._channels[src])

    def add(self, name: str, a: str, b: str) -> str:
        if self._channels[a] != self._channels[b]:
            raise ShapeError(f"add {name}: {a} and {b} have different channel counts")
        return self._add(LayerSpec(name=name, kind=LayerKind.ADD, inputs=(a, b)), self._channels[a])

    def concat(self, name: str, srcs: Iterable[str]) -> str:
        srcs = tuple(srcs)
        total = sum(self._channels[s] for s in srcs)
        return self._add(LayerSpec(name=name, kind=LayerKind.CONCAT, inputs=srcs), total)

    def global_pool(self, name: str, src: str) -> str:
        spec = LayerSpec(name=name, kind=LayerKind.GLOBAL_POOL, inputs=(src,))
        return self._add(spec, self._channels[src])

    def upsample(
        self, name: str, src: str, like: str, mode: Literal["tile", "bilinear"] = "bilinear"
    ) -> str:
        spec = LayerSpec(name=name, kind=LayerKind.UPSAMPLE, inputs=(src, like), mode=mode)
        return self._add(spec, self._channels[src])

    def build(self, outputs: Sequence[str], name: str = "model") -> ModelGraph:
        return ModelGraph(
            layers=self.layers,
            params=self.params,
            buffers=self.buffers,
            outputs=outputs,
            masks=self.masks,
            name=name,
        )

    @classmethod
    def extend(cls, graph: ModelGraph, seed: int) -> "GraphBuilder":
        """Builder that continues an existing graph (parameters are copied)."""
        builder = cls(seed, dtype=graph.dtype.type)
        state = copy.deepcopy(graph.state())
        builder.layers = list(state["layers"])
        builder.params = dict(state["params"])
        builder.buffers = dict(state["buffers"])
        builder.masks = dict(state["masks"])
        builder._channels = graph.channels()
        return builder
