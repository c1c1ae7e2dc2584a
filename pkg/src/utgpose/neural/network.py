"""Sequential network container, loss gradients and weight persistence."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..errors import ShapeError
from .layers import Layer, LayerSpec, Sigmoid, layer_from_spec

MANIFEST_FORMAT = "utgpose-network/1"
BCE_EPS = 1e-7


class Network:
    def __init__(self, layers: Sequence[Layer], input_shape: tuple[int, ...], seed: int = 0,
                 dtype=np.float64) -> None:
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        self.shape_trace: list[tuple[str, tuple[int, ...]]] = [("Input", shape)]
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
            if any(s < 1 for s in shape):
                raise ShapeError(f"{layer.kind} collapsed the feature map to {shape}")
            self.shape_trace.append((layer.kind, shape))
        self.output_shape = shape

    @classmethod
    def from_specs(cls, specs: Sequence[LayerSpec], input_shape, seed=0, dtype=np.float64):
        return cls([layer_from_spec(s) for s in specs], input_shape, seed=seed, dtype=dtype)

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{layer.kind}.{name}", p

    def named_grads(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, g in layer.grads.items():
                yield f"{i}.{layer.kind}.{name}", g

    @property
    def n_params(self) -> int:
        return sum(p.size for _, p in self.named_params())

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def astype(self, dtype) -> "Network":
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for name in layer.params:
                layer.params[name] = layer.params[name].astype(self.dtype)
            layer.zero_grad()
        return self

    # -- passes -------------------------------------------------------------

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape == self.input_shape:
            x = x[None]
        elif x.shape[1:] != self.input_shape:
            # allow a trailing singleton channel to be omitted
            if x.shape[1:] + (1,) == self.input_shape:
                x = x[..., None]
            else:
                raise ShapeError(f"network expects (N, {self.input_shape}), got {x.shape}")
        return x

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        x = self._prepare(x)
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Scalar outputs for a batch, inference mode."""
        x = self._prepare(x)
        out = [self.forward(x[i:i + batch_size]).reshape(-1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=self.dtype)

    def backward(self, dy: np.ndarray, skip_last: int = 0) -> np.ndarray:
        layers = self.layers[:len(self.layers) - skip_last]
        for layer in reversed(layers):
            dy = layer.backward(dy)
        return dy

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None) -> float:
        """Mean binary cross-entropy over the batch; accumulates parameter gradients.

        When the network ends in Sigmoid the gradient enters at the logit as
        (p - y) / N, which is the exact derivative wherever p is not clamped.
        """
        p = self.forward(x, training=training, rng=rng).reshape(-1)
        y = np.asarray(y, dtype=self.dtype).reshape(-1)
        n = len(y)
        loss = float(bce_loss(p, y).mean())
        if isinstance(self.layers[-1], Sigmoid):
            dz = ((p - y) / n).reshape(n, 1).astype(self.dtype)
            self.backward(dz, skip_last=1)
        else:
            pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
            dp = (-(y / pc) + (1 - y) / (1 - pc)) / n
            dp = np.where((p > BCE_EPS) & (p < 1 - BCE_EPS), dp, 0.0)
            self.backward(dp.reshape(n, 1).astype(self.dtype))
        return loss

    # -- persistence --------------------------------------------------------

    def manifest(self, metadata: dict | None = None) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "layers": [layer.spec().to_dict() for layer in self.layers],
            "params": [{"name": n, "shape": list(p.shape)} for n, p in self.named_params()],
            "shape_trace": [{"layer": k, "shape": list(s)} for k, s in self.shape_trace],
            "blob_dtype": "<f4",
            "metadata": metadata or {},
        }

    def save(self, stem: str | Path, metadata: dict | None = None) -> tuple[Path, Path]:
        """Write ``<stem>.json`` (manifest) and ``<stem>.bin`` (little-endian float32 weights)."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
        json_path.write_text(json.dumps(self.manifest(metadata), indent=2, sort_keys=True) + "\n")
        blob = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for _, p in self.named_params())
        bin_path.write_bytes(blob)
        return json_path, bin_path

    @classmethod
    def load(cls, stem: str | Path, dtype=np.float32) -> tuple["Network", dict]:
        stem = Path(stem)
        manifest = json.loads(stem.with_suffix(".json").read_text())
        if manifest.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"{stem}: unknown manifest format {manifest.get('format')!r}")
        specs = [LayerSpec.from_dict(d) for d in manifest["layers"]]
        net = cls.from_specs(specs, tuple(manifest["input_shape"]), seed=manifest["seed"], dtype=dtype)
        flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f4")
        expected = sum(int(np.prod(p["shape"])) for p in manifest["params"])
        if flat.size != expected:
            raise ValueError(f"{stem}: weight blob has {flat.size} values, manifest needs {expected}")
        offset = 0
        for layer in net.layers:
            for name, p in layer.params.items():
                layer.params[name] = flat[offset:offset + p.size].reshape(p.shape).astype(dtype)
                offset += p.size
        net.zero_grad()
        return net, manifest["metadata"]


def bce_loss(p, y, eps: float = BCE_EPS):
    """Binary cross-entropy with p clamped to [eps, 1 - eps]; vectorises."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def backward(network: Network, x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of the mean BCE loss for every parameter (inference-mode forward)."""
    network.zero_grad()
    network.loss_and_grad(x, y)
    return {name: g.copy() for name, g in network.named_grads()}
