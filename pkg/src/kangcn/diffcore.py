"""Explicit forward/backward layers, parameter containers, gradient checking and checkpoints.

Every layer caches what its backward needs during ``forward``; the cache is
single-use (armed by forward, disarmed by backward). With ``inference=True`` a
layer does not cache and cannot be differentiated, which makes a frozen model
safe to share between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DTYPE = np.float64


class ParamTensor:
    __slots__ = ("name", "values", "grad")

    def __init__(self, name: str, values) -> None:
        self.name = name
        self.values = np.array(values, dtype=DTYPE)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={self.shape})"


class BackwardError(RuntimeError):
    pass


class Layer:
    """Base class. Subclasses implement ``_forward(x) -> (out, cache)`` and
    ``_backward(cache, upstream) -> input_grad``."""

    name = "layer"

    def __init__(self) -> None:
        self.inference = False
        self._cache = None
        self._armed = False

    @property
    def params(self) -> list[ParamTensor]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, cache = self._forward(np.asarray(x, dtype=DTYPE))
        if self.inference:
            self._cache, self._armed = None, False
        else:
            self._cache, self._armed = cache, True
        return out

    __call__ = forward

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if not self._armed:
            raise BackwardError(f"{self.name}: backward without a matching forward")
        cache, self._cache, self._armed = self._cache, None, False
        return self._backward(cache, np.asarray(upstream, dtype=DTYPE))

    def set_inference(self, flag: bool = True) -> None:
        self.inference = flag

    def _forward(self, x):
        raise NotImplementedError

    def _backward(self, cache, upstream):
        raise NotImplementedError


class Sequential(Layer):
    name = "sequential"

    def __init__(self, layers: Sequence[Layer]) -> None:
        super().__init__()
        self.layers = list(layers)

    @property
    def params(self) -> list[ParamTensor]:
        return [p for layer in self.layers for p in layer.params]

    def set_inference(self, flag: bool = True) -> None:
        super().set_inference(flag)
        for layer in self.layers:
            layer.set_inference(flag)

    def _forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x, None

    def _backward(self, cache, upstream):
        for layer in reversed(self.layers):
            upstream = layer.backward(upstream)
        return upstream


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def zero_grads(params: Sequence[ParamTensor]) -> None:
    for p in params:
        p.grad[...] = 0.0


def count_params(params: Sequence[ParamTensor]) -> int:
    return int(sum(p.size for p in params))


@dataclass
class GradcheckReport:
    layer: str
    max_rel_error: float
    worst_entry: str
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.layer}: max_rel_error={self.max_rel_error:.3e} "
            f"(tol {self.tolerance:g}, {self.n_checked} entries, worst {self.worst_entry})"
        )


def gradcheck(
    layer: Layer,
    x,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-4,
) -> GradcheckReport:
    """Compare analytic gradients of L = sum(out**2) against central differences,
    over every parameter entry and every input entry.

    The relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    entries whose true gradient is ~0 from dividing roundoff by roundoff.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.array(x, dtype=DTYPE)
    was_inference = layer.inference
    layer.set_inference(False)
    params = layer.params

    def probe(inp) -> float:
        out = layer.forward(inp)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{layer.name}: non-finite forward output")
        return float(np.sum(out * out))

    zero_grads(params)
    out = layer.forward(x)
    if not np.all(np.isfinite(out)):
        layer.backward(np.zeros_like(out))
        raise FloatingPointError(f"{layer.name}: non-finite forward output")
    dx = layer.backward(2.0 * out)
    analytic = [(p.name, p.values, p.grad.copy()) for p in params]
    analytic.append(("input", x, dx))
    layer.set_inference(True)

    worst, worst_entry, n = 0.0, "", 0
    for name, target, grad in analytic:
        flat, gflat = target.reshape(-1), grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            lp = probe(x)
            flat[k] = orig - epsilon
            lm = probe(x)
            flat[k] = orig
            numeric = (lp - lm) / (2.0 * epsilon)
            a = gflat[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            n += 1
            if err > worst:
                worst, worst_entry = err, f"{name}[{k}]"
    zero_grads(params)
    layer.set_inference(was_inference)
    return GradcheckReport(layer.name, worst, worst_entry, n, tolerance)


def save_checkpoint(stem, params: Sequence[ParamTensor], extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``stem.json`` (manifest) and ``stem.bin`` (little-endian float64 blob)."""
    stem = Path(stem)
    manifest = {"layers": [{"name": p.name, "shapes": list(p.shape)} for p in params]}
    if extra:
        manifest.update(extra)
    blob = b"".join(np.ascontiguousarray(p.values, dtype="<f8").tobytes() for p in params)
    json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    json_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    bin_path.write_bytes(blob)
    return json_path, bin_path


def read_manifest(stem) -> dict:
    return json.loads(Path(stem).with_suffix(".json").read_text())


def load_checkpoint(stem, params: Sequence[ParamTensor]) -> dict:
    """Fill ``params`` in place from a checkpoint; returns the manifest."""
    stem = Path(stem)
    manifest = read_manifest(stem)
    entries = manifest["layers"]
    if len(entries) != len(params):
        raise ValueError(f"checkpoint has {len(entries)} tensors, model has {len(params)}")
    blob = stem.with_suffix(".bin").read_bytes()
    total = sum(int(np.prod(e["shapes"])) for e in entries)
    if len(blob) != 8 * total:
        raise ValueError(f"blob is {len(blob)} bytes, expected {8 * total}")
    data = np.frombuffer(blob, dtype="<f8")
    offset = 0
    for entry, p in zip(entries, params):
        if tuple(entry["shapes"]) != p.shape or entry["name"] != p.name:
            raise ValueError(f"tensor mismatch: {entry} vs {p}")
        p.values[...] = data[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    return manifest
