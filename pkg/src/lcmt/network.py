"""MLP classifier split into a feature extractor g and a head h, plus the EMA teacher."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    feature_layers: tuple[int, ...] = (64, 64)
    latent_dim: int = 2
    head_layers: tuple[int, ...] = ()
    class_count: int = 2
    normalize_latent: bool = False

    def __post_init__(self):
        widths = (self.input_dim, *self.feature_layers, self.latent_dim, *self.head_layers, self.class_count)
        if any(int(w) < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")

    def layers(self) -> list[tuple[str, int, int]]:
        """(prefix, fan_in, fan_out) for every dense layer, g first then h."""
        out = []
        g_widths = (self.input_dim, *self.feature_layers, self.latent_dim)
        for i in range(len(g_widths) - 1):
            out.append((f"g.{i}", g_widths[i], g_widths[i + 1]))
        h_widths = (self.latent_dim, *self.head_layers, self.class_count)
        for i in range(len(h_widths) - 1):
            out.append((f"h.{i}", h_widths[i], h_widths[i + 1]))
        return out


def init_params(spec: MlpSpec, seed: int) -> Params:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for prefix, fan_in, fan_out in spec.layers():
        params[f"{prefix}.weight"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params[f"{prefix}.bias"] = np.zeros(fan_out)
    return params


def zeros_like(params: Mapping[str, np.ndarray]) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Mapping[str, np.ndarray]) -> Params:
    return {k: v.copy() for k, v in params.items()}


def _dense_stack(params, part: str, x: ad.Tensor, n_layers: int) -> ad.Tensor:
    for i in range(n_layers):
        x = ad.add(ad.matmul(x, params[f"{part}.{i}.weight"]), params[f"{part}.{i}.bias"])
        if i < n_layers - 1:
            x = ad.relu(x)
    return x


def _as_tensors(params) -> dict[str, ad.Tensor]:
    return {k: ad.constant(v) for k, v in params.items()}


def _count(params, part: str) -> int:
    return sum(1 for k in params if k.startswith(part + ".") and k.endswith(".weight"))


def forward_features(params, X, normalize: bool = False) -> ad.Tensor:
    """z = g(X). ReLU between layers; the latent output is linear, or unit-norm if ``normalize``."""
    params = _as_tensors(params)
    X = ad.constant(X)
    first = params["g.0.weight"]
    if X.value.ndim != 2 or X.shape[1] != first.shape[0]:
        raise ad.DimensionError(f"input has width {X.shape[-1]}, network expects {first.shape[0]}")
    z = _dense_stack(params, "g", X, _count(params, "g"))
    return ad.normalize_rows(z) if normalize else z


def forward_head(params, z) -> ad.Tensor:
    """Logits h(z)."""
    params = _as_tensors(params)
    return _dense_stack(params, "h", ad.constant(z), _count(params, "h"))


def forward_logits(params, X, normalize: bool = False) -> tuple[ad.Tensor, ad.Tensor]:
    z = forward_features(params, X, normalize)
    return z, forward_head(params, z)


def forward_probs(params, X, normalize: bool = False) -> ad.Tensor:
    return ad.softmax(forward_logits(params, X, normalize)[1])


def predict(params, X: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    return np.argmax(forward_logits(params, X, normalize)[1].value, axis=1)


@dataclass
class StudentTeacher:
    student: Params
    teacher: Params
    alpha: float
    step: int = 0

    @classmethod
    def from_student(cls, student: Params, alpha: float) -> "StudentTeacher":
        return cls(student=student, teacher=copy_params(student), alpha=alpha)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"EMA alpha must lie in [0, 1], got {self.alpha}")
        if self.student.keys() != self.teacher.keys() or any(
            self.student[k].shape != self.teacher[k].shape for k in self.student
        ):
            raise ValueError("student and teacher parameter shapes differ")


def ema_update(st: StudentTeacher) -> StudentTeacher:
    """teacher <- alpha * teacher + (1 - alpha) * student, in place; advances the step."""
    a = st.alpha
    for k, s in st.student.items():
        t = st.teacher[k]
        if a == 0.0:
            t[...] = s
        elif a != 1.0:
            t *= a
            t += (1.0 - a) * s
    st.step += 1
    return st
