"""Discrete memoryless channels and their per-channel information quantities."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12
RENORM_TOL = 1e-9


class ChannelError(ValueError):
    """Raised for malformed transition kernels or channel files."""


@dataclass(frozen=True)
class Dmc:
    """Row-stochastic kernel ``kernel[x, y] = P(y | x)``."""

    kernel: np.ndarray
    labels_in: tuple[str, ...] | None = None
    labels_out: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        k = np.array(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] < 1 or k.shape[1] < 1:
            raise ChannelError(f"kernel must be a non-empty matrix, got shape {k.shape}")
        if not np.all(np.isfinite(k)) or np.any(k < 0.0) or np.any(k > 1.0):
            raise ChannelError("kernel entries must lie in [0, 1]")
        drift = np.abs(k.sum(axis=1) - 1.0)
        if np.any(drift > RENORM_TOL):
            bad = int(np.argmax(drift))
            raise ChannelError(f"row {bad} sums to {k[bad].sum():.12g}, not 1")
        if np.any(drift > ROW_TOL):
            k = k / k.sum(axis=1, keepdims=True)
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        for name, size in (("labels_in", k.shape[0]), ("labels_out", k.shape[1])):
            labels = getattr(self, name)
            if labels is not None:
                labels = tuple(str(s) for s in labels)
                if len(labels) != size:
                    raise ChannelError(f"{name} has {len(labels)} entries, expected {size}")
                object.__setattr__(self, name, labels)

    @property
    def input_size(self) -> int:
        return self.kernel.shape[0]

    @property
    def output_size(self) -> int:
        return self.kernel.shape[1]

    def require_coding(self) -> None:
        """Reject channels too small to carry the two-phase scheme."""
        if self.input_size < 2 or self.output_size < 2:
            raise ChannelError("coding needs at least 2 input and 2 output symbols")

    def restrict_inputs(self, keep: Sequence[int]) -> "Dmc":
        keep = list(keep)
        labels = None if self.labels_in is None else tuple(self.labels_in[i] for i in keep)
        return Dmc(self.kernel[keep], labels, self.labels_out)

    def to_json(self) -> dict:
        out: dict = {"transition": self.kernel.tolist()}
        if self.labels_in is not None:
            out["labels_in"] = list(self.labels_in)
        if self.labels_out is not None:
            out["labels_out"] = list(self.labels_out)
        return out


def bsc(p: float) -> Dmc:
    return Dmc(np.array([[1.0 - p, p], [p, 1.0 - p]]))


def load_channel(path: str | Path) -> Dmc:
    """Read the ``{"transition": [[...], ...], "labels_in": ..., "labels_out": ...}`` file."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ChannelError(f"cannot read channel file {path}: {exc}") from exc
    if not isinstance(raw, dict) or "transition" not in raw:
        raise ChannelError(f"{path}: expected an object with a 'transition' matrix")
    return Dmc(np.asarray(raw["transition"], dtype=np.float64), raw.get("labels_in"), raw.get("labels_out"))


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """D(p || q) in nats, with 0 ln(0/q) = 0 and +inf when p puts mass where q has none."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > RENORM_TOL:
            raise ValueError(f"{name} is not a probability vector (sum={v.sum():.12g})")
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def divergence_matrix(kernel: np.ndarray) -> np.ndarray:
    """``D[x, x'] = D(P(.|x) || P(.|x'))`` for every ordered pair of rows."""
    n = kernel.shape[0]
    out = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            out[a, b] = kl_divergence(kernel[a], kernel[b])
    return out


@dataclass(frozen=True)
class ChannelInfo:
    B: float
    B_star: float
    C2: float
    T_ratio: float
    x0: int
    x0_prime: int
    finite_B: bool
    C: float | None = None
    px_star: np.ndarray | None = field(default=None, compare=False)

    @property
    def regime(self) -> str:
        """``"case1"`` when B* > C, otherwise ``"case2"``."""
        if self.C is None:
            raise ValueError("capacity not set")
        return "case1" if self.B_star > self.C else "case2"

    def with_capacity(self, C: float, px_star: np.ndarray) -> "ChannelInfo":
        px = np.array(px_star, dtype=np.float64)
        px.setflags(write=False)
        return replace(self, C=float(C), px_star=px)

    def as_dict(self) -> dict:
        out = {
            "B": self.B,
            "B_star": self.B_star,
            "C": self.C,
            "C2": self.C2,
            "T": self.T_ratio,
            "x0": self.x0,
            "x0_prime": self.x0_prime,
            "finite_B": self.finite_B,
        }
        if self.px_star is not None:
            out["px_star"] = [float(v) for v in self.px_star]
        if self.C is not None and self.finite_B and self.C > 0:
            out["B_over_C"] = self.B / self.C
            out["regime"] = self.regime
        return out


def compute_info(dmc: Dmc) -> ChannelInfo:
    """B, B*, C2, T and the extremal input pair; capacity is filled in separately."""
    k = dmc.kernel
    n = dmc.input_size
    if n < 2:
        return ChannelInfo(0.0, 0.0, 0.0, 1.0, 0, 0, True)
    div = divergence_matrix(k)
    off = ~np.eye(n, dtype=bool)
    B = float(div[off].max())
    b_set = [(a, b) for a in range(n) for b in range(n) if a != b and div[a, b] == B]
    B_star = max(float(div[b, a]) for a, b in b_set)
    x0, x0p = min((a, b) for a, b in b_set if div[b, a] == B_star)

    both = (k[:, None, :] > 0) & (k[None, :, :] > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(both, k[:, None, :] / np.where(both, k[None, :, :], 1.0), 1.0)
    T = float(ratio.max())
    C2 = float(np.abs(np.log(ratio)).max())
    return ChannelInfo(B, B_star, C2, T, int(x0), int(x0p), bool(np.isfinite(B)))


def varphi(channel: "Dmc | ChannelInfo", theta: float) -> float:
    """The truncated bound ``(ln T) * 1{ln T >= theta}`` on log-entropy drops."""
    info = compute_info(channel) if isinstance(channel, Dmc) else channel
    if not info.finite_B:
        raise ValueError("varphi needs a channel with finite B")
    log_t = math.log(info.T_ratio)
    return log_t if log_t >= theta else 0.0
