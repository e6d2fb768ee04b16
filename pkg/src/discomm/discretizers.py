"""The five message-discretization units, applied independently per bit.

Each unit is defined by three functions: a training forward pass, the
function whose derivative is used for the backward pass, and an
evaluation forward pass.

    unit    train forward      backward function    eval forward
    ------  -----------------  -------------------  -----------------
    STE     H(x)               x (identity)         H(x)
    DRU     sigmoid(x + n)     sigmoid(x + n)       H(x)
    GS      2-way gumbel       the same softmax     gumbel-max sample
            softmax, bit 0
    ST-DRU  H(x + n)           sigmoid(x + n)       H(x)
    ST-GS   gumbel-max sample  the GS softmax       gumbel-max sample

with H the heaviside step (H(0) = 1 by convention), n Gaussian noise of
standard deviation ``sigma_g``, and the gumbel pair (g1, g2) entering the
two-class softmax over class probabilities (sigmoid(x), 1 - sigmoid(x))
at temperature ``tau_gs``. Noise is always drawn by the caller and passed
in, so every output is reproducible and unit-testable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import GraphValue

# sigmoid outputs are clamped to this range before taking logs
CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7


class DiscretizerKind(enum.Enum):
    DRU = "dru"
    STE = "ste"
    GS = "gs"
    ST_DRU = "st-dru"
    ST_GS = "st-gs"

    @classmethod
    def from_name(cls, name: str) -> "DiscretizerKind":
        try:
            return cls(name.lower().replace("_", "-"))
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown discretizer {name!r}; expected one of {valid}") from None


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class DiscretizerConfig:
    kind: DiscretizerKind
    sigma_g: float = 2.0
    tau_gs: float = 1.0
    mode: Mode = Mode.TRAIN

    def __post_init__(self):
        if self.sigma_g < 0:
            raise ValueError(f"sigma_g must be >= 0, got {self.sigma_g}")
        if self.tau_gs <= 0:
            raise ValueError(f"tau_gs must be > 0, got {self.tau_gs}")

    def with_mode(self, mode: Mode) -> "DiscretizerConfig":
        return replace(self, mode=mode)


@dataclass
class NoiseDraw:
    """Per-bit noise: Gaussian ``n`` and/or a Gumbel pair ``(g1, g2)``.

    Fields not needed by the unit in use may be None. Arrays must match
    the shape of the logits they are applied to.
    """

    gaussian: np.ndarray | None = None
    gumbel1: np.ndarray | None = None
    gumbel2: np.ndarray | None = None


def _needs_gaussian(config: DiscretizerConfig) -> bool:
    return config.kind in (DiscretizerKind.DRU, DiscretizerKind.ST_DRU) and config.mode is Mode.TRAIN


def _needs_gumbel(config: DiscretizerConfig) -> bool:
    return config.kind in (DiscretizerKind.GS, DiscretizerKind.ST_GS)


def _gumbel(rng, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def sample_noise(config: DiscretizerConfig, shape, rng) -> NoiseDraw:
    """Draw exactly the noise the configured unit and mode consume."""
    draw = NoiseDraw()
    if _needs_gaussian(config):
        draw.gaussian = config.sigma_g * rng.standard_normal(shape)
    if _needs_gumbel(config):
        draw.gumbel1 = _gumbel(rng, shape)
        draw.gumbel2 = _gumbel(rng, shape)
    return draw


# ---------------------------------------------------------------------------
# Raw (array-level) forward functions, shared by the graph path and the
# histogram/eval paths so the two are bit-identical.
# ---------------------------------------------------------------------------

def heaviside(v) -> np.ndarray:
    """Step function with H(0) = 1."""
    return np.where(np.asarray(v) >= 0.0, 1.0, 0.0)


def _dsigmoid(v) -> np.ndarray:
    s = ag._sigmoid(np.asarray(v, dtype=np.float64))
    return s * (1.0 - s)


def _gs_logits(x, noise: NoiseDraw, tau: float):
    """The two softmax inputs (log s + g1)/tau and (log(1-s) + g2)/tau."""
    s = np.clip(ag._sigmoid(np.asarray(x, dtype=np.float64)), CLAMP_LO, CLAMP_HI)
    a = (np.log(s) + noise.gumbel1) * (1.0 / tau)
    b = (np.log(1.0 - s) + noise.gumbel2) * (1.0 / tau)
    return a, b


def gs_soft(x, noise: NoiseDraw, tau: float) -> np.ndarray:
    """First component of the two-class gumbel softmax."""
    a, b = _gs_logits(x, noise, tau)
    return ag._sigmoid(a - b)


def gs_soft_dx(x, noise: NoiseDraw, tau: float) -> np.ndarray:
    """d/dx of gs_soft, including the clamp (zero slope where clamped)."""
    x = np.asarray(x, dtype=np.float64)
    s_raw = ag._sigmoid(x)
    inside = (s_raw >= CLAMP_LO) & (s_raw <= CLAMP_HI)
    s = np.clip(s_raw, CLAMP_LO, CLAMP_HI)
    m = gs_soft(x, noise, tau)
    ds = s_raw * (1.0 - s_raw) * inside
    return m * (1.0 - m) / tau * ds * (1.0 / s + 1.0 / (1.0 - s))


def gumbel_max(x, noise: NoiseDraw) -> np.ndarray:
    """Gumbel-max sample of the first class: 1 with probability sigmoid(x)."""
    s = np.clip(ag._sigmoid(np.asarray(x, dtype=np.float64)), CLAMP_LO, CLAMP_HI)
    z1 = np.log(s) + noise.gumbel1
    z2 = np.log(1.0 - s) + noise.gumbel2
    return np.where(z1 >= z2, 1.0, 0.0)


def forward_raw(config: DiscretizerConfig, x, noise: NoiseDraw) -> np.ndarray:
    """Array-level forward pass of the configured unit and mode."""
    kind = config.kind
    if config.mode is Mode.EVAL:
        if kind in (DiscretizerKind.GS, DiscretizerKind.ST_GS):
            return gumbel_max(x, noise)
        return heaviside(x)
    if kind is DiscretizerKind.STE:
        return heaviside(x)
    if kind is DiscretizerKind.DRU:
        return ag._sigmoid(np.asarray(x, dtype=np.float64) + noise.gaussian)
    if kind is DiscretizerKind.ST_DRU:
        return heaviside(np.asarray(x) + noise.gaussian)
    if kind is DiscretizerKind.GS:
        return gs_soft(x, noise, config.tau_gs)
    return gumbel_max(x, noise)  # ST_GS


def _check_noise(config: DiscretizerConfig, x: np.ndarray, noise: NoiseDraw):
    if _needs_gaussian(config) and (noise.gaussian is None or np.shape(noise.gaussian) != x.shape):
        raise ValueError(f"{config.kind.value} needs Gaussian noise of shape {x.shape}")
    if _needs_gumbel(config):
        for g in (noise.gumbel1, noise.gumbel2):
            if g is None or np.shape(g) != x.shape:
                raise ValueError(f"{config.kind.value} needs a Gumbel pair of shape {x.shape}")


# ---------------------------------------------------------------------------
# Graph-level discretization
# ---------------------------------------------------------------------------

def discretize(config: DiscretizerConfig, x: GraphValue, noise: NoiseDraw) -> GraphValue:
    """Apply the configured unit to per-bit logits ``x``.

    In train mode the result is a graph node whose backward pass follows
    the unit's declared backward function. In eval mode the result is a
    constant leaf (no gradient ever flows through an eval-mode unit).
    """
    if not np.isfinite(x.value).all():
        raise ValueError("discretize: logits contain non-finite values")
    _check_noise(config, x.value, noise)

    if config.mode is Mode.EVAL:
        return GraphValue(forward_raw(config, x.value, noise))

    kind = config.kind
    if kind is DiscretizerKind.STE:
        return ag.custom_op(heaviside, lambda g, v: (g,), x)

    if kind is DiscretizerKind.DRU:
        return ag.sigmoid(ag.shift(x, noise.gaussian))

    if kind is DiscretizerKind.ST_DRU:
        n = noise.gaussian
        return ag.custom_op(
            lambda v: heaviside(v + n),
            lambda g, v: (g * _dsigmoid(v + n),),
            x,
        )

    if kind is DiscretizerKind.GS:
        s = ag.clamp(ag.sigmoid(x), CLAMP_LO, CLAMP_HI)
        one_minus = ag.shift(ag.scale(s, -1.0), 1.0)
        a = ag.shift(ag.log(s), noise.gumbel1)
        b = ag.shift(ag.log(one_minus), noise.gumbel2)
        return ag.sigmoid(ag.scale(ag.sub(a, b), 1.0 / config.tau_gs))

    # ST_GS: hard gumbel-max sample forward, softmax gradient backward
    tau = config.tau_gs
    return ag.custom_op(
        lambda v: gumbel_max(v, noise),
        lambda g, v: (g * gs_soft_dx(v, noise, tau),),
        x,
    )


def discretize_backward(config: DiscretizerConfig, x, noise: NoiseDraw, upstream):
    """Gradient of the unit's declared backward function at ``x``.

    Only meaningful in train mode; eval-mode units never pass gradients.
    """
    if config.mode is Mode.EVAL:
        raise ValueError("discretize_backward: unit is in eval mode")
    x = np.asarray(x, dtype=np.float64)
    _check_noise(config, x, noise)
    upstream = np.asarray(upstream, dtype=np.float64)
    kind = config.kind
    if kind is DiscretizerKind.STE:
        return upstream * np.ones_like(x)
    if kind in (DiscretizerKind.DRU, DiscretizerKind.ST_DRU):
        return upstream * _dsigmoid(x + noise.gaussian)
    return upstream * gs_soft_dx(x, noise, config.tau_gs)


# ---------------------------------------------------------------------------
# Response histograms (the diagnostic behind the unit-response figures)
# ---------------------------------------------------------------------------

@dataclass
class ResponseHistogram:
    """Empirical output distribution of a unit at one input value."""

    x: float
    mode: Mode
    samples: int
    bin_edges: np.ndarray  # fixed bins spanning [0, 1]
    counts: np.ndarray
    frac_zero: float  # mass exactly at 0.0
    frac_one: float  # mass exactly at 1.0


def response_histogram(
    config: DiscretizerConfig, x: float, samples: int, rng, bins: int = 50
) -> ResponseHistogram:
    """Distribution of unit outputs at logit ``x`` with fresh noise per sample."""
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    xs = np.full(samples, float(x))
    noise = sample_noise(config, xs.shape, rng)
    out = forward_raw(config, xs, noise)
    counts, edges = np.histogram(out, bins=bins, range=(0.0, 1.0))
    return ResponseHistogram(
        x=float(x),
        mode=config.mode,
        samples=samples,
        bin_edges=edges,
        counts=counts,
        frac_zero=float((out == 0.0).mean()),
        frac_one=float((out == 1.0).mean()),
    )
