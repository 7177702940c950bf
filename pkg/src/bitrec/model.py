"""Core data types for multi-channel binary recovery problems.

A measurement set holds L channels y^(l) = Phi^(l) x + n^(l) that share the
same unknown binary vector x of length N and the same per-channel measurement
count M.  Types are immutable (frozen dataclasses over read-only arrays) and
the operations here are pure.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    LengthMismatch,
    NonFinite,
    NonPositivePrecision,
)


def _readonly(a, dtype=np.float64):
    out = np.array(a, dtype=dtype, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Channel:
    """One measurement channel: sensing matrix, data vector, optional known
    noise precision (None means the precision must be estimated)."""

    phi: np.ndarray
    y: np.ndarray
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "phi", _readonly(self.phi))
        object.__setattr__(self, "y", _readonly(self.y))
        if self.beta is not None:
            object.__setattr__(self, "beta", float(self.beta))


@dataclass(frozen=True)
class MeasurementSet:
    """L channels sharing N (unknowns) and M (measurements per channel).

    Construction does not validate -- call validate() explicitly, so that
    deliberately malformed sets can exist long enough to be rejected by it
    (and by the serializers).
    """

    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def l_channels(self):
        return len(self.channels)

    @property
    def m(self):
        return int(self.channels[0].phi.shape[0])

    @property
    def n(self):
        return int(self.channels[0].phi.shape[1])

    @property
    def betas(self):
        return tuple(ch.beta for ch in self.channels)


def measurement_set(phis, ys, betas=None):
    """Convenience constructor from parallel lists of arrays."""
    if betas is None:
        betas = [None] * len(phis)
    return MeasurementSet(
        tuple(Channel(p, y, b) for p, y, b in zip(phis, ys, betas))
    )


def validate(ms):
    """Check a MeasurementSet's structural invariants.

    Raises DimensionMismatch / NonFinite / NonPositivePrecision; returns the
    set unchanged on success so calls can be chained.
    """
    if ms.l_channels < 1:
        raise DimensionMismatch("a measurement set needs at least one channel")
    first = ms.channels[0]
    if first.phi.ndim != 2:
        raise DimensionMismatch(
            f"phi must be 2-D, got ndim={first.phi.ndim}"
        )
    m, n = first.phi.shape
    if m < 1 or n < 1:
        raise DimensionMismatch(f"phi must be nonempty, got shape {(m, n)}")
    for l, ch in enumerate(ms.channels):
        if ch.phi.ndim != 2 or ch.phi.shape != (m, n):
            raise DimensionMismatch(
                f"channel {l}: phi shape {ch.phi.shape} != {(m, n)}"
            )
        if ch.y.ndim != 1 or ch.y.shape[0] != m:
            raise DimensionMismatch(
                f"channel {l}: y length {ch.y.shape} != M={m}"
            )
        if not np.isfinite(ch.phi).all() or not np.isfinite(ch.y).all():
            raise NonFinite(f"channel {l}: non-finite entries")
        if ch.beta is not None:
            if not np.isfinite(ch.beta) or ch.beta <= 0.0:
                raise NonPositivePrecision(
                    f"channel {l}: beta={ch.beta} must be finite and > 0"
                )
    return ms


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters shared by the three recovery algorithms.

    a, b       Beta prior on the per-entry activation probabilities
    c, d       Gamma prior on the noise precisions (near-zero: vague)
    beta0      initial noise precision for EM-style loops
    epsilon_c  multiplier in the residual bound epsilon = c_eps * sqrt(M L)
    threshold  support threshold on the relaxed solution (strict >)
    """

    a: float = 1.0
    b: float = 10.0
    c: float = 1e-6
    d: float = 1e-6
    beta0: float = 1.0
    epsilon_c: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Beta prior needs a > 0 and b > 0")
        if self.c < 0 or self.d < 0:
            raise ValueError("Gamma prior needs c >= 0 and d >= 0")
        if not (np.isfinite(self.beta0) and self.beta0 > 0):
            raise NonPositivePrecision(f"beta0={self.beta0} must be > 0")
        if not self.epsilon_c > 0:
            raise ValueError("epsilon_c must be > 0")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")


@dataclass(frozen=True)
class RecoveryResult:
    """Output of a recovery algorithm.

    x_hat lives in [0,1]^N; support is the strict-threshold index set;
    beta_hat holds one precision per channel (estimated or known);
    objective_trace is algorithm-specific (outer objective / ELBO per sweep).
    """

    x_hat: np.ndarray
    support: tuple
    beta_hat: tuple
    iterations: int
    objective_trace: tuple = field(default_factory=tuple)
    converged: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x_hat", _readonly(self.x_hat))
        object.__setattr__(self, "support", tuple(int(j) for j in self.support))
        object.__setattr__(self, "beta_hat", tuple(float(b) for b in self.beta_hat))
        object.__setattr__(self, "objective_trace", tuple(self.objective_trace))


def support_of(x_hat, threshold=0.5):
    """Indices with x_hat[j] strictly above threshold."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    return tuple(int(j) for j in np.nonzero(x_hat > threshold)[0])


def make_result(x_hat, beta_hat, iterations, objective_trace=(),
                converged=False, threshold=0.5):
    return RecoveryResult(
        x_hat=x_hat,
        support=support_of(x_hat, threshold),
        beta_hat=tuple(beta_hat),
        iterations=int(iterations),
        objective_trace=tuple(float(v) for v in objective_trace),
        converged=bool(converged),
    )


def iou(u, v):
    """Intersection-over-union of the supports of two equal-length binary
    vectors.  Both supports empty counts as perfect agreement (1.0)."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise LengthMismatch(f"shapes {u.shape} and {v.shape} differ")
    su = u != 0
    sv = v != 0
    union = np.count_nonzero(su | sv)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(su & sv) / union)
