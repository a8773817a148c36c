"""Lateral circuits: streaming Hebbian subspace extraction and trace projection.

Each projected layer hosts one circuit. The circuit holds two banks of
subspace neurons over the layer's presynaptic space:

* consolidated rows ``H`` — frozen; they project activity traces through the
  skew-symmetric loop  y = H x,  x_minus = -H^T y,  x_hat = x + x_minus,
  so weight updates vanish on directions used by earlier tasks;
* in-training rows ``H_new`` — updated by the two-stage Hebbian/anti-Hebbian
  rule  dH' = y' x^T + y' x_tilde^T  with the integrated return signal
  x_tilde from both banks, which drives ``H_new`` toward the principal
  subspace of the current input stream that is not already covered by ``H``.

With no consolidated rows the rule reduces exactly to the Oja subspace form
dH = eta (y x^T - y y^T H).

In spiking mode the subspace neuron outputs are burst-rate quantized before
the return path, emulating lateral neurons that communicate through short
high-frequency bursts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, kaiming_uniform_init

# Fresh-row init scale: small enough for stable Hebbian transients, large
# enough that rows reach unit norm (and mutual orthogonality) within one
# online epoch. Consolidated projections are unaffected by it either way.
INIT_SCALE = 0.5


@dataclass
class QuantConfig:
    """Burst-rate quantizer settings for spiking-mode subspace neurons."""

    scale: float = 20.0
    T_l: int = 40

    def __post_init__(self) -> None:
        if self.scale <= 0.0:
            raise ValueError(f"quantizer scale must be positive, got {self.scale}")
        if self.T_l < 1:
            raise ValueError(f"burst steps T_l must be >= 1, got {self.T_l}")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # np.round rounds ties to even; the burst argument wants ties away from zero.
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_subspace_output(y: np.ndarray, q: QuantConfig) -> np.ndarray:
    """Quantize subspace-neuron output onto the T_l-level burst-rate grid.

    y_hat = scale * round(clamp(y, -scale, scale) / scale * T_l) / T_l,
    with ties rounded away from zero. As T_l grows this converges to the
    plain clamp.
    """
    y = np.asarray(y, dtype=np.float64)
    clipped = np.clip(y, -q.scale, q.scale)
    return q.scale * _round_half_away(clipped / q.scale * q.T_l) / q.T_l


@dataclass
class LateralSubspace:
    """Subspace-neuron bank for one layer: consolidated ``H`` plus ``H_new``.

    ``H`` has shape (k, n), ``H_new`` (k', n), where n is the presynaptic
    width of the host layer. Hebbian learning only ever touches ``H_new``;
    projection only ever reads ``H``.
    """

    n: int
    H: np.ndarray = None  # type: ignore[assignment]
    H_new: np.ndarray = None  # type: ignore[assignment]
    eta: float = 0.01
    momentum: float = 0.9
    K: int = 5
    velocity: np.ndarray = None  # type: ignore[assignment]
    mode: str = "linear"  # "linear" | "spiking"
    quant: QuantConfig = field(default_factory=QuantConfig)
    stabilize: bool = False

    def __post_init__(self) -> None:
        if self.H is None:
            self.H = np.zeros((0, self.n))
        if self.H_new is None:
            self.H_new = np.zeros((0, self.n))
        if self.velocity is None:
            self.velocity = np.zeros_like(self.H_new)
        if self.mode not in ("linear", "spiking"):
            raise ValueError(f"unknown lateral mode {self.mode!r}")
        for name, m in (("H", self.H), ("H_new", self.H_new)):
            if m.shape[1] != self.n:
                raise ShapeError(f"{name} width {m.shape[1]} != presynaptic width {self.n}")

    @property
    def k(self) -> int:
        return self.H.shape[0]

    @property
    def k_new(self) -> int:
        return self.H_new.shape[0]

    def _out(self, y: np.ndarray) -> np.ndarray:
        if self.mode == "spiking":
            return quantize_subspace_output(y, self.quant)
        return y

    def project_trace(self, x: np.ndarray) -> np.ndarray:
        """Project activity traces off the consolidated subspace.

        Accepts a single trace (n,) or a batch (rows, n) and returns
        x_hat = x - H^T (H x) row-wise (with the subspace-neuron output
        quantized first in spiking mode). With no consolidated rows this is
        the identity.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n:
            raise ShapeError(f"trace width {x.shape[-1]} != presynaptic width {self.n}")
        if self.k == 0:
            return x.copy()
        y = self._out(x @ self.H.T)
        return x - y @ self.H

    def lateral_response(
        self, x: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Full circuit response (y, x_minus, y_new, x_minus_new, x_tilde).

        y / x_minus come from the consolidated bank, y_new / x_minus_new from
        the in-training bank, and x_tilde = x_minus + x_minus_new is the
        integrated postsynaptic return signal driving Hebbian learning.
        """
        x = np.asarray(x, dtype=np.float64)
        y = self._out(x @ self.H.T) if self.k else np.zeros(x.shape[:-1] + (0,))
        x_minus = -(y @ self.H) if self.k else np.zeros_like(x)
        if self.k_new:
            y_new = self._out(x @ self.H_new.T)
            x_minus_new = -(y_new @ self.H_new)
        else:
            y_new = np.zeros(x.shape[:-1] + (0,))
            x_minus_new = np.zeros_like(x)
        return y, x_minus, y_new, x_minus_new, x_minus + x_minus_new

    def hebbian_update(self, x_batch: np.ndarray) -> None:
        """Run K two-stage Hebbian updates of ``H_new`` on one batch.

        Each repeat recomputes the circuit responses with the current
        weights, averages dH' = y' x^T + y' x_tilde^T over the batch rows,
        folds it into the momentum buffer, and applies it. Consolidated
        rows are untouched.

        The constant-step rule is only stable while the per-update spectral
        step eta/(1-momentum) * lambda_max(input second moment) stays below
        roughly 6 (it diverges beyond that; the fixed point itself, an
        orthonormal basis of the dominant subspace, is scale invariant).
        With ``stabilize`` the update is damped whenever the batch's mean
        squared row norm (an upper bound on lambda_max) exceeds the budget
        4 * (1-momentum) / eta, which keeps wide, high-activity layers such
        as conv patch spaces inside the stable region without touching the
        signal scale the burst quantizer sees.
        """
        if self.k_new == 0:
            return
        x = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
        if x.shape[1] != self.n:
            raise ShapeError(f"batch width {x.shape[1]} != presynaptic width {self.n}")
        rows = x.shape[0]
        gain = 1.0
        if self.stabilize:
            energy = float(np.mean(np.sum(x * x, axis=1)))
            cap = 4.0 * (1.0 - self.momentum) / self.eta
            if energy > cap:
                gain = cap / energy
        for _ in range(self.K):
            _, _, y_new, _, x_tilde = self.lateral_response(x)
            delta = gain * (y_new.T @ x + y_new.T @ x_tilde) / rows
            self.velocity = self.momentum * self.velocity + delta
            self.H_new = self.H_new + self.eta * self.velocity

    def expand(self, k_add: int, rng: np.random.Generator) -> None:
        """Grow the in-training bank by ``k_add`` small random rows.

        New rows are Kaiming-uniform scaled by 0.1; the momentum buffer is
        reset to match the new shape. Projection is unaffected since it only
        reads consolidated rows.
        """
        if k_add < 0:
            raise ValueError(f"k_add must be >= 0, got {k_add}")
        if k_add == 0:
            return
        fresh = INIT_SCALE * kaiming_uniform_init(k_add, self.n, fan_in=self.n, rng=rng)
        self.H_new = np.vstack([self.H_new, fresh])
        self.velocity = np.zeros_like(self.H_new)

    def consolidate(self) -> None:
        """Freeze the in-training rows into the consolidated bank."""
        if self.k_new:
            self.H = np.vstack([self.H, self.H_new])
        self.H_new = np.zeros((0, self.n))
        self.velocity = np.zeros((0, self.n))
