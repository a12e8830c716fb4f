"""Flow layers and their composition.

Every layer maps S^(D-1) to itself and reports log Jacobians in both
directions:

* ``forward(x) -> (y, log|J(x)|)``
* ``inverse(y) -> (x, -log|J(x)|)``

so that ``log p_out(y) = log p_in(x) + (inverse log term)``.

A :class:`FlowChain` stores its layers in the order a composition is written,
``[L_1, L_2, ..., L_k]`` meaning ``L_1 o L_2 o ... o L_k``: the last entry
acts first on base samples and the first entry is undone first when
evaluating densities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .linear_project import LPParams, lp_forward, lp_forward_log_det, lp_inverse, lp_log_density_update
from .sphere import Rotation, as_points, uniform_log_density, uniform_sample
from .zoom import ZoomParams, log_norm_ratio, zoom_forward, zoom_inverse


@dataclass(frozen=True, eq=False)
class ZoomLayer:
    params: ZoomParams
    kind = "zoom"

    @property
    def dim(self) -> int:
        return self.params.dim

    def _log_jac_at_output(self, y):
        # log|J| of the zoom at x only depends on y_D = h(x_D)
        return log_norm_ratio(self.params.kappa, self.params.dim) - self.params.kappa * y[..., -1]

    def forward(self, x):
        y = zoom_forward(x, self.params)
        return y, self._log_jac_at_output(y)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        return zoom_inverse(y, self.params), -self._log_jac_at_output(y)


@dataclass(frozen=True, eq=False)
class LinearProjectLayer:
    params: LPParams
    kind = "linear_project"

    @property
    def dim(self) -> int:
        return self.params.dim

    def forward(self, x):
        return lp_forward(x, self.params), lp_forward_log_det(x, self.params)

    def inverse(self, y):
        return lp_inverse(y, self.params), lp_log_density_update(y, self.params)


@dataclass(frozen=True, eq=False)
class RotationLayer:
    rotation: Rotation
    kind = "rotation"

    @property
    def dim(self) -> int:
        return self.rotation.dim

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        return self.rotation.apply(x), np.zeros(x.shape[:-1])

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        return self.rotation.apply_inverse(y), np.zeros(y.shape[:-1])


Layer = Union[ZoomLayer, LinearProjectLayer, RotationLayer]


@dataclass(frozen=True, eq=False)
class FlowChain:
    """Composition of layers over the uniform base distribution.

    ``layers`` is in written order: ``layers[-1]`` is applied first to base
    samples.
    """

    dim: int
    layers: tuple = ()

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")
        layers = tuple(self.layers)
        for layer in layers:
            if layer.dim != self.dim:
                raise ValueError(f"layer {layer.kind} has dimension {layer.dim}, chain has {self.dim}")
        object.__setattr__(self, "layers", layers)

    def __len__(self) -> int:
        return len(self.layers)

    def forward(self, x_base):
        """Push base-space points through the chain."""
        return self.forward_with_log_det(x_base)[0]

    def forward_with_log_det(self, x_base):
        x = np.asarray(x_base, dtype=float)
        total = np.zeros(x.shape[:-1])
        for layer in reversed(self.layers):
            x, ld = layer.forward(x)
            total = total + ld
        return x, total

    def inverse(self, y):
        """Map target-space points back to the base space."""
        return self.inverse_with_log_det(y)[0]

    def inverse_with_log_det(self, y):
        y = np.asarray(y, dtype=float)
        total = np.zeros(y.shape[:-1])
        for layer in self.layers:
            y, ld = layer.inverse(y)
            total = total + ld
        return y, total

    def log_prob(self, x):
        """Exact log density at target-space points."""
        x = as_points(x, self.dim)
        _, total = self.inverse_with_log_det(x)
        out = total + uniform_log_density(self.dim)
        return out if np.ndim(out) else float(out)

    def sample(self, rng, n: int):
        """Draw ``n`` points and their log densities (no rejection step)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        base = uniform_sample(rng, self.dim, n)
        y, total = self.forward_with_log_det(base)
        return y, uniform_log_density(self.dim) - total

    def reversed_order(self) -> "FlowChain":
        """Same layers composed in the opposite order (not the inverse flow)."""
        return FlowChain(self.dim, self.layers[::-1])
