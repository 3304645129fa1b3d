"""Actuation by rewriting the rod's natural curvature and twist.

A policy action is a low-dimensional vector in [-1, 1] attached to C
control points placed over the interior nodes. Each control step the
action, scaled by delta_limit, is accumulated into per-node natural
curvature targets (and natural twist targets in the twist mode),
spatially smoothed and clamped to kappa_bound; the simulator then ramps
the rest targets linearly over the control period's substeps.

Modes and action layout (C control points):
  bend2d       (C,)  components 0..C-1 -> delta kappa_bar_1
  bend3d       (2C,) first C -> delta kappa_bar_1, next C -> delta kappa_bar_2
  bend3d_twist (3C,) adds a final C -> delta psi_bar

For a rod built along +x with the default frame seeding, kappa_bar_1
curves the rod in the x-z (gravity) plane and kappa_bar_2 in x-y.

Spatial smoothing: each control point owns the interior nodes nearest to
it (ties to the lower control point); inside a region the delta is
distributed with a triangular weight peaking at the control node and
reaching zero just outside the region, normalized to preserve the sum.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidParameterError

MODES = ("bend2d", "bend3d", "bend3d_twist")


@dataclass
class ControlConfig:
    n_control_points: int = 5
    mode: str = "bend3d"
    delta_limit: float = 0.1
    kappa_bound: float = 2.0
    control_period: int = 2

    def __post_init__(self):
        if self.n_control_points < 1:
            raise InvalidParameterError("need at least one control point")
        if self.mode not in MODES:
            raise InvalidParameterError(
                f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.delta_limit > 0.0:
            raise InvalidParameterError("delta_limit must be positive")
        if not self.kappa_bound > 0.0:
            raise InvalidParameterError("kappa_bound must be positive")
        if self.control_period < 1:
            raise InvalidParameterError("control_period must be >= 1")

    @property
    def action_dim(self) -> int:
        return self.n_control_points * {
            "bend2d": 1, "bend3d": 2, "bend3d_twist": 3}[self.mode]


@dataclass
class ActuationState:
    """Accumulated natural-shape targets plus the previous control step's."""

    kappa_targets: np.ndarray   # (N-2, 2)
    psi_targets: np.ndarray     # (N-2,)
    prev_kappa: np.ndarray
    prev_psi: np.ndarray
    substep: int = 0

    @classmethod
    def zeros(cls, n_nodes: int) -> "ActuationState":
        n_int = n_nodes - 2
        return cls(np.zeros((n_int, 2)), np.zeros(n_int),
                   np.zeros((n_int, 2)), np.zeros(n_int))

    def copy(self) -> "ActuationState":
        return ActuationState(self.kappa_targets.copy(),
                              self.psi_targets.copy(),
                              self.prev_kappa.copy(), self.prev_psi.copy(),
                              self.substep)


def control_node_indices(n_nodes: int, n_points: int) -> np.ndarray:
    """Control-point node indices, rounded from even spacing over interiors."""
    if n_points > n_nodes - 2:
        raise InvalidParameterError(
            f"{n_points} control points but only {n_nodes - 2} interior nodes")
    idx = np.rint(np.linspace(1, n_nodes - 2, n_points)).astype(np.int64)
    if np.unique(idx).size != n_points:
        raise InvalidParameterError("control points collide after rounding")
    return idx


@lru_cache(maxsize=16)
def _smoothing(n_nodes: int, n_points: int):
    """(control node indices, (C, N-2) weight matrix, rows summing to 1)."""
    nodes = control_node_indices(n_nodes, n_points)
    interior = np.arange(1, n_nodes - 1)
    # nearest control point, ties to the lower index
    dist = np.abs(interior[:, None] - nodes[None, :])
    owner = np.argmin(dist, axis=1)
    weights = np.zeros((n_points, n_nodes - 2))
    for k in range(n_points):
        members = np.flatnonzero(owner == k)
        lo, hi = interior[members[0]], interior[members[-1]]
        left_span = nodes[k] - lo + 1
        right_span = hi - nodes[k] + 1
        for j in members:
            i = interior[j]
            if i <= nodes[k]:
                weights[k, j] = 1.0 - (nodes[k] - i) / left_span
            else:
                weights[k, j] = 1.0 - (i - nodes[k]) / right_span
        weights[k] /= weights[k].sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def control_weights(n_nodes: int, n_points: int) -> np.ndarray:
    return _smoothing(n_nodes, n_points)[1]


def apply_action(action: np.ndarray, actuation: ActuationState,
                 config: ControlConfig) -> tuple[ActuationState, bool]:
    """Accumulate one control step's deltas into the natural-shape targets.

    Returns (new actuation, clipped) where clipped reports whether any
    action component fell outside [-1, 1] and was clamped.
    """
    action = np.asarray(action, dtype=np.float64).ravel()
    if action.shape != (config.action_dim,):
        raise InvalidParameterError(
            f"action must have shape ({config.action_dim},) for mode "
            f"{config.mode}, got {action.shape}")
    if not np.all(np.isfinite(action)):
        raise InvalidParameterError("action contains non-finite values")
    clipped = bool(np.any(np.abs(action) > 1.0))
    action = np.clip(action, -1.0, 1.0)

    n_int = actuation.kappa_targets.shape[0]
    weights = control_weights(n_int + 2, config.n_control_points)
    c = config.n_control_points
    bound = config.kappa_bound

    new = actuation.copy()
    new.prev_kappa = actuation.kappa_targets.copy()
    new.prev_psi = actuation.psi_targets.copy()

    delta1 = config.delta_limit * action[:c]
    new.kappa_targets[:, 0] = np.clip(
        new.kappa_targets[:, 0] + delta1 @ weights, -bound, bound)
    if config.mode in ("bend3d", "bend3d_twist"):
        delta2 = config.delta_limit * action[c:2 * c]
        new.kappa_targets[:, 1] = np.clip(
            new.kappa_targets[:, 1] + delta2 @ weights, -bound, bound)
    if config.mode == "bend3d_twist":
        delta3 = config.delta_limit * action[2 * c:]
        new.psi_targets = np.clip(
            new.psi_targets + delta3 @ weights, -bound, bound)
    new.substep = 0
    return new, clipped


def interp_targets(actuation: ActuationState, substep: int,
                   config: ControlConfig) -> tuple[np.ndarray, np.ndarray]:
    """Rest targets for one substep of the linear ramp prev -> new."""
    if not 0 <= substep < config.control_period:
        raise InvalidParameterError(
            f"substep {substep} outside [0, {config.control_period})")
    frac = (substep + 1) / config.control_period
    kappa = actuation.prev_kappa + frac * (actuation.kappa_targets
                                           - actuation.prev_kappa)
    psi = actuation.prev_psi + frac * (actuation.psi_targets
                                       - actuation.prev_psi)
    return kappa, psi
