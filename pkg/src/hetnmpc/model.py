"""ODE models: a generic right-hand-side interface and the gantry crane benchmark.

States of the crane are ``[x_c, v_c, x_l, v_l, theta, theta_dot]`` (cart position
and velocity, rope length and its rate, swing angle and its rate); inputs are the
velocity setpoints ``[u_c, u_l]`` of the cart and hoist motors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ModelDomainError

PHYSICAL = "physical"
VERBATIM = "verbatim"


@dataclass(frozen=True)
class OdeModel:
    """Right-hand side ``xdot = rhs(x, u)`` with analytic partial derivatives.

    ``jac_x_pattern``/``jac_u_pattern`` are optional boolean masks of the
    structurally nonzero Jacobian entries. When absent, consumers sample the
    Jacobians to discover the pattern.
    """

    n: int
    m: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_u: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: object = None
    name: str = "ode"
    jac_x_pattern: np.ndarray | None = field(default=None, repr=False)
    jac_u_pattern: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class CraneParams:
    tau_c: float = 0.13
    tau_l: float = 0.07
    gravity: float = 9.81
    sign_convention: str = PHYSICAL
    x_l_min: float = 0.05
    # payload mass; only used by the high-fidelity plant, kept for reference
    mass: float = 0.47

    def __post_init__(self):
        if not (self.tau_c > 0 and self.tau_l > 0 and self.gravity > 0):
            raise ValueError("tau_c, tau_l and gravity must be positive")
        if self.sign_convention not in (PHYSICAL, VERBATIM):
            raise ValueError(f"unknown sign_convention {self.sign_convention!r}")
        if self.x_l_min <= 0:
            raise ValueError("x_l_min must be positive")


def _check_domain(state, params):
    if not state[2] >= params.x_l_min:
        raise ModelDomainError(
            f"rope length x_l={state[2]:.6g} below x_l_min={params.x_l_min:g}"
        )


def crane_dynamics(state, inp, params: CraneParams = CraneParams()) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    inp = np.asarray(inp, dtype=float)
    _check_domain(state, params)
    _, v_c, x_l, v_l, th, om = state
    u_c, u_l = inp
    a_c = (u_c - v_c) / params.tau_c
    a_l = (u_l - v_l) / params.tau_l
    bracket = a_c * np.cos(th) + params.gravity * np.sin(th) + 2.0 * v_l * om
    sgn = -1.0 if params.sign_convention == PHYSICAL else 1.0
    return np.array([v_c, a_c, v_l, a_l, om, sgn * bracket / x_l])


def crane_jacobians(state, inp, params: CraneParams = CraneParams()):
    """Return ``(d f / d state, d f / d input)`` of :func:`crane_dynamics`."""
    state = np.asarray(state, dtype=float)
    inp = np.asarray(inp, dtype=float)
    _check_domain(state, params)
    _, v_c, x_l, v_l, th, om = state
    u_c, _ = inp
    tc, tl, g = params.tau_c, params.tau_l, params.gravity
    sgn = -1.0 if params.sign_convention == PHYSICAL else 1.0
    a_c = (u_c - v_c) / tc
    c, s = np.cos(th), np.sin(th)
    bracket = a_c * c + g * s + 2.0 * v_l * om

    jx = np.zeros((6, 6))
    jx[0, 1] = 1.0
    jx[1, 1] = -1.0 / tc
    jx[2, 3] = 1.0
    jx[3, 3] = -1.0 / tl
    jx[4, 5] = 1.0
    k = sgn / x_l
    jx[5, 1] = k * (-c / tc)
    jx[5, 2] = -sgn * bracket / x_l**2
    jx[5, 3] = k * 2.0 * om
    jx[5, 4] = k * (-a_c * s + g * c)
    jx[5, 5] = k * 2.0 * v_l

    ju = np.zeros((6, 2))
    ju[1, 0] = 1.0 / tc
    ju[3, 1] = 1.0 / tl
    ju[5, 0] = k * c / tc
    return jx, ju


_CRANE_JX_PATTERN = np.zeros((6, 6), dtype=bool)
_CRANE_JX_PATTERN[[0, 1, 2, 3, 4], [1, 1, 3, 3, 5]] = True
_CRANE_JX_PATTERN[5, 1:6] = True
_CRANE_JU_PATTERN = np.zeros((6, 2), dtype=bool)
_CRANE_JU_PATTERN[[1, 3, 5], [0, 1, 0]] = True


def crane_model(params: CraneParams | None = None) -> OdeModel:
    params = params or CraneParams()
    return OdeModel(
        n=6,
        m=2,
        rhs=lambda x, u: crane_dynamics(x, u, params),
        jac_x=lambda x, u: crane_jacobians(x, u, params)[0],
        jac_u=lambda x, u: crane_jacobians(x, u, params)[1],
        params=params,
        name="crane",
        jac_x_pattern=_CRANE_JX_PATTERN.copy(),
        jac_u_pattern=_CRANE_JU_PATTERN.copy(),
    )


def linear_model(a, b) -> OdeModel:
    """Linear time-invariant model ``xdot = a x + b u`` (used for oracles)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] != a.shape[0]:
        b = b.T
    return OdeModel(
        n=a.shape[0],
        m=b.shape[1],
        rhs=lambda x, u: a @ np.asarray(x, float) + b @ np.asarray(u, float),
        jac_x=lambda x, u: a.copy(),
        jac_u=lambda x, u: b.copy(),
        params={"a": a, "b": b},
        name="linear",
        jac_x_pattern=a != 0,
        jac_u_pattern=b != 0,
    )
