"""Problem datum: a finite-state controlled chain with Brownian observation.

A :class:`ControlModel` collects the state count, the finite control grid,
the piecewise-constant-in-time coefficient tables (rates ``q``, observation
drift ``h``, running reward ``f``), the terminal reward ``g``, and either a
finite horizon or a discount rate.  All other modules consume a *validated*
model, whose rate diagonal is derived from the off-diagonal entries and whose
entries respect the declared bounds.

Conventions
-----------
* States are indexed ``0 .. N-1`` throughout the Python API.  JSON documents
  and CSV dumps use 1-based state labels; the conversion happens at the file
  boundary.
* Internal table layouts: ``q[a, kn, i, j]`` (rate from ``i`` to ``j`` under
  control ``a`` on time-knot ``kn``), ``h[a, kn, i, :]`` (d-vector),
  ``f[a, kn, i]``, ``g[i]``.
* Coefficients are constant on ``[knot[k], knot[k+1])``; the last knot
  extends to the horizon (or forever).
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BoundViolation,
    InconsistentHorizon,
    IntensityTooSmall,
    NegativeRate,
)

#: slack applied to the default thinning intensity N*max(q)
DEFAULT_INTENSITY_SLACK = 1.1


def _frozen(arr, dtype=float):
    out = np.ascontiguousarray(np.asarray(arr, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ControlModel:
    """Immutable problem datum shared by every other module.

    Use :func:`validate_model` (or :func:`load_model`) to obtain a checked
    instance; the constructor itself stores the tables as given.
    """

    n_states: int
    d_obs: int
    controls: tuple            # ordered control labels
    time_knots: np.ndarray     # increasing, first entry 0.0
    q: np.ndarray              # (A, Kn, N, N), diagonal derived after validation
    h: np.ndarray              # (A, Kn, N, d)
    f: np.ndarray              # (A, Kn, N)
    g: np.ndarray              # (N,)
    horizon: float | None = None
    discount: float | None = None
    k0: float | None = None
    k_intensity: float | None = None
    validated: bool = field(default=False, compare=False)

    @property
    def n_controls(self):
        return len(self.controls)

    @property
    def n_knots(self):
        return len(self.time_knots)

    def knot_index(self, t):
        """Index of the knot whose interval contains time ``t``.

        Works on scalars and arrays; times before the first knot clamp to 0,
        times beyond the last knot use the last interval.
        """
        idx = np.searchsorted(self.time_knots, t, side="right") - 1
        return np.clip(idx, 0, self.n_knots - 1)

    def q_at(self, a_idx, t):
        """Rate matrix (N, N) under control index ``a_idx`` at time ``t``."""
        return self.q[a_idx, self.knot_index(t)]

    def h_at(self, a_idx, t):
        """Observation drift table (N, d) at (control, time)."""
        return self.h[a_idx, self.knot_index(t)]

    def f_at(self, a_idx, t):
        """Running reward vector (N,) at (control, time)."""
        return self.f[a_idx, self.knot_index(t)]

    def control_index(self, label):
        try:
            return self.controls.index(label)
        except ValueError:
            raise KeyError(f"unknown control label {label!r}") from None

    def max_offdiag_rate(self):
        mask = ~np.eye(self.n_states, dtype=bool)
        return float(self.q[:, :, mask].max()) if mask.any() else 0.0


def _check_shapes(m):
    a, kn, n, d = m.n_controls, m.n_knots, m.n_states, m.d_obs
    expected = {"q": (a, kn, n, n), "h": (a, kn, n, d), "f": (a, kn, n), "g": (n,)}
    for name, shape in expected.items():
        got = getattr(m, name).shape
        if got != shape:
            raise ValueError(f"table {name} has shape {got}, expected {shape}")


def _entry_name(name, a, kn, i, j=None):
    # 1-based state labels in messages, matching the file convention
    loc = f"control={a}, knot={kn}, i={i + 1}"
    if j is not None:
        loc += f", j={j + 1}"
    return f"{name}[{loc}]"


def validate_model(raw):
    """Check the invariants of a candidate model and return the usable datum.

    The returned model has its rate diagonal recomputed as the negative
    off-diagonal row sum; the candidate's diagonal entries are ignored.
    Missing ``k0`` defaults to the largest entry magnitude, missing
    ``k_intensity`` to ``N * max(q)`` with 10% slack.

    Raises
    ------
    NegativeRate, BoundViolation, IntensityTooSmall, InconsistentHorizon
    """
    if raw.n_states < 2:
        raise ValueError("n_states must be at least 2")
    if raw.d_obs < 1:
        raise ValueError("d_obs must be at least 1")
    _check_shapes(raw)
    knots = np.asarray(raw.time_knots, dtype=float)
    if knots.ndim != 1 or len(knots) < 1 or knots[0] != 0.0:
        raise ValueError("time_knots must start at 0.0")
    if np.any(np.diff(knots) <= 0):
        raise ValueError("time_knots must be strictly increasing")

    if (raw.horizon is None) == (raw.discount is None):
        raise InconsistentHorizon(
            "exactly one of horizon (finite) and discount (infinite) must be set"
        )
    if raw.discount is not None:
        if raw.discount <= 0:
            raise InconsistentHorizon("discount must be positive")
        if len(knots) != 1:
            raise InconsistentHorizon(
                "infinite-horizon models must be time-independent (a single knot)"
            )
    if raw.horizon is not None and raw.horizon <= 0:
        raise InconsistentHorizon("horizon must be positive")

    n = raw.n_states
    off = ~np.eye(n, dtype=bool)
    q = np.array(raw.q, dtype=float)
    neg = q[:, :, off] < 0
    if neg.any():
        a, kn, flat = np.argwhere(neg)[0]
        i, j = np.argwhere(off)[flat]
        raise NegativeRate(
            f"{_entry_name('q', a, kn, i, j)} = {q[a, kn, i, j]} is negative"
        )
    # diagonal is derived, never read
    q[:, :, ~off] = 0.0
    q[:, :, np.arange(n), np.arange(n)] = -q.sum(axis=3)

    max_q = float(q[:, :, off].max()) if off.any() else 0.0
    k0 = raw.k0
    if k0 is None:
        k0 = max(
            max_q,
            float(np.abs(raw.h).max()),
            float(np.abs(raw.f).max()),
            float(np.abs(raw.g).max()),
        )
    for name, table in (("q", q[:, :, off]), ("h", raw.h), ("f", raw.f)):
        bad = np.abs(table) > k0
        if bad.any():
            idx = np.unravel_index(np.abs(table).argmax(), table.shape)
            raise BoundViolation(
                f"table {name} entry {table[idx]} exceeds the bound K0 = {k0}"
            )
    if np.any(np.abs(raw.g) > k0):
        i = int(np.abs(raw.g).argmax())
        raise BoundViolation(f"g[i={i + 1}] = {raw.g[i]} exceeds the bound K0 = {k0}")

    k = raw.k_intensity
    if k is None:
        # rate-free models still need a positive dominating intensity
        k = DEFAULT_INTENSITY_SLACK * n * max_q if max_q > 0 else 1.0
    if k < n * max_q or k <= 0:
        raise IntensityTooSmall(
            f"thinning intensity K = {k} is below N*max(q) = {n * max_q}"
        )

    return replace(
        raw,
        time_knots=_frozen(knots),
        q=_frozen(q),
        h=_frozen(raw.h),
        f=_frozen(raw.f),
        g=_frozen(raw.g),
        k0=float(k0),
        k_intensity=float(k),
        validated=True,
    )


def reward_from_jump_costs(ell, model):
    """Convert a per-jump cost table into an equivalent running reward.

    ``ell[a, kn, i, j]`` is the reward collected when the chain jumps from
    ``i`` to ``j`` under control ``a`` on knot ``kn``; the equivalent rate is
    ``f(i, a, t) = sum_{j != i} ell(i, j, a, t) q(a, t, i, j)``.

    Returns
    -------
    (f_table, k0_new)
        The running-reward table with layout ``(A, Kn, N)`` and the smallest
        bound constant that covers the model together with the new table.
    """
    if not model.validated:
        raise ValueError("model must be validated first")
    ell = np.asarray(ell, dtype=float)
    if ell.shape != model.q.shape:
        raise ValueError(f"ell must have shape {model.q.shape}, got {ell.shape}")
    n = model.n_states
    off = ~np.eye(n, dtype=bool)
    f_table = np.where(off, ell * model.q, 0.0).sum(axis=3)
    k0_new = max(model.k0, float(np.abs(f_table).max()))
    return f_table, k0_new


# -- JSON document boundary --------------------------------------------------
#
# File layout (states 1-based in meaning, arrays positional):
#   q: [control][knot][i][j]   diagonal entries in the file are ignored
#   h: [i][control][knot][k]
#   f: [i][control][knot]
#   g: [i]

def model_from_dict(doc):
    """Build and validate a model from a parsed JSON document."""
    n = int(doc["n_states"])
    d = int(doc["d_obs"])
    controls = tuple(doc["controls"])
    knots = np.asarray(doc["time_knots"], dtype=float)
    q = np.asarray(doc["q"], dtype=float)
    h = np.transpose(np.asarray(doc["h"], dtype=float), (1, 2, 0, 3))
    f = np.transpose(np.asarray(doc["f"], dtype=float), (1, 2, 0))
    g = np.asarray(doc["g"], dtype=float) if "g" in doc else np.zeros(n)
    raw = ControlModel(
        n_states=n,
        d_obs=d,
        controls=controls,
        time_knots=knots,
        q=q,
        h=h,
        f=f,
        g=g,
        horizon=doc.get("horizon"),
        discount=doc.get("discount"),
        k0=doc.get("k0"),
        k_intensity=doc.get("k_intensity"),
    )
    return validate_model(raw)


def model_to_dict(model):
    """Inverse of :func:`model_from_dict` (diagonal of ``q`` written as 0)."""
    n = model.n_states
    q = np.array(model.q)
    q[:, :, np.arange(n), np.arange(n)] = 0.0
    doc = {
        "n_states": model.n_states,
        "d_obs": model.d_obs,
        "controls": list(model.controls),
        "time_knots": model.time_knots.tolist(),
        "q": q.tolist(),
        "h": np.transpose(model.h, (2, 0, 1, 3)).tolist(),
        "f": np.transpose(model.f, (2, 0, 1)).tolist(),
        "g": model.g.tolist(),
        "k0": model.k0,
        "k_intensity": model.k_intensity,
    }
    if model.horizon is not None:
        doc["horizon"] = model.horizon
    if model.discount is not None:
        doc["discount"] = model.discount
    return doc


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")
