"""Irreducible components of a convex-order pair on the line.

The open set where the potential of ``nu`` strictly exceeds that of ``mu``
splits into disjoint open intervals. Martingale mass started inside one
interval stays in its closure, so each interval can be solved on its own
and the pieces glued back together; atoms of ``mu`` outside every
interval do not move.
"""

from dataclasses import dataclass

import numpy as np

from .kernel import KernelError, MartingaleKernel
from .measures import (
    DiscreteMeasure,
    MeasureError,
    convex_order_1d,
    make_measure,
    measure_from_dict,
    measure_to_dict,
    potential,
)

__all__ = ["ConvexOrderError", "Component", "Decomposition", "decompose", "glue"]

GAP_TOL = 1e-9


class ConvexOrderError(MeasureError):
    """The marginals are not in convex order."""


@dataclass(frozen=True, eq=False)
class Component:
    interval: tuple
    mu_k: DiscreteMeasure
    nu_k: DiscreteMeasure
    mass: float

    def contains(self, x):
        lo, hi = self.interval
        return (np.asarray(x) > lo) & (np.asarray(x) < hi)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """``mu = eta + sum_k mass_k mu_k`` and ``nu = eta + sum_k mass_k nu_k``.

    ``eta`` is kept as raw atoms and (sub-probability) weights because its
    total mass may be anything in [0, 1].
    """

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    components: list
    eta_atoms: np.ndarray
    eta_weights: np.ndarray

    @property
    def eta_mass(self):
        return float(self.eta_weights.sum())

    def component_of(self, x):
        """Index of the component whose interval contains ``x``, or -1."""
        for k, c in enumerate(self.components):
            if c.contains(x):
                return k
        return -1

    def to_dict(self):
        return {
            "components": [
                {
                    "interval": [float(c.interval[0]), float(c.interval[1])],
                    "mass": float(c.mass),
                    "mu": measure_to_dict(c.mu_k),
                    "nu": measure_to_dict(c.nu_k),
                }
                for c in self.components
            ],
            "eta": {"atoms": self.eta_atoms.tolist(), "weights": self.eta_weights.tolist()},
        }

    @classmethod
    def from_dict(cls, d, mu, nu):
        comps = [
            Component(tuple(c["interval"]), measure_from_dict(c["mu"]), measure_from_dict(c["nu"]), float(c["mass"]))
            for c in d["components"]
        ]
        return cls(mu, nu, comps, np.asarray(d["eta"]["atoms"], dtype=float), np.asarray(d["eta"]["weights"], dtype=float))


def decompose(mu, nu, tol=GAP_TOL):
    """Split ``(mu, nu)`` into irreducible components.

    Components are the maximal open intervals on which ``u_nu - u_mu``
    exceeds ``tol``. Since both potentials are piecewise linear, the
    endpoints are atoms of ``mu`` or ``nu``, located by the sign of the
    potential gap at consecutive kinks. ``nu``-atoms sitting on an
    endpoint are split between the neighbouring pieces so that each
    component keeps the mass and barycentre of its ``mu`` part.

    Raises
    ------
    ConvexOrderError
        If ``mu`` does not precede ``nu`` in convex order.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise MeasureError("decomposition is only defined on the line")
    if not convex_order_1d(mu, nu, tol=tol):
        raise ConvexOrderError("mu does not precede nu in convex order")
    kinks = np.union1d(mu.x, nu.x)
    gap = potential(nu)(kinks) - potential(mu)(kinks)
    # u_mu bends up at its own atoms, so u_nu - u_mu cannot touch zero at a
    # kink that is not also an atom of nu; a tiny gap there is rounding noise
    inner = (kinks > nu.x[0]) & (kinks < nu.x[-1])
    positive = (gap > tol) | (inner & ~np.isin(kinks, nu.x))

    xm, wm = mu.x, mu.weights
    xn, wn = nu.x, nu.weights
    components = []
    in_component = np.zeros(mu.size, dtype=bool)
    k = 0
    n = kinks.size
    while k < n:
        if not positive[k]:
            k += 1
            continue
        start = k
        while k < n and positive[k]:
            k += 1
        lo = kinks[start - 1] if start > 0 else -np.inf
        hi = kinks[k] if k < n else np.inf
        inside_mu = (xm > lo) & (xm < hi)
        mass = float(wm[inside_mu].sum())
        if mass <= 0.0:
            continue
        mom = float(wm[inside_mu] @ xm[inside_mu])
        inside_nu = (xn > lo) & (xn < hi)
        m0 = mass - float(wn[inside_nu].sum())
        m1 = mom - float(wn[inside_nu] @ xn[inside_nu])
        at_hi = (m1 - lo * m0) / (hi - lo) if np.isfinite(lo) and np.isfinite(hi) else 0.0
        at_lo = m0 - at_hi
        if min(at_lo, at_hi) < -1e-9:
            raise ConvexOrderError(f"inconsistent boundary masses on ({lo}, {hi}): {at_lo}, {at_hi}")
        pts = [xn[inside_nu]]
        wts = [wn[inside_nu]]
        for end, w in ((lo, at_lo), (hi, at_hi)):
            if w > 1e-15 and np.isfinite(end):
                pts.append([end])
                wts.append([w])
        components.append(
            Component(
                interval=(float(lo), float(hi)),
                mu_k=make_measure(xm[inside_mu], wm[inside_mu]),
                nu_k=make_measure(np.concatenate(pts), np.concatenate(wts)),
                mass=mass,
            )
        )
        in_component |= inside_mu
    eta_atoms = xm[~in_component].copy()
    eta_weights = wm[~in_component].copy()
    return Decomposition(mu, nu, components, eta_atoms, eta_weights)


def static_target(nu, x):
    """Index of the atom of ``nu`` a static atom ``x`` of ``mu`` stays on.

    A static atom can miss its ``nu`` atom by rounding; the nearest atom
    within ``1e-12`` (relative to the support) is taken.
    """
    y = nu.x
    j = int(np.argmin(np.abs(y - x)))
    if abs(y[j] - x) > 1e-12 * max(1.0, float(np.abs(y).max())):
        raise KernelError(f"static atom {x} of mu is not an atom of nu")
    return j


def glue(dec, kernels):
    """Assemble a global kernel from one kernel per component.

    Atoms of ``mu`` in the static part stay put; atoms inside a component
    follow that component's kernel.
    """
    if len(kernels) != len(dec.components):
        raise KernelError(f"{len(dec.components)} components but {len(kernels)} kernels")
    mu, nu = dec.mu, dec.nu
    pi = np.zeros((mu.size, nu.size))
    ynu = nu.x
    xmu = mu.x
    for comp, ker in zip(dec.components, kernels):
        rows = np.searchsorted(xmu, ker.mu.x)
        cols = np.searchsorted(ynu, ker.nu.x)
        if not (np.array_equal(xmu[rows], ker.mu.x) and np.array_equal(ynu[np.minimum(cols, nu.size - 1)], ker.nu.x)):
            raise KernelError("component kernel atoms are not atoms of the glued marginals")
        pi[np.ix_(rows, cols)] = ker.pi
    for x in dec.eta_atoms:
        pi[np.searchsorted(xmu, x), static_target(nu, x)] = 1.0
    return MartingaleKernel(mu, nu, pi)
