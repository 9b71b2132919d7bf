"""Harnack-decay and improvement-of-flatness measurements at dyadic scales.

Given a field trapped between profile translates, the harness computes the
tightest translate envelope (a, b) per ball, iterates over a fixed dyadic
scale grid, and fits the geometric decay factor of the envelope width.  The
unknown universal contraction factor is reported as a measurement, never
asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnreliableFitError
from .geometry import GridField, eval_U, point_coords

__all__ = [
    "FlatnessRecord",
    "DecayFit",
    "flatness_at_scale",
    "harnack_cascade",
    "improvement_of_flatness_check",
]


@dataclass(frozen=True)
class FlatnessRecord:
    """Envelope (a_m, b_m) of the field between translates at scale rho_m."""

    m: int
    rho: float
    center: tuple
    a: float
    b: float

    @property
    def width(self):
        return self.b - self.a


@dataclass(frozen=True)
class DecayFit:
    """Log-linear fit of envelope width against scale index."""

    eta_meas: float
    slope_loglog: float
    residual: float
    n_scales: int
    ok: bool
    reason: str = ""


def _ball_samples(g, center, rho, h=None, scan_cells=64):
    center = np.asarray(center, dtype=float)
    if isinstance(g, GridField):
        mask = g.ball_mask(center, rho)
        mesh = g.coord_mesh()
        xn = np.broadcast_to(mesh[-2], g.shape)[mask]
        z = np.broadcast_to(mesh[-1], g.shape)[mask]
        return g.values[mask], xn, z
    step = h if h is not None else rho / scan_cells
    axes = [np.arange(c - rho, c + rho + step / 2, step) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    d = pts - center
    pts = pts[np.einsum("ij,ij->i", d, d) <= rho**2 + 1e-12]
    vals = g(*(pts[:, a] for a in range(pts.shape[1])))
    return np.asarray(vals), pts[:, -2], pts[:, -1]


def flatness_at_scale(g, eps, center, rho, h=None, tol=1e-3):
    """Tightest translate envelope (a, b) of g on the ball of radius rho.

    a is the largest value with U(X + eps*a*e_n) <= g on the sampled lattice
    of the ball, b the smallest with g <= U(X + eps*b*e_n); both found by
    bisection over [-1, 1] to an eps-relative tolerance.  Raises if even the
    base envelope [-1, 1] fails.
    """
    vals, xn, z = _ball_samples(g, point_coords(center), rho, h=h)

    def lower_ok(a):
        return bool(np.all(eval_U(xn + eps * a, z) <= vals))

    def upper_ok(b):
        return bool(np.all(vals <= eval_U(xn + eps * b, z)))

    if not (lower_ok(-1.0) and upper_ok(1.0)):
        raise UnreliableFitError("base envelope [-1, 1] violated on this ball")

    lo, hi = -1.0, 1.0
    if lower_ok(hi):
        a = hi
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if lower_ok(mid) else (lo, mid)
        a = lo
    lo, hi = -1.0, 1.0
    if upper_ok(lo):
        b = lo
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            lo, hi = (lo, mid) if upper_ok(mid) else (mid, hi)
        b = hi
    return a, b


def harnack_cascade(g, eps, center=None, m_max=8, h=None, eta_grid=0.5,
                    rho0=0.5):
    """Envelope records over the dyadic scale grid plus the fitted decay factor.

    Scales rho_m = rho0 * eta_grid^m are processed until the envelope width
    falls below the lattice resolution floor 4h/eps (records below it would
    measure the lattice, not the field) or m_max is reached.  The fit reports
    eta_meas = 1 - exp(slope of log width vs m) and the log-log slope of
    width against scale.
    """
    center = np.zeros(g.ndim if isinstance(g, GridField) else 0) \
        if center is None else point_coords(center)
    if center.size == 0:
        raise ValueError("center is required for callable fields")
    h_phys = g.h if isinstance(g, GridField) else h
    floor = 4.0 * h_phys / eps if h_phys else 0.0

    records = []
    for m in range(m_max + 1):
        rho = rho0 * eta_grid**m
        a, b = flatness_at_scale(g, eps, center, rho, h=h)
        rec = FlatnessRecord(m=m, rho=rho, center=tuple(center), a=a, b=b)
        if floor and rec.width < floor and records:
            break
        records.append(rec)

    widths = np.array([r.width for r in records])
    usable = widths > max(floor, 1e-9)
    if int(usable.sum()) < 3:
        fit = DecayFit(eta_meas=math.nan, slope_loglog=math.nan,
                       residual=math.nan, n_scales=int(usable.sum()), ok=False,
                       reason="fewer than 3 usable scales")
        return records, fit
    ms = np.array([r.m for r in records])[usable]
    rhos = np.array([r.rho for r in records])[usable]
    logw = np.log(widths[usable])
    slope_m, _ = np.polyfit(ms, logw, 1)
    slope_r, intercept = np.polyfit(np.log(rhos), logw, 1)
    pred = slope_r * np.log(rhos) + intercept
    resid = float(np.sqrt(np.mean((logw - pred) ** 2)))
    fit = DecayFit(eta_meas=float(1.0 - math.exp(slope_m)),
                   slope_loglog=float(slope_r), residual=resid,
                   n_scales=int(usable.sum()), ok=True)
    return records, fit


def improvement_of_flatness_check(g, eps, rho, h=None, n=None, tol=0.0,
                                  iters=48):
    """Search a direction nu in the cap |nu - e_n| <= 2 eps making the
    rho-scale sandwich U(x.nu -+ (eps/2) rho, z) hold on the ball B_rho.

    Returns a report dict; success requires a direction with zero violation
    (up to tol).  For n = 1 the cap contains only e_n itself; for n = 2 the
    cap is one angular interval searched by golden section.
    """
    if isinstance(g, GridField):
        n = g.n
    if n is None:
        raise ValueError("n is required for callable fields")
    center = np.zeros(n + 1)
    vals, xn, z = _ball_samples(g, center, rho, h=h)
    if n == 2:
        if isinstance(g, GridField):
            mask = g.ball_mask(center, rho)
            x1 = np.broadcast_to(g.coord_mesh()[0], g.shape)[mask]
        else:
            step = h if h is not None else rho / 64
            axes = [np.arange(-rho, rho + step / 2, step) for _ in range(3)]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=-1)
            pts = pts[np.einsum("ij,ij->i", pts, pts) <= rho**2 + 1e-12]
            x1 = pts[:, 0]
    half = eps * rho / 2.0

    def violation_for(nu):
        t = x1 * nu[0] + xn * nu[1] if n == 2 else xn * nu[0]
        low = eval_U(t - half, z) - vals
        high = vals - eval_U(t + half, z)
        return float(max(np.max(low), np.max(high)))

    if n == 1:
        nu = np.array([1.0])
        v = violation_for(nu)
        return {"success": v <= tol, "nu": nu.tolist(), "violation": v,
                "rho": rho, "eps": eps}

    def nu_of(angle):
        return np.array([math.sin(angle), math.cos(angle)])

    cap = 2.0 * math.asin(min(1.0, eps))
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = -cap, cap
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = violation_for(nu_of(c)), violation_for(nu_of(d))
    best_angle, best = 0.0, violation_for(nu_of(0.0))
    for cand, val in ((c, fc), (d, fd)):
        if val < best:
            best_angle, best = cand, val
    for _ in range(iters):
        if best <= tol:
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = violation_for(nu_of(c))
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = violation_for(nu_of(d))
        cand, val = (c, fc) if fc < fd else (d, fd)
        if val < best:
            best_angle, best = cand, val
    nu = nu_of(best_angle)
    return {"success": best <= tol, "nu": nu.tolist(), "violation": best,
            "rho": rho, "eps": eps}
