"""Slit-plane geometry: the square-root profile, lattice fields, and measured scans.

Coordinates are always ordered (x_1, ..., x_{n-1}, x_n, z): the thin-space
tangential directions first, then the direction normal to the model free
boundary, then the extension variable.  The slit (model zero plate) is
P = {x_n <= 0, z = 0} and its edge is L = {x_n = 0, z = 0}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FlatnessConversionError, SingularPointError, StencilError

__all__ = [
    "PointXZ",
    "SlitGeometry",
    "GridField",
    "eval_U",
    "eval_Un",
    "eval_U_shifted",
    "profile_field",
    "tilted_profile",
    "nu_from_slope",
    "dist_to_plate",
    "discrete_laplacian",
    "laplacian_residual",
    "stencil_residual",
    "ball_points",
    "tensor_ball_points",
    "measure_gap_gain",
    "measure_translation_ratio",
    "verify_flatness_conversion",
]


def eval_U(t, z):
    """Square-root profile sqrt((r + t) / 2) with r = hypot(t, z).

    Equals r^(1/2) * cos(theta/2) in polar coordinates of the (t, z) plane.
    The algebraic form makes the value exactly zero on the slit
    {t <= 0, z = 0}, which the half-angle cosine would miss in floating point.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    r = np.hypot(t, z)
    return np.sqrt(np.maximum(r + t, 0.0) * 0.5)


def eval_Un(t, z):
    """Derivative of the profile in the t-direction, U / (2r).

    Undefined on the edge r = 0; raises SingularPointError there.  On the
    slit away from the edge the value is exactly zero.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    r = np.hypot(t, z)
    if np.any(r == 0.0):
        raise SingularPointError("U_n is undefined on the edge {t = 0, z = 0}")
    return eval_U(t, z) / (2.0 * r)


def eval_U_shifted(X, eps):
    """Profile translated by -eps along e_n: returns U(x_n + eps, z)."""
    pts = point_coords(X)
    return eval_U(pts[..., -2] + eps, pts[..., -1])


def profile_field(*coords):
    """Coordinate-array form of the profile: ignores tangential directions."""
    return eval_U(coords[-2], coords[-1])


def nu_from_slope(a0, eps):
    """Unit normal nu = (eps * a0, 1) / |(eps * a0, 1)| for a tangential slope a0."""
    a0 = np.atleast_1d(np.asarray(a0, dtype=float))
    v = np.concatenate([eps * a0, [1.0]])
    return v / np.linalg.norm(v)


def tilted_profile(nu, offset=0.0):
    """Exact solution U(x . nu - offset, z) as a coordinate-array function."""
    nu = np.asarray(nu, dtype=float)

    def fn(*coords):
        t = -offset
        for c, w in zip(coords[:-1], nu):
            t = t + c * w
        return eval_U(t, coords[-1])

    return fn


def dist_to_plate(xn, z):
    """Distance to the slit P: |z| over the plate, hypot(x_n, z) beyond the edge."""
    xn = np.asarray(xn, dtype=float)
    z = np.asarray(z, dtype=float)
    return np.where(xn <= 0.0, np.abs(z), np.hypot(xn, z))


@dataclass(frozen=True)
class PointXZ:
    """A point (x', x_n, z) with polar pair (r, theta) in the (x_n, z) plane."""

    xn: float
    z: float
    xprime: tuple = ()

    @property
    def r(self):
        return math.hypot(self.xn, self.z)

    @property
    def theta(self):
        # On the slit away from the edge take theta = +pi so the even
        # reflection convention gives U = 0 on both signed-zero sides.
        if self.z == 0.0 and self.xn < 0.0:
            return math.pi
        return math.atan2(self.z, self.xn)

    def as_array(self):
        return np.array([*self.xprime, self.xn, self.z], dtype=float)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(xn=float(arr[-2]), z=float(arr[-1]), xprime=tuple(arr[:-2]))


def point_coords(X):
    """Coerce a PointXZ or array-like into a float ndarray of coordinates."""
    if isinstance(X, PointXZ):
        return X.as_array()
    return np.asarray(X, dtype=float)


@dataclass(frozen=True)
class SlitGeometry:
    """Predicates for the model zero plate P and its edge L in dimension n."""

    n: int
    ball_radius: float = 1.0

    def in_P(self, xn, z):
        xn = np.asarray(xn)
        z = np.asarray(z)
        return (z == 0.0) & (xn <= 0.0)

    def in_L(self, xn, z):
        xn = np.asarray(xn)
        z = np.asarray(z)
        return (z == 0.0) & (xn == 0.0)

    def dist_P(self, xn, z):
        return dist_to_plate(xn, z)


@dataclass(frozen=True)
class GridField:
    """Scalar samples on a uniform lattice containing the plane z = 0.

    Axes are ordered (x_1, ..., x_{n-1}, x_n, z); the coordinate along axis a
    at index i is (lo[a] + i) * h, so lattice coordinates are exact multiples
    of h and exact comparisons against the slit are meaningful.
    """

    h: float
    lo: tuple
    values: np.ndarray
    even_in_z: bool = False

    def __post_init__(self):
        if self.values.ndim != len(self.lo):
            raise ValueError("lo length must match values.ndim")
        nz = self.values.shape[-1]
        if not (self.lo[-1] <= 0 <= self.lo[-1] + nz - 1):
            raise ValueError("z = 0 must be a lattice plane")

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def n(self):
        return self.values.ndim - 1

    @property
    def shape(self):
        return self.values.shape

    @property
    def iz0(self):
        return -self.lo[-1]

    @property
    def ixn0(self):
        return -self.lo[-2]

    def axis_coords(self, axis):
        return (self.lo[axis] + np.arange(self.shape[axis])) * self.h

    def coord_mesh(self):
        """Open (broadcastable) mesh of coordinates, one array per axis."""
        out = []
        for a in range(self.ndim):
            shape = [1] * self.ndim
            shape[a] = self.shape[a]
            out.append(self.axis_coords(a).reshape(shape))
        return tuple(out)

    def points(self):
        """Dense (..., ndim) array of lattice coordinates."""
        mesh = np.meshgrid(*(self.axis_coords(a) for a in range(self.ndim)),
                           indexing="ij")
        return np.stack(mesh, axis=-1)

    def slit_mask(self):
        """Boolean mask of lattice points on P, from exact index comparisons."""
        idx_xn = np.arange(self.shape[-2]) + self.lo[-2]
        idx_z = np.arange(self.shape[-1]) + self.lo[-1]
        shape_xn = [1] * self.ndim
        shape_xn[-2] = self.shape[-2]
        shape_z = [1] * self.ndim
        shape_z[-1] = self.shape[-1]
        mask = (idx_z.reshape(shape_z) == 0) & (idx_xn.reshape(shape_xn) <= 0)
        return np.broadcast_to(mask, self.shape).copy()

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.ndim):
            sl = [slice(None)] * self.ndim
            sl[a] = 0
            mask[tuple(sl)] = True
            sl[a] = -1
            mask[tuple(sl)] = True
        return mask

    def index_of(self, coords):
        """Exact lattice index of a coordinate tuple; raises if off-lattice."""
        coords = np.asarray(coords, dtype=float)
        idx = []
        for a in range(self.ndim):
            k = coords[a] / self.h - self.lo[a]
            ki = int(round(k))
            if abs(k - ki) > 1e-8 or not (0 <= ki < self.shape[a]):
                raise IndexError(f"coordinate {coords[a]} not on lattice axis {a}")
            idx.append(ki)
        return tuple(idx)

    def value_at(self, coords):
        return float(self.values[self.index_of(coords)])

    def ball_mask(self, center, radius):
        center = np.asarray(center, dtype=float)
        sq = np.zeros(self.shape)
        for a, c in enumerate(self.coord_mesh()):
            sq = sq + (c - center[a]) ** 2
        return sq <= radius**2 + 1e-14

    def with_values(self, values, even_in_z=None):
        even = self.even_in_z if even_in_z is None else even_in_z
        return GridField(self.h, self.lo, values, even)

    @classmethod
    def from_box(cls, n, h, radius, fn=None, even_in_z=False):
        """Field on the cube [-radius, radius]^(n+1); radius must be a multiple of h."""
        m = int(round(radius / h))
        if abs(m * h - radius) > 1e-9 * max(1.0, radius):
            raise ValueError("box radius must be an integer multiple of h")
        lo = (-m,) * (n + 1)
        shape = (2 * m + 1,) * (n + 1)
        field = cls(h, lo, np.zeros(shape), even_in_z)
        if fn is not None:
            field = field.with_values(
                np.broadcast_to(fn(*field.coord_mesh()), shape).astype(float).copy())
        return field


def discrete_laplacian(f: GridField, idx):
    """Standard 2(n+1)+1 point Laplacian of the field at a lattice multi-index.

    The multi-index and all stencil neighbours must lie inside the lattice and
    off the slit; otherwise a StencilError is raised.
    """
    idx = tuple(int(i) for i in idx)
    d = f.ndim
    if len(idx) != d:
        raise StencilError("index dimension mismatch")

    def on_slit(j):
        return (j[-1] + f.lo[-1] == 0) and (j[-2] + f.lo[-2] <= 0)

    stencil = [idx]
    for a in range(d):
        for s in (-1, 1):
            j = list(idx)
            j[a] += s
            stencil.append(tuple(j))
    for j in stencil:
        if any(not (0 <= j[a] < f.shape[a]) for a in range(d)):
            raise StencilError(f"stencil at {idx} leaves the lattice")
        if on_slit(j):
            raise StencilError(f"stencil at {idx} touches the slit")

    acc = -2.0 * d * f.values[idx]
    for j in stencil[1:]:
        acc += f.values[j]
    return float(acc / f.h**2)


def laplacian_residual(f: GridField, min_dist_P=0.1, margin_cells=1):
    """Max |discrete Laplacian| over interior lattice points away from the slit.

    Points closer than min_dist_P to the slit (or whose stencil leaves the
    lattice) are excluded, so the measured maximum is comparable across
    lattice spacings.
    """
    core = tuple(slice(1, -1) for _ in range(f.ndim))
    acc = -2.0 * f.ndim * f.values[core]
    for a in range(f.ndim):
        for s in (-1, 1):
            sl = [slice(1, -1)] * f.ndim
            sl[a] = slice(1 + s, f.shape[a] - 1 + s)
            acc = acc + f.values[tuple(sl)]
    res = np.abs(acc) / f.h**2

    mesh = f.coord_mesh()
    dist = dist_to_plate(mesh[-2], mesh[-1])
    dist = np.broadcast_to(dist, f.shape)[core]
    keep = dist > min_dist_P
    if margin_cells > 1:
        m = margin_cells - 1
        inner = np.zeros_like(keep)
        sl = tuple(slice(m, s - 2 - m + 1) for s in f.shape)
        inner[sl] = True
        keep = keep & inner
    if not np.any(keep):
        raise StencilError("no admissible stencil points")
    return float(np.max(res[keep]))


def stencil_residual(fn, points, h):
    """|discrete Laplacian| of a closed-form field at arbitrary probe points.

    fn takes coordinate arrays (one per axis); points has shape (N, d).
    """
    points = np.asarray(points, dtype=float)
    d = points.shape[-1]

    def ev(p):
        return fn(*(p[..., a] for a in range(d)))

    acc = -2.0 * d * ev(points)
    for a in range(d):
        for s in (-h, h):
            q = points.copy()
            q[..., a] += s
            acc = acc + ev(q)
    return np.abs(acc) / h**2


def ball_points(rng, d, count, radius=1.0, center=None):
    """Uniform random points in a d-dimensional ball."""
    x = rng.standard_normal((count, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    u = rng.random(count) ** (1.0 / d)
    pts = x * (radius * u)[:, None]
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def tensor_ball_points(d, step, radius=1.0, center=None):
    """Axis-aligned scan grid restricted to a ball."""
    ax = np.arange(-radius, radius + step / 2, step)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    pts = pts[np.einsum("ij,ij->i", pts, pts) <= radius**2 + 1e-12]
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def _gain_sample_points(rng, sample_count, grid_step):
    grid = tensor_ball_points(2, grid_step)
    rand = ball_points(rng, 2, sample_count)
    return np.vstack([grid, rand])


def measure_gap_gain(eps, sample_count=10_000, rng=None, grid_step=0.01):
    """Measured constant c(eps) = min over B_1 off the slit of the shift gain.

    The gain at X is (U(X + eps e_n) / U(X) - 1) / eps, positive since the
    profile grows strictly under e_n-translation off the slit.
    """
    if not 0.0 < eps < 2.0:
        raise ValueError("eps must lie in (0, 2)")
    rng = np.random.default_rng(20240601) if rng is None else rng
    pts = _gain_sample_points(rng, sample_count, grid_step)
    t, z = pts[:, 0], pts[:, 1]
    base = eval_U(t, z)
    keep = base > 0.0
    ratio = (eval_U(t[keep] + eps, z[keep]) / base[keep] - 1.0) / eps
    return float(np.min(ratio))


def measure_translation_ratio(eps, delta_bar, sample_count=10_000, rng=None,
                              grid_step=0.01):
    """Measured constant C(delta_bar) bounding translation growth away from the edge.

    Maximum over the planar annulus B_1 minus B_delta_bar of
    (U(t + eps, z) / U(t, z) - 1) / eps; finite because the annulus stays a
    positive distance from the edge, and blowing up as delta_bar shrinks.
    """
    if not (0.0 < 2.0 * eps < delta_bar < 1.0):
        raise ValueError("need 0 < 2*eps < delta_bar < 1")
    rng = np.random.default_rng(20240602) if rng is None else rng
    pts = _gain_sample_points(rng, sample_count, grid_step)
    r = np.hypot(pts[:, 0], pts[:, 1])
    pts = pts[r >= delta_bar]
    t, z = pts[:, 0], pts[:, 1]
    base = eval_U(t, z)
    keep = base > 0.0
    ratio = (eval_U(t[keep] + eps, z[keep]) / base[keep] - 1.0) / eps
    return float(np.max(ratio))


def _sandwich_holds(values, xn, z, eps):
    return bool(np.all(eval_U(xn - eps, z) <= values)
                and np.all(values <= eval_U(xn + eps, z)))


def verify_flatness_conversion(g: GridField, delta, K_max=64.0, rtol=1e-3):
    """Smallest K such that translates by K*delta sandwich g on the unit ball.

    Bisection over K; the sandwich predicate is monotone in K because the
    profile increases along e_n.  Preconditions: g is within delta of the
    profile in sup norm and its discrete zero plate sits between the plates
    {x_n <= -delta} and {x_n <= delta} (one-cell slack).
    """
    mesh = g.coord_mesh()
    xn = np.broadcast_to(mesh[-2], g.shape)
    z = np.broadcast_to(mesh[-1], g.shape)
    ball = g.ball_mask(np.zeros(g.ndim), 1.0)
    u = np.broadcast_to(eval_U(mesh[-2], mesh[-1]), g.shape)
    if np.max(np.abs(g.values - u)) > delta + 1e-12:
        raise ValueError("field is farther than delta from the profile")

    plane = z == 0.0
    zero = plane & (np.abs(g.values) == 0.0)
    if np.any(plane & (xn <= -delta - g.h) & ~zero & ball):
        raise ValueError("zero plate does not contain {x_n <= -delta}")
    if np.any(zero & (xn > delta + g.h) & ball):
        raise ValueError("zero plate is not contained in {x_n <= delta}")

    vals = g.values[ball]
    xnb, zb = xn[ball], z[ball]

    def ok(K):
        return _sandwich_holds(vals, xnb, zb, K * delta)

    if ok(0.0):
        return 0.0
    if not ok(K_max):
        raise FlatnessConversionError(
            f"no K <= {K_max} sandwiches the field between profile translates")
    lo, hi = 0.0, float(K_max)
    while hi - lo > rtol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
