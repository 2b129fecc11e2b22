"""Primitive rigid objects resting on the table, and their planar footprints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rigid import SE3Transform, euler_to_matrix

SHAPES = ("box", "cylinder", "sphere")


@dataclass(frozen=True)
class Circle:
    center: np.ndarray
    radius: float

    def project(self, axis):
        c = float(self.center @ axis)
        return c - self.radius, c + self.radius

    def support(self, d) -> float:
        return float(self.center @ d) + self.radius


@dataclass(frozen=True)
class Polygon:
    verts: np.ndarray  # (n, 2), counter-clockwise

    @property
    def center(self):
        return self.verts.mean(axis=0)

    def project(self, axis):
        p = self.verts @ axis
        return float(p.min()), float(p.max())

    def support(self, d) -> float:
        return float((self.verts @ d).max())

    def normals(self):
        edges = np.roll(self.verts, -1, axis=0) - self.verts
        n = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)


def _axes(a, b):
    axes = []
    for fp, other in ((a, b), (b, a)):
        if isinstance(fp, Polygon):
            axes.extend(fp.normals())
        elif isinstance(other, Polygon):
            # circle against polygon: axis towards the nearest vertex
            d = other.verts - fp.center
            v = d[np.argmin(np.einsum("ij,ij->i", d, d))]
            nv = np.linalg.norm(v)
            if nv > 0:
                axes.append(v / nv)
    return axes


def separation(a, b, clearance: float = 0.0):
    """Minimal translation that moves footprint ``b`` clear of ``a``.

    Returns None when the footprints are at least ``clearance`` apart.
    """
    if isinstance(a, Circle) and isinstance(b, Circle):
        d = b.center - a.center
        dist = float(np.linalg.norm(d))
        overlap = a.radius + b.radius + clearance - dist
        if overlap <= 0:
            return None
        n = d / dist if dist > 0 else np.array([1.0, 0.0])
        return n * overlap
    best, best_axis = np.inf, None
    for axis in _axes(a, b):
        amin, amax = a.project(axis)
        bmin, bmax = b.project(axis)
        overlap = min(amax, bmax) - max(amin, bmin) + clearance
        if overlap <= 0:
            return None
        if overlap < best:
            best, best_axis = overlap, axis
    if best_axis is None:
        return None
    if (b.center - a.center) @ best_axis < 0:
        best_axis = -best_axis
    return best_axis * best


@dataclass(frozen=True)
class RigidObject:
    """A primitive on the table.

    ``size`` is (x, y, z) extents for a box, (radius, height) for a vertical
    cylinder and (radius,) for a sphere, meters. The pose places the shape's
    center in the world frame; objects only ever yaw.
    """

    id: int
    shape: str
    size: tuple
    pose: SE3Transform

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))

    @classmethod
    def on_table(cls, id, shape, size, x, y, yaw=0.0) -> "RigidObject":
        obj = cls(id, shape, size, SE3Transform())
        return obj.placed(x, y, yaw)

    def placed(self, x, y, yaw) -> "RigidObject":
        z = self.height / 2
        return RigidObject(self.id, self.shape, self.size, SE3Transform((0.0, 0.0, yaw), (x, y, z)))

    @property
    def height(self) -> float:
        if self.shape == "box":
            return self.size[2]
        if self.shape == "cylinder":
            return self.size[1]
        return 2 * self.size[0]

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.pose.translation)

    @property
    def yaw(self) -> float:
        return self.pose.euler[2]

    @property
    def footprint_radius(self) -> float:
        if self.shape == "box":
            return float(np.hypot(self.size[0], self.size[1]) / 2)
        return self.size[0]

    def footprint(self):
        c = self.center[:2]
        if self.shape != "box":
            return Circle(c, self.size[0])
        hx, hy = self.size[0] / 2, self.size[1] / 2
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        cy, sy = np.cos(self.yaw), np.sin(self.yaw)
        R = np.array([[cy, -sy], [sy, cy]])
        return Polygon(local @ R.T + c)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        fp = self.footprint()
        if isinstance(fp, Circle):
            lo2, hi2 = fp.center - fp.radius, fp.center + fp.radius
        else:
            lo2, hi2 = fp.verts.min(axis=0), fp.verts.max(axis=0)
        z0 = self.center[2] - self.height / 2
        return np.array([*lo2, z0]), np.array([*hi2, z0 + self.height])

    def to_local(self, points) -> np.ndarray:
        R = euler_to_matrix(self.pose.euler)
        return (np.asarray(points, dtype=float) - self.center) @ R

    def contains(self, points) -> np.ndarray:
        """Whether world points lie inside the solid (boundary included)."""
        p = self.to_local(points)
        if self.shape == "box":
            h = np.asarray(self.size) / 2
            return np.all(np.abs(p) <= h, axis=-1)
        if self.shape == "cylinder":
            r, height = self.size
            return (p[..., 0] ** 2 + p[..., 1] ** 2 <= r * r) & (np.abs(p[..., 2]) <= height / 2)
        r = self.size[0]
        return np.einsum("...i,...i->...", p, p) <= r * r

    def body_points(self) -> np.ndarray:
        """Body-fixed reference points in the world frame (box corners, or axis tips)."""
        if self.shape == "box":
            h = np.asarray(self.size) / 2
            local = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * h
        else:
            r = self.size[0]
            hz = self.height / 2
            local = np.array([[r, 0, 0], [-r, 0, 0], [0, r, 0], [0, -r, 0], [0, 0, hz], [0, 0, -hz]])
        return self.pose.apply(local)

    def moved(self, dxy, dyaw: float = 0.0) -> "RigidObject":
        x, y, _ = self.center
        return self.placed(x + dxy[0], y + dxy[1], self.yaw + dyaw)

    def to_dict(self) -> dict:
        return {"id": self.id, "shape": self.shape, "size": list(self.size), "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "RigidObject":
        return cls(d["id"], d["shape"], tuple(d["size"]), SE3Transform.from_dict(d["pose"]))

    # -- ray casting -------------------------------------------------------

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Nearest positive hit distance along each ray (inf for a miss)."""
        R = euler_to_matrix(self.pose.euler)
        o = (origins - self.center) @ R
        d = dirs @ R
        if self.shape == "box":
            return _ray_box(o, d, np.asarray(self.size) / 2)
        if self.shape == "cylinder":
            return _ray_cylinder(o, d, self.size[0], self.size[1] / 2)
        return _ray_sphere(o, d, self.size[0])


def _ray_box(o, d, h):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-h - o) * inv
        t2 = (h - o) * inv
    tmin = np.fmin(t1, t2)
    tmax = np.fmax(t1, t2)
    # rays parallel to a slab: inside the slab -> unconstrained, outside -> miss
    par = d == 0
    inside = np.abs(o) <= h
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    tn = tmin.max(axis=-1)
    tf = tmax.min(axis=-1)
    hit = (tn <= tf) & (tf > 0)
    t = np.where(tn > 0, tn, tf)
    return np.where(hit, t, np.inf)


def _ray_sphere(o, d, r):
    a = np.einsum("ij,ij->i", d, d)
    b = 2 * np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - r * r
    disc = b * b - 4 * a * c
    sq = np.sqrt(np.maximum(disc, 0))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > 0, t0, t1)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _ray_cylinder(o, d, r, hz):
    best = np.full(len(o), np.inf)
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0))
        for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
            z = o[:, 2] + t * d[:, 2]
            ok = (a > 0) & (disc >= 0) & (t > 0) & (np.abs(z) <= hz)
            best = np.where(ok & (t < best), t, best)
        for zc in (-hz, hz):
            t = (zc - o[:, 2]) / d[:, 2]
            x = o[:, 0] + t * d[:, 0]
            y = o[:, 1] + t * d[:, 1]
            ok = (d[:, 2] != 0) & (t > 0) & (x * x + y * y <= r * r)
            best = np.where(ok & (t < best), t, best)
    return best
