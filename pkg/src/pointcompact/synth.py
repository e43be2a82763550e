"""Synthetic labeled point clouds: canonical surfaces with uniform surface
sampling, Gaussian jitter, and a random rotation. Deterministic per seed."""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud

CLASSES = ("sphere", "cube", "cylinder", "plane", "torus")


def _sample_sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_cube(rng, n):
    # six faces of the [-1, 1]^3 cube, equal areas
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        sel = axis == a
        others = [i for i in range(3) if i != a]
        pts[sel, a] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


def _sample_cylinder(rng, n):
    # radius 1, z in [-1, 1]; side area 4*pi vs cap area 2*pi
    pts = np.empty((n, 3))
    on_side = rng.uniform(size=n) < 2.0 / 3.0
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    ns = int(on_side.sum())
    pts[on_side, 0] = np.cos(theta[on_side])
    pts[on_side, 1] = np.sin(theta[on_side])
    pts[on_side, 2] = rng.uniform(-1.0, 1.0, size=ns)
    caps = ~on_side
    r = np.sqrt(rng.uniform(size=int(caps.sum())))
    pts[caps, 0] = r * np.cos(theta[caps])
    pts[caps, 1] = r * np.sin(theta[caps])
    pts[caps, 2] = np.where(rng.uniform(size=int(caps.sum())) < 0.5, 1.0, -1.0)
    return pts


def _sample_plane(rng, n):
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.uniform(-1.0, 1.0, size=(n, 2))
    return pts


def _sample_torus(rng, n, ring=1.0, tube=0.4):
    # rejection sampling for uniform area density on the torus
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        todo = n - filled
        theta = rng.uniform(0.0, 2.0 * np.pi, size=2 * todo)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=2 * todo)
        accept = rng.uniform(size=2 * todo) < (ring + tube * np.cos(phi)) / (ring + tube)
        theta, phi = theta[accept][:todo], phi[accept][:todo]
        got = theta.size
        r = ring + tube * np.cos(phi)
        out[filled:filled + got, 0] = r * np.cos(theta)
        out[filled:filled + got, 1] = r * np.sin(theta)
        out[filled:filled + got, 2] = tube * np.sin(phi)
        filled += got
    return out


_SAMPLERS = {
    "sphere": _sample_sphere,
    "cube": _sample_cube,
    "cylinder": _sample_cylinder,
    "plane": _sample_plane,
    "torus": _sample_torus,
}


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation matrix (unit quaternion method)."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def synth_cloud(class_name: str, n_points: int, noise: float,
                rng: np.random.Generator, rotate: bool = True) -> PointCloud:
    if class_name not in _SAMPLERS:
        raise ValueError(f"unknown shape class {class_name!r} (have {', '.join(CLASSES)})")
    if noise < 0:
        raise ValueError(f"noise sigma must be >= 0, got {noise}")
    pts = _SAMPLERS[class_name](rng, n_points)
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    if rotate:
        pts = pts @ random_rotation(rng).T
    return PointCloud(pts)


def synth_dataset(classes: list[str], per_class: int, n_points: int,
                  noise: float, seed: int) -> list[tuple[PointCloud, str]]:
    """Class-balanced labeled clouds, deterministic per seed.

    Returns [(cloud, class_name), ...] in class-major order.
    """
    for c in classes:
        if c not in _SAMPLERS:
            raise ValueError(f"unknown shape class {c!r} (have {', '.join(CLASSES)})")
    rng = np.random.default_rng(seed)
    out = []
    for c in classes:
        for _ in range(per_class):
            out.append((synth_cloud(c, n_points, noise, rng), c))
    return out


def parse_synth_spec(spec: str) -> dict:
    """Parse 'classes=sphere,cube;per_class=50;points=512;noise=0.01;seed=3'."""
    out = {"classes": list(CLASSES[:4]), "per_class": 10, "n_points": 512,
           "noise": 0.0, "seed": 0}
    if not spec:
        return out
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"synth spec entries must be key=value, got {part!r}")
        key, raw = (s.strip() for s in part.split("=", 1))
        if key == "classes":
            out["classes"] = [c.strip() for c in raw.split(",") if c.strip()]
        elif key == "per_class":
            out["per_class"] = int(raw)
        elif key in ("points", "n_points"):
            out["n_points"] = int(raw)
        elif key == "noise":
            out["noise"] = float(raw)
        elif key == "seed":
            out["seed"] = int(raw)
        else:
            raise ValueError(f"unknown synth spec key {key!r}")
    return out
