"""Per-pixel ray fields for equirectangular, pinhole, equidistant fisheye and
spherical-harmonic camera descriptions.

Conventions (all models): x right, y down, z forward. Fields are stored
row-major with shape ``(H, W, 3)``; ``[v, u]`` indexes row ``v`` and column
``u``. Pinhole and fisheye intrinsics use integer pixel-center coordinates
(column ``u`` sits at ``x = u``); the equirectangular and SH models use the
normalized pixel-center convention ``((u + 0.5) / W, (v + 0.5) / H)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import lpmv

from .errors import CoefficientMismatch, InvalidOrder, OutOfDomain, RankDeficient

FULL_SPHERE = (2.0 * math.pi, math.pi)


def _check_size(width, height):
    if int(width) != width or int(height) != height or width < 1 or height < 1:
        raise ValueError(f"image size must be positive integers, got {width}x{height}")


@dataclass(frozen=True)
class EquirectCamera:
    width: int
    height: int

    def __post_init__(self):
        _check_size(self.width, self.height)


@dataclass(frozen=True)
class PinholeCamera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        _check_size(self.width, self.height)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("pinhole focal lengths must be positive")


@dataclass(frozen=True)
class FisheyeCamera:
    """Equidistant fisheye: image radius ``rho = f * theta``."""

    width: int
    height: int
    f: float
    cx: float
    cy: float
    theta_max: float = math.pi / 2

    def __post_init__(self):
        _check_size(self.width, self.height)
        if not self.f > 0:
            raise ValueError("fisheye focal length must be positive")
        if not 0 < self.theta_max <= math.pi:
            raise ValueError("theta_max must lie in (0, pi]")


@dataclass(frozen=True, eq=False)
class SHCamera:
    """Ray field encoded by 3-vector real SH coefficients for degrees 1..L.

    ``coeffs`` has shape ``(L**2 + 2L, 3)``, ordered by degree then order
    ``m = -l..l``. ``psi_extent`` is the (azimuth, polar) angular span the
    image is mapped onto before evaluating the basis; the default covers the
    whole sphere.
    """

    width: int
    height: int
    max_degree: int
    coeffs: np.ndarray
    psi_extent: tuple = field(default=FULL_SPHERE)

    def __post_init__(self):
        _check_size(self.width, self.height)
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (n_basis(self.max_degree), 3):
            raise CoefficientMismatch(
                f"degree {self.max_degree} needs {n_basis(self.max_degree)} 3-vectors, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)
        az, pol = self.psi_extent
        if not (0 < az <= 2 * math.pi and 0 < pol <= math.pi):
            raise ValueError(f"invalid psi_extent {self.psi_extent}")
        object.__setattr__(self, "psi_extent", (float(az), float(pol)))


CameraSpec = Union[EquirectCamera, PinholeCamera, FisheyeCamera, SHCamera]


@dataclass(frozen=True, eq=False)
class RayField:
    dirs: np.ndarray  # (H, W, 3), zero where invalid
    valid: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.dirs.shape[0]

    @property
    def width(self) -> int:
        return self.dirs.shape[1]

    @property
    def shape(self) -> tuple:
        return self.dirs.shape[:2]


def _finish(dirs, valid) -> RayField:
    dirs = np.where(valid[..., None], dirs, 0.0)
    return RayField(dirs, valid)


def normalized_pixel_centers(width: int, height: int):
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    return np.meshgrid(u, v)


def pixel_grid(width: int, height: int):
    """Integer pixel-center coordinates ``(u, v)`` of shape ``(H, W)``."""
    return np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))


def pixel_to_sphere(u, v, extent=FULL_SPHERE):
    """Normalized image coords in (0, 1)^2 -> (polar, azimuth) in radians.

    With the default full-sphere extent, ``azimuth = (u - 0.5) * 2 pi`` and
    ``polar = v * pi``. A narrower extent maps the image onto a window of the
    same centre.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any((u <= 0) | (u >= 1) | (v <= 0) | (v >= 1)):
        raise OutOfDomain("normalized pixel coordinates must lie in the open interval (0, 1)")
    az_span, pol_span = extent
    return math.pi / 2 + (v - 0.5) * pol_span, (u - 0.5) * az_span


def equirect_rays(cam: EquirectCamera) -> RayField:
    u, v = normalized_pixel_centers(cam.width, cam.height)
    lon = (u - 0.5) * 2 * math.pi
    lat = (0.5 - v) * math.pi
    dirs = np.stack([np.cos(lat) * np.sin(lon), -np.sin(lat), np.cos(lat) * np.cos(lon)], axis=-1)
    return RayField(dirs, np.ones(dirs.shape[:2], dtype=bool))


def pinhole_rays(cam: PinholeCamera) -> RayField:
    u, v = pixel_grid(cam.width, cam.height)
    d = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return RayField(d, np.ones(d.shape[:2], dtype=bool))


def fisheye_rays(cam: FisheyeCamera) -> RayField:
    u, v = pixel_grid(cam.width, cam.height)
    du, dv = u - cam.cx, v - cam.cy
    theta = np.hypot(du, dv) / cam.f
    alpha = np.arctan2(dv, du)
    d = np.stack([np.sin(theta) * np.cos(alpha), np.sin(theta) * np.sin(alpha), np.cos(theta)], axis=-1)
    return _finish(d, theta <= cam.theta_max)


def fisheye_project(cam: FisheyeCamera, dirs) -> np.ndarray:
    """Forward equidistant projection of unit directions to pixel coordinates."""
    dirs = np.asarray(dirs, dtype=float)
    theta = np.arccos(np.clip(dirs[..., 2] / np.linalg.norm(dirs, axis=-1), -1.0, 1.0))
    alpha = np.arctan2(dirs[..., 1], dirs[..., 0])
    rho = cam.f * theta
    return np.stack([cam.cx + rho * np.cos(alpha), cam.cy + rho * np.sin(alpha)], axis=-1)


def zdepth_to_radial(cam: PinholeCamera, zdepth) -> np.ndarray:
    """Convert a Z-depth map to radial distances along each pixel's ray."""
    zdepth = np.asarray(zdepth, dtype=float)
    if zdepth.shape != (cam.height, cam.width):
        raise ValueError(f"z-depth shape {zdepth.shape} does not match camera {cam.height}x{cam.width}")
    u, v = pixel_grid(cam.width, cam.height)
    scale = np.sqrt(((u - cam.cx) / cam.fx) ** 2 + ((v - cam.cy) / cam.fy) ** 2 + 1.0)
    return np.where(zdepth > 0, zdepth * scale, 0.0)


# -- spherical harmonics ---------------------------------------------------

def n_basis(L: int) -> int:
    """Number of basis functions for degrees 1..L (the l = 0 term is excluded)."""
    return L * L + 2 * L


def sh_basis(l: int, m: int, theta, phi):
    """Real orthonormal spherical harmonic ``Y_l^m(theta, phi)``.

    ``theta`` is the polar angle, ``phi`` the azimuth. Built on the associated
    Legendre functions with the Condon-Shortley phase, so that for example
    ``Y_1^1 = -sqrt(3 / 4 pi) sin(theta) cos(phi)``.
    """
    if l < 0 or abs(m) > l:
        raise InvalidOrder(f"invalid (l, m) = ({l}, {m})")
    am = abs(m)
    norm = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - am) / math.factorial(l + am))
    P = lpmv(am, l, np.cos(theta))
    if m == 0:
        return norm * P
    if m > 0:
        return math.sqrt(2.0) * norm * P * np.cos(m * phi)
    return math.sqrt(2.0) * norm * P * np.sin(am * phi)


def sh_design(theta, phi, L: int) -> np.ndarray:
    """Basis matrix of shape ``theta.shape + (n_basis(L),)``."""
    cols = [sh_basis(l, m, theta, phi) for l in range(1, L + 1) for m in range(-l, l + 1)]
    return np.stack(cols, axis=-1)


def _sh_angles(width, height, extent):
    u, v = normalized_pixel_centers(width, height)
    return pixel_to_sphere(u, v, extent)


def sh_ray_field(cam: SHCamera) -> RayField:
    theta, phi = _sh_angles(cam.width, cam.height, cam.psi_extent)
    f = sh_design(theta, phi, cam.max_degree) @ cam.coeffs
    n = np.linalg.norm(f, axis=-1)
    valid = n >= 1e-9
    d = f / np.where(valid, n, 1.0)[..., None]
    return _finish(d, valid)


def estimate_psi_extent(field: RayField) -> tuple:
    """Angular (azimuth, polar) span covered by a ray field's valid pixels.

    Spans are measured at pixel centres and stretched by ``W / (W - 1)``
    (resp. ``H / (H - 1)``) so the normalized image interval maps onto the
    full window; an equirectangular field yields exactly the full sphere.
    """
    d = field.dirs[field.valid]
    if len(d) == 0:
        return FULL_SPHERE
    az = np.arctan2(d[:, 0], d[:, 2])
    el = np.arcsin(np.clip(d[:, 1], -1.0, 1.0))
    H, W = field.shape
    az_span = (az.max() - az.min()) * W / max(W - 1, 1)
    pol_span = (el.max() - el.min()) * H / max(H - 1, 1)
    return (float(np.clip(az_span, 1e-6, 2 * math.pi)), float(np.clip(pol_span, 1e-6, math.pi)))


@dataclass(frozen=True, eq=False)
class SHFit:
    camera: SHCamera
    residual: float  # RMS over valid pixels and components of the linear fit
    rank: int


def fit_sh_coeffs(field: RayField, L: int = 3, psi_extent="auto") -> SHFit:
    """Per-component linear least squares of a ray field onto the SH basis.

    ``psi_extent="auto"`` estimates the angular window from the field
    itself; pass a tuple to pin it (e.g. to invert :func:`sh_ray_field`).
    """
    if isinstance(psi_extent, str):
        if psi_extent != "auto":
            raise ValueError(f"unknown psi_extent {psi_extent!r}")
        psi_extent = estimate_psi_extent(field)
    theta, phi = _sh_angles(field.width, field.height, psi_extent)
    A = sh_design(theta[field.valid], phi[field.valid], L)
    B = n_basis(L)
    if A.shape[0] < B:
        raise RankDeficient(f"{A.shape[0]} valid pixels cannot determine {B} basis functions")
    y = field.dirs[field.valid]
    coeffs, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < B:
        raise RankDeficient(f"design matrix rank {rank} < {B}")
    resid = float(np.sqrt(np.mean((A @ coeffs - y) ** 2)))
    cam = SHCamera(field.width, field.height, L, coeffs, tuple(psi_extent))
    return SHFit(cam, resid, int(rank))


def ray_field(cam: CameraSpec) -> RayField:
    if isinstance(cam, EquirectCamera):
        return equirect_rays(cam)
    if isinstance(cam, PinholeCamera):
        return pinhole_rays(cam)
    if isinstance(cam, FisheyeCamera):
        return fisheye_rays(cam)
    if isinstance(cam, SHCamera):
        return sh_ray_field(cam)
    raise TypeError(f"unsupported camera type {type(cam).__name__}")


def angular_error(a: RayField, b: RayField) -> np.ndarray:
    """Per-pixel angle (radians) between two fields over jointly valid pixels."""
    m = a.valid & b.valid
    x, y = a.dirs[m], b.dirs[m]
    return np.arctan2(np.linalg.norm(np.cross(x, y), axis=-1), np.sum(x * y, axis=-1))


# -- JSON ------------------------------------------------------------------

_MODEL_NAMES = {
    EquirectCamera: "equirect",
    PinholeCamera: "pinhole",
    FisheyeCamera: "fisheye_equidistant",
    SHCamera: "spherical_harmonic",
}


def camera_to_json(cam: CameraSpec) -> dict:
    out = {"model": _MODEL_NAMES[type(cam)], "width": int(cam.width), "height": int(cam.height)}
    if isinstance(cam, PinholeCamera):
        out.update(fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy)
    elif isinstance(cam, FisheyeCamera):
        out.update(f=cam.f, cx=cam.cx, cy=cam.cy, theta_max=cam.theta_max)
    elif isinstance(cam, SHCamera):
        out.update(max_degree=cam.max_degree, coeffs=cam.coeffs.tolist(), psi_extent=list(cam.psi_extent))
    return out


def camera_from_json(obj: dict) -> CameraSpec:
    """Parse a camera description; raises ``ValueError``/``KeyError``/``TypeError`` on bad input."""
    if not isinstance(obj, dict):
        raise TypeError("camera spec must be a JSON object")
    model = obj.get("model")
    size = dict(width=obj["width"], height=obj["height"])
    if model == "equirect":
        return EquirectCamera(**size)
    if model == "pinhole":
        return PinholeCamera(**size, fx=float(obj["fx"]), fy=float(obj["fy"]),
                             cx=float(obj["cx"]), cy=float(obj["cy"]))
    if model == "fisheye_equidistant":
        return FisheyeCamera(**size, f=float(obj["f"]), cx=float(obj["cx"]), cy=float(obj["cy"]),
                             theta_max=float(obj.get("theta_max", math.pi / 2)))
    if model == "spherical_harmonic":
        return SHCamera(**size, max_degree=int(obj["max_degree"]), coeffs=np.asarray(obj["coeffs"], dtype=float),
                        psi_extent=tuple(obj.get("psi_extent", FULL_SPHERE)))
    raise ValueError(f"unknown camera model {model!r}")
