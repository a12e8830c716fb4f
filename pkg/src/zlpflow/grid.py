"""Log-density grids on S^2 and minimal raster export.

The canonical numeric export is the equirectangular grid: ``res`` columns of
longitude ``phi in [0, 2 pi)`` and ``res / 2`` rows of colatitude at cell
centres ``theta in (0, pi)``. Mollweide and orthographic views evaluate the
same density at the sphere points behind each pixel; pixels outside the
projected disk or ellipse hold NaN.

Longitude and latitude follow the usual convention
``x = (cos lat cos lon, cos lat sin lon, sin lat)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .chain import FlowChain

PROJECTIONS = ("equirect", "mollweide", "ortho")


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Log-density values on a projected pixel grid.

    ``values[i, j]`` belongs to row ``i`` (top to bottom) and column ``j``
    (left to right). For the equirectangular projection rows are colatitude
    cell centres and columns longitudes starting at 0.
    """

    values: np.ndarray
    projection: str
    res: int
    center: tuple[float, float] = (0.0, 0.0)
    fov: float = 180.0

    @property
    def shape(self):
        return self.values.shape

    def quadrature(self) -> float:
        """Riemann sum of ``exp(values) sin(theta) dtheta dphi`` (equirect only)."""
        if self.projection != "equirect":
            raise ValueError("quadrature is defined on the equirectangular grid")
        rows, cols = self.values.shape
        theta = (np.arange(rows) + 0.5) * np.pi / rows
        cell = (np.pi / rows) * (2 * np.pi / cols)
        return float(np.sum(np.exp(self.values) * np.sin(theta)[:, None]) * cell)

    def header_lines(self) -> list[str]:
        rows, cols = self.values.shape
        lines = [
            "zlpflow log-density grid (D=3 only)",
            f"projection={self.projection} res={self.res} rows={rows} cols={cols}",
        ]
        if self.projection == "equirect":
            lines.append("rows: colatitude cell centres theta_i=(i+0.5)*pi/rows; cols: longitude phi_j=2*pi*j/cols")
        elif self.projection == "ortho":
            lines.append(f"center_lon={self.center[0]:.17g} center_lat={self.center[1]:.17g} fov_deg={self.fov:.17g}")
        else:
            lines.append(f"center_lon={self.center[0]:.17g}; nan outside the ellipse")
        return lines

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.header_lines():
                fh.write(f"# {line}\n")
            np.savetxt(fh, self.values, delimiter=",", fmt="%.17g")


def read_grid_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


# projections ------------------------------------------------------------------


def lonlat_to_xyz(lon, lat):
    lon, lat = np.broadcast_arrays(np.asarray(lon, dtype=float), np.asarray(lat, dtype=float))
    c = np.cos(lat)
    return np.stack([c * np.cos(lon), c * np.sin(lon), np.sin(lat)], axis=-1)


def xyz_to_lonlat(x):
    x = np.asarray(x, dtype=float)
    lon = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
    lat = np.arcsin(np.clip(x[..., 2], -1.0, 1.0))
    return lon, lat


def equirect_grid_points(res: int):
    rows = res // 2
    theta = (np.arange(rows) + 0.5) * np.pi / rows
    phi = 2 * np.pi * np.arange(res) / res
    return lonlat_to_xyz(phi[None, :], (np.pi / 2 - theta)[:, None])


def _ortho_frame(center_lon, center_lat):
    """Orthonormal (east, north, out) at the view centre."""
    c = lonlat_to_xyz(center_lon, center_lat)
    east = np.array([-np.sin(center_lon), np.cos(center_lon), 0.0])
    north = np.cross(c, east)
    return east, north, c


def ortho_grid_points(res: int, center_lon: float, center_lat: float, fov_deg: float):
    """Points behind a ``res x res`` orthographic view whose width spans
    ``fov_deg`` degrees of arc through the centre; NaN off the visible disk."""
    half = np.sin(np.radians(fov_deg) / 2) if fov_deg < 180 else 1.0
    s = ((np.arange(res) + 0.5) / res * 2 - 1) * half
    px, py = np.meshgrid(s, -s)  # row 0 at the top
    r2 = px * px + py * py
    inside = r2 <= 1.0
    pz = np.sqrt(np.where(inside, 1.0 - r2, np.nan))
    east, north, out = _ortho_frame(center_lon, center_lat)
    pts = px[..., None] * east + py[..., None] * north + pz[..., None] * out
    pts[~inside] = np.nan
    return pts


def _mollweide_theta(lat):
    """Auxiliary angle solving ``2t + sin 2t = pi sin(lat)``."""
    if abs(abs(lat) - np.pi / 2) < 1e-15:
        return np.sign(lat) * np.pi / 2
    target = np.pi * np.sin(lat)
    return brentq(lambda t: 2 * t + np.sin(2 * t) - target, -np.pi / 2, np.pi / 2, xtol=1e-15)


def mollweide_grid_points(res: int, center_lon: float = 0.0):
    """Points behind a ``res x res/2`` Mollweide map; NaN off the ellipse."""
    rows = res // 2
    x = ((np.arange(res) + 0.5) / res * 2 - 1) * 2 * np.sqrt(2)
    y = (1 - (np.arange(rows) + 0.5) / rows * 2) * np.sqrt(2)
    gx, gy = np.meshgrid(x, y)
    inside = gx**2 / 8 + gy**2 / 2 <= 1.0
    aux = np.arcsin(np.clip(gy / np.sqrt(2), -1, 1))
    lat = np.arcsin(np.clip((2 * aux + np.sin(2 * aux)) / np.pi, -1, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        lon = center_lon + np.pi * gx / (2 * np.sqrt(2) * np.cos(aux))
    pts = lonlat_to_xyz(lon, lat)
    pts[~inside] = np.nan
    return pts


def mollweide_forward(lon, lat, center_lon: float = 0.0):
    """Map coordinates of a point (used for locating features in tests)."""
    t = _mollweide_theta(lat)
    dlon = np.mod(lon - center_lon + np.pi, 2 * np.pi) - np.pi
    return 2 * np.sqrt(2) / np.pi * dlon * np.cos(t), np.sqrt(2) * np.sin(t)


# evaluation -------------------------------------------------------------------


def evaluate_rows(chain: FlowChain, pts, threads: int = 1) -> np.ndarray:
    """``chain.log_prob`` on an (rows, cols, 3) point array, NaN rows kept.

    Rows are distributed over ``threads`` workers; each row is evaluated
    independently so the result does not depend on the thread count.
    """
    if chain.dim != 3:
        raise ValueError("density grids are only defined for D=3")
    rows = pts.shape[0]
    out = np.full(pts.shape[:2], np.nan)

    def row(i):
        p = pts[i]
        ok = np.all(np.isfinite(p), axis=-1)
        if np.any(ok):
            out[i, ok] = chain.log_prob(p[ok] / np.linalg.norm(p[ok], axis=-1, keepdims=True))

    if threads <= 1:
        for i in range(rows):
            row(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(row, range(rows)))
    return out


def density_grid(
    chain: FlowChain,
    res: int,
    projection: str = "equirect",
    center: tuple[float, float] = (0.0, 0.0),
    fov: float = 180.0,
    threads: int = 1,
) -> DensityGrid:
    """Evaluate the chain's log density on a projected grid.

    ``center`` is (longitude, latitude) in degrees; ``fov`` is the
    orthographic field of view in degrees, in (0, 180].
    """
    if projection not in PROJECTIONS:
        raise ValueError(f"projection must be one of {', '.join(PROJECTIONS)}")
    if res < 2 or (res % 2 and projection != "ortho"):
        raise ValueError("res must be an integer >= 2, even unless the projection is ortho")
    lon, lat = center
    if not (-90.0 <= lat <= 90.0) or not np.isfinite(lon):
        raise ValueError("center latitude must lie in [-90, 90] degrees")
    if projection == "equirect":
        pts = equirect_grid_points(res)
    elif projection == "mollweide":
        pts = mollweide_grid_points(res, np.radians(lon))
    else:
        if not 0.0 < fov <= 180.0:
            raise ValueError("fov must lie in (0, 180] degrees")
        pts = ortho_grid_points(res, np.radians(lon), np.radians(lat), fov)
    values = evaluate_rows(chain, pts, threads)
    return DensityGrid(values, projection, res, (float(lon), float(lat)), float(fov))


# raster export ----------------------------------------------------------------


def _scale_to_bytes(values) -> np.ndarray:
    finite = np.isfinite(values)
    out = np.zeros(values.shape)
    if np.any(finite):
        lo, hi = np.min(values[finite]), np.max(values[finite])
        span = hi - lo if hi > lo else 1.0
        out[finite] = (values[finite] - lo) / span
    return out, finite


def _heat(t):
    """Black -> red -> yellow -> white colour ramp."""
    r = np.clip(3 * t, 0, 1)
    g = np.clip(3 * t - 1, 0, 1)
    b = np.clip(3 * t - 2, 0, 1)
    return np.stack([r, g, b], axis=-1)


def write_raster(path, values, heatmap: bool | None = None) -> None:
    """Write an 8-bit binary PGM (grayscale) or PPM (heatmap) image.

    The log density is mapped linearly from its minimum (black) to its
    maximum (white). Pixels without a value are drawn mid-grey. The format
    follows the file suffix unless ``heatmap`` is given.
    """
    path = Path(path)
    if heatmap is None:
        heatmap = path.suffix.lower() == ".ppm"
    t, finite = _scale_to_bytes(np.asarray(values, dtype=float))
    rows, cols = t.shape
    if heatmap:
        rgb = np.round(_heat(t) * 255).astype(np.uint8)
        rgb[~finite] = 128
        data, magic = rgb.tobytes(), b"P6"
    else:
        g = np.round(t * 255).astype(np.uint8)
        g[~finite] = 128
        data, magic = g.tobytes(), b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{cols} {rows}\n255\n".encode())
        fh.write(data)


__all__ = [
    "DensityGrid",
    "PROJECTIONS",
    "density_grid",
    "equirect_grid_points",
    "evaluate_rows",
    "lonlat_to_xyz",
    "mollweide_forward",
    "mollweide_grid_points",
    "ortho_grid_points",
    "read_grid_csv",
    "write_raster",
    "xyz_to_lonlat",
]
