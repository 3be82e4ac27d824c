"""2-D electrostatics for coplanar electrode cross-sections.

Solves div(eps grad V) = 0 on a uniform grid with Dirichlet conductors,
Dirichlet-0 far boundaries, and a substrate half-space of relative
permittivity eps_r below z = 0. The discretization is the standard 5-point
variable-coefficient stencil with face coefficients sampled at face
midplanes (lateral faces on the interface row take the mean of the two
media), which keeps the permittivity jump exactly on z = 0 and preserves
second-order convergence. Relaxation is red-black successive
over-relaxation with the usual optimal-omega estimate.

Geometry is snapped to the grid (edges rounded to the nearest grid line,
never more than half a cell) and the snap distance is recorded so runs are
bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ConductorRect", "ElectrodeGeometry2D", "Grid2D", "FieldProfile",
    "ProjectionAxis", "NonConvergenceError",
    "default_device", "solve_laplace", "field_at_height", "project_zeta",
    "gradient_x", "profile_to_text", "grid_to_binary",
]


class NonConvergenceError(RuntimeError):
    """Relaxation failed to reach tolerance; carries the residual history."""

    def __init__(self, message: str, residual_history: list[tuple[int, float]]):
        super().__init__(message)
        self.residual_history = residual_history


@dataclass(frozen=True)
class ConductorRect:
    """Axis-aligned conductor held at a fixed potential (um, V)."""

    x0: float
    x1: float
    z0: float
    z1: float
    potential: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.z1 < self.z0:
            raise ValueError("conductor extents must satisfy x0 <= x1 and z0 <= z1")

    def overlaps(self, other: "ConductorRect") -> bool:
        return not (self.x1 < other.x0 or other.x1 < self.x0
                    or self.z1 < other.z0 or other.z1 < self.z0)


@dataclass(frozen=True)
class ElectrodeGeometry2D:
    """Cross-section geometry: conductors, domain box and substrate."""

    conductors: tuple[ConductorRect, ...]
    x_extent: tuple[float, float]
    z_extent: tuple[float, float]
    substrate_permittivity: float = 3.8
    max_spacing: float | None = None

    def __post_init__(self):
        if not self.conductors:
            raise ValueError("geometry needs at least one conductor")
        if self.substrate_permittivity <= 0:
            raise ValueError("substrate permittivity must be positive")
        for k, c in enumerate(self.conductors):
            if (c.x0 < self.x_extent[0] or c.x1 > self.x_extent[1]
                    or c.z0 < self.z_extent[0] or c.z1 > self.z_extent[1]):
                raise ValueError(f"conductor {k} extends outside the domain")
            for other in self.conductors[k + 1:]:
                if c.overlaps(other):
                    raise ValueError("conductors must not overlap")

    @property
    def top_metal_z(self) -> float:
        return max(c.z1 for c in self.conductors)

    def with_potentials(self, potentials: Sequence[float]) -> "ElectrodeGeometry2D":
        if len(potentials) != len(self.conductors):
            raise ValueError("need one potential per conductor")
        conds = tuple(ConductorRect(c.x0, c.x1, c.z0, c.z1, float(p))
                      for c, p in zip(self.conductors, potentials))
        return ElectrodeGeometry2D(conds, self.x_extent, self.z_extent,
                                   self.substrate_permittivity, self.max_spacing)


def default_device(gap: float = 0.5, width: float = 1.0, thickness: float = 0.15,
                   center_potential: float = 1.0, outer_potential: float = 0.0,
                   margin: float = 10.0,
                   substrate_permittivity: float = 3.8) -> ElectrodeGeometry2D:
    """Three coplanar electrodes on a substrate: outer-gap-center-gap-outer.

    Defaults follow the reference device (150 nm metal, 500 nm gaps, biased
    center electrode) with Dirichlet-0 boundaries `margin` away. The
    returned geometry requires spacing <= 25 nm so the metal thickness is
    resolved by at least six cells.
    """
    x0 = margin
    conds = (
        ConductorRect(x0, x0 + width, 0.0, thickness, outer_potential),
        ConductorRect(x0 + width + gap, x0 + 2 * width + gap, 0.0, thickness,
                      center_potential),
        ConductorRect(x0 + 2 * (width + gap), x0 + 3 * width + 2 * gap, 0.0,
                      thickness, outer_potential),
    )
    device_w = 3 * width + 2 * gap
    return ElectrodeGeometry2D(
        conductors=conds,
        x_extent=(0.0, device_w + 2 * margin),
        z_extent=(-margin, thickness + margin),
        substrate_permittivity=substrate_permittivity,
        max_spacing=0.025,
    )


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Solved potential grid: row-major (z, x), z index increasing upward."""

    potentials: np.ndarray
    spacing: float
    x0: float
    z0: float
    top_metal_z: float
    residual: float
    iterations: int
    snap_max: float
    substrate_permittivity: float

    @property
    def nz(self) -> int:
        return self.potentials.shape[0]

    @property
    def nx(self) -> int:
        return self.potentials.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.spacing * np.arange(self.nx)

    @property
    def z(self) -> np.ndarray:
        return self.z0 + self.spacing * np.arange(self.nz)


def _face_weights(zs: np.ndarray, h: float, eps_sub: float):
    def med(z):
        return np.where(z < 0.0, eps_sub, 1.0)

    nz = len(zs)
    w_up = np.zeros(nz)
    w_dn = np.zeros(nz)
    w_up[:-1] = med(zs[:-1] + h / 2.0)
    w_dn[1:] = med(zs[1:] - h / 2.0)
    # lateral faces of a control volume average the media of its two halves
    lateral = 0.5 * (med(zs + h / 4.0) + med(zs - h / 4.0))
    return w_up, w_dn, lateral


def solve_laplace(geom: ElectrodeGeometry2D, spacing: float, tol: float = 1e-8,
                  max_iter: int | None = None,
                  omega: float | None = None) -> Grid2D:
    """Relax the potential to a normalized residual below tol.

    The residual is max |V_gs - V| / Vscale over free nodes, where V_gs is
    the Gauss-Seidel update and Vscale the largest conductor potential
    magnitude. Raises NonConvergenceError (with the residual history) if the
    iteration cap is hit first.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if geom.max_spacing is not None and spacing > geom.max_spacing + 1e-12:
        raise ValueError(
            f"spacing {spacing} exceeds the geometry's maximum {geom.max_spacing}")
    if tol < 1e-10:
        raise ValueError("tol below 1e-10 is not supported")

    h = spacing
    x0, x1 = geom.x_extent
    z0, z1 = geom.z_extent
    nx = int(round((x1 - x0) / h)) + 1
    nz = int(round((z1 - z0) / h)) + 1
    zs = z0 + h * np.arange(nz)

    v = np.zeros((nz, nx))
    fixed = np.zeros((nz, nx), dtype=bool)
    fixed[0, :] = fixed[-1, :] = True
    fixed[:, 0] = fixed[:, -1] = True

    snap_max = 0.0
    for c in geom.conductors:
        i0 = int(round((c.x0 - x0) / h))
        i1 = int(round((c.x1 - x0) / h))
        j0 = int(round((c.z0 - z0) / h))
        j1 = int(round((c.z1 - z0) / h))
        for want, got in ((c.x0, x0 + i0 * h), (c.x1, x0 + i1 * h),
                          (c.z0, z0 + j0 * h), (c.z1, z0 + j1 * h)):
            snap_max = max(snap_max, abs(want - got))
        v[j0:j1 + 1, i0:i1 + 1] = c.potential
        fixed[j0:j1 + 1, i0:i1 + 1] = True

    w_up, w_dn, lateral = _face_weights(zs, h, geom.substrate_permittivity)
    wn = np.broadcast_to(w_up[:, None], (nz, nx)).copy()
    ws = np.broadcast_to(w_dn[:, None], (nz, nx)).copy()
    we = np.broadcast_to(lateral[:, None], (nz, nx)).copy()
    ww = we.copy()
    we[:, -1] = 0.0
    ww[:, 0] = 0.0
    wsum = wn + ws + we + ww
    wsum_i = wsum[1:-1, 1:-1]

    if omega is None:
        omega = 2.0 / (1.0 + math.sin(math.pi / max(nx, nz)))
    if max_iter is None:
        max_iter = max(5000, 30 * max(nx, nz))
    vscale = max(abs(c.potential) for c in geom.conductors)
    if vscale == 0.0:
        vscale = 1.0

    jj, ii = np.meshgrid(np.arange(nz), np.arange(nx), indexing="ij")
    red = ((ii + jj) % 2 == 0) & ~fixed
    black = ((ii + jj) % 2 == 1) & ~fixed

    def gauss_seidel_target(arr: np.ndarray) -> np.ndarray:
        out = arr.copy()
        out[1:-1, 1:-1] = (wn[1:-1, 1:-1] * arr[2:, 1:-1]
                           + ws[1:-1, 1:-1] * arr[:-2, 1:-1]
                           + we[1:-1, 1:-1] * arr[1:-1, 2:]
                           + ww[1:-1, 1:-1] * arr[1:-1, :-2]) / wsum_i
        return out

    history: list[tuple[int, float]] = []
    residual = math.inf
    it = 0
    check_every = 25
    while it < max_iter:
        for mask in (red, black):
            target = gauss_seidel_target(v)
            np.copyto(v, v + omega * (target - v), where=mask)
        it += 1
        if it % check_every == 0 or it == max_iter:
            target = gauss_seidel_target(v)
            dev = np.abs(target - v)
            dev[fixed] = 0.0
            dev[0, :] = dev[-1, :] = 0.0
            dev[:, 0] = dev[:, -1] = 0.0
            residual = float(dev.max()) / vscale
            history.append((it, residual))
            if residual < tol:
                break
    else:
        raise NonConvergenceError(
            f"no convergence after {max_iter} iterations (residual {residual:.3e})",
            history)

    return Grid2D(potentials=v, spacing=h, x0=x0, z0=z0,
                  top_metal_z=geom.top_metal_z, residual=residual,
                  iterations=it, snap_max=snap_max,
                  substrate_permittivity=geom.substrate_permittivity)


@dataclass(frozen=True, eq=False)
class FieldProfile:
    """E_x, E_z sampled along x at a fixed height above the top metal."""

    x: np.ndarray
    e_x: np.ndarray
    e_z: np.ndarray
    height: float
    spacing: float
    residual: float


@dataclass(frozen=True)
class ProjectionAxis:
    """Maximum-coupling direction: azimuth phi and zenith theta, radians."""

    phi: float
    theta: float

    @classmethod
    def from_degrees(cls, phi_deg: float, theta_deg: float) -> "ProjectionAxis":
        return cls(math.radians(phi_deg), math.radians(theta_deg))


def field_at_height(grid: Grid2D, height: float) -> FieldProfile:
    """E = -grad V on the horizontal line `height` above the top metal.

    Central differences on the two bracketing grid rows, then linear
    interpolation in z. The line must lie above the metal and at least two
    cells below the top boundary.
    """
    if height <= 0:
        raise ValueError("height must be positive (above the top metal surface)")
    h = grid.spacing
    z_s = grid.top_metal_z + height
    if z_s > grid.z0 + (grid.nz - 3) * h:
        raise ValueError("height too close to the top boundary")

    jf = (z_s - grid.z0) / h
    j = int(math.floor(jf))
    frac = jf - j

    v = grid.potentials

    def row_fields(jr: int):
        ex = -(v[jr, 2:] - v[jr, :-2]) / (2.0 * h)
        ez = -(v[jr + 1, 1:-1] - v[jr - 1, 1:-1]) / (2.0 * h)
        return ex, ez

    ex0, ez0 = row_fields(j)
    if frac > 0:
        ex1, ez1 = row_fields(j + 1)
        ex = (1 - frac) * ex0 + frac * ex1
        ez = (1 - frac) * ez0 + frac * ez1
    else:
        ex, ez = ex0, ez0

    return FieldProfile(x=grid.x[1:-1], e_x=ex, e_z=ez, height=height,
                        spacing=h, residual=grid.residual)


def project_zeta(profile: FieldProfile, axis: ProjectionAxis) -> np.ndarray:
    """E_zeta = (E_x cos phi + E_y sin phi) sin theta + E_z cos theta; E_y = 0."""
    return (profile.e_x * math.cos(axis.phi) * math.sin(axis.theta)
            + profile.e_z * math.cos(axis.theta))


def gradient_x(values: np.ndarray, spacing: float, smooth_window: int = 0) -> np.ndarray:
    """d/dx by central differences (one-sided at the ends).

    smooth_window > 1 applies a moving-average of that many samples first.
    """
    values = np.asarray(values, dtype=float)
    if smooth_window > 1:
        kernel = np.ones(smooth_window) / smooth_window
        values = np.convolve(values, kernel, mode="same")
    return np.gradient(values, spacing)


def profile_to_text(profile: FieldProfile, axis: ProjectionAxis | None = None) -> str:
    """Delimiter-separated field profile with a metadata header."""
    header = (f"# height_um={profile.height:.9g} spacing_um={profile.spacing:.9g} "
              f"residual={profile.residual:.6e}")
    cols = ["x_um", "E_x", "E_z"]
    data = [profile.x, profile.e_x, profile.e_z]
    if axis is not None:
        cols.append("E_zeta")
        data.append(project_zeta(profile, axis))
    lines = [header, "# " + "\t".join(cols)]
    for row in zip(*data):
        lines.append("\t".join(f"{v:.12g}" for v in row))
    return "\n".join(lines) + "\n"


def grid_to_binary(grid: Grid2D) -> tuple[bytes, str]:
    """Row-major little-endian float64 payload plus its text sidecar."""
    payload = grid.potentials.astype("<f8").tobytes(order="C")
    sidecar = "\n".join([
        f"nz={grid.nz}",
        f"nx={grid.nx}",
        f"spacing_um={grid.spacing:.12g}",
        f"x0_um={grid.x0:.12g}",
        f"z0_um={grid.z0:.12g}",
        f"top_metal_z_um={grid.top_metal_z:.12g}",
        f"residual={grid.residual:.6e}",
        f"iterations={grid.iterations}",
        f"snap_max_um={grid.snap_max:.12g}",
        "dtype=float64-little-endian",
        "order=row-major-z-then-x",
    ]) + "\n"
    return payload, sidecar
