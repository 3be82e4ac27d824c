"""NV ground-state spin model.

Builds and diagonalizes the spin Hamiltonian of a single NV center (electron
S=1, optionally the host nitrogen nuclear spin) under static magnetic and
electric fields, and derives transition frequencies, Stark shifts and
microwave driving efficiencies.

Units are fixed package-wide: energies in MHz, magnetic fields in G,
electric fields in V/um, lengths in um, times in us.

Conventions
-----------
* NV frame: z along the NV axis, x set by the projection of one carbon bond.
* Electron basis ordered m_S = (+1, 0, -1); nuclear basis m_I descending.
* Full Hamiltonian:

    H = D Sz^2 + gB B.S + A_par Sz Iz + A_perp (Sx Ix + Sy Iy) + gN B.I
        + Q Iz^2 + d_par Ez Sz^2 + d_perp Ex (Sy^2 - Sx^2)
        + d_perp Ey (Sx Sy + Sy Sx)

* Under a transverse field B_perp the upper eigenstates are the mixtures
  |+-> ~ (|+1> +- e^{2i phi_B} |-1>)/sqrt(2), split by approximately
  gB^2 B_perp^2 / D - 2 d_perp E_perp cos(2 phi_B + phi_E).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "NVSpecies",
    "FieldEnvironment",
    "SpinHamiltonian",
    "EigenSystem",
    "TransitionEntry",
    "TransitionTable",
    "spin1_operators",
    "nuclear_operators",
    "build_hamiltonian",
    "diagonalize",
    "perturbative_splitting",
    "transition_elements",
    "classify_manifolds",
    "manifold_transitions",
    "odmr_spectrum",
    "matrix_rows",
]

# Nuclear gyromagnetic ratios in MHz/G. Not part of the device data set;
# standard tabulated values, configurable on NVSpecies.
GAMMA_N15 = -4.316e-4
GAMMA_N14 = +3.077e-4


@dataclass(frozen=True)
class NVSpecies:
    """Constants of one NV center.

    isotope   -- "N15" (I=1/2) or "N14" (I=1)
    d_gs      -- ground-state zero-field splitting, MHz
    gamma_b   -- electron gyromagnetic ratio, MHz/G
    gamma_n   -- nuclear gyromagnetic ratio, MHz/G
    a_par     -- axial hyperfine constant, MHz
    a_perp    -- transverse hyperfine constant, MHz
    quadrupole-- nuclear quadrupole constant, MHz (N14 only, ignored for N15)
    d_perp    -- transverse electric coupling, MHz*um/V
    d_par     -- axial electric coupling, MHz*um/V
    """

    isotope: str
    d_gs: float = 2870.0
    gamma_b: float = 2.8
    gamma_n: float = GAMMA_N15
    a_par: float = 3.65
    a_perp: float = 3.03
    quadrupole: float = 0.0
    d_perp: float = 0.17
    d_par: float = 0.0035

    def __post_init__(self):
        if self.isotope not in ("N15", "N14"):
            raise ValueError(f"unknown isotope {self.isotope!r}")
        for name in ("d_gs", "gamma_b", "gamma_n", "a_par", "a_perp",
                     "quadrupole", "d_perp", "d_par"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def n15(cls, **overrides) -> "NVSpecies":
        return replace(cls(isotope="N15"), **overrides) if overrides else cls(isotope="N15")

    @classmethod
    def n14(cls, **overrides) -> "NVSpecies":
        base = cls(isotope="N14", gamma_n=GAMMA_N14, a_par=2.2, a_perp=2.2,
                   quadrupole=-5.01)
        return replace(base, **overrides) if overrides else base

    @property
    def nuclear_spin(self) -> float:
        return 0.5 if self.isotope == "N15" else 1.0

    @property
    def nuclear_dim(self) -> int:
        return 2 if self.isotope == "N15" else 3


@dataclass(frozen=True)
class FieldEnvironment:
    """Static magnetic (G) and electric (V/um) fields in the NV frame."""

    b: tuple[float, float, float] = (0.0, 0.0, 0.0)
    e: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for v in (*self.b, *self.e):
            if not math.isfinite(v):
                raise ValueError("field components must be finite")

    @classmethod
    def transverse(cls, b_perp: float, phi_b: float = 0.0,
                   e_perp: float = 0.0, phi_e: float = 0.0,
                   bz: float = 0.0, ez: float = 0.0) -> "FieldEnvironment":
        return cls(
            b=(b_perp * math.cos(phi_b), b_perp * math.sin(phi_b), bz),
            e=(e_perp * math.cos(phi_e), e_perp * math.sin(phi_e), ez),
        )

    @property
    def b_perp(self) -> float:
        return math.hypot(self.b[0], self.b[1])

    @property
    def phi_b(self) -> float:
        return math.atan2(self.b[1], self.b[0])

    @property
    def e_perp(self) -> float:
        return math.hypot(self.e[0], self.e[1])

    @property
    def phi_e(self) -> float:
        return math.atan2(self.e[1], self.e[0])


@dataclass(frozen=True, eq=False)
class SpinHamiltonian:
    """Hermitian Hamiltonian matrix in MHz, with its basis dimension."""

    matrix: np.ndarray
    dim: int

    def hermiticity_defect(self) -> float:
        scale = max(1.0, float(np.abs(self.matrix).max()))
        return float(np.abs(self.matrix - self.matrix.conj().T).max()) / scale


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Sorted real eigenvalues (MHz) and orthonormal eigenvector columns."""

    energies: np.ndarray
    states: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.energies)


@dataclass(frozen=True)
class TransitionEntry:
    i: int
    j: int
    frequency: float
    efficiency: float


@dataclass(frozen=True, eq=False)
class TransitionTable:
    entries: tuple[TransitionEntry, ...]
    mw_direction: tuple[float, float, float]


def spin1_operators() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sx, Sy, Sz for S=1 in the (+1, 0, -1) basis."""
    sx = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / math.sqrt(2)
    sy = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / math.sqrt(2)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


def nuclear_operators(spin: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ix, Iy, Iz for I=1/2 or I=1, basis m_I descending."""
    if spin == 0.5:
        ix = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
        iy = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
        iz = np.diag([0.5, -0.5]).astype(complex)
    elif spin == 1.0:
        ix, iy, iz = spin1_operators()
    else:
        raise ValueError(f"unsupported nuclear spin {spin}")
    return ix, iy, iz


def build_hamiltonian(species: NVSpecies, env: FieldEnvironment,
                      include_nuclear: bool = True) -> SpinHamiltonian:
    """Assemble the ground-state Hamiltonian for the given fields.

    With include_nuclear=False only the electron terms are kept (3x3);
    otherwise the electron (X) nuclear product space is used (6x6 for N15,
    9x9 for N14).
    """
    sx, sy, sz = spin1_operators()
    bx, by, bz = env.b
    ex, ey, ez = env.e

    he = species.d_gs * (sz @ sz)
    he += species.gamma_b * (bx * sx + by * sy + bz * sz)
    he += species.d_par * ez * (sz @ sz)
    he += species.d_perp * ex * (sy @ sy - sx @ sx)
    he += species.d_perp * ey * (sx @ sy + sy @ sx)

    if not include_nuclear:
        return SpinHamiltonian(matrix=he, dim=3)

    ix, iy, iz = nuclear_operators(species.nuclear_spin)
    nd = ix.shape[0]
    ie, inuc = np.eye(3), np.eye(nd)

    h = np.kron(he, inuc)
    h += species.a_par * np.kron(sz, iz)
    h += species.a_perp * (np.kron(sx, ix) + np.kron(sy, iy))
    h += species.gamma_n * (bx * np.kron(ie, ix) + by * np.kron(ie, iy)
                            + bz * np.kron(ie, iz))
    if species.isotope == "N14":
        h += species.quadrupole * np.kron(ie, iz @ iz)
    return SpinHamiltonian(matrix=h, dim=3 * nd)


def diagonalize(h: SpinHamiltonian, herm_tol: float = 1e-12) -> EigenSystem:
    """Eigen-decompose a Hermitian Hamiltonian.

    Eigenvalues come out ascending. Exact degeneracies are ordered by the
    index of each vector's largest-magnitude component, and every vector is
    phase-fixed so that component is real and positive; the decomposition is
    therefore deterministic for identical input.
    """
    if h.hermiticity_defect() > herm_tol:
        raise ValueError("matrix is not Hermitian within tolerance")
    energies, states = np.linalg.eigh(h.matrix)

    lead = np.abs(states).argmax(axis=0)
    order = np.lexsort((lead, np.round(energies / 1e-9)))
    energies = energies[order]
    states = states[:, order]
    lead = lead[order]
    phases = states[lead, np.arange(states.shape[1])]
    phases = phases / np.abs(phases)
    states = states / phases[np.newaxis, :]
    return EigenSystem(energies=energies, states=states)


def perturbative_splitting(species: NVSpecies, b_perp: float, phi_b: float = 0.0,
                           e_perp: float = 0.0, phi_e: float = 0.0) -> float:
    """Closed-form |+>/|-> splitting under transverse B and E fields (MHz).

    Delta = gB^2 B_perp^2 / D  -  2 d_perp E_perp cos(2 phi_B + phi_E)
    """
    if b_perp < 0 or e_perp < 0:
        raise ValueError("field magnitudes must be non-negative")
    zeeman = (species.gamma_b * b_perp) ** 2 / species.d_gs
    stark = 2.0 * species.d_perp * e_perp * math.cos(2.0 * phi_b + phi_e)
    return zeeman - stark


def transition_elements(eig: EigenSystem, mw_direction: Sequence[float]) -> TransitionTable:
    """Driving efficiencies |<i| B1.S |j>|^2 for all level pairs i<j.

    The microwave field is linearly polarized along mw_direction; S acts on
    the electron subspace only. Efficiencies are normalized so the strongest
    entry is 1.
    """
    n = np.asarray(mw_direction, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("mw_direction must be non-zero")
    n = n / norm

    dim = eig.dim
    if dim % 3 != 0:
        raise ValueError("eigensystem must contain an electron spin-1 subspace")
    nd = dim // 3

    sx, sy, sz = spin1_operators()
    op = np.kron(n[0] * sx + n[1] * sy + n[2] * sz, np.eye(nd))

    amps = eig.states.conj().T @ op @ eig.states
    entries = []
    for i in range(dim):
        for j in range(i + 1, dim):
            entries.append((i, j, abs(eig.energies[j] - eig.energies[i]),
                            abs(amps[i, j]) ** 2))
    peak = max(e[3] for e in entries)
    if peak == 0.0:
        peak = 1.0
    table = tuple(TransitionEntry(i, j, f, w / peak) for i, j, f, w in entries)
    return TransitionTable(entries=table, mw_direction=tuple(n))


def classify_manifolds(eig: EigenSystem, nuclear_dim: int) -> dict[str, list[int]]:
    """Group eigenstates into the m_S=0-like, |->-like and |+>-like manifolds.

    States with electron m_S=0 population above 1/2 form the "0" group; the
    remaining states split by energy, the upper half being the |+> manifold
    (pushed up by the transverse Zeeman interaction).
    """
    dim = eig.dim
    if dim != 3 * nuclear_dim:
        raise ValueError("nuclear_dim inconsistent with eigensystem dimension")
    p0 = np.zeros((3, 3))
    p0[1, 1] = 1.0
    proj = np.kron(p0, np.eye(nuclear_dim))
    pops = np.real(np.einsum("ik,ij,jk->k", eig.states.conj(), proj, eig.states))

    zero = [k for k in range(dim) if pops[k] > 0.5]
    others = sorted((k for k in range(dim) if pops[k] <= 0.5),
                    key=lambda k: eig.energies[k])
    return {"0": zero, "-": others[:nuclear_dim], "+": others[nuclear_dim:]}


def manifold_transitions(table: TransitionTable, eig: EigenSystem,
                         nuclear_dim: int, frm: str = "0",
                         to: str = "+") -> list[TransitionEntry]:
    """Entries of `table` connecting two manifolds (e.g. the |0>->|+> set)."""
    groups = classify_manifolds(eig, nuclear_dim)
    a, b = set(groups[frm]), set(groups[to])
    return [t for t in table.entries
            if (t.i in a and t.j in b) or (t.i in b and t.j in a)]


def odmr_spectrum(species: NVSpecies, env: FieldEnvironment,
                  mw_direction: Sequence[float], line_width: float,
                  frequencies: np.ndarray | None = None,
                  include_nuclear: bool = True) -> np.ndarray:
    """Pulsed ODMR spectrum: relative fluorescence dip vs MW frequency.

    Each transition out of the m_S=0 manifold contributes a Lorentzian dip
    centered at its frequency, weighted by its driving efficiency; the
    spectrum is normalized to a unit maximum dip. Returns an (n, 2) array of
    (frequency MHz, relative contrast) rows.
    """
    if line_width <= 0:
        raise ValueError("line_width must be positive")
    eig = diagonalize(build_hamiltonian(species, env, include_nuclear))
    table = transition_elements(eig, mw_direction)
    nd = eig.dim // 3
    lines = (manifold_transitions(table, eig, nd, "0", "-")
             + manifold_transitions(table, eig, nd, "0", "+"))

    centers = np.array([t.frequency for t in lines])
    weights = np.array([t.efficiency for t in lines])
    if frequencies is None:
        lo = centers.min() - 10.0 * line_width
        hi = centers.max() + 10.0 * line_width
        frequencies = np.linspace(lo, hi, 2001)
    frequencies = np.asarray(frequencies, dtype=float)

    half = line_width / 2.0
    dip = np.zeros_like(frequencies)
    for c, w in zip(centers, weights):
        dip += w * half**2 / ((frequencies - c) ** 2 + half**2)
    peak = dip.max()
    if peak > 0:
        dip = dip / peak
    return np.column_stack([frequencies, dip])


def matrix_rows(h: SpinHamiltonian) -> str:
    """Plain-text dump of the Hamiltonian, one row per line, for fixture diffs."""
    lines = []
    for row in h.matrix:
        lines.append("\t".join(f"{v.real:+.12e}{v.imag:+.12e}j" for v in row))
    return "\n".join(lines) + "\n"
