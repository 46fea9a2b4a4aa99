"""Electron (S=1) x nuclear (I=1/2) spin Hamiltonian of the NV centre.

Builds the 6x6 Hamiltonian

    H = D Sz^2 + g mu_B B.S + E (Sx^2 - Sy^2) - A S.I

for either the orbital ground or excited manifold, diagonalises it, labels
eigenstates by their dominant product state ``(m_s, m_I)``, follows labels
through field sweeps by eigenvector overlap, builds ESR transition tables and
locates level (anti)crossings.

Conventions
-----------
- Energies in MHz, fields in Gauss, angles in degrees.
- Product basis order ``(+1 up, +1 down, 0 up, 0 down, -1 up, -1 down)``.
- ``theta`` is measured from the NV axis, ``phi`` from the strain x-axis.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment

from . import kernels
from .constants import BASIS_LABELS, MU_B_MHZ_PER_G

#: Eigenvalues closer than this (MHz) are treated as one degenerate cluster.
DEGENERACY_TOL = 1e-6

Label = tuple[int, float]


class Manifold(str, enum.Enum):
    GROUND = "ground"
    EXCITED = "excited"

    @classmethod
    def parse(cls, value) -> "Manifold":
        if isinstance(value, cls):
            return value
        aliases = {"gs": cls.GROUND, "es": cls.EXCITED}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


class ContinuationError(ValueError):
    """Raised when adjacent sweep points cannot be matched unambiguously."""


@dataclass(frozen=True)
class SpinSystemParams:
    """Hamiltonian coefficients of one manifold (MHz; ``g`` dimensionless)."""

    D: float
    E: float = 0.0
    A: float = 0.0
    g: float = 2.0
    manifold: Manifold = Manifold.EXCITED

    def __post_init__(self):
        object.__setattr__(self, "manifold", Manifold.parse(self.manifold))
        for name in ("D", "E", "A", "g"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.D <= 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if self.E < 0:
            raise ValueError(f"E must be non-negative, got {self.E}")
        if self.g <= 0:
            raise ValueError(f"g must be positive, got {self.g}")

    def replace(self, **changes) -> "SpinSystemParams":
        return replace(self, **changes)


#: Excited-state values fitted for NV1.
ES_PARAMS = SpinSystemParams(D=1425.0, E=70.0, A=61.0, g=2.01, manifold=Manifold.EXCITED)
#: Ground-state values (15N hyperfine).
GS_PARAMS = SpinSystemParams(D=2870.0, E=0.0, A=3.03, g=2.0028, manifold=Manifold.GROUND)


def default_params(manifold) -> SpinSystemParams:
    return GS_PARAMS if Manifold.parse(manifold) is Manifold.GROUND else ES_PARAMS


@dataclass(frozen=True)
class FieldPoint:
    """Applied field: magnitude (G), polar angle from the NV axis and azimuth (deg)."""

    magnitude: float
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not self.magnitude >= 0:
            raise ValueError(f"field magnitude must be >= 0, got {self.magnitude}")
        if not 0 <= self.theta <= 180:
            raise ValueError(f"theta must lie in [0, 180], got {self.theta}")
        if not 0 <= self.phi < 360:
            raise ValueError(f"phi must lie in [0, 360), got {self.phi}")

    @property
    def vector(self) -> np.ndarray:
        th, ph = np.deg2rad(self.theta), np.deg2rad(self.phi)
        return self.magnitude * np.array(
            [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)]
        )

    def reversed(self) -> "FieldPoint":
        return FieldPoint(self.magnitude, 180.0 - self.theta, (self.phi + 180.0) % 360.0)


class OperatorSet(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray


def spin_operators(spin) -> OperatorSet:
    """Cartesian spin matrices for spin 1/2 or 1, basis ordered m = s ... -s."""
    s = Fraction(spin).limit_denominator(2)
    if s not in (Fraction(1, 2), Fraction(1)) or abs(float(s) - float(spin)) > 1e-12:
        raise ValueError(f"unsupported spin {spin}; expected 1/2 or 1")
    s = float(s)
    m = np.arange(s, -s - 1, -1)
    dim = m.size
    # <m+1| S+ |m> = sqrt(s(s+1) - m(m+1))
    splus = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        splus[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    sminus = splus.conj().T
    return OperatorSet(
        x=(splus + sminus) / 2,
        y=(splus - sminus) / 2j,
        z=np.diag(m).astype(complex),
    )


def _electron_nuclear_operators():
    s = spin_operators(1)
    i = spin_operators(0.5)
    eye2 = np.eye(2)
    sx, sy, sz = (np.kron(op, eye2) for op in s)
    return {
        "zfs": np.kron(s.z @ s.z, eye2),
        "strain": np.kron(s.x @ s.x - s.y @ s.y, eye2),
        "zeeman": np.stack([sx, sy, sz]),
        "hyperfine": sum(np.kron(a, b) for a, b in zip(s, i)),
    }


_OPS = _electron_nuclear_operators()


def electron_spin_operator(axis) -> np.ndarray:
    """``n.S`` acting on the electron, identity on the nucleus (6x6)."""
    n = np.asarray(axis, dtype=float)
    return np.tensordot(n, _OPS["zeeman"], axes=1)


def _field_vectors(fields: Sequence[FieldPoint]) -> np.ndarray:
    return np.array([f.vector for f in fields]).reshape(-1, 3)


def build_hamiltonians(params: SpinSystemParams, fields: Sequence[FieldPoint]) -> np.ndarray:
    """Stack of Hamiltonians, shape ``(len(fields), 6, 6)``."""
    static = params.D * _OPS["zfs"] + params.E * _OPS["strain"] - params.A * _OPS["hyperfine"]
    bvec = params.g * MU_B_MHZ_PER_G * _field_vectors(fields)
    return static[None] + np.einsum("fa,aij->fij", bvec, _OPS["zeeman"])


def build_hamiltonian(params: SpinSystemParams, field: FieldPoint) -> np.ndarray:
    """6x6 Hamiltonian in MHz for one field point."""
    return build_hamiltonians(params, [field])[0]


@dataclass
class EnergyLevels:
    """Eigenvalues (MHz), column eigenvectors and per-level labels.

    ``labels[k]`` is the ``(m_s, m_I)`` pair of the dominant product
    component of level ``k`` and ``purity[k]`` its squared overlap.
    """

    energies: np.ndarray
    vectors: np.ndarray
    labels: list[Label]
    purity: np.ndarray

    def __len__(self):
        return len(self.energies)

    def index(self, label: Label) -> int:
        label = _norm_label(label)
        matches = [k for k, lab in enumerate(self.labels) if lab == label]
        if len(matches) != 1:
            raise KeyError(f"label {label} matches {len(matches)} levels")
        return matches[0]

    def energy(self, label: Label) -> float:
        return float(self.energies[self.index(label)])


def _norm_label(label) -> Label:
    ms, mi = label
    return int(ms), float(mi)


def _clusters(w: np.ndarray, tol: float = DEGENERACY_TOL):
    """Index groups of consecutive (sorted) eigenvalues closer than ``tol``."""
    order = np.argsort(w, kind="stable")
    groups, current = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if w[b] - w[a] < tol:
            current.append(b)
        else:
            groups.append(current)
            current = [b]
    groups.append(current)
    return [g for g in groups if len(g) > 1]


def _align_degenerate(w, vecs, reference, tol: float = DEGENERACY_TOL):
    """Rotate each degenerate eigenspace onto its best-matching reference vectors."""
    out = vecs.copy()
    for idx in _clusters(w, tol):
        block = vecs[:, idx]
        proj = block.conj().T @ reference
        sel = np.argsort(-np.linalg.norm(proj, axis=0), kind="stable")[: len(idx)]
        u, _, vh = np.linalg.svd(proj[:, sel])
        rotated = block @ (u @ vh)
        # keep each column as close as possible to the one it replaces
        rows, cols = linear_sum_assignment(-np.abs(block.conj().T @ rotated) ** 2)
        out[:, np.asarray(idx)[rows]] = rotated[:, cols]
    return out


# m_s sectors used for labelling: (|m_s|, m_I); the +-1 sector holds two levels
_UNMIXED = 1e-12
_SECTORS = [(0, 0.5), (0, -0.5), (1, 0.5), (1, 0.5), (1, -0.5), (1, -0.5)]


def label_levels(w, vecs, field_sign: float = 1.0):
    """``(m_s, m_I)`` labels and purities for the 6 columns of ``vecs``.

    The nuclear state and ``|m_s|`` come from the dominant product weight
    (unique assignment). Within each ``(+-1, m_I)`` pair, which ``E`` mixes
    strongly at low field, the upper level is ``m_s=+1`` for ``B_z >= 0``;
    this ordering never flips across the strain anticrossing. Pairs with no
    +1/-1 admixture (``E = 0``) are labelled by weight instead.
    """
    weights = np.abs(vecs) ** 2
    sector = np.empty((len(_SECTORS), weights.shape[1]))
    for c, (ams, mi) in enumerate(_SECTORS):
        rows = [k for k, lab in enumerate(BASIS_LABELS) if abs(lab[0]) == ams and lab[1] == mi]
        sector[c] = weights[rows].sum(axis=0)
    rows, cols = linear_sum_assignment(-sector)
    labels = [None] * weights.shape[1]
    for c, j in zip(rows, cols):
        if _SECTORS[c][0] == 0:
            labels[j] = _SECTORS[c]
    for mi in (0.5, -0.5):
        pair = [j for c, j in zip(rows, cols) if _SECTORS[c] == (1, mi)]
        lower, upper = sorted(pair, key=lambda j: w[j])
        plus, minus = BASIS_LABELS.index((1, mi)), BASIS_LABELS.index((-1, mi))
        unmixed = all(min(weights[plus, j], weights[minus, j]) < _UNMIXED for j in pair)
        if unmixed or w[upper] - w[lower] < DEGENERACY_TOL:
            # +1 and -1 not coupled (E = 0): levels may truly cross, label by weight
            lower, upper = sorted(pair, key=lambda j: weights[plus, j] * field_sign)
        labels[upper] = (1 if field_sign >= 0 else -1, mi)
        labels[lower] = (-1 if field_sign >= 0 else 1, mi)
    purity = np.array([weights[BASIS_LABELS.index(lab), j] for j, lab in enumerate(labels)])
    return labels, purity


def eigensystem(H, *, tol: float = 1e-9, field_sign: float = 1.0) -> EnergyLevels:
    """Diagonalise a Hermitian Hamiltonian; levels in ascending energy.

    Degenerate eigenspaces are rotated toward the product basis before
    labelling (see :func:`label_levels`). ``purity`` is the squared overlap
    with the labelled product state.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("Hamiltonian must be a square matrix")
    scale = np.linalg.norm(H)
    if np.linalg.norm(H - H.conj().T) > tol * max(scale, np.finfo(float).tiny):
        raise ValueError("Hamiltonian is not Hermitian within tolerance")
    w, v = kernels.eigh_batch(H)
    w = np.asarray(w)
    if H.shape[0] == len(BASIS_LABELS):
        v = _align_degenerate(w, v, np.eye(H.shape[0]))
        labels, purity = label_levels(w, v, field_sign)
    else:
        labels, purity = [None] * len(w), np.abs(v).max(axis=0) ** 2
    return EnergyLevels(w, v, labels, purity)


def _field_sign(field: FieldPoint) -> float:
    return -1.0 if field.theta > 90 else 1.0


def levels_at(params: SpinSystemParams, field: FieldPoint) -> EnergyLevels:
    return eigensystem(build_hamiltonian(params, field), field_sign=_field_sign(field))


def _match(prev_w, prev_vecs, w, vecs):
    """Permutation ``perm`` with new level ``perm[L]`` continuing old label ``L``."""
    vecs = _align_degenerate(w, vecs, prev_vecs)
    prev = _align_degenerate(prev_w, prev_vecs, vecs)
    overlap = np.abs(prev.conj().T @ vecs) ** 2
    rows, cols = linear_sum_assignment(-overlap)
    perm = np.empty(len(w), dtype=int)
    perm[rows] = cols
    worst = overlap[rows, cols].min()
    return perm, vecs, worst


def _label_first(w, vecs, field_sign=1.0):
    vecs = _align_degenerate(w, vecs, np.eye(len(w)))
    labels, _ = label_levels(w, vecs, field_sign)
    perm = np.array([labels.index(lab) for lab in BASIS_LABELS])
    return perm, vecs


@dataclass
class LevelSweep:
    """Energies along a field sweep, columns ordered by continuation label.

    Column ``L`` follows the level that started at product state
    ``labels[L]`` (see :data:`nvesr.constants.BASIS_LABELS`).
    """

    fields: list[FieldPoint]
    energies: np.ndarray
    vectors: np.ndarray
    purity: np.ndarray
    labels: tuple[Label, ...] = field(default=BASIS_LABELS)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.array([f.magnitude for f in self.fields])

    def column(self, label: Label) -> int:
        return self.labels.index(_norm_label(label))

    def energy(self, label: Label) -> np.ndarray:
        return self.energies[:, self.column(label)]

    def levels(self, k: int) -> EnergyLevels:
        return EnergyLevels(
            self.energies[k].copy(), self.vectors[k].copy(), list(self.labels), self.purity[k].copy()
        )

    def sorted_energies(self) -> np.ndarray:
        return np.sort(self.energies, axis=1)


def _continue(params, fields, start_w=None, start_vecs=None):
    H = build_hamiltonians(params, fields)
    w_all, v_all = kernels.eigh_batch(H)
    n = len(BASIS_LABELS)
    energies = np.empty((len(fields), n))
    vectors = np.empty((len(fields), n, n), dtype=complex)
    prev_w, prev_v = start_w, start_vecs
    field_sign = _field_sign(fields[0])
    for k, (w, v) in enumerate(zip(w_all, v_all)):
        if prev_v is None:
            perm, v = _label_first(w, v, field_sign)
        else:
            perm, v, worst = _match(prev_w, prev_v, w, v)
            if worst <= 0.5:
                lo = fields[k - 1].magnitude if k else float("nan")
                raise ContinuationError(
                    f"ambiguous level continuation between B={lo:.6g} G and "
                    f"B={fields[k].magnitude:.6g} G (overlap {worst:.3f}); refine the sweep step"
                )
        energies[k] = w[perm]
        vectors[k] = v[:, perm]
        prev_w, prev_v = energies[k], vectors[k]
    return energies, vectors


def sweep_levels(params: SpinSystemParams, fields: Sequence[FieldPoint]) -> LevelSweep:
    """Diagonalise along ``fields`` and follow each level by maximal overlap."""
    fields = list(fields)
    if not fields:
        raise ValueError("empty field sweep")
    mags = np.array([f.magnitude for f in fields])
    if np.any(np.diff(mags) < 0):
        raise ValueError("fields must be sorted by magnitude")
    energies, vectors = _continue(params, fields)
    return LevelSweep(fields, energies, vectors, np.max(np.abs(vectors) ** 2, axis=1))


def field_sweep(start: float, stop: float, step: float, theta: float = 0.0, phi: float = 0.0):
    """Evenly spaced :class:`FieldPoint` list from ``start`` to ``stop`` inclusive."""
    if step <= 0:
        raise ValueError("sweep step must be positive")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [FieldPoint(float(start + k * step), theta, phi) for k in range(n)]


@dataclass(frozen=True)
class Transition:
    from_label: Label
    to_label: Label
    frequency: float
    strength: float
    manifold: Manifold = Manifold.EXCITED

    @property
    def key(self) -> tuple[Label, Label]:
        return self.from_label, self.to_label


def transition_table(
    levels: EnergyLevels,
    drive_axis=(1.0, 0.0, 0.0),
    populated_label: int = 0,
    *,
    strength_threshold: float = 0.01,
    manifold=Manifold.EXCITED,
) -> list[Transition]:
    """ESR lines out of the levels labelled ``m_s = populated_label``.

    Strength is ``|<f| n.S |i>|^2`` for unit drive direction ``n``; lines
    weaker than ``strength_threshold`` times the strongest are dropped.
    """
    n = np.asarray(drive_axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("drive axis must be nonzero")
    ms_labels = [lab[0] for lab in levels.labels]
    if populated_label not in ms_labels:
        raise ValueError(f"no level labelled m_s={populated_label}")
    manifold = Manifold.parse(manifold)
    drive = electron_spin_operator(n / norm)
    amp = levels.vectors.conj().T @ drive @ levels.vectors
    init = [k for k, ms in enumerate(ms_labels) if ms == populated_label]
    final = [k for k in range(len(levels)) if k not in init]
    lines = []
    for i in init:
        for f in final:
            lines.append(
                Transition(
                    from_label=levels.labels[i],
                    to_label=levels.labels[f],
                    frequency=float(abs(levels.energies[f] - levels.energies[i])),
                    strength=float(abs(amp[f, i]) ** 2),
                    manifold=manifold,
                )
            )
    if not lines:
        return []
    cutoff = strength_threshold * max(t.strength for t in lines)
    kept = [t for t in lines if t.strength >= cutoff and t.strength > 0]
    return sorted(kept, key=lambda t: t.frequency)


def transitions_at(
    params: SpinSystemParams,
    field: FieldPoint,
    drive_axis=(1.0, 0.0, 0.0),
    populated_label: int = 0,
    *,
    strength_threshold: float = 0.01,
) -> list[Transition]:
    return transition_table(
        levels_at(params, field),
        drive_axis,
        populated_label,
        strength_threshold=strength_threshold,
        manifold=params.manifold,
    )


@dataclass(frozen=True)
class CrossingPoint:
    field: float
    level_pair: tuple[Label, Label]
    min_gap: float


def find_crossings(
    params: SpinSystemParams,
    field_range: tuple[float, float],
    orientation: tuple[float, float] = (0.0, 0.0),
    level_pair: tuple[Label, Label] = ((0, 0.5), (-1, 0.5)),
    *,
    step: float | None = None,
    resolution: float = 0.01,
) -> list[CrossingPoint]:
    """Local minima of the gap between two continuation-labelled levels.

    A sign change of the signed gap is a true crossing (``min_gap = 0``),
    located by root bracketing. Other minima are refined by bisection on the
    numerical gap derivative until the bracket is narrower than
    ``resolution`` (G).
    """
    lo, hi = map(float, field_range)
    if not lo < hi:
        raise ValueError("field range must satisfy B_lo < B_hi")
    theta, phi = orientation
    a, b = (BASIS_LABELS.index(_norm_label(lab)) for lab in level_pair)
    pair = (BASIS_LABELS[a], BASIS_LABELS[b])
    if step is None:
        step = min(0.25, (hi - lo) / 200)
    n = int(np.ceil((hi - lo) / step)) + 1
    grid = np.linspace(lo, hi, n)
    fields = [FieldPoint(x, theta, phi) for x in grid]
    energies, vectors = _continue(params, fields)
    gap = energies[:, a] - energies[:, b]

    def signed_gap(x, k):
        # single continuation step from grid point k
        e, _ = _continue(params, [FieldPoint(x, theta, phi)], energies[k], vectors[k])
        return e[0, a] - e[0, b]

    found = []
    crossed = set()
    for k in range(n - 1):
        if gap[k] == 0.0 or np.sign(gap[k]) != np.sign(gap[k + 1]):
            if gap[k + 1] == 0.0:
                continue
            x = grid[k] if gap[k] == 0.0 else brentq(
                signed_gap, grid[k], grid[k + 1], args=(k,), xtol=1e-9 * max(1.0, hi)
            )
            found.append(CrossingPoint(float(x), pair, 0.0))
            crossed.update((k, k + 1))

    mag = np.abs(gap)
    for k in range(1, n - 1):
        if k in crossed or not (mag[k] <= mag[k - 1] and mag[k] < mag[k + 1]):
            continue
        left, right = grid[k - 1], grid[k + 1]
        h = resolution / 10

        def slope(x):
            return abs(signed_gap(x + h, k - 1)) - abs(signed_gap(x - h, k - 1))

        while right - left > resolution:
            mid = 0.5 * (left + right)
            if slope(mid) > 0:
                right = mid
            else:
                left = mid
        x = 0.5 * (left + right)
        found.append(CrossingPoint(float(x), pair, float(abs(signed_gap(x, k - 1)))))
    return sorted(found, key=lambda c: c.field)
