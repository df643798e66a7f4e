"""Qubit Hamiltonians for (1+1)D SU(2) and SU(3) gauge theories.

Staggered fermions on an open chain with the gauge links integrated out:
odd sites host antimatter, even sites matter, and each site carries one
qubit per color (2 for SU(2), 3 for SU(3)).  After the Jordan-Wigner
transformation the Hamiltonian splits into four pieces,

    H = H_kin + m * H_mass + (1/(2x)) * H_elec - mu * H_chem,

with x = 1/g^2 the inverse coupling squared, m the bare mass and mu a
baryon chemical potential (lattice units a = 1 throughout).  Eliminating
the links leaves the long-range color interactions inside H_elec, which
equals the sum over links of the squared cumulative color charge; that
identity is used as an independent cross-check in the tests.

Conventions: qubit 1 is the leftmost tensor factor; sigma^z|0> = +|0>.
Site n occupies qubits (2n-1, 2n) for SU(2) and (3n-2, 3n-1, 3n) for
SU(3).  The strong-coupling vacuum has every antimatter site in |0...0>
and every matter site in |1...1>.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .paulis import PauliString, PauliSum

SQRT3 = float(np.sqrt(3.0))


class Group(enum.Enum):
    """Gauge group of the model."""

    SU2 = "su2"
    SU3 = "su3"

    @property
    def n_colors(self) -> int:
        return 2 if self is Group.SU2 else 3

    @property
    def qubits_per_site(self) -> int:
        return self.n_colors

    @property
    def max_sites(self) -> int:
        return 7 if self is Group.SU2 else 4

    @property
    def n_charges(self) -> int:
        return 3 if self is Group.SU2 else 8

    @classmethod
    def parse(cls, text: str) -> "Group":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown gauge group {text!r}; expected 'su2' or 'su3'") from None


@dataclass(frozen=True)
class ModelParams:
    """Physical couplings and lattice size of one model instance."""

    group: Group
    n_sites: int
    mass: float = 0.5
    coupling_x: float = 1.0
    chem_potential: float = 0.0

    def __post_init__(self) -> None:
        if not 2 <= self.n_sites <= self.group.max_sites:
            raise ValueError(
                f"{self.group.value} supports 2..{self.group.max_sites} sites, got {self.n_sites}"
            )
        if self.coupling_x <= 0:
            raise ValueError("coupling_x must be positive (x = 1/g^2)")

    @property
    def n_qubits(self) -> int:
        return self.group.qubits_per_site * self.n_sites

    def replace_mu(self, mu: float) -> "ModelParams":
        return ModelParams(self.group, self.n_sites, self.mass, self.coupling_x, mu)


@dataclass(frozen=True)
class QubitHamiltonian:
    """The four Hamiltonian pieces plus their weighted sum and its split
    into a diagonal (all-Z) part and the off-diagonal remainder."""

    params: ModelParams
    kinetic: PauliSum
    mass: PauliSum
    electric: PauliSum
    chemical: PauliSum
    full: PauliSum
    h_diag: PauliSum
    h_offdiag: PauliSum

    @property
    def n_qubits(self) -> int:
        return self.params.n_qubits


# --------------------------------------------------------------- small helpers


def _z(n: int, q: int) -> PauliSum:
    return PauliSum.from_string(PauliString.single(n, q, "Z"))


def _sp(n: int, q: int) -> PauliSum:
    """sigma^+ = (X + iY)/2 at qubit q."""
    return PauliSum.from_terms(
        [(0.5, PauliString.single(n, q, "X")), (0.5j, PauliString.single(n, q, "Y"))]
    )


def _sm(n: int, q: int) -> PauliSum:
    """sigma^- = (X - iY)/2 at qubit q."""
    return PauliSum.from_terms(
        [(0.5, PauliString.single(n, q, "X")), (-0.5j, PauliString.single(n, q, "Y"))]
    )


def _chain(*factors: PauliSum) -> PauliSum:
    out = factors[0]
    for f in factors[1:]:
        out = out @ f
    return out


def _plus_hc(s: PauliSum) -> PauliSum:
    return (s + s.dagger()).prune()


# ------------------------------------------------------------------ SU(2) pieces


def _su2_kinetic(n_sites: int) -> PauliSum:
    nq = 2 * n_sites
    total = PauliSum.zero(nq)
    for n in range(1, n_sites):
        hop1 = _chain(_sp(nq, 2 * n - 1), _z(nq, 2 * n), _sm(nq, 2 * n + 1))
        hop2 = _chain(_sp(nq, 2 * n), _z(nq, 2 * n + 1), _sm(nq, 2 * n + 2))
        total = total + _plus_hc(hop1) + _plus_hc(hop2)
    return (-0.5 * total).prune()


def _su2_mass(n_sites: int) -> PauliSum:
    nq = 2 * n_sites
    total = PauliSum.zero(nq)
    for n in range(1, n_sites + 1):
        sign = (-1.0) ** n
        total = total + 0.5 * sign * (_z(nq, 2 * n - 1) + _z(nq, 2 * n)) + PauliSum.identity(nq)
    return total.prune()


def _su2_electric(n_sites: int) -> PauliSum:
    nq = 2 * n_sites
    total = PauliSum.zero(nq)
    for n in range(1, n_sites):
        zz = _z(nq, 2 * n - 1) @ _z(nq, 2 * n)
        total = total + (3.0 / 8.0) * (n_sites - n) * (PauliSum.identity(nq) - zz)
    for n in range(1, n_sites - 1):
        dz_n = _z(nq, 2 * n - 1) - _z(nq, 2 * n)
        for m in range(n + 1, n_sites):
            dz_m = _z(nq, 2 * m - 1) - _z(nq, 2 * m)
            total = total + (1.0 / 8.0) * (n_sites - m) * (dz_n @ dz_m)
            hop = _chain(_sp(nq, 2 * n - 1), _sm(nq, 2 * n), _sp(nq, 2 * m), _sm(nq, 2 * m - 1))
            total = total + (n_sites - m) * _plus_hc(hop)
    return total.prune()


def _su2_chemical(n_sites: int) -> PauliSum:
    nq = 2 * n_sites
    total = PauliSum.zero(nq)
    for q in range(1, nq + 1):
        total = total + _z(nq, q)
    return 0.25 * total


def _su2_site_charges(n_sites: int, site: int) -> list[PauliSum]:
    nq = 2 * n_sites
    a, b = 2 * site - 1, 2 * site
    qx = 0.5 * _plus_hc(_sp(nq, a) @ _sm(nq, b))
    qy = 0.5j * (_sm(nq, a) @ _sp(nq, b) - _sp(nq, a) @ _sm(nq, b))
    qz = 0.25 * (_z(nq, a) - _z(nq, b))
    return [qx.prune(), qy.prune(), qz.prune()]


# ------------------------------------------------------------------ SU(3) pieces


def _su3_kinetic(n_sites: int) -> PauliSum:
    nq = 3 * n_sites
    total = PauliSum.zero(nq)
    for n in range(1, n_sites):
        a, b, c = 3 * n - 2, 3 * n - 1, 3 * n
        sign = (-1.0) ** n
        hop1 = _chain(_sp(nq, a), _z(nq, b), _z(nq, c), _sm(nq, a + 3))
        hop2 = _chain(_sp(nq, b), _z(nq, c), _z(nq, a + 3), _sm(nq, b + 3))
        hop3 = _chain(_sp(nq, c), _z(nq, a + 3), _z(nq, b + 3), _sm(nq, c + 3))
        total = total + 0.5 * sign * (_plus_hc(hop1) - _plus_hc(hop2) + _plus_hc(hop3))
    return total.prune()


def _su3_mass(n_sites: int) -> PauliSum:
    nq = 3 * n_sites
    total = PauliSum.zero(nq)
    for n in range(1, n_sites + 1):
        a, b, c = 3 * n - 2, 3 * n - 1, 3 * n
        sign = (-1.0) ** n
        total = (
            total
            + 0.5 * sign * (_z(nq, a) + _z(nq, b) + _z(nq, c))
            + 1.5 * PauliSum.identity(nq)
        )
    return total.prune()


def _su3_electric(n_sites: int) -> PauliSum:
    nq = 3 * n_sites
    total = PauliSum.zero(nq)
    for n in range(1, n_sites):
        a, b, c = 3 * n - 2, 3 * n - 1, 3 * n
        za, zb, zc = _z(nq, a), _z(nq, b), _z(nq, c)
        total = total + (1.0 / 3.0) * (n_sites - n) * (
            3.0 * PauliSum.identity(nq) - za @ zb - za @ zc - zb @ zc
        )
    for n in range(1, n_sites - 1):
        an, bn, cn = 3 * n - 2, 3 * n - 1, 3 * n
        for m in range(n + 1, n_sites):
            am, bm, cm = 3 * m - 2, 3 * m - 1, 3 * m
            w = float(n_sites - m)
            stag = (-1.0) ** (n + m)
            four1 = _chain(_sp(nq, an), _sm(nq, bn), _sp(nq, bm), _sm(nq, am))
            four2 = _chain(_sp(nq, bn), _sm(nq, cn), _sm(nq, bm), _sp(nq, cm))
            total = total + w * stag * (_plus_hc(four1) + _plus_hc(four2))
            six = _chain(_sp(nq, an), _z(nq, bn), _sm(nq, cn), _sm(nq, am), _z(nq, bm), _sp(nq, cm))
            total = total + w * _plus_hc(six)
            zs = {q: _z(nq, q) for q in (an, bn, cn, am, bm, cm)}
            total = total - (w / 12.0) * (zs[am] @ (zs[bn] + zs[cn] - 2.0 * zs[an]))
            total = total - (w / 12.0) * (zs[bm] @ (zs[cn] + zs[an] - 2.0 * zs[bn]))
            total = total - (w / 12.0) * (zs[cm] @ (zs[an] + zs[bn] - 2.0 * zs[cn]))
    return total.prune()


def _su3_chemical(n_sites: int) -> PauliSum:
    nq = 3 * n_sites
    total = PauliSum.zero(nq)
    for q in range(1, nq + 1):
        total = total + _z(nq, q)
    return (1.0 / 6.0) * total


def _su3_site_charges(n_sites: int, site: int) -> list[PauliSum]:
    nq = 3 * n_sites
    a, b, c = 3 * site - 2, 3 * site - 1, 3 * site
    stag = (-1.0) ** site
    q1 = 0.5 * stag * _plus_hc(_sp(nq, a) @ _sm(nq, b))
    q2 = 0.5j * stag * (_sp(nq, b) @ _sm(nq, a) - _sm(nq, b) @ _sp(nq, a))
    q3 = 0.25 * (_z(nq, a) - _z(nq, b))
    ladder_ac = _chain(_sp(nq, a), _z(nq, b), _sm(nq, c))
    q4 = -0.5 * _plus_hc(ladder_ac)
    q5 = 0.5j * (ladder_ac - ladder_ac.dagger())
    q6 = 0.5 * stag * _plus_hc(_sp(nq, b) @ _sm(nq, c))
    q7 = 0.5j * stag * (_sp(nq, c) @ _sm(nq, b) - _sm(nq, c) @ _sp(nq, b))
    q8 = (1.0 / (4.0 * SQRT3)) * (_z(nq, a) + _z(nq, b) - 2.0 * _z(nq, c))
    return [q.prune() for q in (q1, q2, q3, q4, q5, q6, q7, q8)]


# ------------------------------------------------------------------- public API


def hamiltonian_pieces(params: ModelParams) -> dict[str, PauliSum]:
    """Unweighted kinetic/mass/electric/chemical pieces."""
    if params.group is Group.SU2:
        return {
            "kinetic": _su2_kinetic(params.n_sites),
            "mass": _su2_mass(params.n_sites),
            "electric": _su2_electric(params.n_sites),
            "chemical": _su2_chemical(params.n_sites),
        }
    return {
        "kinetic": _su3_kinetic(params.n_sites),
        "mass": _su3_mass(params.n_sites),
        "electric": _su3_electric(params.n_sites),
        "chemical": _su3_chemical(params.n_sites),
    }


def build_hamiltonian(params: ModelParams) -> QubitHamiltonian:
    """Assemble H = H_kin + m H_mass + (1/2x) H_elec - mu H_chem."""
    pieces = hamiltonian_pieces(params)
    full = (
        pieces["kinetic"]
        + params.mass * pieces["mass"]
        + (1.0 / (2.0 * params.coupling_x)) * pieces["electric"]
        - params.chem_potential * pieces["chemical"]
    ).prune()
    diag_terms = []
    offdiag_terms = []
    for coeff, string in full.items():
        (diag_terms if string.is_diagonal else offdiag_terms).append((coeff, string))
    nq = params.n_qubits
    h_diag = PauliSum.from_terms(diag_terms) if diag_terms else PauliSum.zero(nq)
    h_offdiag = PauliSum.from_terms(offdiag_terms) if offdiag_terms else PauliSum.zero(nq)
    return QubitHamiltonian(
        params=params,
        kinetic=pieces["kinetic"],
        mass=pieces["mass"],
        electric=pieces["electric"],
        chemical=pieces["chemical"],
        full=full,
        h_diag=h_diag,
        h_offdiag=h_offdiag,
    )


def site_charges(params: ModelParams, site: int) -> list[PauliSum]:
    """Color-charge components of one staggered site (3 for SU(2), 8 for SU(3))."""
    if not 1 <= site <= params.n_sites:
        raise ValueError(f"site {site} out of range")
    if params.group is Group.SU2:
        return _su2_site_charges(params.n_sites, site)
    return _su3_site_charges(params.n_sites, site)


@dataclass(frozen=True)
class ChargeSet:
    """Total color charges of the chain; a state is a gauge singlet iff it is
    annihilated by every component."""

    params: ModelParams
    charges: tuple[PauliSum, ...]
    cartan_indices: tuple[int, ...]

    @property
    def cartan(self) -> tuple[PauliSum, ...]:
        return tuple(self.charges[i] for i in self.cartan_indices)


def build_charges(params: ModelParams) -> ChargeSet:
    per_site = [site_charges(params, s) for s in range(1, params.n_sites + 1)]
    totals = []
    for comp in range(params.group.n_charges):
        acc = per_site[0][comp]
        for s in range(1, params.n_sites):
            acc = acc + per_site[s][comp]
        totals.append(acc.prune())
    cartan = (2,) if params.group is Group.SU2 else (2, 7)
    return ChargeSet(params=params, charges=tuple(totals), cartan_indices=cartan)


def chiral_condensate(params: ModelParams) -> PauliSum:
    """Staggered condensate chi = sum_n (-1)^n/2 * (sum of site-n Z's)."""
    nq = params.n_qubits
    k = params.group.qubits_per_site
    total = PauliSum.zero(nq)
    for n in range(1, params.n_sites + 1):
        sign = (-1.0) ** n
        for j in range(k):
            total = total + 0.5 * sign * _z(nq, k * (n - 1) + j + 1)
    return total.prune()


def baryon_number(params: ModelParams) -> PauliSum:
    """Baryon-number operator; identical to the chemical-potential piece."""
    return hamiltonian_pieces(params)["chemical"]


def strong_coupling_vacuum(params: ModelParams) -> tuple[int, str]:
    """Basis state reached in the x -> 0 limit.

    Minimizes the diagonal of H_elec and breaks ties with the diagonal of
    H_mass (the kinetic term is suppressed at strong coupling).  Returns the
    basis index and its bitstring (qubit 1 first).
    """
    pieces = hamiltonian_pieces(params)
    elec_diag = _diagonal_part(pieces["electric"]).diagonal_values()
    mass_diag = _diagonal_part(pieces["mass"]).diagonal_values()
    order = np.lexsort((mass_diag, elec_diag))
    idx = int(order[0])
    return idx, format(idx, f"0{params.n_qubits}b")


def _diagonal_part(s: PauliSum) -> PauliSum:
    terms = [(c, p) for c, p in s.items() if p.is_diagonal]
    return PauliSum.from_terms(terms) if terms else PauliSum.zero(s.n_qubits)
