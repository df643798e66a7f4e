"""Exact Gibbs states, singlet spectra and phase-diagram sweeps.

The chemical potential enters as H(mu) = H0 - mu*B with [H0, B] = 0, so one
simultaneous eigendecomposition of (H0, B) serves every (T, mu) grid point:
level energies shift linearly, Boltzmann weights are re-softmaxed, and all
reported observables are diagonal in that basis.  Observables restricted to
the gauge-singlet sector divide out the group-averaging kernel weight,

    <O>_0 = Tr(rho O K) / Tr(rho K),         Z0/Z = Tr(rho K).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .models import (
    ModelParams,
    QubitHamiltonian,
    baryon_number,
    build_hamiltonian,
    chiral_condensate,
    strong_coupling_vacuum,
)
from .paulis import PauliSum
from .projection import SingletKernel, build_kernel, singlet_basis

ED_QUBIT_CAP = 12
LEVEL_DEGENERACY_TOL = 1e-9

CSV_COLUMNS = (
    "group",
    "N",
    "m",
    "x",
    "T",
    "mu",
    "chi0",
    "Z0_over_Z",
    "E0_singlet",
    "w_vacuum",
    "w_baryon",
    "w_antibaryon",
    "w_meson",
    "w_other",
)


@dataclass
class ThermalState:
    """A density matrix, optionally tagged with the temperature it came from."""

    rho: np.ndarray
    temperature: float | None = None

    @property
    def dim(self) -> int:
        return self.rho.shape[0]


def _as_matrix(h: QubitHamiltonian | PauliSum | np.ndarray) -> np.ndarray:
    if isinstance(h, QubitHamiltonian):
        return h.full.to_matrix()
    if isinstance(h, PauliSum):
        return h.to_matrix()
    return np.asarray(h, dtype=complex)


def gibbs_state(h: QubitHamiltonian | PauliSum | np.ndarray, temperature: float) -> ThermalState:
    """exp(-H/T)/Z, computed by eigendecomposition with a spectral shift."""
    if not temperature > 0:
        raise ValueError(
            "temperature must be positive; use t_zero_limit / t_infinity_limit for the endpoints"
        )
    if isinstance(h, QubitHamiltonian) and h.n_qubits > ED_QUBIT_CAP:
        raise ValueError(f"exact Gibbs states capped at {ED_QUBIT_CAP} qubits")
    mat = _as_matrix(h)
    if mat.shape[0] > (1 << ED_QUBIT_CAP):
        raise ValueError(f"exact Gibbs states capped at {ED_QUBIT_CAP} qubits")
    energies, basis = np.linalg.eigh(mat)
    weights = np.exp(-(energies - energies[0]) / temperature)
    weights /= weights.sum()
    rho = (basis * weights) @ basis.conj().T
    return ThermalState(rho=rho, temperature=float(temperature))


def t_zero_limit(h: QubitHamiltonian | PauliSum | np.ndarray) -> ThermalState:
    """Maximally mixed state over the (possibly degenerate) ground space."""
    mat = _as_matrix(h)
    energies, basis = np.linalg.eigh(mat)
    ground = energies <= energies[0] + LEVEL_DEGENERACY_TOL
    vecs = basis[:, ground]
    rho = vecs @ vecs.conj().T / int(ground.sum())
    return ThermalState(rho=rho, temperature=0.0)


def t_infinity_limit(n_qubits: int) -> ThermalState:
    dim = 1 << n_qubits
    return ThermalState(rho=np.eye(dim, dtype=complex) / dim, temperature=float("inf"))


def von_neumann_entropy(rho: np.ndarray) -> float:
    """Entropy in nats; tiny negative eigenvalues from roundoff are clipped."""
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -1e-10:
        raise ValueError(f"density matrix has negative eigenvalue {evals.min():.3e}")
    evals = evals[evals > 0]
    return float(-np.sum(evals * np.log(evals)))


def free_energy(
    state: ThermalState | np.ndarray, h: QubitHamiltonian | PauliSum | np.ndarray, temperature: float
) -> float:
    """F = <H> - T * S (entropy in nats)."""
    rho = state.rho if isinstance(state, ThermalState) else np.asarray(state)
    if isinstance(h, QubitHamiltonian):
        energy = h.full.expectation(rho)
    elif isinstance(h, PauliSum):
        energy = h.expectation(rho)
    else:
        energy = float(np.real(np.trace(rho @ h)))
    return energy - temperature * von_neumann_entropy(rho)


# ------------------------------------------------- simultaneous level structure


def simultaneous_levels(
    h0: np.ndarray, b: np.ndarray, tol: float = LEVEL_DEGENERACY_TOL
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Joint eigenbasis of commuting Hermitian (h0, b).

    Diagonalizes h0, then re-diagonalizes b inside each degenerate h0
    cluster (|dE| < tol).  Returns (energies, baryon_numbers, basis).
    """
    energies, basis = np.linalg.eigh(h0)
    start = 0
    n = len(energies)
    while start < n:
        stop = start + 1
        while stop < n and energies[stop] - energies[stop - 1] < tol:
            stop += 1
        if stop - start > 1:
            block = basis[:, start:stop]
            b_block = block.conj().T @ b @ block
            _, rot = np.linalg.eigh(0.5 * (b_block + b_block.conj().T))
            basis[:, start:stop] = block @ rot
        start = stop
    baryons = np.real(np.einsum("jn,jk,kn->n", basis.conj(), b, basis))
    return energies, baryons, basis


# ------------------------------------------------------------ singlet spectrum


@dataclass(frozen=True)
class SingletLevel:
    energy_mu0: float
    baryon: float
    multiplicity: int
    label: str


@dataclass(frozen=True)
class SingletSpectrum:
    """Gauge-singlet eigenlevels of H(mu=0), labeled for reporting.

    Energies at chemical potential mu are energy_mu0 - mu * baryon.
    """

    params: ModelParams
    levels: tuple[SingletLevel, ...]

    def energies_at(self, mu: float) -> np.ndarray:
        return np.array([lvl.energy_mu0 - mu * lvl.baryon for lvl in self.levels])

    def boltzmann_weights(self, temperature: float, mu: float) -> np.ndarray:
        e = self.energies_at(mu)
        w = np.array([lvl.multiplicity for lvl in self.levels]) * np.exp(-(e - e.min()) / temperature)
        return w / w.sum()


def _classify_level(vector: np.ndarray, baryon: float, vacuum_index: int) -> str:
    """Reporting heuristic: baryon number first; at zero baryon number the
    label goes to whichever aggregate weight dominates -- the vacuum bit
    pattern ("vacuum"), its complement ("other", the maximally flipped
    configuration), or everything else ("meson", partially flipped pairs)."""
    if baryon >= 0.5:
        return "baryon"
    if baryon <= -0.5:
        return "antibaryon"
    probs = np.abs(vector) ** 2
    w_vacuum = float(probs[vacuum_index])
    w_flipped = float(probs[(len(vector) - 1) ^ vacuum_index])
    w_rest = max(0.0, 1.0 - w_vacuum - w_flipped)
    best = max((w_vacuum, "vacuum"), (w_flipped, "other"), (w_rest, "meson"))
    return best[1]


def singlet_spectrum(params: ModelParams) -> SingletSpectrum:
    """Exact singlet levels of H(mu=0) with baryon numbers and labels."""
    h0 = build_hamiltonian(params.replace_mu(0.0)).full.to_matrix()
    b = baryon_number(params).to_matrix()
    basis = singlet_basis(params)
    h_r = basis.conj().T @ h0 @ basis
    b_r = basis.conj().T @ b @ basis
    energies, baryons, rot = simultaneous_levels(h_r, b_r)
    vectors = basis @ rot
    vac_idx, _ = strong_coupling_vacuum(params)

    levels: list[SingletLevel] = []
    start = 0
    n = len(energies)
    while start < n:
        stop = start + 1
        while (
            stop < n
            and energies[stop] - energies[stop - 1] < LEVEL_DEGENERACY_TOL
            and abs(baryons[stop] - baryons[start]) < 1e-6
        ):
            stop += 1
        label = _classify_level(vectors[:, start], baryons[start], vac_idx)
        levels.append(
            SingletLevel(
                energy_mu0=float(energies[start]),
                baryon=float(np.round(baryons[start], 9)),
                multiplicity=stop - start,
                label=label,
            )
        )
        start = stop
    return SingletSpectrum(params=params, levels=tuple(levels))


# ------------------------------------------------------------------ sweeps


class ThermalEnsemble:
    """Cached level structure for fast (T, mu) scans of one model family.

    chem_potential on the input params is ignored; mu is supplied per query.
    """

    def __init__(self, params: ModelParams, kernel: SingletKernel | None = None):
        if params.n_qubits > ED_QUBIT_CAP:
            raise ValueError(f"exact sweeps capped at {ED_QUBIT_CAP} qubits")
        self.params = params.replace_mu(0.0)
        self.kernel = kernel or build_kernel(params.group, params.n_sites)
        h0 = build_hamiltonian(self.params).full.to_matrix()
        b = baryon_number(self.params).to_matrix()
        self.energies0, self.baryons, basis = simultaneous_levels(h0, b)
        occupancy = np.abs(basis) ** 2  # |<j|n>|^2
        chi_diag = chiral_condensate(self.params).diagonal_values()
        k_diag = self.kernel.diagonal
        self.level_k = occupancy.T @ k_diag
        self.level_chik = occupancy.T @ (chi_diag * k_diag)
        self.spectrum = singlet_spectrum(self.params)

    def energies_at(self, mu: float) -> np.ndarray:
        return self.energies0 - mu * self.baryons

    def gibbs_weights(self, temperature: float, mu: float) -> np.ndarray:
        e = self.energies_at(mu)
        w = np.exp(-(e - e.min()) / temperature)
        return w / w.sum()

    def observables(self, temperature: float, mu: float) -> dict[str, float]:
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        p = self.gibbs_weights(temperature, mu)
        z0_over_z = float(p @ self.level_k)
        chik = float(p @ self.level_chik)
        if abs(z0_over_z) < 1e-12:
            raise ValueError("singlet weight vanished; cannot normalize projected averages")
        energies = self.energies_at(mu)
        e0 = float((p * energies) @ self.level_k) / z0_over_z

        weights = self.spectrum.boltzmann_weights(temperature, mu)
        by_label = {"vacuum": 0.0, "baryon": 0.0, "antibaryon": 0.0, "meson": 0.0, "other": 0.0}
        for lvl, w in zip(self.spectrum.levels, weights):
            by_label[lvl.label] += float(w)
        return {
            "chi0": chik / z0_over_z,
            "Z0_over_Z": z0_over_z,
            "E0_singlet": e0,
            "w_vacuum": by_label["vacuum"],
            "w_baryon": by_label["baryon"],
            "w_antibaryon": by_label["antibaryon"],
            "w_meson": by_label["meson"],
            "w_other": by_label["other"],
        }


@dataclass(frozen=True)
class PhaseTable:
    params: ModelParams
    temperatures: tuple[float, ...]
    chem_potentials: tuple[float, ...]
    rows: tuple[dict, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for row in self.rows:
            buf.write(
                ",".join(
                    str(row[c]) if c in ("group", "N") else f"{row[c]:.12g}" for c in CSV_COLUMNS
                )
                + "\n"
            )
        return buf.getvalue()


def phase_sweep(
    params: ModelParams,
    temperatures: "list[float] | np.ndarray",
    chem_potentials: "list[float] | np.ndarray",
    ensemble: ThermalEnsemble | None = None,
) -> PhaseTable:
    """Scan chi0 and companion observables over a (T, mu) grid.

    Row order is deterministic: temperatures outer, chemical potentials
    inner, both in the order given.
    """
    ens = ensemble or ThermalEnsemble(params)
    rows = []
    for t in temperatures:
        for mu in chem_potentials:
            obs = ens.observables(float(t), float(mu))
            row = {
                "group": params.group.value,
                "N": params.n_sites,
                "m": params.mass,
                "x": params.coupling_x,
                "T": float(t),
                "mu": float(mu),
            }
            row.update(obs)
            rows.append(row)
    return PhaseTable(
        params=params,
        temperatures=tuple(float(t) for t in temperatures),
        chem_potentials=tuple(float(m) for m in chem_potentials),
        rows=tuple(rows),
    )
