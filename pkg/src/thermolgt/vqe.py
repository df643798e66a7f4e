"""Variational thermal-state preparation with shot noise.

The free energy F = E - T S is minimized over the ansatz parameters, with
the energy estimated from bitstring histograms (two basis settings: the
computational basis for the diagonal families and one merged rotation for
the whole hopping family) and the entropy computed analytically from the
programmed ancilla angles.  A mesh-shrinking coordinate search drives the
optimization; it is deterministic given the seed, tolerates stochastic
costs, and supports warm starting from a previous optimum.

After optimization the projected chiral condensate is measured ten times
from fresh shot draws (and fresh noise, when a noise model is active) and
reported with its spread.  Everything here works in either exact mode
(``shots_per_basis=0``, no noise: deterministic, used for the variational
bound) or experiment-mode (finite shots, over-rotation plus depolarizing
noise).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

from .circuits import (
    Circuit,
    MeasurementSetting,
    NoiseModel,
    ancilla_entropy,
    ansatz_density_matrix,
    apply_noise,
    merged_measurement_setting,
    phi_parameter_count,
    system_qubit_count,
)
from .models import Group, ModelParams, QubitHamiltonian, build_hamiltonian, chiral_condensate
from .projection import SingletKernel, build_kernel
from .thermal import ThermalState

__all__ = [
    "VqeConfig",
    "VqeResult",
    "EnsembleSummary",
    "UnstableEstimateError",
    "estimate_energy",
    "free_energy_cost",
    "mesh_direct_search",
    "run_vqe",
    "warm_start_chain",
    "run_noisy_ensemble",
    "projected_chiral_from_counts",
    "parameter_bounds",
    "cold_start_point",
]

CHI0_REPEATS = 10

_SHOT_DEFAULTS = {Group.SU2: 2000, Group.SU3: 3000}
_EVAL_DEFAULTS = {Group.SU2: 230, Group.SU3: 350}
_MESH_DEFAULTS = {Group.SU2: 1.0, Group.SU3: 0.25}


class UnstableEstimateError(RuntimeError):
    """Raised when the projected-ratio denominator is too small to trust."""


def _z_parity_values(n_qubits: int, z_mask: int) -> np.ndarray:
    """(-1)^popcount(j & z_mask) over all basis indices j."""
    basis = np.arange(1 << n_qubits)
    masked = basis & z_mask
    bits = np.zeros_like(basis)
    for shift in range(n_qubits):
        bits += (masked >> shift) & 1
    return np.where(bits % 2 == 0, 1.0, -1.0)


@dataclass(frozen=True)
class VqeConfig:
    """One thermal-VQE problem instance.

    ``shots_per_basis=0`` switches both the energy estimate and the
    post-optimization measurements to exact expectation values (only
    meaningful without noise draws it would otherwise average over).
    Unset sampling fields fall back to per-group defaults: 2000/3000
    shots, 230/350 evaluations, initial mesh 1.0/0.25.
    """

    group: Group
    temperature: float
    chem_potential: float = 0.0
    mass: float = 0.5
    coupling_x: float = 1.0
    shots_per_basis: int | None = None
    max_evals: int | None = None
    mesh_init: float | None = None
    mesh_final: float = 0.01
    noise: NoiseModel | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.shots_per_basis is None:
            object.__setattr__(self, "shots_per_basis", _SHOT_DEFAULTS[self.group])
        if self.max_evals is None:
            object.__setattr__(self, "max_evals", _EVAL_DEFAULTS[self.group])
        if self.mesh_init is None:
            object.__setattr__(self, "mesh_init", _MESH_DEFAULTS[self.group])
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.shots_per_basis < 0:
            raise ValueError("shots_per_basis must be >= 0 (0 = exact mode)")
        if self.max_evals < 1:
            raise ValueError("max_evals must be positive")
        if not self.mesh_final < self.mesh_init:
            raise ValueError("mesh_final must be smaller than mesh_init")

    @property
    def n_theta(self) -> int:
        return system_qubit_count(self.group)

    @property
    def n_phi(self) -> int:
        return phi_parameter_count(self.group)

    def model_params(self) -> ModelParams:
        return ModelParams(
            self.group,
            2,
            mass=self.mass,
            coupling_x=self.coupling_x,
            chem_potential=self.chem_potential,
        )


@dataclass(frozen=True)
class VqeResult:
    optimal_theta: tuple[float, ...]
    optimal_phi: tuple[float, ...]
    free_energy_trace: tuple[float, ...]
    chi0_estimates: tuple[float, ...]
    chi0_mean: float
    chi0_std: float
    converged: bool
    evals_used: int

    @property
    def optimal_point(self) -> np.ndarray:
        return np.array(self.optimal_theta + self.optimal_phi)


# ---------------------------------------------------------------------------
# Shared evaluation context (cached per model point)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _EvalContext:
    hamiltonian: QubitHamiltonian
    measurement: MeasurementSetting
    h_matrix: np.ndarray
    diag_values: np.ndarray
    # per off-diagonal term: (real coefficient, sign-weighted parity vector)
    offdiag_terms: tuple[tuple[float, np.ndarray], ...]
    meas_unitary: np.ndarray
    kernel_diag: np.ndarray
    chik_diag: np.ndarray


@lru_cache(maxsize=64)
def _eval_context(group: Group, mu: float, m: float, x: float) -> _EvalContext:
    params = ModelParams(group, 2, mass=m, coupling_x=x, chem_potential=mu)
    h = build_hamiltonian(params)
    meas = merged_measurement_setting(group)
    images = {
        (p.x_mask, p.z_mask): img for p, img in zip(meas.family, meas.images)
    }
    terms: list[tuple[float, np.ndarray]] = []
    for coeff, string in h.h_offdiag.items():
        key = (string.x_mask, string.z_mask)
        if key not in images:
            raise ValueError(
                f"measurement setting does not cover {string.label()}"
            )
        img = images[key]
        parity = _z_parity_values(h.n_qubits, img.z_mask)
        terms.append((float(coeff.real) * float(img.phase.real), parity))
    kernel = build_kernel(group, 2)
    chi_diag = chiral_condensate(params).diagonal_values().real
    k_diag = np.asarray(kernel.diagonal, dtype=float)
    return _EvalContext(
        hamiltonian=h,
        measurement=meas,
        h_matrix=h.full.to_matrix(),
        diag_values=h.h_diag.diagonal_values().real,
        offdiag_terms=tuple(terms),
        meas_unitary=meas.circuit.unitary(),
        kernel_diag=k_diag,
        chik_diag=chi_diag * k_diag,
    )


def _context_for(cfg: VqeConfig) -> _EvalContext:
    return _eval_context(cfg.group, cfg.chem_potential, cfg.mass, cfg.coupling_x)


def _histogram_probs(diagonal: np.ndarray) -> np.ndarray:
    probs = np.clip(np.real(diagonal), 0.0, None)
    total = probs.sum()
    if total <= 0:
        raise ValueError("state has no positive diagonal weight")
    return probs / total


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def estimate_energy(
    state: ThermalState | np.ndarray,
    h: QubitHamiltonian,
    meas: MeasurementSetting,
    shots: int,
    rng: np.random.Generator,
) -> float:
    """Shot-sampled energy from two basis settings.

    Setting one samples the computational-basis distribution of rho and
    evaluates every diagonal term; setting two samples the distribution
    after the merged measurement rotation and evaluates the whole hopping
    family through the tracked signs.  Each setting uses `shots`
    multinomial draws, making the total estimate unbiased.  `shots=0`
    returns the exact expectation value.
    """
    rho = state.rho if isinstance(state, ThermalState) else np.asarray(state)
    if shots < 0:
        raise ValueError("shots must be >= 0")
    if shots == 0:
        return float(h.full.expectation(rho))
    images = {(p.x_mask, p.z_mask): img for p, img in zip(meas.family, meas.images)}

    freqs_diag = rng.multinomial(shots, _histogram_probs(np.diag(rho))) / shots
    energy = float(freqs_diag @ h.h_diag.diagonal_values().real)

    u = meas.circuit.unitary()
    rho_rot = u @ rho @ u.conj().T
    freqs_rot = rng.multinomial(shots, _histogram_probs(np.diag(rho_rot))) / shots
    for coeff, string in h.h_offdiag.items():
        key = (string.x_mask, string.z_mask)
        if key not in images:
            raise ValueError(f"measurement setting does not cover {string.label()}")
        img = images[key]
        parity = _z_parity_values(h.n_qubits, img.z_mask)
        energy += float(coeff.real) * float(img.phase.real) * float(freqs_rot @ parity)
    return energy


def _estimate_energy_fast(
    rho: np.ndarray, ctx: _EvalContext, shots: int, rng: np.random.Generator
) -> float:
    """estimate_energy with the per-model tables precomputed."""
    if shots == 0:
        return float(np.real(np.trace(ctx.h_matrix @ rho)))
    freqs_diag = rng.multinomial(shots, _histogram_probs(np.diag(rho))) / shots
    energy = float(freqs_diag @ ctx.diag_values)
    u = ctx.meas_unitary
    rho_rot = u @ rho @ u.conj().T
    freqs_rot = rng.multinomial(shots, _histogram_probs(np.diag(rho_rot))) / shots
    for coeff, parity in ctx.offdiag_terms:
        energy += coeff * float(freqs_rot @ parity)
    return energy


def projected_chiral_from_counts(
    counts: Mapping[int, int] | Sequence[int] | np.ndarray,
    kernel: SingletKernel,
    chi_diagonal: np.ndarray,
) -> float:
    """Charge-sector-projected condensate from one Z-basis histogram.

    Both the kernel and the condensate are diagonal, so the ratio
    [sum_j f_j (chi K)_jj] / [sum_j f_j K_jj] needs no extra circuits.
    The denominator estimates the singlet weight; below 10/total_shots
    the ratio is meaningless and an `UnstableEstimateError` is raised.
    """
    k_diag = np.asarray(kernel.diagonal, dtype=float)
    dim = k_diag.shape[0]
    freq = np.zeros(dim)
    if isinstance(counts, Mapping):
        for idx, c in counts.items():
            freq[int(idx)] = float(c)
    else:
        arr = np.asarray(counts, dtype=float)
        if arr.shape != (dim,):
            raise ValueError(f"histogram must have length {dim}")
        freq = arr
    total = float(freq.sum())
    if total <= 0:
        raise ValueError("empty histogram")
    freq = freq / total
    chi_diag = np.asarray(chi_diagonal, dtype=float)
    num = float(freq @ (chi_diag * k_diag))
    den = float(freq @ k_diag)
    if abs(den) < 10.0 / total:
        raise UnstableEstimateError(
            f"projected weight {den:.3e} below the 10/{int(total)} stability floor"
        )
    return num / den


def _projected_from_frequencies(
    freq: np.ndarray, ctx: _EvalContext, guard: float
) -> float:
    num = float(freq @ ctx.chik_diag)
    den = float(freq @ ctx.kernel_diag)
    if abs(den) < guard:
        raise UnstableEstimateError(
            f"projected weight {den:.3e} below the stability floor {guard:.3e}"
        )
    return num / den


# ---------------------------------------------------------------------------
# Cost function
# ---------------------------------------------------------------------------


def _prepare_state(
    theta: np.ndarray, phi: np.ndarray, cfg: VqeConfig, rng: np.random.Generator
) -> ThermalState:
    if cfg.noise is None:
        return ansatz_density_matrix(cfg.group, theta, phi)
    return apply_noise(cfg.group, theta, phi, cfg.noise, rng)


def free_energy_cost(
    theta: Sequence[float],
    phi: Sequence[float],
    cfg: VqeConfig,
    rng: np.random.Generator,
) -> float:
    """E - T S with fresh noise and shot draws on every call.

    The entropy term is analytic in the programmed ancilla angles -- the
    experiment knows only its control values, so an over-rotated draw
    never enters the entropy.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ctx = _context_for(cfg)
    state = _prepare_state(theta, phi, cfg, rng)
    energy = _estimate_energy_fast(state.rho, ctx, cfg.shots_per_basis, rng)
    return energy - cfg.temperature * ancilla_entropy(theta)


# ---------------------------------------------------------------------------
# Mesh-shrinking coordinate search
# ---------------------------------------------------------------------------


def parameter_bounds(cfg: VqeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Box bounds: ancilla angles in [0, pi], system angles in [-pi, pi]."""
    lo = np.concatenate([np.zeros(cfg.n_theta), -math.pi * np.ones(cfg.n_phi)])
    hi = np.concatenate([math.pi * np.ones(cfg.n_theta), math.pi * np.ones(cfg.n_phi)])
    return lo, hi


def cold_start_point(cfg: VqeConfig) -> np.ndarray:
    """Maximally mixed start: every ancilla at pi/2, system angles zero."""
    return np.concatenate([0.5 * math.pi * np.ones(cfg.n_theta), np.zeros(cfg.n_phi)])


def mesh_direct_search(
    cost: Callable[[np.ndarray, np.random.Generator], float],
    init_point: Sequence[float],
    cfg: VqeConfig,
    rng: np.random.Generator,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Coordinate poll search with a shrinking mesh.

    One pass polls +mesh then -mesh along each coordinate in ascending
    order; an improving move recenters immediately (the rest of the pass
    polls around the new center, and the paired opposite direction of an
    accepted move is skipped).  A pass without any improvement halves the
    mesh.  Termination: mesh < cfg.mesh_final or cfg.max_evals cost
    evaluations.  Moves clipped onto an active bound that would not change
    the point are skipped without spending an evaluation.  The trace
    records every evaluated cost in order; re-evaluations are never
    cached, so a stochastic cost stays honest.  Deterministic for a given
    seed because the poll order is fixed and the rng is threaded through
    the cost calls sequentially.
    """
    point = np.asarray(init_point, dtype=float).copy()
    dim = point.shape[0]
    if bounds is None:
        lo = np.full(dim, -np.inf)
        hi = np.full(dim, np.inf)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        point = np.clip(point, lo, hi)

    trace: list[float] = []

    def evaluate(p: np.ndarray) -> float:
        value = float(cost(p, rng))
        trace.append(value)
        return value

    best_value = evaluate(point)
    mesh = float(cfg.mesh_init)
    while mesh >= cfg.mesh_final and len(trace) < cfg.max_evals:
        improved = False
        coord = 0
        while coord < dim and len(trace) < cfg.max_evals:
            accepted_sign = 0
            for sign in (+1.0, -1.0):
                if sign == -accepted_sign or len(trace) >= cfg.max_evals:
                    continue
                candidate = point.copy()
                candidate[coord] = float(np.clip(candidate[coord] + sign * mesh, lo[coord], hi[coord]))
                if candidate[coord] == point[coord]:
                    continue  # clipped to a no-op; don't burn an evaluation
                value = evaluate(candidate)
                if value < best_value:
                    point, best_value = candidate, value
                    improved = True
                    accepted_sign = sign
            coord += 1
        if not improved:
            mesh *= 0.5
    return point, trace


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


def _chi0_measurements(
    theta: np.ndarray,
    phi: np.ndarray,
    cfg: VqeConfig,
    rng: np.random.Generator,
) -> list[float]:
    """Ten independent projected-condensate measurements at fixed parameters.

    Each repetition re-prepares the state (fresh noise draw) and takes a
    fresh shot histogram; in exact mode all ten coincide.
    """
    ctx = _context_for(cfg)
    values = []
    for _ in range(CHI0_REPEATS):
        state = _prepare_state(theta, phi, cfg, rng)
        probs = _histogram_probs(np.diag(state.rho))
        if cfg.shots_per_basis == 0:
            freq = probs
            guard = 0.0
        else:
            freq = rng.multinomial(cfg.shots_per_basis, probs) / cfg.shots_per_basis
            guard = 10.0 / cfg.shots_per_basis
        values.append(_projected_from_frequencies(freq, ctx, guard))
    return values


def run_vqe(cfg: VqeConfig, warm_start: Sequence[float] | None = None) -> VqeResult:
    """Optimize the free energy, then measure the projected condensate.

    The optimizer starts from `warm_start` when given (a full parameter
    vector, ancilla angles first), else from the maximally mixed cold
    start.  Afterwards the projected chiral condensate is measured
    `CHI0_REPEATS` times and summarized.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_theta

    def cost(pt: np.ndarray, r: np.random.Generator) -> float:
        return free_energy_cost(pt[:n], pt[n:], cfg, r)

    init = cold_start_point(cfg) if warm_start is None else np.asarray(warm_start, dtype=float)
    best, trace = mesh_direct_search(cost, init, cfg, rng, bounds=parameter_bounds(cfg))
    theta, phi = best[:n], best[n:]
    chi0 = _chi0_measurements(theta, phi, cfg, rng)
    return VqeResult(
        optimal_theta=tuple(float(v) for v in theta),
        optimal_phi=tuple(float(v) for v in phi),
        free_energy_trace=tuple(trace),
        chi0_estimates=tuple(chi0),
        chi0_mean=float(np.mean(chi0)),
        chi0_std=float(np.std(chi0, ddof=1)) if len(chi0) > 1 else 0.0,
        converged=len(trace) < cfg.max_evals,
        evals_used=len(trace),
    )


def warm_start_chain(
    cfg: VqeConfig,
    chem_potentials: Sequence[float],
    warm_mesh_init: float | None = None,
) -> dict[float, VqeResult]:
    """Run a sequence of chemical potentials, each warm-started from the last.

    The first point runs cold; every later point starts from the previous
    optimum, mirroring how a scan across the phase diagram is driven in
    practice (the order of `chem_potentials` is respected, so pass them
    descending to chain down from the saturated phase).

    Warm-started points begin near an optimum already, so re-polling at the
    full cold mesh burns budget on steps that almost never improve.  By
    default they poll from half the configured initial mesh; pass
    ``warm_mesh_init`` to override (``cfg.mesh_init`` restores uniform
    behaviour).
    """
    if warm_mesh_init is None:
        warm_mesh_init = max(cfg.mesh_init / 2.0, cfg.mesh_final * 2.0)
    results: dict[float, VqeResult] = {}
    prev: np.ndarray | None = None
    for mu in chem_potentials:
        point_cfg = replace(cfg, chem_potential=float(mu))
        if prev is not None:
            point_cfg = replace(point_cfg, mesh_init=float(warm_mesh_init))
        res = run_vqe(point_cfg, warm_start=prev)
        results[float(mu)] = res
        prev = res.optimal_point
    return results


# ---------------------------------------------------------------------------
# Noisy ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSummary:
    """Per-trial results plus quartile statistics of the chi0 means."""

    results: tuple[VqeResult, ...]
    chi0_values: tuple[float, ...]
    median: float
    q1: float
    q3: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    def tukey_interval(self, whisker: float = 1.5) -> tuple[float, float]:
        return (self.q1 - whisker * self.iqr, self.q3 + whisker * self.iqr)


def _run_one(args: tuple[VqeConfig, tuple[float, ...] | None]) -> VqeResult:
    cfg, warm = args
    return run_vqe(cfg, warm_start=None if warm is None else np.array(warm))


def run_noisy_ensemble(
    cfg: VqeConfig,
    trials: int = 20,
    jobs: int = 1,
    warm_start: Sequence[float] | None = None,
) -> EnsembleSummary:
    """Independent VQE trials with seeds spawned from the master seed.

    Trial seeds come from `numpy.random.SeedSequence(cfg.seed).spawn`, so
    the ensemble is reproducible and independent of `jobs`; results are
    ordered by trial index.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    children = np.random.SeedSequence(cfg.seed).spawn(trials)
    seeds = [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]
    warm = None if warm_start is None else tuple(float(v) for v in warm_start)
    tasks = [(replace(cfg, seed=s), warm) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    chi0 = np.array([r.chi0_mean for r in results])
    q1, med, q3 = np.percentile(chi0, [25.0, 50.0, 75.0])
    return EnsembleSummary(
        results=tuple(results),
        chi0_values=tuple(float(v) for v in chi0),
        median=float(med),
        q1=float(q1),
        q3=float(q3),
    )
