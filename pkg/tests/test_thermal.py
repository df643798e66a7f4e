"""Exact thermal machinery: Gibbs states, singlet spectra, (T, mu) sweeps.

Frozen level energies and observable values below were computed with the
independently validated Hamiltonian/kernel stack (see test_models.py and
test_projection.py for those validations) and cross-checked here against
dense-matrix routes that do not share code with ThermalEnsemble.
"""

import numpy as np
import pytest

from thermolgt.models import (
    Group,
    ModelParams,
    baryon_number,
    build_hamiltonian,
    chiral_condensate,
)
from thermolgt.projection import (
    brute_force_singlet_projector,
    build_kernel,
    restricted_expectation,
    singlet_fraction,
)
from thermolgt.thermal import (
    CSV_COLUMNS,
    ThermalEnsemble,
    free_energy,
    gibbs_state,
    phase_sweep,
    simultaneous_levels,
    singlet_spectrum,
    t_infinity_limit,
    t_zero_limit,
    von_neumann_entropy,
)

from oracles import random_density_matrix, shannon_entropy

SU2_PARAMS = ModelParams(group=Group.SU2, n_sites=2, mass=0.5, coupling_x=1.0)
SU3_PARAMS = ModelParams(group=Group.SU3, n_sites=2, mass=0.5, coupling_x=1.0)

# (energy at mu=0, baryon number, multiplicity, label)
SU2_LEVELS = [
    (-0.334400559199, 0.0, 1, "vacuum"),
    (1.0, -1.0, 1, "antibaryon"),
    (1.0, 1.0, 1, "baryon"),
    (1.18426198575, 0.0, 1, "meson"),
    (2.52513857345, 0.0, 1, "other"),
]
SU3_LEVELS = [
    (-0.429033850234, 0.0, 1, "vacuum"),
    (1.25167495516, 0.0, 1, "meson"),
    (1.5, -1.0, 1, "antibaryon"),
    (1.5, 1.0, 1, "baryon"),
    (2.5684793133, 0.0, 1, "other"),
    (3.9422129151, 0.0, 1, "meson"),
]

# chi0 over the mu axis at T = 0.5 (both registers, m=0.5, x=1).
SU2_CHI0_T05 = {
    0.01: -1.30477132662,
    0.75: -1.12715407527,
    1.5: -0.634406507278,
    2.5: -0.136890066074,
    3.5: -0.0201410224671,
}
SU3_CHI0_T05 = {
    2.0: -1.15003181707,
    2.25: -0.857408055435,
}


@pytest.fixture(scope="module")
def su2_ensemble():
    return ThermalEnsemble(SU2_PARAMS)


@pytest.fixture(scope="module")
def su3_ensemble():
    return ThermalEnsemble(SU3_PARAMS)


# --------------------------------------------------------------- gibbs_state


def _expm_taylor(mat: np.ndarray) -> np.ndarray:
    """Independent matrix exponential: scaling-and-squaring + Taylor series."""
    k = max(0, int(np.ceil(np.log2(max(1.0, np.linalg.norm(mat, ord=np.inf))))) + 4)
    small = mat / (2**k)
    out = np.eye(mat.shape[0], dtype=complex)
    term = np.eye(mat.shape[0], dtype=complex)
    for order in range(1, 40):
        term = term @ small / order
        out += term
        if np.linalg.norm(term) < 1e-18:
            break
    for _ in range(k):
        out = out @ out
    return out


@pytest.mark.parametrize("temperature", [0.2, 1.0, 7.3])
def test_gibbs_state_matches_taylor_exponential(temperature):
    h = build_hamiltonian(SU2_PARAMS.replace_mu(0.4)).full.to_matrix()
    expected = _expm_taylor(-h / temperature)
    expected /= np.trace(expected).real
    state = gibbs_state(h, temperature)
    assert np.allclose(state.rho, expected, atol=1e-12)


def test_gibbs_state_is_a_state(su3_ensemble):
    h = build_hamiltonian(SU3_PARAMS.replace_mu(1.1))
    state = gibbs_state(h, 0.7)
    assert abs(np.trace(state.rho) - 1.0) < 1e-12
    assert np.allclose(state.rho, state.rho.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(state.rho).min() > -1e-14
    hm = h.full.to_matrix()
    assert np.allclose(state.rho @ hm, hm @ state.rho, atol=1e-10)


def test_gibbs_state_rejects_nonpositive_temperature():
    h = build_hamiltonian(SU2_PARAMS)
    with pytest.raises(ValueError):
        gibbs_state(h, 0.0)
    with pytest.raises(ValueError):
        gibbs_state(h, -1.0)


def test_exact_routines_reject_oversized_registers():
    big = ModelParams(group=Group.SU2, n_sites=7)  # 14 qubits
    with pytest.raises(ValueError, match="capped"):
        gibbs_state(build_hamiltonian(big), 1.0)
    with pytest.raises(ValueError, match="capped"):
        ThermalEnsemble(big)


def test_t_zero_limit_matches_cold_gibbs():
    h = build_hamiltonian(SU2_PARAMS.replace_mu(0.3))
    cold = gibbs_state(h, 1e-4).rho
    frozen = t_zero_limit(h).rho
    assert np.allclose(cold, frozen, atol=1e-12)


def test_t_zero_limit_mixes_degenerate_ground_space():
    # diag(Z1 Z2) = (+1, -1, -1, +1): two-fold degenerate ground space.
    zz = np.diag([1.0, -1.0, -1.0, 1.0]).astype(complex)
    rho = t_zero_limit(zz).rho
    assert np.allclose(rho, np.diag([0.0, 0.5, 0.5, 0.0]), atol=1e-14)


def test_t_infinity_limit_is_maximally_mixed():
    state = t_infinity_limit(4)
    assert state.rho.shape == (16, 16)
    assert np.allclose(state.rho, np.eye(16) / 16)
    assert state.temperature == float("inf")


# ---------------------------------------------------- entropy and free energy


def test_entropy_pure_and_mixed_endpoints():
    dim = 8
    pure = np.zeros((dim, dim), dtype=complex)
    pure[3, 3] = 1.0
    assert von_neumann_entropy(pure) == pytest.approx(0.0, abs=1e-12)
    assert von_neumann_entropy(np.eye(dim) / dim) == pytest.approx(np.log(dim), abs=1e-12)


def test_entropy_matches_spectrum_oracle():
    rng = np.random.default_rng(11)
    for _ in range(5):
        rho = random_density_matrix(rng, 8)
        expected = shannon_entropy(np.linalg.eigvalsh(rho))
        assert von_neumann_entropy(rho) == pytest.approx(expected, abs=1e-10)


def test_entropy_rejects_negative_eigenvalues():
    bad = np.diag([1.1, -0.1]).astype(complex)
    with pytest.raises(ValueError, match="negative"):
        von_neumann_entropy(bad)


def test_gibbs_state_minimizes_free_energy():
    h = build_hamiltonian(SU2_PARAMS.replace_mu(0.8))
    rng = np.random.default_rng(23)
    for temperature in (0.3, 1.0, 4.0):
        f_gibbs = free_energy(gibbs_state(h, temperature), h, temperature)
        for _ in range(20):
            rho = random_density_matrix(rng, 16)
            assert free_energy(rho, h, temperature) >= f_gibbs - 1e-10


def test_gibbs_free_energy_equals_minus_t_log_z():
    h = build_hamiltonian(SU3_PARAMS.replace_mu(0.5))
    evals = np.linalg.eigvalsh(h.full.to_matrix())
    for temperature in (0.4, 2.0):
        shifted = evals - evals[0]
        log_z = np.log(np.sum(np.exp(-shifted / temperature))) - evals[0] / temperature
        f = free_energy(gibbs_state(h, temperature), h, temperature)
        assert f == pytest.approx(-temperature * log_z, abs=1e-9)


# ------------------------------------------------------- simultaneous_levels


def test_simultaneous_levels_on_random_commuting_pair():
    rng = np.random.default_rng(37)
    dim = 12
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    # Clustered h0 spectrum forces the degenerate-block path.
    e0 = np.repeat([-2.0, -2.0 + 1e-12, 0.5, 0.5, 0.5, 3.0], 2)[:dim]
    b0 = rng.integers(-2, 3, size=dim).astype(float)
    h0 = (q * e0) @ q.conj().T
    b = (q * b0) @ q.conj().T
    energies, baryons, basis = simultaneous_levels(h0, b)
    assert np.all(np.diff(energies) >= -1e-12)
    assert np.allclose(basis.conj().T @ basis, np.eye(dim), atol=1e-10)
    assert np.allclose(basis.conj().T @ h0 @ basis, np.diag(energies), atol=1e-8)
    assert np.allclose(basis.conj().T @ b @ basis, np.diag(baryons), atol=1e-8)


# ---------------------------------------------------------- singlet spectrum


@pytest.mark.parametrize(
    "params,expected",
    [(SU2_PARAMS, SU2_LEVELS), (SU3_PARAMS, SU3_LEVELS)],
    ids=["su2", "su3"],
)
def test_singlet_spectrum_frozen_levels(params, expected):
    spectrum = singlet_spectrum(params)
    assert len(spectrum.levels) == len(expected)
    assert sum(lvl.multiplicity for lvl in spectrum.levels) == (5 if params.group is Group.SU2 else 6)
    for lvl, (energy, baryon, mult, label) in zip(spectrum.levels, expected):
        assert lvl.energy_mu0 == pytest.approx(energy, abs=2e-9)
        assert lvl.baryon == pytest.approx(baryon, abs=1e-6)
        assert lvl.multiplicity == mult
        assert lvl.label == label


def test_singlet_levels_shift_linearly_with_mu(su2_ensemble):
    spectrum = su2_ensemble.spectrum
    e0 = spectrum.energies_at(0.0)
    e2 = spectrum.energies_at(2.0)
    baryons = np.array([lvl.baryon for lvl in spectrum.levels])
    assert np.allclose(e2, e0 - 2.0 * baryons, atol=1e-12)


def test_singlet_spectrum_matches_projected_hamiltonian_eigenvalues():
    for params in (SU2_PARAMS, SU3_PARAMS):
        h0 = build_hamiltonian(params.replace_mu(0.0)).full.to_matrix()
        proj = brute_force_singlet_projector(params)
        # Eigenvalues of P H P restricted to range(P), via penalizing the complement.
        dim = h0.shape[0]
        rank = int(round(np.trace(proj).real))
        penalty = 1e6 * (np.eye(dim) - proj)
        evals = np.linalg.eigvalsh(proj @ h0 @ proj + penalty)[:rank]
        spectrum = singlet_spectrum(params)
        expanded = sorted(
            lvl.energy_mu0 for lvl in spectrum.levels for _ in range(lvl.multiplicity)
        )
        assert np.allclose(sorted(evals), expanded, atol=1e-6)


# ------------------------------------------------------------ thermal sweeps


@pytest.mark.parametrize(
    "fixture_name,table",
    [("su2_ensemble", SU2_CHI0_T05), ("su3_ensemble", SU3_CHI0_T05)],
    ids=["su2", "su3"],
)
def test_chi0_frozen_values_at_half_unit_temperature(fixture_name, table, request):
    ens = request.getfixturevalue(fixture_name)
    for mu, expected in table.items():
        obs = ens.observables(0.5, mu)
        assert obs["chi0"] == pytest.approx(expected, abs=1e-9)


def test_cold_chi0_reaches_vacuum_condensate(su2_ensemble, su3_ensemble):
    assert su2_ensemble.observables(0.05, 0.01)["chi0"] == pytest.approx(
        -1.57451392832, abs=1e-9
    )
    assert su3_ensemble.observables(0.05, 0.01)["chi0"] == pytest.approx(
        -2.51384294649, abs=1e-9
    )


def test_hot_chi0_melts_to_zero(su2_ensemble, su3_ensemble):
    assert abs(su2_ensemble.observables(1e4, 0.01)["chi0"]) < 1e-3
    assert abs(su3_ensemble.observables(1e4, 0.01)["chi0"]) < 1e-3


def test_chi0_monotone_in_mu_at_moderate_temperature(su2_ensemble, su3_ensemble):
    for ens, mu_hi in ((su2_ensemble, 3.5), (su3_ensemble, 4.0)):
        grid = np.linspace(0.0, mu_hi, 29)
        values = [ens.observables(0.5, mu)["chi0"] for mu in grid]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_frozen_observable_rows(su2_ensemble, su3_ensemble):
    obs = su2_ensemble.observables(0.5, 1.5)
    assert obs["Z0_over_Z"] == pytest.approx(0.485789727291, abs=1e-9)
    assert obs["E0_singlet"] == pytest.approx(-0.391037184276, abs=1e-9)
    obs = su3_ensemble.observables(0.5, 2.0)
    assert obs["Z0_over_Z"] == pytest.approx(0.239455704234, abs=1e-9)
    assert obs["E0_singlet"] == pytest.approx(-0.435337850166, abs=1e-9)


@pytest.mark.parametrize(
    "params,temperature,mu",
    [
        (SU2_PARAMS, 0.5, 0.75),
        (SU2_PARAMS, 2.0, 1.5),
        (SU3_PARAMS, 0.5, 2.0),
        (SU3_PARAMS, 1.3, 0.4),
    ],
    ids=["su2-cool", "su2-warm", "su3-cool", "su3-warm"],
)
def test_ensemble_observables_match_dense_gibbs_route(params, temperature, mu):
    """Level-resummed observables == dense rho route through the kernel."""
    ens = ThermalEnsemble(params)
    obs = ens.observables(temperature, mu)
    h = build_hamiltonian(params.replace_mu(mu))
    rho = gibbs_state(h, temperature).rho
    kernel = build_kernel(params.group, params.n_sites)
    chi = chiral_condensate(params)
    assert obs["chi0"] == pytest.approx(restricted_expectation(rho, chi, kernel), abs=1e-9)
    assert obs["Z0_over_Z"] == pytest.approx(singlet_fraction(rho, kernel), abs=1e-10)
    assert obs["E0_singlet"] == pytest.approx(
        restricted_expectation(rho, h.full, kernel), abs=1e-8
    )


def test_kernel_route_equals_projector_route_for_thermal_states():
    """Tr(rho chi K)/Tr(rho K) == Tr(rho chi P)/Tr(rho P) for rho = f(H)."""
    for params, mu in ((SU2_PARAMS, 1.2), (SU3_PARAMS, 0.9)):
        h = build_hamiltonian(params.replace_mu(mu))
        rho = gibbs_state(h, 0.8).rho
        kernel = build_kernel(params.group, params.n_sites)
        proj = brute_force_singlet_projector(params)
        chi = chiral_condensate(params).to_matrix()
        via_projector = np.trace(rho @ chi @ proj).real / np.trace(rho @ proj).real
        via_kernel = restricted_expectation(rho, chiral_condensate(params), kernel)
        assert via_kernel == pytest.approx(via_projector, abs=1e-10)


def test_label_weights_are_a_distribution(su2_ensemble, su3_ensemble):
    labels = ("w_vacuum", "w_baryon", "w_antibaryon", "w_meson", "w_other")
    for ens in (su2_ensemble, su3_ensemble):
        for temperature, mu in ((0.1, 0.0), (0.5, 1.5), (5.0, 2.5)):
            obs = ens.observables(temperature, mu)
            assert all(obs[k] >= 0.0 for k in labels)
            assert sum(obs[k] for k in labels) == pytest.approx(1.0, abs=1e-12)


def test_cold_dense_phase_is_baryon_dominated(su2_ensemble, su3_ensemble):
    assert su2_ensemble.observables(0.05, 3.5)["w_baryon"] > 0.99
    assert su3_ensemble.observables(0.05, 4.0)["w_baryon"] > 0.99
    assert su2_ensemble.observables(0.05, 0.01)["w_vacuum"] > 0.99


def test_ensemble_rejects_nonpositive_temperature(su2_ensemble):
    with pytest.raises(ValueError):
        su2_ensemble.observables(0.0, 1.0)


# ------------------------------------------------------------------ CSV table


def test_phase_sweep_csv_layout(su2_ensemble):
    temps = [0.25, 0.5]
    mus = [0.0, 1.0, 2.0]
    table = phase_sweep(SU2_PARAMS, temps, mus, ensemble=su2_ensemble)
    text = table.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + len(temps) * len(mus)
    # Row order: temperature outer, chemical potential inner.
    cells = [line.split(",") for line in lines[1:]]
    assert [c[4] for c in cells] == ["0.25"] * 3 + ["0.5"] * 3
    assert [c[5] for c in cells] == ["0", "1", "2"] * 2
    assert all(c[0] == "su2" and c[1] == "2" for c in cells)
    # Numeric cells carry 12 significant digits.
    chi_cell = float(cells[4][CSV_COLUMNS.index("chi0")])
    assert chi_cell == pytest.approx(su2_ensemble.observables(0.5, 1.0)["chi0"], rel=1e-11)


def test_phase_sweep_reuses_supplied_ensemble(su3_ensemble):
    table = phase_sweep(SU3_PARAMS, [0.5], [2.0], ensemble=su3_ensemble)
    assert table.rows[0]["chi0"] == pytest.approx(SU3_CHI0_T05[2.0], abs=1e-9)
    assert table.rows[0]["group"] == "su3"
    assert table.temperatures == (0.5,)
    assert table.chem_potentials == (2.0,)
