"""Pauli-string algebra on a fixed qubit register.

Strings are stored symplectically as an (x_mask, z_mask) pair plus a global
phase restricted to {1, -1, 1j, -1j}.  Qubit 1 is the *leftmost* tensor
factor, i.e. the most significant bit of a computational-basis index, so the
dense realization of a string is literally ``kron(P1, P2, ..., Pn)``.

A ``PauliSum`` is a complex linear combination of strings with the phase
folded into the coefficient; terms with |coeff| <= 1e-14 are dropped when
pruned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

VALID_PHASES = (1 + 0j, -1 + 0j, 1j, -1j)
PRUNE_TOL = 1e-14
DENSE_QUBIT_CAP = 14

_LETTER_TO_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_TO_LETTER = {v: k for k, v in _LETTER_TO_BITS.items()}


def popcount_array(a: np.ndarray) -> np.ndarray:
    """Per-element population count of a nonnegative integer array."""
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(a.astype(np.uint64)).astype(np.int64)
    out = np.zeros_like(a, dtype=np.int64)
    work = a.astype(np.uint64).copy()
    while np.any(work):
        out += (work & 1).astype(np.int64)
        work >>= np.uint64(1)
    return out


def _mask_bit(n_qubits: int, qubit: int) -> int:
    """Mask with the bit for `qubit` (1-based, qubit 1 = MSB) set."""
    if not 1 <= qubit <= n_qubits:
        raise ValueError(f"qubit {qubit} out of range for {n_qubits} qubits")
    return 1 << (n_qubits - qubit)


@dataclass(frozen=True, slots=True)
class PauliString:
    """A single Pauli string `phase * (letter_1 x ... x letter_n)`.

    The letters are literal: a qubit with both mask bits set contributes the
    matrix Y (not XZ), so ``to_matrix`` equals the plain tensor product of
    the letters times ``phase``.
    """

    n_qubits: int
    x_mask: int
    z_mask: int
    phase: complex = 1 + 0j

    def __post_init__(self) -> None:
        if self.n_qubits < 1:
            raise ValueError("need at least one qubit")
        full = (1 << self.n_qubits) - 1
        if not (0 <= self.x_mask <= full and 0 <= self.z_mask <= full):
            raise ValueError("mask out of range for register size")
        if self.phase not in VALID_PHASES:
            raise ValueError(f"phase must be one of {VALID_PHASES}, got {self.phase}")

    # -- constructors ------------------------------------------------------

    @classmethod
    def identity(cls, n_qubits: int) -> "PauliString":
        return cls(n_qubits, 0, 0)

    @classmethod
    def from_label(cls, label: str, phase: complex = 1 + 0j) -> "PauliString":
        """Build from a letter string, e.g. ``"XZIY"`` (qubit 1 first)."""
        n = len(label)
        x = z = 0
        for k, letter in enumerate(label.upper()):
            try:
                xb, zb = _LETTER_TO_BITS[letter]
            except KeyError:
                raise ValueError(f"unknown Pauli letter {letter!r}") from None
            bit = 1 << (n - 1 - k)
            x |= xb * bit
            z |= zb * bit
        return cls(n, x, z, phase)

    @classmethod
    def single(cls, n_qubits: int, qubit: int, letter: str) -> "PauliString":
        """A single-qubit letter embedded in an n-qubit register."""
        bit = _mask_bit(n_qubits, qubit)
        xb, zb = _LETTER_TO_BITS[letter.upper()]
        return cls(n_qubits, xb * bit, zb * bit)

    # -- queries -----------------------------------------------------------

    def label(self) -> str:
        letters = []
        for qubit in range(1, self.n_qubits + 1):
            bit = 1 << (self.n_qubits - qubit)
            letters.append(_BITS_TO_LETTER[(int(bool(self.x_mask & bit)), int(bool(self.z_mask & bit)))])
        return "".join(letters)

    @property
    def weight(self) -> int:
        return (self.x_mask | self.z_mask).bit_count()

    @property
    def is_diagonal(self) -> bool:
        return self.x_mask == 0

    def commutes_with(self, other: "PauliString") -> bool:
        """Symplectic commutation test (phases are irrelevant)."""
        _check_same_register(self, other)
        anti = (self.x_mask & other.z_mask).bit_count() + (self.z_mask & other.x_mask).bit_count()
        return anti % 2 == 0

    # -- algebra -----------------------------------------------------------

    def __matmul__(self, other: "PauliString") -> "PauliString":
        """Operator product, tracking the {±1, ±i} phase exactly.

        Uses the normal-ordered form: a literal string equals
        i^{|x&z|} X^x Z^z, and Z^za X^xb = (-1)^{|za & xb|} X^xb Z^za.
        """
        _check_same_register(self, other)
        xc = self.x_mask ^ other.x_mask
        zc = self.z_mask ^ other.z_mask
        k = (
            (self.x_mask & self.z_mask).bit_count()
            + (other.x_mask & other.z_mask).bit_count()
            - (xc & zc).bit_count()
            + 2 * (self.z_mask & other.x_mask).bit_count()
        )
        phase = self.phase * other.phase * (1j) ** (k % 4)
        return PauliString(self.n_qubits, xc, zc, complex(phase))

    def __neg__(self) -> "PauliString":
        return PauliString(self.n_qubits, self.x_mask, self.z_mask, -self.phase)

    def with_phase(self, phase: complex) -> "PauliString":
        return PauliString(self.n_qubits, self.x_mask, self.z_mask, complex(phase))

    def __mul__(self, scalar: complex) -> "PauliString":
        phase = complex(self.phase * scalar)
        if phase not in VALID_PHASES:
            raise ValueError("PauliString phase must stay in {±1, ±i}; use a PauliSum for general coefficients")
        return self.with_phase(phase)

    __rmul__ = __mul__

    # -- dense realization ---------------------------------------------------

    def column_action(self, dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized action on basis states: P|j> = amp[j] |j ^ x_mask>.

        Returns ``(rows, amps)`` where rows[j] = j ^ x_mask.
        """
        if dim is None:
            dim = 1 << self.n_qubits
        j = np.arange(dim, dtype=np.int64)
        rows = j ^ self.x_mask
        n_y = (self.x_mask & self.z_mask).bit_count()
        amps = self.phase * (1j) ** (n_y % 4) * (-1.0) ** (popcount_array(j & self.z_mask) % 2)
        return rows, amps.astype(complex)

    def to_matrix(self) -> np.ndarray:
        if self.n_qubits > DENSE_QUBIT_CAP:
            raise ValueError(f"dense realization capped at {DENSE_QUBIT_CAP} qubits")
        dim = 1 << self.n_qubits
        rows, amps = self.column_action(dim)
        mat = np.zeros((dim, dim), dtype=complex)
        mat[rows, np.arange(dim)] = amps
        return mat

    def __str__(self) -> str:  # pragma: no cover - debugging aid
        sign = {1 + 0j: "+", -1 + 0j: "-", 1j: "+i", -1j: "-i"}[self.phase]
        return f"{sign}{self.label()}"


def _check_same_register(a: PauliString, b: PauliString) -> None:
    if a.n_qubits != b.n_qubits:
        raise ValueError(f"register mismatch: {a.n_qubits} vs {b.n_qubits} qubits")


class PauliSum:
    """Complex linear combination of Pauli strings on a fixed register.

    Terms are keyed by (x_mask, z_mask) with the string phase folded into
    the coefficient, so every stored string is the literal +1-phase letter
    product (which is Hermitian); the sum is Hermitian iff all coefficients
    are real.
    """

    __slots__ = ("n_qubits", "_terms")

    def __init__(self, n_qubits: int, terms: dict[tuple[int, int], complex] | None = None):
        self.n_qubits = n_qubits
        self._terms: dict[tuple[int, int], complex] = dict(terms) if terms else {}

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, n_qubits: int) -> "PauliSum":
        return cls(n_qubits)

    @classmethod
    def identity(cls, n_qubits: int, coeff: complex = 1.0) -> "PauliSum":
        return cls(n_qubits, {(0, 0): complex(coeff)})

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[complex, PauliString]]) -> "PauliSum":
        out: "PauliSum | None" = None
        for coeff, string in terms:
            if out is None:
                out = cls(string.n_qubits)
            out._add_term(string, complex(coeff))
        if out is None:
            raise ValueError("from_terms needs at least one term (use zero() otherwise)")
        return out

    @classmethod
    def from_string(cls, string: PauliString, coeff: complex = 1.0) -> "PauliSum":
        return cls.from_terms([(coeff, string)])

    @classmethod
    def from_label(cls, label: str, coeff: complex = 1.0) -> "PauliSum":
        return cls.from_string(PauliString.from_label(label), coeff)

    def _add_term(self, string: PauliString, coeff: complex) -> None:
        if string.n_qubits != self.n_qubits:
            raise ValueError("register mismatch")
        key = (string.x_mask, string.z_mask)
        self._terms[key] = self._terms.get(key, 0j) + coeff * string.phase

    # -- iteration / queries -------------------------------------------------

    def items(self) -> Iterator[tuple[complex, PauliString]]:
        """Terms in canonical (x_mask, z_mask) order; identity first."""
        for key in sorted(self._terms):
            yield self._terms[key], PauliString(self.n_qubits, key[0], key[1])

    def coefficient(self, string: PauliString) -> complex:
        return self._terms.get((string.x_mask, string.z_mask), 0j) * string.phase

    def __len__(self) -> int:
        return len(self._terms)

    @property
    def is_diagonal(self) -> bool:
        return all(x == 0 for x, _ in self._terms)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return all(abs(c.imag) <= tol for c in self._terms.values())

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if self.n_qubits != other.n_qubits:
            raise ValueError("register mismatch")
        terms = dict(self._terms)
        for key, coeff in other._terms.items():
            terms[key] = terms.get(key, 0j) + coeff
        return PauliSum(self.n_qubits, terms)

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + (-1.0) * other

    def __mul__(self, scalar: complex) -> "PauliSum":
        return PauliSum(self.n_qubits, {k: complex(scalar) * c for k, c in self._terms.items()})

    __rmul__ = __mul__

    def __neg__(self) -> "PauliSum":
        return (-1.0) * self

    def __matmul__(self, other: "PauliSum") -> "PauliSum":
        """Operator product (expands pairwise and collects)."""
        if self.n_qubits != other.n_qubits:
            raise ValueError("register mismatch")
        out = PauliSum(self.n_qubits)
        for (xa, za), ca in self._terms.items():
            a = PauliString(self.n_qubits, xa, za)
            for (xb, zb), cb in other._terms.items():
                prod = a @ PauliString(self.n_qubits, xb, zb)
                out._add_term(prod, ca * cb)
        return out

    def dagger(self) -> "PauliSum":
        """Adjoint; stored strings are Hermitian so only coefficients conjugate."""
        return PauliSum(self.n_qubits, {k: c.conjugate() for k, c in self._terms.items()})

    def prune(self, tol: float = PRUNE_TOL) -> "PauliSum":
        return PauliSum(self.n_qubits, {k: c for k, c in self._terms.items() if abs(c) > tol})

    # -- dense / numeric -------------------------------------------------------

    def to_matrix(self, max_qubits: int = DENSE_QUBIT_CAP) -> np.ndarray:
        if self.n_qubits > max_qubits:
            raise ValueError(f"dense realization capped at {max_qubits} qubits")
        dim = 1 << self.n_qubits
        mat = np.zeros((dim, dim), dtype=complex)
        cols = np.arange(dim)
        for coeff, string in self.items():
            rows, amps = string.column_action(dim)
            mat[rows, cols] += coeff * amps
        return mat

    def diagonal_values(self) -> np.ndarray:
        """Real diagonal of an all-Z sum as a length-2^n vector."""
        if not self.is_diagonal:
            raise ValueError("diagonal_values requires an all-Z (diagonal) sum")
        dim = 1 << self.n_qubits
        j = np.arange(dim, dtype=np.int64)
        out = np.zeros(dim, dtype=complex)
        for (_, z), coeff in self._terms.items():
            out += coeff * (-1.0) ** (popcount_array(j & z) % 2)
        if np.max(np.abs(out.imag), initial=0.0) > 1e-10:
            raise ValueError("diagonal of a non-Hermitian sum is complex")
        return out.real

    def expectation(self, rho: np.ndarray) -> float:
        """Tr(rho * self) for a density matrix, as a real number.

        Raises if the imaginary residue exceeds 1e-10 (non-Hermitian input);
        smaller residues are discarded.
        """
        dim = 1 << self.n_qubits
        if rho.shape != (dim, dim):
            raise ValueError(f"density matrix shape {rho.shape} does not match {self.n_qubits} qubits")
        j = np.arange(dim)
        total = 0j
        for coeff, string in self.items():
            rows, amps = string.column_action(dim)
            total += coeff * np.sum(rho[j, rows] * amps)
        if abs(total.imag) > 1e-10:
            raise ValueError(f"expectation has imaginary residue {total.imag:.3e}")
        return float(total.real)

    # -- serialization -----------------------------------------------------------

    def to_json_terms(self) -> list[dict]:
        return [
            {"pauli": string.label(), "re": float(coeff.real), "im": float(coeff.imag)}
            for coeff, string in self.items()
        ]

    @classmethod
    def from_json_terms(cls, n_qubits: int, records: Iterable[dict]) -> "PauliSum":
        out = cls(n_qubits)
        for rec in records:
            out._add_term(PauliString.from_label(rec["pauli"]), complex(rec["re"], rec.get("im", 0.0)))
        return out

    def __str__(self) -> str:  # pragma: no cover - debugging aid
        parts = [f"({c.real:+.6g}{c.imag:+.6g}j)*{s.label()}" for c, s in self.items()]
        return " ".join(parts) if parts else "0"


def partition_commuting(s: PauliSum) -> list[PauliSum]:
    """Greedy partition into mutually-commuting families.

    The all-Z (diagonal) strings always form the first family so a single
    computational-basis histogram serves them all; remaining strings are
    assigned to the first existing family they commute with, in canonical
    term order (deterministic).
    """
    diagonal: list[tuple[complex, PauliString]] = []
    rest: list[tuple[complex, PauliString]] = []
    for coeff, string in s.prune().items():
        (diagonal if string.is_diagonal else rest).append((coeff, string))

    families: list[list[tuple[complex, PauliString]]] = []
    if diagonal:
        families.append(diagonal)
    for coeff, string in rest:
        placed = False
        for family in families:
            if all(string.commutes_with(member) for _, member in family):
                family.append((coeff, string))
                placed = True
                break
        if not placed:
            families.append([(coeff, string)])
    return [PauliSum.from_terms(family) for family in families]


def diagonal_pauli_decomposition(diag: np.ndarray, prune_tol: float = PRUNE_TOL) -> PauliSum:
    """Expand a real diagonal operator in Z-strings via a fast Walsh transform.

    The coefficient of the Z-string with mask m is
    (1/2^n) * sum_j (-1)^{popcount(j & m)} diag[j], which is exactly the
    natural-order Walsh-Hadamard transform of the diagonal.
    """
    dim = len(diag)
    n = dim.bit_length() - 1
    if 1 << n != dim:
        raise ValueError("diagonal length must be a power of two")
    coeffs = np.array(diag, dtype=float, copy=True)
    h = 1
    while h < dim:
        for start in range(0, dim, 2 * h):
            a = coeffs[start : start + h].copy()
            b = coeffs[start + h : start + 2 * h].copy()
            coeffs[start : start + h] = a + b
            coeffs[start + h : start + 2 * h] = a - b
        h *= 2
    coeffs /= dim
    terms = {(0, int(m)): complex(c) for m, c in enumerate(coeffs) if abs(c) > prune_tol}
    return PauliSum(n, terms)
