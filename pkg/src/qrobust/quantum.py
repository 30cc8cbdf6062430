"""Quantum objects on top of the linalg kernel.

Conventions used throughout the package:

* Registers are ordered lists of qubit variables; tensor factor 0 is the
  leftmost variable, so basis index ``b1 b2 ... bk`` reads most-significant
  bit first.
* Choi matrices put the output factor first:
  ``J(E) = sum_ij E(|i><j|) (x) |i><j|``.
* Kraus lists are gauge-dependent; channel equality is always decided by
  Choi-matrix distance, never by comparing Kraus lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DimensionError, QRobustError, UnknownGateError, UnknownVariableError

CHOI_EQ_TOL = 1e-10
TP_TOL = 1e-9


# ---------------------------------------------------------------------------
# basic states and gates

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def ket(bits: str) -> np.ndarray:
    """Computational basis column vector |bits>."""
    idx = int(bits, 2)
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[idx] = 1.0
    return v


def proj(bits: str) -> np.ndarray:
    """Rank-one projector |bits><bits|."""
    v = ket(bits)
    return np.outer(v, v.conj())


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Partial density operator: Hermitian, PSD, trace <= 1 (all within tol)."""

    mat: np.ndarray

    def __post_init__(self):
        m = linalg.matrix(self.mat)
        if m.shape[0] != m.shape[1]:
            raise DimensionError(f"density operator must be square, got {m.shape}")
        if not linalg.is_hermitian(m):
            raise QRobustError("density operator is not Hermitian")
        if not linalg.is_psd(m):
            raise QRobustError("density operator is not PSD")
        if m.trace().real > 1 + 1e-9:
            raise QRobustError(f"density operator trace {m.trace().real} > 1")
        object.__setattr__(self, "mat", m)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def trace(self) -> float:
        return float(self.mat.trace().real)


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Completely positive, trace-non-increasing map in Kraus form."""

    kraus: tuple
    d_in: int = field(default=0)
    d_out: int = field(default=0)

    def __post_init__(self):
        ops = tuple(linalg.matrix(k) for k in self.kraus)
        if not ops:
            raise QRobustError("superoperator needs at least one Kraus operator")
        d_out, d_in = ops[0].shape
        for k in ops:
            if k.shape != (d_out, d_in):
                raise DimensionError("inconsistent Kraus operator shapes")
        gram = sum(linalg.dagger(k) @ k for k in ops)
        top = float(np.linalg.eigvalsh(linalg.herm(gram))[-1])
        if top > 1 + TP_TOL:
            raise QRobustError(f"not trace-non-increasing: max eig of sum E†E = {top}")
        object.__setattr__(self, "kraus", ops)
        object.__setattr__(self, "d_in", d_in)
        object.__setattr__(self, "d_out", d_out)
        object.__setattr__(
            self, "_tp", bool(np.abs(gram - np.eye(d_in)).max() <= TP_TOL)
        )

    @property
    def is_trace_preserving(self) -> bool:
        return self._tp

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        if rho.shape != (self.d_in, self.d_in):
            raise DimensionError(f"apply: state {rho.shape} vs channel d_in={self.d_in}")
        out = np.zeros((self.d_out, self.d_out), dtype=complex)
        for k in self.kraus:
            out += k @ rho @ linalg.dagger(k)
        return out


def unitary_channel(u: np.ndarray) -> Superoperator:
    return Superoperator((linalg.matrix(u),))


def identity_channel(d: int) -> Superoperator:
    return Superoperator((np.eye(d, dtype=complex),))


@dataclass(frozen=True, eq=False)
class Measurement:
    """Ordered measurement {label: M_label} with sum M†M = I."""

    outcomes: tuple  # of (label, np.ndarray)

    def __post_init__(self):
        outs = tuple((str(lbl), linalg.matrix(m)) for lbl, m in self.outcomes)
        if not outs:
            raise QRobustError("measurement needs at least one outcome")
        d = outs[0][1].shape[1]
        comp = sum(linalg.dagger(m) @ m for _, m in outs)
        if np.abs(comp - np.eye(d)).max() > TP_TOL:
            raise QRobustError("measurement is not complete (sum M†M != I)")
        object.__setattr__(self, "outcomes", outs)

    @property
    def labels(self) -> tuple:
        return tuple(lbl for lbl, _ in self.outcomes)

    def op(self, label: str) -> np.ndarray:
        for lbl, m in self.outcomes:
            if lbl == str(label):
                return m
        raise KeyError(label)

    @property
    def dim(self) -> int:
        return self.outcomes[0][1].shape[1]


@dataclass(frozen=True, eq=False)
class Predicate:
    """Hermitian Q with 0 ⊑ Q ⊑ I."""

    mat: np.ndarray

    def __post_init__(self):
        m = linalg.matrix(self.mat)
        if not linalg.is_hermitian(m):
            raise QRobustError("predicate is not Hermitian")
        ev = np.linalg.eigvalsh(linalg.herm(m))
        if ev[0] < -linalg.PSD_TOL or ev[-1] > 1 + linalg.PSD_TOL:
            raise QRobustError(f"predicate eigenvalues not within [0,1]: {ev[0]}, {ev[-1]}")
        object.__setattr__(self, "mat", linalg.herm(m))

    @property
    def dim(self) -> int:
        return self.mat.shape[0]


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Error probability p together with the error channel applied at rate p."""

    p: float
    channel: Superoperator

    def __post_init__(self):
        if not (-1e-12 <= self.p <= 1 + 1e-12):
            raise QRobustError(f"noise probability {self.p} outside [0,1]")
        object.__setattr__(self, "p", float(min(1.0, max(0.0, self.p))))


# ---------------------------------------------------------------------------
# operations


def apply(e: Superoperator, rho: DensityOperator) -> DensityOperator:
    return DensityOperator(e(rho.mat))


def compose(e2: Superoperator, e1: Superoperator) -> Superoperator:
    """e2 ∘ e1, Kraus set of all pairwise products."""
    if e1.d_out != e2.d_in:
        raise DimensionError(f"compose: {e1.d_out} -> {e2.d_in}")
    return Superoperator(tuple(f @ k for f in e2.kraus for k in e1.kraus))


def dual(e: Superoperator) -> Superoperator:
    """Schrödinger-Heisenberg dual, Kraus form sum E†k ∘ Ek."""
    return Superoperator(tuple(linalg.dagger(k) for k in e.kraus))


def dual_apply(e: Superoperator, a: np.ndarray) -> np.ndarray:
    """E*(A) without constructing the dual Superoperator (A need not be PSD)."""
    a = np.asarray(a, dtype=complex)
    out = np.zeros((e.d_in, e.d_in), dtype=complex)
    for k in e.kraus:
        out += linalg.dagger(k) @ a @ k
    return out


def choi(e: Superoperator) -> np.ndarray:
    """J(E) = sum_ij E(|i><j|) (x) |i><j|, output factor first.

    With row-major flattening, (K (x) I)|omega> is exactly K.reshape(-1),
    so J is the sum of outer products of flattened Kraus operators.
    """
    if e.d_in != e.d_out:
        raise DimensionError("choi: requires d_in == d_out")
    d = e.d_in
    j = np.zeros((d * d, d * d), dtype=complex)
    for k in e.kraus:
        r = k.reshape(-1)
        j += np.outer(r, r.conj())
    return j


def choi_difference(e: Superoperator, f: Superoperator) -> np.ndarray:
    if (e.d_in, e.d_out) != (f.d_in, f.d_out):
        raise DimensionError("choi_difference: dimension mismatch")
    return choi(e) - choi(f)


def choi_apply(j: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Contract a Choi matrix with an input state: tr_B(J · (I ⊗ rho^T))."""
    j = np.asarray(j, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    d_in = rho.shape[0]
    d_out = j.shape[0] // d_in
    t = j.reshape(d_out, d_in, d_out, d_in)
    return np.einsum("abcd,bd->ac", t, rho)


def superop_equal(e: Superoperator, f: Superoperator, tol: float = CHOI_EQ_TOL) -> bool:
    """Channel equality via Choi distance (Kraus gauge-independent)."""
    return bool(np.abs(choi_difference(e, f)).max() <= tol)


# ---------------------------------------------------------------------------
# lifting local operations to a register


def _reorder_indices(n: int, order: list[int]) -> np.ndarray:
    """Basis permutation sending qubit ``order[s]`` to slot ``s``.

    Returns ``r`` with ``r[i]`` = index whose bit at original position
    ``order[s]`` appears at slot ``s``; i.e. reordered = a[np.ix_(r, r)]
    pulls the target qubits to the front.
    """
    idx = np.arange(1 << n)
    r = np.zeros_like(idx)
    for slot, orig in enumerate(order):
        bit = (idx >> (n - 1 - slot)) & 1
        r |= bit << (n - 1 - orig)
    return r


def lift(op, target_vars: list[str], register: list[str]):
    """Extend an operator on ``target_vars`` by identity on the rest.

    ``op`` may be a matrix, a Superoperator, or a Measurement; the result is
    the same kind on the full register. Qubit-order permutations implied by
    the position of ``target_vars`` inside ``register`` are handled here.
    """
    register = list(register)
    targets = list(target_vars)
    for v in targets:
        if v not in register:
            raise UnknownVariableError(f"variable {v!r} not in register {register}")
    if len(set(targets)) != len(targets):
        raise QRobustError(f"duplicate variables in target list {targets}")
    n = len(register)
    k = len(targets)
    order = [register.index(v) for v in targets]
    order += [i for i in range(n) if i not in order]

    if isinstance(op, Superoperator):
        if op.d_in != 2**k or op.d_out != 2**k:
            raise DimensionError(f"lift: channel dim {op.d_in} vs {k} target qubits")
        return Superoperator(tuple(_lift_matrix(m, order, n, k) for m in op.kraus))
    if isinstance(op, Measurement):
        return Measurement(
            tuple((lbl, _lift_matrix(m, order, n, k)) for lbl, m in op.outcomes)
        )
    m = linalg.matrix(op)
    if m.shape != (2**k, 2**k):
        raise DimensionError(f"lift: matrix shape {m.shape} vs {k} target qubits")
    return _lift_matrix(m, order, n, k)


def _lift_matrix(m: np.ndarray, order: list[int], n: int, k: int) -> np.ndarray:
    big = np.kron(m, np.eye(2 ** (n - k), dtype=complex))
    r = _reorder_indices(n, order)
    out = np.zeros_like(big)
    out[np.ix_(r, r)] = big
    return out


# ---------------------------------------------------------------------------
# builtins


def _qw_shift(n: int) -> np.ndarray:
    """Cyclic shift for a quantum walk on an n-point circle.

    The position lives on ceil(log2 n) qubits; positions >= n are fixed
    points of the shift (the front end routes them to the exit outcome of
    the guard measurement, so they never enter the walk).
    """
    if n < 2:
        raise UnknownGateError(f"QW_S: need at least 2 positions, got {n}")
    k = max(1, int(np.ceil(np.log2(n))))
    dp = 2**k
    s = np.zeros((2 * dp, 2 * dp), dtype=complex)
    for i in range(n):
        s[0 * dp + (i - 1) % n, 0 * dp + i] = 1.0  # |L, i-1 mod n><L, i|
        s[1 * dp + (i + 1) % n, 1 * dp + i] = 1.0  # |R, i+1 mod n><R, i|
    for i in range(n, dp):
        s[0 * dp + i, 0 * dp + i] = 1.0
        s[1 * dp + i, 1 * dp + i] = 1.0
    return s


_QBF_U = np.array(
    [
        [1, 0, 0, -1],
        [1, 0, 0, 1],
        [0, 1, 1, 0],
        [0, 1, -1, 0],
    ],
    dtype=complex,
) / np.sqrt(2)


def _toffoli(pattern: str) -> np.ndarray:
    if len(pattern) != 2 or any(c not in "01" for c in pattern):
        raise UnknownGateError(f"TOFFOLI control pattern {pattern!r}")
    u = np.eye(8, dtype=complex)
    base = int(pattern, 2) << 1
    u[[base, base + 1]] = u[[base + 1, base]]  # flip target when controls match
    return u


def _float_param(name, params, lo=None, hi=None):
    if len(params) != 1:
        raise UnknownGateError(f"{name} takes exactly one parameter")
    p = float(params[0])
    if lo is not None and not (lo <= p <= hi):
        raise UnknownGateError(f"{name} parameter {p} outside [{lo},{hi}]")
    return p


def builtin(name: str, params: list | None = None):
    """Builtin gates and channels by name.

    Gates return a unitary matrix, channels a Superoperator. Raises
    UnknownGateError for unknown names or out-of-range parameters.
    """
    params = list(params or [])
    fixed = {
        "I": I2, "X": X, "Y": Y, "Z": Z, "H": H, "CNOT": CNOT, "SWAP": SWAP,
        "QBF_U": _QBF_U,
    }
    if name in fixed:
        if params:
            raise UnknownGateError(f"{name} takes no parameters")
        return fixed[name].copy()
    if name == "TOFFOLI":
        pattern = str(params[0]) if params else "11"
        return _toffoli(pattern)
    if name == "QBF_V":
        p = _float_param("QBF_V", params, 0.0, 1.0)
        return np.array(
            [[np.sqrt(p), -np.sqrt(1 - p)], [np.sqrt(1 - p), np.sqrt(p)]],
            dtype=complex,
        )
    if name == "QW_S":
        if len(params) != 1:
            raise UnknownGateError("QW_S takes exactly one parameter")
        return _qw_shift(int(params[0]))
    if name == "bitflip":
        p = _float_param("bitflip", params, 0.0, 1.0)
        return Superoperator((np.sqrt(1 - p) * I2, np.sqrt(p) * X))
    if name == "phaseflip":
        p = _float_param("phaseflip", params, 0.0, 1.0)
        return Superoperator((np.sqrt(1 - p) * I2, np.sqrt(p) * Z))
    if name == "depolarizing":
        k = int(params[0]) if params else 1
        if not 1 <= k <= 3:
            raise UnknownGateError(f"depolarizing({k}): supported for 1..3 qubits")
        single = [0.5 * P for P in (I2, X, Y, Z)]
        ops = single
        for _ in range(k - 1):
            ops = [np.kron(a, b) for a in ops for b in single]
        return Superoperator(tuple(ops))
    raise UnknownGateError(f"unknown builtin {name!r}")


BUILTIN_NAMES = frozenset(
    [
        "I", "X", "Y", "Z", "H", "CNOT", "SWAP", "TOFFOLI", "QBF_U", "QBF_V",
        "QW_S", "bitflip", "phaseflip", "depolarizing",
    ]
)
