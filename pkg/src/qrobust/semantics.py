"""Operational and denotational semantics of noisy while-programs.

The denotational evaluator carries a batch of basis matrices |i><j| through
the program; reshaping the batch gives the Choi matrix of the denoted map.
While loops are evaluated as the monotone limit of their unrollings, with
the still-circulating trace mass reported as ``residual`` (an upper bound
on how much any output can still grow, per unit input trace).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lang, quantum
from .errors import BudgetExceeded, DimensionError, NumericalFailure

LOOP_TOL = 1e-12
K_MAX = 10**6
PRUNE_CUTOFF = 1e-12
CONFIG_BUDGET = 10**6


# ---------------------------------------------------------------------------
# compiled register environment


class Compiled:
    """Register layout plus a cache of operators lifted to the full register."""

    def __init__(self, source: lang.SourceFile):
        self.source = source
        self.register = list(source.register)
        self.n = len(self.register)
        self.dim = 2**self.n
        self.n_sys = len(source.qubits)
        self.dim_sys = 2**self.n_sys
        self._lifted: dict = {}

    def init_kraus(self, var: str) -> tuple:
        """Kraus pair of q := |0>: |0><0|_q and |0><1|_q, lifted."""
        key = ("init", var)
        if key not in self._lifted:
            k0 = np.array([[1, 0], [0, 0]], dtype=complex)
            k1 = np.array([[0, 1], [0, 0]], dtype=complex)
            self._lifted[key] = (
                quantum.lift(k0, [var], self.register),
                quantum.lift(k1, [var], self.register),
            )
        return self._lifted[key]

    def stmt_kraus(self, node: lang.NoisyUnitary, noisy: bool = True) -> tuple:
        """Lifted Kraus list of a statement; noisy=False drops the noise term."""
        key = (id(node), noisy)
        if key not in self._lifted:
            ops = node.op if node.is_channel else (node.op,)
            noise = node.noise if noisy else None
            if noise is None or noise.p == 0.0:
                kraus = ops
            elif noise.p == 1.0:
                kraus = noise.kraus
            else:
                kraus = tuple(np.sqrt(1 - noise.p) * k for k in ops) + tuple(
                    np.sqrt(noise.p) * k for k in noise.kraus
                )
            self._lifted[key] = tuple(
                quantum.lift(k, list(node.vars), self.register) for k in kraus
            )
        return self._lifted[key]

    def meas_ops(self, node) -> tuple:
        """Lifted (label, M) pairs of a Case/While measurement."""
        key = (id(node), "meas")
        if key not in self._lifted:
            self._lifted[key] = tuple(
                (lbl, quantum.lift(m, list(node.vars), self.register))
                for lbl, m in node.outcomes
            )
        return self._lifted[key]

    def basis_state(self, bits: str) -> np.ndarray:
        if len(bits) != self.n:
            raise DimensionError(f"state |{bits}> vs register of {self.n} qubits")
        return quantum.proj(bits)


def compile_source(source: lang.SourceFile) -> Compiled:
    return Compiled(source)


# ---------------------------------------------------------------------------
# operational semantics (one-step relation and exhaustive runner)


@dataclass(frozen=True, eq=False)
class Configuration:
    """<P, rho> with program None standing for the empty program E."""

    program: object  # lang Program or None
    state: np.ndarray

    @property
    def trace(self) -> float:
        return float(self.state.trace().real)


def _apply_kraus(kraus, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for k in kraus:
        out += k @ rho @ k.conj().T
    return out


def step(cfg: Configuration, env: Compiled) -> list:
    """Successor configurations of one small-step transition."""
    p, rho = cfg.program, cfg.state
    if p is None:
        raise BudgetExceeded("cannot step the empty program")
    if isinstance(p, lang.Skip):
        return [Configuration(None, rho)]
    if isinstance(p, lang.Init):
        return [Configuration(None, _apply_kraus(env.init_kraus(p.var), rho))]
    if isinstance(p, lang.NoisyUnitary):
        return [Configuration(None, _apply_kraus(env.stmt_kraus(p), rho))]
    if isinstance(p, lang.Seq):
        out = []
        for succ in step(Configuration(p.first, rho), env):
            cont = p.rest if succ.program is None else lang.Seq(succ.program, p.rest)
            out.append(Configuration(cont, succ.state))
        return out
    if isinstance(p, lang.Case):
        ops = dict(env.meas_ops(p))
        return [
            Configuration(branch, ops[lbl] @ rho @ ops[lbl].conj().T)
            for lbl, branch in p.branches
        ]
    if isinstance(p, lang.While):
        ops = dict(env.meas_ops(p))
        m0, m1 = ops["0"], ops["1"]
        return [
            Configuration(None, m0 @ rho @ m0.conj().T),
            Configuration(lang.Seq(p.body, p), m1 @ rho @ m1.conj().T),
        ]
    raise TypeError(f"unknown node {type(p)}")


def run_operational(
    source_or_program,
    rho: np.ndarray,
    env: Compiled | None = None,
    cutoff: float = PRUNE_CUTOFF,
    budget: int = CONFIG_BUDGET,
):
    """Sum of terminal states over all executions, breadth-first.

    Branches whose trace falls below ``cutoff`` are pruned; the pruned mass
    is returned as the residual. Raises BudgetExceeded after ``budget``
    processed configurations.
    """
    if isinstance(source_or_program, lang.SourceFile):
        env = env or compile_source(source_or_program)
        program = source_or_program.body
    else:
        if env is None:
            raise ValueError("run_operational needs a Compiled env for a bare program")
        program = source_or_program
    rho = np.asarray(rho, dtype=complex)
    total = np.zeros_like(rho)
    residual = 0.0
    queue = [Configuration(program, rho)]
    processed = 0
    while queue:
        cfg = queue.pop()
        if cfg.program is None:
            total += cfg.state
            continue
        if cfg.trace < cutoff:
            residual += max(cfg.trace, 0.0)
            continue
        processed += 1
        if processed > budget:
            raise BudgetExceeded(f"operational run exceeded {budget} configurations")
        queue.extend(step(cfg, env))
    return total, residual


# ---------------------------------------------------------------------------
# denotational semantics


@dataclass(frozen=True, eq=False)
class DenotedMap:
    """Choi matrix of a denoted map on a d-dimensional space.

    ``residual`` bounds the Choi-trace mass still circulating in truncated
    loops; it also bounds, per unit input trace, how much output mass an
    exact evaluation could add on top of this one. ``converged`` means the
    residual is negligible.
    """

    choi: np.ndarray
    d: int
    converged: bool
    residual: float

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return quantum.choi_apply(self.choi, rho)

    def dual_apply(self, a: np.ndarray) -> np.ndarray:
        """E*(A) = [tr_out((A (x) I) J)]^T; for J of U ∘ U† this is U† A U."""
        a = np.asarray(a, dtype=complex)
        j = self.choi.reshape(self.d, self.d, self.d, self.d)
        return np.einsum("xy,ybxd->bd", a, j, optimize=True).T

    def trace_preservation_deficit(self) -> float:
        """max over unit-trace inputs of 1 - tr(E(rho)), >= 0 for TNI maps."""
        j = self.choi.reshape(self.d, self.d, self.d, self.d)
        red = np.einsum("abad->bd", j)  # tr over output factor
        ev = np.linalg.eigvalsh((red + red.conj().T) / 2)
        return float(1.0 - ev[0])


class _BatchEval:
    """Evolves a batch (m, D, D) of matrices through statement maps."""

    def __init__(self, env: Compiled, loop_tol: float, k_max: int, check_monotone: bool):
        self.env = env
        self.loop_tol = loop_tol
        self.k_max = k_max
        self.check_monotone = check_monotone

    def kraus_batch(self, kraus, batch: np.ndarray) -> np.ndarray:
        out = np.zeros_like(batch)
        for k in kraus:
            out += np.einsum("ab,nbc,dc->nad", k, batch, k.conj(), optimize=True)
        return out

    def run(self, p, batch: np.ndarray):
        """Returns (batch', residual_added)."""
        env = self.env
        if isinstance(p, lang.Skip):
            return batch, 0.0
        if isinstance(p, lang.Init):
            return self.kraus_batch(env.init_kraus(p.var), batch), 0.0
        if isinstance(p, lang.NoisyUnitary):
            return self.kraus_batch(env.stmt_kraus(p), batch), 0.0
        if isinstance(p, lang.Seq):
            batch, r1 = self.run(p.first, batch)
            batch, r2 = self.run(p.rest, batch)
            return batch, r1 + r2
        if isinstance(p, lang.Case):
            ops = dict(env.meas_ops(p))
            out = np.zeros_like(batch)
            residual = 0.0
            for lbl, branch in p.branches:
                m = ops[lbl]
                sub, r = self.run(branch, np.einsum("ab,nbc,dc->nad", m, batch, m.conj(), optimize=True))
                out += sub
                residual += r
            return out, residual
        if isinstance(p, lang.While):
            return self.run_while(p, batch)
        raise TypeError(f"unknown node {type(p)}")

    def _conj(self, m: np.ndarray, batch: np.ndarray) -> np.ndarray:
        return np.einsum("ab,nbc,dc->nad", m, batch, m.conj(), optimize=True)

    def run_while(self, p: lang.While, batch: np.ndarray):
        env = self.env
        ops = dict(env.meas_ops(p))
        m0, m1 = ops["0"], ops["1"]
        acc = np.zeros_like(batch)
        cont = batch
        residual_inner = 0.0
        side = int(np.sqrt(batch.shape[0])) * batch.shape[1]
        stall = 0
        prev_mass = self._mass(cont)
        for k in range(self.k_max):
            inc = self._conj(m0, cont)
            if self.check_monotone:
                self._check_increment(inc, k, full=(side <= 128 or k % 16 == 0))
            acc += inc
            cont, r = self.run(p.body, self._conj(m1, cont))
            residual_inner += r
            m = self._mass(cont)
            if m < self.loop_tol:
                return acc, m + residual_inner
            # no exit mass and no trace progress over several unrollings:
            # further iterates cannot be distinguished, report the residual
            if np.abs(inc).max() < self.loop_tol and prev_mass - m < self.loop_tol:
                stall += 1
                if stall >= 8:
                    return acc, m + residual_inner
            else:
                stall = 0
            prev_mass = m
        raise BudgetExceeded(f"while loop did not converge within {self.k_max} unrollings")

    @staticmethod
    def _mass(batch: np.ndarray) -> float:
        # Choi trace of the batch: sum of traces of the diagonal basis images
        m = int(np.sqrt(batch.shape[0]))
        diag = batch.reshape(m, m, batch.shape[1], batch.shape[2])
        return float(max(np.einsum("iiaa->", diag).real, 0.0))

    def _check_increment(self, inc: np.ndarray, k: int, full: bool):
        m = inc.shape[0]
        d = inc.shape[1]
        side = int(np.sqrt(m)) * d
        j = _batch_to_choi(inc)
        diag_min = float(np.diagonal(j).real.min())
        if diag_min < -1e-9:
            raise NumericalFailure(
                f"loop increment not PSD at unrolling {k}: diag min {diag_min:.2e}")
        if full and side <= 512:
            ev = float(np.linalg.eigvalsh((j + j.conj().T) / 2)[0])
            if ev < -1e-9:
                raise NumericalFailure(
                    f"loop increment not Loewner-monotone at unrolling {k}: min eig {ev:.2e}")


def _batch_to_choi(batch: np.ndarray) -> np.ndarray:
    """Reshape basis-image batch (m^2, D, D) into the Choi matrix (mD x mD)."""
    m2, dd, _ = batch.shape
    m = int(np.sqrt(m2))
    t = batch.reshape(m, m, dd, dd)  # t[i, j] = E(|i><j| (x) fixed-ancilla)
    return t.transpose(2, 0, 3, 1).reshape(m * dd, m * dd)


def _initial_batch(env: Compiled, reduce_ancillas: bool) -> np.ndarray:
    if reduce_ancillas and env.n > env.n_sys:
        ds = env.dim_sys
        anc = quantum.proj("0" * (env.n - env.n_sys))
        batch = np.zeros((ds * ds, env.dim, env.dim), dtype=complex)
        for i in range(ds):
            for j in range(ds):
                e = np.zeros((ds, ds), dtype=complex)
                e[i, j] = 1.0
                batch[i * ds + j] = np.kron(e, anc)
        return batch
    d = env.dim
    batch = np.zeros((d * d, d, d), dtype=complex)
    for i in range(d):
        for j in range(d):
            batch[i * d + j, i, j] = 1.0
    return batch


def denote(
    source_or_program,
    env: Compiled | None = None,
    *,
    reduce_ancillas: bool = True,
    noisy: bool = True,
    loop_tol: float = LOOP_TOL,
    k_max: int = K_MAX,
    check_monotone: bool = True,
) -> DenotedMap:
    """Choi matrix of the denoted map, computed compositionally.

    With ``reduce_ancillas`` (the default), ancilla variables are fed |0>
    and traced out at program end, so the map acts on the system qubits
    alone; otherwise it acts on the full register. ``noisy=False``
    evaluates ideal(P) instead.
    """
    if isinstance(source_or_program, lang.SourceFile):
        env = env or compile_source(source_or_program)
        program = source_or_program.body
    else:
        if env is None:
            raise ValueError("denote needs a Compiled env for a bare program")
        program = source_or_program
    if not noisy:
        program = lang.ideal(program)
    ev = _BatchEval(env, loop_tol, k_max, check_monotone)
    reduce_ancillas = reduce_ancillas and env.n > env.n_sys
    batch = _initial_batch(env, reduce_ancillas)
    batch, residual = ev.run(program, batch)
    if reduce_ancillas:
        n_anc = env.n - env.n_sys
        da = 2**n_anc
        ds = env.dim_sys
        t = batch.reshape(batch.shape[0], ds, da, ds, da)
        batch = np.einsum("nsata->nst", t)
        d = ds
    else:
        d = env.dim
    choi = _batch_to_choi(batch)
    converged = residual <= max(loop_tol * d, 1e-11)
    return DenotedMap(choi, d, converged, float(residual))


def denote_pair(source: lang.SourceFile, env: Compiled | None = None, **kw):
    """(noisy, ideal) denotations of a source file."""
    env = env or compile_source(source)
    return (
        denote(source, env, noisy=True, **kw),
        denote(source, env, noisy=False, **kw),
    )
