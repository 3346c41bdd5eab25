"""Time evolution, stationary states, and field correlation functions.

The integrator is an explicit embedded Runge-Kutta 5(4) pair (Dormand-Prince
coefficients, FSAL) applied directly to matrices: density matrices for state
evolution, and the non-Hermitian matrix a*rho_ss when propagating two-time
correlations by the regression theorem.  The right-hand side is linear, so
adaptive error control mostly pays off after transients, where the step size
grows until the sampling grid clamps it.
"""

from __future__ import annotations

import weakref
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .liouville import (
    Liouvillian,
    apply_lindblad_rhs,
    build_hamiltonian,
    superoperator_matrix,
)
from .modes import restrict_basis
from .operators import JointSpace, expect


class TraceDriftError(RuntimeError):
    """Trace left the unit value during evolution beyond roundoff tolerance."""


class StepSizeUnderflowError(RuntimeError):
    """Adaptive step fell below the resolvable time scale."""


class ConvergenceError(RuntimeError):
    """Relaxation did not flatten out within the allotted time.

    The best available state is attached as .partial.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateNullSpaceError(RuntimeError):
    """The generator has more than one stationary solution in this block."""

    def __init__(self, message: str, dimension: int = 0):
        super().__init__(message)
        self.dimension = dimension


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) tableau.

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
# b5 - b4: weights of the embedded error estimate
_E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

_TRACE_TOL = 1e-6


def _initial_step(y: np.ndarray, f0: np.ndarray, atol: float, rtol: float,
                  span: float) -> float:
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((np.abs(y) / scale) ** 2))
    d1 = np.sqrt(np.mean((np.abs(f0) / scale) ** 2))
    if d0 < 1e-6 or d1 < 1e-6:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    return min(h0, span)


def _advance(f, y: np.ndarray, t0: float, t1: float, h: float | None,
             tol: float, trace_guard: bool) -> tuple[np.ndarray, float]:
    """Integrate dy/dt = f(y) from t0 to exactly t1; returns (y(t1), h_next)."""
    span = t1 - t0
    if span <= 0.0:
        return y, h
    atol = tol * 1e-3
    rtol = tol
    k = [None] * 7
    k[0] = f(y)
    if h is None:
        h = _initial_step(y, k[0], atol, rtol, span)
    h = min(h, span)
    t = t0
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        h = min(h, t1 - t)
        if h < 1e-13 * max(1.0, abs(t)):
            raise StepSizeUnderflowError(f"step size underflow at t = {t:.6g}")
        for i in range(1, 6):
            yi = y + h * sum(a * k[j] for j, a in enumerate(_A[i]) if a)
            k[i] = f(yi)
        y5 = y + h * sum(b * k[j] for j, b in enumerate(_B5) if b)
        k[6] = f(y5)
        err = h * sum(e * k[j] for j, e in enumerate(_E) if e)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        en = np.sqrt(np.mean((np.abs(err) / scale) ** 2))
        if en <= 1.0:
            t += h
            y = y5
            k[0] = k[6]
            if trace_guard and abs(np.trace(y) - 1.0) > _TRACE_TOL:
                raise TraceDriftError(
                    f"trace drifted to {np.trace(y):.8g} at t = {t:.6g}"
                )
            fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        else:
            fac = max(0.2, min(1.0, 0.9 * en ** -0.2))
        h = h * fac
    return y, h


@dataclass
class Trajectory:
    """Sampled evolution: expectation values plus health diagnostics."""

    times: np.ndarray
    values: dict[str, np.ndarray]
    diagnostics: dict[str, np.ndarray]
    final: np.ndarray
    states: list[np.ndarray] | None = None


def integrate(
    liou: Liouvillian,
    rho0: np.ndarray,
    t_end: float,
    *,
    tol: float = 1e-8,
    t_eval=None,
    record: dict | None = None,
    store_states: bool = False,
    compute_min_eig: bool = False,
    trace_guard: bool = True,
) -> Trajectory:
    """Evolve a density matrix, sampling expectations at the requested times.

    record maps names to joint-space operators.  Diagnostics (trace deviation,
    Hermiticity deviation, populations of the top photon level and the edge
    momentum modes) are always sampled; they are the truncation health checks.
    """
    dim = liou.dim
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValueError(f"state shape {rho.shape} does not match dim {dim}")
    if t_eval is None:
        ts = np.linspace(0.0, t_end, 21)
    else:
        ts = np.asarray(t_eval, dtype=float)
        if ts.ndim != 1 or len(ts) == 0 or np.any(np.diff(ts) <= 0):
            raise ValueError("t_eval must be strictly increasing and non-empty")
        if ts[0] < 0 or ts[-1] > t_end * (1 + 1e-12) + 1e-12:
            raise ValueError("t_eval must lie within [0, t_end]")
    record = dict(record or {})
    values = {name: np.empty(len(ts), dtype=complex) for name in record}
    diag_names = ["trace_dev", "herm_dev", "top_photon_pop", "top_mode_pop"]
    if compute_min_eig:
        diag_names.append("min_eig")
    diags = {name: np.empty(len(ts)) for name in diag_names}
    states: list[np.ndarray] | None = [] if store_states else None

    def rhs(y):
        return apply_lindblad_rhs(liou, y)

    def sample(i, y):
        for name, op in record.items():
            values[name][i] = expect(op, y)
        diags["trace_dev"][i] = abs(np.trace(y) - 1.0)
        diags["herm_dev"][i] = np.max(np.abs(y - y.conj().T))
        diags["top_photon_pop"][i] = expect(liou.ops.top_photon_projector, y).real
        diags["top_mode_pop"][i] = expect(liou.ops.top_mode_number, y).real
        if compute_min_eig:
            diags["min_eig"][i] = scipy.linalg.eigvalsh(
                0.5 * (y + y.conj().T)
            )[0]
        if states is not None:
            states.append(y.copy())

    t = 0.0
    h = None
    for i, t_next in enumerate(ts):
        rho, h = _advance(rhs, rho, t, float(t_next), h, tol, trace_guard)
        t = float(t_next)
        sample(i, rho)
    if t_end > t + 1e-12:
        rho, h = _advance(rhs, rho, t, float(t_end), h, tol, trace_guard)
    return Trajectory(times=ts, values=values, diagnostics=diags, final=rho,
                      states=states)


# ---------------------------------------------------------------------------
# Stationary states.


@dataclass
class SteadyStateResult:
    rho: np.ndarray
    residual: float          # Frobenius norm of the generator applied to rho
    method: str
    info: dict = field(default_factory=dict)


def _fro(x: np.ndarray) -> float:
    return float(np.linalg.norm(x))


# sub-space per (parent space, signature); keyed on identity so sweeps that
# reuse a space also reuse the restricted bases and their cached operators
_block_space_cache: "weakref.WeakKeyDictionary[JointSpace, dict]" = (
    weakref.WeakKeyDictionary()
)


def _block_space(space: JointSpace, sig) -> tuple[JointSpace, np.ndarray]:
    """Joint sub-space of one conserved signature, plus its joint indices."""
    per_space = _block_space_cache.get(space)
    if per_space is None:
        per_space = {}
        _block_space_cache[space] = per_space
    cached = per_space.get(sig)
    if cached is not None:
        return cached
    basis = space.particle_basis
    sub_basis = restrict_basis(basis, [sig])
    nph = space.photon_dim
    ppos = [i for i, s in enumerate(basis.signatures) if s == sig]
    jidx = np.array([p * nph + f for p in ppos for f in range(nph)])
    sub = (JointSpace(sub_basis, space.n_ph), jidx)
    per_space[sig] = sub
    return sub


def populated_blocks(liou: Liouvillian, rho0: np.ndarray,
                     threshold: float = 1e-12):
    """Conserved-signature blocks carrying weight in rho0.

    Returns [(signature, weight, joint_indices)], in basis enumeration order.
    Block weights are constants of motion, so the decomposition taken at t = 0
    stays valid for all times.
    """
    basis = liou.space.particle_basis
    seen: set = set()
    order = []
    for sig in basis.signatures:
        if sig not in seen:
            seen.add(sig)
            order.append(sig)
    blocks = []
    for sig in order:
        _, jidx = _block_space(liou.space, sig)
        w = float(np.real(np.trace(rho0[np.ix_(jidx, jidx)])))
        if w > threshold:
            blocks.append((sig, w, jidx))
    return blocks


def _long_time_single(liou, rho0, tol, max_time, window):
    """Relax one (sub-)space; returns (rho, residual, t, converged)."""

    def rhs(y):
        return apply_lindblad_rhs(liou, y)

    n_op = liou.ops.photon_number
    a_op = liou.ops.annihilator
    c_op = liou.ops.pump_coupling
    rho, t, h = np.array(rho0, dtype=complex), 0.0, None
    history: deque = deque(maxlen=5)
    step_tol = max(tol * 0.1, 1e-12)
    resid = _fro(rhs(rho))
    while t < max_time:
        span = min(window, max_time - t)
        rho, h = _advance(rhs, rho, t, t + span, h, step_tol, True)
        t += span
        resid = _fro(rhs(rho))
        history.append((
            expect(n_op, rho).real,
            abs(expect(a_op, rho)),
            expect(c_op, rho).real,
        ))
        if resid <= tol and len(history) >= 3:
            series = np.array(history)
            spread = series.max(axis=0) - series.min(axis=0)
            if np.all(spread <= tol * (1.0 + np.abs(series[-1]))):
                return rho, resid, t, True
    return rho, resid, t, False


def _nullspace_single(liou, superop_limit):
    """Stationary solution from the dense generator's null vector."""
    L = superoperator_matrix(liou, limit=superop_limit)
    vals, vecs = scipy.linalg.eig(L)
    scale = max(1.0, float(np.abs(vals).max()))
    null_count = int(np.sum(np.abs(vals) <= 1e-10 * scale))
    if null_count > 1:
        raise DegenerateNullSpaceError(
            f"stationary space has dimension {null_count}; the state is not "
            "determined by the generator alone",
            dimension=null_count,
        )
    v = vecs[:, int(np.argmin(np.abs(vals)))]
    d = liou.dim
    rho = v.reshape((d, d), order="F")
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho)
    if abs(tr) < 1e-12:
        raise DegenerateNullSpaceError(
            "null vector is traceless; stationary state is not unique",
            dimension=null_count,
        )
    rho = rho / tr
    return rho, _fro(apply_lindblad_rhs(liou, rho))


def steady_state(
    liou: Liouvillian,
    rho0: np.ndarray,
    *,
    method: str = "long_time",
    tol: float = 1e-8,
    max_time: float | None = None,
    window: float | None = None,
    split_blocks: bool = True,
    superop_limit: int = 4096,
) -> SteadyStateResult:
    """Nonequilibrium stationary state reached from rho0.

    method "long_time" relaxes under the full dynamics until the generator
    residual and a trailing window of observables flatten below tol; method
    "nullspace" extracts the null vector of the dense generator (small spaces
    only).  With split_blocks, dynamics run independently inside each
    conserved-signature block populated by rho0 and the stationary blocks are
    recombined with their (conserved) weights; coherences between blocks decay
    and are dropped.
    """
    if method not in ("long_time", "nullspace"):
        raise ValueError(f"unknown steady-state method: {method!r}")
    dim = liou.dim
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise ValueError(f"state shape {rho0.shape} does not match dim {dim}")
    if max_time is None:
        max_time = 1000.0 / liou.kappa
    if window is None:
        window = 10.0 / liou.kappa
    blocks = populated_blocks(liou, rho0)
    info: dict = {"blocks": [(sig, w) for sig, w, _ in blocks]}
    if split_blocks and len(blocks) > 1:
        rho_full = np.zeros((dim, dim), dtype=complex)
        worst = 0.0
        t_last = 0.0
        failed = None
        for sig, w, jidx in blocks:
            sub_space, _ = _block_space(liou.space, sig)
            sub_liou = build_hamiltonian(liou.params, sub_space)
            sub0 = rho0[np.ix_(jidx, jidx)] / w
            if method == "long_time":
                rho_b, res_b, t_b, ok = _long_time_single(
                    sub_liou, sub0, tol, max_time, window
                )
                t_last = max(t_last, t_b)
                if not ok and failed is None:
                    failed = (sig, res_b)
            else:
                rho_b, res_b = _nullspace_single(sub_liou, superop_limit)
            rho_full[np.ix_(jidx, jidx)] = w * rho_b
            worst = max(worst, res_b)
        info["t_final"] = t_last
        result = SteadyStateResult(rho_full, worst, method, info)
        if failed is not None:
            raise ConvergenceError(
                f"block {failed[0]} still has residual {failed[1]:.3e} after "
                f"t = {max_time:.6g}",
                partial=result,
            )
        return result
    if method == "long_time":
        rho, resid, t, ok = _long_time_single(liou, rho0, tol, max_time, window)
        info["t_final"] = t
        result = SteadyStateResult(rho, resid, method, info)
        if not ok:
            raise ConvergenceError(
                f"residual {resid:.3e} after t = {max_time:.6g}", partial=result
            )
        return result
    rho, resid = _nullspace_single(liou, superop_limit)
    return SteadyStateResult(rho, resid, method, info)


def validate_density_matrix(rho: np.ndarray) -> dict:
    """Deviation measures of a would-be density matrix (no thresholds)."""
    herm = 0.5 * (rho + rho.conj().T)
    return {
        "trace_dev": abs(np.trace(rho) - 1.0),
        "herm_dev": float(np.max(np.abs(rho - rho.conj().T))),
        "min_eig": float(scipy.linalg.eigvalsh(herm)[0]),
    }


# ---------------------------------------------------------------------------
# Two-time correlation of the cavity field and its emission spectrum.


@dataclass
class CorrelationSeries:
    """g(t) = <a+(t) a(0)> over the stationary state, on a uniform grid."""

    times: np.ndarray
    values: np.ndarray  # complex

    @property
    def g0(self) -> complex:
        return complex(self.values[0])


def two_time_correlation(
    liou: Liouvillian,
    rho_ss: np.ndarray,
    *,
    t_max: float,
    dt: float,
    tol: float = 1e-8,
    residual_tol: float = 1e-5,
) -> CorrelationSeries:
    """Propagate B(0) = a rho_ss under the generator; g(t) = tr(a+ B(t)).

    Valid only over a stationary state (regression); the residual of rho_ss is
    checked against residual_tol.
    """
    if t_max <= 0 or dt <= 0 or dt > t_max:
        raise ValueError("need 0 < dt <= t_max")
    resid = _fro(apply_lindblad_rhs(liou, np.asarray(rho_ss, dtype=complex)))
    if resid > residual_tol:
        raise ValueError(
            f"reference state is not stationary (residual {resid:.3e} > "
            f"{residual_tol:.1e})"
        )
    a = liou.ops.annihilator
    adag = liou.ops.creator
    n = int(round(t_max / dt)) + 1
    times = np.arange(n) * dt
    B = a @ np.asarray(rho_ss, dtype=complex)
    g = np.empty(n, dtype=complex)
    g[0] = adag.multiply(B.T).sum()

    def rhs(y):
        return apply_lindblad_rhs(liou, y)

    t, h = 0.0, None
    for i in range(1, n):
        B, h = _advance(rhs, B, t, float(times[i]), h, tol, False)
        t = float(times[i])
        g[i] = adag.multiply(B.T).sum()
    return CorrelationSeries(times=times, values=g)


@dataclass
class SpectrumResult:
    """Stationary field spectrum S(w) = integral g(t) e^{-iwt} dt."""

    omegas: np.ndarray
    values: np.ndarray        # real
    coherent_weight: float    # |long-time plateau of g|
    residual_imag: float
    window: str


def spectrum(corr: CorrelationSeries, window: str = "none") -> SpectrumResult:
    """Fourier transform of the correlation after removing its plateau.

    The long-time mean of g (trailing 20% of the record) is the coherent part;
    its modulus is reported separately instead of as a finite-width spike.
    The remainder is extended to negative times by Hermitian symmetry, making
    the transform real up to quadrature error.
    """
    if window not in ("none", "hann"):
        raise ValueError(f"unknown window: {window!r}")
    times = corr.times
    g = corr.values
    n = len(times)
    if n < 8:
        raise ValueError("correlation record too short for a spectrum")
    t_max = float(times[-1])
    dt = float(times[1] - times[0])
    tail = max(1, int(round(0.2 * n)))
    plateau = complex(np.mean(g[n - tail:]))
    gf = g - plateau
    # Hermitian extension g(-t) = conj(g(t)); the t = 0 sample of the
    # fluctuation part is real for a true correlation, so any imaginary
    # remainder there (unconverged plateau estimate) is dropped to keep the
    # transform real
    tt = np.concatenate([-times[:0:-1], times])
    gg = np.concatenate([np.conj(gf[:0:-1]), gf])
    gg[n - 1] = gg[n - 1].real
    if window == "hann":
        gg = gg * (0.5 * (1.0 + np.cos(np.pi * tt / t_max)))
    weights = np.full(len(tt), dt)
    weights[0] = weights[-1] = 0.5 * dt
    gg = gg * weights
    d_omega = 2.0 * np.pi / t_max
    half = (n - 1) // 2
    omegas = d_omega * np.arange(-half, half + 1)
    out = np.empty(len(omegas), dtype=complex)
    chunk = 256
    for start in range(0, len(omegas), chunk):
        om = omegas[start:start + chunk]
        out[start:start + chunk] = np.exp(-1j * np.outer(om, tt)) @ gg
    residual_imag = float(np.max(np.abs(out.imag)))
    return SpectrumResult(
        omegas=omegas,
        values=out.real.copy(),
        coherent_weight=abs(plateau),
        residual_imag=residual_imag,
        window=window,
    )
