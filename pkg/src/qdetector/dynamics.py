"""Time-domain evolution, transient currents and integral oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from . import model
from .liouville import Liouvillian, SpectralData, devectorize, trace_vector, vectorize
from .metrics import ConditionedState, initial_state, partial_trace_S
from .model import CHANNELS


def _as_rho(rho0) -> np.ndarray:
    return rho0.rho0 if isinstance(rho0, ConditionedState) else np.asarray(rho0)


def evolve(spectral: SpectralData, rho0, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be >= 0")
    return devectorize(spectral.propagate(_as_rho(rho0), t))


def gain_populations(rho: np.ndarray) -> np.ndarray:
    """Diagonal of the gain-medium marginal, ``(P0, P1, P2)``."""
    return np.real(np.einsum("aibaib->i", rho.reshape(4, 3, 2, 4, 3, 2)))


def reduced_gain_system(rho: np.ndarray) -> np.ndarray:
    """Marginal on G x S (6x6, index ``2*g + s``)."""
    return np.einsum("aiaj->ij", rho.reshape(4, 6, 4, 6))


def reduced_machine_gain(rho: np.ndarray) -> np.ndarray:
    """Marginal on M_C x M_H x G (12x12, index ``(2*c + h)*3 + g``)."""
    return partial_trace_S(rho)


# --- spectral mode coefficients --------------------------------------------


def mode_coefficients(spectral: SpectralData, rho0, weight: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decaying eigenvalues and amplitudes ``<<1|W x_i>> <<y_i|rho0>>``.

    The excess signal is ``sum_i a_i exp(lambda_i t)`` over these modes.
    """
    v0 = vectorize(_as_rho(rho0))
    one = trace_vector(int(round(math.sqrt(v0.size))))
    k = spectral.n_zero
    a = spectral.row_weights(one @ weight) * (spectral.left[k:, :] @ v0)
    return spectral.eigenvalues[k:], a


def excess_integral_oracle(spectral: SpectralData, rho0, weight_superop: np.ndarray, moment: int) -> float:
    """``int_0^inf t^m <<1|W (rho(t) - rho_ss)>> dt`` summed mode by mode.

    Each mode contributes ``a_i m! / (-lambda_i)^(m+1)``.
    """
    if moment not in (0, 1, 2):
        raise ValueError("moment must be 0, 1 or 2")
    lam, a = mode_coefficients(spectral, rho0, weight_superop)
    live = np.abs(a) > 1e-14 * max(1.0, np.abs(a).max(initial=0.0))
    if np.any(lam[live].real >= 0):
        raise ArithmeticError("non-decaying mode contributes: integral diverges")
    total = np.sum(a[live] * math.factorial(moment) / (-lam[live]) ** (moment + 1))
    return float(total.real)


def quadrature_moments(
    spectral: SpectralData,
    rho0,
    weight_superop: np.ndarray,
    moments=(0, 1, 2),
    epsrel: float = 1e-12,
) -> list[float]:
    """Adaptive quadrature of ``t^m`` times the excess signal of ``weight_superop``.

    The integrand is the spectral propagator evaluated pointwise; the half
    line is split at geometrically spaced breakpoints between the fastest and
    slowest decay times so each piece is smooth on its own scale.
    """
    lam, a = mode_coefficients(spectral, rho0, weight_superop)
    live = np.abs(a) > 1e-300
    lam, a = lam[live], a[live]
    rates = -lam.real
    slow, fast = rates.min(), rates.max()
    edges = [0.0]
    t = 0.01 / fast
    t_end = 80.0 / slow
    while t < t_end:
        edges.append(t)
        t *= 2.0
    edges.append(t_end)

    def signal(t):
        return float(np.real(np.sum(a * np.exp(lam * t))))

    out = []
    for m in moments:
        f = (lambda t, m=m: t**m * signal(t))
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += integrate.quad(f, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200)[0]
        # the tail past 80 slowest decay times is below rounding of the total
        total += integrate.quad(f, edges[-1], np.inf, epsabs=1e-3 * epsrel * abs(total), epsrel=epsrel, limit=200)[0]
        out.append(total)
    return out


# --- transient traces ----------------------------------------------------


@dataclass
class TransientTrace:
    t: np.ndarray
    currents: dict[str, np.ndarray]
    populations: np.ndarray  # shape (3, len(t))
    steady_currents: dict[str, float]
    steady_populations: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))

    def excess(self, channel: str) -> np.ndarray:
        return self.currents[channel] - self.steady_currents[channel]


TRACE_COLUMNS = ("t", "J_D", "J_D_ss", "J_MC", "J_G10", "J_G21", "P0", "P1", "P2")


def transient_current(
    spectral: SpectralData,
    rho0,
    grid,
    channels=CHANNELS,
    currents: dict[str, np.ndarray] | None = None,
) -> TransientTrace:
    """Evaluate ``J_c(t) = <<1|J_c|rho(t)>>`` and gain populations on ``grid``."""
    if currents is None:
        currents = spectral.liouvillian.currents
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be a nondecreasing 1-D array of times >= 0")
    one = trace_vector()
    rows = {c: one @ currents[c] for c in channels}
    proj = np.array([vectorize(model.gain_projector(k)) for k in range(3)])
    rho0 = _as_rho(rho0)
    out = {c: np.empty(grid.size) for c in channels}
    pops = np.empty((3, grid.size))
    for n, t in enumerate(grid):
        v = spectral.propagate(rho0, t)
        for c in channels:
            z = rows[c] @ v
            if abs(z.imag) > 1e-8 * max(1.0, abs(z.real)):
                raise ArithmeticError(f"J_{c}({t}) has imaginary residue {z.imag:.3e}")
            out[c][n] = z.real
        pops[:, n] = np.real(proj @ v)
    vss = spectral.rho_ss_vec
    steady = {c: float(np.real(rows[c] @ vss)) for c in channels}
    return TransientTrace(grid, out, pops, steady, np.real(proj @ vss))


def trace_grid(spectral: SpectralData, n: int = 400, t_max_mult: float = 30.0) -> np.ndarray:
    """Time grid on ``[0, t_max_mult * D]`` mixing geometric and linear spacing.

    Half the points are geometric from the fastest relaxation time, which
    resolves the rise; a quarter are linear over the full span for the tail;
    the rest cluster around the peak of the geometric-grid detection current.
    """
    lam = spectral.eigenvalues[spectral.n_zero :]
    if spectral.n_zero > 1:
        # with a degenerate kernel, undamped coherences carry no time scale
        lam = lam[lam.real < -1e-10 * np.abs(lam).max()]
    D = -1.0 / lam[0].real
    t_max = t_max_mult * D
    t_fast = 1.0 / np.abs(lam.real).max()
    n_geo, n_lin = n // 2, n // 4
    n_peak = n - n_geo - n_lin
    geo = np.geomspace(1e-2 * t_fast, t_max, n_geo - 1)
    lin = np.linspace(0.0, t_max, n_lin)
    base = np.union1d(np.concatenate([[0.0], geo]), lin)
    if spectral.liouvillian is not None:
        J = spectral.liouvillian.currents["D"]
        tr = transient_current(spectral, initial_state(spectral), geo, ("D",), {"D": J})
        i = int(np.argmax(tr.currents["D"]))
        lo = geo[max(i - 3, 0)]
        hi = geo[min(i + 3, geo.size - 1)]
        dense = np.linspace(lo, hi, n_peak)
        base = np.union1d(base, dense)
    return base


def write_trace(path: str | Path, trace: TransientTrace) -> None:
    """Write the trace as CSV; the last row (``t = inf``) holds steady-state values."""
    cols = [
        trace.t,
        trace.currents["D"],
        np.full(trace.t.size, trace.steady_currents["D"]),
        trace.currents["M_C"],
        trace.currents["G_10"],
        trace.currents["G_21"],
        *trace.populations,
    ]
    ss = [
        math.inf,
        trace.steady_currents["D"],
        trace.steady_currents["D"],
        trace.steady_currents["M_C"],
        trace.steady_currents["G_10"],
        trace.steady_currents["G_21"],
        *trace.steady_populations,
    ]
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
        fh.write(",".join(f"{x:.17g}" for x in ss) + "\n")


def read_trace(path: str | Path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: data[name] for name in data.dtype.names}


# --- population equations of motion ---------------------------------------


def population_rhs(rho: np.ndarray, params: model.DetectorParams, rates: model.RateSet) -> np.ndarray:
    """Right-hand sides of the gain-level rate equations with coherence terms."""
    P0, P1, P2 = gain_populations(rho)
    sg = reduced_gain_system(rho)[3, 4]  # <11| rho_SG |20>
    mg = reduced_machine_gain(rho)[3, 7]  # <010| rho_MG |101>
    gp, gm = rates.gamma_plus, rates.gamma_minus
    coh_sg = 2 * params.g_SG * sg.imag
    coh_mg = 2 * params.g_MG * mg.imag
    dP2 = coh_sg - gm["D"] * P2 + gp["D"] * P0 - gm["G_21"] * P2 + gp["G_21"] * P1
    dP1 = coh_mg - coh_sg + gm["G_21"] * P2 - gp["G_21"] * P1 - gm["G_10"] * P1 + gp["G_10"] * P0
    dP0 = -coh_mg + gm["D"] * P2 - gp["D"] * P0 + gm["G_10"] * P1 - gp["G_10"] * P0
    return np.array([dP0, dP1, dP2])


def population_eom_residual(spectral: SpectralData, rho0, t_samples, h: float = 1e-5) -> float:
    """Largest mismatch between finite-difference dP_k/dt and the rate equations."""
    liouv = spectral.liouvillian
    rho0 = _as_rho(rho0)
    worst = 0.0
    for t in t_samples:
        if t < 0:
            raise ValueError("t_samples must be >= 0")
        if t >= h:
            lhs = (
                gain_populations(evolve(spectral, rho0, t + h))
                - gain_populations(evolve(spectral, rho0, t - h))
            ) / (2 * h)
        else:
            p = [gain_populations(evolve(spectral, rho0, t + k * h)) for k in range(3)]
            lhs = (-3 * p[0] + 4 * p[1] - p[2]) / (2 * h)
        rhs = population_rhs(evolve(spectral, rho0, t), liouv.params, liouv.rates)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


# --- independent ODE oracle -------------------------------------------------


def rk4_evolve(liouv: Liouvillian, rho0, t: float, step: float) -> np.ndarray:
    """Fixed-step RK4 integration of the master equation in matrix form.

    Works directly on 24x24 matrices, so it shares nothing with the
    vectorized Liouvillian or its eigen-decomposition.
    """
    rho = np.array(_as_rho(rho0), dtype=complex)
    active = [j for j in liouv.jumps if j.rate != 0]
    Ls = np.array([math.sqrt(j.rate) * j.L for j in active])
    Lds = np.conj(np.transpose(Ls, (0, 2, 1)))
    K = np.einsum("kij,kjl->il", Lds, Ls)
    A = -1j * liouv.hamiltonian - 0.5 * K
    Ad = A.conj().T

    def f(r):
        return A @ r + r @ Ad + np.einsum("kij,jl,klm->im", Ls, r, Lds, optimize=True)

    n = max(1, int(math.ceil(t / step)))
    h = t / n
    for _ in range(n):
        k1 = f(rho)
        k2 = f(rho + 0.5 * h * k1)
        k3 = f(rho + 0.5 * h * k2)
        k4 = f(rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho
