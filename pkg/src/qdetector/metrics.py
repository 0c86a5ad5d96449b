"""Figures of merit and entropy production for one parameter point.

All closed forms are contractions of the form ``<<1| W (L+)^k |rho>>`` with
the Drazin inverse ``L+``. Signs follow the time integrals they represent:
``int_0^inf exp(lambda t) dt = -1/lambda`` for each decaying mode.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import model
from .errors import EfficiencyTooSmall, RegimeError
from .liouville import (
    LDIM,
    Liouvillian,
    SpectralData,
    assemble_liouvillian,
    sectors,
    spectral_decompose,
    trace_vector,
    vectorize,
)
from .model import DetectorParams, RateSet
from .precision import dd_add, dd_matvec

EPS_ETA = 1e-6
IMAG_TOL = 1e-8


def _real(z: complex, what: str, tol: float = IMAG_TOL) -> float:
    z = complex(z)
    if abs(z.imag) > tol * max(1.0, abs(z.real)):
        raise ArithmeticError(f"{what}: imaginary residue {z.imag:.3e} exceeds tolerance")
    return z.real


def _vec(rho) -> np.ndarray:
    if isinstance(rho, ConditionedState):
        rho = rho.rho0
    return vectorize(np.asarray(rho))


@dataclass(frozen=True)
class ConditionedState:
    """Initial state of a detection event.

    ``exact`` optionally carries the same state as a double-double vector in
    populations-sector coordinates (see :class:`PopulationSolver`).
    """

    rho0: np.ndarray
    exact: tuple | None = field(default=None, repr=False, compare=False)


def partial_trace_S(rho: np.ndarray) -> np.ndarray:
    r = rho.reshape(12, 2, 12, 2)
    return np.einsum("iaja->ij", r)


@lru_cache(maxsize=1)
def _conditioning_map() -> np.ndarray:
    """Populations-sector matrix of ``rho -> Tr_S(rho) (x) |1><1|``."""
    idx = sectors()[0]
    pos = {int(k): n for n, k in enumerate(idx)}
    T = np.zeros((idx.size, idx.size))
    for k in idx:
        i, j = int(k) % model.DIM, int(k) // model.DIM
        if i % 2 == 1 and j % 2 == 1:
            for s in (0, 1):
                T[pos[k], pos[(i - 1 + s) + model.DIM * (j - 1 + s)]] = 1.0
    T.setflags(write=False)
    return T


def initial_state(spectral: SpectralData) -> ConditionedState:
    """Detector marginal of the steady state with the target qubit excited."""
    excited = np.diag([0.0, 1.0]).astype(complex)
    rho0 = np.kron(partial_trace_S(spectral.rho_ss), excited)
    exact = None
    if spectral.solver is not None:
        T = _conditioning_map()
        n = T.shape[0]
        hi, lo = spectral.solver.steady_state()
        rh, rl = dd_matvec(T, hi[:n], lo[:n])
        ih, il = dd_matvec(T, hi[n:], lo[n:])
        exact = (np.concatenate([rh, ih]), np.concatenate([rl, il]))
    return ConditionedState(rho0, exact)


class DrazinChain:
    """Contractions ``<<a| (L+)^k |rho0>>`` for ``k = 0..depth``.

    Uses the refined populations-sector solver when the spectral data has
    one and ``rho0`` lives in that sector; otherwise the eigen-assembled
    Drazin inverse.
    """

    def __init__(self, spectral: SpectralData, rho0, depth: int):
        self.spectral = spectral
        solver = spectral.solver
        v0 = _vec(rho0)
        self.exact = solver is not None and v0.size == LDIM and _in_sector(v0)
        if self.exact:
            x = rho0.exact if isinstance(rho0, ConditionedState) and rho0.exact else None
            if x is None:
                x = solver.from_full(v0)
            ss = solver.steady_state()
            tr = solver.trace_of(x)
            # rho0 - tr(rho0) rho_ss, the traceless part L+ acts on
            chain = [x]
            y = dd_add(x[0], x[1], -tr * ss[0], -tr * ss[1])
            for _ in range(depth):
                y = solver.drazin(*y)
                chain.append(y)
            self._chain = chain
        else:
            self._chain = [v0, *drazin_powers(spectral, v0, depth)]

    def contract(self, row: np.ndarray, k: int) -> complex:
        if self.exact:
            return self.spectral.solver.contract(row, self._chain[k])
        return complex(row @ self._chain[k])

    def vector(self, k: int) -> np.ndarray:
        if self.exact:
            return self.spectral.solver.to_full(self._chain[k])
        return self._chain[k]


def _in_sector(v: np.ndarray) -> bool:
    return np.abs(np.delete(v, sectors()[0])).max(initial=0.0) == 0


def _steady_contract(spectral: SpectralData, row: np.ndarray) -> complex:
    if spectral.solver is not None and row.size == LDIM:
        return spectral.solver.contract(row, spectral.solver.steady_state())
    return complex(row @ spectral.rho_ss_vec)


def drazin_powers(spectral: SpectralData, rho0, k: int) -> list[np.ndarray]:
    """``[L+ v, (L+)^2 v, ..., (L+)^k v]`` for ``v = vec(rho0)`` (eigen-assembled)."""
    v = rho0 if isinstance(rho0, np.ndarray) and rho0.ndim == 1 else _vec(rho0)
    out = []
    for _ in range(k):
        v = spectral.drazin @ v
        out.append(v)
    return out


def _row(superop: np.ndarray) -> np.ndarray:
    return _one_for(superop) @ superop


def _one_for(superop: np.ndarray) -> np.ndarray:
    return trace_vector(int(round(math.sqrt(superop.shape[0]))))


def detection_efficiency(spectral: SpectralData, J_D: np.ndarray, rho0) -> float:
    chain = DrazinChain(spectral, rho0, 1)
    return _real(-chain.contract(_row(J_D), 1), "eta_D")


def dark_count_rate(spectral: SpectralData, J_D: np.ndarray) -> float:
    return _real(_steady_contract(spectral, _row(J_D)), "R_dc")


def mean_detection_time(spectral: SpectralData, J_D: np.ndarray, rho0, eta_D: float) -> float:
    """First moment of the normalised excess detection current."""
    chain = DrazinChain(spectral, rho0, 2)
    return _real(chain.contract(_row(J_D), 2), "mean time") / eta_D


def detection_jitter(
    spectral: SpectralData,
    J_D: np.ndarray,
    rho0,
    eta_D: float,
    eps_eta: float = EPS_ETA,
) -> float:
    """Temporal variance of the normalised excess detection current (time^2)."""
    if eta_D <= eps_eta:
        raise EfficiencyTooSmall(f"eta_D={eta_D:.3e} <= {eps_eta:.1e}; jitter undefined")
    chain = DrazinChain(spectral, rho0, 3)
    row = _row(J_D)
    second = -2.0 * _real(chain.contract(row, 3), "second moment") / eta_D
    first = _real(chain.contract(row, 2), "first moment") / eta_D
    return second - first**2


def dead_time(spectral: SpectralData) -> float:
    re = spectral.lambda1.real
    if not re < 0:
        raise ArithmeticError(f"slowest mode has Re(lambda1)={re:.3e} >= 0")
    return -1.0 / re


def entropy_weight(currents: dict[str, np.ndarray], params: DetectorParams) -> np.ndarray:
    """Superoperator ``(E_C J_MC + E_G J_G10 + E_S J_G21) / T_C``."""
    return (
        params.E_C * currents["M_C"]
        + params.E_G * currents["G_10"]
        + params.E_S * currents["G_21"]
    ) / params.T_C


def _params_of(spectral: SpectralData, params: DetectorParams | None) -> DetectorParams:
    if params is not None:
        return params
    if spectral.liouvillian is None:
        raise ValueError("params required when the spectral data has no Liouvillian attached")
    return spectral.liouvillian.params


def entropy_rate_ss(
    spectral: SpectralData, currents: dict[str, np.ndarray], params: DetectorParams | None = None
) -> float:
    W = entropy_weight(currents, _params_of(spectral, params))
    return _real(_steady_contract(spectral, _row(W)), "Sigma_ss_rate")


def entropy_transient(
    spectral: SpectralData,
    currents: dict[str, np.ndarray],
    rho0,
    params: DetectorParams | None = None,
) -> float:
    """Time-integrated excess cold-bath entropy flow after a detection event.

    Equals ``(1/T_C) int_0^inf (E_C dJ_MC + E_G dJ_G10 + E_S dJ_G21) dt``,
    i.e. ``-<<1| W L+ |rho0>>``.
    """
    W = entropy_weight(currents, _params_of(spectral, params))
    chain = DrazinChain(spectral, rho0, 1)
    return -_real(chain.contract(_row(W), 1), "Sigma_trans")


def entropy_total(Sigma_ss_rate: float, lambda1: complex, Sigma_trans: float) -> float:
    return -Sigma_ss_rate / complex(lambda1).real + Sigma_trans


def max_efficiency_bound(gamma_G: float, gamma_D: float) -> float:
    if gamma_D == 0:
        raise ZeroDivisionError("gamma_D = 0: efficiency bound undefined")
    return 1.0 / (1.0 + gamma_G / gamma_D)


@dataclass(frozen=True)
class GainIntegrals:
    I0: float
    I1: float
    I2: float
    inequality_ok: bool
    N_D: float
    N_lost: float


def appendix_c_integrals(
    spectral: SpectralData, rho0, rates: RateSet, params: DetectorParams | None = None
) -> GainIntegrals:
    """Excess gain-level populations ``I_k = int (P_k(t) - P_k^ss) dt``.

    Also reports the detected and lost counts they imply and whether
    ``I1 <= I0 exp(-E_G/T_C)`` holds (1e-10 slack).
    """
    p = _params_of(spectral, params)
    chain = DrazinChain(spectral, rho0, 1)
    I = [-_real(chain.contract(vectorize(model.gain_projector(k)), 1), f"I{k}") for k in range(3)]
    I0, I1, I2 = I
    N_D = I2 * rates.gamma_minus["D"] - I0 * rates.gamma_plus["D"]
    N_lost = I2 * rates.gamma_minus["G_21"] - I1 * rates.gamma_plus["G_21"]
    ok = I1 <= I0 * math.exp(-p.E_G / p.T_C) + 1e-10
    return GainIntegrals(I0, I1, I2, bool(ok), N_D, N_lost)


# --- full per-point report -------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    eta_D: float
    R_dc: float
    jitter: float
    jitter_rms: float
    mean_time: float
    dead_time: float
    lambda1_re: float
    lambda1_im: float
    Sigma_ss_rate: float
    Sigma_trans: float
    Sigma_tot: float
    gain: float
    eta_max: float
    I0: float
    I1: float
    I2: float
    inequality_C_ok: bool
    T_H: float

    @property
    def lambda1(self) -> complex:
        return complex(self.lambda1_re, self.lambda1_im)

    def as_dict(self) -> dict:
        return asdict(self)

    def invariant_violations(self) -> list[str]:
        bad = []
        if not (0 <= self.eta_D <= 1 + 1e-9):
            bad.append(f"eta_D={self.eta_D}")
        if not self.R_dc >= -1e-12:
            bad.append(f"R_dc={self.R_dc}")
        if math.isfinite(self.jitter) and not self.jitter >= -1e-9:
            bad.append(f"jitter={self.jitter}")
        if not self.dead_time > 0:
            bad.append(f"dead_time={self.dead_time}")
        if not self.Sigma_ss_rate >= -1e-10:
            bad.append(f"Sigma_ss_rate={self.Sigma_ss_rate}")
        return bad


METRIC_FIELDS = tuple(MetricsReport.__dataclass_fields__)


def check_engine_regime(params: DetectorParams) -> float:
    """Return T_H, or raise :class:`RegimeError` outside the engine regime."""
    if not params.T_V < 0:
        raise RegimeError("out-of-engine-regime", f"T_V={params.T_V} is not negative")
    return model.hot_temperature(params.T_V, params.T_C, params.E_C, params.E_H)


def analyse(liouv: Liouvillian, spectral: SpectralData, eps_eta: float = EPS_ETA) -> MetricsReport:
    params, rates, J = liouv.params, liouv.rates, liouv.currents
    rho0 = initial_state(spectral)
    eta = detection_efficiency(spectral, J["D"], rho0)
    try:
        jitter = detection_jitter(spectral, J["D"], rho0, eta, eps_eta)
        mean_t = mean_detection_time(spectral, J["D"], rho0, eta)
    except EfficiencyTooSmall:
        jitter = mean_t = math.nan
    s_rate = entropy_rate_ss(spectral, J, params)
    s_trans = entropy_transient(spectral, J, rho0, params)
    lam1 = spectral.lambda1
    ints = appendix_c_integrals(spectral, rho0, rates, params)
    return MetricsReport(
        eta_D=eta,
        R_dc=dark_count_rate(spectral, J["D"]),
        jitter=jitter,
        jitter_rms=math.sqrt(jitter) if jitter >= 0 else math.nan,
        mean_time=mean_t,
        dead_time=dead_time(spectral),
        lambda1_re=lam1.real,
        lambda1_im=lam1.imag,
        Sigma_ss_rate=s_rate,
        Sigma_trans=s_trans,
        Sigma_tot=entropy_total(s_rate, lam1, s_trans),
        gain=params.gain,
        eta_max=max_efficiency_bound(params.gamma_G, params.gamma_D)
        if params.gamma_D > 0
        else math.nan,
        I0=ints.I0,
        I1=ints.I1,
        I2=ints.I2,
        inequality_C_ok=ints.inequality_ok,
        T_H=rates.T_H,
    )


def compute_metrics(params: DetectorParams, **spectral_kwargs) -> tuple[MetricsReport, SpectralData]:
    """Full pipeline: regime gate, Liouvillian, spectrum, figures of merit.

    Raises :class:`RegimeError` or a :class:`SpectralError` subclass for
    points that must be rejected.
    """
    check_engine_regime(params)
    liouv = assemble_liouvillian(params)
    spectral = spectral_decompose(liouv, **spectral_kwargs)
    return analyse(liouv, spectral), spectral

