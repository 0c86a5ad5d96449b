"""Parameters, Hamiltonians, rates and jump operators of the detector.

Hilbert space ordering is ``M_C (2) x M_H (2) x G (3) x S (2)``; basis states
are enumerated lexicographically over ``(c, h, g, s)`` with ``s`` fastest, so
``index = ((2*c + h)*3 + g)*2 + s``.

Energies are in units where hbar = k_B = 1.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import RegimeError

DIMS = (2, 2, 3, 2)
DIM = 24
CHANNELS = ("M_C", "M_H", "G_10", "G_21", "D")
PARAM_KEYS = (
    "E_S",
    "E_G",
    "f_EC",
    "T_C",
    "T_V",
    "g_MG",
    "g_SG",
    "gamma_M",
    "gamma_G",
    "gamma_D",
)


@dataclass(frozen=True)
class DetectorParams:
    E_S: float
    E_G: float
    f_EC: float
    T_C: float
    T_V: float
    g_MG: float
    g_SG: float
    gamma_M: float
    gamma_G: float
    gamma_D: float

    def __post_init__(self):
        for key in PARAM_KEYS:
            value = getattr(self, key)
            if not math.isfinite(value):
                raise ValueError(f"{key} must be finite, got {value!r}")
        for key in ("E_S", "E_G", "f_EC", "T_C"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be > 0")
        for key in ("g_MG", "g_SG", "gamma_M", "gamma_G", "gamma_D"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be >= 0")
        if self.T_V == 0:
            raise ValueError("T_V must be nonzero")

    @property
    def E_C(self) -> float:
        return self.f_EC * self.E_G

    @property
    def E_H(self) -> float:
        return self.E_C + self.E_G

    @property
    def gain(self) -> float:
        return self.E_G / self.E_S

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "DetectorParams":
        return dataclasses.replace(self, **changes)

    def scaled_rates(self, s: float) -> "DetectorParams":
        """Multiply every dissipation prefactor and coherent coupling by ``s``."""
        return self.replace(
            g_MG=s * self.g_MG,
            g_SG=s * self.g_SG,
            gamma_M=s * self.gamma_M,
            gamma_G=s * self.gamma_G,
            gamma_D=s * self.gamma_D,
        )

    @classmethod
    def with_gain(cls, G: float, E_S: float = 1.0, **kwargs) -> "DetectorParams":
        return cls(E_S=E_S, E_G=G * E_S, **kwargs)


# Fixed parameter point used for the gain-scaling study (E_S = 1, G = 9).
APPENDIX_E_POINT = dict(
    E_S=1.0,
    E_G=9.0,
    f_EC=0.2,
    T_C=0.2,
    T_V=-3.0,
    g_MG=1.0,
    g_SG=1.0,
    gamma_M=1.0,
    gamma_G=0.7,
    gamma_D=0.8,
)


def appendix_e_params(**overrides) -> DetectorParams:
    return DetectorParams(**{**APPENDIX_E_POINT, **overrides})


def load_params(path: str | Path, overrides: dict[str, str] | None = None) -> DetectorParams:
    """Read a flat ``key = value`` parameter file.

    Keys must match :class:`DetectorParams` field names exactly. ``#`` and
    ``;`` start comments. Missing or unknown keys raise ``KeyError`` naming
    the key; unparsable numbers raise ``ValueError``.
    """
    text = Path(path).read_text() if path is not None else ""
    return parse_params(text, overrides)


def parse_params(text: str, overrides: dict[str, str] | None = None) -> DetectorParams:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[params]\n" + text)
    raw = dict(cp["params"])
    raw.update(overrides or {})
    unknown = sorted(set(raw) - set(PARAM_KEYS))
    if unknown:
        raise KeyError(f"unknown parameter key: {unknown[0]}")
    values = {}
    for key in PARAM_KEYS:
        if key not in raw:
            raise KeyError(f"missing required parameter key: {key}")
        try:
            values[key] = float(raw[key])
        except ValueError:
            raise ValueError(f"parameter {key}: cannot parse {raw[key]!r} as a number") from None
    return DetectorParams(**values)


def format_params(params: DetectorParams) -> str:
    return "".join(f"{k} = {getattr(params, k)!r}\n" for k in PARAM_KEYS)


def hot_temperature(T_V: float, T_C: float, E_C: float, E_H: float) -> float:
    """Hot-bath temperature realising virtual temperature ``T_V``.

    Inverts ``T_V = (E_H - E_C) / (E_H/T_H - E_C/T_C)``. Raises
    :class:`RegimeError` when no positive finite ``T_H`` exists.
    """
    if not (T_C > 0 and E_H > E_C > 0):
        raise ValueError("need T_C > 0 and E_H > E_C > 0")
    if T_V == 0:
        raise ValueError("T_V must be nonzero")
    denom = E_C / T_C + (E_H - E_C) / T_V
    # relative guard: the denominator is a difference of O(E/T) terms
    scale = E_C / T_C + abs((E_H - E_C) / T_V)
    if denom <= 1e-12 * scale:
        raise RegimeError(
            "nonpositive-hot-temperature",
            f"no positive T_H for T_V={T_V}, T_C={T_C}, E_C={E_C}, E_H={E_H}",
        )
    return E_H / denom


def virtual_temperature(T_H: float, T_C: float, E_C: float, E_H: float) -> float:
    return (E_H - E_C) / (E_H / T_H - E_C / T_C)


def thermal_pair(gamma: float, energy: float, temperature: float) -> tuple[float, float]:
    """Return ``(Gamma_plus, Gamma_minus)`` for one channel.

    Gamma_minus = gamma / Z and Gamma_plus = gamma exp(-E/T) / Z with
    Z = 1 + exp(-E/T), written with the logistic function to avoid overflow.
    """
    x = energy / temperature
    return gamma * float(expit(-x)), gamma * float(expit(x))


@dataclass(frozen=True)
class RateSet:
    gamma_plus: dict[str, float]
    gamma_minus: dict[str, float]
    gap: dict[str, float]
    temperature: dict[str, float]
    prefactor: dict[str, float]
    T_H: float

    def partition_function(self, channel: str) -> float:
        return 1.0 + math.exp(-self.gap[channel] / self.temperature[channel])


def build_rates(params: DetectorParams) -> RateSet:
    T_H = hot_temperature(params.T_V, params.T_C, params.E_C, params.E_H)
    gap = {
        "M_C": params.E_C,
        "M_H": params.E_H,
        "G_10": params.E_G,
        "G_21": params.E_S,
        "D": params.E_S + params.E_G,
    }
    temperature = {c: params.T_C for c in CHANNELS}
    temperature["M_H"] = T_H
    prefactor = {
        "M_C": params.gamma_M,
        "M_H": params.gamma_M,
        "G_10": params.gamma_G,
        "G_21": params.gamma_G,
        "D": params.gamma_D,
    }
    plus, minus = {}, {}
    for c in CHANNELS:
        plus[c], minus[c] = thermal_pair(prefactor[c], gap[c], temperature[c])
    return RateSet(plus, minus, gap, temperature, prefactor, T_H)


# --- operators -----------------------------------------------------------


def basis_index(c: int, h: int, g: int, s: int) -> int:
    return ((2 * c + h) * 3 + g) * 2 + s


def basis_states() -> list[tuple[int, int, int, int]]:
    return [(c, h, g, s) for c in range(2) for h in range(2) for g in range(3) for s in range(2)]


def conserved_labels() -> np.ndarray:
    """Integer labels ``(c+h, h+[g>=1], [g=2]+s)`` of each basis state.

    H0 is linear in these labels and H_I conserves them; every jump operator
    shifts them by a fixed vector. The Liouvillian therefore never mixes
    coherences ``|i><j|`` with different label differences.
    """
    return np.array(
        [(c + h, h + (g >= 1), (g == 2) + s) for c, h, g, s in basis_states()],
        dtype=int,
    )


def ket(d: int, k: int) -> np.ndarray:
    v = np.zeros(d)
    v[k] = 1.0
    return v


def embed(local: np.ndarray, site: int) -> np.ndarray:
    """Tensor a local operator on ``site`` (0..3) with identities."""
    out = np.ones((1, 1))
    for i, d in enumerate(DIMS):
        out = np.kron(out, local if i == site else np.eye(d))
    return out


def transition(d: int, to: int, frm: int) -> np.ndarray:
    return np.outer(ket(d, to), ket(d, frm))


def build_free_hamiltonian(params: DetectorParams) -> np.ndarray:
    energies = [
        c * params.E_C
        + h * params.E_H
        + (params.E_G if g == 1 else 0.0)
        + (params.E_G + params.E_S if g == 2 else 0.0)
        + s * params.E_S
        for c, h, g, s in basis_states()
    ]
    return np.diag(np.array(energies, dtype=complex))


def build_interaction_hamiltonian(params: DetectorParams) -> np.ndarray:
    """``g_MG |101><010|_{M_C M_H G} + g_SG |20><11|_{G S} + h.c.``"""
    H = np.zeros((DIM, DIM), dtype=complex)
    for s in range(2):
        H[basis_index(1, 0, 1, s), basis_index(0, 1, 0, s)] += params.g_MG
    for c in range(2):
        for h in range(2):
            H[basis_index(c, h, 2, 0), basis_index(c, h, 1, 1)] += params.g_SG
    return H + H.conj().T


def build_hamiltonian(params: DetectorParams) -> np.ndarray:
    return build_free_hamiltonian(params) + build_interaction_hamiltonian(params)


@dataclass(frozen=True)
class JumpOperator:
    channel: str
    sign: int  # +1 absorbs a quantum from the bath, -1 emits one
    L: np.ndarray = field(repr=False)
    rate: float
    energy: float  # energy handed to the bath by one jump (negative for sign=+1)
    temperature: float


# (site, dimension, upper level, lower level) for each channel
_CHANNEL_TRANSITIONS = {
    "M_C": (0, 2, 1, 0),
    "M_H": (1, 2, 1, 0),
    "G_10": (2, 3, 1, 0),
    "G_21": (2, 3, 2, 1),
    "D": (2, 3, 2, 0),
}


def channel_operators(channel: str) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(L_plus, L_minus)`` for a channel, embedded in the full space."""
    if channel not in _CHANNEL_TRANSITIONS:
        raise KeyError(f"unknown channel {channel!r}; expected one of {CHANNELS}")
    return _channel_operators(channel)


@lru_cache(maxsize=None)
def _channel_operators(channel: str) -> tuple[np.ndarray, np.ndarray]:
    site, d, up, lo = _CHANNEL_TRANSITIONS[channel]
    ops = embed(transition(d, up, lo), site), embed(transition(d, lo, up), site)
    for op in ops:
        op.setflags(write=False)
    return ops


def build_jump_operators(params: DetectorParams, rates: RateSet) -> list[JumpOperator]:
    jumps = []
    for c in CHANNELS:
        L_plus, L_minus = channel_operators(c)
        E, T = rates.gap[c], rates.temperature[c]
        jumps.append(JumpOperator(c, +1, L_plus.astype(complex), rates.gamma_plus[c], -E, T))
        jumps.append(JumpOperator(c, -1, L_minus.astype(complex), rates.gamma_minus[c], E, T))
    return jumps


def gain_projector(level: int) -> np.ndarray:
    return embed(np.diag(ket(3, level)), 2)
