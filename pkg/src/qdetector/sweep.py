"""Parameter sampling, parallel sweeps, record files and trade-off fits."""

from __future__ import annotations

import json
import math
import operator
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .errors import EfficiencyTooSmall, RegimeError, SpectralError
from .metrics import METRIC_FIELDS, MetricsReport, compute_metrics, max_efficiency_bound
from .model import PARAM_KEYS, DetectorParams

# Sampled parameters, in the order their uniforms are drawn.
SAMPLED = ("T_C", "T_V", "g_SG", "g_MG", "gamma_M", "gamma_G", "gamma_D", "f_EC")
THRESHOLD = "threshold"
RECORD_COLUMNS = ("index", *PARAM_KEYS, *METRIC_FIELDS, "status")

Intervals = tuple[tuple[float, float], ...]


def tv_threshold(T_C: float, f_EC: float, E_G: float) -> float:
    """Upper end ``-T_C E_H / E_C`` of the sampled virtual-temperature range."""
    E_C = f_EC * E_G
    return -T_C * (E_C + E_G) / E_C


def _intervals(spec) -> Intervals:
    """Normalise a scalar, a ``(lo, hi)`` pair or a list of pairs."""
    if isinstance(spec, (int, float)):
        return ((float(spec), float(spec)),)
    if len(spec) == 2 and all(isinstance(x, (int, float)) for x in spec):
        spec = [spec]
    out = tuple((float(lo), float(hi)) for lo, hi in spec)
    if not out:
        raise ValueError("empty range")
    for lo, hi in out:
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"invalid interval [{lo}, {hi}]")
    return out


def _union_quantile(iv: Intervals, u: float) -> float:
    """Map ``u`` in [0, 1) onto a union of intervals, uniformly by length."""
    widths = np.array([hi - lo for lo, hi in iv])
    total = widths.sum()
    if total == 0:
        return iv[min(int(u * len(iv)), len(iv) - 1)][0]
    x = u * total
    for (lo, hi), w in zip(iv, widths):
        if x <= w:
            return lo + x
        x -= w
    return iv[-1][1]


@dataclass(frozen=True)
class SweepConfig:
    """Ranges are unions of closed intervals; ``T_V`` has a numeric lower end
    and either a numeric upper end or ``"threshold"`` (per-sample
    ``-T_C E_H / E_C``)."""

    ranges: dict = field(default_factory=dict)
    T_V_lower: float = -10.0
    T_V_upper: float | str = THRESHOLD
    E_S: float = 1.0
    G: float = 9.0
    N: int = 100
    seed: int = 0
    near_threshold: bool = False
    near_fraction: float = 0.5
    epsilon: float = 1e-6
    filters: tuple[str, ...] = ()
    bands: tuple[tuple[float, float], ...] = ()
    band_column: str = "g_SG"
    G_values: tuple[float, ...] = ()
    T_C_values: tuple[float, ...] = ()
    base: dict = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        norm = {}
        for key in SAMPLED:
            if key == "T_V":
                continue
            if key not in self.ranges:
                raise KeyError(f"missing range for {key}")
            norm[key] = _intervals(self.ranges[key])
        unknown = set(self.ranges) - set(SAMPLED) - {"T_V"}
        if unknown:
            raise KeyError(f"unknown range key: {sorted(unknown)[0]}")
        object.__setattr__(self, "ranges", norm)
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 <= self.near_fraction <= 1:
            raise ValueError("near_fraction must lie in [0, 1]")
        if self.T_V_upper != THRESHOLD and not self.T_V_lower <= float(self.T_V_upper):
            raise ValueError("T_V range has lower > upper")
        for f in self.filters:
            parse_filter(f)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "ranges": {k: [list(iv) for iv in v] for k, v in self.ranges.items()},
            "T_V_lower": self.T_V_lower,
            "T_V_upper": self.T_V_upper,
            "E_S": self.E_S,
            "G": self.G,
            "N": self.N,
            "seed": self.seed,
            "near_threshold": self.near_threshold,
            "near_fraction": self.near_fraction,
            "epsilon": self.epsilon,
            "filters": list(self.filters),
            "bands": [list(b) for b in self.bands],
            "band_column": self.band_column,
            "G_values": list(self.G_values),
            "T_C_values": list(self.T_C_values),
            "base": dict(self.base),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        for key in ("filters", "G_values", "T_C_values"):
            if key in d:
                d[key] = tuple(d[key])
        if "bands" in d:
            d["bands"] = tuple(tuple(b) for b in d["bands"])
        return cls(**d)

    def replace(self, **changes) -> "SweepConfig":
        d = self.as_dict()
        d.update(changes)
        return SweepConfig.from_dict(d)


# --- presets ---------------------------------------------------------------

_FIG3_RANGES = {
    "T_C": (0.05, 1.0),
    "g_SG": (0.1, 1.0),
    "g_MG": (0.1, 2.0),
    "gamma_M": (0.1, 2.0),
    "gamma_G": 0.7,
    "gamma_D": [(0.4, 0.5), (0.9, 1.0), (1.9, 2.0)],
    "f_EC": (0.1, 2.0),
}
FIG4_BANDS = ((0.1, 0.2), (0.4, 0.5), (1.5, 2.0))
FIG5_BANDS = ((0.1, 0.5), (0.5, 1.0), (1.0, 1.5), (1.5, 2.0))
EFFICIENCY_WINDOW = "0.72<eta_D<0.7358"
APPENDIX_E_BASE = dict(g_SG=1.0, g_MG=1.0, gamma_D=0.8, gamma_G=0.7, gamma_M=1.0, T_V=-3.0, f_EC=0.2)


def preset(name: str, N: int = 5000, seed: int = 0) -> SweepConfig:
    """Sweep configurations matching the published scatter-plot ranges."""
    if name == "fig3":
        return SweepConfig(dict(_FIG3_RANGES), N=N, seed=seed, near_threshold=True, name=name)
    if name in ("fig4", "appD"):
        ranges = {**_FIG3_RANGES, "gamma_D": (0.1, 2.0), "g_SG": list(FIG4_BANDS)}
        # y = a/x needs x = R_dc > 0; a net negative dark current (thermal
        # absorption in the detection channel) is off the log axes as well
        filters = (EFFICIENCY_WINDOW, "R_dc>0") if name == "fig4" else ("eta_D>0.4",)
        return SweepConfig(ranges, N=N, seed=seed, filters=filters, bands=FIG4_BANDS, name=name)
    if name == "fig5":
        ranges = {**_FIG3_RANGES, "g_SG": (0.1, 2.0)}
        return SweepConfig(
            ranges, N=N, seed=seed, filters=(EFFICIENCY_WINDOW,), bands=FIG5_BANDS, name=name
        )
    if name == "appE":
        ranges = {k: APPENDIX_E_BASE.get(k, 0.2) for k in SAMPLED if k != "T_V"}
        return SweepConfig(
            ranges,
            T_V_lower=-3.0,
            T_V_upper=-3.0,
            N=1,
            seed=seed,
            G_values=tuple(float(g) for g in range(3, 31, 3)),
            T_C_values=(0.1, 0.2, 0.5),
            base=dict(APPENDIX_E_BASE),
            name=name,
        )
    raise KeyError(f"unknown preset {name!r}; expected fig3, fig4, fig5, appD or appE")


PRESETS = ("fig3", "fig4", "fig5", "appD", "appE")


def config_from_dict(d: dict) -> SweepConfig:
    """Build a config from its dict form; ``{"preset": name, ...}`` overrides a preset."""
    d = dict(d)
    name = d.pop("preset", None)
    if name is None:
        return SweepConfig.from_dict(d)
    return preset(name).replace(**d)


def load_sweep_config(path: str | Path) -> SweepConfig:
    """Read a JSON sweep configuration file."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return config_from_dict(d)


def write_sweep_config(path: str | Path, config: SweepConfig) -> None:
    Path(path).write_text(json.dumps(config.as_dict(), indent=2, sort_keys=True) + "\n")


# --- sampling --------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    index: int
    params: DetectorParams
    status: str = "ok"  # pre-evaluation tag, "ok" means evaluate


def draw_samples(config: SweepConfig) -> list[Sample]:
    rng = np.random.default_rng(config.seed)
    u = rng.random((config.N, len(SAMPLED) + 1))
    out = []
    E_G = config.G * config.E_S
    for i in range(config.N):
        vals = {}
        for j, key in enumerate(SAMPLED):
            if key != "T_V":
                vals[key] = _union_quantile(config.ranges[key], u[i, j])
        thr = tv_threshold(vals["T_C"], vals["f_EC"], E_G)
        upper = thr if config.T_V_upper == THRESHOLD else float(config.T_V_upper)
        status = "ok"
        j = SAMPLED.index("T_V")
        if upper < config.T_V_lower:
            vals["T_V"] = upper
            status = "rejected:empty-tv-range"
        elif config.near_threshold and u[i, -1] < config.near_fraction:
            vals["T_V"] = thr * (1.0 + config.epsilon)
        else:
            vals["T_V"] = config.T_V_lower + u[i, j] * (upper - config.T_V_lower)
        params = DetectorParams(E_S=config.E_S, E_G=E_G, **vals)
        out.append(Sample(i, params, status))
    return out


def sample(config: SweepConfig) -> list[DetectorParams]:
    return [s.params for s in draw_samples(config)]


# --- evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class SweepRecord:
    index: int
    params: DetectorParams
    report: MetricsReport | None
    status: str

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self) -> dict:
        d = {"index": self.index, **self.params.as_dict()}
        if self.report is not None:
            d.update(self.report.as_dict())
        else:
            d.update({k: math.nan for k in METRIC_FIELDS})
            d["gain"] = self.params.gain
        d["status"] = self.status
        return d


def evaluate_point(params: DetectorParams, index: int = 0) -> SweepRecord:
    """Run the per-point pipeline, turning known failures into status tags."""
    try:
        report, _ = compute_metrics(params)
    except (RegimeError, SpectralError, EfficiencyTooSmall) as exc:
        return SweepRecord(index, params, None, f"rejected:{exc.reason}")
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return SweepRecord(index, params, None, f"rejected:numerical-error:{type(exc).__name__}")
    bad = report.invariant_violations()
    if bad:
        return SweepRecord(index, params, report, "rejected:invariant-violation")
    return SweepRecord(index, params, report, "ok")


def _evaluate_sample(s: Sample) -> SweepRecord:
    if s.status != "ok":
        return SweepRecord(s.index, s.params, None, s.status)
    return evaluate_point(s.params, s.index)


def _init_worker():
    threadpool_limits(1)


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _map(fn, items, jobs: int | None):
    jobs = default_jobs() if jobs is None else jobs
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if jobs == 1 or len(items) <= 1:
        with threadpool_limits(1):
            return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def run_sweep(config: SweepConfig, jobs: int | None = None) -> list[SweepRecord]:
    """Evaluate every sample; records come back ordered by sample index."""
    if config.G_values:
        return gain_scan_config(config, jobs)
    records = _map(_evaluate_sample, draw_samples(config), jobs)
    return sorted(records, key=lambda r: r.index)


def gain_scan(base: DetectorParams, G_values, jobs: int | None = 1) -> list[SweepRecord]:
    """Re-evaluate ``base`` with ``E_G = G * E_S`` for each gain value."""
    items = []
    for i, G in enumerate(G_values):
        if not G > 0:
            raise ValueError("gain values must be > 0")
        items.append(Sample(i, base.replace(E_G=float(G) * base.E_S)))
    return _map(_evaluate_sample, items, jobs)


def gain_scan_config(config: SweepConfig, jobs: int | None = None) -> list[SweepRecord]:
    """Gain scans over every temperature in ``config.T_C_values``."""
    temps = config.T_C_values or (config.base.get("T_C", 0.2),)
    items = []
    for T_C in temps:
        p = DetectorParams(E_S=config.E_S, E_G=config.E_S, **{**config.base, "T_C": T_C})
        for G in config.G_values:
            items.append(Sample(len(items), p.replace(E_G=float(G) * config.E_S)))
    return _map(_evaluate_sample, items, jobs)


# --- record files ----------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_records(path: str | Path, records) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(RECORD_COLUMNS) + "\n")
        for r in records:
            row = r.row()
            fh.write(",".join(_fmt(row[c]) for c in RECORD_COLUMNS) + "\n")


def read_records(path: str | Path) -> list[dict]:
    """Rows as dicts; numeric columns parsed to float, ``status`` kept as text."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty records file")
    header = lines[0].split(",")
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValueError(f"{path}:{n}: expected {len(header)} cells, got {len(cells)}")
        row = {}
        for k, v in zip(header, cells):
            row[k] = v if k == "status" else float(v)
        rows.append(row)
    return rows


# --- filters ---------------------------------------------------------------

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}
_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_COL = r"[A-Za-z_][A-Za-z0-9_]*"
_RANGE_RE = re.compile(rf"^\s*({_NUM})\s*(<=?)\s*({_COL})\s*(<=?)\s*({_NUM})\s*$")
_CMP_RE = re.compile(rf"^\s*({_COL})\s*(<=?|>=?)\s*({_NUM})\s*$")


@dataclass(frozen=True)
class Filter:
    column: str
    lo: float = -math.inf
    hi: float = math.inf
    lo_op: str = "<"
    hi_op: str = "<"
    text: str = ""

    def __call__(self, row: dict) -> bool:
        x = row[self.column]
        return _OPS[self.lo_op](self.lo, x) and _OPS[self.hi_op](x, self.hi)


def parse_filter(text: str) -> Filter:
    """Parse ``lo<col<hi``, ``col>=x`` style predicates."""
    m = _RANGE_RE.match(text)
    if m:
        lo, op1, col, op2, hi = m.groups()
        return Filter(col, float(lo), float(hi), op1, op2, text.strip())
    m = _CMP_RE.match(text)
    if m:
        col, op, x = m.groups()
        x = float(x)
        if op.startswith("<"):
            return Filter(col, hi=x, hi_op=op, text=text.strip())
        return Filter(col, lo=x, lo_op=op.replace(">", "<"), text=text.strip())
    raise ValueError(f"cannot parse filter {text!r}; expected e.g. '0.72<eta_D<0.7358' or 'g_SG>=1.5'")


def band_filter(column: str, band) -> Filter:
    lo, hi = band
    return Filter(column, lo, hi, "<=", "<=", f"{lo:g}<={column}<={hi:g}")


def select(rows, filters=(), ok_only: bool = True) -> list[dict]:
    fs = [f if isinstance(f, Filter) else parse_filter(f) for f in filters]
    out = []
    for r in rows:
        if isinstance(r, SweepRecord):
            if ok_only and not r.ok:
                continue
            r = r.row()
        elif ok_only and r.get("status") != "ok":
            continue
        if all(f(r) for f in fs):
            out.append(r)
    return out


def columns(rows, *names) -> tuple[np.ndarray, ...]:
    return tuple(np.array([r[n] for r in rows], dtype=float) for n in names)


# --- derived columns -------------------------------------------------------


def derived(row: dict, name: str) -> float:
    """Look up a column, accepting ``inv_gap = -1/Re(lambda1)`` as a virtual one."""
    if name == "inv_gap":
        return -1.0 / row["lambda1_re"]
    return row[name]


def xy(rows, x: str, y: str) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([derived(r, x) for r in rows], dtype=float),
        np.array([derived(r, y) for r in rows], dtype=float),
    )


# --- fits ------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    model: str
    a: float
    b: float
    r2: float
    n: int
    filter: str = ""
    x_column: str = ""
    y_column: str = ""

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _r2(y: np.ndarray, yhat: np.ndarray) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -math.inf
    return 1.0 - ss_res / ss_tot


def fit_inverse(x, y, **meta) -> FitResult:
    """Least-squares ``y = a / x`` on untransformed residuals."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 3:
        raise ValueError(f"fit_inverse needs >= 3 points, got {x.size}")
    if np.any(x <= 0):
        raise ValueError("fit_inverse needs x > 0")
    u = 1.0 / x
    a = float(np.sum(u * y) / np.sum(u * u))
    return FitResult("inverse", a, 0.0, _r2(y, a * u), int(x.size), **meta)


def fit_linear(x, y, **meta) -> FitResult:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2:
        raise ValueError(f"fit_linear needs >= 2 points, got {x.size}")
    res = stats.linregress(x, y) if np.ptp(x) > 0 else None
    if res is None:
        raise ValueError("fit_linear needs at least two distinct x values")
    a, b = float(res.slope), float(res.intercept)
    return FitResult("linear", a, b, _r2(y, a * x + b), int(x.size), **meta)


def fit_loglog(x, y, **meta) -> FitResult:
    """Power-law cross-check: ``log y = a log x + b``; ``a = -1`` for an inverse law."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("fit_loglog needs positive data")
    f = fit_linear(np.log(x), np.log(y))
    return FitResult("loglog", f.a, f.b, f.r2, f.n, **meta)


FITTERS = {"inverse": fit_inverse, "linear": fit_linear, "loglog": fit_loglog}


def spearman(x, y) -> float:
    return float(stats.spearmanr(x, y).statistic)


def banded_fits(rows, model: str, x: str, y: str, bands, band_column="g_SG", filters=()) -> list[FitResult]:
    out = []
    base = [f if isinstance(f, Filter) else parse_filter(f) for f in filters]
    for band in bands:
        bf = band_filter(band_column, band)
        sel = select(rows, [*base, bf])
        desc = " & ".join(f.text for f in [*base, bf])
        xs, ys = xy(sel, x, y)
        out.append(FITTERS[model](xs, ys, filter=desc, x_column=x, y_column=y))
    return out


# --- audits and summary ----------------------------------------------------


def audit(records) -> dict:
    """Counts of statuses, efficiency-bound and inequality violations."""
    counts: dict[str, int] = {}
    bound_viol = ineq_viol = 0
    for r in records:
        counts[r.status] = counts.get(r.status, 0) + 1
        if not r.ok:
            continue
        rep, p = r.report, r.params
        if p.gamma_D > 0 and rep.eta_D > max_efficiency_bound(p.gamma_G, p.gamma_D) + 2e-3:
            bound_viol += 1
        if not rep.inequality_C_ok:
            ineq_viol += 1
    return {
        "n_records": len(records),
        "n_ok": counts.get("ok", 0),
        "status_counts": dict(sorted(counts.items())),
        "bound_violations": bound_viol,
        "inequality_violations": ineq_viol,
    }


def summarize(config: SweepConfig, records, jitter_column: str = "jitter_rms") -> dict:
    """Audit counts plus the fits each preset is meant to reproduce.

    ``jitter_column`` selects ``jitter_rms`` (time) or ``jitter`` (time^2)
    for the jitter fits.
    """
    if jitter_column not in ("jitter", "jitter_rms"):
        raise ValueError("jitter_column must be 'jitter' or 'jitter_rms'")
    s = {"preset": config.name, "seed": config.seed, "jitter_column": jitter_column, **audit(records)}
    fits: list[tuple[str, FitResult]] = []

    def attempt(label, fn):
        try:
            fits.append((label, fn()))
        except ValueError as exc:
            s[f"{label}.error"] = str(exc)

    if config.name == "fig4":
        for i, band in enumerate(config.bands):
            attempt(
                f"fit.band{i}",
                lambda band=band: banded_fits(
                    records, "inverse", "R_dc", jitter_column, [band], config.band_column, config.filters
                )[0],
            )
    elif config.name == "fig5":
        attempt("fit.all", lambda: FITTERS["inverse"](*xy(select(records, config.filters), "inv_gap", "R_dc"),
                                                       filter=" & ".join(config.filters), x_column="inv_gap", y_column="R_dc"))
        for i, band in enumerate(config.bands):
            attempt(
                f"fit.band{i}",
                lambda band=band: banded_fits(
                    records, "inverse", "inv_gap", "R_dc", [band], config.band_column, config.filters
                )[0],
            )
    elif config.name == "appD":
        for i, band in enumerate(config.bands):
            attempt(
                f"fit.band{i}",
                lambda band=band: banded_fits(
                    records, "linear", "inv_gap", jitter_column, [band], config.band_column, config.filters
                )[0],
            )
    elif config.name == "appE":
        for T_C in config.T_C_values:
            sel = [r for r in records if r.ok and r.params.T_C == T_C]
            G = [r.params.gain for r in sel]
            S = [r.report.Sigma_tot for r in sel]
            attempt(f"fit.T_C={T_C:g}", lambda G=G, S=S: fit_linear(G, S, x_column="gain", y_column="Sigma_tot"))
    for label, f in fits:
        for k, v in f.as_dict().items():
            s[f"{label}.{k}"] = v
    return s


def write_summary(path: str | Path, summary: dict) -> None:
    with open(path, "w") as fh:
        for k, v in summary.items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    fh.write(f"{k}.{kk} = {_fmt(vv)}\n")
            else:
                fh.write(f"{k} = {_fmt(v)}\n")


def read_summary(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, _, v = line.partition(" = ")
            out[k] = v
    return out
