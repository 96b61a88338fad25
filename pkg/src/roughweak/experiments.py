"""Weak-error measurement: coupled coarse-vs-reference estimates, CIs and rate fits.

All coarse estimates are computed from stride views of one set of reference-grid
paths (common random numbers), so the variance of ``phi(Xref) - phi(Xcoarse)``
is that of the pathwise difference rather than of two independent estimates.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .kernels_cov import HurstParams, PsdFactor, TimeGrid, build_joint_covariance, psd_factor
from .path_sampler import DEFAULT_CHUNK, iter_path_blocks, subsample
from .payoffs import Payoff
from .schemes import PsiSpec, discrete_second_moment, euler_left_point

__all__ = [
    "CONFIG_KEYS",
    "CSV_HEADER",
    "ConfigError",
    "MemoryBudgetError",
    "RateFit",
    "RateFitError",
    "RunConfig",
    "WeakErrorReport",
    "WeakErrorRow",
    "analytic_square_errors",
    "emit_report",
    "fit_rate",
    "fit_rates",
    "joint_factor",
    "load_config_file",
    "read_report",
    "simulate_terminal_values",
    "weak_error_curve",
]

log = logging.getLogger(__name__)

Z95 = 1.96
MEM_BUDGET_ENV = "ROUGHWEAK_MEM_BUDGET_MB"
CSV_HEADER = ("H", "psi", "payoff", "dt", "n", "mean_err", "se", "ci_lo", "ci_hi", "M", "seed")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


class MemoryBudgetError(RuntimeError):
    pass


class RateFitError(ValueError):
    pass


def _default_budget() -> float:
    raw = os.environ.get(MEM_BUDGET_ENV)
    if raw is None:
        return 1024.0
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{MEM_BUDGET_ENV}={raw!r} is not a number") from None


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, str):
        return tuple(float(x) for x in text.replace(",", " ").split())
    if isinstance(text, (int, float)):
        return (float(text),)
    return tuple(float(x) for x in text)


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, str):
        text = text.strip()
        if ".." in text:
            lo, hi = text.split("..")
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(x) for x in text.replace(",", " ").split())
    if isinstance(text, int):
        return (text,)
    return tuple(int(x) for x in text)


def _payoff_list(text) -> tuple[str, ...]:
    # ';' or whitespace separates payoffs since poly coefficients use ','
    if isinstance(text, str):
        return tuple(p for p in text.replace(";", " ").split() if p)
    return tuple(text)


@dataclass(frozen=True)
class RunConfig:
    """Parameters of a weak-error experiment; field names are the config keys."""

    H: tuple[float, ...] = (0.1,)
    T: float = 1.0
    log2_n_ref: int = 12
    log2_n_list: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    M: int = 100_000
    seed: int = 0
    psi: str = "linear"
    payoffs: tuple[str, ...] = ("square",)
    out: str | None = None
    mem_budget_mb: float = field(default_factory=_default_budget)

    def __post_init__(self) -> None:
        coerce = {
            "H": _floats, "T": float, "log2_n_ref": int, "log2_n_list": _ints,
            "M": int, "seed": int, "psi": str, "payoffs": _payoff_list,
            "mem_budget_mb": float,
        }
        for key, fn in coerce.items():
            try:
                object.__setattr__(self, key, fn(getattr(self, key)))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {getattr(self, key)!r} ({exc})") from None
        if self.out is not None:
            object.__setattr__(self, "out", str(self.out))
        self.validate()

    def validate(self) -> None:
        if not self.H:
            raise ConfigError("at least one H is required")
        for h in self.H:
            if not 0.0 < h <= 0.5:
                raise ConfigError(f"H must lie in (0, 1/2], got {h}")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.log2_n_ref < 0:
            raise ConfigError("log2_n_ref must be >= 0")
        if not self.log2_n_list:
            raise ConfigError("log2_n_list must not be empty")
        for k in self.log2_n_list:
            if not 0 <= k <= self.log2_n_ref:
                raise ConfigError(f"coarse level {k} does not divide n_ref = 2^{self.log2_n_ref}")
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if not self.payoffs:
            raise ConfigError("at least one payoff is required")
        if self.mem_budget_mb <= 0:
            raise ConfigError("mem_budget_mb must be positive")
        try:
            PsiSpec.parse(self.psi)
            for p in self.payoffs:
                Payoff.parse(p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def n_ref(self) -> int:
        return 2**self.log2_n_ref

    @property
    def psi_spec(self) -> PsiSpec:
        return PsiSpec.parse(self.psi)

    @classmethod
    def from_mapping(cls, data: Mapping[str, object]) -> "RunConfig":
        unknown = set(data) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**dict(data))

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_mapping({**self.as_dict(), **changes})

    def as_dict(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def items(self) -> list[tuple[str, str]]:
        """Resolved config as ``(key, text)`` pairs in the config-file syntax."""
        out = []
        for key, value in self.as_dict().items():
            if key == "payoffs":
                text = ";".join(value)
            elif isinstance(value, tuple):
                text = ",".join(repr(v) for v in value)
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            out.append((key, text))
        return out


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def load_config_file(path) -> dict[str, str]:
    """Read a flat ``key = value`` file ('#' starts a comment)."""
    data: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        data[key] = value.strip()
    return data


@dataclass(frozen=True)
class WeakErrorRow:
    H: float
    psi: str
    payoff: str
    dt: float
    n: int
    mean_err: float
    se: float
    ci_lo: float
    ci_hi: float
    M: int
    seed: int


@dataclass
class WeakErrorReport:
    rows: list[WeakErrorRow] = field(default_factory=list)
    metadata: dict[str, object] = field(default_factory=dict)

    def groups(self) -> list[tuple[float, str]]:
        seen: dict[tuple[float, str], None] = {}
        for r in self.rows:
            seen.setdefault((r.H, r.payoff), None)
        return list(seen)

    def select(self, H: float | None = None, payoff: str | None = None) -> list[WeakErrorRow]:
        return [r for r in self.rows
                if (H is None or r.H == H) and (payoff is None or r.payoff == payoff)]


_FACTOR_CACHE: dict[tuple[float, float, int], PsdFactor] = {}


def joint_factor(grid: TimeGrid, hp: HurstParams, cache: bool = True) -> PsdFactor:
    """Factor of the joint (W^H, W) covariance, memoised per ``(H, T, n)``."""
    key = (hp.H, grid.T, grid.n)
    if cache and key in _FACTOR_CACHE:
        return _FACTOR_CACHE[key]
    factor = psd_factor(build_joint_covariance(grid, hp))
    if cache:
        _FACTOR_CACHE[key] = factor
    return factor


def _blocks_per_yield(config: RunConfig, stream_layout: int, allow_chunking: bool) -> int:
    row_bytes = (config.n_ref + 1) * 2 * 8
    need = row_bytes * config.M
    budget = config.mem_budget_mb * 2**20
    nblocks = -(-config.M // stream_layout)
    if need <= budget:
        return nblocks
    if not allow_chunking:
        raise MemoryBudgetError(
            f"path storage needs {need / 2**20:.1f} MiB, over the {config.mem_budget_mb} MiB budget"
        )
    per_block = row_bytes * stream_layout
    if per_block > budget:
        raise MemoryBudgetError(
            f"one stream block of {stream_layout} paths needs {per_block / 2**20:.1f} MiB, "
            f"over the {config.mem_budget_mb} MiB budget"
        )
    return max(1, int(budget // per_block))


def simulate_terminal_values(config: RunConfig, H: float, *,
                             stream_layout: int = DEFAULT_CHUNK,
                             allow_chunking: bool = True) -> dict[int, np.ndarray]:
    """Euler terminal values on the reference grid and on every coarse grid.

    Returns ``{n: values}`` keyed by step count; all grids share the same paths.
    """
    hp = HurstParams(H)
    grid = TimeGrid(config.T, config.n_ref)
    factor = joint_factor(grid, hp)
    psi = config.psi_spec
    levels = sorted({config.n_ref, *(2**k for k in config.log2_n_list)}, reverse=True)
    values = {n: np.empty(config.M) for n in levels}
    per_yield = _blocks_per_yield(config, stream_layout, allow_chunking)
    for blk in iter_path_blocks(factor, grid, hp, config.M, config.seed,
                                stream_layout, per_yield):
        cols = slice(blk.first_path, blk.first_path + blk.M)
        for n in levels:
            values[n][cols] = euler_left_point(subsample(blk, config.n_ref // n), psi, hp).values
    return values


def weak_error_curve(config: RunConfig, *, stream_layout: int = DEFAULT_CHUNK,
                     allow_chunking: bool = True) -> WeakErrorReport:
    """Coupled weak-error estimates ``mean[phi(Xref) - phi(Xn)]`` for every (H, payoff, n)."""
    config.validate()
    payoffs = [Payoff.parse(p) for p in config.payoffs]
    psi_text = str(config.psi_spec)
    report = WeakErrorReport(metadata={
        "T": config.T, "n_ref": config.n_ref, "M": config.M,
        "seed": config.seed, "psi": psi_text,
    })
    for H in config.H:
        log.info("H=%s: sampling %d paths on 2^%d steps", H, config.M, config.log2_n_ref)
        values = simulate_terminal_values(config, H, stream_layout=stream_layout,
                                          allow_chunking=allow_chunking)
        ref = values[config.n_ref]
        for payoff in payoffs:
            phi_ref = payoff(ref)
            for k in config.log2_n_list:
                n = 2**k
                diff = phi_ref - payoff(values[n])
                mean = float(diff.mean())
                se = float(diff.std(ddof=1) / math.sqrt(config.M))
                report.rows.append(WeakErrorRow(
                    H=H, psi=psi_text, payoff=str(payoff), dt=config.T / n, n=n,
                    mean_err=mean, se=se, ci_lo=mean - Z95 * se, ci_hi=mean + Z95 * se,
                    M=config.M, seed=config.seed,
                ))
    return report


@dataclass(frozen=True)
class RateFit:
    """Least-squares line ``log2|err| = slope * log2(dt) + intercept``."""

    slope: float
    intercept: float
    slope_lo: float
    slope_hi: float
    r2: float
    used_n: tuple[int, ...]
    dropped_n: tuple[int, ...] = ()


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_rate(rows: WeakErrorReport | Sequence[WeakErrorRow], H: float | None = None,
             payoff: str | None = None) -> RateFit:
    """Fit the weak rate from one (H, payoff) group of rows.

    Rows with zero error (the reference level) or whose 95% CI contains zero are
    dropped with a warning.  ``slope_lo``/``slope_hi`` come from refitting with
    ``|mean_err|`` replaced by the CI endpoint farther from and nearer to zero.
    """
    if isinstance(rows, WeakErrorReport):
        rows = rows.select(H, payoff)
    else:
        rows = [r for r in rows if (H is None or r.H == H) and (payoff is None or r.payoff == payoff)]
    if len({(r.H, r.payoff) for r in rows}) > 1:
        raise RateFitError("rows mix several (H, payoff) groups; select one")
    used, dropped = [], []
    for r in rows:
        if r.mean_err == 0.0:
            continue
        if r.ci_lo <= 0.0 <= r.ci_hi:
            dropped.append(r)
        else:
            used.append(r)
    if dropped:
        msg = "dropping rows whose 95%% CI straddles zero: n = %s" % [r.n for r in dropped]
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if len({r.dt for r in used}) < 2:
        raise RateFitError("need at least two step sizes with a non-zero, sign-definite error")
    x = np.log2([r.dt for r in used])
    err = np.abs([r.mean_err for r in used])
    far = np.maximum(np.abs([r.ci_lo for r in used]), np.abs([r.ci_hi for r in used]))
    near = np.minimum(np.abs([r.ci_lo for r in used]), np.abs([r.ci_hi for r in used]))
    slope, intercept, r2 = _ols(x, np.log2(err))
    s_far = _ols(x, np.log2(far))[0]
    s_near = _ols(x, np.log2(near))[0]
    return RateFit(slope, intercept, min(s_far, s_near), max(s_far, s_near), r2,
                   tuple(r.n for r in used), tuple(r.n for r in dropped))


def fit_rates(report: WeakErrorReport) -> dict[tuple[float, str], RateFit]:
    """Fit every (H, payoff) group that has enough usable rows."""
    fits = {}
    for H, payoff in report.groups():
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fits[(H, payoff)] = fit_rate(report, H, payoff)
        except RateFitError as exc:
            log.warning("no fit for H=%s payoff=%s: %s", H, payoff, exc)
    return fits


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def emit_report(report: WeakErrorReport, fits: Mapping[tuple[float, str], RateFit] | None,
                path, config: RunConfig | None = None) -> Path:
    """Write the report as CSV; fits and the resolved config follow as '#' rows."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in report.rows:
                w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
            for (H, payoff), fit in (fits or {}).items():
                w.writerow([
                    "#fit", f"H={H!r}", f"payoff={payoff}", f"slope={fit.slope!r}",
                    f"intercept={fit.intercept!r}", f"slope_lo={fit.slope_lo!r}",
                    f"slope_hi={fit.slope_hi!r}", f"r2={fit.r2!r}",
                    "used_n=" + " ".join(map(str, fit.used_n)),
                    "dropped_n=" + " ".join(map(str, fit.dropped_n)),
                ])
            if config is not None:
                for key, text in config.items():
                    w.writerow(["#config", f"{key}={text}"])
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def read_report(path) -> WeakErrorReport:
    """Parse the data rows of a CSV written by :func:`emit_report`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read report {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ValueError(f"{path}: missing or unexpected header {header!r}")
    rows = []
    for rec in reader:
        if len(rec) != len(CSV_HEADER):
            raise ValueError(f"{path}: malformed row {rec!r}")
        d = dict(zip(CSV_HEADER, rec))
        rows.append(WeakErrorRow(
            H=float(d["H"]), psi=d["psi"], payoff=d["payoff"], dt=float(d["dt"]),
            n=int(d["n"]), mean_err=float(d["mean_err"]), se=float(d["se"]),
            ci_lo=float(d["ci_lo"]), ci_hi=float(d["ci_hi"]), M=int(d["M"]), seed=int(d["seed"]),
        ))
    return WeakErrorReport(rows)


def analytic_square_errors(config: RunConfig, H: float) -> dict[int, float]:
    """Exact ``E[Xref^2] - E[Xn^2]`` for every coarse level (Ito isometry oracle)."""
    hp = HurstParams(H)
    psi = config.psi_spec
    ref = discrete_second_moment(psi, hp, config.T, config.n_ref)
    return {2**k: ref - discrete_second_moment(psi, hp, config.T, 2**k) for k in config.log2_n_list}

