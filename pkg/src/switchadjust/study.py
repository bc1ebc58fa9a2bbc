"""Monte Carlo study harness: scenarios x conditions x methods x replications.

Each replication is keyed on ``(seed, scenario, condition, replication)``
and simulates one RCT and one external cohort from its own counter-based
streams, then runs every configured estimator on the same pair. Results
are folded in replication order, so output does not depend on the number
of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from . import config
from .adjusters import (
    DEFAULT_COVARIATES,
    METHODS,
    RECENSOR_MODES,
    atse_adjust,
    atse_dissimilarity,
    run_method,
)
from .errors import ConfigError, ExtrapolationRequiredError, FitError
from .simulate import CONDITIONS, ScenarioSpec, scenario_preset, simulate_external, simulate_rct, stream, true_control_rmst
from .survival import RMST_MODES, RmstPolicy

__all__ = [
    "MethodSpec",
    "StudyConfig",
    "StudyMetrics",
    "StudyResult",
    "performance_metrics",
    "run_replication",
    "run_study",
]

FORMATS = ("csv", "json", "md")
METRIC_NAMES = ("bias", "se", "rmse")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    c: float | None = None

    def __post_init__(self):
        if self.name not in METHODS:
            raise ConfigError(f"unknown method {self.name!r}; expected one of {METHODS}")
        if self.name == "atse" and not (self.c is not None and self.c > 0):
            raise ConfigError("ATSE needs a decay factor c > 0")

    @property
    def label(self) -> str:
        if self.name == "atse":
            return f"ATSE (c={self.c:g})"
        return {"oracle": "Oracle", "itt": "ITT", "tse": "TSE", "eca": "ECA"}[self.name]


@dataclass(frozen=True)
class StudyConfig:
    """Study grid and analysis options.

    Any :class:`ScenarioSpec` field may also be given (in ``overrides``)
    and is applied on top of every scenario preset.
    """

    scenarios: tuple[int, ...] = (1,)
    conditions: tuple[str, ...] = CONDITIONS
    methods: tuple[str, ...] = ("oracle", "itt", "tse", "eca", "atse")
    c_values: tuple[float, ...] = (1.0, 4.0, 8.0)
    reps: int = 200
    seed: int = 20240601
    threads: int = 1
    rmst_policy: Literal["km-only", "weibull", "hybrid"] = "hybrid"
    recensor: Literal["off", "switchers-only", "all-control"] = "switchers-only"
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    format: Literal["csv", "json", "md"] = "md"
    out: str | None = None
    overrides: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for s in self.scenarios:
            if s not in range(1, 9):
                raise ConfigError(f"scenario must be 1-8, got {s}")
        for cond in self.conditions:
            if cond not in CONDITIONS:
                raise ConfigError(f"condition must be one of {CONDITIONS}, got {cond!r}")
        if self.rmst_policy not in RMST_MODES:
            raise ConfigError(f"rmst_policy must be one of {RMST_MODES}")
        if self.recensor not in RECENSOR_MODES:
            raise ConfigError(f"recensor must be one of {RECENSOR_MODES}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        self.method_specs()  # validates names and c values
        unknown = set(self.overrides) - set(config.field_types(ScenarioSpec))
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        ScenarioSpec(**self.overrides)

    def method_specs(self) -> list[MethodSpec]:
        specs = []
        for name in self.methods:
            if name == "atse":
                if not self.c_values:
                    raise ConfigError("ATSE requested without c_values")
                specs.extend(MethodSpec("atse", float(c)) for c in self.c_values)
            else:
                specs.append(MethodSpec(name))
        return specs

    def scenario(self, number: int, condition: str) -> ScenarioSpec:
        return scenario_preset(number, condition).replace(**self.overrides)

    def replace(self, **changes) -> StudyConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, raw) -> StudyConfig:
        values, rest = config.coerce_fields(cls, {k: v for k, v in raw.items() if k != "overrides"},
                                            allow_unknown=True)
        overrides, unknown = config.coerce_fields(ScenarioSpec, rest, allow_unknown=True)
        if unknown or "overrides" in raw:
            raise ConfigError(f"unknown config keys: {sorted(set(unknown) | ({'overrides'} & set(raw)))}")
        return cls(**values, overrides=overrides)

    @classmethod
    def from_file(cls, path) -> StudyConfig:
        return cls.from_mapping(config.read_flat(path))


@dataclass(frozen=True)
class StudyMetrics:
    scenario: int
    condition: str
    method: str
    bias: float
    se: float
    rmse: float
    failures: int
    reps: int
    truth: float


def performance_metrics(estimates: Iterable[float], truth: float) -> tuple[float, float, float]:
    """Percent bias, empirical SE and RMSE, each relative to ``truth``.

    SE uses the sample standard deviation (divisor ``R - 1``); RMSE uses
    the mean squared error (divisor ``R``).
    """
    if not truth > 0:
        raise ValueError(f"truth must be > 0, got {truth}")
    est = np.asarray(list(estimates), dtype=float)
    if est.size == 0:
        raise ValueError("no estimates")
    bias = 100.0 * (est.mean() - truth) / truth
    se = 100.0 * est.std(ddof=1) / truth if est.size > 1 else float("nan")
    rmse = 100.0 * math.sqrt(np.mean((est - truth) ** 2)) / truth
    return float(bias), float(se), float(rmse)


_FAILURES = (FitError, ExtrapolationRequiredError)


def run_replication(
    scenario: ScenarioSpec,
    methods: Sequence[MethodSpec],
    seed: int,
    key: tuple[int, ...] = (),
    *,
    rmst_policy: RmstPolicy | None = None,
    recensor: str = "switchers-only",
    covariates: Sequence[str] = DEFAULT_COVARIATES,
) -> dict[str, float]:
    """Simulate one RCT + external pair and run each method on it.

    Returns a mapping ``label -> estimate`` with NaN marking a failed fit.
    The datasets come from streams keyed on ``(seed, *key, 0)`` and
    ``(seed, *key, 1)``, independent of ``methods``.
    """
    rmst_policy = rmst_policy or RmstPolicy()
    rct = simulate_rct(scenario, stream(seed, *key, 0))
    external = simulate_external(scenario, stream(seed, *key, 1))
    out: dict[str, float] = {}
    dissimilarity = None
    dissimilarity_failed = False
    for m in methods:
        try:
            if m.name == "atse":
                if dissimilarity is None and not dissimilarity_failed:
                    try:
                        dissimilarity = atse_dissimilarity(rct, external, covariates)
                    except _FAILURES:
                        dissimilarity_failed = True
                if dissimilarity_failed:
                    raise FitError("dissimilarity model failed")
                res = atse_adjust(rct, external, covariates, m.c, recensor, None, rmst_policy,
                                  dissimilarity=dissimilarity)
            else:
                res = run_method(m.name, rct, external, covariates=covariates, recensor=recensor,
                                 rmst_policy=rmst_policy)
            out[m.label] = float(res.control_rmst)
        except _FAILURES:
            out[m.label] = float("nan")
    return out


_COND_INDEX = {c: i for i, c in enumerate(CONDITIONS)}


def _cell_task(args):
    cfg, scenario, condition, reps = args
    spec = cfg.scenario(scenario, condition)
    methods = cfg.method_specs()
    policy = RmstPolicy(cfg.rmst_policy)
    return [
        run_replication(spec, methods, cfg.seed, (scenario, _COND_INDEX[condition], r),
                        rmst_policy=policy, recensor=cfg.recensor, covariates=cfg.covariates)
        for r in reps
    ]


@dataclass
class StudyResult:
    config: StudyConfig
    metrics: list[StudyMetrics]
    raw: list[tuple[int, str, int, str, float]]  # scenario, condition, rep, method, estimate

    def cell(self, scenario: int, condition: str, method: str) -> StudyMetrics:
        for m in self.metrics:
            if (m.scenario, m.condition, m.method) == (scenario, condition, method):
                return m
        raise KeyError((scenario, condition, method))

    def estimates(self, scenario: int, condition: str, method: str) -> np.ndarray:
        return np.array([r[4] for r in self.raw if r[:2] == (scenario, condition) and r[3] == method])

    # -- rendering

    def _labels(self) -> list[str]:
        return [m.label for m in self.config.method_specs()]

    def to_csv(self) -> str:
        conds = list(self.config.conditions)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "method", "truth",
                    *[f"{metric}_{c}" for metric in METRIC_NAMES for c in conds],
                    *[f"failures_{c}" for c in conds], "reps"])
        for s in self.config.scenarios:
            for label in self._labels():
                cells = [self.cell(s, c, label) for c in conds]
                w.writerow([s, label, repr(cells[0].truth),
                            *[repr(getattr(cell, metric)) for metric in METRIC_NAMES for cell in cells],
                            *[cell.failures for cell in cells], self.config.reps])
        return buf.getvalue()

    def to_json(self) -> str:
        # Execution-only settings stay out so output is schedule-independent.
        cfg = {k: v for k, v in dataclasses.asdict(self.config).items() if k not in ("threads", "out")}
        return json.dumps({"config": cfg, "metrics": [dataclasses.asdict(m) for m in self.metrics]},
                          indent=2, allow_nan=True) + "\n"

    def to_markdown(self) -> str:
        conds = list(self.config.conditions)
        head = ["Scenario", "Method"] + [f"{name} {c}" for name in ("Bias %", "SE %", "RMSE %") for c in conds]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for s in self.config.scenarios:
            for label in self._labels():
                cells = [self.cell(s, c, label) for c in conds]
                vals = [f"{getattr(cell, metric):.2f}" for metric in METRIC_NAMES for cell in cells]
                lines.append("| " + " | ".join([str(s), label, *vals]) + " |")
        return "\n".join(lines) + "\n"

    def render(self, fmt: str | None = None) -> str:
        fmt = fmt or self.config.format
        return {"csv": self.to_csv, "json": self.to_json, "md": self.to_markdown}[fmt]()

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "condition", "replication", "method", "estimate", "failed"])
        for s, c, r, label, est in self.raw:
            failed = int(not math.isfinite(est))
            w.writerow([s, c, r, label, "" if failed else repr(est), failed])
        return buf.getvalue()

    def write(self, out: str | Path, raw_path: str | Path | None = None) -> tuple[Path, Path]:
        out = Path(out)
        out.write_text(self.render())
        raw_path = Path(raw_path) if raw_path else out.with_name(out.stem + ".raw.csv")
        raw_path.write_text(self.raw_csv())
        return out, raw_path


def run_study(cfg: StudyConfig) -> StudyResult:
    """Run every (scenario, condition) cell and aggregate metrics.

    With ``cfg.threads > 1`` replications are spread over a process pool in
    contiguous chunks; results are reassembled in replication order.
    """
    labels = [m.label for m in cfg.method_specs()]
    chunk = max(1, math.ceil(cfg.reps / (4 * cfg.threads)))
    tasks = []
    for s in cfg.scenarios:
        for cond in cfg.conditions:
            for start in range(0, cfg.reps, chunk):
                tasks.append((cfg, s, cond, range(start, min(cfg.reps, start + chunk))))

    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(_cell_task, tasks))
    else:
        chunks = [_cell_task(t) for t in tasks]

    per_cell: dict[tuple[int, str], list[dict[str, float]]] = {}
    for (_, s, cond, _reps), results in zip(tasks, chunks):
        per_cell.setdefault((s, cond), []).extend(results)

    metrics, raw = [], []
    for s in cfg.scenarios:
        for cond in cfg.conditions:
            spec = cfg.scenario(s, cond)
            truth = true_control_rmst(spec, spec.enddate)
            rows = per_cell[(s, cond)]
            for label in labels:
                est = np.array([r[label] for r in rows])
                ok = np.isfinite(est)
                if ok.any():
                    bias, se, rmse = performance_metrics(est[ok], truth)
                else:
                    bias = se = rmse = float("nan")
                metrics.append(StudyMetrics(s, cond, label, bias, se, rmse, int((~ok).sum()), cfg.reps, truth))
            for r, row in enumerate(rows):
                for label in labels:
                    raw.append((s, cond, r, label, row[label]))
    return StudyResult(cfg, metrics, raw)
