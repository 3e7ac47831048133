"""Fitting and validating the scaling model: design matrices, OLS, grouped CV, bootstrap."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Topology
from .scaling import (
    COMPONENTS,
    INTELLIGENCE_MEAN,
    INTERACTIONS,
    MODES,
    REFERENCE_PROFILES,
    TERM_NAMES,
    CoefficientSet,
    ScalingFeatures,
    Standardization,
    build_feature_vector,
)

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
VIF_FLAG = 5.0


class DataError(ValueError):
    """Input records cannot support the requested fit."""


class RankDeficiencyError(DataError):
    def __init__(self, message: str, columns: Sequence[str]):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class RunRecord:
    """One observed configuration.

    Observed success rates lie in [0, 1]; values outside are accepted so that
    synthetic data drawn from a known linear truth can be fitted unclipped.
    """

    features: ScalingFeatures
    performance: float
    experiment_id: str
    family_label: str = ""
    benchmark_label: str = ""
    architecture: Topology = Topology.SAS

    def __post_init__(self) -> None:
        object.__setattr__(self, "architecture", Topology.parse(self.architecture))
        if not self.experiment_id:
            raise DataError("experiment_id must be nonempty")
        if not math.isfinite(self.performance):
            raise DataError("performance must be finite")


class ModelSpec(str, enum.Enum):
    MINIMAL = "minimal"
    LABELS = "labels"
    BASELINE = "baseline"
    FULL = "full"


ARCH_DUMMIES: tuple[str, ...] = tuple(f"arch_{t.value}" for t in Topology if t is not Topology.SAS)

_MINIMAL = ("I_centered", "log1p_T", "log1p_n_a")
_LABELS = ("I_centered", "I_centered_sq", "log1p_T", "log1p_n_a", "I_x_log1p_T") + ARCH_DUMMIES

SPEC_COLUMNS: Mapping[ModelSpec, tuple[str, ...]] = {
    ModelSpec.MINIMAL: ("intercept",) + _MINIMAL,
    ModelSpec.LABELS: ("intercept",) + _LABELS,
    ModelSpec.BASELINE: ("intercept",) + _LABELS + ("P_SA",),
    ModelSpec.FULL: TERM_NAMES,
}

# Main-effect term -> standardized component.
_MAIN_COMPONENT = dict(zip(TERM_NAMES[1:11], COMPONENTS[:10]))
_INTERACTION = dict(zip(TERM_NAMES[11:], INTERACTIONS))


def parameter_count(spec: ModelSpec) -> int:
    return len(SPEC_COLUMNS[ModelSpec(spec)])


def _needed_stats(spec: ModelSpec, mode: str) -> list[str]:
    cols = [c for c in SPEC_COLUMNS[spec] if c != "intercept" and c not in ARCH_DUMMIES]
    if mode == "standardized_terms":
        return cols
    needed: list[str] = []
    for c in cols:
        for comp in (_MAIN_COMPONENT[c],) if c in _MAIN_COMPONENT else _INTERACTION[c]:
            if comp not in needed:
                needed.append(comp)
    return needed


def _raw_columns(records: Sequence[RunRecord], intelligence_mean: float, mode: str) -> dict[str, np.ndarray]:
    if mode == "standardized_terms":
        raw = np.array([build_feature_vector(r.features, intelligence_mean) for r in records])
        return {name: raw[:, j] for j, name in enumerate(TERM_NAMES)}
    rows = [r.features.components(intelligence_mean) for r in records]
    return {k: np.array([row[k] for row in rows]) for k in COMPONENTS}


def compute_stats(
    records: Sequence[RunRecord],
    spec: ModelSpec = ModelSpec.FULL,
    mode: str = "product_of_standardized",
    intelligence_mean: float = INTELLIGENCE_MEAN,
) -> dict[str, Standardization]:
    """Population means and SDs of every standardized column the model specification needs."""
    spec = ModelSpec(spec)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    raw = _raw_columns(records, intelligence_mean, mode)
    stats = {}
    for name in _needed_stats(spec, mode):
        col = raw[name]
        sd = float(col.std())
        if not sd > 1e-12 * max(1.0, float(np.abs(col).max())):
            raise DataError(f"zero-variance column: {name}")
        stats[name] = Standardization(float(col.mean()), sd)
    return stats


def build_design_matrix(
    records: Sequence[RunRecord],
    spec: ModelSpec = ModelSpec.FULL,
    stats: Mapping[str, Standardization] | None = None,
    mode: str = "product_of_standardized",
    intelligence_mean: float = INTELLIGENCE_MEAN,
) -> tuple[np.ndarray, np.ndarray, dict[str, Standardization]]:
    """(X, y, stats). Pass ``stats`` from a training set to standardize held-out rows."""
    spec = ModelSpec(spec)
    if not records or (stats is None and len(records) < 2):
        raise DataError("need at least two records to estimate standardization")
    if stats is None:
        stats = compute_stats(records, spec, mode, intelligence_mean)
    missing = [k for k in _needed_stats(spec, mode) if k not in stats]
    if missing:
        raise DataError(f"standardization missing for {', '.join(missing)}")
    raw = _raw_columns(records, intelligence_mean, mode)
    z = {k: (raw[k] - stats[k].mean) / stats[k].sd for k in stats if k in raw}
    n = len(records)
    columns = []
    for name in SPEC_COLUMNS[spec]:
        if name == "intercept":
            columns.append(np.ones(n))
        elif name in ARCH_DUMMIES:
            columns.append(np.array([float(f"arch_{r.architecture.value}" == name) for r in records]))
        elif mode == "standardized_terms":
            columns.append(z[name])
        elif name in _MAIN_COMPONENT:
            columns.append(z[_MAIN_COMPONENT[name]])
        else:
            a, b = _INTERACTION[name]
            columns.append(z[a] * z[b])
    X = np.column_stack(columns)
    y = np.array([r.performance for r in records], dtype=float)
    return X, y, dict(stats)


@dataclass(frozen=True)
class OlsResult:
    coefficients: np.ndarray
    residuals: np.ndarray
    singular_values: np.ndarray

    @property
    def rss(self) -> float:
        return float(self.residuals @ self.residuals)


def fit_ols(X: np.ndarray, y: np.ndarray, column_names: Sequence[str] | None = None) -> OlsResult:
    """Least squares via SVD. Raises RankDeficiencyError naming collinear columns."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    names = list(column_names) if column_names is not None else [f"x{j}" for j in range(p)]
    if n <= p:
        raise DataError(f"need more rows than columns ({n} rows, {p} columns)")
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    if s[-1] < RANK_TOLERANCE * max(1.0, s[0]):
        null = vt[-1]
        involved = [names[j] for j in np.flatnonzero(np.abs(null) > 1e-3 * np.abs(null).max())]
        raise RankDeficiencyError(f"design matrix is rank deficient; collinear columns: {', '.join(involved)}", involved)
    coef = vt.T @ ((u.T @ y) / s)
    return OlsResult(coef, y - X @ coef, s)


def aic(rss: float, n: int, k: int) -> float:
    """n ln(RSS/n) + 2k."""
    if rss <= 0:
        return -math.inf
    return n * math.log(rss / n) + 2 * k


def r_squared(y: np.ndarray, predicted: np.ndarray) -> float:
    sst = float(((y - y.mean()) ** 2).sum())
    sse = float(((y - predicted) ** 2).sum())
    if sst == 0:
        return 1.0 if sse == 0 else -math.inf
    return 1.0 - sse / sst


def variance_inflation(X: np.ndarray, column_names: Sequence[str]) -> dict[str, float]:
    """VIF per non-intercept column (regress it on all other columns)."""
    out = {}
    for j, name in enumerate(column_names):
        if name == "intercept":
            continue
        others = np.delete(X, j, axis=1)
        coef, *_ = np.linalg.lstsq(others, X[:, j], rcond=None)
        r2 = r_squared(X[:, j], others @ coef)
        out[name] = math.inf if r2 >= 1 else 1.0 / (1.0 - r2)
    return out


# -- cross-validation -----------------------------------------------------------


def experiment_folds(records: Sequence[RunRecord], k: int = 5, seed: int = 0) -> list[list[str]]:
    """Partition the distinct experiment ids into ``k`` folds (seeded shuffle)."""
    ids = sorted({r.experiment_id for r in records})
    if len(ids) < k:
        raise DataError(f"need at least {k} distinct experiments, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[i] for i in sorted(chunk)] for chunk in np.array_split(order, k)]


@dataclass(frozen=True)
class FoldResult:
    test_experiments: tuple[str, ...]
    train_stats: Mapping[str, Standardization]
    r2: float
    mae: float
    rmse: float


@dataclass(frozen=True)
class CvResult:
    r2: float
    mae: float
    rmse: float
    folds: tuple[FoldResult, ...]


def kfold_cv(
    records: Sequence[RunRecord],
    k: int = 5,
    spec: ModelSpec = ModelSpec.FULL,
    seed: int = 0,
    mode: str = "product_of_standardized",
) -> CvResult:
    """Experiment-level k-fold CV; standardization is fitted on each training fold only."""
    spec = ModelSpec(spec)
    folds = []
    for test_ids in experiment_folds(records, k, seed):
        held = set(test_ids)
        train = [r for r in records if r.experiment_id not in held]
        test = [r for r in records if r.experiment_id in held]
        X, y, stats = build_design_matrix(train, spec, mode=mode)
        fit = fit_ols(X, y, SPEC_COLUMNS[spec])
        Xt, yt, _ = build_design_matrix(test, spec, stats=stats, mode=mode)
        pred = Xt @ fit.coefficients
        err = yt - pred
        folds.append(
            FoldResult(
                tuple(test_ids),
                stats,
                r_squared(yt, pred),
                float(np.abs(err).mean()),
                float(np.sqrt((err**2).mean())),
            )
        )
    return CvResult(
        float(np.mean([f.r2 for f in folds])),
        float(np.mean([f.mae for f in folds])),
        float(np.mean([f.rmse for f in folds])),
        tuple(folds),
    )


# -- bootstrap ----------------------------------------------------------------------


def bootstrap_se(
    records: Sequence[RunRecord],
    n_boot: int = 1000,
    spec: ModelSpec = ModelSpec.FULL,
    seed: int = 0,
    mode: str = "product_of_standardized",
) -> np.ndarray:
    """Row-resampling bootstrap of the coefficients.

    The design is standardized once on the full data; resamples draw rows of
    that fixed design so every replicate estimates the same parameters.
    """
    if len(records) < 30:
        raise DataError("bootstrap needs at least 30 records")
    spec = ModelSpec(spec)
    X, y, _ = build_design_matrix(records, spec, mode=mode)
    rng = np.random.default_rng(seed)
    n = len(y)
    draws = []
    failures = 0
    for _ in range(n_boot):
        idx = rng.integers(0, n, n)
        try:
            draws.append(fit_ols(X[idx], y[idx]).coefficients)
        except RankDeficiencyError:
            failures += 1
    if failures > 0.1 * n_boot:
        raise DataError(f"{failures}/{n_boot} bootstrap resamples were rank deficient")
    return np.std(np.array(draws), axis=0, ddof=1)


# -- full pipeline ------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    spec: ModelSpec
    column_names: tuple[str, ...]
    coefficients: np.ndarray
    stats: Mapping[str, Standardization]
    r2_train: float
    r2_cv: float
    mae_cv: float
    rmse_cv: float
    aic: float
    bootstrap_se: np.ndarray | None
    residuals: np.ndarray
    vif: Mapping[str, float] = field(default_factory=dict)
    mode: str = "product_of_standardized"

    @property
    def high_vif(self) -> list[str]:
        return [k for k, v in self.vif.items() if v > VIF_FLAG]

    def coefficient_set(self, provenance: str = "fitted") -> CoefficientSet:
        if self.spec is not ModelSpec.FULL:
            raise DataError("only the full specification exports a scaling-model artifact")
        return CoefficientSet(
            beta=tuple(float(b) for b in self.coefficients),
            standardization=dict(self.stats),
            interaction_mode=self.mode,
            provenance=provenance,
        )


def fit_model(
    records: Sequence[RunRecord],
    spec: ModelSpec = ModelSpec.FULL,
    k: int = 5,
    n_boot: int = 1000,
    seed: int = 0,
    mode: str = "product_of_standardized",
) -> FitResult:
    spec = ModelSpec(spec)
    names = SPEC_COLUMNS[spec]
    X, y, stats = build_design_matrix(records, spec, mode=mode)
    fit = fit_ols(X, y, names)
    cv = kfold_cv(records, k, spec, seed, mode)
    se = bootstrap_se(records, n_boot, spec, seed, mode) if n_boot else None
    vif = variance_inflation(X, names)
    flagged = [c for c, v in vif.items() if v > VIF_FLAG]
    if flagged:
        logger.info("VIF above %.0f for %s", VIF_FLAG, ", ".join(flagged))
    return FitResult(
        spec=spec,
        column_names=names,
        coefficients=fit.coefficients,
        stats=stats,
        r2_train=r_squared(y, X @ fit.coefficients),
        r2_cv=cv.r2,
        mae_cv=cv.mae,
        rmse_cv=cv.rmse,
        aic=aic(fit.rss, len(y), len(names)),
        bootstrap_se=se,
        residuals=fit.residuals,
        vif=vif,
        mode=mode,
    )


@dataclass(frozen=True)
class ComparisonRow:
    spec: ModelSpec
    k_params: int
    r2_train: float
    r2_cv: float
    aic: float


def compare_models(records: Sequence[RunRecord], k: int = 5, seed: int = 0) -> list[ComparisonRow]:
    """Fit the four nested specifications and tabulate fit quality."""
    rows = []
    for spec in ModelSpec:
        res = fit_model(records, spec, k=k, n_boot=0, seed=seed)
        rows.append(ComparisonRow(spec, parameter_count(spec), res.r2_train, res.r2_cv, res.aic))
    return rows


# -- synthetic data --------------------------------------------------------------------


def synthetic_records(
    beta: Sequence[float],
    n: int = 500,
    noise_sd: float = 0.05,
    seed: int = 0,
    n_experiments: int = 50,
    spec: ModelSpec = ModelSpec.FULL,
    mode: str = "product_of_standardized",
) -> list[RunRecord]:
    """Records whose performance is exactly linear in the specification's design plus Gaussian noise.

    Features scatter around the architecture profiles. Agent counts vary within
    multi-agent architectures so agent count and architecture labels are not
    collinear. The design is standardized on the generated sample itself,
    so ``beta`` is the estimand of a full-data fit.
    """
    spec = ModelSpec(spec)
    if len(beta) != parameter_count(spec):
        raise ValueError(f"{spec.value} spec needs {parameter_count(spec)} coefficients")
    rng = np.random.default_rng(seed)
    tops = list(Topology)
    drafts = []
    for i in range(n):
        top = tops[int(rng.integers(0, len(tops)))]
        prof = REFERENCE_PROFILES[top]
        mas = top is not Topology.SAS
        f = ScalingFeatures(
            intelligence=float(rng.uniform(40, 75)),
            tool_count=float(rng.integers(2, 21)),
            agent_count=float(rng.integers(2, 7)) if mas else 1.0,
            overhead_pct=float(prof.overhead_pct * rng.lognormal(0, 0.3)) if mas else float(rng.uniform(0, 20)),
            message_density=float(max(0.0, prof.message_density + rng.normal(0, 0.1))),
            redundancy=float(np.clip(prof.redundancy + rng.normal(0, 0.1), 0, 1)),
            efficiency=float(max(0.0, prof.efficiency * rng.lognormal(0, 0.3))),
            error_amplification=float(prof.error_amplification * rng.lognormal(0, 0.3)),
            baseline=float(rng.uniform(0.2, 0.8)),
        )
        drafts.append(RunRecord(f, 0.0, f"exp{i % n_experiments:03d}", "synthetic", f"bench{i % 4}", top))
    X, _, _ = build_design_matrix(drafts, spec, mode=mode)
    y = X @ np.asarray(beta, dtype=float) + rng.normal(0, noise_sd, n)
    return [
        RunRecord(d.features, float(v), d.experiment_id, d.family_label, d.benchmark_label, d.architecture)
        for d, v in zip(drafts, y)
    ]


# -- dataset files -------------------------------------------------------------------

DATASET_SCHEMA = 1


def record_to_dict(r: RunRecord) -> dict:
    return {
        "schema": DATASET_SCHEMA,
        "experiment_id": r.experiment_id,
        "family": r.family_label,
        "benchmark": r.benchmark_label,
        "architecture": r.architecture.value,
        "performance": r.performance,
        "features": asdict(r.features),
    }


def record_from_dict(d: Mapping) -> RunRecord:
    if d.get("schema", DATASET_SCHEMA) != DATASET_SCHEMA:
        raise DataError(f"unsupported dataset schema {d.get('schema')!r}")
    try:
        return RunRecord(
            ScalingFeatures(**d["features"]),
            float(d["performance"]),
            str(d["experiment_id"]),
            d.get("family", ""),
            d.get("benchmark", ""),
            Topology.parse(d.get("architecture", "sas")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad dataset record: {exc}") from exc


def save_dataset(records: Iterable[RunRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_dict(r), sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> list[RunRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(record_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return out
