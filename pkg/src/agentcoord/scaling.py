"""Scaling-law prediction, architecture selection and the fitted empirical curves.

The model is linear in 20 standardized terms (intercept, ten main effects,
nine interactions). Two standardization conventions are supported:

``product_of_standardized`` (default)
    Each underlying component (centered intelligence, log tools, overhead,
    ...) is z-scored and interactions are products of component z-scores.
    The intercept is then the prediction at the component means and
    ratios such as beta_4 / beta_17 are read in standardized units.

``standardized_terms``
    Every raw term, interactions included, is z-scored as its own column.

Standardization statistics are part of the coefficient artifact. The shipped
default derives them from a reconstructed calibration grid (five
architectures x four benchmarks x nine models); its provenance string says so.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import Topology

INTELLIGENCE_MEAN = 56.9

TERM_NAMES: tuple[str, ...] = (
    "intercept",
    "I_centered",
    "I_centered_sq",
    "log1p_T",
    "log1p_n_a",
    "log1p_O",
    "c",
    "R",
    "E_c",
    "log1p_A_e",
    "P_SA",
    "I_x_E_c",
    "A_e_x_P_SA",
    "O_x_T",
    "R_x_n_a",
    "c_x_I",
    "E_c_x_T",
    "P_SA_x_log1p_n_a",
    "I_x_log1p_T",
    "A_e_x_T",
)

# Point estimates in TERM_NAMES order.
REFERENCE_BETA: tuple[float, ...] = (
    0.453, 0.171, 0.007, 0.411, 0.052, 0.034, -0.057, -0.007, -0.043, -0.022,
    0.315, -0.022, -0.065, -0.162, 0.047, -0.011, -0.267, -0.404, -0.069, -0.019,
)

# Components z-scored in product mode; the first ten are the main effects.
COMPONENTS: tuple[str, ...] = (
    "intelligence",
    "intelligence_sq",
    "log_tools",
    "log_agents",
    "log_overhead",
    "message_density",
    "redundancy",
    "efficiency",
    "log_error_amp",
    "baseline",
    "overhead",
    "tools",
    "agents",
    "error_amp",
)

# Interaction terms as component pairs, in TERM_NAMES order.
INTERACTIONS: tuple[tuple[str, str], ...] = (
    ("intelligence", "efficiency"),
    ("error_amp", "baseline"),
    ("overhead", "tools"),
    ("redundancy", "agents"),
    ("message_density", "intelligence"),
    ("efficiency", "tools"),
    ("baseline", "log_agents"),
    ("intelligence", "log_tools"),
    ("error_amp", "tools"),
)

MODES = ("product_of_standardized", "standardized_terms")
ARTIFACT_SCHEMA = "agentcoord.coefficients/1"


class ModelArtifactError(ValueError):
    """A coefficient artifact is missing pieces needed for prediction."""


@dataclass(frozen=True)
class ScalingFeatures:
    intelligence: float
    tool_count: float
    agent_count: float
    overhead_pct: float
    message_density: float
    redundancy: float
    efficiency: float
    error_amplification: float
    baseline: float

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.error_amplification < 0:
            raise ValueError("error_amplification must be >= 0")
        if self.overhead_pct <= -1 or self.tool_count <= -1 or self.agent_count <= -1:
            raise ValueError("log(1+x) undefined: overhead, tools and agents must exceed -1")

    def check_domain(self) -> ScalingFeatures:
        """Stricter checks for real configurations (the constructor admits surrogates)."""
        if self.tool_count < 1 or self.agent_count < 1:
            raise ValueError("tool_count and agent_count must be >= 1")
        if not 0.0 <= self.baseline <= 1.0:
            raise ValueError("baseline must lie in [0, 1]")
        return self

    def components(self, intelligence_mean: float = INTELLIGENCE_MEAN) -> dict[str, float]:
        i = self.intelligence - intelligence_mean
        return {
            "intelligence": i,
            "intelligence_sq": i * i,
            "log_tools": math.log1p(self.tool_count),
            "log_agents": math.log1p(self.agent_count),
            "log_overhead": math.log1p(self.overhead_pct),
            "message_density": self.message_density,
            "redundancy": self.redundancy,
            "efficiency": self.efficiency,
            "log_error_amp": math.log1p(self.error_amplification),
            "baseline": self.baseline,
            "overhead": self.overhead_pct,
            "tools": self.tool_count,
            "agents": self.agent_count,
            "error_amp": self.error_amplification,
        }


def build_feature_vector(f: ScalingFeatures, intelligence_mean: float = INTELLIGENCE_MEAN) -> np.ndarray:
    """The 20 raw (unstandardized) terms in TERM_NAMES order."""
    k = f.components(intelligence_mean)
    i = k["intelligence"]
    return np.array(
        [
            1.0,
            i,
            k["intelligence_sq"],
            k["log_tools"],
            k["log_agents"],
            k["log_overhead"],
            f.message_density,
            f.redundancy,
            f.efficiency,
            k["log_error_amp"],
            f.baseline,
            i * f.efficiency,
            f.error_amplification * f.baseline,
            f.overhead_pct * f.tool_count,
            f.redundancy * f.agent_count,
            f.message_density * i,
            f.efficiency * f.tool_count,
            f.baseline * k["log_agents"],
            i * k["log_tools"],
            f.error_amplification * f.tool_count,
        ]
    )


@dataclass(frozen=True)
class Standardization:
    mean: float
    sd: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.sd)) or self.sd <= 0:
            raise ModelArtifactError(f"invalid standardization ({self.mean}, {self.sd}); sd must be > 0")


@dataclass(frozen=True)
class CoefficientSet:
    beta: tuple[float, ...]
    standardization: Mapping[str, Standardization] = field(default_factory=dict)
    intelligence_mean: float = INTELLIGENCE_MEAN
    interaction_mode: str = "product_of_standardized"
    provenance: str = "unspecified"

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(
            self,
            "standardization",
            {k: v if isinstance(v, Standardization) else Standardization(*v) for k, v in self.standardization.items()},
        )
        if len(self.beta) != len(TERM_NAMES):
            raise ModelArtifactError(f"expected {len(TERM_NAMES)} coefficients, got {len(self.beta)}")
        if self.interaction_mode not in MODES:
            raise ModelArtifactError(f"unknown interaction mode {self.interaction_mode!r}")

    def required_stats(self) -> tuple[str, ...]:
        return COMPONENTS if self.interaction_mode == "product_of_standardized" else TERM_NAMES[1:]

    def missing_stats(self) -> list[str]:
        return [k for k in self.required_stats() if k not in self.standardization]

    def scaled(self, factor: float) -> CoefficientSet:
        return replace(self, beta=tuple(b * factor for b in self.beta))

    def to_dict(self) -> dict:
        return {
            "schema": ARTIFACT_SCHEMA,
            "terms": list(TERM_NAMES),
            "beta": list(self.beta),
            "intelligence_mean": self.intelligence_mean,
            "interaction_mode": self.interaction_mode,
            "standardization": {k: {"mean": v.mean, "sd": v.sd} for k, v in sorted(self.standardization.items())},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> CoefficientSet:
        if data.get("schema") != ARTIFACT_SCHEMA:
            raise ModelArtifactError(f"unsupported artifact schema {data.get('schema')!r}")
        if list(data.get("terms", [])) != list(TERM_NAMES):
            raise ModelArtifactError("artifact term list does not match the model")
        return cls(
            beta=tuple(data["beta"]),
            standardization={k: Standardization(v["mean"], v["sd"]) for k, v in data.get("standardization", {}).items()},
            intelligence_mean=data.get("intelligence_mean", INTELLIGENCE_MEAN),
            interaction_mode=data.get("interaction_mode", "product_of_standardized"),
            provenance=data.get("provenance", "unspecified"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> CoefficientSet:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _require_stats(coeffs: CoefficientSet) -> None:
    missing = coeffs.missing_stats()
    if missing:
        raise ModelArtifactError(f"model artifact incomplete: no standardization for {', '.join(missing)}")


def standardized_term_vector(f: ScalingFeatures, coeffs: CoefficientSet) -> np.ndarray:
    _require_stats(coeffs)
    st = coeffs.standardization
    if coeffs.interaction_mode == "standardized_terms":
        raw = build_feature_vector(f, coeffs.intelligence_mean)
        z = [(raw[j] - st[name].mean) / st[name].sd for j, name in enumerate(TERM_NAMES) if j]
        return np.array([1.0] + z)
    comps = f.components(coeffs.intelligence_mean)
    z = {k: (comps[k] - st[k].mean) / st[k].sd for k in COMPONENTS}
    mains = [z[k] for k in COMPONENTS[:10]]
    inter = [z[a] * z[b] for a, b in INTERACTIONS]
    return np.array([1.0] + mains + inter)


def predict_from_standardized(z: Sequence[float], coeffs: CoefficientSet) -> float:
    """Prediction from an already standardized term vector (19 terms, or 20 with the intercept)."""
    z = np.asarray(z, dtype=float)
    if z.shape == (len(TERM_NAMES) - 1,):
        z = np.concatenate([[1.0], z])
    if z.shape != (len(TERM_NAMES),):
        raise ValueError(f"expected {len(TERM_NAMES) - 1} or {len(TERM_NAMES)} terms, got {z.shape}")
    return float(np.dot(np.asarray(coeffs.beta), z))


def predict_performance(f: ScalingFeatures, coeffs: CoefficientSet) -> float:
    return predict_from_standardized(standardized_term_vector(f, coeffs), coeffs)


def decision_boundary(coeffs: CoefficientSet) -> float:
    """|beta_4 / beta_17|: the standardized baseline above which adding agents hurts."""
    b4, b17 = coeffs.beta[4], coeffs.beta[17]
    if b17 == 0:
        raise ValueError("decision boundary undefined: beta_17 is zero")
    return abs(b4 / b17)


# -- architecture profiles ------------------------------------------------------


@dataclass(frozen=True)
class ArchitectureProfile:
    overhead_pct: float
    message_density: float
    redundancy: float
    efficiency: float
    error_amplification: float
    mean_turns: float
    agent_count: int
    success_rate: float


# Agent counts include the orchestrator for Centralized and Hybrid.
REFERENCE_PROFILES: Mapping[Topology, ArchitectureProfile] = {
    Topology.SAS: ArchitectureProfile(0.0, 0.00, 0.00, 0.466, 1.0, 7.2, 1, 0.466),
    Topology.INDEPENDENT: ArchitectureProfile(58.0, 0.00, 0.48, 0.234, 17.2, 11.4, 3, 0.370),
    Topology.DECENTRALIZED: ArchitectureProfile(263.0, 0.41, 0.50, 0.132, 7.8, 26.1, 3, 0.477),
    Topology.CENTRALIZED: ArchitectureProfile(285.0, 0.39, 0.41, 0.120, 4.4, 27.7, 4, 0.463),
    Topology.HYBRID: ArchitectureProfile(515.0, 0.24, 0.46, 0.074, 5.1, 44.3, 4, 0.452),
}

# Reported success per 1K tokens; kept for reference, not reproduced.
REFERENCE_SUCCESS_PER_1K: Mapping[Topology, float] = {
    Topology.SAS: 67.7,
    Topology.INDEPENDENT: 42.4,
    Topology.DECENTRALIZED: 23.9,
    Topology.CENTRALIZED: 21.5,
    Topology.HYBRID: 13.6,
}

# name -> (tool count, single-agent mean success)
CALIBRATION_BENCHMARKS: Mapping[str, tuple[int, float]] = {
    "workbench": (16, 0.629),
    "finance": (5, 0.349),
    "plancraft": (4, 0.568),
    "browsecomp": (5, 0.318),
}
CALIBRATION_INTELLIGENCE: tuple[float, ...] = (71, 68, 59, 65, 58, 47, 55, 47, 42)


def features_for(
    topology: Topology, tool_count: float, baseline: float, intelligence: float,
    profiles: Mapping[Topology, ArchitectureProfile] = REFERENCE_PROFILES,
) -> ScalingFeatures:
    p = profiles[topology]
    return ScalingFeatures(
        intelligence=intelligence,
        tool_count=tool_count,
        agent_count=p.agent_count,
        overhead_pct=p.overhead_pct,
        message_density=p.message_density,
        redundancy=p.redundancy,
        efficiency=p.efficiency,
        error_amplification=p.error_amplification,
        baseline=baseline,
    )


def calibration_grid(profiles: Mapping[Topology, ArchitectureProfile] = REFERENCE_PROFILES) -> list[ScalingFeatures]:
    """5 architectures x 4 benchmarks x 9 models = 180 configurations."""
    return [
        features_for(top, tools, base, i, profiles)
        for tools, base in CALIBRATION_BENCHMARKS.values()
        for i in CALIBRATION_INTELLIGENCE
        for top in Topology
    ]


def standardization_from(
    features: Sequence[ScalingFeatures],
    mode: str = "product_of_standardized",
    intelligence_mean: float = INTELLIGENCE_MEAN,
) -> dict[str, Standardization]:
    """Population (ddof=0) means and SDs of the columns a mode needs."""
    if mode == "product_of_standardized":
        rows = [f.components(intelligence_mean) for f in features]
        return {
            k: Standardization(float(np.mean([r[k] for r in rows])), float(np.std([r[k] for r in rows])))
            for k in COMPONENTS
        }
    raw = np.array([build_feature_vector(f, intelligence_mean) for f in features])
    return {
        name: Standardization(float(raw[:, j].mean()), float(raw[:, j].std()))
        for j, name in enumerate(TERM_NAMES)
        if j
    }


def default_coefficients(mode: str = "product_of_standardized") -> CoefficientSet:
    """Reference point estimates with calibration-grid standardization."""
    return CoefficientSet(
        beta=REFERENCE_BETA,
        standardization=standardization_from(calibration_grid(), mode),
        interaction_mode=mode,
        provenance=(
            "reference point estimates; standardization reconstructed from a 180-configuration "
            "grid of architecture profiles x benchmark (tools, baseline) x model intelligence"
        ),
    )


@dataclass(frozen=True)
class TaskProfile:
    tool_count: float
    baseline: float
    intelligence: float = INTELLIGENCE_MEAN


def select_architecture(
    task: TaskProfile,
    coeffs: CoefficientSet,
    profiles: Mapping[Topology, ArchitectureProfile] = REFERENCE_PROFILES,
    tie_epsilon: float = 0.005,
) -> list[tuple[Topology, float]]:
    """Rank architectures by predicted performance, best first.

    Predictions within ``tie_epsilon`` of the best remaining one are ordered
    by lower overhead.
    """
    if not 0.0 <= task.baseline <= 1.0:
        raise ValueError("baseline must lie in [0, 1]")
    missing = [t for t in Topology if t not in profiles]
    if missing:
        raise ValueError(f"profiles missing for {', '.join(t.label for t in missing)}")
    scores = {
        top: predict_performance(features_for(top, task.tool_count, task.baseline, task.intelligence, profiles), coeffs)
        for top in Topology
    }
    remaining = dict(scores)
    ranking = []
    while remaining:
        best = max(remaining.values())
        close = [t for t, s in remaining.items() if s >= best - tie_epsilon]
        pick = min(close, key=lambda t: (profiles[t].overhead_pct, -remaining[t]))
        ranking.append((pick, remaining.pop(pick)))
    return ranking


# -- fitted curves --------------------------------------------------------------


def turn_power_law(n: float) -> float:
    """Mean reasoning turns for ``n`` agents: 2.72 (n + 0.5)^1.724."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2.72 * (n + 0.5) ** 1.724


class Saturation(NamedTuple):
    raw: float
    clamped: float


def density_saturation(c: float) -> Saturation:
    """Success as a function of message density: 0.73 + 0.28 ln c."""
    if c <= 0:
        raise ValueError("message density must be positive")
    raw = 0.73 + 0.28 * math.log(c)
    return Saturation(raw, min(1.0, max(0.0, raw)))


def overhead_threshold(tool_count: float, probe_overhead: float, coeffs: CoefficientSet | None = None) -> float:
    """Literal threshold expression (|b5| / (|b13| T)) ln(1 + probe)."""
    if tool_count == 0:
        raise ValueError("tool_count must be nonzero")
    if tool_count < 0 or probe_overhead < 0:
        raise ValueError("tool_count and probe_overhead must be nonnegative")
    beta = coeffs.beta if coeffs else REFERENCE_BETA
    return abs(beta[5]) / (abs(beta[13]) * tool_count) * math.log1p(probe_overhead)


def overhead_threshold_root(tool_count: float, coeffs: CoefficientSet, upper: float = 1e4) -> float | None:
    """Overhead (percent) where the overhead main effect and the overhead x tools
    interaction cancel, in standardized space. None when they never cancel on [0, upper]."""
    if coeffs.interaction_mode != "product_of_standardized":
        raise ModelArtifactError("root finder needs product_of_standardized coefficients")
    _require_stats(coeffs)
    st = coeffs.standardization
    b5, b13 = coeffs.beta[5], coeffs.beta[13]
    z_t = (tool_count - st["tools"].mean) / st["tools"].sd

    def net(o: float) -> float:
        z_lo = (math.log1p(o) - st["log_overhead"].mean) / st["log_overhead"].sd
        z_o = (o - st["overhead"].mean) / st["overhead"].sd
        return b5 * z_lo + b13 * z_o * z_t

    lo, hi = 0.0, upper
    if net(lo) == 0:
        return lo
    if np.sign(net(lo)) == np.sign(net(hi)):
        return None
    return float(brentq(net, lo, hi, xtol=1e-9))


# -- domain complexity ------------------------------------------------------------

REFERENCE_DOMAIN_COMPLEXITY: Mapping[str, float] = {
    "workbench": 0.000,
    "finance": 0.407,
    "plancraft": 0.419,
    "browsecomp": 0.839,
}


def domain_complexity(p_max: float, sigma: float, mu: float, p_best: float) -> float:
    """Mean of (1 - p_max), the coefficient of variation sigma/mu, and (1 - p_best)."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return ((1.0 - p_max) + sigma / mu + (1.0 - p_best)) / 3.0
