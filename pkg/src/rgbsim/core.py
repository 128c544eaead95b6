"""Domain types and pure functions of the colored-answer ecosystem model.

Answers are convex combinations of a small set of primary colors, each color
carrying an intrinsic quality. Everything in this module is immutable and
side-effect free; the simulation engine and the mean-field solver build on
these primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

#: A color vector is a convex combination over the color set's labels,
#: aligned with ``ColorSet.labels``. Pure colors are unit vectors.
ColorVector = tuple[float, ...]

SIMPLEX_TOL = 1e-9


class InvalidBiasError(ValueError):
    """Raised when a quality bias drives some acceptance weight negative."""


class InvalidScenarioError(ValueError):
    """Raised when an operation is handed a scenario that fails validation."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        lines = "; ".join(f"{v.field}: {v.constraint}" for v in violations)
        super().__init__(f"invalid scenario: {lines}")


@dataclass(frozen=True)
class Violation:
    """One failed configuration constraint, naming the offending field."""

    field: str
    constraint: str


@dataclass(frozen=True)
class ColorSet:
    """The primary colors, their intrinsic qualities, and the good/bad split.

    Qualities must sum to one; ``good`` and ``bad`` must partition the labels
    with both sides non-empty. Violations are reported by
    :func:`validate_scenario` rather than raised here, so that invalid
    configurations can be inspected.
    """

    labels: tuple[str, ...]
    qualities: tuple[float, ...]
    good: frozenset[str]
    bad: frozenset[str]

    def __post_init__(self):
        if len(self.labels) != len(self.qualities):
            raise ValueError(
                f"{len(self.labels)} labels but {len(self.qualities)} qualities"
            )
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate color labels")

    @classmethod
    def rgb(cls, qualities: Sequence[float] = (0.5, 0.4, 0.1)) -> "ColorSet":
        """Three-color default: blue and green are good, red is bad."""
        return cls(
            labels=("blue", "green", "red"),
            qualities=tuple(float(q) for q in qualities),
            good=frozenset({"blue", "green"}),
            bad=frozenset({"red"}),
        )

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def unit(self, label: str) -> ColorVector:
        """The pure color vector for ``label``."""
        i = self.index(label)
        return tuple(1.0 if j == i else 0.0 for j in range(self.n))

    def is_good(self, label: str) -> bool:
        return label in self.good

    @property
    def good_indices(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.labels) if c in self.good)

    @property
    def bad_indices(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.labels) if c in self.bad)

    def violations(self, prefix: str = "colors") -> list[Violation]:
        out: list[Violation] = []
        if self.n < 2:
            out.append(Violation(f"{prefix}.labels", "at least two colors required"))
        for label, q in zip(self.labels, self.qualities):
            if not (0.0 <= q <= 1.0):
                out.append(
                    Violation(f"{prefix}.qualities", f"q_{label} = {q} outside [0, 1]")
                )
        if abs(sum(self.qualities) - 1.0) > SIMPLEX_TOL:
            out.append(
                Violation(
                    f"{prefix}.qualities",
                    f"qualities sum to {sum(self.qualities)!r}, expected 1",
                )
            )
        labelset = set(self.labels)
        if self.good | self.bad != labelset or self.good & self.bad:
            out.append(
                Violation(f"{prefix}.good", "good and bad sets must partition labels")
            )
        if not self.good or not self.bad:
            out.append(
                Violation(f"{prefix}.good", "both good and bad sets must be non-empty")
            )
        return out


def validate_color_vector(x: Sequence[float], colors: ColorSet) -> None:
    """Raise ValueError unless ``x`` lies on the color simplex."""
    if len(x) != colors.n:
        raise ValueError(f"color vector has {len(x)} entries, expected {colors.n}")
    if any(w < -SIMPLEX_TOL for w in x):
        raise ValueError(f"negative color weight in {x!r}")
    if abs(sum(x) - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"color weights sum to {sum(x)!r}, expected 1")


@dataclass(frozen=True)
class FlowParams:
    """Rate and quality bias of one flow, plus its flow-specific extras.

    ``rate`` is an aggregate events/day figure for the posting, curation,
    query and feedback flows, and a per-coupon rate for indexing and
    training (``per_coupon`` flags which reading applies). ``bias`` is the
    additive quality-bias constant; ``None`` means the flow accepts
    unconditionally (training has no bias).
    """

    rate: float
    bias: Optional[float] = None
    per_coupon: bool = False
    gamma: Optional[float] = None  # curation split: fresh vs from-search-engine
    alpha: Optional[float] = None  # share of GAI answers reposted to the Web
    beta: Optional[float] = None   # share of GAI answers fed back into the LLM
    w: Optional[int] = None        # copies added to the LLM per training event


@dataclass(frozen=True)
class Flows:
    """The six model flows (curation split in two stays inside H) plus feedback."""

    P: FlowParams  # fresh posts to the Web
    H: FlowParams  # curation into the training set
    I: FlowParams  # indexing Web -> search engine (per coupon)
    T: FlowParams  # training set -> LLM (per coupon)
    S: FlowParams  # search-engine answers reposted to the Web (rate is Lambda_S')
    A: FlowParams  # GAI answers reposted to the Web (rate is Lambda_A')
    F: FlowParams  # GAI answers fed back into the LLM

    def items(self) -> tuple[tuple[str, FlowParams], ...]:
        return (
            ("P", self.P), ("H", self.H), ("I", self.I), ("T", self.T),
            ("S", self.S), ("A", self.A), ("F", self.F),
        )


@dataclass(frozen=True)
class MixingCondition:
    """Answer-mixing mode: none, GAI-only, or GAI plus search-engine users.

    ``xi`` weights the perceived-best source when humans combine two
    search-engine answers; it is required (and constrained to [1/2, 1]) only
    in ``gai_and_se`` mode.
    """

    mode: Literal["none", "gai_only", "gai_and_se"] = "none"
    xi: Optional[float] = None


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run needs: colors, flow parameters, expiry rates, gating."""

    colors: ColorSet
    generator: tuple[float, ...]
    flows: Flows
    mu_W: float
    mu_T: float
    mu_S: float
    mu_L: float
    black_init: int = 0
    gai_black_gate: bool = True
    mixing: MixingCondition = field(default_factory=MixingCondition)

    @property
    def lambda_A(self) -> float:
        """Total GAI query rate, recovered from the repost rate and alpha."""
        a = self.flows.A
        if a.rate == 0.0:
            return 0.0
        if not a.alpha:
            return 0.0
        return a.rate / a.alpha


def acceptance_probability(quality: float, bias: float, colors: ColorSet) -> float:
    """Probability that a flow with the given bias accepts an answer.

    Equals ``(quality + bias) / sum_c (q_c + bias)``. For a pure color this
    is the flow's per-color addition probability; for a blended answer the
    blend quality enters the same law. Raises :class:`InvalidBiasError` when
    the bias makes any color's weight negative.
    """
    for label, q in zip(colors.labels, colors.qualities):
        if q + bias < 0.0:
            raise InvalidBiasError(
                f"bias {bias} drives q_{label} + bias = {q + bias} below zero"
            )
    if quality + bias < 0.0:
        raise InvalidBiasError(f"quality {quality} + bias {bias} below zero")
    denom = sum(colors.qualities) + colors.n * bias
    return (quality + bias) / denom


def answer_quality(x: Sequence[float], colors: ColorSet) -> float:
    """Blend quality: the weighted average of the component qualities."""
    return sum(w * q for w, q in zip(x, colors.qualities))


def classify_answer(
    x: Sequence[float], colors: ColorSet
) -> Literal["relevant", "irrelevant"]:
    """An answer is irrelevant when more than half its mass is on bad colors.

    Pure colors therefore classify exactly by the good/bad partition.
    """
    bad_mass = sum(x[i] for i in colors.bad_indices)
    return "irrelevant" if bad_mass > 0.5 else "relevant"


def mix_gai(x1: Sequence[float], x2: Sequence[float], u: float) -> ColorVector:
    """Blend two sources with fraction ``u`` of the first, componentwise.

    ``u`` is meant to be drawn uniformly on [0, 1] by the caller; the GAI
    cannot tell its sources apart.
    """
    return tuple(u * a + (1.0 - u) * b for a, b in zip(x1, x2))


def mix_human(
    x1: Sequence[float], x2: Sequence[float], xi: float, colors: ColorSet
) -> ColorVector:
    """Blend two sources with fraction ``xi`` of the perceived-best one.

    The better source is the one with higher blend quality (ties keep the
    first argument). ``xi`` in [1/2, 1] models the user's quality
    discrimination, from none (1/2) to perfect (1).
    """
    if answer_quality(x2, colors) > answer_quality(x1, colors):
        best, other = x2, x1
    else:
        best, other = x1, x2
    return tuple(xi * a + (1.0 - xi) * b for a, b in zip(best, other))


def ideal_good_distribution(colors: ColorSet) -> dict[str, float]:
    """Quality-proportional target shares over the good colors."""
    total = sum(colors.qualities[i] for i in colors.good_indices)
    return {
        colors.labels[i]: colors.qualities[i] / total for i in colors.good_indices
    }


def _check_rate(field_name: str, rate: float, out: list[Violation]) -> None:
    if not math.isfinite(rate) or rate < 0.0:
        out.append(Violation(field_name, f"rate {rate!r} must be finite and >= 0"))


def _check_unit(field_name: str, value: Optional[float], out: list[Violation]) -> None:
    if value is None:
        out.append(Violation(field_name, "required value missing"))
    elif not (0.0 <= value <= 1.0):
        out.append(Violation(field_name, f"{value!r} outside [0, 1]"))


def validate_scenario(cfg: ScenarioConfig) -> list[Violation]:
    """Check every configuration invariant; an empty list means valid.

    Never raises: each violation names the offending field and constraint so
    a loader can report all problems at once.
    """
    out: list[Violation] = []
    out.extend(cfg.colors.violations())

    if len(cfg.generator) != cfg.colors.n:
        out.append(
            Violation("generator.g", f"{len(cfg.generator)} entries for {cfg.colors.n} colors")
        )
    else:
        if any(g < 0.0 for g in cfg.generator):
            out.append(Violation("generator.g", "entries must be non-negative"))
        if abs(sum(cfg.generator) - 1.0) > SIMPLEX_TOL:
            out.append(
                Violation("generator.g", f"entries sum to {sum(cfg.generator)!r}, expected 1")
            )

    for name, fp in cfg.flows.items():
        _check_rate(f"flows.{name}.rate", fp.rate, out)
        if fp.bias is not None:
            for label, q in zip(cfg.colors.labels, cfg.colors.qualities):
                if q + fp.bias < 0.0:
                    out.append(
                        Violation(
                            f"flows.{name}.bias",
                            f"q_{label} + C_{name} = {q + fp.bias} < 0",
                        )
                    )

    _check_unit("flows.H.gamma", cfg.flows.H.gamma, out)
    _check_unit("flows.A.alpha", cfg.flows.A.alpha, out)
    _check_unit("flows.F.beta", cfg.flows.F.beta, out)
    w = cfg.flows.T.w
    if w is None or w < 1 or int(w) != w:
        out.append(Violation("flows.T.w", f"training multiplicity {w!r} must be an integer >= 1"))

    for name in ("mu_W", "mu_T", "mu_S", "mu_L"):
        mu = getattr(cfg, name)
        if not math.isfinite(mu) or mu <= 0.0:
            out.append(Violation(f"ttl.{name}", f"{mu!r} must be finite and > 0"))

    if cfg.black_init < 0 or int(cfg.black_init) != cfg.black_init:
        out.append(
            Violation("blackcoupons.black_init", f"{cfg.black_init!r} must be an integer >= 0")
        )

    if cfg.mixing.mode not in ("none", "gai_only", "gai_and_se"):
        out.append(Violation("mixing.mode", f"unknown mode {cfg.mixing.mode!r}"))
    if cfg.mixing.mode == "gai_and_se":
        xi = cfg.mixing.xi
        if xi is None:
            out.append(Violation("mixing.xi", "xi required for gai_and_se"))
        elif not (0.5 <= xi <= 1.0):
            out.append(Violation("mixing.xi", f"xi = {xi!r} outside [1/2, 1]"))

    # Cross-flow consistency: the feedback rate is a derived thinning of the
    # GAI query rate, Lambda_F = beta * Lambda_A' / alpha.
    a, f = cfg.flows.A, cfg.flows.F
    if a.alpha:
        expected_f = (f.beta or 0.0) * a.rate / a.alpha
        if abs(f.rate - expected_f) > 1e-9 * max(1.0, abs(expected_f)):
            out.append(
                Violation(
                    "flows.F.rate",
                    f"Lambda_F = {f.rate!r} inconsistent with "
                    f"beta * Lambda_A' / alpha = {expected_f!r}",
                )
            )
    elif a.rate > 0.0:
        out.append(
            Violation("flows.A.alpha", "alpha must be > 0 when the GAI repost rate is > 0")
        )

    return out


def require_valid(cfg: ScenarioConfig) -> ScenarioConfig:
    """Return ``cfg`` unchanged or raise :class:`InvalidScenarioError`."""
    violations = validate_scenario(cfg)
    if violations:
        raise InvalidScenarioError(violations)
    return cfg
