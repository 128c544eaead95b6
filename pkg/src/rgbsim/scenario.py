"""Scenario presets and configuration file round-tripping.

Three presets describe the adoption stages of GAI-assisted answering: the
pre-GAI baseline (no GAI queries), the present-day GAI mix, and a projected
post-GAI regime where most answer traffic flows through the GAI. Config
files are TOML; a file may either spell out every section or name a preset
and override individual fields.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from typing import Literal

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .core import (
    ColorSet,
    FlowParams,
    Flows,
    InvalidScenarioError,
    MixingCondition,
    ScenarioConfig,
    validate_scenario,
)

PresetName = Literal["pre-gai", "gai", "post-gai"]

PRESET_NAMES: tuple[PresetName, ...] = ("pre-gai", "gai", "post-gai")


def _gai_flows() -> Flows:
    return Flows(
        P=FlowParams(rate=1.0, bias=1.0),
        H=FlowParams(rate=0.1, bias=-0.08, gamma=0.5),
        I=FlowParams(rate=0.1, bias=0.0, per_coupon=True),
        T=FlowParams(rate=0.1, bias=None, per_coupon=True, w=3),
        S=FlowParams(rate=100.0, bias=0.1),
        A=FlowParams(rate=10.0, bias=0.1, alpha=0.4),
        F=FlowParams(rate=1.0, bias=0.1, beta=0.04),
    )


def preset(name: str) -> ScenarioConfig:
    """Build one of the three named scenarios.

    The base scenario sets: fresh posts at 1/day with a weak quality bias,
    slow curation with strong quality filtering, per-coupon indexing and
    training at 0.1/day each matching the search-engine and LLM expiry
    rates, search-engine reposts at 100/day, GAI reposts at 10/day with 40%
    of answers reused and a 4% feedback share, and 10 initial black coupons.
    pre-GAI switches the GAI query channel off entirely; post-GAI swaps the
    repost-rate ratio (10 vs 100), raises reuse to 80%, curates ten times
    faster, and relaxes the users' quality filter on GAI answers.
    """
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")

    base = ScenarioConfig(
        colors=ColorSet.rgb(),
        generator=(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
        flows=_gai_flows(),
        mu_W=0.01,
        mu_T=0.001,
        mu_S=0.1,
        mu_L=0.1,
        black_init=10,
        gai_black_gate=True,
        mixing=MixingCondition(mode="none"),
    )
    if name == "gai":
        return base
    if name == "pre-gai":
        flows = replace(
            base.flows,
            A=replace(base.flows.A, rate=0.0),
            F=replace(base.flows.F, rate=0.0),
        )
        return replace(base, flows=flows)
    # post-gai: beta stays at 0.04, so Lambda_F = 0.04 * 100 / 0.8 = 5.
    flows = replace(
        base.flows,
        H=replace(base.flows.H, rate=1.0),
        S=replace(base.flows.S, rate=10.0),
        A=replace(base.flows.A, rate=100.0, alpha=0.8, bias=1.0),
        F=replace(base.flows.F, rate=5.0),
    )
    return replace(base, flows=flows)


class ConfigError(ValueError):
    """Malformed or invalid configuration document."""


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {value!r}")


def save_config(cfg: ScenarioConfig) -> str:
    """Render a fully resolved configuration in canonical TOML form.

    The section and key order is fixed, so equal configurations serialize to
    identical bytes.
    """
    c = cfg.colors
    lines: list[str] = []

    def sec(name: str, pairs: list[tuple[str, object]]) -> None:
        lines.append(f"[{name}]")
        for k, v in pairs:
            if v is not None:
                lines.append(f"{k} = {_fmt(v)}")
        lines.append("")

    sec("colors", [
        ("labels", list(c.labels)),
        ("qualities", list(c.qualities)),
        ("good", sorted(c.good)),
        ("bad", sorted(c.bad)),
    ])
    sec("generator", [("g", list(cfg.generator))])
    f = cfg.flows
    sec("flows.P", [("lambda_P", f.P.rate), ("C_P", f.P.bias)])
    sec("flows.H", [("lambda_H", f.H.rate), ("C_H", f.H.bias), ("gamma", f.H.gamma)])
    sec("flows.I", [("lambda_I", f.I.rate), ("C_I", f.I.bias)])
    sec("flows.T", [("lambda_T", f.T.rate), ("w", f.T.w)])
    sec("flows.S", [("lambda_S", f.S.rate), ("C_S", f.S.bias)])
    sec("flows.A", [("lambda_A", f.A.rate), ("C_A", f.A.bias), ("alpha", f.A.alpha)])
    sec("flows.F", [("lambda_F", f.F.rate), ("C_F", f.F.bias), ("beta", f.F.beta)])
    sec("ttl", [
        ("mu_W", cfg.mu_W), ("mu_T", cfg.mu_T),
        ("mu_S", cfg.mu_S), ("mu_L", cfg.mu_L),
    ])
    sec("blackcoupons", [
        ("black_init", cfg.black_init),
        ("gai_black_gate", cfg.gai_black_gate),
    ])
    sec("mixing", [("mode", cfg.mixing.mode), ("xi", cfg.mixing.xi)])
    return "\n".join(lines)


_FLOW_KEYS = {
    "P": ("lambda_P", "C_P", ()),
    "H": ("lambda_H", "C_H", ("gamma",)),
    "I": ("lambda_I", "C_I", ()),
    "T": ("lambda_T", "C_T", ("w",)),
    "S": ("lambda_S", "C_S", ()),
    "A": ("lambda_A", "C_A", ("alpha",)),
    "F": ("lambda_F", "C_F", ("beta",)),
}


def _merge_flow(name: str, base: FlowParams, table: dict) -> FlowParams:
    rate_key, bias_key, extras = _FLOW_KEYS[name]
    known = {rate_key, bias_key, *extras}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"[flows.{name}] has unknown keys: {sorted(unknown)}")
    kwargs = {}
    if rate_key in table:
        kwargs["rate"] = float(table[rate_key])
    if bias_key in table:
        kwargs["bias"] = float(table[bias_key])
    for extra in extras:
        if extra in table:
            value = table[extra]
            kwargs[extra] = int(value) if extra == "w" else float(value)
    return replace(base, **kwargs)


def load_config(text: str) -> ScenarioConfig:
    """Parse a TOML document into a validated scenario.

    The document may name a preset (``preset = "gai"``) and override any
    subset of fields, or define every section itself (an unnamed preset
    starts from the base GAI values). Rejects documents with unknown keys,
    parse errors, or invariant violations.
    """
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc

    known_sections = {
        "preset", "colors", "generator", "flows", "ttl",
        "blackcoupons", "mixing", "simulation",
    }
    unknown = set(doc) - known_sections
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")

    base = preset(doc.get("preset", "gai"))

    cfg = base
    if "colors" in doc:
        t = doc["colors"]
        labels = tuple(t.get("labels", base.colors.labels))
        cfg = replace(cfg, colors=ColorSet(
            labels=labels,
            qualities=tuple(float(q) for q in t.get("qualities", base.colors.qualities)),
            good=frozenset(t.get("good", base.colors.good)),
            bad=frozenset(t.get("bad", base.colors.bad)),
        ))
    if "generator" in doc:
        cfg = replace(cfg, generator=tuple(float(g) for g in doc["generator"]["g"]))
    if "flows" in doc:
        flows = cfg.flows
        for name, table in doc["flows"].items():
            if name not in _FLOW_KEYS:
                raise ConfigError(f"unknown flow section [flows.{name}]")
            flows = replace(flows, **{name: _merge_flow(name, getattr(flows, name), table)})
        cfg = replace(cfg, flows=flows)
    if "ttl" in doc:
        t = doc["ttl"]
        cfg = replace(cfg, **{k: float(t[k]) for k in ("mu_W", "mu_T", "mu_S", "mu_L") if k in t})
    if "blackcoupons" in doc:
        t = doc["blackcoupons"]
        if "black_init" in t:
            cfg = replace(cfg, black_init=int(t["black_init"]))
        if "gai_black_gate" in t:
            cfg = replace(cfg, gai_black_gate=bool(t["gai_black_gate"]))
    if "mixing" in doc:
        t = doc["mixing"]
        mode = t.get("mode", cfg.mixing.mode)
        xi = t.get("xi", cfg.mixing.xi)
        cfg = replace(cfg, mixing=MixingCondition(
            mode=mode, xi=None if xi is None else float(xi)
        ))

    violations = validate_scenario(cfg)
    if violations:
        raise InvalidScenarioError(violations)
    return cfg


def simulation_defaults(text: str) -> dict:
    """Extract the optional [simulation] table (CLI defaults) from a config."""
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    return dict(doc.get("simulation", {}))
