"""Sectioned key/value experiment files.

Layout::

    [experiment]      name, controllers, seeds, iterations, metrics, eval_episodes
    [defaults]        TaskConfig keys shared by every task
    [task:<label>]    domain = <int> plus TaskConfig overrides, one section per task
    [lyapunov]        LyapunovConfig keys
    [pg]              PGConfig keys
    [lifelong]        LifelongConfig keys

Tasks run in file order and must be grouped by domain. ``noise_N0`` is given
in dBm; every other power is in mW. Per-node values take a comma-separated
list or a single value for all nodes. Unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import fields, replace
from importlib import resources

from .env import DomainConfig, TaskConfig, dbm_to_mw, mw_to_dbm
from .errors import ParseError, ValidationError
from .harness import DomainSpec, ExperimentSpec
from .lifelong import LifelongConfig
from .lyapunov import LyapunovConfig
from .pg import PGConfig

PRESETS = {"table1": "table1.cfg", "table2": "table2_domains.cfg"}
EXPERIMENT_KEYS = ("name", "controllers", "seeds", "iterations", "metrics", "eval_episodes")
_PER_NODE = ("comm_scale_zeta", "eh_scale_zeta_prime", "conv_eff_lambda")
_BOOL_WORDS = {"1": True, "yes": True, "true": True, "on": True, "0": False, "no": False, "false": False, "off": False}
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:\s;#][^=:]*?)\s*[=:]")


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ValidationError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return resources.files("swiptbench.presets").joinpath(PRESETS[name]).read_text(encoding="utf-8")


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number, plus (section, None) for headers."""
    where: dict = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line[:1].isspace():
            where.setdefault((section, m.group(1).strip()), no)
    return where


def _convert(name, raw: str, default, line):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            word = raw.lower()
            if word not in _BOOL_WORDS:
                raise ValueError(raw)
            return _BOOL_WORDS[word]
        if isinstance(default, int):
            value = float(raw)
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ParseError(line, f"{name}: cannot interpret {raw!r}") from None
    return raw


def _section_values(parser, section, cls, where, skip=(), renames=None):
    """Convert one section's keys into constructor kwargs for ``cls``."""
    defaults = {f.name: getattr(cls(), f.name) if f.name not in _PER_NODE else (0.0,) for f in fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        line = where.get((section, key), 0)
        if key in skip:
            continue
        if key not in defaults:
            raise ParseError(line, f"unknown key {key!r} in [{section}]")
        out[key] = _convert(key, raw, defaults[key], line)
    return out


def _task_kwargs(parser, section, where):
    kw = _section_values(parser, section, TaskConfig, where, skip=("domain",))
    if "noise_N0" in kw:
        kw["noise_N0"] = dbm_to_mw(kw["noise_N0"])
    return kw


def _build(cls, kw, section):
    try:
        return cls(**kw)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(section, str(exc)) from exc


def _split_list(raw):
    return [x.strip() for x in raw.split(",") if x.strip()]


def parse_config(text: str) -> ExperimentSpec:
    """Parse and validate experiment text into an ExperimentSpec."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"),
                                       default_section="__none__", strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError(exc.lineno, "key/value line before any [section] header") from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ParseError(exc.lineno or 0, exc.message.splitlines()[0]) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else 0
        raise ParseError(line, "malformed line") from None
    where = _line_index(text)

    known = {"experiment", "defaults", "lyapunov", "pg", "lifelong"}
    for section in parser.sections():
        if section not in known and not section.startswith("task:"):
            raise ParseError(where.get((section, None), 0), f"unknown section [{section}]")

    exp = dict(parser.items("experiment")) if parser.has_section("experiment") else {}
    for key in exp:
        if key not in EXPERIMENT_KEYS:
            raise ParseError(where.get(("experiment", key), 0), f"unknown key {key!r} in [experiment]")

    lyap = _build(LyapunovConfig, _section_values(parser, "lyapunov", LyapunovConfig, where), "lyapunov") \
        if parser.has_section("lyapunov") else LyapunovConfig()
    pg = _build(PGConfig, _section_values(parser, "pg", PGConfig, where), "pg") \
        if parser.has_section("pg") else PGConfig()
    ll_kw = {}
    if parser.has_section("lifelong"):
        raw_mode = parser.get("lifelong", "eta_a_mode", fallback=None)
        m = re.fullmatch(r"\s*fixed\(\s*([^)]+)\)\s*", raw_mode or "")
        if m:
            parser.set("lifelong", "eta_a_mode", "fixed")
            parser.set("lifelong", "eta_a_value", m.group(1))
        ll_kw = _section_values(parser, "lifelong", LifelongConfig, where)
    lifelong = _build(LifelongConfig, ll_kw, "lifelong")

    base_kw = _task_kwargs(parser, "defaults", where) if parser.has_section("defaults") else {}
    sequence: list = []
    for section in parser.sections():
        if not section.startswith("task:"):
            continue
        label = section[len("task:"):].strip()
        line = where.get((section, None), 0)
        if not parser.has_option(section, "domain"):
            raise ValidationError("domain", f"[{section}] (line {line}) needs a domain key")
        dom_raw = parser.get(section, "domain")
        try:
            dom_id = int(dom_raw)
        except ValueError:
            raise ParseError(where.get((section, "domain"), line), f"domain must be an integer, got {dom_raw!r}") from None
        cfg = _build(TaskConfig, {**base_kw, **_task_kwargs(parser, section, where)}, section)
        if sequence and sequence[-1].domain.domain_id == dom_id:
            sequence[-1].tasks.append((label, cfg))
        else:
            if any(ds.domain.domain_id == dom_id for ds in sequence):
                raise ValidationError("domain", f"tasks of domain {dom_id} must be contiguous ([{section}], line {line})")
            sequence.append(DomainSpec(DomainConfig.from_task(cfg, dom_id), [(label, cfg)]))
    if not sequence:
        raise ValidationError("domain_sequence", "no [task:...] sections found")

    kwargs = {"name": exp.get("name", "experiment").strip(), "domain_sequence": sequence,
              "pg": pg, "lyapunov": lyap, "lifelong": lifelong}
    try:
        if "controllers" in exp:
            kwargs["controllers"] = tuple(_split_list(exp["controllers"]))
        if "metrics" in exp:
            kwargs["metrics"] = tuple(_split_list(exp["metrics"]))
        if "seeds" in exp:
            kwargs["seeds"] = tuple(int(s) for s in _split_list(exp["seeds"]))
        kwargs["iterations"] = int(exp["iterations"]) if "iterations" in exp else pg.iterations
        if "eval_episodes" in exp:
            kwargs["eval_episodes"] = int(exp["eval_episodes"])
    except ValueError as exc:
        raise ValidationError("experiment", str(exc)) from None
    return ExperimentSpec(**kwargs)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(spec: ExperimentSpec) -> str:
    """Text form of ``spec``; parse_config(serialize_config(s)) reproduces ``s``."""
    lines = [
        "[experiment]",
        f"name = {spec.name}",
        f"controllers = {', '.join(spec.controllers)}",
        f"seeds = {', '.join(str(s) for s in spec.seeds)}",
        f"iterations = {spec.iterations}",
        f"metrics = {', '.join(spec.metrics)}",
        f"eval_episodes = {spec.eval_episodes}",
        "",
    ]
    for ds in spec.domain_sequence:
        for label, cfg in ds.tasks:
            lines.append(f"[task:{label}]")
            lines.append(f"domain = {ds.domain.domain_id}")
            for f in fields(TaskConfig):
                value = getattr(cfg, f.name)
                if f.name == "noise_N0":
                    value = round(mw_to_dbm(value), 9)
                lines.append(f"{f.name} = {_fmt(value)}")
            lines.append("")
    for section, obj in (("lyapunov", spec.lyapunov), ("pg", spec.pg), ("lifelong", spec.lifelong)):
        lines.append(f"[{section}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path=None, preset=None) -> ExperimentSpec:
    if preset is not None:
        return parse_config(preset_text(preset))
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def with_seeds(spec: ExperimentSpec, seeds) -> ExperimentSpec:
    return replace(spec, seeds=tuple(int(s) for s in seeds))
