"""Experiment front end: config files in, CSV curves and JSON manifests out.

A run is described by a sectioned key=value config (model, disorder, run,
output), executed by one of six commands, and leaves behind one CSV per
curve plus a manifest recording the resolved config and per-file checksums.
Re-running any manifest must reproduce the CSV bytes exactly, for any
worker count; plotting happens elsewhere, on the CSV files.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .disorder import SingleSiteDensity
from .lattice import (
    FreeOperatorSpec,
    ModelSpec,
    ProjectionFamily,
    build_box_enumeration,
)
from .montecarlo import (
    Estimate,
    McConfig,
    dos_derivative_curve,
    fractional_moment_profile,
    ids_curve,
    smoothed_dos_curve,
    telescope_series_diagnostic,
)
from .verify import run_default_verification

ENV_OUT_DIR = "DOSLAB_OUT"
COMMANDS = ("dos", "dos-deriv", "ids", "fracmom", "telescope", "verify")
CSV_HEADER = "E,epsilon,ell,mean_re,mean_im,stderr,n_samples"

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """Invalid configuration, tagged with the section.key path at fault."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NumericalFailure(RuntimeError):
    """A run produced non-finite values or a solver gave up."""


# ---------------------------------------------------------------------------
# config value codecs


def _fmt_float(x: float) -> str:
    # repr is the shortest string that parses back to the same double
    return repr(float(x))


def _parse_int(path: str, text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(path, f"expected an integer, got {text!r}") from None


def _parse_float(path: str, text: str) -> float:
    try:
        v = float(text.strip())
    except ValueError:
        raise ConfigError(path, f"expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(path, f"expected a finite number, got {text!r}")
    return v


def _parse_float_list(path: str, text: str) -> tuple[float, ...]:
    """Comma list of numbers, or a lo:hi:count uniform-grid shorthand."""
    text = text.strip()
    if not text:
        raise ConfigError(path, "list must not be empty")
    if ":" in text and "," not in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(path, f"grid shorthand is lo:hi:count, got {text!r}")
        lo = _parse_float(path, parts[0])
        hi = _parse_float(path, parts[1])
        count = _parse_int(path, parts[2])
        if count < 1:
            raise ConfigError(path, f"grid needs at least one point, got {count}")
        return tuple(float(v) for v in np.linspace(lo, hi, count))
    return tuple(_parse_float(path, tok) for tok in text.split(","))


def _parse_int_list(path: str, text: str) -> tuple[int, ...]:
    """Comma list of integers, or an inclusive lo:hi shorthand."""
    text = text.strip()
    if not text:
        raise ConfigError(path, "list must not be empty")
    if ":" in text and "," not in text:
        parts = text.split(":")
        if len(parts) != 2:
            raise ConfigError(path, f"range shorthand is lo:hi, got {text!r}")
        lo = _parse_int(path, parts[0])
        hi = _parse_int(path, parts[1])
        if hi < lo:
            raise ConfigError(path, f"range {lo}:{hi} is empty")
        return tuple(range(lo, hi + 1))
    return tuple(_parse_int(path, tok) for tok in text.split(","))


def _parse_str_list(path: str, text: str) -> tuple[str, ...]:
    items = tuple(tok.strip() for tok in text.split(",") if tok.strip())
    if not items:
        raise ConfigError(path, "list must not be empty")
    return items


def _fmt_list(values, fmt) -> str:
    return ", ".join(fmt(v) for v in values)


# ---------------------------------------------------------------------------
# experiment config


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one experiment run.

    Construction validates every field and raises ConfigError with the
    offending section.key path, so a bad file never reaches an estimator.
    volume_sites = 0 in a file means the whole enumerated box and is
    resolved to the concrete count here.
    """

    # [model]
    dimension: int = 1
    half_width: int = 4
    volume_sites: int = 0
    hopping: float = 1.0
    phase: float = 0.0
    coupling: float = 1.0
    block_rank: int = 1
    # [disorder]
    p: int = 2
    # [run]
    command: str = "verify"
    energies: tuple[float, ...] = (0.0,)
    eps_values: tuple[float, ...] = (0.2,)
    s: float = 1.0 / 3.0
    ell: int = 0
    n_samples: int = 100
    master_seed: int = 0
    workers: int = 1
    distances: tuple[int, ...] = (1, 2, 3, 4)
    k_min: int = 2
    k_max: int = 4
    # [output]
    directory: str = ""
    formats: tuple[str, ...] = ("csv", "json")

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("model.dimension", f"must be >= 1, got {self.dimension}")
        if self.half_width < 0:
            raise ConfigError("model.half_width", f"must be >= 0, got {self.half_width}")
        n_all = (2 * self.half_width + 1) ** self.dimension
        if self.volume_sites == 0:
            object.__setattr__(self, "volume_sites", n_all)
        if not 1 <= self.volume_sites <= n_all:
            raise ConfigError(
                "model.volume_sites",
                f"must lie in [1, {n_all}] for this box, got {self.volume_sites}",
            )
        if not math.isfinite(self.hopping):
            raise ConfigError("model.hopping", "must be finite")
        if not math.isfinite(self.phase):
            raise ConfigError("model.phase", "must be finite")
        if not self.coupling > 0.0:
            raise ConfigError("model.coupling", f"must be positive, got {self.coupling}")
        if self.block_rank < 1:
            raise ConfigError("model.block_rank", f"must be >= 1, got {self.block_rank}")
        if self.p < 1:
            raise ConfigError("disorder.p", f"must be >= 1, got {self.p}")
        if self.command not in COMMANDS:
            raise ConfigError(
                "run.command",
                f"unknown command {self.command!r}, expected one of {', '.join(COMMANDS)}",
            )
        if not all(math.isfinite(e) for e in self.energies):
            raise ConfigError("run.energies", "grid points must be finite")
        if not all(e > 0.0 for e in self.eps_values):
            raise ConfigError("run.eps_values", "imaginary shifts must be positive")
        if not 0.0 < self.s < 1.0:
            raise ConfigError("run.s", f"fractional exponent {self.s} outside (0, 1)")
        if self.ell < 0:
            raise ConfigError("run.ell", f"derivative order must be >= 0, got {self.ell}")
        if self.n_samples < 1:
            raise ConfigError("run.n_samples", f"must be >= 1, got {self.n_samples}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("run.master_seed", "must fit an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("run.workers", f"must be >= 1, got {self.workers}")
        if any(d < 1 for d in self.distances):
            raise ConfigError("run.distances", "distances must be >= 1")
        if self.k_min < 1:
            raise ConfigError("run.k_min", f"must be >= 1, got {self.k_min}")
        if self.k_max < self.k_min:
            raise ConfigError(
                "run.k_max", f"must be >= k_min={self.k_min}, got {self.k_max}"
            )
        bad = [f for f in self.formats if f not in ("csv", "json")]
        if bad:
            raise ConfigError("output.formats", f"unknown formats {bad}")

    # -- wire format -------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("(file)", f"not parseable: {exc}") from None
        kwargs: dict = {}
        seen_m = None
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(section, "unknown section")
            for key, raw in parser.items(section):
                path = f"{section}.{key}"
                if section == "disorder" and key == "m":
                    seen_m = _parse_int(path, raw)
                    continue
                if key not in _SCHEMA[section]:
                    raise ConfigError(path, "unknown key")
                attr, parse, _ = _SCHEMA[section][key]
                kwargs[attr] = parse(path, raw)
        if seen_m is not None:
            if "p" in kwargs:
                raise ConfigError("disorder.m", "give p or m, not both")
            if seen_m < 0:
                raise ConfigError("disorder.m", f"must be >= 0, got {seen_m}")
            kwargs["p"] = seen_m + 1
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("(file)", f"unreadable config {path!r}: {exc}") from None
        return cls.from_text(text)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        """Inverse of to_mapping; mapping values are canonical strings."""
        kwargs: dict = {}
        for section, entries in mapping.items():
            if section not in _SCHEMA:
                raise ConfigError(section, "unknown section")
            for key, raw in entries.items():
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                attr, parse, _ = _SCHEMA[section][key]
                kwargs[attr] = parse(f"{section}.{key}", raw)
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        """Canonical {section: {key: string}} form; fixed order, all fields."""
        out: dict = {}
        for section, keys in _SCHEMA.items():
            out[section] = {}
            for key, (attr, _, fmt) in keys.items():
                out[section][key] = fmt(getattr(self, attr))
        return out

    def to_text(self) -> str:
        chunks = []
        for section, entries in self.to_mapping().items():
            chunks.append(f"[{section}]")
            chunks.extend(f"{key} = {value}" for key, value in entries.items())
            chunks.append("")
        return "\n".join(chunks)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


# key -> (attr, parse(path, text) -> value, fmt(value) -> text)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "dimension": ("dimension", _parse_int, str),
        "half_width": ("half_width", _parse_int, str),
        "volume_sites": ("volume_sites", _parse_int, str),
        "hopping": ("hopping", _parse_float, _fmt_float),
        "phase": ("phase", _parse_float, _fmt_float),
        "coupling": ("coupling", _parse_float, _fmt_float),
        "block_rank": ("block_rank", _parse_int, str),
    },
    "disorder": {
        "p": ("p", _parse_int, str),
    },
    "run": {
        "command": ("command", lambda path, t: t.strip(), str),
        "energies": (
            "energies",
            _parse_float_list,
            lambda v: _fmt_list(v, _fmt_float),
        ),
        "eps_values": (
            "eps_values",
            _parse_float_list,
            lambda v: _fmt_list(v, _fmt_float),
        ),
        "s": ("s", _parse_float, _fmt_float),
        "ell": ("ell", _parse_int, str),
        "n_samples": ("n_samples", _parse_int, str),
        "master_seed": ("master_seed", _parse_int, str),
        "workers": ("workers", _parse_int, str),
        "distances": ("distances", _parse_int_list, lambda v: _fmt_list(v, str)),
        "k_min": ("k_min", _parse_int, str),
        "k_max": ("k_max", _parse_int, str),
    },
    "output": {
        "directory": ("directory", lambda path, t: t.strip(), str),
        "formats": ("formats", _parse_str_list, lambda v: _fmt_list(v, str)),
    },
}


# ---------------------------------------------------------------------------
# run manifest


@dataclass(frozen=True)
class RunManifest:
    """Provenance record of one run: inputs, environment, output checksums."""

    command: str
    config: ExperimentConfig
    config_sha256: str
    code_version: str
    wall_time_s: float
    outputs: dict[str, str]
    diagnostics: dict = field(default_factory=dict)

    def to_json_bytes(self) -> bytes:
        payload = {
            "kind": "doslab-run-manifest",
            "code_version": self.code_version,
            "command": self.command,
            "config": self.config.to_mapping(),
            "config_sha256": self.config_sha256,
            "wall_time_s": self.wall_time_s,
            "outputs": self.outputs,
            "diagnostics": self.diagnostics,
        }
        return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode()

    @classmethod
    def from_file(cls, path: str) -> "RunManifest":
        try:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("(manifest)", f"unreadable manifest {path!r}: {exc}") from None
        if payload.get("kind") != "doslab-run-manifest":
            raise ConfigError("(manifest)", "not a run manifest")
        try:
            return cls(
                command=payload["command"],
                config=ExperimentConfig.from_mapping(payload["config"]),
                config_sha256=payload["config_sha256"],
                code_version=payload["code_version"],
                wall_time_s=float(payload["wall_time_s"]),
                outputs=dict(payload["outputs"]),
                diagnostics=payload.get("diagnostics", {}),
            )
        except KeyError as exc:
            raise ConfigError("(manifest)", f"missing field {exc}") from None


# ---------------------------------------------------------------------------
# plan: validated, ready-to-run ingredients


@dataclass
class _Plan:
    command: str
    cfg: ExperimentConfig
    model: ModelSpec | None
    n_prefix_sites: int
    mc: McConfig | None
    fracmom_targets: list[tuple[int, int]] = field(default_factory=list)


def _build_model(cfg: ExperimentConfig) -> tuple[ModelSpec, int]:
    space = build_box_enumeration(cfg.dimension, cfg.half_width)
    n_all = len(space)
    if cfg.hopping == 0.0:
        free = FreeOperatorSpec.zero(space)
    elif cfg.phase == 0.0:
        free = FreeOperatorSpec.nearest_neighbor(space, amplitude=cfg.hopping)
    else:
        amp = cfg.hopping * complex(math.cos(cfg.phase), math.sin(cfg.phase))
        free = FreeOperatorSpec.nearest_neighbor(space, amplitude=amp)
    if n_all % cfg.block_rank != 0:
        raise ConfigError(
            "model.block_rank",
            f"rank {cfg.block_rank} does not divide the box's {n_all} sites",
        )
    projections = ProjectionFamily.contiguous(n_all, rank=cfg.block_rank)
    model = ModelSpec(
        site_space=space,
        projections=projections,
        free=free,
        coupling=cfg.coupling,
        density=SingleSiteDensity(cfg.p),
    )
    try:
        projections.blocks_for_prefix(cfg.volume_sites)
    except ValueError as exc:
        raise ConfigError("model.volume_sites", str(exc)) from None
    return model, cfg.volume_sites


def _prepare(command: str, cfg: ExperimentConfig) -> _Plan:
    """Everything that can be rejected before any sampling happens."""
    if command not in COMMANDS:
        raise ConfigError(
            "run.command",
            f"unknown command {command!r}, expected one of {', '.join(COMMANDS)}",
        )
    if command == "verify":
        return _Plan(command, cfg, None, 0, None)
    if command == "telescope" and not cfg.s < 0.5:
        raise ConfigError(
            "run.s",
            f"telescoping needs a fractional exponent below 1/2, got {cfg.s}",
        )

    model, n_prefix = _build_model(cfg)
    try:
        mc = McConfig(
            n_samples=cfg.n_samples,
            master_seed=cfg.master_seed,
            energies=cfg.energies,
            eps_values=cfg.eps_values,
            s=cfg.s,
            ell=cfg.ell,
            workers=cfg.workers,
            preset="telescope" if command == "telescope" else "",
        )
    except ValueError as exc:
        raise ConfigError("run", str(exc)) from None
    plan = _Plan(command, cfg, model, n_prefix, mc)

    if command == "dos-deriv":
        from .montecarlo import _check_score_preconditions

        n_blocks = model.projections.blocks_for_prefix(n_prefix)
        try:
            _check_score_preconditions(model, cfg.ell, n_blocks)
        except ValueError as exc:
            raise ConfigError("run.ell", str(exc)) from None
    elif command == "fracmom":
        n_blocks = model.projections.blocks_for_prefix(n_prefix)
        by_distance: dict[int, int] = {}
        for b in range(n_blocks):
            by_distance.setdefault(model.block_distance(0, b), b)
        for d in cfg.distances:
            if d not in by_distance:
                raise ConfigError(
                    "run.distances",
                    f"no block at distance {d} from block 0 inside the "
                    f"{n_prefix}-site volume",
                )
            plan.fracmom_targets.append((d, by_distance[d]))
    elif command == "telescope":
        if cfg.k_max + 1 > model.n_blocks:
            raise ConfigError(
                "run.k_max",
                f"k_max {cfg.k_max} needs {cfg.k_max + 1} blocks, "
                f"the box only has {model.n_blocks}",
            )
    return plan


# ---------------------------------------------------------------------------
# execution


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def _csv_bytes(rows: list[tuple[float, float, int, Estimate]]) -> bytes:
    lines = [CSV_HEADER]
    for x, eps, ell, est in rows:
        mean = complex(est.mean)
        if not all(
            math.isfinite(v)
            for v in (x, eps, mean.real, mean.imag, est.stderr)
        ):
            raise NumericalFailure(
                f"non-finite value in row E={x}, epsilon={eps}: "
                f"mean={mean}, stderr={est.stderr}"
            )
        lines.append(
            ",".join(
                (
                    _g17(x),
                    _g17(eps),
                    str(int(ell)),
                    _g17(mean.real),
                    _g17(mean.imag),
                    _g17(est.stderr),
                    str(est.n_samples),
                )
            )
        )
    return ("\n".join(lines) + "\n").encode()


def _execute(plan: _Plan) -> tuple[dict[str, bytes], dict]:
    """Run the command; return {filename: bytes} artifacts and diagnostics."""
    cfg = plan.cfg
    want_csv = "csv" in cfg.formats
    want_json = "json" in cfg.formats
    artifacts: dict[str, bytes] = {}
    diagnostics: dict = {}

    def add_curve(index: int, rows) -> None:
        if want_csv:
            artifacts[f"{plan.command}_curve{index}.csv"] = _csv_bytes(rows)

    if plan.command == "verify":
        reports = run_default_verification(seed=cfg.master_seed)
        n_failed = sum(not r.passed for r in reports)
        diagnostics["checks"] = {r.name: bool(r.passed) for r in reports}
        diagnostics["n_failed"] = n_failed
        if want_json:
            payload = [json.loads(r.to_json()) for r in reports]
            artifacts["verify_report.json"] = (
                json.dumps(payload, indent=2, sort_keys=True) + "\n"
            ).encode()
        if n_failed:
            names = [r.name for r in reports if not r.passed]
            exc = NumericalFailure(
                f"{n_failed} verification check(s) failed: {', '.join(names)}"
            )
            exc.artifacts = artifacts
            exc.diagnostics = diagnostics
            raise exc
        return artifacts, diagnostics

    model, n_prefix, mc = plan.model, plan.n_prefix_sites, plan.mc
    assert model is not None and mc is not None

    if plan.command == "dos":
        for j, eps in enumerate(cfg.eps_values):
            ests = smoothed_dos_curve(model, n_prefix, cfg.energies, eps, mc)
            add_curve(j, [(e, eps, 0, est) for e, est in zip(cfg.energies, ests)])
    elif plan.command == "dos-deriv":
        for j, eps in enumerate(cfg.eps_values):
            ests = dos_derivative_curve(
                model, n_prefix, cfg.energies, eps, cfg.ell, mc, method="score"
            )
            add_curve(
                j, [(e, eps, cfg.ell, est) for e, est in zip(cfg.energies, ests)]
            )
    elif plan.command == "ids":
        ests = ids_curve(model, n_prefix, cfg.energies, mc)
        add_curve(0, [(e, 0.0, 0, est) for e, est in zip(cfg.energies, ests)])
    elif plan.command == "fracmom":
        dists = [d for d, _ in plan.fracmom_targets]
        blocks = [b for _, b in plan.fracmom_targets]
        index = 0
        for energy in cfg.energies:
            for eps in cfg.eps_values:
                ests = fractional_moment_profile(
                    model, n_prefix, complex(energy, eps), 0, blocks, cfg.s, mc
                )
                # abscissa is the block distance, not a spectral energy
                add_curve(
                    index, [(float(d), eps, 0, est) for d, est in zip(dists, ests)]
                )
                index += 1
    elif plan.command == "telescope":
        energy, eps = cfg.energies[0], cfg.eps_values[0]
        report = telescope_series_diagnostic(
            model, range(cfg.k_min, cfg.k_max + 1), cfg.ell, energy, eps, mc
        )
        add_curve(
            0,
            [
                (float(k), eps, cfg.ell, est)
                for k, est in zip(report.k_values, report.terms)
            ],
        )
        base = complex(report.base.mean)
        direct = complex(report.direct.mean)
        diagnostics["telescope"] = {
            "energy": float(energy),
            "eps": float(eps),
            "ell": int(cfg.ell),
            "base_mean": [base.real, base.imag],
            "base_stderr": float(report.base.stderr),
            "direct_mean": [direct.real, direct.imag],
            "direct_stderr": float(report.direct.stderr),
            "partial_sums": [[float(z.real), float(z.imag)] for z in report.partial_sums],
            "fit_rate": None if report.fit is None else float(report.fit.rate),
            "fit_r_squared": None
            if report.fit is None
            else float(report.fit.r_squared),
            "summability_supported": bool(report.summability_supported),
        }
    return artifacts, diagnostics


# ---------------------------------------------------------------------------
# the two entry operations


def _resolve_out_dir(cfg: ExperimentConfig, override: str | None) -> str:
    if override:
        return override
    if cfg.directory:
        return cfg.directory
    return os.environ.get(ENV_OUT_DIR, ".")


def run(
    command: str | None,
    config_path: str | None,
    out_dir: str | None = None,
    seed: int | None = None,
    workers: int | None = None,
    out=None,
    err=None,
) -> int:
    """Execute one command; returns the process exit status.

    0 success, 2 config/validation problem, 3 numerical failure.  CLI
    overrides (out_dir, seed, workers) are folded into the config before
    anything runs, so the manifest records what was actually used.
    """
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    try:
        cfg = (
            ExperimentConfig.from_file(config_path)
            if config_path is not None
            else ExperimentConfig()
        )
        overrides: dict = {}
        if seed is not None:
            overrides["master_seed"] = seed
        if workers is not None:
            overrides["workers"] = workers
        if out_dir is not None:
            overrides["directory"] = out_dir
        if overrides:
            cfg = replace(cfg, **overrides)
        command = command or cfg.command
        if command != cfg.command:
            cfg = replace(cfg, command=command)
        plan = _prepare(command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG

    directory = _resolve_out_dir(cfg, None)
    try:
        os.makedirs(directory, exist_ok=True)
        probe = os.path.join(directory, ".doslab-write-probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        print(f"config error: output.directory: not writable: {exc}", file=err)
        return EXIT_CONFIG

    started = time.perf_counter()
    try:
        artifacts, diagnostics = _execute(plan)
        failure = None
    except NumericalFailure as exc:
        # verify builds its report before raising; keep those artifacts
        artifacts = getattr(exc, "artifacts", {})
        diagnostics = getattr(exc, "diagnostics", {})
        failure = exc
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERICAL
    wall = time.perf_counter() - started

    checksums = {
        name: hashlib.sha256(data).hexdigest() for name, data in artifacts.items()
    }
    manifest = RunManifest(
        command=command,
        config=cfg,
        config_sha256=cfg.sha256(),
        code_version=__version__,
        wall_time_s=wall,
        outputs=checksums,
        diagnostics=diagnostics,
    )
    for name, data in artifacts.items():
        target = os.path.join(directory, name)
        with open(target, "wb") as fh:
            fh.write(data)
        print(f"wrote {target}", file=out)
    manifest_path = os.path.join(directory, f"{command}.manifest.json")
    with open(manifest_path, "wb") as fh:
        fh.write(manifest.to_json_bytes())
    print(f"wrote {manifest_path}", file=out)

    if failure is not None:
        print(f"numerical failure: {failure}", file=err)
        return EXIT_NUMERICAL
    return EXIT_OK


def _first_differing_row(old: bytes, new: bytes) -> str:
    old_rows = old.split(b"\n")
    new_rows = new.split(b"\n")
    for i, (a, b) in enumerate(zip(old_rows, new_rows)):
        if a != b:
            return (
                f"first difference at row {i + 1}: "
                f"had {a[:80]!r}, got {b[:80]!r}"
            )
    return (
        f"first difference at row {min(len(old_rows), len(new_rows)) + 1}: "
        f"row counts {len(old_rows)} vs {len(new_rows)}"
    )


def reproduce(manifest_path: str, out=None, err=None) -> int:
    """Re-run a manifest and byte-compare the outputs; 0 iff identical."""
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    try:
        manifest = RunManifest.from_file(manifest_path)
        if manifest.code_version != __version__:
            raise ConfigError(
                "(manifest)",
                f"code version {manifest.code_version} does not match "
                f"installed {__version__}",
            )
        plan = _prepare(manifest.command, manifest.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG

    try:
        artifacts, _ = _execute(plan)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERICAL
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERICAL

    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    mismatches = 0
    for name in sorted(manifest.outputs):
        recorded = manifest.outputs[name]
        if name not in artifacts:
            print(f"{name}: not produced by the re-run", file=err)
            mismatches += 1
            continue
        fresh = artifacts[name]
        if hashlib.sha256(fresh).hexdigest() == recorded:
            print(f"{name}: identical", file=out)
            continue
        mismatches += 1
        original = os.path.join(base_dir, name)
        try:
            with open(original, "rb") as fh:
                old = fh.read()
            print(f"{name}: {_first_differing_row(old, fresh)}", file=err)
        except OSError:
            print(
                f"{name}: checksum mismatch (original file missing, no row diff)",
                file=err,
            )
    extra = sorted(set(artifacts) - set(manifest.outputs))
    for name in extra:
        print(f"{name}: produced by the re-run but absent from the manifest", file=err)
        mismatches += 1
    return EXIT_OK if mismatches == 0 else EXIT_MISMATCH


# ---------------------------------------------------------------------------
# argv plumbing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doslab",
        description="Spectral-statistics experiments: CSV curves out of config files.",
    )
    sub = parser.add_subparsers(dest="mode", required=True)

    runp = sub.add_parser("run", help="execute one command from a config")
    runp.add_argument(
        "command",
        nargs="?",
        default=None,
        choices=COMMANDS,
        help="command to run (default: the config's run.command)",
    )
    runp.add_argument("--config", default=None, help="experiment config file")
    runp.add_argument(
        "--out",
        default=None,
        help=f"output directory (default: config, then ${ENV_OUT_DIR}, then .)",
    )
    runp.add_argument("--seed", type=int, default=None, help="master seed override")
    runp.add_argument("--workers", type=int, default=None, help="worker count override")

    repro = sub.add_parser("reproduce", help="re-run a manifest and byte-compare")
    repro.add_argument("manifest", help="path to a run manifest")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.mode == "run":
        return run(
            args.command,
            args.config,
            out_dir=args.out,
            seed=args.seed,
            workers=args.workers,
        )
    return reproduce(args.manifest)


if __name__ == "__main__":
    sys.exit(main())
