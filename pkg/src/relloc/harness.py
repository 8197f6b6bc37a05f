"""Configuration, batch execution and result files for every scenario.

A run is described by an :class:`ExperimentConfig`. Values come from three
layers: built-in defaults, command-line flags, then a TOML file, with later
layers winning. Every value remembers where it came from so that a bad
value can be reported against its file line or flag.

Outputs go to one directory per run: CSV data files (floats in scientific
notation with 17 significant digits) and ``manifest.json``. Each file is
written to a temporary name and moved into place, so readers never see a
partial file.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import bec, fock, optical, scattering
from .errors import InfiniteRatio, InvalidParameter, NumericalFailure, RellocError
from .phase_dist import visibility_of_grid

__all__ = [
    "SCENARIOS",
    "SCHEMAS",
    "ConfigError",
    "ExperimentConfig",
    "RunManifest",
    "build_config",
    "format_value",
    "load_config",
    "record_hash",
    "run",
    "software_version",
    "write_atomic",
]

SCENARIOS = ("optical", "bec", "scattering", "oracle")


class ConfigError(RellocError, ValueError):
    """Invalid configuration; ``where`` is ``file:line``, a flag or ``defaults``."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where
        self.message = message


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Field:
    kind: type
    default: object = None
    choices: tuple = ()
    check: object = None
    doc: str = ""

    def coerce(self, value):
        if self.kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if (self.kind is int and isinstance(value, bool)) or not isinstance(value, self.kind):
            raise TypeError(f"expected {self.kind.__name__}, got {type(value).__name__}")
        if self.choices and value not in self.choices:
            raise ValueError(f"must be one of {', '.join(map(str, self.choices))}")
        if self.check is not None:
            ok, what = self.check
            if not ok(value):
                raise ValueError(f"must be {what}")
        return value


_POS = (lambda v: v > 0, "positive")
_NONNEG = (lambda v: v >= 0, "nonnegative")
_UNIT = (lambda v: 0 <= v < 1, "in [0, 1)")
_EFF = (lambda v: 0 < v <= 1, "in (0, 1]")
_ODD = (lambda v: v >= 3 and v % 2 == 1, "an odd integer >= 3")

TOP = {
    "scenario": Field(str, None, SCENARIOS, doc="scenario name"),
    "seed": Field(int, 0, check=_NONNEG, doc="master seed"),
    "n_runs": Field(int, 1000, check=_POS, doc="independent Monte Carlo runs"),
}
OUTPUT = {"dir": Field(str, "relloc-out", doc="output directory")}

SCHEMAS = {
    "optical": {
        "task": Field(str, "trajectories", ("trajectories", "table", "curve")),
        "state": Field(str, "poissonian", optical.KINDS),
        "n": Field(float, 100.0, check=_POS, doc="photon number or mean of the first mode"),
        "m": Field(float, None, check=_POS, doc="mean of the second mode (asym_poissonian)"),
        "eps": Field(float, 0.1, check=_UNIT, doc="leakage fraction"),
        "eta": Field(float, 1.0, check=_EFF, doc="detector efficiency"),
        "random_tau": Field(bool, False, doc="random phase offset before each count"),
        "d_max": Field(int, 20, check=_NONNEG, doc="largest total count in the table"),
        "sweep_start": Field(float, 1.0, check=_NONNEG),
        "sweep_stop": Field(float, 100.0, check=_NONNEG),
        "sweep_num": Field(int, 100, check=_POS),
        "restrict": Field(bool, False, doc="keep only single-valued records in the curve"),
        "n_grid": Field(int, 1024, check=_POS),
    },
    "bec": {
        "kind": Field(str, "poissonian", ("poissonian", "fock")),
        "n": Field(float, 1000.0, check=_POS),
        "m": Field(float, None, check=_POS),
        "D": Field(int, 50, check=_POS, doc="detections per run"),
        "k": Field(float, 1.0, check=_POS),
        "per_run_csv": Field(bool, True),
    },
    "scattering": {
        "model": Field(str, "free", ("free", "rubber")),
        "light": Field(str, "mono", ("mono", "thermal")),
        "k": Field(float, 5.0, check=_POS),
        "nbar": Field(float, 5.0, check=_POS),
        "d": Field(float, 0.2, check=_NONNEG),
        "lower": Field(float, 0.0),
        "upper": Field(float, 4.0),
        "eps_view": Field(float, scattering.DEFAULT_EPS_VIEW, check=_NONNEG),
        "n_grid": Field(int, scattering.DEFAULT_N_SEP, check=_ODD),
        "smoothing": Field(float, None, check=_NONNEG),
        "F": Field(int, 0, check=_NONNEG),
        "S": Field(int, 0, check=_NONNEG),
        "l": Field(int, 0, check=_NONNEG),
        "r": Field(int, 0, check=_NONNEG),
        "sampled": Field(bool, False, doc="sample records instead of fixing F and S"),
        "n_packets": Field(int, 5, check=_NONNEG),
    },
    "oracle": {
        "task": Field(str, "plr", ("plr", "hom", "addition", "noon")),
        "N": Field(int, 20, check=_POS),
        "eps": Field(float, 0.2, check=_UNIT),
        "xi": Field(float, 0.0),
        "n_cut": Field(int, None, check=_POS),
        "W": Field(int, 1, (1, 2)),
        "D": Field(int, 2, check=_NONNEG),
        "max_total": Field(int, 12, check=_POS),
    },
}


# ---------------------------------------------------------------------------
# loading and validation


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated run description.

    Attributes
    ----------
    scenario : str
    seed, n_runs : int
    output_dir : Path
    params : dict
        Complete scenario block with defaults filled in.
    origins : dict
        ``key -> location`` for values that came from a file or flag.
    """

    scenario: str
    seed: int
    n_runs: int
    output_dir: Path
    params: dict
    origins: dict = field(default_factory=dict, compare=False)

    def echo(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "n_runs": self.n_runs,
            "output": {"dir": str(self.output_dir)},
            self.scenario: {k: v for k, v in self.params.items() if v is not None},
        }

    def where(self, key: str) -> str:
        return self.origins.get(key, "defaults")


_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\"-]+)\s*\]")


def _key_line(text: str, section: str | None, key: str | None) -> int:
    """1-based line of ``key`` in ``[section]`` (or of the header itself)."""
    current = None
    key_re = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=") if key else None
    for i, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            current = m.group(1).strip('"')
            if key is None and current == section:
                return i
            continue
        if key_re is not None and current == section and key_re.match(line):
            return i
    return 1


def load_config(path, flags: dict | None = None, scenario: str | None = None) -> ExperimentConfig:
    """Read a TOML file and merge it over ``flags``.

    Raises
    ------
    ConfigError
        With a ``file:line`` location for syntax errors, unknown keys and
        bad values.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = m.group(1) if m else "1"
        raise ConfigError(f"{path}:{line}", f"invalid TOML: {exc}") from exc
    return build_config(flags or {}, data, text=text, source=str(path), scenario=scenario)


def build_config(
    flags: dict,
    data: dict | None = None,
    text: str = "",
    source: str = "<config>",
    scenario: str | None = None,
) -> ExperimentConfig:
    """Validate and merge defaults, ``flags`` and file ``data``.

    ``flags`` maps ``seed``, ``n_runs``, ``dir`` and scenario keys to values
    given on the command line; each may carry its flag name via
    ``flags['_names']``.
    """
    data = dict(data or {})
    names = flags.get("_names", {})

    def at(section, key):
        return f"{source}:{_key_line(text, section, key)}"

    file_scenario = data.get("scenario")
    if file_scenario is not None and scenario is not None and file_scenario != scenario:
        raise ConfigError(
            at(None, "scenario"), f"file declares scenario {file_scenario!r}, command is {scenario!r}"
        )
    scen = file_scenario if file_scenario is not None else scenario
    if scen is None:
        raise ConfigError(source, "missing required key 'scenario'")

    for key in data:
        if key not in TOP and key != "output" and key != scen:
            if isinstance(data[key], dict):
                raise ConfigError(at(key, None), f"unknown table [{key}] for scenario {scen!r}")
            raise ConfigError(at(None, key), f"unknown key {key!r}")

    def take(schema, section, block, flag_values):
        out, origins = {}, {}
        if not isinstance(block, dict):
            raise ConfigError(at(None, section), f"{section!r} must be a table")
        for key in block:
            if key not in schema:
                raise ConfigError(at(section, key), f"unknown key {key!r} in [{section}]")
        for key, spec in schema.items():
            if key in block:
                where = at(section, key)
                value = block[key]
            elif flag_values.get(key) is not None:
                where = names.get(key, f"--{key}")
                value = flag_values[key]
            else:
                out[key] = spec.default
                continue
            try:
                out[key] = spec.coerce(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(where, f"{key}: {exc}") from None
            origins[key] = where
        return out, origins

    top_block = {k: v for k, v in data.items() if k in TOP}
    top, o1 = take(TOP, None, top_block, {"scenario": scen, **flags})
    out_block = data.get("output", {})
    out, o2 = take(OUTPUT, "output", out_block, flags)
    params, o3 = take(SCHEMAS[scen], scen, data.get(scen, {}), flags.get("params", {}))
    origins = {**o1, **o2, **o3}
    cfg = ExperimentConfig(scen, top["seed"], top["n_runs"], Path(out["dir"]), params, origins)
    _cross_checks(cfg)
    return cfg


def _cross_checks(cfg: ExperimentConfig) -> None:
    p = cfg.params
    if cfg.scenario == "optical":
        if p["task"] == "curve" and p["state"] == "fock":
            raise ConfigError(cfg.where("state"), "visibility curves need a non-Fock state")
        if p["state"] == "asym_poissonian" and p["m"] is None:
            raise ConfigError(cfg.where("state"), "asym_poissonian needs the second intensity 'm'")
        if p["task"] == "curve" and p["sweep_stop"] < p["sweep_start"]:
            raise ConfigError(cfg.where("sweep_stop"), "sweep_stop must not be below sweep_start")
    elif cfg.scenario == "bec":
        if p["kind"] == "fock":
            for key in ("n", "m"):
                v = p[key]
                if v is not None and v != int(v):
                    raise ConfigError(cfg.where(key), f"{key}: Fock numbers must be integers")
    elif cfg.scenario == "scattering":
        if not p["upper"] > p["lower"]:
            raise ConfigError(cfg.where("upper"), "upper must exceed lower")
        if p["sampled"] and p["model"] != "free":
            raise ConfigError(cfg.where("sampled"), "sampled runs use the free-particle model")


# ---------------------------------------------------------------------------
# output helpers


def format_value(v) -> str:
    """CSV text for one value: integers verbatim, floats with 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


_UMASK = os.umask(0)
os.umask(_UMASK)


def write_atomic(path, text: str) -> None:
    """Write ``text`` to a temporary file beside ``path`` and move it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(format_value(v) for v in row) for row in rows)
    write_atomic(path, "\n".join(lines) + "\n")


def record_hash(record) -> str:
    """SHA-256 of a canonical byte encoding of one run's record.

    Accepts an array of positions, an ``OutcomeRecord`` (optionally paired
    with its count of undetected photons) or a ``ScatterRecord``.
    """
    h = hashlib.sha256()
    if isinstance(record, tuple) and len(record) == 2 and isinstance(record[0], optical.OutcomeRecord):
        rec, lost = record
        h.update(b"optical\0")
        h.update(f"{int(lost)}\0".encode())
        record = rec
    if isinstance(record, optical.OutcomeRecord):
        h.update(f"{record.l},{record.r}\0".encode())
        for s, t in record.events:
            h.update(f"{s}{float(t).hex()};".encode())
    elif isinstance(record, scattering.ScatterRecord):
        h.update(f"scatter\0{record.model}\0{''.join(record.events)}".encode())
    else:
        arr = np.ascontiguousarray(record, dtype="<f8")
        h.update(b"positions\0")
        h.update(arr.tobytes())
    return h.hexdigest()


def software_version() -> str:
    """``git describe`` of the source tree, else the installed package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunManifest:
    """Everything needed to audit or repeat a run."""

    config: dict
    seed: int
    version: str
    wall_clock_seconds: float
    outputs: list
    record_hashes: list
    summary: dict

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "wall_clock_seconds": self.wall_clock_seconds,
            "outputs": self.outputs,
            "record_hashes": self.record_hashes,
            "summary": self.summary,
        }

    def write(self, path) -> None:
        write_atomic(path, json.dumps(self.to_json(), indent=2) + "\n")


def _optical_state(p) -> optical.InitialState:
    kind = p["state"]
    if kind == "fock":
        if p["n"] != int(p["n"]):
            raise InvalidParameter("Fock photon number must be an integer")
        return optical.InitialState.fock(int(p["n"]))
    if kind == "asym_poissonian":
        return optical.InitialState.asym_poissonian(p["n"], p["m"])
    return getattr(optical.InitialState, kind)(p["n"])


def _run_optical(cfg, out):
    p = cfg.params
    state = _optical_state(p)
    if p["task"] == "table":
        rows = []
        for D in range(p["d_max"] + 1):
            for l in range(D + 1):
                r = D - l
                if state.kind == "fock":
                    prob = float(optical.plr_fock_approx(state.n, p["eps"], l, r))
                    vis = optical.visibility_closed_form("fock", l, r)
                elif state.kind == "thermal":
                    prob = float(optical.plr_thermal(state.n, p["eps"], l, r))
                    vis = optical.visibility_closed_form("thermal", l, r)
                else:
                    m = state.m if state.kind == "asym_poissonian" else state.n
                    prob = optical.plr_asymmetric(state.n, m, p["eps"], l, r)
                    vis = optical.visibility_asymmetric(state.n, m, p["eps"], l, r)
                rows.append((l, r, prob, vis))
        _write_csv(out / "table.csv", ("l", "r", "probability", "visibility"), rows)
        probs = np.array([row[2] for row in rows])
        vis = np.array([row[3] for row in rows])
        summary = {"covered_probability": float(probs.sum()), "mean_visibility": float(probs @ vis / probs.sum())}
        return ["table.csv"], [], summary
    if p["task"] == "curve":
        x = np.linspace(p["sweep_start"], p["sweep_stop"], p["sweep_num"])
        R = state.asymmetry if state.kind == "asym_poissonian" else 1.0
        v = optical.expected_visibility_curve(state.kind, x, p["restrict"], R=R)
        _write_csv(out / "curve.csv", ("mean_counts", "expected_visibility"), zip(x, v))
        return ["curve.csv"], [], {"final_visibility": float(v[-1])}
    recs = optical.run_trajectories(
        state, p["eps"], cfg.n_runs, cfg.seed, random_tau=p["random_tau"], eta=p["eta"]
    )
    rows, vis = [], []
    for i, (rec, lost) in enumerate(recs):
        v = visibility_of_grid(optical.localizing_density(rec, state, p["n_grid"]))
        vis.append(v)
        rows.append((i, rec.l, rec.r, lost, v))
    _write_csv(out / "records.csv", ("run", "l", "r", "lost", "visibility"), rows)
    summary = {
        "mean_l": float(np.mean([r[1] for r in rows])),
        "mean_r": float(np.mean([r[2] for r in rows])),
        "mean_lost": float(np.mean([r[3] for r in rows])),
        "mean_visibility": float(np.mean(vis)),
    }
    return ["records.csv"], [record_hash(r) for r in recs], summary


def _run_bec(cfg, out):
    p = cfg.params
    if p["kind"] == "fock":
        M = None if p["m"] is None else int(p["m"])
        spec = bec.CondensateSpec.fock(int(p["n"]), M)
    else:
        spec = bec.CondensateSpec.poissonian(p["n"], p["m"])
    batch = bec.run_interference_batch(spec, p["D"], cfg.n_runs, seed=cfg.seed, k=p["k"])
    files = []
    if p["per_run_csv"]:
        rows = (
            (i, j + 1, batch.positions[i, j], batch.V[i, j], batch.phi[i, j])
            for i in range(batch.n_runs)
            for j in range(p["D"])
        )
        _write_csv(out / "runs.csv", ("run", "detection", "x", "V", "phi"), rows)
        files.append("runs.csv")
    D = np.arange(1, p["D"] + 1)
    mv, sv, rate = batch.mean_visibility(), batch.std_visibility(), batch.localization_rate()
    _write_csv(out / "aggregate.csv", ("D", "mean_V", "std_V", "rate"), zip(D, mv, sv, rate))
    files.append("aggregate.csv")
    summary = {"mean_V_final": float(mv[-1]), "rate_final": float(rate[-1])}
    if p["D"] >= 10:
        summary["rate_min_D10"] = float(rate[9:].min())
        summary["rate_max_D10"] = float(rate[9:].max())
    return files, [record_hash(row) for row in batch.positions], summary


def _run_scattering(cfg, out):
    p = cfg.params
    k = p["k"]
    light = scattering.LightSpec.mono(k) if p["light"] == "mono" else scattering.LightSpec.thermal(k, p["nbar"])
    view = scattering.ViewCone(p["eps_view"])
    if p["model"] == "rubber":
        rec = scattering.ScatterRecord.rubber(p["l"], p["r"])
        g = scattering.rubber_cavity_density(rec, k, p["lower"], p["upper"], p["n_grid"])
        _write_csv(out / "density.csv", ("separation", "density"), zip(g.coordinates(), g.values))
        return ["density.csv"], [], {"peak": float(g.coordinates()[np.argmax(g.values)])}
    ens = scattering.ParticleEnsemble(p["lower"], p["upper"], p["d"])
    if p["sampled"]:
        recs = scattering.sample_scatter_batch(
            light, ens, view, p["n_packets"], cfg.n_runs, cfg.seed, p["n_grid"], p["smoothing"]
        )
        rows = [(i, "".join(r.events) or "-", r.F, r.S) for i, r in enumerate(recs)]
        _write_csv(out / "records.csv", ("run", "events", "F", "S"), rows)
        counts = np.bincount([r.F for r in recs], minlength=p["n_packets"] + 1)
        summary = {"forward_count_histogram": counts.tolist()}
        return ["records.csv"], [record_hash(r) for r in recs], summary
    rec = scattering.ScatterRecord.free(p["F"], p["S"])
    g = scattering.free_particle_density(rec, light, ens, view, p["n_grid"], p["smoothing"])
    _write_csv(out / "density.csv", ("separation", "density"), zip(g.coordinates(), g.values))
    p_f, p_d = scattering.event_probabilities(light, g, view)
    summary = {"next_forward_probability": p_f, "next_deflect_probability": p_d}
    return ["density.csv"], [], summary


def _run_oracle(cfg, out):
    p = cfg.params
    N = p["N"]
    if p["task"] == "plr":
        exact = fock.plr_exact_table(N, p["eps"], p["xi"], p["n_cut"])
        rows, worst = [], 0.0
        for D in range(1, 2 * N + 1):
            for l in range(D + 1):
                r = D - l
                pe = float(exact[l, r])
                pa = float(optical.plr_fock_approx(N, p["eps"], l, r))
                rel = abs(pa - pe) / pe if pe > 0 else math.nan
                if pe > 1e-4:
                    worst = max(worst, rel)
                rows.append((l, r, 2.0 * math.acos(math.sqrt(r / D)), pe, pa, rel))
        _write_csv(out / "plr.csv", ("l", "r", "delta0", "p_exact", "p_approx", "rel_error"), rows)
        return ["plr.csv"], [], {"max_rel_error_above_1e-4": worst}
    if p["task"] == "hom":
        rows = []
        for tot in range(2, p["max_total"] + 1):
            for n in range(tot + 1):
                m = tot - n
                try:
                    ratio = fock.hom_same_detector_ratio(n, m)
                except InfiniteRatio:
                    ratio = math.inf
                den = n * n + m * m - n - m
                formula = (den + 4 * n * m) / den if den else math.inf
                rows.append((n, m, ratio, formula))
        _write_csv(out / "hom.csv", ("N", "M", "ratio", "formula"), rows)
        return ["hom.csv"], [], {"pairs": len(rows)}
    if p["task"] == "addition":
        rows = []
        for n in range(p["W"], N + 1):
            basic = fock.fock_addition_basic(n).p0
            loc = fock.fock_addition_localized(n, p["W"])
            rows.append((n, basic, loc, loc / basic, math.comb(2 * n, n) / 4.0**n))
        _write_csv(out / "addition.csv", ("N", "p0_basic", "p0_localized", "ratio", "closed_form"), rows)
        return ["addition.csv"], [], {"final_ratio": rows[-1][3]}
    rows = [(n, p["D"], fock.noon_fidelity(n, p["D"])) for n in range(p["D"] // 2 + 1, N + 1)]
    _write_csv(out / "noon.csv", ("N", "D", "fidelity"), rows)
    return ["noon.csv"], [], {"final_fidelity": rows[-1][2]}


_RUNNERS = {
    "optical": _run_optical,
    "bec": _run_bec,
    "scattering": _run_scattering,
    "oracle": _run_oracle,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Execute ``cfg``, write its data files and ``manifest.json``.

    Domain errors raised while setting up the scenario are reported as
    :class:`ConfigError` against the scenario block; numerical failures
    propagate unchanged.
    """
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        files, hashes, summary = _RUNNERS[cfg.scenario](cfg, out)
    except RellocError as exc:
        if isinstance(exc, (ConfigError, NumericalFailure)):
            raise
        keys = [k for k in cfg.origins if k in cfg.params]
        where = cfg.where(keys[0]) if keys else "defaults"
        raise ConfigError(where, f"[{cfg.scenario}] {exc}") from exc
    manifest = RunManifest(
        config=cfg.echo(),
        seed=cfg.seed,
        version=software_version(),
        wall_clock_seconds=time.perf_counter() - t0,
        outputs=files,
        record_hashes=hashes,
        summary=summary,
    )
    manifest.write(out / "manifest.json")
    return manifest
