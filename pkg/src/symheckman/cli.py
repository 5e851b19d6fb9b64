"""
Command-line front end.

    symheckman fit|simulate|diagnose --config run.json [--seed N]
        [--generator normal|t] [--nu X] [--scenario KEY] [--n N] [--nrep N]
        [--out DIR] [--allow-nonconverged]

Exit status: 0 on success, 1 on an error, 2 on bad usage, 3 when a fit did
not converge (unless ``--allow-nonconverged``).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

import symheckman
from symheckman import diagnose, estimate, simulate, symdist
from symheckman.exceptions import (
    ConfigError,
    DataError,
    DataWarning,
    LockError,
    SymHeckmanError,
)
from symheckman.selmodel import ModelSpec, SelectionDataset

TOOL = "symheckman"
DEFAULT_SEED = 20240101
DEFAULT_OUT = "out"
LOCK_NAME = ".symheckman.lock"
P_FLOOR = 1e-300
T_START_NU = 8.0

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2, 3

BLOCK_KEYS = {
    "beta": "outcome_covariates",
    "gamma": "selection_covariates",
    "lambda": "dispersion_covariates",
    "kappa": "correlation_covariates",
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_schema():
    text = resources.files("symheckman").joinpath("runconfig.schema.json").read_text()
    return json.loads(text)


def validate_config(mapping):
    try:
        jsonschema.validate(mapping, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError("invalid configuration at %s: %s" % (where, exc.message)) from None


def load_config(path):
    """Read and validate a JSON run configuration."""
    try:
        with open(path, encoding="utf-8") as fh:
            mapping = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("%s is not valid JSON: %s" % (path, exc)) from None
    validate_config(mapping)
    return mapping


@dataclass(frozen=True)
class Block:
    columns: tuple = ()
    intercept: bool = True

    @classmethod
    def from_value(cls, value):
        if value is None:
            return cls()
        if isinstance(value, (list, tuple)):
            return cls(tuple(value))
        return cls(tuple(value.get("columns", ())), bool(value.get("intercept", True)))


@dataclass(frozen=True)
class ModelColumns:
    """Column roles: outcome, selection indicator and the four covariate blocks."""

    outcome: str
    selection: str
    blocks: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, mapping):
        if mapping is None:
            raise ConfigError("configuration needs a 'model' block naming the data columns")
        blocks = {blk: Block.from_value(mapping.get(key)) for blk, key in BLOCK_KEYS.items()}
        for blk, b in blocks.items():
            if not b.columns and not b.intercept:
                raise ConfigError("%s has neither columns nor an intercept" % BLOCK_KEYS[blk])
        return cls(mapping["outcome"], mapping["selection"], blocks)

    def required_columns(self):
        cols = [self.outcome, self.selection]
        for b in self.blocks.values():
            cols.extend(b.columns)
        return list(dict.fromkeys(cols))


@dataclass
class RunConfig:
    """A resolved run: the JSON configuration with command-line overrides applied."""

    command: str
    raw: dict
    base_dir: Path = Path(".")

    @property
    def seed(self):
        return int(self.raw.get("seed", DEFAULT_SEED))

    @property
    def output_dir(self):
        return Path(self.raw.get("output_dir", DEFAULT_OUT))

    @property
    def data_path(self):
        if "data_path" not in self.raw:
            raise ConfigError("configuration needs 'data_path' for the %s command" % self.command)
        p = Path(self.raw["data_path"])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def model(self):
        return ModelColumns.from_mapping(self.raw.get("model"))

    @property
    def options(self):
        return estimate.FitOptions.from_mapping(self.raw.get("options"))

    def hashable(self):
        d = {k: v for k, v in self.raw.items() if k != "output_dir"}
        d["command"] = self.command
        return d

    @property
    def config_hash(self):
        canon = json.dumps(self.hashable(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def header(self):
        return "%s %s seed=%d config_sha256=%s" % (TOOL, symheckman.__version__, self.seed,
                                                   self.config_hash)

    def provenance(self):
        return {"tool": TOOL, "version": symheckman.__version__, "seed": self.seed,
                "config_hash": self.config_hash, "config": self.hashable()}


def resolve(command, mapping, args=None, base_dir="."):
    """Apply command-line overrides to a configuration mapping."""
    raw = copy.deepcopy(mapping or {})
    if raw.get("command") not in (None, command):
        raise ConfigError("configuration is for %r but %r was requested"
                          % (raw["command"], command))
    raw.pop("command", None)
    if args is not None:
        for key in ("seed", "n", "nrep", "scenario"):
            val = getattr(args, key, None)
            if val is not None:
                raw[key] = val
        if getattr(args, "out", None):
            raw["output_dir"] = args.out
        gen, nu = getattr(args, "generator", None), getattr(args, "nu", None)
        if nu is not None and gen is None:
            gen = "t"
        if gen == "normal" and nu is not None:
            raise ConfigError("--nu only applies to the t generator")
        if gen is not None:
            if command == "simulate":
                raw["generator"] = gen
                if nu is not None:
                    raw.setdefault("simulation", {})["nu"] = nu
            else:
                raw["generator"] = {"kind": "t_fixed", "nu": nu} if nu is not None else gen
                if command == "diagnose":
                    raw.pop("models", None)
                    raw["models"] = [raw.pop("generator")]
    validate_config(raw)
    return RunConfig(command, raw, Path(base_dir))


def model_spec_for(generator):
    """ModelSpec for a ``generator`` config entry (``"normal"``, ``"t"`` or t_fixed)."""
    if generator in (None, "normal"):
        return ModelSpec(symdist.gaussian())
    if generator == "t":
        return ModelSpec(symdist.student_t(T_START_NU), nu_free=True)
    return ModelSpec(symdist.student_t(float(generator["nu"])), nu_free=False)


def generator_label(generator):
    if generator in (None, "normal", "t"):
        return generator or "normal"
    return "t(nu=%g)" % generator["nu"]


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def _read_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = [r for r in csv.reader(lines) if r]
    if not rows:
        raise DataError("%s is empty" % path)
    header = [h.strip() for h in rows[0]]
    if len(rows) == 1:
        raise DataError("%s has a header but no data rows" % path)
    return header, rows[1:]


def _number(cell, row, column):
    try:
        val = float(cell)
    except ValueError:
        raise DataError("non-numeric value %r in column %r at data row %d"
                        % (cell, column, row)) from None
    if not math.isfinite(val):
        raise DataError("non-finite value %r in column %r at data row %d" % (cell, column, row))
    return val


def ingest_csv(path, model):
    """Build a :class:`SelectionDataset` from a CSV file.

    ``model`` is a :class:`ModelColumns` (or a mapping in the configuration's
    ``model`` layout).  Lines starting with ``#`` are skipped; empty cells are
    missing values.  An empty outcome is expected on censored rows.  Row
    numbers in messages count data rows from 1.
    """
    if not isinstance(model, ModelColumns):
        model = ModelColumns.from_mapping(model)
    header, rows = _read_rows(path)
    missing = [c for c in model.required_columns() if c not in header]
    if missing:
        raise DataError("column(s) not found in %s: %s" % (path, ", ".join(missing)))
    pos = {c: header.index(c) for c in model.required_columns()}
    n = len(rows)
    y = np.full(n, np.nan)
    u = np.zeros(n, dtype=np.int8)
    cov_names = list(dict.fromkeys(c for b in model.blocks.values() for c in b.columns))
    cov = np.empty((n, len(cov_names)))
    bad_rows, ignored = [], []
    for i, row in enumerate(rows):
        rnum = i + 1
        if len(row) != len(header):
            raise DataError("data row %d has %d fields, header has %d" % (rnum, len(row), len(header)))
        sel = row[pos[model.selection]].strip()
        if sel == "":
            bad_rows.append(rnum)
            continue
        sval = _number(sel, rnum, model.selection)
        if sval not in (0.0, 1.0):
            raise DataError("selection column %r must be 0 or 1 (data row %d has %r)"
                            % (model.selection, rnum, sel))
        u[i] = int(sval)
        out = row[pos[model.outcome]].strip()
        if u[i] == 1:
            if out == "":
                raise DataError("outcome %r is missing on selected data row %d"
                                % (model.outcome, rnum))
            y[i] = _number(out, rnum, model.outcome)
        elif out != "":
            _number(out, rnum, model.outcome)
            ignored.append(rnum)
        for j, c in enumerate(cov_names):
            cell = row[pos[c]].strip()
            if cell == "":
                bad_rows.append(rnum)
                break
            cov[i, j] = _number(cell, rnum, c)
    if bad_rows:
        shown = ", ".join(str(r) for r in bad_rows[:20])
        more = " (and %d more)" % (len(bad_rows) - 20) if len(bad_rows) > 20 else ""
        raise DataError("missing selection or covariate values at data row(s) %s%s"
                        % (shown, more))
    if ignored:
        warnings.warn("outcome present on %d censored row(s) and ignored (first: data row %d)"
                      % (len(ignored), ignored[0]), DataWarning, stacklevel=2)
    designs, names = {}, {}
    for blk, b in model.blocks.items():
        parts = [np.ones((n, 1))] if b.intercept else []
        parts += [cov[:, [cov_names.index(c)]] for c in b.columns]
        designs[blk] = np.hstack(parts)
        names[blk] = (["(Intercept)"] if b.intercept else []) + list(b.columns)
    return SelectionDataset(y, u, designs["beta"], designs["gamma"], designs["lambda"],
                            designs["kappa"], names=names)


def _file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def render_p(p):
    if p is None or not math.isfinite(p):
        return None
    return "<1e-300" if p < P_FLOOR else p


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def fit_report(fit, cfg, data, data_path):
    """The machine-readable fit report as a dictionary."""
    table = []
    for row in fit.table():
        row = dict(row)
        row["p_value"] = render_p(row["p_value"])
        table.append(row)
    body = fit.to_dict()
    body["estimates"] = table
    body["loglik"] = _jsonable(body["loglik"])
    body["convergence"]["gradient_norm"] = _jsonable(body["convergence"]["gradient_norm"])
    report = cfg.provenance()
    report["command"] = cfg.command
    report["data"] = {"path": str(cfg.raw.get("data_path")), "sha256": _file_sha256(data_path),
                      "n": data.n, "n_observed": data.n_observed, "censoring": data.censoring}
    report.update(body)
    return report


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_dataset_csv(data, path, header_comment=None):
    """Scenario datasets: outcome ``y`` (blank when censored), ``u``, ``x1..x3``."""
    xs = data.W[:, 1:]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write("# %s\n" % header_comment)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y", "u"] + ["x%d" % (j + 1) for j in range(xs.shape[1])])
        for i in range(data.n):
            yv = repr(float(data.y[i])) if data.u[i] == 1 else ""
            writer.writerow([yv, int(data.u[i])] + [repr(float(v)) for v in xs[i]])


SCENARIO_MODEL = {
    "outcome": "y",
    "selection": "u",
    "outcome_covariates": ["x1", "x2"],
    "selection_covariates": ["x1", "x2", "x3"],
    "dispersion_covariates": ["x1"],
    "correlation_covariates": ["x1"],
}


class OutputLock:
    """Exclusive lock file inside the output directory."""

    def __init__(self, directory):
        self.path = Path(directory) / LOCK_NAME
        self.fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError("output directory %s is locked by another run (remove %s if stale)"
                            % (self.path.parent, self.path)) from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        self.path.unlink(missing_ok=True)
        return False


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@dataclass
class Outcome:
    status: int = EXIT_OK
    artifacts: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _fit_and_residuals(spec, data, cfg, allow_nonconverged):
    fit = estimate.fit(spec, data, cfg.options)
    res = None
    if fit.converged or allow_nonconverged:
        res = diagnose.mt_residuals(fit, spec, data)
    return fit, res


def cmd_fit(cfg, allow_nonconverged=False):
    out, result = cfg.output_dir, Outcome()
    data = ingest_csv(cfg.data_path, cfg.model)
    spec = model_spec_for(cfg.raw.get("generator", "normal"))
    fit, res = _fit_and_residuals(spec, data, cfg, allow_nonconverged)
    report = fit_report(fit, cfg, data, cfg.data_path)
    write_json(report, out / "fit_report.json")
    result.artifacts.append("fit_report.json")
    if res is not None:
        diagnose.write_residuals_csv(res, out / "residuals.csv", cfg.header())
        result.artifacts.append("residuals.csv")
    if not fit.converged:
        msg = "fit did not converge (%s)" % fit.message
        result.warnings.append(msg)
        if not allow_nonconverged:
            result.status = EXIT_NONCONVERGED
    return result


def scenario_config(cfg):
    mapping = dict(cfg.raw.get("simulation", {}))
    mapping["scenario"] = str(cfg.raw.get("scenario", mapping.get("scenario", "1")))
    for key in ("n", "nrep", "seed"):
        if key in cfg.raw:
            mapping[key] = cfg.raw[key]
    mapping.setdefault("seed", DEFAULT_SEED)
    gen = cfg.raw.get("generator")
    if isinstance(gen, dict):
        mapping["generator"], mapping["nu"] = "t", gen["nu"]
    elif gen is not None:
        mapping["generator"] = gen
    try:
        return simulate.config_from_mapping(mapping)
    except TypeError as exc:
        raise ConfigError("bad simulation block: %s" % exc) from None


def cmd_simulate(cfg, allow_nonconverged=False):
    out, result = cfg.output_dir, Outcome()
    sc = scenario_config(cfg)
    data = simulate.generate_dataset(sc, simulate.replicate_rng(sc.seed, 0))
    write_dataset_csv(data, out / "dataset.csv", cfg.header())
    result.artifacts.append("dataset.csv")
    fit_cfg = {"data_path": "dataset.csv", "model": SCENARIO_MODEL,
               "generator": sc.generator, "seed": sc.seed}
    write_json(fit_cfg, out / "fit_config.json")
    result.artifacts.append("fit_config.json")
    if sc.nrep > 1:
        summary = simulate.run_study(sc)
        extra = cfg.provenance()
        extra["scenario"] = sc.to_dict()
        simulate.write_summary(summary, out / "mc_summary.csv", out / "mc_summary.json",
                               extra=extra, header_comment=cfg.header())
        result.artifacts += ["mc_summary.csv", "mc_summary.json"]
    return result


def cmd_diagnose(cfg, allow_nonconverged=False):
    out, result = cfg.output_dir, Outcome()
    data = ingest_csv(cfg.data_path, cfg.model)
    gens = cfg.raw.get("models") or ["normal", "t"]
    fits, specs, labels = [], [], []
    for gen in gens:
        spec = model_spec_for(gen)
        fit = estimate.fit(spec, data, cfg.options)
        if not fit.converged:
            result.warnings.append("%s fit did not converge (%s)"
                                   % (generator_label(gen), fit.message))
        fits.append(fit)
        specs.append(spec)
        labels.append(generator_label(gen))
    rows = diagnose.compare_models(fits, labels)
    diagnose.write_comparison_csv(rows, out / "comparison.csv", cfg.header())
    with open(out / "comparison.txt", "w") as fh:
        fh.write("# %s\n%s\n" % (cfg.header(), diagnose.format_comparison(rows)))
    best = labels.index(rows[0]["model"])
    res = diagnose.mt_residuals(fits[best], specs[best], data)
    qq = diagnose.qq_data(res)
    qq.to_csv(out / "qq.csv", "%s model=%s" % (cfg.header(), labels[best]))
    result.artifacts += ["comparison.csv", "comparison.txt", "qq.csv"]
    print(diagnose.format_comparison(rows))
    return result


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "diagnose": cmd_diagnose}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog=TOOL, description="Symmetric generalized "
                                     "Heckman models: fit, simulate and diagnose.")
    parser.add_argument("--version", action="version",
                        version="%s %s" % (TOOL, symheckman.__version__))
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("fit", "fit a model to a CSV file"),
                            ("simulate", "simulate a scenario, optionally a Monte Carlo study"),
                            ("diagnose", "compare models and write QQ data")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--generator", choices=("normal", "t"))
        p.add_argument("--nu", type=float, help="fix (fit) or set (simulate) the t degrees of freedom")
        p.add_argument("--scenario", choices=sorted(simulate.SCENARIOS))
        p.add_argument("--n", type=int)
        p.add_argument("--nrep", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--allow-nonconverged", action="store_true",
                       help="exit 0 even when a fit did not converge")
    return parser


def _error_payload(exc, command):
    payload = {"error": type(exc).__name__, "message": str(exc), "command": command,
               "tool": TOOL, "version": symheckman.__version__}
    for attr in ("row", "diagnostics"):
        val = getattr(exc, attr, None)
        if val is not None:
            payload[attr] = val
    return payload


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = None
    try:
        mapping, base = {}, Path(".")
        if args.config:
            mapping = load_config(args.config)
            base = Path(args.config).parent
        elif args.command != "simulate":
            raise ConfigError("the %s command needs --config" % args.command)
        cfg = resolve(args.command, mapping, args, base)
        out_dir = cfg.output_dir
        print(json.dumps({"command": cfg.command, "seed": cfg.seed,
                          "config_hash": cfg.config_hash, "config": cfg.hashable()},
                         sort_keys=True))
        with OutputLock(out_dir):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", DataWarning)
                warnings.simplefilter("always", RuntimeWarning)
                result = COMMANDS[args.command](cfg, args.allow_nonconverged)
        for w in caught:
            if issubclass(w.category, (DataWarning, RuntimeWarning)):
                print("warning: %s" % w.message, file=sys.stderr)
        for msg in result.warnings:
            print("warning: %s" % msg, file=sys.stderr)
        (out_dir / "error.json").unlink(missing_ok=True)
        for name in result.artifacts:
            print("wrote %s" % (out_dir / name))
        return result.status
    except (SymHeckmanError, OSError) as exc:
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        payload = _error_payload(exc, args.command)
        if out_dir is not None and not isinstance(exc, LockError):
            try:
                out_dir.mkdir(parents=True, exist_ok=True)
                write_json(payload, out_dir / "error.json")
            except OSError:
                print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        else:
            print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
