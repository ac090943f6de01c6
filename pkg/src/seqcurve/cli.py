"""Command-line interface.

Every subcommand reads a flat TOML config (``schema = 1``), writes CSV,
Markdown or JSON outputs into ``--out`` and embeds a run manifest in each
file. Exit codes: 0 success, 1 numerical failure, 2 configuration or input
error (including an unknown subcommand).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .asymptotics import (
    CovProbe,
    NumericalError,
    StudyShape,
    kernel_density_plugin,
    npv_fpf_cov,
    npv_pct_cov,
    ppv_fpf_cov,
    ppv_fpf_process_cov,
    ppv_pct_cov,
    ppv_pct_process_cov,
    roc_estimator_cov,
    roc_process_cov,
)
from .curves import (
    BinormalModel,
    npv_fpf,
    npv_fpf_empirical,
    npv_pct,
    npv_pct_true,
    ppv_fpf,
    ppv_fpf_empirical,
    ppv_pct,
    ppv_pct_true,
    roc_empirical,
    roc_inverse_empirical,
    roc_inverse_true,
    roc_true,
)
from .design import (
    ConfigError,
    GSDesignSpec,
    fixed_sample_size,
    max_sample_size,
    simulate_oc,
    with_looks,
)
from .empirical import DomainError, SampleFormatError, SequentialView, ValidityWindow, read_marker_csv
from .limits import GridSpec, sample_kiefer, sample_limit_ppv_pct, sample_limit_roc, kiefer_grid_cov
from .montecarlo import SimScenario, run_ppv_validation, run_table1
from .rng import THREADS_ENV

SUBCOMMANDS = ("curve", "covariance", "simulate-limits", "validate-table1", "design", "oc-sim")
DEFAULT_SEED = 1

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


# --------------------------------------------------------------------------
# config handling


class Config:
    """Flat key-value config with type checks and unknown-key detection."""

    def __init__(self, data: dict, path: Path | None, raw: bytes):
        self.data = dict(data)
        self.path = path
        self.digest = hashlib.sha256(raw).hexdigest() if path else "none"
        schema = self.data.pop("schema", 1)
        if schema != 1:
            raise ConfigError(f"unsupported config schema {schema!r} (expected 1)")
        self.used = set()

    @classmethod
    def load(cls, path: str | None) -> "Config":
        if path is None:
            return cls({}, None, b"")
        p = Path(path)
        try:
            raw = p.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = tomli.loads(raw.decode("utf-8"))
        except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for key, value in data.items():
            if isinstance(value, dict):
                raise ConfigError(f"{path}: config must be flat; table [{key}] not allowed")
        return cls(data, p, raw)

    def get(self, key, default=None, kind=None):
        self.used.add(key)
        value = self.data.get(key, default)
        if value is None or kind is None:
            return value
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise ConfigError(f"config key {key!r} must be {kind.__name__}, got {value!r}")
        return value

    def floats(self, key, default=None) -> list[float] | None:
        value = self.get(key, default)
        if value is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return [float(value)]
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"config key {key!r} must be a number or a list of numbers")
        return [float(v) for v in value]

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def check_unused(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(extra)}")


class Run:
    """Output sink that stamps every file with the run manifest."""

    def __init__(self, subcommand: str, cfg: Config, seed: int | None, out: Path):
        self.subcommand = subcommand
        self.cfg = cfg
        self.seed = seed
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def manifest(self) -> dict:
        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        if epoch:
            stamp = datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
        else:
            # wall-clock time would break byte-identical reruns
            stamp = "unrecorded (set SOURCE_DATE_EPOCH)"
        return {
            "subcommand": self.subcommand,
            "config_sha256": self.cfg.digest,
            "seed": self.seed,
            "tool_version": __version__,
            "timestamp": stamp,
        }

    def _header(self, prefix: str) -> str:
        return "".join(f"{prefix}{k}: {v}\n" for k, v in self.manifest().items())

    def write_csv(self, name: str, rows: list[list], header: list[str]):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([_cell(v) for v in row] for row in rows)
        self.write_csv_text(name, buf.getvalue())

    def write_csv_text(self, name: str, body: str):
        self._write(name, self._header("# ") + body)

    def write_text(self, name: str, body: str, markdown: bool = False):
        if markdown:
            head = "<!--\n" + self._header("") + "-->\n\n"
        else:
            head = self._header("# ") + "\n"
        self._write(name, head + body)

    def write_json(self, name: str, payload: dict):
        doc = {"manifest": self.manifest(), **payload}
        self._write(name, json.dumps(doc, indent=2, sort_keys=False) + "\n")

    def _write(self, name: str, text: str):
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.written.append(path)


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _model(cfg: Config) -> BinormalModel:
    return BinormalModel(cfg.get("mu_D", 1.0, float), cfg.get("sigma_D", 1.0, float))


def _probes(cfg: Config) -> list[CovProbe]:
    idx = cfg.floats("index")
    if idx is None:
        raise ConfigError("config key 'index' (list of probe indices) is required")
    r_D = cfg.floats("r_D", 1.0)
    r_Dbar = cfg.floats("r_Dbar", 1.0)
    n = len(idx)
    r_D = r_D * n if len(r_D) == 1 else r_D
    r_Dbar = r_Dbar * n if len(r_Dbar) == 1 else r_Dbar
    if not len(r_D) == len(r_Dbar) == n:
        raise ConfigError("index, r_D and r_Dbar must have equal lengths")
    return [CovProbe(i, a, b) for i, a, b in zip(idx, r_D, r_Dbar)]


def _window(cfg: Config) -> ValidityWindow | None:
    w = cfg.floats("window")
    if w is None:
        return ValidityWindow()
    if len(w) != 4:
        raise ConfigError("window must be [a, b, c, d]")
    return ValidityWindow(*w)


def _label(p: CovProbe) -> str:
    return f"{p.index:g}@({p.r_D:g};{p.r_Dbar:g})"


def _pick(kind: str, choices: tuple[str, ...]) -> str:
    if kind not in choices:
        raise ConfigError(f"kind must be one of {', '.join(choices)}; got {kind!r}")
    return kind


# --------------------------------------------------------------------------
# subcommands


def cmd_curve(cfg: Config, run: Run, args) -> str:
    kind = _pick(
        cfg.get("kind", "roc", str),
        ("roc", "roc_inverse", "ppv_fpf", "npv_fpf", "ppv_pct", "npv_pct"),
    )
    grid = cfg.floats("grid")
    if not grid:
        raise ConfigError("config key 'grid' is required")
    rho = cfg.get("rho", 0.2, float)
    data = cfg.get("data", None, str)
    rows = []
    if data is not None:
        sample = read_marker_csv(cfg.resolve(data))
        view = SequentialView(cfg.get("r_D", 1.0, float), cfg.get("r_Dbar", 1.0, float))
        fn = {
            "roc": lambda x: roc_empirical(sample, view, x),
            "roc_inverse": lambda x: roc_inverse_empirical(sample, view, x),
            "ppv_fpf": lambda x: ppv_fpf_empirical(sample, view, x, rho),
            "npv_fpf": lambda x: npv_fpf_empirical(sample, view, x, rho),
            "ppv_pct": lambda x: ppv_pct(sample, view, rho, x),
            "npv_pct": lambda x: npv_pct(sample, view, rho, x),
        }[kind]
        source = "empirical"
    else:
        model = _model(cfg)
        fn = {
            "roc": lambda x: roc_true(model, x),
            "roc_inverse": lambda x: roc_inverse_true(model, x),
            "ppv_fpf": lambda x: ppv_fpf(roc_true(model, x), x, rho),
            "npv_fpf": lambda x: npv_fpf(roc_true(model, x), x, rho),
            "ppv_pct": lambda x: ppv_pct_true(model, rho, x),
            "npv_pct": lambda x: npv_pct_true(model, rho, x),
        }[kind]
        source = "closed_form"
    cfg.check_unused()
    for x in grid:
        rows.append([x, fn(x), source])
    run.write_csv("curve.csv", rows, ["index", kind, "source"])
    return f"{len(rows)} points of {kind} ({source})"


_PROCESS_COV = {
    "roc": lambda m, rho, pr, lam, w: roc_process_cov(m, pr, lam, w),
    "ppv_fpf": lambda m, rho, pr, lam, w: ppv_fpf_process_cov(m, rho, pr, lam, w),
    "ppv_pct": lambda m, rho, pr, lam, w: ppv_pct_process_cov(m, rho, pr, lam, w),
}
_ESTIMATOR_COV = {
    "roc": lambda m, rho, pr, sh, w: roc_estimator_cov(m, pr, sh, w),
    "ppv_fpf": lambda m, rho, pr, sh, w: ppv_fpf_cov(m, rho, pr, sh, w),
    "npv_fpf": lambda m, rho, pr, sh, w: npv_fpf_cov(m, rho, pr, sh, w),
    "ppv_pct": lambda m, rho, pr, sh, w: ppv_pct_cov(m, rho, pr, sh, w),
    "npv_pct": lambda m, rho, pr, sh, w: npv_pct_cov(m, rho, pr, sh, w),
}


def _bandwidth(value):
    if value == "silverman":
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, list) and len(value) == 2:
        return float(value[0]), float(value[1])
    raise ConfigError('bandwidth must be "silverman", a number or [case, control]')


def cmd_covariance(cfg: Config, run: Run, args) -> str:
    scale = _pick(cfg.get("scale", "process", str), ("process", "estimator"))
    table = _PROCESS_COV if scale == "process" else _ESTIMATOR_COV
    kind = _pick(cfg.get("kind", "roc", str), tuple(table))
    rho = cfg.get("rho", 0.2, float)
    probes = _probes(cfg)
    window = _window(cfg)
    data = cfg.get("data", None, str)
    bandwidth = _bandwidth(cfg.get("bandwidth", "silverman"))
    if data is not None:
        sample = read_marker_csv(cfg.resolve(data))
        model = kernel_density_plugin(sample, SequentialView(), bandwidth)
        source = "closed_form_kernel_plugin"
    else:
        model = _model(cfg)
        source = "closed_form"
    if scale == "process":
        lam = cfg.get("lam", 1.0, float)
        cfg.check_unused()
        m = table[kind](model, rho, probes, lam, window)
    else:
        shape = StudyShape(cfg.get("n_D", 200, int), cfg.get("n_Dbar", 200, int))
        cfg.check_unused()
        m = table[kind](model, rho, probes, shape, window)
    labels = [_label(p) for p in probes]
    rows = [[labels[i], labels[j], m[i, j], source] for i in range(len(probes)) for j in range(len(probes))]
    run.write_csv("covariance.csv", rows, ["row", "column", "covariance", "source"])
    if data is not None:
        meta = model.metadata
        run.write_json("plugin.json", {"kernel_plugin": meta})
    return f"{len(probes)}x{len(probes)} {scale} covariance for {kind}"


def cmd_simulate_limits(cfg: Config, run: Run, args) -> str:
    process = _pick(cfg.get("process", "roc", str), ("kiefer", "roc", "ppv_pct", "npv_pct"))
    draws = cfg.get("draws", 20_000, int)
    construction = _pick(cfg.get("construction", "cholesky", str), ("cholesky", "sheet"))
    output = _pick(cfg.get("output", "summary", str), ("summary", "draws"))
    threads = args.threads
    if process == "kiefer":
        grid = GridSpec(tuple(cfg.floats("index_grid") or ()), tuple(cfg.floats("time_grid") or ()))
        cfg.check_unused()
        sample = sample_kiefer(grid, run.seed, draws, construction, threads)
        values = sample.values.reshape(draws, -1)
        labels = [f"K({t:g};{r:g})" for t in grid.index_grid for r in grid.time_grid]
        theory = kiefer_grid_cov(grid)
    else:
        model = _model(cfg)
        rho = cfg.get("rho", 0.2, float)
        lam = cfg.get("lam", 1.0, float)
        probes = _probes(cfg)
        cfg.check_unused()
        if process == "roc":
            sample = sample_limit_roc(model, probes, lam, run.seed, draws, construction, threads)
            theory = roc_process_cov(model, probes, lam, None)
        else:
            kind = process.split("_")[0]
            sample = sample_limit_ppv_pct(
                model, rho, probes, lam, run.seed, draws, construction, kind, threads
            )
            theory = ppv_pct_process_cov(model, rho, probes, lam, None)
            if kind == "npv":
                s = np.array([(1 - p.index) / p.index for p in probes])
                theory = np.outer(s, s) * theory
        values = sample.values
        labels = [_label(p) for p in probes]
    meta = sample.metadata
    if output == "draws":
        rows = [[i, *row] for i, row in enumerate(values)]
        run.write_csv("limits_draws.csv", rows, ["draw", *labels])
        return f"{draws} draws of the {process} process ({construction}, jitter={meta['jitter']})"
    n = values.shape[0]
    centred = values - values.mean(axis=0)
    emp = centred.T @ centred / max(n - 1, 1)
    se = (centred[:, :, None] * centred[:, None, :]).std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else 0 * emp
    rows = []
    for i, a in enumerate(labels):
        rows.append(["mean", a, "", values[:, i].mean(), values[:, i].std(ddof=1) / np.sqrt(n), "monte_carlo"])
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            rows.append(["covariance", a, b, emp[i, j], se[i, j], "monte_carlo"])
            rows.append(["covariance", a, b, theory[i, j], "", "closed_form"])
    rows.append(["jitter", "", "", meta["jitter"], "", construction])
    run.write_csv("limits_summary.csv", rows, ["section", "row", "column", "value", "se", "source"])
    return f"summary of {n} draws of the {process} process ({construction})"


def cmd_validate_table1(cfg: Config, run: Run, args) -> str:
    kind = _pick(cfg.get("kind", "roc", str), ("roc", "ppv_fpf", "ppv_pct"))
    reps = args.reps if args.reps is not None else cfg.get("reps", 10_000, int)
    probes = tuple(_probes(cfg)) if "index" in cfg.data else None
    kwargs = dict(
        model=_model(cfg),
        rho=cfg.get("rho", 0.2, float),
        n_D=cfg.get("n_D", 200, int),
        n_Dbar=cfg.get("n_Dbar", 200, int),
        replications=reps,
        seed=run.seed,
    )
    if probes is not None:
        kwargs["probes"] = probes
    cfg.check_unused()
    scenario = SimScenario(**kwargs)
    if kind == "roc":
        report = run_table1(scenario, args.threads)
    else:
        report = run_ppv_validation(scenario, kind.split("_")[1], args.threads)
    run.write_text("table1.md", report.to_markdown(), markdown=True)
    run.write_csv_text("table1.csv", report.to_csv())
    return f"{kind} validation with {reps} replications"


_SPEC_KEYS = {
    "rho": float, "u_npv": float, "u_ppv": float, "npv0": float, "ppv0": float,
    "npv1": float, "ppv1": float, "alpha": float, "power": float, "gamma_e": float,
    "controls_per_case": float, "binding": bool, "null_se_model": str,
}


def _design_spec(cfg: Config) -> tuple[GSDesignSpec, list[int]]:
    kwargs = {}
    for key, kind in _SPEC_KEYS.items():
        if key in cfg.data:
            kwargs[key] = cfg.get(key, kind=kind)
    if "gamma_f" in cfg.data:
        g = cfg.get("gamma_f")
        if g == "none":
            kwargs["gamma_f"] = None
        elif isinstance(g, (int, float)) and not isinstance(g, bool):
            kwargs["gamma_f"] = float(g)
        else:
            raise ConfigError("gamma_f must be a number or \"none\"")
    looks = cfg.get("looks", [1, 2, 3, 4])
    looks = [looks] if isinstance(looks, int) else looks
    if not isinstance(looks, list) or not all(isinstance(j, int) and j >= 1 for j in looks):
        raise ConfigError("looks must be a positive integer or a list of them")
    return GSDesignSpec(**kwargs), looks


def cmd_design(cfg: Config, run: Run, args) -> str:
    spec, looks = _design_spec(cfg)
    cfg.check_unused()
    fixed = fixed_sample_size(spec)
    designs = []
    table = [
        f"fixed-sample design: n_D = {fixed.n_D}, n_Dbar = {fixed.n_Dbar}, "
        f"joint power = {fixed.power:.4f}, corr(Z_npv, Z_ppv) = {fixed.correlation:.4f}",
        "",
        f"{'J':>3} {'inflation':>10} {'max n_D':>8}  efficacy / futility boundaries",
    ]
    for J in looks:
        m = max_sample_size(with_looks(spec, J), fixed)
        b = m.boundaries
        designs.append({"looks": J, "inflation_factor": m.inflation, "max_n_D": m.n_max,
                        "boundaries": b.as_dict()})
        eff = " ".join(f"{v:.3f}" for v in b.efficacy)
        fut = " ".join(f"{v:.3f}" for v in b.futility)
        table.append(f"{J:>3} {m.inflation:>10.4f} {m.n_max:>8}  [{eff}] / [{fut}]")
    payload = {
        "spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__},
        "source": "closed_form",
        "fixed": {
            "n_D": fixed.n_D,
            "n_Dbar": fixed.n_Dbar,
            "power": fixed.power,
            "correlation": fixed.correlation,
            "mean_z": list(fixed.mean_z),
            "sd_z": list(fixed.sd_z),
        },
        "n_D": fixed.n_D,
        "group_sequential": designs,
    }
    run.write_json("design.json", payload)
    run.write_text("design.txt", "\n".join(table) + "\n")
    return "\n".join(table)


def cmd_oc_sim(cfg: Config, run: Run, args) -> str:
    spec, looks = _design_spec(cfg)
    reps = args.reps if args.reps is not None else cfg.get("reps", 10_000, int)
    cells = cfg.get("cells", [[0.90, 0.80], [0.95, 0.80], [0.90, 0.90], [0.95, 0.90]])
    if not isinstance(cells, list) or not all(
        isinstance(c, list) and len(c) == 2 and all(isinstance(v, (int, float)) for v in c)
        for c in cells
    ):
        raise ConfigError("cells must be a list of [npv, ppv] pairs")
    cfg.check_unused()
    fixed = fixed_sample_size(spec)
    rows = []
    for J in looks:
        sp = with_looks(spec, J)
        n_max = max_sample_size(sp, fixed).n_max
        for c, (npv, ppv) in enumerate(cells):
            oc = simulate_oc(sp, (float(npv), float(ppv)), reps, run.seed + 1000 * J + c,
                             n_max=n_max, threads=args.threads)
            rows.append([J, npv, ppv, n_max, oc.p_reject, oc.se_reject, oc.expected_n_D,
                         " ".join(f"{p:.4f}" for p in oc.stop_probs), reps, "monte_carlo"])
    run.write_csv(
        "oc.csv",
        rows,
        ["looks", "npv", "ppv", "max_n_D", "p_reject", "se_p_reject", "expected_n_D",
         "stop_probs", "reps", "source"],
    )
    return f"{len(rows)} operating-characteristic cells with {reps} replications each"


COMMANDS = {
    "curve": cmd_curve,
    "covariance": cmd_covariance,
    "simulate-limits": cmd_simulate_limits,
    "validate-table1": cmd_validate_table1,
    "design": cmd_design,
    "oc-sim": cmd_oc_sim,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqcurve", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"seqcurve {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat TOML config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, help=f"worker threads (fallback ${THREADS_ENV})")
        if name in ("validate-table1", "oc-sim"):
            p.add_argument("--reps", type=int, help="overrides the config replication count")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.threads is None and os.environ.get(THREADS_ENV):
            env = os.environ[THREADS_ENV]
            if not env.isdigit() or int(env) < 1:
                raise ConfigError(f"${THREADS_ENV} must be a positive integer")
        if getattr(args, "reps", None) is not None and args.reps < 1:
            raise ConfigError("--reps must be >= 1")
        cfg = Config.load(args.config)
        cfg_seed = cfg.get("seed", DEFAULT_SEED, int)
        seed = args.seed if args.seed is not None else cfg_seed
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        run = Run(args.command, cfg, seed, Path(args.out))
        summary = COMMANDS[args.command](cfg, run, args)
    except SampleFormatError as exc:
        print(f"seqcurve: input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DomainError) as exc:
        print(f"seqcurve: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"seqcurve: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(summary)
    for path in run.written:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
