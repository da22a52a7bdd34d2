"""Command-line driver: ``dpg --command converge --problem poisson --p 1``.

Configuration is a flat ``key = value`` file; command-line flags override
file values.  Every failure prints a single ``ERROR <code>: <reason>`` line
on stderr and exits with that code.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import fortin, study
from .mesh import Mesh, MeshError, read_mesh, unit_square_mesh
from .spaces import N_DIM, PROBLEMS, ConfigError
from .system import NotSPDError, SolverError, export_matrix

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_INVALID = 2
EXIT_UNKNOWN_KEY = 3
EXIT_MESH = 4
EXIT_SYNTAX = 5

COMMANDS = ("solve", "converge", "cond", "fortin")
SOLVERS = ("chol", "cg")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    command: str = "converge"
    problem: str = "poisson"
    p: int = 1
    r: int | None = None
    split: bool = False
    n: int = 2
    mesh: str | None = None
    levels: int = 4
    solver: str = "chol"
    tol: float = 1e-12
    out: str = "out"
    seed: int = 0
    export_matrix: bool = False

    @property
    def mode(self) -> str:
        return "split" if self.split else "uniform"

    @property
    def test_degree(self) -> int:
        return self.r if self.r is not None else self.p + N_DIM


_KEYS = {f.name: f for f in fields(RunConfig)}
_INTS = {"p", "r", "n", "levels", "seed"}
_BOOLS = {"split", "export_matrix"}


def _convert(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INTS:
            return int(raw)
        if key == "tol":
            return float(raw)
        if key in _BOOLS:
            v = raw.lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return v in ("true", "1", "yes")
    except ValueError:
        raise CliError(EXIT_SYNTAX, f"bad value for {key}: {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_SYNTAX, f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_SYNTAX, f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise CliError(EXIT_UNKNOWN_KEY, f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.command not in COMMANDS:
        raise CliError(EXIT_INVALID, f"unknown command {cfg.command!r}")
    if cfg.problem not in PROBLEMS:
        raise CliError(EXIT_INVALID, f"unknown problem {cfg.problem!r}")
    if cfg.solver not in SOLVERS:
        raise CliError(EXIT_INVALID, f"unknown solver {cfg.solver!r}")
    if cfg.p < 0:
        raise CliError(EXIT_INVALID, "p must be non-negative")
    if not cfg.split and cfg.test_degree < cfg.p + N_DIM:
        raise CliError(EXIT_INVALID,
                       f"r={cfg.test_degree} < p+N={cfg.p + N_DIM} is not accepted")
    if cfg.n < 1 or cfg.levels < 1:
        raise CliError(EXIT_INVALID, "n and levels must be positive")
    if not cfg.tol > 0:
        raise CliError(EXIT_INVALID, "tol must be positive")
    if cfg.mesh is not None and not Path(cfg.mesh).is_file():
        raise CliError(EXIT_MESH, f"mesh file not found: {cfg.mesh}")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpg", description=__doc__.splitlines()[0])
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--command", choices=COMMANDS)
    ap.add_argument("--problem", choices=PROBLEMS)
    ap.add_argument("--p", type=int)
    ap.add_argument("--r", type=int)
    ap.add_argument("--split", action="store_true", default=None,
                    help="use the split test degrees (p+2, p+N)")
    ap.add_argument("--n", type=int, help="initial unit-square mesh divisions")
    ap.add_argument("--mesh", metavar="PATH", help="mesh file (overrides --n)")
    ap.add_argument("--levels", type=int)
    ap.add_argument("--solver", choices=SOLVERS)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--export-matrix", dest="export_matrix", action="store_true",
                    default=None, help="write the condensed matrix to matrix.txt")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def parse_config(argv=None) -> RunConfig:
    """Merge defaults, the optional config file and flags, then validate."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            raise CliError(EXIT_SYNTAX, "invalid command line") from None
        raise
    values = read_config_file(args.config) if args.config else {}
    for key in _KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return validate(replace(RunConfig(), **values))


# {{{ commands

def _initial_mesh(cfg: RunConfig) -> Mesh:
    if cfg.mesh is None:
        return unit_square_mesh(cfg.n)
    try:
        return read_mesh(cfg.mesh)
    except (OSError, MeshError) as exc:
        raise CliError(EXIT_MESH, f"cannot read mesh {cfg.mesh}: {exc}") from None


def _study_config(cfg: RunConfig, **kw) -> study.StudyConfig:
    return study.StudyConfig(kind=cfg.problem, p=cfg.p, r=cfg.r, mode=cfg.mode,
                             levels=cfg.levels, solver=cfg.solver, tol=cfg.tol,
                             mesh=_initial_mesh(cfg), seed=cfg.seed, **kw)


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


def _run_study(cfg: RunConfig, out: Path, levels: int) -> None:
    scfg = replace(_study_config(cfg, with_quasiopt=True), levels=levels)
    last = {}
    table = study.convergence_study(scfg, on_level=lambda d: last.update(d=d))
    d = last["d"]
    _write(out, "rates.csv", table.to_csv())
    for attr in ("err_sigma", "err_u", "err_trace", "err_flux", "eta"):
        _write(out, f"plot_{attr}.dat", table.plot_data(attr))
    c_pi = fortin.measure_cpi(cfg.problem, cfg.p)
    rep = study.constants_report(d, table if len(table.rows) > 1 else None,
                                 c_pi=c_pi, seed=cfg.seed)
    rep.entries["quasiopt_ratio_last"] = table.rows[-1].quasiopt
    if cfg.problem == "elasticity":
        rep.entries["alpha"] = table.rows[-1].alpha
    _write(out, "constants.txt", rep.to_text())
    if cfg.export_matrix:
        export_matrix(d.system, out / "matrix.txt")


def run_cond(cfg: RunConfig, out: Path) -> None:
    if cfg.levels < 2:
        raise CliError(EXIT_NUMERIC, "cond needs at least two levels to fit a slope")
    tab = study.condition_study(_study_config(cfg))
    lines = ["level,h,kappa,lambda_min,lambda_max"]
    for i, row in enumerate(zip(tab.h, tab.kappa, tab.lam_min, tab.lam_max)):
        lines.append(f"{i}," + ",".join(f"{v:.12e}" for v in row))
    _write(out, "cond.csv", "\n".join(lines) + "\n")
    _write(out, "constants.txt", f"problem: {cfg.problem}\np: {cfg.p}\n"
           f"slope_kappa: {tab.slope:.12e}\n")


def run_fortin(cfg: RunConfig, out: Path) -> None:
    rep = fortin.verify_fortin(cfg.problem, cfg.p, seed=cfg.seed)
    _write(out, "fortin_report.txt", rep.to_text())
    _write(out, "fortin_residuals.csv", rep.to_csv())
    if not rep.passed:
        raise CliError(EXIT_NUMERIC, "Fortin verification failed: "
                       + ", ".join(rep.failures()))


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if cfg.command == "solve":
            _run_study(cfg, out, levels=1)
        elif cfg.command == "converge":
            _run_study(cfg, out, levels=cfg.levels)
        elif cfg.command == "cond":
            run_cond(cfg, out)
        else:
            run_fortin(cfg, out)
    except (NotSPDError, SolverError, np.linalg.LinAlgError, fortin.FortinError) as exc:
        raise CliError(EXIT_NUMERIC, f"numeric failure: {exc}") from None
    except (ConfigError, ValueError) as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    return EXIT_OK

# }}}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(parse_config(argv))
    except CliError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
