"""Command-line harness for single runs and refinement studies.

Examples
--------
::

    xfemoc study --case example1 --method cut --levels 39,49,59,69,79 --out ex1.csv
    xfemoc case --case example2 --method classic --level 39
    xfemoc mesh export --kind crack --n 9 --out crack9.mesh
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .analysis import NORM_KEYS, ConvergenceReport, builtin_benchmarks, error_norms
from .assembly import assemble_system
from .control import ConvergenceError, ssn_solve
from .enrichment import CutoffSpec, EnrichmentConfig
from .linalg import SingularMatrixError
from .mesh import (MeshError, build_structured_crack_mesh, build_three_quarter_disk_mesh,
                   export_mesh, import_mesh)

log = logging.getLogger("xfemoc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

METHOD_ALIASES = {"cut": "cut_xfem", "classic": "classic_xfem", "p1": "p1_plain",
                  "cut_xfem": "cut_xfem", "classic_xfem": "classic_xfem", "p1_plain": "p1_plain"}
CRACK_FACE_MODES = ("nitsche", "penalty", "free")

CSV_COLUMNS = ["level", "e_y_h1", "ord_y_h1", "e_y_l2", "ord_y_l2", "e_p_h1", "ord_p_h1",
               "e_p_l2", "ord_p_l2", "e_u_l2", "ord_u_l2", "dofs", "ssn_iters"]


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class StudyConfig:
    case: str = "example1"
    method: str = "cut_xfem"
    levels: tuple = (39, 49, 59, 69, 79)
    r_s: float = 0.5
    r0: float = 0.01
    r1: float = 0.99
    out: str = ""
    emit_plots: bool = False
    crack_faces: str = "nitsche"

    def validate(self):
        cases = builtin_benchmarks()
        if self.case not in cases:
            raise ConfigError(f"case: unknown case {self.case!r}; valid cases are "
                              f"{', '.join(sorted(cases))}")
        if self.method not in METHOD_ALIASES:
            raise ConfigError(f"method: unknown method {self.method!r}; valid methods are "
                              "cut, classic, p1")
        self.method = METHOD_ALIASES[self.method]
        if self.crack_faces not in CRACK_FACE_MODES:
            raise ConfigError(f"crack_faces: must be one of {', '.join(CRACK_FACE_MODES)}")
        lv = list(self.levels)
        if not lv:
            raise ConfigError("levels: at least one level is required")
        if any(not isinstance(v, int) or v < 1 for v in lv):
            raise ConfigError("levels: levels must be positive integers")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ConfigError("levels: levels must be strictly increasing")
        if cases[self.case].level_kind == "N":
            parity = 0 if self.method == "p1_plain" else 1
            bad = [v for v in lv if v % 2 != parity]
            if bad:
                need = "even N (fitted meshes)" if parity == 0 else "odd N (unfitted meshes)"
                raise ConfigError(f"levels: method {self.method} on {self.case} needs {need}; "
                                  f"got {bad}")
        if not self.r_s > 0:
            raise ConfigError("r_s: must be positive")
        if not 0 < self.r0 < self.r1:
            raise ConfigError("r0, r1: must satisfy 0 < r0 < r1")
        return self

    def enrichment(self):
        return EnrichmentConfig(method=self.method, r_s=self.r_s, cutoff=CutoffSpec(self.r0, self.r1))


def _parse_value(name, text):
    kind = {f.name: f.type for f in fields(StudyConfig)}[name]
    text = text.strip()
    try:
        if name == "levels":
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
        if name == "emit_plots":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def parse_config_text(text):
    """Parse ``key = value`` lines (``#`` comments allowed) into a dict."""
    known = {f.name for f in fields(StudyConfig)}
    out = {}
    for k, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {k}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {k}: unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def format_config(cfg):
    """Inverse of :func:`parse_config_text` for a full :class:`StudyConfig`."""
    lines = []
    for k, v in asdict(cfg).items():
        if k == "levels":
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def build_config(file_text=None, overrides=None):
    """Defaults, then the config file, then command-line overrides."""
    values = asdict(StudyConfig())
    if file_text:
        values.update(parse_config_text(file_text))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values["levels"] = tuple(values["levels"])
    return StudyConfig(**values).validate()


# ---------------------------------------------------------------------------
# runs


def build_mesh(case, method, level):
    bm = builtin_benchmarks()[case]
    if bm.level_kind == "N":
        return build_structured_crack_mesh(level, fitted=(method == "p1_plain"))
    return build_three_quarter_disk_mesh(1.0 / level)


def level_scale(case, level, mesh):
    """Mesh-size surrogate for orders: ``2/N`` on the square, ``1/ND`` on the disk."""
    if builtin_benchmarks()[case].level_kind == "N":
        return 2.0 / level
    return 1.0 / mesh.n_nodes


def run_case(cfg, level):
    """Solve one benchmark on one mesh; returns a plain dict report."""
    bm = builtin_benchmarks()[cfg.case]
    times = {}
    t = time.perf_counter()
    mesh = build_mesh(cfg.case, cfg.method, level)
    times["mesh"] = time.perf_counter() - t
    config = cfg.enrichment()
    problem = bm.problem(config, cfg.crack_faces)
    t = time.perf_counter()
    system = assemble_system(problem, mesh)
    times["assemble"] = time.perf_counter() - t
    t = time.perf_counter()
    sol = ssn_solve(system, problem)
    times["ssn"] = time.perf_counter() - t
    t = time.perf_counter()
    err = error_norms(mesh, system.dofmap, sol, bm.exact, bm.geom, config)
    times["errors"] = time.perf_counter() - t
    return {
        "case": cfg.case, "method": cfg.method, "level": level,
        "scale": level_scale(cfg.case, level, mesh),
        "nodes": mesh.n_nodes, "dofs": system.dofmap.size,
        "free_dofs": int(system.free.size),
        "ssn_iters": sol.iterations, "converged": sol.converged,
        "active_lower": int(np.count_nonzero(sol.labels < 0)),
        "active_upper": int(np.count_nonzero(sol.labels > 0)),
        "quadrature_points": int(sol.labels.size),
        "objective": sol.objective,
        "errors": err, "timings": times,
    }


def _fmt(v, spec):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, spec)


def report_rows(report):
    orders = {k: report.orders(k) for k in NORM_KEYS}
    rows = []
    for i, level in enumerate(report.levels):
        row = {"level": level, "dofs": report.dofs[i], "ssn_iters": report.ssn_iters[i]}
        for k in NORM_KEYS:
            row["e_" + k] = _fmt(report.errors[i][k], ".6e")
            row["ord_" + k] = _fmt(orders[k][i], ".4f")
        rows.append(row)
    return rows


def write_csv(report, path, aborted=None):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in report_rows(report):
            w.writerow(row)
        if aborted:
            fh.write(f"# ABORTED: {aborted}\n")


def run_study(cfg, progress=None):
    """Run every level in order; returns ``(report, case_reports)``.

    On a failing level the partial CSV (when ``cfg.out`` is set) is written
    with a trailing ``# ABORTED`` marker and the exception is re-raised.
    """
    report = ConvergenceReport(cfg.case, cfg.method)
    cases = []
    for level in cfg.levels:
        try:
            rep = run_case(cfg, level)
        except Exception as exc:
            if cfg.out:
                write_csv(report, cfg.out, aborted=f"level {level}: {exc}")
            raise
        report.add(level, rep["scale"], {k: rep["errors"]["rel_" + k] for k in NORM_KEYS},
                   rep["dofs"], rep["nodes"], rep["ssn_iters"], rep["timings"])
        cases.append(rep)
        if progress:
            progress(rep)
    if cfg.out:
        write_csv(report, cfg.out)
    return report, cases


def emit_plot_series(report, directory, prefix=None):
    """One two-column text file per error curve; returns the written paths.

    The first column is ``h`` on the crack square and the node count on the
    disk, so that log-log plots read directly.
    """
    if not len(report):
        log.warning("empty report: no plot series written")
        return []
    os.makedirs(directory, exist_ok=True)
    prefix = prefix or f"{report.case}_{report.method}"
    disk = builtin_benchmarks()[report.case].level_kind != "N"
    xs = report.nodes if disk else report.scale
    xname = "nodes" if disk else "h"
    paths = []
    for k in NORM_KEYS:
        path = os.path.join(directory, f"{prefix}_{k}.dat")
        with open(path, "w") as fh:
            fh.write(f"# {xname} relative_error_{k}\n")
            for x, e in zip(xs, report.column(k)):
                fh.write(f"{x:.10g} {e:.10e}\n")
        paths.append(path)
    return paths


def _summary(rep):
    e = rep["errors"]
    errs = " ".join(f"{k}={e['rel_' + k]:.4e}" for k in NORM_KEYS)
    tm = " ".join(f"{k}={v:.2f}s" for k, v in rep["timings"].items())
    return (f"level {rep['level']}: {errs} dofs={rep['dofs']} ssn={rep['ssn_iters']} "
            f"active={rep['active_lower']}/{rep['active_upper']} [{tm}]")


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_args(p, levels_flag):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--case")
    p.add_argument("--method", help="cut, classic or p1")
    if levels_flag == "levels":
        p.add_argument("--levels", help="comma-separated N (square) or 1/h (disk) values")
    else:
        p.add_argument("--level", type=int)
    p.add_argument("--rs", type=float, dest="r_s")
    p.add_argument("--r0", type=float)
    p.add_argument("--r1", type=float)
    p.add_argument("--crack-faces", dest="crack_faces", choices=CRACK_FACE_MODES)
    p.add_argument("--out")


def make_parser():
    parser = argparse.ArgumentParser(prog="xfemoc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    st = sub.add_parser("study", help="refinement study over several levels")
    _add_run_args(st, "levels")
    st.add_argument("--plots", action="store_true", dest="emit_plots", default=None,
                    help="write gnuplot-ready series next to the CSV")
    st.add_argument("--print-config", action="store_true")
    cs = sub.add_parser("case", help="single level")
    _add_run_args(cs, "level")
    me = sub.add_parser("mesh", help="export or inspect mesh files")
    mesh_sub = me.add_subparsers(dest="mesh_command", required=True)
    ex = mesh_sub.add_parser("export")
    ex.add_argument("--kind", choices=("crack", "crack-fitted", "disk"), required=True)
    ex.add_argument("--n", type=int, help="N for crack meshes, 1/h for the disk")
    ex.add_argument("--out", required=True)
    im = mesh_sub.add_parser("import")
    im.add_argument("path")
    return parser


def _overrides(args):
    over = {k: getattr(args, k, None) for k in ("case", "method", "r_s", "r0", "r1", "out",
                                                 "crack_faces", "emit_plots")}
    if getattr(args, "levels", None):
        over["levels"] = _parse_value("levels", args.levels)
    if getattr(args, "level", None) is not None:
        over["levels"] = (args.level,)
    return over


def _config_from_args(args):
    text = None
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
    return build_config(text, _overrides(args))


def _mesh_command(args):
    if args.mesh_command == "export":
        if not args.n or args.n < 1:
            raise ConfigError("n: a positive --n is required")
        if args.kind == "disk":
            mesh = build_three_quarter_disk_mesh(1.0 / args.n)
        else:
            mesh = build_structured_crack_mesh(args.n, fitted=args.kind == "crack-fitted")
        with open(args.out, "w") as fh:
            fh.write(export_mesh(mesh))
        print(f"wrote {mesh.n_nodes} nodes, {mesh.n_triangles} triangles to {args.out}")
        return EXIT_OK
    try:
        with open(args.path) as fh:
            mesh = import_mesh(fh.read())
    except OSError as exc:
        raise ConfigError(f"path: {exc}") from None
    tags = {}
    for *_, tag in mesh.boundary_edges:
        tags[tag] = tags.get(tag, 0) + 1
    print(f"{mesh.n_nodes} nodes, {mesh.n_triangles} triangles, boundary edges {tags}")
    return EXIT_OK


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mesh":
            return _mesh_command(args)
        cfg = _config_from_args(args)
        if args.command == "case":
            rep = run_case(cfg, cfg.levels[0])
            print(_summary(rep))
            return EXIT_OK
        if args.print_config:
            print(format_config(cfg), end="")
            return EXIT_OK
        report, _ = run_study(cfg, progress=lambda r: print(_summary(r), flush=True))
        for row in report_rows(report):
            print(",".join(str(row[c]) for c in CSV_COLUMNS))
        if cfg.emit_plots:
            where = os.path.dirname(os.path.abspath(cfg.out)) if cfg.out else os.getcwd()
            for path in emit_plot_series(report, where):
                print(f"wrote {path}")
        return EXIT_OK
    except (ConfigError, MeshError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, SingularMatrixError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
