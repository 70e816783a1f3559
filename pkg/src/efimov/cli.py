"""Command line entry point: ``efimov <command> --config <file> [--out <dir>] [--svg]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import asymptotics as asy
from . import counting, friedrichs
from .config import COMMANDS, ExperimentConfig, parse_config
from .errors import EfimovError
from .lattice import ModelParams, lambda_set, reduce_torus

JSON_COMMANDS = {"classify", "calibrate", "essential-spectrum", "expansion-fit", "efimov-verify"}
PLOTTABLE = {"count", "efimov-verify", "u-coefficient", "s-r-limit"}


@dataclass
class RunReport:
    command: str
    digest: str
    status: str = "OK"
    results: dict = field(default_factory=dict)
    columns: list | None = None
    rows: list | None = None
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0
    exit_code: int = 0
    plot: Callable | None = None

    def document(self) -> dict:
        doc = {"command": self.command, "config_digest": self.digest, "status": self.status,
               "warnings": list(self.warnings), "results": self.results}
        if self.rows is not None:
            doc["rows"] = self.rows
        return doc


# -- helpers ------------------------------------------------------------------


def _points(value, default) -> list:
    if value is None:
        return [np.asarray(p, dtype=float) for p in default]
    arr = np.asarray(value, dtype=float)
    return [arr] if arr.ndim == 1 else list(arr)


def _depth_for(z: float, cfg: ExperimentConfig) -> int:
    """One extra refinement level per decade of |z| below 1e-2."""
    depth = cfg.grid.refine_depth
    if cfg.grid.depth_per_decade and abs(z) < 1e-2:
        depth += math.ceil(math.log10(1e-2 / abs(z)) - 1e-9)
    return depth


def _model(cfg: ExperimentConfig, grid) -> ModelParams:
    """The configured model, with v1 rescaled to criticality on ``grid`` when a coupling block is given."""
    if cfg.coupling is None:
        return cfg.params
    c = cfg.coupling
    return friedrichs.critical_params(cfg.params, c["shape"], grid, scale=c["scale"], on_grid=c["on_grid"])


def _grid_meta(grid) -> dict:
    return {"grid_id": grid.id, "nodes": grid.size, **grid.spec}


# -- commands -----------------------------------------------------------------


def _classify(cfg, rep):
    grid = cfg.grid.build(cfg.params.n)
    params = _model(cfg, grid)
    cls = friedrichs.classify_threshold(params, grid)
    rep.results = {**cls.to_dict(), "grid": _grid_meta(grid)}


def _calibrate(cfg, rep):
    grid = cfg.grid.build(cfg.params.n)
    shape = cfg.coupling["shape"] if cfg.coupling else cfg.params.v1
    cal = friedrichs.calibrate_resonance(shape, cfg.params, grid)
    rep.results = {"value": cal.value, "low": cal.low, "high": cal.high, "on_grid": cal.on_grid,
                   "grid": _grid_meta(grid)}


def _friedrichs_spectrum(cfg, rep):
    grid = cfg.grid.build(cfg.params.n)
    params = _model(cfg, grid)
    rep.columns = ["k1", "k2", "k3", "z", "side", "band_min", "band_max"]
    rep.rows = []
    for k in _points(cfg.options.get("K"), [[0.0, 0.0, 0.0]]):
        band = friedrichs.essential_band(k, params)
        found = friedrichs.discrete_spectrum_h(k, params, grid)
        for z, side in found:
            rep.rows.append([*reduce_torus(k), z, side, band.emin, band.emax])
        if not found:
            rep.warnings.append(f"h(k) has no discrete spectrum at k={list(map(float, k))}")
    rep.results = {"grid": _grid_meta(grid)}


def _essential_spectrum(cfg, rep):
    grid = cfg.grid.build(cfg.params.n)
    params = _model(cfg, grid)
    reports = [counting.essential_spectrum_H(K, params, cfg.options.get("p_resolution", 4), grid).to_dict()
               for K in _points(cfg.options.get("K"), [[0.0, 0.0, 0.0]])]
    rep.results = {"reports": reports, "grid": _grid_meta(grid)}


def _count_sweep(cfg, rep, Ks, zs):
    rows, meta = [], []
    for z in zs:
        grid = cfg.grid.build(cfg.params.n, _depth_for(z, cfg))
        params = _model(cfg, grid)
        for K in Ks:
            N = counting.eigen_count_N(K, z, params, grid)
            rows.append([*reduce_torus(K), z, N, grid.id, "inertia"])
        meta.append(_grid_meta(grid))
    return rows, meta


def _count(cfg, rep):
    zs = cfg.options.get("z_list", [-1e-1, -1e-2, -1e-3, -1e-4])
    Ks = _points(cfg.options.get("K"), [[0.0, 0.0, 0.0]])
    rep.columns = ["K1", "K2", "K3", "z", "N", "grid_id", "method"]
    rep.rows, meta = _count_sweep(cfg, rep, Ks, zs)
    rep.results = {"grids": meta}
    rep.plot = lambda ax: _plot_counts(ax, [r[3] for r in rep.rows], [r[4] for r in rep.rows], None)


def _oracle_check(cfg, rep):
    grid = cfg.grid.build(cfg.params.n)
    params = cfg.params
    if cfg.coupling is not None:
        rep.warnings.append("oracle-check runs the model as configured; the coupling block is ignored")
    Ks = _points(cfg.options.get("K"), lambda_set(params.n).points[:2])
    rep.columns = ["K1", "K2", "K3", "z", "N_bs", "N_direct", "equal"]
    rep.rows = []
    for K in Ks:
        zs = cfg.options.get("z_list")
        zs = counting.probe_energies(K, params, grid) if zs is None else zs
        spectrum = counting.direct_h_spectrum(K, params, grid)
        for z in zs:
            nb = counting.eigen_count_N(K, float(z), params, grid)
            nd = int(np.sum(spectrum < z))
            rep.rows.append([*reduce_torus(K), float(z), nb, nd, nb == nd])
    ok = all(r[-1] for r in rep.rows)
    rep.status = "PASS" if ok else "FAIL"
    rep.results = {"overall": rep.status, "cases": len(rep.rows), "grid": _grid_meta(grid),
                   "dimension_direct": counting.direct_h_dimension(grid.size)}


def _expansion_fit(cfg, rep):
    grid = cfg.grid.build(cfg.params.n)
    params = _model(cfg, grid)
    lam = lambda_set(params.n).points
    K = _points(cfg.options.get("K"), [lam[-1]])[0]
    pp = np.asarray(cfg.options.get("p_prime", lam[min(1, len(lam) - 1)]), dtype=float)
    fit = friedrichs.threshold_expansion_fit(
        params, K, pp, grid, direction=cfg.options.get("direction", (1.0, 0.0, 0.0)),
        t0=cfg.options.get("t0", 0.1), steps=cfg.options.get("steps", 8))
    rep.results = {
        "exponent": fit.exponent, "leading_coeff": fit.leading_coeff, "predicted_coeff": fit.predicted_coeff,
        "coeff_ratio": None if fit.predicted_coeff is None else fit.leading_coeff / fit.predicted_coeff,
        "steps": fit.steps.tolist(), "values": fit.values.tolist(), "residual": fit.residual,
        "grid": _grid_meta(grid),
    }


def _kernel(cfg) -> asy.SobolevKernel:
    return asy.SobolevKernel(cfg.params.l1, cfg.params.l2)


def _u_coefficient(cfg, rep):
    k = _kernel(cfg)
    curve = asy.u_curve(cfg.options.get("gamma_list", [0.5, 1.0, 2.0]), k,
                        lmax=cfg.options.get("lmax", asy.DEFAULT_LMAX),
                        theta_max=cfg.options.get("theta_max", asy.DEFAULT_THETA_MAX))
    rep.columns = ["gamma", "U"]
    rep.rows = [[g, u] for g, u in zip(curve.gammas, curve.values)]
    rep.results = {"lmax": curve.lmax, "theta_max": curve.theta_max, "theta_nodes": curve.theta_nodes}
    rep.plot = lambda ax: _plot_u(ax, curve)


def _s_r_limit(cfg, rep):
    k = _kernel(cfg)
    lmax = cfg.options.get("lmax", asy.DEFAULT_LMAX)
    npu = cfg.options.get("nodes_per_unit", 8)
    rep.columns = ["r", "gamma", "count", "ratio", "U", "relative_gap"]
    rep.rows = []
    for g in cfg.options.get("gamma_list", [1.0]):
        u = asy.u_coefficient(g, k, lmax=lmax)
        for r in cfg.options.get("r_list", [10.0, 20.0, 40.0]):
            res = asy.s_r_count(r, g, k, npu, lmax)
            rep.rows.append([r, g, res["count"], res["ratio"], u, abs(res["ratio"] - u) / u if u else None])
    rep.results = {"nodes_per_unit": npu, "lmax": lmax}
    rep.plot = lambda ax: _plot_sr(ax, rep.rows)


def _singular_part(cfg, rep):
    grid = cfg.grid.build(cfg.params.n)
    params = _model(cfg, grid)
    k = _kernel(cfg)
    rep.columns = ["z", "gamma", "count", "ratio", "U", "relative_gap"]
    rep.rows = []
    for g in cfg.options.get("gamma_list", [1.0]):
        u = asy.u_coefficient(g, k)
        for z in cfg.options.get("z_list", [-1e-4]):
            c = asy.singular_part_count(cfg.grid.delta, z, params, grid, g)
            ratio = c / abs(math.log(abs(z)))
            rep.rows.append([z, g, c, ratio, u, abs(ratio - u) / u if u else None])
    rep.results = {"delta": cfg.grid.delta, "grid": _grid_meta(grid)}


def _efimov_verify(cfg, rep):
    base = cfg.grid.build(cfg.params.n)
    params = _model(cfg, base)
    cls = friedrichs.classify_threshold(params, base)
    if cls.kind is not friedrichs.ThresholdKind.ZERO_RESONANCE:
        rep.status = "FAIL-PRECONDITION"
        rep.exit_code = 3
        rep.results = {"classification": cls.to_dict(),
                       "reason": f"model is {cls.kind.value}, not resonance-class; "
                                 "the logarithmic growth of N(K, z) is only predicted at a zero-energy resonance"}
        return
    zs = cfg.options.get("z_list", [-1e-1, -1e-2, -1e-3, -1e-4])
    lam = lambda_set(cfg.params.n).points
    K = _points(cfg.options.get("K"), [lam[-1]])[0]
    rows, meta = _count_sweep(cfg, rep, [K], zs)
    counts = [r[4] for r in rows]
    fit = asy.efimov_slope_fit(zs, counts, _kernel(cfg), meta)
    strict = all(b > a for a, b in zip(counts, counts[1:]))
    rep.status = "PASS" if (strict and fit.relative_gap <= 0.25) else "FAIL"
    rep.results = {**fit.to_dict(), "strictly_increasing": strict, "classification": cls.to_dict(),
                   "K": [float(x) for x in reduce_torus(K)]}
    if rep.status == "FAIL":
        rep.warnings.append("counts at desk-scale |z| sit in the pre-asymptotic regime; see README")
    rep.plot = lambda ax: _plot_counts(ax, zs, counts, fit)


DISPATCH = {
    "classify": _classify, "calibrate": _calibrate, "friedrichs-spectrum": _friedrichs_spectrum,
    "essential-spectrum": _essential_spectrum, "count": _count, "oracle-check": _oracle_check,
    "expansion-fit": _expansion_fit, "u-coefficient": _u_coefficient, "s-r-limit": _s_r_limit,
    "efimov-verify": _efimov_verify, "singular-part": _singular_part,
}
assert set(DISPATCH) == set(COMMANDS)


def execute(cfg: ExperimentConfig) -> RunReport:
    rep = RunReport(command=cfg.command, digest=cfg.digest)
    start = time.perf_counter()
    DISPATCH[cfg.command](cfg, rep)
    rep.wall_time = time.perf_counter() - start
    return rep


# -- plots --------------------------------------------------------------------


def _plot_counts(ax, zs, counts, fit):
    L = np.abs(np.log(np.abs(np.asarray(zs, dtype=float))))
    ax.plot(L, counts, "o-", label="N(K, z)")
    if fit is not None:
        ax.plot(L, fit.intercept + fit.u1 * L, "--", label=f"slope U(1) = {fit.u1:.4f}")
    ax.set_xlabel("|log|z||")
    ax.set_ylabel("count")
    ax.legend()


def _plot_u(ax, curve):
    ax.step(curve.gammas, curve.values, where="post")
    ax.set_xlabel("gamma")
    ax.set_ylabel("U(gamma)")


def _plot_sr(ax, rows):
    r = [row[0] for row in rows]
    ax.plot(r, [row[3] for row in rows], "o-", label="n(gamma, S_r) / 2r")
    ax.plot(r, [row[4] for row in rows], "--", label="U(gamma)")
    ax.set_xlabel("r")
    ax.legend()


# -- emission -----------------------------------------------------------------


def _plain(x):
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _cell(x) -> str:
    x = _plain(x)
    if isinstance(x, float):
        return repr(x)
    if x is None:
        return ""
    return str(x)


def render_csv(rep: RunReport) -> str:
    buf = io.StringIO()
    buf.write(f"# command={rep.command}\n# config_digest={rep.digest}\n# status={rep.status}\n")
    for w in rep.warnings:
        buf.write(f"# warning={w}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(rep.columns)
    for row in rep.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def render_json(rep: RunReport) -> str:
    doc = _plain(rep.document())
    if rep.rows is not None:
        doc["rows"] = [dict(zip(rep.columns, r)) for r in doc["rows"]]
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit(rep: RunReport, out_dir: Path, fmt: str | None = None, svg: Path | None = None) -> list:
    """Write the result table or document, and optionally an SVG; returns written paths."""
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = fmt or ("json" if rep.command in JSON_COMMANDS or rep.columns is None else "csv")
    if fmt == "csv" and rep.columns is None:
        rep.warnings.append(f"{rep.command} produces a document, not a table; writing JSON")
        fmt = "json"
    path = out_dir / f"{rep.command}.{fmt}"
    path.write_text(render_csv(rep) if fmt == "csv" else render_json(rep))
    written = [path]
    if svg is not None:
        if rep.plot is None:
            rep.warnings.append(f"{rep.command} has nothing to plot; no SVG written")
        else:
            written.append(_write_svg(rep, svg))
    return written


def _write_svg(rep: RunReport, path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": rep.digest, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        rep.plot(ax)
        ax.set_title(f"{rep.command} [{rep.digest[:12]}]")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="efimov", description="Spectral experiments for the lattice three-particle model.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path, help="JSON experiment file")
    ap.add_argument("--out", type=Path, help="output directory (default: output.path or the working directory)")
    ap.add_argument("--svg", action="store_true", help="also write an SVG plot when the command has one")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    try:
        cfg = parse_config(text)
    except EfimovError as exc:
        for p in getattr(exc, "problems", [str(exc)]):
            print(f"config error: {p}", file=sys.stderr)
        return exc.exit_code
    if cfg.command != args.command:
        print(f"config error: command: config says {cfg.command!r} but {args.command!r} was requested",
              file=sys.stderr)
        return 2
    try:
        rep = execute(cfg)
    except EfimovError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code

    out = cfg.output
    out_dir = args.out or (Path(out["path"]) if "path" in out else Path("."))
    svg = None
    if args.svg or "svg" in out:
        svg = Path(out["svg"]) if "svg" in out and not args.out else out_dir / f"{cfg.command}.svg"
    try:
        written = emit(rep, out_dir, out.get("format"), svg)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    if not args.quiet:
        for w in rep.warnings:
            print(f"warning: {w}", file=sys.stderr)
        print(f"{cfg.command}: {rep.status} ({rep.wall_time:.2f}s) -> {', '.join(map(str, written))}",
              file=sys.stderr)
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
