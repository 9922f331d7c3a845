"""Command-line experiment driver.

An experiment is described by a TOML file::

    tau = 0.02            # or tau_rule = 20.48 for tau = C h^2
    t_end = 2.0
    method = "newton"
    snapshot_times = [0.5, 2.0]
    output_dir = "out"

    [shape]
    kind = "ellipse"
    resolution = 32       # N for curves, refinement level for surfaces
    a = 2.8
    b = 0.4

    [guard]               # 3D only, optional
    min_quality_ratio = 1e-3

    [converge]            # used by the converge subcommand
    levels = 3
    times = [0.5]

Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .curve2d import PolygonalCurve
from .errors import ConvergenceError, DegenerateMeshError, KrylovError, SingularSystemError
from .flow2d import evolve
from .flow3d import PinchGuard, evolve_3d
from .io import read_snapshot, write_snapshot
from .metrics import ConvergenceRow, convergence_table, manifold_distance_2d, manifold_distance_3d
from .shapes import ShapeSpec
from .solver import SolverParams
from .surface3d import triangle_areas

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger(__name__)

SOLVER_FAILURES = (ConvergenceError, DegenerateMeshError, KrylovError, SingularSystemError)


@dataclass(frozen=True)
class ExperimentConfig:
    shape: ShapeSpec
    tau: float | None = None
    t_end: float = 0.0
    method: str = "newton"
    tol: float = 1e-10
    max_iters: int = 50
    linear_solver: str = "auto"
    snapshot_times: tuple[float, ...] = ()
    output_dir: str = "out"
    tau_rule: float | None = None
    guard: float | None = None
    levels: int = 3
    compare_times: tuple[float, ...] = ()
    jobs: int = 1

    def __post_init__(self):
        if (self.tau is None) == (self.tau_rule is None):
            raise ValueError("give exactly one of tau and tau_rule")
        if self.tau is not None and not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.tau_rule is not None and not self.tau_rule > 0:
            raise ValueError("tau_rule coefficient must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.guard is not None and self.dimension != 3:
            raise ValueError("a pinch-off guard only applies to surfaces")

    @property
    def dimension(self) -> int:
        return self.shape.dimension

    def params(self, shape=None) -> SolverParams:
        return SolverParams(
            tau=self.step_size(shape),
            tol=self.tol,
            max_iters=self.max_iters,
            method=self.method,
            linear_solver=self.linear_solver,
        )

    def step_size(self, shape=None) -> float:
        if self.tau is not None:
            return self.tau
        return self.tau_rule * mesh_size(shape if shape is not None else self.shape.build()) ** 2


def mesh_size(shape) -> float:
    """``1/N`` for curves, ``max sqrt|sigma|`` for surfaces."""
    if isinstance(shape, PolygonalCurve):
        return 1.0 / shape.N
    return float(np.sqrt(triangle_areas(shape).max()))


_TOP_KEYS = {
    "tau", "t_end", "method", "tol", "max_iters", "linear_solver", "snapshot_times",
    "output_dir", "tau_rule", "dimension", "shape", "guard", "converge", "jobs",
}


def load_config(path: str | Path | None = None, data: dict | None = None) -> ExperimentConfig:
    """Build a config from a TOML file or an already parsed mapping."""
    if data is None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    shp = dict(data.get("shape", {}))
    if "kind" not in shp:
        raise ValueError("config needs [shape] with a kind")
    kind = shp.pop("kind")
    resolution = int(shp.pop("resolution", 32))
    params = dict(shp.pop("params", {}))
    params.update(shp)
    shape = ShapeSpec(kind, params, resolution)
    if "dimension" in data and int(data["dimension"]) != shape.dimension:
        raise ValueError(f"dimension {data['dimension']} does not match shape {kind!r}")
    guard = data.get("guard")
    conv = data.get("converge", {})
    return ExperimentConfig(
        shape=shape,
        tau=data.get("tau"),
        t_end=float(data.get("t_end", 0.0)),
        method=data.get("method", "newton"),
        tol=float(data.get("tol", 1e-10)),
        max_iters=int(data.get("max_iters", 50)),
        linear_solver=data.get("linear_solver", "auto"),
        snapshot_times=tuple(float(t) for t in data.get("snapshot_times", ())),
        output_dir=str(data.get("output_dir", "out")),
        tau_rule=data.get("tau_rule"),
        guard=None if guard is None else float(guard.get("min_quality_ratio", 1e-3)),
        levels=int(conv.get("levels", 3)),
        compare_times=tuple(float(t) for t in conv.get("times", ())),
        jobs=int(data.get("jobs", 1)),
    )


def _time_tag(t: float) -> str:
    return f"{t:.6f}"


def _simulate(config: ExperimentConfig, shape=None, method=None, snapshot_times=None):
    shape = shape if shape is not None else config.shape.build()
    params = config.params(shape)
    if method is not None:
        params = replace(params, method=method)
    snaps = config.snapshot_times if snapshot_times is None else snapshot_times
    if isinstance(shape, PolygonalCurve):
        return evolve(shape, params, config.t_end, snapshot_times=snaps)
    guard = None if config.guard is None else PinchGuard(config.guard)
    return evolve_3d(shape, params, config.t_end, guard=guard, snapshot_times=snaps)


def _summary(config: ExperimentConfig, traj) -> dict:
    tr = traj.trace
    its = tr["iterations"][1:]
    out = {
        "dimension": config.dimension,
        "shape": config.shape.kind,
        "resolution": config.shape.resolution,
        "tau": config.step_size(),
        "steps": int(tr["step"][-1]),
        "final_time": float(tr["t"][-1]),
        "mean_iterations": float(its.mean()) if its.size else 0.0,
    }
    if config.dimension == 2:
        out.update(
            final_area=float(tr["area"][-1]),
            final_perimeter=float(tr["perimeter"][-1]),
            max_rel_area_loss=float(np.abs(tr["rel_area_loss"]).max()),
            final_mri=float(tr["mri"][-1]),
        )
    else:
        out.update(
            final_volume=float(tr["volume"][-1]),
            final_surface_area=float(tr["surface_area"][-1]),
            max_rel_volume_loss=float(np.abs(tr["rel_volume_loss"]).max()),
            pinched=bool(traj.pinched),
            pinch_time=traj.pinch_time,
            pinch_reason=traj.pinch_reason,
        )
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run(config: ExperimentConfig) -> int:
    """Run one simulation and write its trace, snapshots and summary.

    Returns 0 on success and 2 if the solver failed.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        traj = _simulate(config)
    except SOLVER_FAILURES as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return 2
    traj.trace.to_csv(out / "trace.csv")
    for t in sorted(traj.snapshots):
        write_snapshot(out / f"snapshot_t{_time_tag(t)}.txt", traj.snapshots[t])
    _write_json(out / "summary.json", _summary(config, traj))
    return 0


def _level_shape(config: ExperimentConfig, k: int):
    spec = config.shape
    res = spec.resolution * 2 ** k if spec.dimension == 2 else spec.resolution + k
    return ShapeSpec(spec.kind, spec.params, res).build()


def _run_level(config: ExperimentConfig, k: int, times):
    shape = _level_shape(config, k)
    tau = config.step_size() / 4 ** k
    cfg = replace(config, tau=tau, tau_rule=None)
    traj = _simulate(cfg, shape=shape, snapshot_times=times)
    missing = [t for t in times if t not in traj.snapshots]
    if missing:
        raise ConvergenceError(f"level {k} stopped before t={missing[0]}")
    return mesh_size(shape), tau, traj.snapshots


def convergence_study(config: ExperimentConfig, levels: int | None = None, times: Sequence[float] | None = None):
    """Errors between consecutive levels ``(h0 / 2^k, tau0 / 4^k)``.

    Returns ``{t: [ConvergenceRow, ...]}``; each row pairs level ``k`` with
    level ``k + 1``.
    """
    levels = config.levels if levels is None else levels
    if levels < 2:
        raise ValueError("a convergence study needs at least two levels")
    times = tuple(times or config.compare_times or config.snapshot_times or (config.t_end,))
    cfg = replace(config, t_end=max(times))
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_level, [cfg] * levels, range(levels), [times] * levels))
    else:
        results = [_run_level(cfg, k, times) for k in range(levels)]
    dist = manifold_distance_2d if config.dimension == 2 else manifold_distance_3d
    table = {}
    for t in times:
        errs = [dist(results[k][2][t], results[k + 1][2][t]) for k in range(levels - 1)]
        hs = [results[k][0] for k in range(levels - 1)]
        taus = [results[k][1] for k in range(levels - 1)]
        if len(errs) == 1:
            table[t] = [ConvergenceRow(hs[0], taus[0], errs[0])]
        else:
            table[t] = convergence_table(errs, hs, taus)
    return table


def convergence_csv(table) -> str:
    lines = ["t,h,tau,error,order"]
    for t in sorted(table):
        for r in table[t]:
            order = "" if r.order is None else format(r.order, ".17g")
            lines.append(f"{t:.17g},{r.h:.17g},{r.tau:.17g},{r.error:.17g},{order}")
    return "\n".join(lines) + "\n"


def compare_iterations(config: ExperimentConfig) -> dict[str, np.ndarray]:
    """Per-step iteration counts of Newton and Picard from the same input."""
    shape = config.shape.build()
    counts = {}
    for method in ("newton", "picard"):
        traj = _simulate(config, shape=shape, method=method, snapshot_times=())
        counts[method] = np.array([r.iterations for r in traj.reports], dtype=int)
    return counts


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.method is not None:
        changes["method"] = args.method
    if args.tau is not None:
        changes["tau"] = args.tau
        changes["tau_rule"] = None
    if args.t_end is not None:
        changes["t_end"] = args.t_end
    if args.snapshots is not None:
        changes["snapshot_times"] = tuple(float(s) for s in args.snapshots.split(",") if s.strip())
    return replace(config, **changes) if changes else config


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sppfem", description="Surface diffusion of curves and surfaces.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML experiment file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--method", choices=("newton", "picard"))
        sp.add_argument("--tau", type=float)
        sp.add_argument("--t-end", type=float, dest="t_end")
        sp.add_argument("--snapshots", help="comma separated snapshot times")

    common(sub.add_parser("simulate", help="run one simulation"))
    conv = sub.add_parser("converge", help="convergence study over refinement levels")
    common(conv)
    conv.add_argument("--levels", type=int)
    conv.add_argument("--jobs", type=int)
    common(sub.add_parser("compare-iters", help="Newton vs Picard iteration counts"))
    met = sub.add_parser("metrics", help="manifold distance between two snapshot files")
    met.add_argument("first")
    met.add_argument("second")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    if args.command == "metrics":
        a, b = read_snapshot(args.first), read_snapshot(args.second)
        if type(a) is not type(b):
            print("error: snapshots have different dimensions", file=sys.stderr)
            return 1
        d = manifold_distance_2d(a, b) if isinstance(a, PolygonalCurve) else manifold_distance_3d(a, b)
        print(format(d, ".17g"))
        return 0

    try:
        config = _apply_overrides(load_config(args.config), args)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 1

    if args.command == "simulate":
        return run(config)

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "converge":
            if args.jobs is not None:
                config = replace(config, jobs=args.jobs)
            table = convergence_study(config, levels=args.levels)
            (out / "convergence.csv").write_text(convergence_csv(table))
            sys.stdout.write(convergence_csv(table))
            return 0
        counts = compare_iterations(config)
    except SOLVER_FAILURES as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return 2
    n = min(len(counts["newton"]), len(counts["picard"]))
    lines = ["step,newton,picard"]
    lines += [f"{k + 1},{counts['newton'][k]},{counts['picard'][k]}" for k in range(n)]
    (out / "iterations.csv").write_text("\n".join(lines) + "\n")
    summary = {m: {"mean": float(c.mean()) if c.size else 0.0, "max": int(c.max()) if c.size else 0}
               for m, c in counts.items()}
    _write_json(out / "iterations_summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
