"""Batch front-end.

Subcommands: ``roots``, ``geom``, ``weight``, ``orbital``, ``expand``,
``zeta`` and ``verify``.  Artifacts are JSON (sorted keys) or CSV written
with ``repr`` floats, so equal inputs and seeds give identical bytes.

Exit codes: 0 on success, 1 on a numerical failure or a failed invariant
(a diagnostic JSON object goes to stderr), 2 on a usage or schema error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .asymptotics import AsymptoticExpansion, TraceSamples, fit_expansion, geometric_grid
from .errors import NumericalError, TorsionLabError, UsageError
from .heat import GaussianKernel, ParametrixKernel, symspace_dim
from .orbital import (
    EuclideanGaussian,
    Group,
    OrbitalSpec,
    explicit_weight_for,
    generic_datum,
    kernel_from_json,
    read_t_grid_csv,
    t_grid_values,
    write_t_grid_csv,
)
from .roots import GroupKind, LeviComposition, dumps_enumeration
from .weights import w_M_class_batch
from .zeta import ExponentialTail, MellinZeta, finite_part_and_torsion, fit_exponential_tail, write_zeta_table

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2
COMMANDS = ("roots", "geom", "weight", "orbital", "expand", "zeta", "verify")
#: Minimum number of samples with ``t >= 1`` before an exponential tail is fitted.
MIN_TAIL_SAMPLES = 7


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    count: int

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        try:
            lo, hi, count = text.split(":")
            grid = cls(float(lo), float(hi), int(count))
        except ValueError as exc:
            raise UsageError(f"grid must be lo:hi:count, got {text!r}") from exc
        if not (0 < grid.lo < grid.hi) or grid.count < 2:
            raise UsageError("t grid needs 0 < lo < hi and count >= 2")
        return grid

    def values(self) -> np.ndarray:
        return geometric_grid(self.lo, self.hi, self.count)


def parse_group(text: str) -> tuple[int, GroupKind]:
    low = text.strip().lower()
    for prefix, kind in (("gl", GroupKind.GL), ("sl", GroupKind.SL)):
        if low.startswith(prefix):
            try:
                n = int(low[len(prefix):])
            except ValueError:
                break
            if n < 1:
                break
            return n, kind
    raise UsageError(f"unknown group {text!r}; use GL2, GL3 or SLn")


def parse_levi(text: str | None, n: int) -> LeviComposition:
    if text is None:
        return LeviComposition.minimal(n)
    try:
        blocks = tuple(int(b) for b in text.split(","))
    except ValueError as exc:
        raise UsageError(f"Levi must be comma separated block sizes, got {text!r}") from exc
    levi = LeviComposition(blocks)
    if levi.n != n:
        raise UsageError(f"Levi {blocks} does not sum to {n}")
    return levi


@dataclass
class RunConfig:
    """Validated command-line configuration."""

    command: str
    group: str = "GL3"
    seed: int = 0
    tol: float | None = None
    t_grid: GridSpec | None = None
    out: Path | None = None
    constants: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.tol is not None and not self.tol > 0:
            raise UsageError("--tol must be positive")
        if self.seed < 0:
            raise UsageError("--seed must be non-negative")
        for key, value in self.constants.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise UsageError(f"constant {key!r} must be a finite number")

    @property
    def n(self) -> int:
        return parse_group(self.group)[0]

    @property
    def kind(self) -> GroupKind:
        return parse_group(self.group)[1]

    @property
    def orbital_group(self) -> Group:
        n = self.n
        if n not in (2, 3):
            raise UsageError("orbital integrals are available for GL2 and GL3")
        return Group.GL2 if n == 2 else Group.GL3


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _option(config: RunConfig, name: str, default: int) -> int:
    value = config.options.get(name)
    return int(default if value is None else value)


def _emit(config: RunConfig, text: str) -> None:
    if config.out is None:
        sys.stdout.write(text)
    else:
        config.out.write_text(text)


# ---------------------------------------------------------------------------
# commands


def cmd_roots(config: RunConfig) -> int:
    _emit(config, dumps_enumeration(config.n, config.kind) + "\n")
    return EXIT_OK


def cmd_geom(config: RunConfig) -> int:
    from .invariants import decomposition_roundtrips, distance_formula, taylor_leading_constant

    n = config.n
    rng = np.random.default_rng(config.seed)
    checks = decomposition_roundtrips(n, rng, samples=_option(config, "samples", 1000))
    if n in (2, 3):
        checks.append(distance_formula(n))
        checks += taylor_leading_constant(n, rng)
    report = {"group": config.group.upper(), "seed": config.seed, "checks": [c.to_json() for c in checks]}
    _emit(config, _dumps(report))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERICAL


def _build_kernel(config: RunConfig, n: int):
    name = config.options.get("kernel") or "euclidean"
    d = _option(config, "d", symspace_dim(n))
    if name == "euclidean":
        return EuclideanGaussian(float(config.constants.get("a", 1.0)))
    if name == "gaussian":
        return GaussianKernel(int(d))
    if name == "parametrix":
        return ParametrixKernel(order=int(config.constants.get("order", 0)), R=config.constants.get("R"))
    if name.endswith(".json"):
        return kernel_from_json(_load_json(name))
    raise UsageError(f"unknown kernel {name!r}; use euclidean, gaussian, parametrix or a JSON file")


def _orbital_spec(config: RunConfig) -> OrbitalSpec:
    if config.options.get("input"):
        spec = OrbitalSpec.from_json(_load_json(config.options["input"]))
        if config.constants:
            spec = OrbitalSpec(spec.group, spec.levi, spec.class_label, spec.kernel, spec.t,
                               {**spec.constants, **config.constants})
        return spec
    group = config.orbital_group
    levi = parse_levi(config.options.get("levi"), group.n)
    label = config.options.get("class_label") or "trivial"
    return OrbitalSpec(group, levi, label, _build_kernel(config, group.n), None, dict(config.constants))


def cmd_orbital(config: RunConfig) -> int:
    if config.t_grid is None:
        raise UsageError("orbital needs --t-grid lo:hi:count")
    spec = _orbital_spec(config)
    rows = t_grid_values(spec, config.t_grid.values(), tol=config.tol)
    write_t_grid_csv(config.out if config.out is not None else sys.stdout, rows)
    return EXIT_OK


def _weight_points(config: RunConfig, dim: int) -> np.ndarray:
    path = config.options.get("points")
    if path:
        try:
            pts = np.loadtxt(path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read points from {path}: {exc}") from exc
        if pts.shape[1] != dim:
            raise UsageError(f"points need {dim} columns")
        return pts
    rng = np.random.default_rng(config.seed)
    return rng.uniform(-2.0, 2.0, size=(_option(config, "samples", 100), dim))


def cmd_weight(config: RunConfig) -> int:
    group = config.orbital_group
    levi = parse_levi(config.options.get("levi"), group.n)
    spec = OrbitalSpec(group, levi, config.options.get("class_label") or "trivial", EuclideanGaussian())
    w = explicit_weight_for(spec)
    pts = _weight_points(config, w.dim)
    cols = {"explicit": w.pointwise(pts)}
    if config.options.get("generic"):
        cols["generic"] = w_M_class_batch(generic_datum(spec), pts, seed=config.seed)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([f"x{q}" for q in range(w.dim)] + list(cols))
    for q, p in enumerate(pts):
        writer.writerow([repr(float(v)) for v in p] + [repr(float(c[q])) for c in cols.values()])
    _emit(config, buf.getvalue())
    return EXIT_OK


def cmd_expand(config: RunConfig) -> int:
    path = config.options.get("input")
    if not path:
        raise UsageError("expand needs --in J.csv")
    if config.options.get("d") is None or config.options.get("k") is None:
        raise UsageError("expand needs --d and --k")
    rows = read_t_grid_csv(path)
    column = _option(config, "column", 0)
    if not rows or not 0 <= column < rows[0][1].size:
        raise UsageError(f"column {column} is not in {path}")
    pairs = [(t, float(v[column])) for t, v in rows]
    small = [(t, v) for t, v in pairs if t <= 1.0]
    samples = TraceSamples.from_rows(small, tag=str(path))
    fit = fit_expansion(
        samples,
        int(config.options["d"]),
        int(config.options["k"]),
        max_order=_option(config, "max_order", 4),
        max_log_power=_option(config, "max_log_power", 1),
        group_rank=config.options.get("rank"),
    )
    out = fit.to_json()
    out["leading_exponent"] = fit.leading_exponent
    out["log_degree"] = fit.log_degree
    large = [(t, v) for t, v in pairs if t >= 1.0]
    if len(large) >= MIN_TAIL_SAMPLES:
        tail = fit_exponential_tail([t for t, _ in large], [v for _, v in large])
        out["tail"] = tail.to_json()
    _emit(config, _dumps(out))
    return EXIT_OK


def _member_zeta(data: dict) -> MellinZeta:
    expansion = AsymptoticExpansion.from_json(data["expansion"] if "expansion" in data else data)
    tail = data.get("tail")
    if tail is None:
        raise UsageError("each zeta member needs a 'tail' model on [1, oo)")
    try:
        model = ExponentialTail(tuple(float(c) for c in tail["coefficients"]), tuple(float(r) for r in tail["rates"]),
                                float(tail.get("residual", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid tail model: {exc}") from exc
    return MellinZeta(expansion, theta=None, tail=model)


def cmd_zeta(config: RunConfig) -> int:
    path = config.options.get("input")
    if not path:
        raise UsageError("zeta needs --in expansion.json")
    data = _load_json(path)
    members = [_member_zeta(m) for m in data["members"]] if "members" in data else [_member_zeta(data)]
    s_grid = config.options.get("s_grid")
    if s_grid:
        lo, hi, count = _linear_grid(s_grid)
        index = _option(config, "member", 0)
        if not 0 <= index < len(members):
            raise UsageError(f"member {index} does not exist")
        write_zeta_table(config.out if config.out is not None else sys.stdout, members[index],
                         np.linspace(lo, hi, count))
        return EXIT_OK
    report = {"laurent_at_0": [m.laurent(0.0).to_json() for m in members]}
    if len(members) > 1:
        report["torsion"] = finite_part_and_torsion(members).to_json()
    _emit(config, _dumps(report))
    return EXIT_OK


def _linear_grid(text: str) -> tuple[float, float, int]:
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError as exc:
        raise UsageError(f"s grid must be lo:hi:count, got {text!r}") from exc
    if count < 1 or hi < lo:
        raise UsageError("s grid needs lo <= hi and count >= 1")
    return lo, hi, count


def cmd_verify(config: RunConfig) -> int:
    from .invariants import run_invariants

    n = config.n
    if n not in (2, 3):
        raise UsageError("verify covers GL2 and GL3")
    tol = 1e-6 if config.tol is None else config.tol
    results = run_invariants(n, tol=tol, seed=config.seed)
    ok = all(r.passed for r in results)
    report = {"group": config.group.upper(), "tol": tol, "seed": config.seed, "passed": ok,
              "invariants": [r.to_json() for r in results]}
    lines = "".join(f"{'PASS' if r.passed else 'FAIL'} {r.name}: defect {r.defect:.3g} (tol {r.tolerance:.3g})\n"
                    for r in results)
    if config.out is None:
        sys.stdout.write(lines)
    else:
        sys.stdout.write(lines)
        config.out.write_text(_dumps(report))
    return EXIT_OK if ok else EXIT_NUMERICAL


HANDLERS = {
    "roots": cmd_roots,
    "geom": cmd_geom,
    "weight": cmd_weight,
    "orbital": cmd_orbital,
    "expand": cmd_expand,
    "zeta": cmd_zeta,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--group", default="GL3", help="GL2, GL3 or SLn")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--out", type=Path, default=None)
    common.add_argument("--constants", default=None, help="JSON file of constants (c, c_a, c_0, R, a, order)")

    parser = _ArgumentParser(prog="torsionlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    sub.add_parser("roots", parents=[common], help="Levi and parabolic enumeration")
    geom = sub.add_parser("geom", parents=[common], help="decomposition and distance checks")
    geom.add_argument("--samples", type=int, default=None)

    sel = _ArgumentParser(add_help=False)
    sel.add_argument("--levi", default=None, help="block sizes, e.g. 2,1")
    sel.add_argument("--class", dest="class_label", default=None)

    weight = sub.add_parser("weight", parents=[common, sel], help="explicit (and generic) weights at points")
    weight.add_argument("--points", default=None, help="CSV file of coordinates")
    weight.add_argument("--samples", type=int, default=None)
    weight.add_argument("--generic", action="store_true", help="also evaluate the limit-formula weight")

    orbital = sub.add_parser("orbital", parents=[common, sel], help="orbital integrals on a t grid")
    orbital.add_argument("--kernel", default=None, help="euclidean, gaussian, parametrix or kernel.json")
    orbital.add_argument("--d", type=int, default=None, help="dimension in the Gaussian normalisation")
    orbital.add_argument("--t-grid", dest="t_grid", default=None, help="lo:hi:count, geometric")
    orbital.add_argument("--in", dest="input", default=None, help="orbital spec JSON")

    expand = sub.add_parser("expand", parents=[common], help="fit a small-time expansion")
    expand.add_argument("--in", dest="input", default=None)
    expand.add_argument("--d", type=int, default=None)
    expand.add_argument("--k", type=int, default=None)
    expand.add_argument("--max-order", dest="max_order", type=int, default=None)
    expand.add_argument("--max-log-power", dest="max_log_power", type=int, default=None)
    expand.add_argument("--rank", type=int, default=None, help="group rank bounding the log power")
    expand.add_argument("--column", type=int, default=None)

    zeta = sub.add_parser("zeta", parents=[common], help="zeta tables, Laurent data and torsion")
    zeta.add_argument("--in", dest="input", default=None)
    zeta.add_argument("--s-grid", dest="s_grid", default=None, help="lo:hi:count, linear")
    zeta.add_argument("--member", type=int, default=None)

    sub.add_parser("verify", parents=[common], help="run the invariant suite")
    return parser


def config_from_args(argv: Sequence[str] | None = None) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    constants = _load_json(args.pop("constants")) if args.get("constants") else {}
    args.pop("constants", None)
    if not isinstance(constants, dict):
        raise UsageError("--constants must hold a JSON object")
    grid = args.pop("t_grid", None)
    return RunConfig(
        command=command,
        group=args.pop("group"),
        seed=args.pop("seed"),
        tol=args.pop("tol"),
        t_grid=GridSpec.parse(grid) if grid else None,
        out=args.pop("out"),
        constants=constants,
        options=args,
    )


def run(config: RunConfig) -> int:
    return HANDLERS[config.command](config)


def _diagnostic(kind: str, exc: BaseException) -> None:
    sys.stderr.write(_dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}))


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = config_from_args(argv)
        return run(config)
    except (UsageError, OSError) as exc:
        _diagnostic("usage", exc)
        return EXIT_USAGE
    except (NumericalError, TorsionLabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _diagnostic("numerical", exc)
        return EXIT_NUMERICAL
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
