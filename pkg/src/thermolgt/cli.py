"""Command-line surface: reproducible batch experiments over the library.

Subcommands
-----------
hamiltonian dump    term-list JSON for one model point
projector verify    kernel-vs-oracle checkup against the reference tables
circuit stats       gate census and entangler counts of the prepared circuits
ed-sweep            exact (T, mu) phase table as CSV
vqe                 one thermal-VQE run, or a `--trials` noisy ensemble

Every file-producing run writes a sibling ``*.manifest.json`` echoing the
resolved configuration, the seed, and the tool version.  Payload files are
byte-stable given (version, seed, config); the manifest's wall-clock entry
is the only field allowed to differ between identical runs.

Exit codes: 0 success, 1 verification or estimation failure, 2 usage error.
The default seed comes from the ``THERMOLGT_SEED`` environment variable
when ``--seed`` is not given (falling back to 0), and ``--config FILE``
loads flat ``key=value`` lines mirroring the long flags, which explicit
flags override.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .circuits import (
    NoiseModel,
    phi_parameter_count,
    reduced_system_circuit,
    transpile_to_native,
)
from .models import Group, ModelParams, build_hamiltonian
from .projection import (
    build_kernel,
    brute_force_singlet_projector,
    random_gauge_invariant_operator,
    reference_kernel_decomposition,
)
from .thermal import PhaseTable, phase_sweep
from .vqe import (
    UnstableEstimateError,
    VqeConfig,
    run_noisy_ensemble,
    run_vqe,
)

SEED_ENV_VAR = "THERMOLGT_SEED"

# reference-coefficient tolerances for `projector verify` (the SU(3) kernel
# goes through a quadrature, the SU(2) one is closed-form)
_COEFF_TOL = {Group.SU2: 1e-12, Group.SU3: 1e-6}


def _grid(text: str) -> tuple[float, float, int]:
    """Parse `start:stop:count` into its parts (validated)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"grid must be start:stop:count, got {text!r}")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: {exc}") from exc
    if count < 1:
        raise argparse.ArgumentTypeError("grid count must be >= 1")
    return start, stop, count


def _grid_values(grid: tuple[float, float, int]) -> np.ndarray:
    start, stop, count = grid
    return np.linspace(start, stop, count)


def _group(text: str) -> Group:
    try:
        return Group(text.lower())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"unknown group {text!r}") from exc


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# config-file keys mirror the long flags; each maps to (dest, converter)
_CONFIG_KEYS = {
    "group": ("group", _group),
    "n": ("n", int),
    "m": ("m", float),
    "x": ("x", float),
    "mu": ("mu", float),
    "T": ("T", float),
    "T-grid": ("T_grid", _grid),
    "mu-grid": ("mu_grid", _grid),
    "shots": ("shots", int),
    "max-evals": ("max_evals", int),
    "mesh-init": ("mesh_init", float),
    "mesh-final": ("mesh_final", float),
    "noise": ("noise", str),
    "seed": ("seed", int),
    "trials": ("trials", int),
    "jobs": ("jobs", int),
    "ops": ("ops", int),
    "tol": ("tol", float),
    "out": ("out", str),
    "warm-start": ("warm_start", str),
    "merged": ("merged", _bool),
    "native": ("native", _bool),
}


def _load_config_file(path: str) -> dict[str, object]:
    """Flat key=value lines; '#' starts a comment; keys mirror long flags."""
    values: dict[str, object] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SystemExit(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(2)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            print(f"{path}:{lineno}: unknown config key {key!r}",
                  file=sys.stderr)
            raise SystemExit(2)
        dest, conv = _CONFIG_KEYS[key]
        try:
            values[dest] = conv(val)
        except (argparse.ArgumentTypeError, ValueError) as exc:
            print(f"{path}:{lineno}: {exc}", file=sys.stderr)
            raise SystemExit(2) from exc
    return values


def _resolve_seed(args: argparse.Namespace) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(os.environ.get(SEED_ENV_VAR, "0"))


def _jsonable(value: object) -> object:
    if isinstance(value, Group):
        return value.value
    if isinstance(value, np.ndarray):
        return [float(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, tuple):
        return list(value)
    return value


def _write_manifest(
    args: argparse.Namespace, seed: int, outputs: list[Path], started: float
) -> None:
    """Pair every produced file set with one reproducibility record."""
    config = {
        k: _jsonable(v)
        for k, v in sorted(vars(args).items())
        if k not in ("config",) and not callable(v)
    }
    manifest = {
        "subcommand": args.subcommand,
        "config": config,
        "seed": seed,
        "version": __version__,
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": time.time() - started,
    }
    path = outputs[0].with_suffix(".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _emit(text: str, out: str | None) -> list[Path]:
    """Print to stdout, or write to a file and report the path."""
    if out is None:
        print(text)
        return []
    path = Path(out)
    path.write_text(text if text.endswith("\n") else text + "\n")
    return [path]


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------


def cmd_hamiltonian(args: argparse.Namespace) -> int:
    started = time.time()
    params = ModelParams(args.group, args.n, mass=args.m,
                         coupling_x=args.x, chem_potential=args.mu)
    h = build_hamiltonian(params)
    payload = {
        "group": args.group.value,
        "N": args.n,
        "m": args.m,
        "x": args.x,
        "mu": args.mu,
        "n_qubits": h.n_qubits,
        "terms": h.full.to_json_terms(),
    }
    outputs = _emit(json.dumps(payload, indent=2), args.out)
    if outputs:
        _write_manifest(args, _resolve_seed(args), outputs, started)
    return 0


def cmd_projector_verify(args: argparse.Namespace) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    params = ModelParams(args.group, args.n)
    kern = build_kernel(args.group, args.n)
    proj = brute_force_singlet_projector(params)
    rank = int(round(float(np.real(np.trace(proj)))))

    rng = np.random.default_rng(seed)
    residual = 0.0
    for _ in range(args.ops):
        om = random_gauge_invariant_operator(params, rng)
        trace_kernel = float(np.real(np.diag(om) @ kern.diagonal))
        trace_projector = float(np.real(np.trace(om @ proj)))
        residual = max(residual, abs(trace_kernel - trace_projector))

    report: dict[str, object] = {
        "group": args.group.value,
        "N": args.n,
        "kernel_trace": kern.trace,
        "oracle_singlet_dimension": rank,
        "trace_identity_operators": args.ops,
        "max_trace_identity_residual": residual,
    }
    ok = residual < args.tol and abs(kern.trace - rank) < 1e-6

    if args.n == 2:
        reference = reference_kernel_decomposition(args.group)
        computed = {
            s.label(): c.real for c, s in kern.pauli_decomposition().items()
        }
        tol = _COEFF_TOL[args.group]
        comparison = []
        worst = 0.0
        for label in sorted(set(reference) | set(computed)):
            want = reference.get(label, 0.0)
            got = computed.get(label, 0.0)
            err = abs(got - want)
            worst = max(worst, err)
            if abs(want) > 0 or err > tol:
                comparison.append(
                    {"pauli": label, "reference": want, "computed": got})
        report["coefficient_table"] = comparison
        report["max_coefficient_error"] = worst
        report["coefficient_tolerance"] = tol
        ok = ok and worst < tol

    report["verified"] = ok
    outputs = _emit(json.dumps(report, indent=2), args.out)
    if outputs:
        _write_manifest(args, seed, outputs, started)
    return 0 if ok else 1


def cmd_circuit_stats(args: argparse.Namespace) -> int:
    started = time.time()
    # a generic angle: at special values (0, multiples of pi/2) the peephole
    # cancels rotations and the reported counts would not reflect the template
    phi = np.full(phi_parameter_count(args.group), 0.7)
    reduced = reduced_system_circuit(args.group, phi,
                                     merged_measurement=args.merged)
    circuit = reduced.full_circuit()
    if args.native:
        circuit = transpile_to_native(circuit)
    payload = {
        "group": args.group.value,
        "merged_measurement": args.merged,
        "native": args.native,
        "n_qubits": circuit.n_qubits,
        "gate_census": circuit.census(),
        "ms_count": circuit.ms_count,
        "ms_count_full_template": reduced.full_ms_count,
        "ms_count_operational": reduced.operational_ms_count,
    }
    outputs = _emit(json.dumps(payload, indent=2), args.out)
    if outputs:
        _write_manifest(args, _resolve_seed(args), outputs, started)
    return 0


def _sweep_chunk(
    task: tuple[ModelParams, tuple[float, ...], tuple[float, ...]]
) -> tuple[dict, ...]:
    params, temps, mus = task
    return phase_sweep(params, list(temps), list(mus)).rows


def cmd_ed_sweep(args: argparse.Namespace) -> int:
    started = time.time()
    params = ModelParams(args.group, args.n, mass=args.m, coupling_x=args.x)
    temps = _grid_values(args.T_grid)
    mus = _grid_values(args.mu_grid)
    if args.jobs > 1:
        chunks = np.array_split(temps, min(args.jobs, len(temps)))
        tasks = [
            (params, tuple(float(t) for t in chunk), tuple(float(m) for m in mus))
            for chunk in chunks if len(chunk)
        ]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows: list[dict] = []
            for part in pool.map(_sweep_chunk, tasks):
                rows.extend(part)
        table = PhaseTable(
            params=params,
            temperatures=tuple(float(t) for t in temps),
            chem_potentials=tuple(float(m) for m in mus),
            rows=tuple(rows),
        )
    else:
        table = phase_sweep(params, temps, mus)
    path = Path(args.out)
    path.write_text(table.to_csv())
    _write_manifest(args, _resolve_seed(args), [path], started)
    return 0


def _load_warm_start(path: str) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read warm-start file {path}: {exc}", file=sys.stderr)
        raise SystemExit(2) from exc
    if "point" in data:
        return np.asarray(data["point"], dtype=float)
    try:
        return np.concatenate([
            np.asarray(data["optimal_theta"], dtype=float),
            np.asarray(data["optimal_phi"], dtype=float),
        ])
    except KeyError as exc:
        print(f"warm-start file {path} has neither 'point' nor a result "
              "('optimal_theta'/'optimal_phi')", file=sys.stderr)
        raise SystemExit(2) from exc


def _trace_csv(trace: tuple[float, ...]) -> str:
    lines = ["eval,cost"]
    lines += [f"{i},{v:.12g}" for i, v in enumerate(trace, 1)]
    return "\n".join(lines) + "\n"


def cmd_vqe(args: argparse.Namespace) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    noise = NoiseModel() if args.noise == "paper" else None
    cfg = VqeConfig(
        args.group,
        temperature=args.T,
        chem_potential=args.mu,
        mass=args.m,
        coupling_x=args.x,
        shots_per_basis=args.shots,
        max_evals=args.max_evals,
        mesh_init=args.mesh_init,
        mesh_final=args.mesh_final,
        noise=noise,
        seed=seed,
    )
    warm = None
    if args.warm_start is not None:
        warm = _load_warm_start(args.warm_start)
        if args.mesh_init is None:
            # chained runs start near an optimum; poll from half the mesh
            cfg = dataclasses.replace(cfg, mesh_init=cfg.mesh_init / 2.0)

    prefix = Path(args.out)
    outputs: list[Path] = []
    try:
        if args.trials == 1:
            result = run_vqe(cfg, warm_start=warm)
            res_path = prefix.parent / (prefix.name + ".json")
            res_path.write_text(
                json.dumps(dataclasses.asdict(result), indent=2) + "\n")
            trace_path = prefix.parent / (prefix.name + ".trace.csv")
            trace_path.write_text(_trace_csv(result.free_energy_trace))
            outputs = [res_path, trace_path]
        else:
            summary = run_noisy_ensemble(
                cfg, trials=args.trials, jobs=args.jobs, warm_start=warm)
            lo, hi = summary.tukey_interval()
            payload = {
                "trials": args.trials,
                "chi0_values": list(summary.chi0_values),
                "median": summary.median,
                "q1": summary.q1,
                "q3": summary.q3,
                "iqr": summary.iqr,
                "tukey_low": lo,
                "tukey_high": hi,
            }
            res_path = prefix.parent / (prefix.name + ".ensemble.json")
            res_path.write_text(json.dumps(payload, indent=2) + "\n")
            rows = ["trial,chi0_mean,chi0_std,evals_used,converged"]
            rows += [
                f"{i},{r.chi0_mean:.12g},{r.chi0_std:.12g},"
                f"{r.evals_used},{int(r.converged)}"
                for i, r in enumerate(summary.results, 1)
            ]
            trials_path = prefix.parent / (prefix.name + ".trials.csv")
            trials_path.write_text("\n".join(rows) + "\n")
            outputs = [res_path, trials_path]
    except UnstableEstimateError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 1
    _write_manifest(args, seed, outputs, started)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermolgt",
        description="Thermal lattice-gauge simulator: exact sweeps, "
                    "charge-singlet projection, and thermal VQE.",
    )
    parser.add_argument("--config", metavar="FILE",
                        help="flat key=value file mirroring the long flags")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p: argparse.ArgumentParser, with_n: bool = True) -> None:
        p.add_argument("--group", type=_group, default=Group.SU2,
                       help="su2 or su3")
        if with_n:
            p.add_argument("--n", type=int, default=2,
                           help="number of sites (register pairs)")
        p.add_argument("--seed", type=int, default=None,
                       help=f"rng seed (default: ${SEED_ENV_VAR} or 0)")
        p.add_argument("--out", default=None, help="output path")
        p.add_argument("--config", help=argparse.SUPPRESS)

    ham = sub.add_parser("hamiltonian", help="model term-list utilities")
    ham.add_argument("action", choices=["dump"])
    add_common(ham)
    ham.add_argument("--m", type=float, default=0.5)
    ham.add_argument("--x", type=float, default=1.0)
    ham.add_argument("--mu", type=float, default=0.0)
    ham.set_defaults(func=cmd_hamiltonian)

    ver = sub.add_parser("projector", help="charge-singlet kernel checks")
    ver.add_argument("action", choices=["verify"])
    add_common(ver)
    ver.add_argument("--ops", type=int, default=50,
                     help="random invariant operators for the trace identity")
    ver.add_argument("--tol", type=float, default=1e-8,
                     help="max allowed trace-identity residual")
    ver.set_defaults(func=cmd_projector_verify)

    circ = sub.add_parser("circuit", help="prepared-circuit statistics")
    circ.add_argument("action", choices=["stats"])
    add_common(circ, with_n=False)
    circ.add_argument("--merged", action="store_true", default=False,
                      help="fold the hopping measurement into the circuit")
    circ.add_argument("--native", action="store_true", default=False,
                      help="count gates after transpiling to MS/RX/RZ")
    circ.set_defaults(func=cmd_circuit_stats)

    sweep = sub.add_parser("ed-sweep", help="exact phase-diagram table")
    add_common(sweep)
    sweep.add_argument("--m", type=float, default=0.5)
    sweep.add_argument("--x", type=float, default=1.0)
    sweep.add_argument("--T-grid", type=_grid, default=None,
                       metavar="START:STOP:COUNT")
    sweep.add_argument("--mu-grid", type=_grid, default=None,
                       metavar="START:STOP:COUNT")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.set_defaults(func=cmd_ed_sweep, out="ed_sweep.csv")

    vqe = sub.add_parser("vqe", help="thermal VQE run or noisy ensemble")
    add_common(vqe, with_n=False)
    vqe.add_argument("--T", type=float, default=None, help="temperature")
    vqe.add_argument("--mu", type=float, default=0.0)
    vqe.add_argument("--m", type=float, default=0.5)
    vqe.add_argument("--x", type=float, default=1.0)
    vqe.add_argument("--shots", type=int, default=None,
                     help="shots per basis setting (0 = exact)")
    vqe.add_argument("--max-evals", type=int, default=None)
    vqe.add_argument("--mesh-init", type=float, default=None)
    vqe.add_argument("--mesh-final", type=float, default=0.01)
    vqe.add_argument("--noise", choices=["off", "paper"], default="off")
    vqe.add_argument("--warm-start", metavar="FILE", default=None,
                     help="JSON result (or {'point': [...]}) to start from")
    vqe.add_argument("--trials", type=int, default=1)
    vqe.add_argument("--jobs", type=int, default=1)
    vqe.set_defaults(func=cmd_vqe, out="vqe_run")

    return parser


def _validate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    sub = args.subcommand
    if sub == "ed-sweep":
        if args.T_grid is None or args.mu_grid is None:
            parser.error("ed-sweep requires --T-grid and --mu-grid")
        if args.jobs < 1:
            parser.error("--jobs must be >= 1")
    if sub == "vqe":
        if args.T is None:
            parser.error("vqe requires --T")
        if args.trials < 1:
            parser.error("--trials must be >= 1")
        if args.jobs < 1:
            parser.error("--jobs must be >= 1")
    if sub == "projector" and args.ops < 1:
        parser.error("--ops must be >= 1")


def _apply_config_defaults(
    parser: argparse.ArgumentParser, values: dict[str, object]
) -> None:
    """Install config-file values as parser-level defaults.

    They must land on the subparsers: a subcommand parses into its own
    namespace, so its argument defaults would silently shadow anything set
    only on the top-level parser.  Parser-level defaults still lose to
    flags given explicitly, which is the override order we want.
    """
    sub_action = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    for sp in set(sub_action.choices.values()):
        dests = {a.dest for a in sp._actions}
        sp.set_defaults(**{k: v for k, v in values.items() if k in dests})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)

    parser = build_parser()
    if known.config is not None:
        _apply_config_defaults(parser, _load_config_file(known.config))
    args = parser.parse_args(argv)
    _validate(args, parser)

    try:
        return int(args.func(args))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
