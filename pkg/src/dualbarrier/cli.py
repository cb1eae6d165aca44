"""Command-line interface: ``dualbarrier {sparsify,grid,recover,verify}``.

Every subcommand reads a JSON config (``--config``), writes plain CSV/JSON
into ``--out`` and exits with 0 on success, 2 on a configuration error,
3 when selection fails and 4 when a certificate does not hold.
"""

import argparse
import copy
import csv
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .barrier import barrier_from_dict
from .recovery import end_to_end_recover, power_law_target
from .sparsifier import SelectionConfig, SelectionError, acceptance_mask, initialize, select
from .systems import (
    IndexOrdering,
    TruncationPlan,
    UnivariateBasis,
    build_constructive_system,
    build_frame_system,
    build_threshold_system,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_SELECTION, EXIT_CERTIFICATE = 0, 2, 3, 4

log = logging.getLogger("dualbarrier")

_FRAME = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "m", "N"],
    "properties": {
        "kind": {"const": "frame"},
        "m": {"type": "integer", "minimum": 1},
        "N": {"type": "integer", "minimum": 1},
        "scaling": {"enum": ["rank_power", "inverse_sigma", "unit"]},
        "t": {"type": "number", "exclusiveMinimum": 0},
        "include_constant": {"type": "boolean"},
    },
}
_CONSTRUCTIVE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "theta", "alpha0", "m"],
    "properties": {
        "kind": {"const": "constructive"},
        "theta": {"type": "number", "minimum": 0.5},
        "alpha0": {"type": "number"},
        "m": {"type": "integer", "minimum": 1},
        "n_rule": {"enum": ["2m", "m"]},
        "adjoin_constant": {"type": "boolean"},
    },
}
_THRESHOLD = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "R", "R_prime"],
    "properties": {
        "kind": {"const": "threshold"},
        "R": {"type": "number", "minimum": 1},
        "R_prime": {"type": "number", "minimum": 1},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["basis", "mode"],
    "properties": {
        "basis": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["fourier", "legendre", "chebyshev"]},
                "dimension": {"enum": [1, 2]},
                "theta": {"type": "number", "minimum": 0.5},
                "c_eta": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "ordering": {"enum": ["isotropic", "mixed", "univariate"]},
        "mode": {"oneOf": [_FRAME, _CONSTRUCTIVE, _THRESHOLD]},
        "selection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "epsilon_mode": {"oneOf": [{"enum": ["exact", "relaxed"]},
                                           {"type": "number", "minimum": 0}]},
                "weight_rule": {"enum": ["minimal", "maximal", "midpoint"]},
                "retest_previous": {"type": "boolean"},
                "oracle": {"enum": ["finite_scan", "iid_measure", "christoffel"]},
                "candidate_grid": {"type": "integer", "minimum": 1},
                "max_proposals": {"type": "integer", "minimum": 1},
                "dense_threshold": {"type": "integer", "minimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "snapshot_every": {"type": "integer", "minimum": 1},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "resolution": {"type": "integer", "minimum": 1},
                "iteration": {"type": "integer", "minimum": 0},
            },
        },
        "target": {
            "type": "object",
            "additionalProperties": False,
            "required": ["alpha"],
            "properties": {
                "alpha": {"type": "number"},
                "beta": {"type": "number", "minimum": 0},
                "support_factor": {"type": "integer", "minimum": 1},
                "noise": {"type": "number", "minimum": 0},
                "in_space": {"type": "boolean"},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "points_csv": {"type": "string"},
                "report_json": {"type": "string"},
                "trace_csv": {"type": "string"},
                "grid_csv": {"type": "string"},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    },
}

DEFAULT_OUTPUTS = {"points_csv": "points.csv", "report_json": "report.json",
                   "trace_csv": "trace.csv", "grid_csv": "grid.csv"}


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

def load_config(path, seed=None):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return validate_config(cfg, seed)


def validate_config(cfg, seed=None):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("seed", 0)
    return cfg


def _basis(cfg):
    b = cfg["basis"]
    return UnivariateBasis(b["family"], b.get("theta"), b.get("c_eta"))


def _ordering(cfg, basis):
    dim = cfg["basis"].get("dimension", 1)
    kind = cfg.get("ordering", "univariate" if dim == 1 else "isotropic")
    return IndexOrdering(kind, dim, basis.integer_frequencies)


def build_system(cfg):
    """Function system and (for constructive mode) truncation plan described by ``cfg``."""
    basis = _basis(cfg)
    ordering = _ordering(cfg, basis)
    mode = cfg["mode"]
    c_eta = cfg["basis"].get("c_eta")
    plan = None
    if mode["kind"] == "frame":
        system = build_frame_system(basis, ordering, mode["m"], mode["N"],
                                    scaling=mode.get("scaling", "rank_power"),
                                    t=mode.get("t", 1.0),
                                    include_constant=mode.get("include_constant", False),
                                    c_eta=c_eta)
    elif mode["kind"] == "constructive":
        plan = TruncationPlan(mode.get("theta", basis.theta), mode["alpha0"], mode["m"])
        system = build_constructive_system(basis, ordering, plan,
                                           adjoin_constant=mode.get("adjoin_constant", True),
                                           c_eta=c_eta)
    else:
        system = build_threshold_system(basis, ordering, mode["R"], mode["R_prime"], c_eta=c_eta)
    return system, plan


def cell_centers(resolution, dim):
    x = (np.arange(resolution) + 0.5) / resolution
    if dim == 1:
        return x[:, None]
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return np.stack([X1.reshape(-1), X2.reshape(-1)], axis=1)


def selection_config(cfg, system, plan=None):
    sel = cfg.get("selection", {})
    if "n" in sel:
        n = sel["n"]
    elif plan is not None and cfg["mode"].get("n_rule", "2m") == "m":
        n = system.m
    else:
        n = 2 * system.m
    oracle = sel.get("oracle", "christoffel" if plan is not None else "iid_measure")
    candidates = None
    if oracle == "finite_scan":
        candidates = cell_centers(sel.get("candidate_grid", 100), system.dim)
    return SelectionConfig(
        n=n,
        epsilon_mode=sel.get("epsilon_mode"),
        weight_rule=sel.get("weight_rule", "minimal"),
        retest_previous=sel.get("retest_previous", False),
        oracle=oracle,
        candidates=candidates,
        seed=cfg["seed"],
        max_proposals=sel.get("max_proposals"),
        dense_threshold=sel.get("dense_threshold", 256),
        batch=sel.get("batch", 32),
        snapshot_every=sel.get("snapshot_every"),
    )


# ------------------------------------------------------------------ output

def _fmt(x):
    return "%.17g" % x


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer, str)) else _fmt(v) for v in row])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _outputs(cfg, out):
    names = dict(DEFAULT_OUTPUTS, **cfg.get("outputs", {}))
    out.mkdir(parents=True, exist_ok=True)
    return {k: out / v for k, v in names.items()}


def _run_report(cfg, system, run):
    d = run.to_dict()
    d["steps"] = run.steps
    d["snapshots"] = run.snapshots
    return {
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "system": {"m": system.m, "N": system.N, "dimension": system.dim,
                   "trace_j": system.trace_j, "lambda_max_j": system.lambda_max_j,
                   "effective_dimension": system.effective_dimension, "meta": system.meta},
        "run": d,
    }


def _write_run(cfg, system, run, paths):
    dim = system.dim
    header = [f"x{i + 1}" for i in range(dim)] + ["weight"]
    write_csv(paths["points_csv"], header,
              [list(p) + [w] for p, w in zip(run.points, run.weights)])
    write_csv(paths["trace_csv"], ["iteration", "phi", "psi"],
              [[i, "" if ph is None else _fmt(ph), "" if ps is None else _fmt(ps)]
               for i, (ph, ps) in enumerate(zip(run.phi_trace, run.psi_trace))])
    write_json(paths["report_json"], _run_report(cfg, system, run))


# ----------------------------------------------------------------- commands

def cmd_sparsify(cfg, out):
    system, plan = build_system(cfg)
    sc = selection_config(cfg, system, plan)
    paths = _outputs(cfg, out)
    try:
        run = select(sc, system)
    except SelectionError as exc:
        log.error("selection failed: %s", exc)
        if exc.run is not None:
            rep = _run_report(cfg, system, exc.run)
            rep["error"] = str(exc)
            write_json(paths["report_json"], rep)
        return EXIT_SELECTION
    _write_run(cfg, system, run, paths)
    if not run.certificate.passed:
        log.error("certification failed: %s", run.certificate.to_dict())
        return EXIT_CERTIFICATE
    return EXIT_OK


def _state_from_report(path, iteration):
    with open(path, encoding="utf-8") as fh:
        rep = json.load(fh)
    for snap in rep["run"].get("snapshots", []):
        if snap["iteration"] == iteration:
            return barrier_from_dict(snap["lower"]), barrier_from_dict(snap["upper"])
    raise ConfigError(f"report {path} holds no snapshot for iteration {iteration}")


def cmd_grid(cfg, out, run_path=None):
    system, plan = build_system(cfg)
    sc = selection_config(cfg, system, plan)
    g = cfg.get("grid", {})
    res = g.get("resolution", 64)
    target = g.get("iteration", sc.n)
    if target > sc.n:
        raise ConfigError(f"grid iteration {target} exceeds n = {sc.n}")
    state = {}
    if target == 0:
        lower, upper, _ = initialize(sc, system)
        state["pair"] = (lower, upper)
    elif run_path is not None:
        state["pair"] = _state_from_report(run_path, target)
    else:
        def grab(it, lower, upper):
            if it == target:
                state["pair"] = (barrier_from_dict(lower.to_dict()),
                                 barrier_from_dict(upper.to_dict()))
        try:
            select(sc, system, certify_run=False, observer=grab)
        except SelectionError as exc:
            if "pair" not in state:
                log.error("selection failed before iteration %d: %s", target, exc)
                return EXIT_SELECTION
    lower, upper = state["pair"]
    X = cell_centers(res, system.dim)
    mask = acceptance_mask(lower, upper, system, X)
    paths = _outputs(cfg, out)
    header = [f"x{i + 1}" for i in range(system.dim)] + ["accepted"]
    write_csv(paths["grid_csv"], header, [list(x) + [int(a)] for x, a in zip(X, mask)])
    return EXIT_OK


def cmd_recover(cfg, out):
    if cfg["mode"]["kind"] != "constructive":
        raise ConfigError("recover needs a constructive mode")
    if "target" not in cfg:
        raise ConfigError("recover needs a target section")
    basis = _basis(cfg)
    ordering = _ordering(cfg, basis)
    mode, tgt = cfg["mode"], cfg["target"]
    plan = TruncationPlan(mode.get("theta", basis.theta), mode["alpha0"], mode["m"])
    rng = np.random.default_rng([cfg["seed"], 2])
    K = tgt.get("support_factor", 4) * plan.N
    if tgt.get("in_space", False):
        K = plan.m
    target = power_law_target(basis, ordering, tgt["alpha"], K, rng, tgt.get("beta", 0.0))
    system, _ = build_system(cfg)
    sc = selection_config(cfg, system, plan)
    try:
        report = end_to_end_recover(basis, ordering, plan, target, alpha=tgt["alpha"],
                                    beta=tgt.get("beta", 0.0), seed=cfg["seed"],
                                    noise=tgt.get("noise", 0.0), n=sc.n, selection=sc)
    except SelectionError as exc:
        log.error("selection failed: %s", exc)
        return EXIT_SELECTION
    paths = _outputs(cfg, out)
    write_json(paths["report_json"], {"schema_version": SCHEMA_VERSION, "config": cfg,
                                      "recovery": report.to_dict()})
    return EXIT_OK if report.passed else EXIT_CERTIFICATE


def cmd_verify(cfg, out):
    from .verify import (
        OracleReport,
        acceptance_rate_probe,
        certificate_oracle,
        discretization_check,
        eig_extremes_bruteforce,
        sturm_eigenvalues,
    )

    system, plan = build_system(cfg)
    sc = selection_config(cfg, system, plan)
    try:
        run = select(sc, system)
    except SelectionError as exc:
        log.error("selection failed: %s", exc)
        return EXIT_SELECTION
    rng = np.random.default_rng([cfg["seed"], 3])
    reports = [certificate_oracle(run, system)]
    # lower side is the certified bound; the upper side uses the observed top eigenvalue
    reports.append(discretization_check(
        run.points, run.weights, system, 200, rng,
        lower=math.sqrt(max(run.params.target_lower_factor, 0.0)) * (1 - 1e-9),
        upper=math.sqrt(_lower_gram_max(run, system)) * (1 + 1e-9)))
    G = np.asarray(system.gram)
    jac = eig_extremes_bruteforce(G)
    st = sturm_eigenvalues(G)
    dev = max(abs(jac[0] - st[0]), abs(jac[1] - st[-1]))
    reports.append(OracleReport("jacobi_vs_sturm", dev, dev, dev < 1e-8, 1))
    if sc.oracle == "christoffel":
        reports.append(acceptance_rate_probe(sc, system, probes=100, seed=cfg["seed"]))
    paths = _outputs(cfg, out)
    ok = all(r.passed for r in reports)
    write_json(paths["report_json"], {"schema_version": SCHEMA_VERSION, "config": cfg,
                                      "oracles": [r.to_dict() for r in reports], "pass": ok})
    return EXIT_OK if ok else EXIT_CERTIFICATE


def _lower_gram_max(run, system):
    from .sparsifier import lower_gram_sum

    G = lower_gram_sum(run.points, run.weights, system, raw=False)
    return float(np.linalg.eigvalsh(0.5 * (G + G.conj().T))[-1])


# -------------------------------------------------------------------- main

def build_parser():
    parser = argparse.ArgumentParser(prog="dualbarrier", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("sparsify", "select points and weights"),
                        ("grid", "export the acceptance region on a grid"),
                        ("recover", "end-to-end least-squares recovery"),
                        ("verify", "run the oracle battery")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "grid":
            p.add_argument("--run", default=None,
                           help="report JSON with barrier snapshots to use instead of rerunning")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        if args.command == "sparsify":
            return cmd_sparsify(cfg, out)
        if args.command == "grid":
            return cmd_grid(cfg, out, args.run)
        if args.command == "recover":
            return cmd_recover(cfg, out)
        return cmd_verify(cfg, out)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        log.error("configuration rejected: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
