"""Batch runner: ``davies-lab <suite> --config run.json``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from functools import partial
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from . import lab, opcore
from .davies import MAX_STATE_DIM, build_davies, spectral_gap
from .errors import CapabilityError, ConfigError, DaviesLabError
from .lattice import Lattice, build_coarse_graining, verify_coarse_graining
from .mcmi import Partition4, chain_family, decay_scan
from .models import LocalHamiltonian, build_model, gibbs_state, predicted_mcmi_rate
from .w1 import basis_states, gap_state, w1_distance, witness_is_feasible

SCHEMA_VERSION = 1
SUITES = ("coarse-grain", "mcmi-scan", "ineq", "gap", "mix", "w1", "bounds")
COMMANDS = {"coarse-grain": "coarse-grain", "mcmi-scan": "mcmi-scan", "ineq-check": "ineq",
            "gap": "gap", "mix-time": "mix", "w1": "w1", "bounds": "bounds"}
CHECKS = ("weak_entropy_factorization", "mlsi_alike", "weak_at", "weak_tc")

EXIT_OK, EXIT_VERDICT, EXIT_SCHEMA, EXIT_CAPABILITY = 0, 1, 2, 3

_site = {"oneOf": [{"type": "integer"}, {"type": "array", "items": {"type": "integer"}}]}
_sites = {"type": "array", "items": _site}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "seed", "model"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "required": ["type", "D", "L"],
            "properties": {
                "type": {"enum": ["ising", "pauli", "terms"]},
                "D": {"type": "integer", "minimum": 1, "maximum": 3},
                "L": {"type": "integer", "minimum": 0},
                "metric": {"enum": ["chebyshev", "taxicab"]},
                "d": {"type": "integer", "minimum": 2},
                "boundary": {"const": "open"},
                "sites": _sites,
                "couplings": {"oneOf": [{"type": "number"}, {"type": "array"}]},
                "fields": {"oneOf": [{"type": "number"}, {"type": "array"}]},
                "terms": {"type": "array"},
                "range": {"type": "integer", "minimum": 0},
            },
        },
        "betas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "suites": {"type": "array", "items": {"enum": list(SUITES)}, "uniqueItems": True},
        "coarse_graining": {
            "type": "object", "additionalProperties": False, "required": ["k", "c", "ell"],
            "properties": {"k": {"type": "integer", "minimum": 1},
                           "c": {"type": "integer", "minimum": 1},
                           "ell": {"type": "integer", "minimum": 1},
                           "r": {"type": "integer", "minimum": 1},
                           "D": {"type": "integer", "minimum": 1, "maximum": 3},
                           "L": {"type": "integer", "minimum": 0}},
        },
        "partitions": {
            "type": "object", "additionalProperties": False,
            "properties": {"family": {"const": "chain"},
                           "start": {"type": "integer", "minimum": 0},
                           "condition_beyond": {"type": "boolean"}},
        },
        "ineq": {
            "type": "object", "additionalProperties": False,
            "properties": {"instances": {"type": "integer", "minimum": 0},
                           "checks": {"type": "array", "items": {"enum": list(CHECKS)}},
                           "region": _sites,
                           "partition": {"type": "object", "additionalProperties": False,
                                         "required": ["A", "C"],
                                         "properties": {"A": _sites, "C": _sites, "D": _sites}},
                           "reference": {"enum": ["gibbs", "product"]}},
        },
        "mix": {
            "type": "object", "additionalProperties": False,
            "properties": {"eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                           "horizon": {"type": "number", "exclusiveMinimum": 0}},
        },
        "w1": {
            "type": "object", "additionalProperties": False,
            "properties": {"pairs": {"type": "integer", "minimum": 0},
                           "method": {"enum": ["auto", "sdp", "lp", "bounds"]}},
        },
        "bounds": {
            "type": "object", "additionalProperties": False,
            "properties": {"inputs": {"type": "object",
                                      "propertyNames": {"enum": list(lab.SYMBOLS)},
                                      "additionalProperties": {"type": "number"}},
                           "formulas": {"type": "array", "items": {"enum": list(lab.FORMULAS)}},
                           "polylog": {"type": "object", "required": ["N", "eps"],
                                       "properties": {"N": {"type": "array",
                                                            "items": {"type": "number"}},
                                                      "eps": {"type": "number"}}}},
        },
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "betas": [1.0],
    "suites": list(SUITES),
    "partitions": {"family": "chain", "start": 0, "condition_beyond": True},
    "ineq": {"instances": 20, "checks": list(CHECKS), "reference": "gibbs"},
    "mix": {"eps": [0.1, 0.01, 0.001], "horizon": 1e4},
    "w1": {"pairs": 3, "method": "auto"},
}


class SchemaError(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def load_config(path: str | Path, seed_override: int | None = None) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError("<file>", str(exc)) from None
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(raw),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        where = "/" + "/".join(map(str, err.absolute_path))
        raise SchemaError(where, err.message)
    cfg = json.loads(json.dumps(raw))
    for key, value in DEFAULTS.items():
        if isinstance(value, dict):
            cfg[key] = {**value, **cfg.get(key, {})}
        else:
            cfg.setdefault(key, value)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    return cfg


def config_digest(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# -- output ------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _beta_tag(beta: float) -> str:
    return repr(float(beta))


# -- suites ------------------------------------------------------------------

class Run:
    def __init__(self, cfg: dict, out: Path, jobs: int):
        self.cfg, self.out, self.jobs = cfg, out, jobs
        self.files: list[Path] = []
        self.failures: list[str] = []
        self._model: LocalHamiltonian | None = None

    @property
    def model(self) -> LocalHamiltonian:
        if self._model is None:
            self._model = build_model(self.cfg["model"])
            if self._model.register.dim > MAX_STATE_DIM:
                raise CapabilityError(f"state dimension {self._model.register.dim} exceeds "
                                      f"{MAX_STATE_DIM}")
        return self._model

    def rng(self, *keys: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg["seed"], *keys])

    def csv(self, name: str, header, rows) -> None:
        path = self.out / name
        write_csv(path, header, rows)
        self.files.append(path)

    def json(self, name: str, doc) -> None:
        path = self.out / name
        write_json(path, doc)
        self.files.append(path)

    def coarse_graining(self, lattice: Lattice | None = None):
        spec = self.cfg.get("coarse_graining")
        if spec is None:
            raise ConfigError("this suite needs a 'coarse_graining' section")
        if lattice is None:
            lattice = self.model.lattice
            if "D" in spec or "L" in spec:
                lattice = Lattice(spec.get("D", lattice.D), spec.get("L", lattice.L), lattice.metric)
        return build_coarse_graining(lattice, spec["k"], spec["c"], spec["ell"], spec.get("r", 1))

    # each suite ------------------------------------------------------------

    def suite_coarse_grain(self) -> None:
        cg = self.coarse_graining()
        report = verify_coarse_graining(cg)
        D = cg.D
        header = [f"x{i}" for i in range(D)] + ["padded", "level", "cell", "role"]
        self.csv("coarse_graining.csv", header, cg.site_rows())
        self.json("coarse_graining_report.json",
                  {"flags": report.property_flags, "passed": report.passed,
                   "params": {"D": D, "L": cg.base.L, "k": cg.k, "c": cg.c, "ell": cg.ell}})
        if not report.passed:
            self.failures.append("coarse-grain")

    def suite_mcmi_scan(self) -> None:
        h = self.model
        part = self.cfg["partitions"]
        family = chain_family(h.sites, part.get("start", 0), part.get("condition_beyond", True))
        fits = []
        for beta in self.cfg["betas"]:
            fit, rows = decay_scan(h, beta, family)
            self.csv(f"mcmi_scan_beta{_beta_tag(beta)}.csv",
                     ["distance", "norm", "cmi", "mutual_information"],
                     [(r.distance, r.norm, r.cmi, r.mutual_information) for r in rows])
            try:
                pred = predicted_mcmi_rate(h, beta)
                predicted = {"mu_int": pred.mu_int, "admissible": pred.admissible, "threshold": pred.threshold}
            except CapabilityError:
                predicted = None
            fits.append({"beta": beta, "K": fit.K, "xi": fit.xi, "residual": fit.residual,
                         "status": fit.status, "dropped": list(fit.dropped), "predicted": predicted})
        self.json("mcmi_fit.json", {"fits": fits})

    def _partition(self, h: LocalHamiltonian) -> Partition4:
        spec = self.cfg["ineq"].get("partition")
        coords = lambda xs: [tuple([x]) if isinstance(x, int) else tuple(x) for x in xs]  # noqa: E731
        if spec is not None:
            return Partition4.of(h.sites, coords(spec["A"]), coords(spec["C"]), coords(spec.get("D", [])))
        if h.n_sites < 3:
            raise ConfigError("the default partition needs at least three sites")
        s = h.sites
        return Partition4.of(s, [s[0]], [s[2]], s[3:])

    def suite_ineq(self) -> None:
        h = self.model
        spec = self.cfg["ineq"]
        checks = spec["checks"]
        rows = []
        for bi, beta in enumerate(self.cfg["betas"]):
            sigma = gibbs_state(h, beta)
            ref = sigma if spec["reference"] == "gibbs" else lab.product_reference(sigma, h.d, h.n_sites)
            states = lab.random_states(h.register.dim, spec["instances"], int(self.rng(1, bi).integers(2**31)))
            if spec["reference"] == "product":
                # the true Gibbs state is the instance the corrupted reference is expected to fail on
                states = [sigma] + states
            verdicts: list[lab.InequalityVerdict] = []
            if "weak_entropy_factorization" in checks:
                fn = partial(lab.check_weak_entropy_factorization, sigma=ref, register=h.register,
                             p=self._partition(h))
                verdicts += lab.sweep(fn, states, self.jobs)
            if "mlsi_alike" in checks:
                region = self._region(h)
                setup = lab.prepare_mlsi_alike(h, beta, region, ref)
                verdicts += lab.sweep(partial(_mlsi, h=h, beta=beta, region=region, setup=setup),
                                      states, self.jobs)
            if "weak_at" in checks or "weak_tc" in checks:
                cg = self.coarse_graining(h.lattice)
                setup = lab.prepare_weak_at(h, beta, cg, ref)
                if "weak_at" in checks:
                    verdicts += lab.sweep(partial(_wat, h=h, beta=beta, cg=cg, setup=setup),
                                          states, self.jobs)
                if "weak_tc" in checks:
                    verdicts += lab.sweep(partial(_wtc, h=h, beta=beta, cover=setup.cover,
                                                  c2=setup.c2, sigma=ref), states, self.jobs)
            for v in verdicts:
                for item in (v, *v.sub):
                    rows.append((beta, item.inequality, item.left, item.right, item.slack,
                                 item.passed, v.digest))
                    if not item.passed:
                        self.failures.append(f"ineq:{item.inequality}:beta={beta}")
        self.csv("ineq_verdicts.csv", ["beta", "inequality", "left", "right", "slack", "pass", "digest"],
                 rows)

    def _region(self, h: LocalHamiltonian) -> list:
        region = self.cfg["ineq"].get("region")
        if region is None:
            return [h.sites[len(h.sites) // 2]]
        return [tuple([x]) if isinstance(x, int) else tuple(x) for x in region]

    def suite_gap(self) -> None:
        h = self.model
        rows = []
        for beta in self.cfg["betas"]:
            rep = spectral_gap(build_davies(h, h.sites, beta))
            rows.append((beta, rep.gap, rep.kernel_dim, rep.degenerate))
        self.csv("gap.csv", ["beta", "gap", "kernel_dim", "degenerate"], rows)

    def suite_mix(self) -> None:
        h = self.model
        spec = self.cfg["mix"]
        rows = []
        for beta in self.cfg["betas"]:
            gen = build_davies(h, h.sites, beta)
            states = basis_states(h.register.dim) + [gap_state(gen)]
            for eps in spec["eps"]:
                t = lab.trace_mixing_time(gen, states, eps, spec["horizon"])
                rows.append((beta, eps, t, len(states)))
        self.csv("mix.csv", ["beta", "eps", "t_mix_trace", "n_states"], rows)

    def suite_w1(self) -> None:
        h = self.model
        spec = self.cfg["w1"]
        rows = []
        for bi, beta in enumerate(self.cfg["betas"]):
            sigma = gibbs_state(h, beta)
            rng = self.rng(2, bi)
            for i in range(spec["pairs"]):
                rho = opcore.random_density(h.register.dim, rng)
                res = w1_distance(rho, sigma, h.d, h.n_sites, spec["method"])
                tn = opcore.trace_norm(rho - sigma)
                ok = witness_is_feasible(res, h.d, h.n_sites)
                sandwich = 0.5 * tn - 1e-9 <= res.lower and res.upper <= h.n_sites * tn + 1e-9
                if not (ok and sandwich):
                    self.failures.append(f"w1:beta={beta}:pair={i}")
                rows.append((beta, i, 0.5 * tn, res.lower, res.value, res.upper, h.n_sites * tn,
                             res.method, ok))
        self.csv("w1.csv", ["beta", "pair", "half_trace", "lower", "value", "upper", "n_trace",
                            "method", "witness_feasible"], rows)

    def suite_bounds(self) -> None:
        spec = self.cfg.get("bounds")
        if spec is None:
            raise ConfigError("the bounds suite needs a 'bounds' section")
        reports = lab.bound_calculators(spec.get("inputs", {}), spec.get("formulas"))
        self.json("bounds.json", {"reports": [r.as_dict() for r in reports]})
        self.csv("bounds.csv", ["formula", "value", "gate", "gate_threshold"],
                 [(r.formula, r.value, r.gate, r.gate_threshold) for r in reports])
        if "polylog" in spec:
            table = lab.polylog_table(spec["polylog"]["N"], spec["polylog"]["eps"], spec["inputs"])
            self.csv("bounds_polylog.csv", ["N", "bound", "polylog", "ratio"],
                     [(r["N"], r["bound"], r["polylog"], r["ratio"]) for r in table])


def _mlsi(rho, h, beta, region, setup):
    return lab.check_mlsi_alike(h, beta, region, rho, setup)


def _wat(rho, h, beta, cg, setup):
    return lab.check_weak_at(h, beta, cg, rho, setup=setup)


def _wtc(rho, h, beta, cover, c2, sigma):
    return lab.check_weak_tc(h, beta, cover, rho, c2, sigma)


# -- entry point -------------------------------------------------------------

def _versions() -> dict:
    import cvxpy
    import numba
    import scipy

    from importlib.metadata import PackageNotFoundError, version
    try:
        own = version("artifact")
    except PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "cvxpy": cvxpy.__version__, "numba": numba.__version__, "davies_lab": own}


def run(config: str | Path, command: str = "all", out: str | Path | None = None, jobs: int = 1,
        seed_override: int | None = None) -> int:
    try:
        cfg = load_config(config, seed_override)
    except SchemaError as exc:
        print(f"schema error at {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    out_dir = Path(out or cfg.get("output", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    suites = cfg["suites"] if command == "all" else [COMMANDS[command]]
    runner = Run(cfg, out_dir, jobs)
    timings, errors, code = {}, [], EXIT_OK
    for suite in suites:
        start = time.perf_counter()
        try:
            getattr(runner, "suite_" + suite.replace("-", "_"))()
        except CapabilityError as exc:
            errors.append({"suite": suite, "kind": "capability", "message": str(exc)})
            code = max(code, EXIT_CAPABILITY)
        except ConfigError as exc:
            errors.append({"suite": suite, "kind": "config", "message": str(exc)})
            code = max(code, EXIT_SCHEMA)
        except DaviesLabError as exc:
            errors.append({"suite": suite, "kind": type(exc).__name__, "message": str(exc)})
            code = max(code, EXIT_VERDICT)
        timings[suite] = time.perf_counter() - start
    if runner.failures and code == EXIT_OK:
        code = EXIT_VERDICT
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config_digest(cfg),
        "config": cfg,
        "command": command,
        "suites": suites,
        "versions": _versions(),
        "timings_seconds": timings,
        "files": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in runner.files},
        "failures": runner.failures,
        "errors": errors,
        "exit_code": code,
    }
    write_json(out_dir / "manifest.json", manifest)
    for err in errors:
        print(f"{err['suite']}: {err['kind']}: {err['message']}", file=sys.stderr)
    for fail in runner.failures:
        print(f"verdict failure: {fail}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="davies-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "all"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return EXIT_SCHEMA
    return run(args.config, args.command, args.out, args.jobs, args.seed_override)


if __name__ == "__main__":
    sys.exit(main())
