"""Acceptance suite: one test and one PASS/FAIL line per headline criterion.

Run on its own with ``pytest tests/test_acceptance.py -v`` (or ``-s`` to see the
lines as they happen); the lines are also repeated in the terminal summary.
"""

import collections
import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from davies_lab import cli, lab, opcore
from davies_lab.davies import (build_davies, conditional_expectation, depolarizing_expectation,
                               evolve, weight_scheme)
from davies_lab.errors import DomainError
from davies_lab.lattice import (Lattice, build_coarse_graining, valid_parameter_grid,
                               verify_coarse_graining)
from davies_lab.mcmi import (Partition4, chain_family, classical_mcmi, decay_scan, locality_bound, mcmi,
                             model_mcmi)
from davies_lab.models import (PAULI, effective_conditions, effective_hamiltonian, gibbs_state,
                               ising_chain, make_hamiltonian, pauli_model)
from davies_lab.w1 import w1_distance, witness_is_feasible
from oracles import (GATES, ORACLES, brute_classical_mcmi, depolarizing_trajectory,
                     ising_chain_probabilities, kron_all, oracle_gate, oracle_value, transfer_matrix_xi)

SLACK = 1e-7


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def min_slack(verdict) -> float:
    return min([verdict.slack, *(min_slack(v) for v in verdict.sub)])


def commuting_pauli(seed: int, n: int = 4):
    rng = np.random.default_rng(seed)
    lat = Lattice(1, n // 2)
    sites = [(-lat.L + i,) for i in range(n)]
    strings = [(rng.uniform(-1, 1), [sites[i], sites[i + 1]], "ZZ") for i in range(n - 1)]
    strings.append((rng.uniform(-1, 1), [sites[0], sites[-1]], "ZZ"))
    strings.append((rng.uniform(-1, 1), [sites[1]], "Z"))
    if n % 2 == 0:
        strings.pop()
        strings.append((rng.uniform(-1, 1), sites, "X" * n))
    return pauli_model(lat, strings, sites)


def test_coarse_graining_grid():
    start = time.perf_counter()
    counts, failures = collections.Counter(), []
    for D, L, k, c, ell in valid_parameter_grid():
        if D == 3 and ell not in (13, 15, 17):
            continue
        metrics = ("taxicab", "chebyshev") if k == 1 else ("taxicab",)
        for metric in metrics:
            rep = verify_coarse_graining(build_coarse_graining(Lattice(D, L, metric), k, c, ell))
            counts[D] += 1
            if not rep.passed:
                failures.append((D, L, k, c, ell, metric))
    elapsed = time.perf_counter() - start
    report("coarse-graining grid", not failures and elapsed < 60,
           f"{sum(counts.values())} instances {dict(counts)}, {len(failures)} failures, {elapsed:.1f}s")


def test_davies_construction():
    start = time.perf_counter()
    omegas = np.linspace(-6, 6, 25)
    kms = 0.0
    for beta in (0.0, 0.5, 2.0):
        w = weight_scheme("davies")
        kms = max(kms, float(np.max(np.abs(w(beta, -omegas) - np.exp(-beta * omegas) * w(beta, omegas))
                                    / w(beta, -omegas))))
    gns = 0.0
    models = [ising_chain(1, 1.0, 0.4), ising_chain(2, 1.0, 0.3), ising_chain(3, 1.0, -0.2),
              commuting_pauli(1, 3)]
    for h in models:
        for beta in (0.0, 0.7, 1.5):
            for region in (h.sites, h.sites[:1]):
                gen = build_davies(h, region, beta)
                # detailed balance of the lifted Heisenberg generator against the global state
                s, m = opcore.spre(gibbs_state(h, beta)), gen.lift()
                gns = max(gns, float(np.max(np.abs(s @ m.conj().T - m @ s))))
    flat = 0.0
    for n in (1, 2, 3):
        h = make_hamiltonian(Lattice(1, 1), [], 2) if n > 1 else make_hamiltonian(Lattice(1, 0), [], 2)
        sites = h.sites[:n]
        for beta in (0.0, 1.0):
            gen = build_davies(h, sites, beta)
            target = sum(depolarizing_expectation([s], sites, 2).lift(h.register) - np.eye(h.register.dim**2)
                         for s in sites)
            flat = max(flat, float(np.max(np.abs(gen.lift() - gen.chi0_min * target))))
    elapsed = time.perf_counter() - start
    ok = kms < 1e-14 and gns < 1e-9 and flat < 1e-10 and elapsed < 120
    report("Davies construction", ok,
           f"KMS rel {kms:.1e}, GNS {gns:.1e}, H=0 {flat:.1e}, {elapsed:.1f}s")


def test_conditional_expectations():
    routes, structural = 0.0, 0.0
    for n, beta in itertools.product((2, 3, 4), (0.3, 0.8, 1.5)):
        h = ising_chain(n, 1.0, 0.25)
        regions = [[s] for s in h.sites] + [h.sites[i:i + 2] for i in range(n - 1)]
        for region in regions:
            gen = build_davies(h, region, beta)
            diff = conditional_expectation(gen, "spectral").matrix - conditional_expectation(gen, "petz").matrix
            routes = max(routes, float(np.max(np.abs(diff))))
        reg = h.register
        sigma = gibbs_state(h, beta)
        lifted = {tuple(r): conditional_expectation(build_davies(h, r, beta)).lift(reg) for r in regions}
        for a, ea in lifted.items():
            structural = max(structural, np.max(np.abs(ea @ ea - ea)))
            structural = max(structural, np.max(np.abs((ea @ sigma.reshape(-1)).reshape(sigma.shape) - sigma)))
            x = opcore.random_density(reg.dim, np.random.default_rng(len(a)), 0.2)
            structural = max(structural, abs(np.trace((ea @ x.reshape(-1)).reshape(x.shape)) - 1))
            for b, eb in lifted.items():
                if set(a) < set(b):
                    structural = max(structural, np.max(np.abs(ea @ eb - eb)), np.max(np.abs(eb @ ea - eb)))
    ok = routes < 1e-8 and structural < 1e-9
    report("conditional expectations", ok, f"route gap {routes:.1e}, structural {structural:.1e}")


def test_inequality_sweeps():
    start = time.perf_counter()
    count = 1000
    worst = {}
    h = ising_chain(4, 1.0, 0.3)
    beta = 0.7
    sigma = gibbs_state(h, beta)
    states = lab.random_states(16, count, 2024)
    p = Partition4.of(h.sites, A={h.sites[0]}, C={h.sites[2]}, D={h.sites[3]})
    verdicts = [lab.check_weak_entropy_factorization(r, sigma, h.register, p) for r in states]
    worst["entropy factorization"] = min(min_slack(v) for v in verdicts)

    setup = lab.prepare_mlsi_alike(h, beta, [h.sites[1]], sigma)
    verdicts = [lab.check_mlsi_alike(h, beta, [h.sites[1]], r, setup) for r in states]
    worst["MLSI-alike"] = min(min_slack(v) for v in verdicts)

    h6 = ising_chain(6, 1.0, 0.2)
    cg6 = build_coarse_graining(Lattice(1, 3), 1, 1, 5)
    at6 = lab.prepare_weak_at(h6, 0.5, cg6)
    verdicts = [lab.check_weak_at(h6, 0.5, cg6, r, setup=at6)
                for r in lab.random_states(64, count, 2025)]
    worst["weak AT (N=6)"] = min(min_slack(v) for v in verdicts)

    cg4 = build_coarse_graining(Lattice(1, 2), 1, 1, 5)
    at4 = lab.prepare_weak_at(h, 0.5, cg4)
    sigma4 = gibbs_state(h, 0.5)
    verdicts = [lab.check_weak_tc(h, 0.5, at4.cover, r, at4.c2, sigma4) for r in states]
    worst["weak TC"] = min(min_slack(v) for v in verdicts)
    elapsed = time.perf_counter() - start
    ok = all(s >= -SLACK for s in worst.values()) and elapsed < 900
    detail = ", ".join(f"{k} min slack {v:.2e}" for k, v in worst.items())
    report("inequality sweeps", ok, f"{count} instances each; {detail}; {elapsed:.1f}s")


def test_mcmi():
    rng = np.random.default_rng(0)
    sites = [(i,) for i in range(4)]
    product = kron_all([opcore.random_density(2, rng, 0.3) for _ in range(4)])
    zero = mcmi(product, opcore.Register(tuple(sites)),
                Partition4.of(sites, A={sites[0]}, C={sites[2]}, D={sites[3]})).norm
    diag = 0.0
    for beta in (0.2, 0.7, 1.3):
        h = ising_chain(5, 0.9, 0.25)
        probs = ising_chain_probabilities(5, 0.9, 0.25, beta)
        for a, c, d in [([0], [4], [3]), ([0], [2], []), ([1], [3], [0, 4]), ([0, 1], [4], [3])]:
            part = Partition4.of(h.sites, A={h.sites[i] for i in a}, C={h.sites[i] for i in c},
                                 D={h.sites[i] for i in d})
            q = model_mcmi(h, beta, part).norm
            diag = max(diag, abs(q - brute_classical_mcmi(probs, a, c, d)),
                       abs(q - classical_mcmi(h, beta, part).value))
    ratios = {}
    for beta in (0.3, 0.6):
        h = ising_chain(10, 1.0)
        fit, _ = decay_scan(h, beta, chain_family(h.sites))
        ratios[beta] = fit.xi / transfer_matrix_xi(beta, 1.0) if fit.status == "ok" else float("nan")
    ok = zero == 0.0 and diag < 1e-9 and all(abs(r - 1) < 0.25 for r in ratios.values())
    report("MCMI", ok, f"product {zero}, diagonal gap {diag:.1e}, xi ratios "
           + ", ".join(f"beta={b}: {r:.3f}" for b, r in ratios.items()))


def test_w1_solver():
    sandwich, certified, instances = 0, 0, 0
    for seed in range(30):
        n = 1 + seed % 3
        dim = 2**n
        rng = np.random.default_rng(seed)
        rho, sigma = (opcore.random_density(dim, rng, 0.2) for _ in range(2))
        tn = opcore.trace_norm(rho - sigma)
        for method in ("sdp", "bounds"):
            res = w1_distance(rho, sigma, 2, n, method)
            instances += 1
            if not (0.5 * tn <= res.lower + 1e-12 and res.lower <= res.value <= res.upper
                    and res.upper <= n * tn + 1e-12):
                sandwich += 1
            certified += witness_is_feasible(res, 2, n)
    commuting = 0.0
    for seed in range(10):
        n = 2 + seed % 2
        rng = np.random.default_rng(100 + seed)
        p, q = rng.dirichlet(np.ones(2**n)), rng.dirichlet(np.ones(2**n))
        lp = w1_distance(np.diag(p).astype(complex), np.diag(q).astype(complex), 2, n, "lp")
        sdp = w1_distance(np.diag(p).astype(complex), np.diag(q).astype(complex), 2, n, "sdp")
        commuting = max(commuting, abs(lp.value - sdp.value))
    ok = sandwich == 0 and certified == instances and commuting < 1e-6
    report("W1 solver", ok, f"{sandwich} sandwich violations in {instances}, "
           f"{certified}/{instances} certificates, LP vs SDP {commuting:.1e}")


def test_dynamics():
    start = time.perf_counter()
    single = build_davies(make_hamiltonian(Lattice(1, 0), [], 2), [(0,)], 0.0)
    rho = 0.5 * (np.eye(2) + 0.8 * PAULI["Z"] + 0.3 * PAULI["X"])
    times = np.linspace(0, 5, 21)
    depol = float(np.max(np.abs(evolve(single, rho, times).relative_entropy
                                - depolarizing_trajectory(math.hypot(0.8, 0.3), times))))

    h3 = ising_chain(3, 1.0, 0.3)
    gen3 = build_davies(h3, h3.sites, 0.8)
    rises = 0
    for rho0 in lab.random_states(8, 100, 7):
        traj = evolve(gen3, rho0, np.linspace(0, 4, 17))
        rises += bool(np.any(np.diff(traj.relative_entropy) > lab.MONOTONE_TOL))

    from davies_lab.w1 import basis_states, gap_state
    h4 = ising_chain(4, 1.0)
    gen4 = build_davies(h4, h4.sites, 0.5)
    states = basis_states(16) + [gap_state(gen4)]
    eps_values = [1e-1, 1e-2, 1e-3, 1e-4]
    ratios = [lab.trace_mixing_time(gen4, states, e) / math.log(1 / e) for e in eps_values]
    spread = max(ratios) / min(ratios)
    elapsed = time.perf_counter() - start
    ok = depol < 1e-8 and rises == 0 and spread <= 2 and elapsed < 600
    report("dynamics", ok, f"depolarizing error {depol:.1e}, {rises}/100 non-monotone, "
           f"t_mix/log(1/eps) spread {spread:.3f}, {elapsed:.1f}s")


def test_bound_calculators():
    base = dict(K=1.3, xi=0.8, g=2, J=1.0, beta=0.2, D=1, N=64, L=31, eps=0.05, chi0=1.0, C=0.4,
                mu_gap=0.5, d=2, r=1, c=3, n_A=4, closure=3, closure2=5, size=2, c2=0.01)
    rng = np.random.default_rng(5)
    input_sets = [base]
    for _ in range(50):
        input_sets.append({**base, "K": rng.uniform(0.5, 3), "xi": rng.uniform(0.3, 2),
                           "beta": rng.uniform(0, 1), "D": int(rng.integers(1, 4)),
                           "eps": 10 ** rng.uniform(-4, -0.5), "N": int(rng.integers(8, 5000)),
                           "L": int(rng.integers(5, 60)), "c2": rng.uniform(0, 0.1)})
    worst, gate_errors, checked = 0.0, 0, 0
    assert set(ORACLES) == set(lab.FORMULAS)
    for inputs in input_sets:
        for name in lab.FORMULAS:
            try:
                rep = lab.evaluate_bound(name, inputs)
            except DomainError:
                continue
            expect = oracle_value(name, inputs)
            worst = max(worst, abs(rep.value - expect) / abs(expect))
            checked += 1
            if name in GATES:
                thr = oracle_gate(name, inputs)
                gap = abs(rep.gate_threshold - thr)
                worst = max(worst, gap / abs(thr) if thr else (0.0 if gap == 0 else math.inf))
                gate_errors += rep.gate != (inputs["eps"] >= rep.gate_threshold)
                try:
                    at = lab.evaluate_bound(name, {**inputs, "eps": rep.gate_threshold})
                except DomainError:
                    continue
                gate_errors += at.gate is not True
    ok = worst <= 1e-12 and gate_errors == 0
    report("bound calculators", ok, f"{checked} evaluations, max rel error {worst:.1e}, "
           f"{gate_errors} gate mismatches")


def test_effective_hamiltonians():
    worst, locality_fail, scanned = 0.0, 0, 0
    for seed in range(4):
        for n in (2, 3, 4):
            h = commuting_pauli(seed, n)
            for beta in (0.4, 1.0):
                sigma = gibbs_state(h, beta)
                for size in range(1, n + 1):
                    for region in itertools.combinations(h.sites, size):
                        eff = effective_hamiltonian(h, beta, list(region), sigma)
                        worst = max(worst, max(effective_conditions(h, eff, sigma).values()))
                if n >= 3:
                    for part in chain_family(h.sites):
                        for mu_int in (0.5, 1.0):
                            scanned += 1
                            locality_fail += not locality_bound(h, beta, part, mu_int, sigma).holds
    ok = worst < 1e-8 and locality_fail == 0
    report("effective Hamiltonians", ok, f"condition residual {worst:.1e}, "
           f"locality bound failures {locality_fail}/{scanned}")


def test_reproducibility(tmp_path):
    cfg = json.loads(open(__file__.replace("tests/test_acceptance.py", "configs/ising_chain4.json")).read())
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    codes, contents = [], []
    for run in ("a", "b"):
        out = tmp_path / run
        codes.append(cli.main(["all", "--config", str(path), "--out", str(out)]))
        contents.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    ok = codes == [0, 0] and contents[0] == contents[1] and len(contents[0]) > 0
    report("reproducibility", ok, f"exit codes {codes}, {len(contents[0])} CSVs byte-identical: "
           f"{contents[0] == contents[1]}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
