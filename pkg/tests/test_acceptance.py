"""Acceptance suite: one test per acceptance criterion, with a printed verdict.

Each test prints a single "[criterion NN] PASS/FAIL" line with the measured
numbers before asserting, so the log shows every verdict even when a
criterion is not met.  The oscillator benchmark runs once per session and is
shared with the determinism criterion.
"""

import time

import numpy as np
import pytest
import scipy.linalg

from symodes.bench import BenchConfig, emit_report, run_benchmark, term_set
from symodes.constraint import assemble_equivariant_basis, materialize
from symodes.discover import (DiscoveryConfig, GpConfig, SindyModel,
                              equiv_r_fit, gp_candidate_fitness, gp_fit,
                              gp_penalty_data, stlsq)
from symodes.dynamics import get_system, sample_initial, split_rng
from symodes.expressions import parse
from symodes.integrate import rk4_final
from symodes.library import (NotInSpanError, build_library,
                             generator_structure_matrix, m_theta)
from symodes.symmetry import (Generator, GroupElement,
                              check_infinitesimal_criterion, loss_fgfe,
                              loss_fgie, loss_igfe, loss_igie,
                              matrix_exponential, symmetry_loss,
                              symmetry_loss_grad)

ROTATION = np.array([[0.0, 1.0], [-1.0, 0.0]])


def verdict(num, ok, detail):
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num}: {detail}"


def sample_points(name, n, seed=0):
    sys = get_system(name)
    rng = split_rng(seed, 0)
    return np.array([sample_initial(sys, rng) for _ in range(n)])


def truth_model(name):
    sys = get_system(name)
    lib = sys.library()
    return sys, lib, SindyModel(lib, sys.truth_matrix(lib))


# -- shared oscillator benchmark -----------------------------------------------------


OSC_BENCH = BenchConfig(system="oscillator", methods=("sindy", "equiv-c"),
                        runs=20, seed=0)


@pytest.fixture(scope="module")
def oscillator_benchmark(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("osc_bench")
    t0 = time.perf_counter()
    report = run_benchmark(OSC_BENCH)
    elapsed = time.perf_counter() - t0
    emit_report(report, str(outdir))
    return report, elapsed, outdir


def test_criterion_01_symbolic_map_example():
    t0 = time.perf_counter()
    lib = build_library(2, 2)
    M = m_theta(lib, [parse("x2^2", 2), parse("x2", 2)])
    want = np.array([[0, 0, 0, 0, 0, 1], [0, 0, 1, 0, 0, 0]], dtype=float)
    exact = np.array_equal(M, want)
    rejected = False
    try:
        m_theta(lib, [parse("x1^3", 2)])
    except NotInSpanError:
        rejected = True
    elapsed = time.perf_counter() - t0
    verdict(1, exact and rejected and elapsed < 1.0,
            f"symbolic map matrix exact={exact}, cubic rejected={rejected}, "
            f"{elapsed:.3f}s")


def test_criterion_02_nullspace_dimensions():
    t0 = time.perf_counter()
    got = {}
    for name, want in (("oscillator", 2), ("growth", 3), ("seir", 34)):
        sys = get_system(name)
        basis = assemble_equivariant_basis(sys.library(), sys.generators)
        got[name] = basis.nullity
    elapsed = time.perf_counter() - t0
    ok = got == {"oscillator": 2, "growth": 3, "seir": 34} and elapsed < 5.0
    verdict(2, ok, f"nullspace dims {got}, {elapsed:.2f}s")


def test_criterion_03_infinitesimal_criterion_suite():
    worst = {}
    for name in ("oscillator", "growth", "seir"):
        sys, lib, model = truth_model(name)
        X = sample_points(name, 200, seed=3)
        rep = check_infinitesimal_criterion(model, sys.generators, X)
        worst[name] = rep["max"]
    ok = all(v <= 1e-10 for v in worst.values())

    lib = build_library(2, 2)
    W = np.zeros((2, lib.size))
    W[0, 3] = 1.0  # x1**2 in row 1
    broken = SindyModel(lib, W)
    rep = check_infinitesimal_criterion(
        broken, [Generator.linear(ROTATION)], np.array([[1.0, 1.0]]))
    ok_broken = rep["max"] >= 1.0
    verdict(3, ok and ok_broken,
            "max residuals " +
            ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) +
            f"; broken pair at (1,1) = {rep['max']:.4f} (>= 1)")


def test_criterion_04_equivariance_of_materialized_models():
    rng = np.random.default_rng(4)
    worst_comm = 0.0
    worst_fin = 0.0
    for name in ("oscillator", "growth", "seir"):
        sys = get_system(name)
        lib = sys.library()
        basis = assemble_equivariant_basis(lib, sys.generators)
        gens = [g for g in sys.generators]
        Ms = [generator_structure_matrix(lib, g.matrix) for g in gens]
        X = sample_points(name, 25, seed=4)
        groups = [GroupElement(g, 0.1) for g in gens]
        Es = [g.jacobian(X)[0] for g in groups]
        for _ in range(100):
            beta = rng.normal(size=basis.nullity)
            W = materialize(basis, beta)
            scale = max(1.0, np.linalg.norm(W))
            for g, M in zip(gens, Ms):
                res = np.linalg.norm(g.matrix @ W - W @ M) / scale
                worst_comm = max(worst_comm, res)
            h = lib.evaluate(X) @ W.T
            for E in Es:
                hg = lib.evaluate(X @ E.T) @ W.T
                fin = np.max(np.abs(hg - h @ E.T)) / scale
                worst_fin = max(worst_fin, fin)
    ok = worst_comm <= 1e-9 and worst_fin <= 1e-8
    verdict(4, ok, f"100 random beta x 3 systems: max commutator residual "
                   f"{worst_comm:.2e} (<= 1e-9), max finite-transform "
                   f"residual {worst_fin:.2e} (<= 1e-8)")


def test_criterion_05_oscillator_success_bands(oscillator_benchmark):
    report, elapsed, _ = oscillator_benchmark
    agg = report["aggregates"]
    equiv = agg["equiv-c"]["success"]["all"]
    sindy = agg["sindy"]["success"]["all"]
    ok = equiv >= 0.70 and sindy <= 0.40 and elapsed <= 600.0
    verdict(5, ok, f"oscillator 20% noise K=20: equiv-c joint {equiv:.2f} "
                   f"(>= 0.70), sindy joint {sindy:.2f} (<= 0.40), "
                   f"{elapsed:.0f}s (<= 600)")


def test_criterion_06_growth_success_band():
    t0 = time.perf_counter()
    report = run_benchmark(BenchConfig(
        system="growth", methods=("sindy", "equiv-c"), runs=20, seed=0))
    elapsed = time.perf_counter() - t0
    equiv = report["aggregates"]["equiv-c"]["success"]["all"]
    sindy = report["aggregates"]["sindy"]["success"]["all"]
    ok = equiv >= 0.90 and elapsed <= 600.0
    verdict(6, ok, f"growth 5% multiplicative K=20: equiv-c joint "
                   f"{equiv:.2f} (>= 0.90; sindy reference {sindy:.2f}), "
                   f"{elapsed:.0f}s (<= 600)")


def test_criterion_07_loss_gradient_checks():
    lib = build_library(2, 2)
    gens = [Generator.linear(ROTATION)]
    X = sample_points("oscillator", 16, seed=7)
    rng = np.random.default_rng(7)
    h = 1e-6
    worst = 0.0
    for _ in range(5):
        W = 0.3 * rng.normal(size=(2, lib.size))
        model = SindyModel(lib, W)
        for kind in ("igfe", "fgfe", "fgie", "igie"):
            kw = {"tau": 0.2} if kind in ("igfe", "fgfe") else {}
            _, grad = symmetry_loss_grad(kind, model, gens, X, **kw)
            for a in range(2):
                for mu in range(lib.size):
                    Wp = W.copy()
                    Wp[a, mu] += h
                    Wm = W.copy()
                    Wm[a, mu] -= h
                    fd = (symmetry_loss(kind, SindyModel(lib, Wp), gens, X,
                                        **kw)
                          - symmetry_loss(kind, SindyModel(lib, Wm), gens, X,
                                          **kw)) / (2 * h)
                    rel = abs(grad[a, mu] - fd) / max(1.0, abs(fd))
                    worst = max(worst, rel)
    verdict(7, worst <= 1e-5,
            f"4 losses x 5 random W: max relative gradient error "
            f"{worst:.2e} (<= 1e-5)")


def test_criterion_08_loss_consistency():
    sys, lib, model = truth_model("oscillator")
    gens = sys.generators
    X = sample_points("oscillator", 64, seed=8)
    vals = {
        "igie": loss_igie(model, gens, X),
        "fgie": loss_fgie(model, gens, X),
        "igfe": loss_igfe(model, gens, X, tau=0.2),
        "fgfe": loss_fgfe(model, gens, X, tau=0.2),
    }
    ok_truth = (all(v <= 1e-6 for v in vals.values())
                and vals["igie"] <= 1e-10 and vals["fgie"] <= 1e-10)

    lib2 = build_library(2, 2)
    W = np.zeros((2, lib2.size))
    W[0, 3] = 1.0
    counter = loss_igie(SindyModel(lib2, W), [Generator.linear(ROTATION)],
                        np.array([[1.0, 1.0]]))
    ok_counter = abs(counter - 5.0) <= 1e-9
    verdict(8, ok_truth and ok_counter,
            "losses at truth " +
            ", ".join(f"{k}={v:.1e}" for k, v in vals.items()) +
            f"; counterexample igie = {counter!r} (= 5.0 +- 1e-9)")


def test_criterion_09_numerical_substrate():
    x0 = np.array([1.0, 0.0])
    t = float(np.pi)

    def harmonic(x):
        return np.stack([x[..., 1], -x[..., 0]], axis=-1)

    exact = np.array([np.cos(t), -np.sin(t)]) * x0[0] + \
        np.array([np.sin(t), np.cos(t)]) * x0[1]
    errs = [np.linalg.norm(rk4_final(harmonic, x0, t, n) - exact)
            for n in (40, 80, 160)]
    order = min(np.log2(errs[i] / errs[i + 1]) for i in range(2))

    worst = 0.0
    for eps in (0.1, 1.0, -2.3):
        got = matrix_exponential(eps * ROTATION)
        want = np.array([[np.cos(eps), np.sin(eps)],
                         [-np.sin(eps), np.cos(eps)]])
        worst = max(worst, np.max(np.abs(got - want)))
    ok = order >= 3.8 and worst <= 1e-12
    verdict(9, ok, f"RK4 observed order {order:.2f} (>= 3.8); rotation "
                   f"exponential error {worst:.1e} (<= 1e-12)")


def test_criterion_10_substitute_properties():
    # (a) lambda = 0 reduces the regularized fit to plain STLSQ.
    sys = get_system("oscillator")
    lib = sys.library()
    rng = np.random.default_rng(10)
    X = rng.uniform(-1.5, 1.5, size=(400, 2))
    dX = sys.oracle().h(X)
    cfg = DiscoveryConfig(threshold=0.05, lambda_symm=0.0)
    model = equiv_r_fit((X, dX), lib, sys.generators, cfg)
    W_ref = stlsq(lib.evaluate(X), dX, 0.05)
    sup = lambda W: {(i, m) for i in range(2) for m in range(lib.size)
                     if W[i, m] != 0.0}
    ok_a = sup(model.W) == sup(W_ref)

    # (b) paired seeds: equiv-r at least matches the baseline's joint
    # success on >= 15 of 20 shared datasets.
    report = run_benchmark(BenchConfig(
        system="oscillator", methods=("sindy", "equiv-r"), runs=20, seed=0))
    flags = {m: {} for m in ("sindy", "equiv-r")}
    for rec in report["records"]:
        flags[rec["method"]][rec["run"]] = rec["joint_success"]
    wins = sum(flags["equiv-r"][k] >= flags["sindy"][k] for k in range(20))
    ok_b = wins >= 15

    # (c) GP engine: exact recovery of dx = x across seeds, and the finite
    # symmetry penalty never rewards a symmetry-violating candidate.
    hits = 0
    for seed in range(10):
        rngs = np.random.default_rng(seed)
        Xg = rngs.uniform(0.5, 2.0, size=(200, 1))
        cfg_g = DiscoveryConfig(gp=GpConfig(population=128, generations=30,
                                            seed=seed))
        res = gp_fit((Xg, Xg.copy()), cfg_g)
        lib1 = build_library(1, 2)
        sets = term_set(res, lib1)
        labels, coeffs = sets[0]
        if labels == ("x1",) and abs(coeffs["x1"] - 1.0) <= 1e-3:
            hits += 1
    ok_c1 = hits >= 9

    Xp = np.random.default_rng(20).uniform(0.5, 1.5, size=(64, 2))
    dXp = Xp @ ROTATION.T
    pairs = gp_penalty_data([Generator.linear(ROTATION)], Xp, dXp, eps=0.1)
    pairs0 = [(gX, T[:, 0]) for gX, T in pairs]
    gcfg = GpConfig(parsimony=0.0)
    monotone = True
    for text in ("x2 + 0.3*x1^2", "x1*x2", "x2 + x1"):
        e = parse(text, 2)
        prev = None
        for lam in (0.0, 0.1, 1.0, 10.0):
            total = gp_candidate_fitness(e, Xp, dXp[:, 0], 1.0, gcfg,
                                         pairs0, lam)[0]
            if prev is not None and total < prev - 1e-12:
                monotone = False
            prev = total
    eq_pen = gp_candidate_fitness(parse("x2", 2), Xp, dXp[:, 0], 1.0, gcfg,
                                  pairs0, 1.0)[2]
    ok_c2 = monotone and eq_pen <= 1e-20
    ok = ok_a and ok_b and ok_c1 and ok_c2
    verdict(10, ok, f"(a) lambda=0 support matches stlsq: {ok_a}; "
                    f"(b) equiv-r >= sindy on {wins}/20 paired seeds "
                    f"(>= 15); (c) gp recovers dx=x on {hits}/10 seeds "
                    f"(>= 9), penalty monotone {monotone}")


def test_criterion_11_benchmark_determinism(oscillator_benchmark, tmp_path):
    _, _, ref_dir = oscillator_benchmark
    again = tmp_path / "again"
    parallel = tmp_path / "parallel"
    emit_report(run_benchmark(OSC_BENCH), str(again))
    from dataclasses import replace

    emit_report(run_benchmark(replace(OSC_BENCH, jobs=2)), str(parallel))
    same = {}
    for fname in ("report.json", "tables.csv", "ltp.csv"):
        ref = (ref_dir / fname).read_bytes()
        same[fname] = (ref == (again / fname).read_bytes()
                       and ref == (parallel / fname).read_bytes())
    ok = all(same.values())
    verdict(11, ok, "byte-identical reruns (serial and --jobs 2): " +
            ", ".join(f"{k}={v}" for k, v in same.items()))
