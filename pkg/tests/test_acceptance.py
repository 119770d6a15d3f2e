"""Release gate: ten numbered criteria, one printed line each.

Run `pytest tests/test_acceptance.py -v -s` to see the line for every
criterion; without -s pytest only shows output for failing ones.  A FAIL
line is a measured finding reported with its numbers, not a broken test:
the assertions state the target tolerances and are left to fail where the
implementation genuinely cannot meet them.
"""

import filecmp
import os
import time

import numpy as np
import pytest

from fricmot import (
    DiscreteMeasure,
    FrictionSpec,
    PayoffSpec,
    backward_induction,
    build_potential_pair,
    conjugate,
    default_schedule,
    extract_biatomic,
    left_monotone_check,
    msm_check,
    path_space_lp,
    quantile_discretize,
    solve_geometric,
    solve_onestep_friction,
    step_stats,
    superhedging_price,
    sweep,
    vanishing_friction,
)
from fricmot.cli import main as cli_main
from oracles import coupling_identity_residual

HERE = os.path.dirname(os.path.abspath(__file__))
EXAMPLE_CONFIG = os.path.join(HERE, os.pardir, "configs", "example.ini")


def report(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'} criterion {num}] {name}: {detail}"
    print(line)
    assert ok, line


def cubic(c1: float, c2: float, c3: float):
    def v(y):
        y = np.asarray(y, dtype=float)
        return c1 * y + c2 * y ** 2 + c3 * y ** 3
    return v


def uniform_pair(n: int, lo: float = 1.0, hi: float = 2.0):
    mu = quantile_discretize(lambda u: lo * (2.0 * u - 1.0), n)
    eta = quantile_discretize(lambda u: hi * (2.0 * u - 1.0), n)
    return mu, eta


# ---------------------------------------------------------------- instances

@pytest.fixture(scope="module")
def randomized_instances():
    """50 one-step instances passing the strict MSM filter, LP pre-solved.

    Quantile-discretized centered uniforms with nested widths share their
    mean, so each pair is a martingale pair by construction.
    """
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    out = []
    while len(out) < 50:
        n = int(rng.integers(16, 65))
        center = rng.uniform(-0.5, 0.5)
        w_lo = rng.uniform(0.5, 1.5)
        w_hi = w_lo * rng.uniform(1.3, 2.5)
        mu = quantile_discretize(lambda u: center + w_lo * (2 * u - 1), n)
        eta = quantile_discretize(lambda u: center + w_hi * (2 * u - 1), n)
        v = cubic(rng.uniform(-0.5, 0.5), rng.uniform(0.0, 0.4),
                  rng.uniform(0.05, 0.4))
        fs = FrictionSpec.make(rng.uniform(0.0, 0.5), rng.uniform(0.05, 0.5))
        if not msm_check(v, fs, mu.locations, eta.locations).strict:
            continue
        pp = build_potential_pair(mu, eta)
        cm, cert, info = solve_onestep_friction(mu, eta, v, fs)
        out.append({"mu": mu, "eta": eta, "pp": pp, "v": v, "fs": fs,
                    "cm": cm, "cert": cert, "lp_value": info["value"]})
    return out, time.perf_counter() - t0


def forced_chain():
    m0 = DiscreteMeasure.from_atoms(np.array([1.0]), np.array([1.0]))
    m1 = DiscreteMeasure.from_atoms(np.array([0.0, 2.0]), np.array([0.5, 0.5]))
    return [m0, m1, m1]


def rich_chain():
    m0 = DiscreteMeasure.from_atoms(np.array([1.0]), np.array([1.0]))
    m1 = DiscreteMeasure.from_atoms(np.array([0.5, 1.0, 1.5]),
                                    np.array([0.25, 0.5, 0.25]))
    m2 = DiscreteMeasure.from_atoms(np.array([0.2, 0.8, 1.2, 1.8]),
                                    np.array([0.2, 0.3, 0.3, 0.2]))
    return [m0, m1, m2]


def three_step_chain():
    m0 = DiscreteMeasure.from_atoms(np.array([1.0]), np.array([1.0]))
    m1 = DiscreteMeasure.from_atoms(np.array([0.7, 1.3]), np.array([0.5, 0.5]))
    m2 = DiscreteMeasure.from_atoms(np.array([0.4, 1.0, 1.6]),
                                    np.array([0.3, 0.4, 0.3]))
    m3 = DiscreteMeasure.from_atoms(np.array([0.1, 0.7, 1.3, 1.9]),
                                    np.array([0.2, 0.3, 0.3, 0.2]))
    return [m0, m1, m2, m3]


FS = FrictionSpec.make(0.05, 0.02)


@pytest.fixture(scope="module")
def priced_suite():
    """Multi-step regression cases priced once, with assembled duals."""
    rich = rich_chain()
    cases = [
        ("forced terminal", forced_chain(), FS, PayoffSpec.terminal(0.9)),
        ("forced asian", forced_chain(), FS, PayoffSpec.asian(1.0)),
        ("rich terminal", rich, FS, PayoffSpec.terminal(1.0)),
        ("rich lookback", rich, FS, PayoffSpec.lookback(0.9)),
        ("rich barrier", rich, FS, PayoffSpec.barrier(1.0, 1.8)),
        ("rich asian", rich, FS, PayoffSpec.asian(1.0)),
        ("n3 lookback", three_step_chain(), FS, PayoffSpec.lookback(0.9)),
        ("n3 barrier", three_step_chain(), FS, PayoffSpec.barrier(0.7, 1.9)),
        ("n3 asian", three_step_chain(), FS, PayoffSpec.asian(1.0)),
        ("diagonal terminal", [rich[1], rich[1]],
         FrictionSpec.make(0.3, 0.1), PayoffSpec.terminal(1.0)),
    ]
    out = []
    for name, marginals, fs, payoff in cases:
        priced = superhedging_price(marginals, fs, payoff)
        out.append((name, marginals, fs, payoff, priced))
    return out


# ---------------------------------------------------------------- criteria

def test_criterion_01_oracle_equivalence(randomized_instances):
    instances, gen_seconds = randomized_instances
    t0 = time.perf_counter()
    worst_ratio = 0.0
    n_ok = 0
    failures = []
    for k, inst in enumerate(instances):
        kern = solve_geometric(inst["pp"], inst["v"], inst["fs"])
        geo = kern.objective(inst["v"], inst["fs"])
        vy = inst["v"](inst["eta"].locations)
        modulus = float(np.max(np.abs(np.diff(vy))))
        tol = max(1e-6, 2.0 * modulus)
        delta = abs(geo - inst["lp_value"])
        worst_ratio = max(worst_ratio, delta / tol)
        if delta <= tol:
            n_ok += 1
        else:
            failures.append((k, delta, tol))
        inst["kernel"] = kern
    elapsed = gen_seconds + (time.perf_counter() - t0)
    ok = n_ok == 50 and elapsed < 60.0
    report(1, "geometric vs LP on 50 randomized instances", ok,
           f"{n_ok}/50 within max(1e-6, 2*grid modulus), "
           f"worst |geo-lp|/tol = {worst_ratio:.3g}, "
           f"runtime {elapsed:.1f}s" +
           (f", first failures {failures[:3]}" if failures else ""))


def test_criterion_02_structure(randomized_instances):
    instances, _ = randomized_instances
    lm_violations = 0
    extract_failures = 0
    worst_resid = 0.0
    for inst in instances:
        cm = inst["cm"]
        lm_violations += left_monotone_check(cm)["count"]
        rows, failures = extract_biatomic(cm)
        extract_failures += len(failures)
        failed = {i for i, _ in failures}
        live = [i for i in range(cm.x.size) if i not in failed]
        for i, row in zip(live, rows):
            if row.band:
                continue
            r = coupling_identity_residual(inst["mu"], inst["eta"],
                                           inst["pp"], i,
                                           row.t_down, row.t_up)
            worst_resid = max(worst_resid, r)
    ok = lm_violations == 0 and extract_failures == 0 and worst_resid <= 1e-6
    report(2, "left-monotone bi-atomic structure", ok,
           f"{lm_violations} crossing violations, "
           f"{extract_failures} extraction failures, "
           f"max coupling-identity residual {worst_resid:.3e} (target 1e-6)")


def test_criterion_03_strong_duality(priced_suite):
    worst_step = 0.0
    worst_global = 0.0
    worst_feas = 0.0
    for name, marginals, fs, payoff, priced in priced_suite:
        tol = 1e-6 * (1.0 + abs(priced["value"]))
        gd = priced["global_dual"]
        for per_state in priced["result"].steps:
            for ss in per_state:
                w_mu = ss.coupling.probs.sum(axis=1)
                w_eta = ss.coupling.probs.sum(axis=0)
                dual = float(w_mu @ ss.certificate.phi
                             + w_eta @ ss.certificate.psi)
                worst_step = max(worst_step, abs(dual - ss.lp_value) / tol)
        worst_global = max(worst_global, priced["gap"] / tol)
        worst_feas = max(worst_feas, gd.step_feasibility() / tol)
    ok = max(worst_step, worst_global, worst_feas) <= 1.0
    report(3, "per-step and telescoped duality gaps", ok,
           f"worst step gap {worst_step:.3g}, global gap {worst_global:.3g}, "
           f"dual feasibility {worst_feas:.3g} (all relative to 1e-6*(1+|V|))")


def test_criterion_04_brute_force_multistep():
    chains = [("forced", forced_chain()), ("rich", rich_chain()),
              ("n3", three_step_chain())]
    payoffs = [("terminal", PayoffSpec.terminal(1.0)),
               ("lookback", PayoffSpec.lookback(0.9)),
               ("barrier", PayoffSpec.barrier(0.8, 1.7)),
               ("asian", PayoffSpec.asian(1.0))]
    gaps = []
    for cname, marginals, in chains:
        for pname, payoff in payoffs:
            dpp = backward_induction(marginals, FS, payoff).value
            ref, _ = path_space_lp(marginals, FS, payoff)
            gaps.append((f"{cname}/{pname}", dpp - ref))
    bad = [(c, g) for c, g in gaps if abs(g) > 1e-7]
    ok = not bad
    worst = max(gaps, key=lambda cg: abs(cg[1]))
    report(4, "backward induction vs exhaustive path LP", ok,
           f"{len(gaps) - len(bad)}/{len(gaps)} cases within 1e-7, "
           f"worst {worst[0]} gap {worst[1]:+.3e}" +
           (f", off cases {[c for c, _ in bad]}" if bad else ""))


def test_criterion_05_band_equivalence(priced_suite):
    mismatches = []
    n_atoms = 0
    for name, marginals, fs, payoff, priced in priced_suite:
        for per_state in priced["result"].steps:
            for ss in per_state:
                cm, cert = ss.coupling, ss.certificate
                a_at = fs.a(cm.x)
                for i in range(cm.x.size):
                    n_atoms += 1
                    off = np.abs(cm.y - cm.x[i]) > 1e-9
                    off_mass = float(cm.probs[i, off].sum())
                    is_identity = off_mass <= 1e-7
                    in_band = abs(float(cert.h[i])) <= float(a_at[i]) + 1e-7
                    if is_identity != in_band:
                        mismatches.append(
                            (name, ss.t, float(cm.x[i]), float(cert.h[i]),
                             float(a_at[i]), off_mass))
    ok = not mismatches
    detail = f"{n_atoms - len(mismatches)}/{n_atoms} atoms consistent at 1e-7"
    if mismatches:
        nm, t, x, h, a, m = mismatches[0]
        detail += (f"; first mismatch {nm} t={t} x={x:.3g}: "
                   f"|h|={abs(h):.3g} vs a={a:.3g}, off-atom mass {m:.3g}")
    report(5, "no-trade band iff identity row", ok, detail)


def test_criterion_06_comparative_statics():
    mu, eta = uniform_pair(24)
    v = cubic(0.2, 0.0, 0.007)
    res = sweep(mu, eta, v,
                alpha_grid=[0.05, 0.1, 0.2, 0.3, 0.4],
                beta_grid=[0.05, 0.1, 0.2, 0.3, 0.4],
                base_alpha=0.1, base_beta=0.05)
    hyp = res["hypotheses"]
    ok = (hyp["atoms_positive"] and hyp["curvature_dominated"]
          and not res["violations"])
    report(6, "band mass and turnover monotone in frictions", ok,
           f"hypotheses {hyp}, {len(res['rows'])} sweep rows, "
           f"{len(res['violations'])} monotonicity violations"
           + (f": {res['violations'][:2]}" if res["violations"] else ""))


def test_criterion_07_vanishing_friction():
    mu, eta = uniform_pair(64)
    v = cubic(0.2, 0.4, 0.25)
    rows = vanishing_friction(mu, eta, v, default_schedule(8))
    last = rows[-1]
    ok = last["endpoint_l1"] <= 1e-3 and last["touching_residual"] <= 1e-3
    report(7, "convergence to the frictionless left-curtain reference", ok,
           f"at (alpha, beta) = {last['alpha']:.4g}: endpoint_l1 "
           f"{last['endpoint_l1']:.4g}, touching residual "
           f"{last['touching_residual']:.4g} (targets 1e-3)")


def test_criterion_08_friction_calculus():
    rng = np.random.default_rng(8)
    n = 10_000
    a_s = rng.uniform(0.0, 0.5, n)
    b_s = rng.uniform(0.05, 0.5, n)
    y_s = rng.uniform(-3.0, 3.0, n)

    def grid_sup(a, b, y, half=0.5, m=8001):
        # window centered on the maximizer; grid-sup error <= b*(dv/2)^2
        v_star = np.sign(y) * max(abs(y) - a, 0.0) / (2.0 * b)
        vs = np.linspace(v_star - half, v_star + half, m)
        return float(np.max(y * vs - a * np.abs(vs) - b * vs * vs))

    worst_conj = 0.0
    for a, b, y in zip(a_s, b_s, y_s):
        fs = FrictionSpec.make(a, b)
        worst_conj = max(worst_conj,
                         abs(float(conjugate(fs, 0.0, y)) - grid_sup(a, b, y)))

    worst_biconj = 0.0
    for a, b, vv in zip(a_s[:200], b_s[:200], rng.uniform(-2, 2, 200)):
        fs = FrictionSpec.make(a, b)
        h_star = np.sign(vv) * (a + 2.0 * b * abs(vv)) if vv else 0.0
        hs = np.linspace(h_star - 0.5, h_star + 0.5, 16001)
        fstar = np.square(np.maximum(np.abs(hs) - a, 0.0)) / (4.0 * b)
        recovered = float(np.max(hs * vv - fstar))
        worst_biconj = max(worst_biconj,
                           abs(recovered - (a * abs(vv) + b * vv * vv)))

    worst_ineq = np.inf
    worst_eq = 0.0
    for a, b in zip(a_s[:50], b_s[:50]):
        fs = FrictionSpec.make(a, b)
        vg = np.linspace(-3, 3, 101)
        hg = np.linspace(-4, 4, 101)
        f_v = a * np.abs(vg) + b * vg * vg
        fst = np.square(np.maximum(np.abs(hg) - a, 0.0)) / (4.0 * b)
        slack = f_v[:, None] + fst[None, :] - vg[:, None] * hg[None, :]
        worst_ineq = min(worst_ineq, float(slack.min()))
        h_eq = np.sign(vg) * (a + 2.0 * b * np.abs(vg))
        fst_eq = np.square(np.maximum(np.abs(h_eq) - a, 0.0)) / (4.0 * b)
        eq = np.abs(f_v + fst_eq - vg * h_eq)
        worst_eq = max(worst_eq, float(eq[vg != 0].max()))

    ok = (worst_conj <= 1e-8 and worst_biconj <= 1e-8
          and worst_ineq >= -1e-12 and worst_eq <= 1e-8)
    report(8, "conjugate closed form, biconjugacy, Fenchel-Young grid", ok,
           f"conjugate vs grid sup {worst_conj:.3e}, biconjugacy "
           f"{worst_biconj:.3e} (targets 1e-8), inequality slack min "
           f"{worst_ineq:.3e}, subgradient equality {worst_eq:.3e}")


def test_criterion_09_turnover_identities(randomized_instances):
    instances, _ = randomized_instances
    worst_identity = 0.0
    worst_alpha = np.inf
    worst_beta = np.inf
    n_kernels = 0
    for inst in instances:
        kern = inst.get("kernel")
        if kern is None:
            kern = solve_geometric(inst["pp"], inst["v"], inst["fs"])
        st = step_stats(kern, inst["mu"], inst["fs"])
        n_kernels += 1
        worst_identity = max(worst_identity, st.identity_residual)
        worst_alpha = min(worst_alpha, st.exec_cost - st.bounds["alpha_lower"])
        worst_beta = min(worst_beta, st.exec_cost - st.bounds["beta_lower"])
    ok = (worst_identity <= 1e-9 and worst_alpha >= -1e-12
          and worst_beta >= -1e-12)
    report(9, "per-atom turnover identity and cost lower bounds", ok,
           f"{n_kernels} kernels, max identity residual "
           f"{worst_identity:.3e} (target 1e-9), bound slacks "
           f"alpha {worst_alpha:+.3e}, beta {worst_beta:+.3e}")


def test_criterion_10_determinism(tmp_path):
    out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
    rc1 = cli_main(["price", "--config", EXAMPLE_CONFIG, "--out", out1])
    rc2 = cli_main(["price", "--config", EXAMPLE_CONFIG, "--out", out2])
    names = ["value.json", "certificate.json", "kernels.csv", "stats.csv"]
    same = [filecmp.cmp(os.path.join(out1, n), os.path.join(out2, n),
                        shallow=False) for n in names]
    ok = rc1 == 0 and rc2 == 0 and all(same)
    report(10, "byte-identical repeated price runs", ok,
           f"exit codes ({rc1}, {rc2}), identical: "
           + ", ".join(f"{n}={s}" for n, s in zip(names, same)))
