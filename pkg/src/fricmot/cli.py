"""Batch front-end: config parsing, pipeline orchestration, file outputs.

One INI-style config drives every subcommand.  Data outputs (value.json,
kernels.csv, certificate.json, stats.csv, sweep/vanish/stability tables)
contain no timestamps and are byte-identical across reruns; run metadata
lives in manifest.json only.  Exit codes: 0 success, 2 validation or usage
failure, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analytics import (coupling_stats, marginal_stability, row_endpoints,
                        rows_to_csv, sweep, vanishing_friction)
from .duality import assemble_global_dual, superhedging_price
from .errors import (ConvexOrderError, FricmotError, StructureError,
                     ValidationError)
from .frictions import Coefficient, FrictionSpec
from .measures import (DiscreteMeasure, build_potential_pair,
                       read_measure_csv)
from .multistep import DppOptions, PayoffSpec, backward_induction
from .onestep import GeoOptions, as_grid_function, msm_check, solve_geometric

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3

KERNEL_COLUMNS = ["t", "x", "t_down", "t_up", "theta", "band"]
STATS_COLUMNS = ["t", "state", "turnover", "exec_cost", "band_mass",
                 "max_disp"]
SWEEP_COLUMNS = ["sweep", "alpha", "beta", "value", "band_mass", "turnover",
                 "exec_cost", "max_disp"]
VANISH_COLUMNS = ["n", "alpha", "beta", "value", "endpoint_l1",
                  "touching_residual", "coupling_distance"]
STABILITY_COLUMNS = ["eps", "w1_mu", "endpoint_l1", "coupling_distance",
                     "value", "note"]


@dataclass
class RunConfig:
    marginals: list
    frictions: list
    payoff: PayoffSpec
    payoff_kind: str
    oracle: str = "lp"
    tie_break: str | None = "twist"
    seed: int = 0
    force_msm: bool = False
    out_dir: str = "out"
    tolerances: dict = field(default_factory=dict)
    sweep_alpha: list = field(default_factory=list)
    sweep_beta: list = field(default_factory=list)
    sweep_base_alpha: float | None = None
    sweep_base_beta: float | None = None
    vanish_base: float = 0.4
    vanish_factor: float = 0.5
    vanish_steps: int = 8
    stability_eps: list = field(default_factory=list)
    stability_mode: str = "jitter"
    stability_seed: int = 0
    terminal_fn: object = None   # y -> payoff, when the kind is terminal-like

    @property
    def n_steps(self) -> int:
        return len(self.marginals) - 1


def _floats(raw: str) -> list:
    return [float(tok) for tok in raw.replace(";", ",").split(",")
            if tok.strip()]


def _parse_measure(raw: str, base_dir: str, name: str) -> DiscreteMeasure:
    raw = raw.strip()
    if raw.startswith("file:"):
        path = raw[len("file:"):].strip()
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        meas, _ = read_measure_csv(path)
        return meas
    locs, wts = [], []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" not in tok:
            raise ValidationError(
                f"[marginals] {name}: atom '{tok}' is not 'location:weight'")
        a, b = tok.split(":", 1)
        try:
            locs.append(float(a))
            wts.append(float(b))
        except ValueError:
            raise ValidationError(
                f"[marginals] {name}: atom '{tok}' is not 'location:weight'")
    if not locs:
        raise ValidationError(f"[marginals] {name}: no atoms")
    return DiscreteMeasure.from_atoms(np.array(locs), np.array(wts))


def _parse_coefficient(cp, section, key, n_steps, default):
    raw = cp.get(section, key, fallback=None)
    breaks = cp.get(section, key + "_breaks", fallback=None)
    values = cp.get(section, key + "_values", fallback=None)
    if breaks is not None or values is not None:
        if breaks is None or values is None:
            raise ValidationError(
                f"[{section}] {key}_breaks and {key}_values must come together")
        coeff = Coefficient.make((_floats(breaks), _floats(values)))
        return [coeff] * n_steps
    if raw is None:
        return [Coefficient.make(default)] * n_steps
    vals = _floats(raw)
    if len(vals) == 1:
        return [Coefficient.make(vals[0])] * n_steps
    if len(vals) != n_steps:
        raise ValidationError(
            f"[{section}] {key}: got {len(vals)} values for {n_steps} steps")
    return [Coefficient.make(v) for v in vals]


def _parse_payoff(cp, base_dir: str):
    kind = cp.get("payoff", "kind", fallback="terminal").strip().lower()
    strike = cp.getfloat("payoff", "strike", fallback=0.0)
    if kind == "terminal":
        return PayoffSpec.terminal(strike=strike), kind, \
            (lambda y: np.maximum(np.asarray(y, dtype=float) - strike, 0.0))
    if kind == "cubic":
        coeffs = _floats(cp.get("payoff", "coeffs", fallback="0,0,0,1"))

        def poly(y, c=tuple(coeffs)):
            ya = np.asarray(y, dtype=float)
            out = np.zeros_like(ya)
            for k, ck in enumerate(c):
                out = out + ck * ya ** k
            return out

        return PayoffSpec.terminal(payoff_fn=poly), kind, poly
    if kind == "custom_grid":
        path = cp.get("payoff", "grid_file", fallback=None)
        if path is None:
            raise ValidationError("[payoff] custom_grid needs grid_file")
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        grid, vals = data[:, 0], data[:, 1]
        order = np.argsort(grid)
        grid, vals = grid[order], vals[order]
        return PayoffSpec.custom_grid(grid, vals), kind, \
            (lambda y, g=grid, v=vals: np.interp(np.asarray(y, dtype=float), g, v))
    if kind == "lookback":
        return PayoffSpec.lookback(strike=strike), kind, None
    if kind == "barrier":
        barrier = cp.getfloat("payoff", "barrier", fallback=None)
        if barrier is None:
            raise ValidationError("[payoff] barrier kind needs barrier level")
        return PayoffSpec.barrier(strike=strike, barrier=barrier), kind, None
    if kind == "asian":
        return PayoffSpec.asian(strike=strike), kind, None
    raise ValidationError(f"[payoff] unknown kind '{kind}'")


def load_config(path: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path)
    if not read:
        raise ValidationError(f"config not found or unreadable: {path}")
    base_dir = os.path.dirname(os.path.abspath(path))
    if not cp.has_section("marginals"):
        raise ValidationError("config needs a [marginals] section")
    names = sorted(cp.options("marginals"))
    expected = [f"m{i}" for i in range(len(names))]
    if names != sorted(expected):
        raise ValidationError(
            f"[marginals] keys must be m0..m{len(names) - 1}, got {names}")
    marginals = [_parse_measure(cp.get("marginals", f"m{i}"), base_dir,
                                f"m{i}") for i in range(len(names))]
    if len(marginals) < 2:
        raise ValidationError("need at least two marginals (one step)")
    n_steps = len(marginals) - 1
    alphas = _parse_coefficient(cp, "frictions", "alpha", n_steps, 0.0)
    betas = _parse_coefficient(cp, "frictions", "beta", n_steps, 0.0)
    frictions = [FrictionSpec(a=a, b=b) for a, b in zip(alphas, betas)]
    payoff, kind, terminal_fn = _parse_payoff(cp, base_dir)

    cfg = RunConfig(
        marginals=marginals, frictions=frictions, payoff=payoff,
        payoff_kind=kind, terminal_fn=terminal_fn,
        oracle=cp.get("solver", "oracle", fallback="lp").strip().lower(),
        tie_break=(cp.get("solver", "tie_break", fallback="twist").strip()
                   or None),
        seed=cp.getint("solver", "seed", fallback=0),
        force_msm=cp.getboolean("solver", "force_msm", fallback=False),
        out_dir=cp.get("outputs", "directory", fallback="out"),
        sweep_alpha=_floats(cp.get("sweep", "alpha_grid", fallback="")),
        sweep_beta=_floats(cp.get("sweep", "beta_grid", fallback="")),
        sweep_base_alpha=(cp.getfloat("sweep", "base_alpha", fallback=None)),
        sweep_base_beta=(cp.getfloat("sweep", "base_beta", fallback=None)),
        vanish_base=cp.getfloat("vanish", "base", fallback=0.4),
        vanish_factor=cp.getfloat("vanish", "factor", fallback=0.5),
        vanish_steps=cp.getint("vanish", "steps", fallback=8),
        stability_eps=_floats(cp.get("stability", "epsilons", fallback="")),
        stability_mode=cp.get("stability", "mode", fallback="jitter").strip(),
        stability_seed=cp.getint("stability", "seed", fallback=0),
    )
    if cfg.tie_break not in ("twist", None):
        if cfg.tie_break.lower() in ("none", "off"):
            cfg.tie_break = None
        else:
            raise ValidationError("[solver] tie_break must be twist or none")
    if cfg.oracle not in ("lp", "geometric", "both"):
        raise ValidationError("[solver] oracle must be lp, geometric, or both")
    if not os.path.isabs(cfg.out_dir):
        cfg.out_dir = os.path.join(base_dir, cfg.out_dir)
    return cfg


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _manifest(cfg: RunConfig, extra: dict | None = None) -> dict:
    import time
    out = {
        "fricmot_version": __version__,
        "numpy_version": np.__version__,
        "tolerances": {"lp_feasibility": 1e-10, "dual_feasibility": 1e-8,
                       "pathwise": 1e-7},
        "seed": cfg.seed,
        "oracle": cfg.oracle,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    try:
        import scipy
        out["scipy_version"] = scipy.__version__
    except ImportError:
        pass
    if extra:
        out.update(extra)
    return out


def cmd_validate(cfg: RunConfig, out=None) -> int:
    """Convex-order chain, MSM where computable, friction sanity."""
    out = out if out is not None else sys.stdout
    code = EXIT_OK
    for t in range(cfg.n_steps):
        try:
            build_potential_pair(cfg.marginals[t], cfg.marginals[t + 1])
            print(f"step {t}: convex order ok "
                  f"({cfg.marginals[t].n} -> {cfg.marginals[t + 1].n} atoms)",
                  file=out)
        except ConvexOrderError as exc:
            print(f"step {t}: convex order FAILED: {exc}", file=out)
            code = EXIT_VALIDATION
    for t, fs in enumerate(cfg.frictions):
        notes = []
        if fs.a.min_value() < 0 or fs.b.min_value() < 0:
            print(f"step {t}: negative friction coefficient", file=out)
            code = EXIT_VALIDATION
            continue
        if fs.has_zero_quadratic:
            notes.append("quadratic term vanishes; geometric solver "
                         "unavailable, LP fallback")
        print(f"step {t}: friction a in [{fs.a.min_value():.4g}, "
              f"{fs.a.max_value():.4g}], b in [{fs.b.min_value():.4g}, "
              f"{fs.b.max_value():.4g}]"
              + ("; " + "; ".join(notes) if notes else ""), file=out)
    if cfg.terminal_fn is not None:
        t = cfg.n_steps - 1
        mu, eta = cfg.marginals[t], cfg.marginals[t + 1]
        if mu.n < 2 or eta.n < 2:
            print("final step MSM: grids too small to test", file=out)
        else:
            lo = float(min(mu.locations.min(), eta.locations.min()))
            hi = float(max(mu.locations.max(), eta.locations.max()))
            v = as_grid_function(cfg.terminal_fn, lo, hi, 513)
            rep = msm_check(v, cfg.frictions[t], mu.locations, eta.locations)
            print(f"final step MSM: strict={rep.strict} "
                  f"min_increment={rep.min_rectangle_increment:.3e}", file=out)
    else:
        print("MSM: continuation-dependent payoff, checked during price",
              file=out)
    return code


def _marginal_checks(cfg: RunConfig) -> None:
    for t in range(cfg.n_steps):
        try:
            build_potential_pair(cfg.marginals[t], cfg.marginals[t + 1])
        except ConvexOrderError as exc:
            raise ValidationError(
                f"validation failed at step {t}: {exc}") from exc


def _geometric_deltas(cfg: RunConfig, result) -> list:
    """Per-step |geometric - lp| comparisons where the geometric route runs."""
    deltas = []
    if cfg.payoff_kind not in ("terminal", "cubic", "custom_grid"):
        return [{"note": "geometric route needs a terminal-type payoff"}]
    for t in range(cfg.n_steps - 1, -1, -1):
        mu, eta = cfg.marginals[t], cfg.marginals[t + 1]
        fs = cfg.frictions[t]
        if fs.has_zero_quadratic:
            deltas.append({"t": t, "note": "b = 0 somewhere, skipped"})
            continue
        lo = float(min(mu.locations.min(), eta.locations.min()))
        hi = float(max(mu.locations.max(), eta.locations.max()))
        vals = result.grid.values[t + 1][0]
        y = eta.locations

        def cont(z, y=y, vals=vals):
            return np.interp(np.asarray(z, dtype=float), y, vals)

        try:
            pp = build_potential_pair(mu, eta)
            v = as_grid_function(cont, lo, hi, 513)
            kern = solve_geometric(pp, v, fs,
                                   GeoOptions(force=cfg.force_msm))
            # kern.objective scores V(y) - V(x) - f; the DPP's lp_value
            # scores V(y) - f, the mu integral of V bridges the gauge
            geo_val = kern.objective(v, fs) + float(mu.weights @ cont(mu.locations))
            lp_val = result.steps[t][0].lp_value
            deltas.append({"t": t, "delta": abs(geo_val - lp_val),
                           "geo": geo_val, "lp": lp_val,
                           "clamped": sum(1 for s in kern.status
                                          if s.startswith("clamp"))})
        except FricmotError as exc:
            deltas.append({"t": t, "note": f"geometric refused: {exc}"})
    return deltas


def cmd_price(cfg: RunConfig, out=None) -> int:
    out = out if out is not None else sys.stdout
    _marginal_checks(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    opts = DppOptions(sense="max", tie_break=cfg.tie_break)
    try:
        priced = superhedging_price(cfg.marginals, cfg.frictions, cfg.payoff,
                                    opts, with_subhedge=True)
    except FricmotError as exc:
        diag = os.path.join(cfg.out_dir, "diagnostic.txt")
        with open(diag, "w") as fh:
            fh.write(f"solver failure: {exc}\n")
        print(f"solver failure: {exc} (details in {diag})", file=out)
        return EXIT_SOLVER
    result = priced["result"]
    gd = priced["global_dual"]

    _write_json(os.path.join(cfg.out_dir, "value.json"), {
        "primal": priced["value"],
        "dual": gd.value,
        "gap": priced["gap"],
        "sub_value": priced["sub_value"],
    })
    gd.save(os.path.join(cfg.out_dir, "certificate.json"))

    kern_rows, stat_rows = [], []
    for t in range(cfg.n_steps):
        for solve in result.steps[t]:
            st = coupling_stats(solve.coupling, cfg.frictions[t])
            x, w, td, tu, th, bd = st["endpoints"]
            for i in range(x.size):
                kern_rows.append({
                    "t": t, "x": float(x[i]), "t_down": float(td[i]),
                    "t_up": float(tu[i]), "theta": float(th[i]),
                    "band": bool(bd[i]),
                })
            stat_rows.append({
                "t": t, "state": solve.state, "turnover": st["turnover"],
                "exec_cost": st["exec_cost"], "band_mass": st["band_mass"],
                "max_disp": st["max_disp"],
            })
    rows_to_csv(os.path.join(cfg.out_dir, "kernels.csv"), kern_rows,
                KERNEL_COLUMNS)
    rows_to_csv(os.path.join(cfg.out_dir, "stats.csv"), stat_rows,
                STATS_COLUMNS)

    extra = {"feasibility_violation": gd.step_feasibility(),
             "row_value_gap": result.audit.get("row_value_gap", 0.0)}
    if cfg.oracle in ("geometric", "both"):
        extra["oracle_deltas"] = _geometric_deltas(cfg, result)
    _write_json(os.path.join(cfg.out_dir, "manifest.json"),
                _manifest(cfg, extra))
    print(f"primal {priced['value']:.10g}  dual {gd.value:.10g}  "
          f"gap {priced['gap']:.3e}  sub {priced['sub_value']:.10g}",
          file=out)
    print(f"outputs in {cfg.out_dir}", file=out)
    return EXIT_OK


def _onestep_pair(cfg: RunConfig):
    """Last-step pair plus the terminal payoff; analytics run one step."""
    if cfg.terminal_fn is None:
        raise ValidationError(
            "sweep/vanish/stability need a terminal-type payoff "
            "(kind terminal, cubic, or custom_grid)")
    t = cfg.n_steps - 1
    return cfg.marginals[t], cfg.marginals[t + 1], cfg.terminal_fn, \
        cfg.frictions[t]


def cmd_sweep(cfg: RunConfig, out=None) -> int:
    out = out if out is not None else sys.stdout
    _marginal_checks(cfg)
    if len(cfg.sweep_alpha) == 0 or len(cfg.sweep_beta) == 0:
        raise ValidationError("[sweep] alpha_grid and beta_grid must be "
                              "nonempty")
    mu, eta, v_fn, _ = _onestep_pair(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    res = sweep(mu, eta, v_fn, cfg.sweep_alpha, cfg.sweep_beta,
                base_alpha=cfg.sweep_base_alpha,
                base_beta=cfg.sweep_base_beta)
    rows_to_csv(os.path.join(cfg.out_dir, "sweep.csv"), res["rows"],
                SWEEP_COLUMNS)
    _write_json(os.path.join(cfg.out_dir, "manifest.json"), _manifest(cfg, {
        "hypotheses": res["hypotheses"],
        "monotonicity_findings": [list(v) for v in res["violations"]],
    }))
    print(f"{len(res['rows'])} sweep rows, "
          f"{len(res['violations'])} monotonicity findings", file=out)
    return EXIT_OK


def cmd_vanish(cfg: RunConfig, out=None) -> int:
    out = out if out is not None else sys.stdout
    _marginal_checks(cfg)
    if cfg.vanish_steps < 1:
        raise ValidationError("[vanish] steps must be >= 1")
    mu, eta, v_fn, _ = _onestep_pair(cfg)
    lo = float(min(mu.locations.min(), eta.locations.min()))
    hi = float(max(mu.locations.max(), eta.locations.max()))
    g = as_grid_function(v_fn, lo, hi, 513)
    d3 = np.diff(g.values, 3)
    if d3.size and float(d3.min()) < -1e-9 * max(1.0, float(np.abs(g.values).max())):
        raise ValidationError(
            "vanish needs a payoff with nonnegative third differences "
            f"(min third difference {d3.min():.3e})")
    schedule = [(cfg.vanish_base * cfg.vanish_factor ** n,
                 cfg.vanish_base * cfg.vanish_factor ** n)
                for n in range(1, cfg.vanish_steps + 1)]
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = vanishing_friction(mu, eta, v_fn, schedule)
    rows_to_csv(os.path.join(cfg.out_dir, "vanish.csv"), rows,
                VANISH_COLUMNS)
    _write_json(os.path.join(cfg.out_dir, "manifest.json"), _manifest(cfg))
    print(f"{len(rows)} schedule rows, final endpoint_l1 "
          f"{rows[-1]['endpoint_l1']:.6g}", file=out)
    return EXIT_OK


def cmd_stability(cfg: RunConfig, out=None) -> int:
    out = out if out is not None else sys.stdout
    _marginal_checks(cfg)
    if len(cfg.stability_eps) == 0:
        raise ValidationError("[stability] epsilons must be nonempty")
    mu, eta, v_fn, fs = _onestep_pair(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = marginal_stability(mu, eta, v_fn, fs, cfg.stability_eps,
                              seed=cfg.stability_seed,
                              mode=cfg.stability_mode)
    rows_to_csv(os.path.join(cfg.out_dir, "stability.csv"), rows,
                STABILITY_COLUMNS)
    _write_json(os.path.join(cfg.out_dir, "manifest.json"), _manifest(cfg))
    print(f"{len(rows)} stability rows", file=out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fricmot",
        description="Martingale transport pricing under trading frictions")
    parser.add_argument("command",
                        choices=["validate", "price", "sweep", "vanish",
                                 "stability"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None,
                        help="override the output directory")
    parser.add_argument("--oracle", default=None,
                        choices=["lp", "geometric", "both"])
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.out_dir = os.path.abspath(args.out)
        if args.oracle:
            cfg.oracle = args.oracle
        handler = {
            "validate": cmd_validate,
            "price": cmd_price,
            "sweep": cmd_sweep,
            "vanish": cmd_vanish,
            "stability": cmd_stability,
        }[args.command]
        return handler(cfg)
    except (ValidationError, ConvexOrderError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FricmotError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
