"""Command-line front end.

Subcommands cover the working loop: ``solve`` writes the value surface
and policy with rendered heatmaps, ``check`` writes the structural
reports, ``simulate`` rolls out the solved policy, ``sweep`` re-solves
across arrival rates, and ``export-moments`` dumps the sojourn statistics
table. Every output file starts with comment lines carrying the
configuration digest (and the seed where randomness is involved), and all
numeric formatting is deterministic, so identical inputs give identical
bytes.

Exit codes: 0 success, 1 invalid input, 2 violated structural guarantee,
3 solver did not converge.
"""

import argparse
import json
import os
import sys
import warnings

import numpy as np

from .actions import ACTIONS, Action
from .config import resolve_config
from .errors import FidelityQError, GridTooLargeError, GuaranteeViolationError
from .simulate import PolicySampler
from .solver import value_iteration
from .structure import (
    check_value_gap_bounds,
    check_value_shape,
    checked_queue_range,
    compute_rho,
    dominance_margins,
    slowest_service,
    verify_threshold_structure,
)
from .svgplot import policy_heatmap, value_heatmap


def _fmt(x):
    """Deterministic scalar formatting for CSV cells."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def _write_csv(path, comments, header, rows):
    lines = [f"# {line}" for line in comments]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(cell) for cell in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _solve(cfg, model):
    solution = value_iteration(
        model,
        epsilon=float(cfg.solver["epsilon"]),
        max_sweeps=int(cfg.solver["max_sweeps"]),
    )
    return solution


def _sim_settings(cfg, args):
    sim = cfg.simulation
    episodes = args.episodes if args.episodes is not None else int(sim["episodes"])
    seed = args.seed if args.seed is not None else int(sim["seed"])
    return episodes, seed


def _default_start(model):
    return (model.n_q // 2, model.grid.star_index)


def _starts(cfg, model):
    configured = cfg.simulation["starts"]
    if not configured:
        return [_default_start(model)]
    return [(int(q), int(cog)) for q, cog in configured]


def write_policy_csv(path, policy, comments):
    rows = [
        (q, cog, str(policy[q, cog]))
        for q in range(policy.shape[0])
        for cog in range(policy.shape[1])
    ]
    _write_csv(path, comments, ("q", "cog_index", "action"), rows)


def read_policy_csv(path, model):
    """Reload a policy table written by ``solve``; validates coverage."""
    policy = np.full((model.n_q, model.n_cog), "", dtype="<U1")
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("q,"):
                continue
            q, cog, action = line.split(",")
            policy[int(q), int(cog)] = action
    from .solver import validate_policy

    return validate_policy(model, policy)


def cmd_solve(args):
    cfg = resolve_config(args.config)
    model = cfg.build_model()
    solution = _solve(cfg, model)
    out = _outdir(args)
    comments = [f"config: {cfg.digest}"]

    values = solution.values
    rows = [
        (q, cog, model.grid.level(cog), float(values[q, cog]))
        for q in range(model.n_q)
        for cog in range(model.n_cog)
    ]
    _write_csv(
        os.path.join(out, "value.csv"),
        comments,
        ("q", "cog_index", "cog_level", "value"),
        rows,
    )
    write_policy_csv(os.path.join(out, "policy.csv"), solution.policy, comments)
    _write_json(
        os.path.join(out, "convergence.json"),
        {
            "config": cfg.digest,
            "epsilon": float(solution.epsilon),
            "sweeps": int(solution.sweeps),
            "residual": float(solution.residual),
            "converged": bool(solution.converged),
            "contraction_estimate": float(solution.contraction_estimate),
            "n_states": int(model.n_q * model.n_cog),
        },
    )
    with open(os.path.join(out, "value_heatmap.svg"), "w") as fh:
        fh.write(value_heatmap(values, model.grid.star_index,
                               title=f"value surface [{cfg.name}]"))
    with open(os.path.join(out, "policy_heatmap.svg"), "w") as fh:
        fh.write(policy_heatmap(solution.policy, model.grid.star_index,
                                title=f"policy [{cfg.name}]"))
    if not solution.converged:
        print(
            f"did not converge within {solution.sweeps} sweeps "
            f"(residual {solution.residual:.3e})",
            file=sys.stderr,
        )
        return 3
    print(
        f"solved {model.n_q}x{model.n_cog} states in {solution.sweeps} sweeps; "
        f"outputs in {out}"
    )
    return 0


def cmd_check(args):
    cfg = resolve_config(args.config)
    model = cfg.build_model()
    solution = _solve(cfg, model)
    if not solution.converged:
        print("solver did not converge; refusing to grade structure",
              file=sys.stderr)
        return 3
    out = _outdir(args)
    buffer_fraction = float(cfg.analysis["buffer_fraction"])
    episodes, seed = _sim_settings(cfg, args)

    bound_report = compute_rho(model)
    slow = slowest_service(model)
    margins = dominance_margins(model, bound_report)

    sampler = PolicySampler(model, solution.policy)
    start = _starts(cfg, model)[0]
    estimate = sampler.estimate(start, episodes=episodes, seed=seed)

    gap = check_value_gap_bounds(
        model,
        solution.values,
        bound_report.rho,
        buffer_fraction=buffer_fraction,
        empty_queue_fraction=estimate.empty_queue_fraction,
    )
    shape_notes = check_value_shape(model, solution.values,
                                    buffer_fraction=buffer_fraction)

    q_range = checked_queue_range(model.n_q, buffer_fraction)
    rows = []
    from .structure import extract_thresholds

    for cog in range(model.n_cog):
        row = extract_thresholds(
            solution.policy[:, cog], cog, model.grid.star_index, q_range
        )
        guaranteed = margins.combined_margin(cog) >= 0.0
        rows.append(
            (
                cog,
                model.grid.level(cog),
                float(row.q1),
                float(row.q2),
                float(row.q3) if row.q3 is not None else None,
                row.is_threshold,
                guaranteed,
                float(margins.combined_margin(cog)),
                "; ".join(row.violations),
            )
        )
    comments = [f"config: {cfg.digest}", f"seed: {seed}"]
    _write_csv(
        os.path.join(out, "thresholds.csv"),
        comments,
        (
            "cog_index",
            "cog_level",
            "q1",
            "q2",
            "q3",
            "is_threshold",
            "guaranteed",
            "switch_margin",
            "violations",
        ),
        rows,
    )
    _write_json(
        os.path.join(out, "structure.json"),
        {
            "config": cfg.digest,
            "seed": seed,
            "rho": bound_report.rho,
            "light_tail_ok": bound_report.light_tail_ok,
            "light_tail_violations": bound_report.violations,
            "slowest_service": {
                "value": slow.value,
                "configured": slow.configured,
                "true_max": slow.true_max,
                "substituted": slow.substituted,
                "note": slow.note,
            },
            "switch_margins": margins.per_cog,
            "all_guaranteed": margins.all_guaranteed,
            "empty_queue_fraction": estimate.empty_queue_fraction,
            "busy_assumption_ok": estimate.empty_queue_fraction <= 0.01,
            "value_gap": {
                "lower_bound_rate": gap.lower_bound_rate,
                "upper_bound_rate": gap.upper_bound_rate,
                "worst_lower_margin": gap.worst_lower_margin,
                "worst_upper_margin": gap.worst_upper_margin,
                "n_pairs": gap.n_pairs,
                "passed": gap.passed(),
                "assumption_violated": gap.assumption_violated,
                "notes": gap.notes,
                "failures": gap.failures,
            },
            "value_shape_notes": shape_notes,
        },
    )
    # raises on a violated guarantee -> exit code 2 via main()
    verify_threshold_structure(
        model, solution.policy, margins=margins, buffer_fraction=buffer_fraction
    )
    n_threshold = sum(1 for r in rows if r[5])
    print(
        f"structure checks written to {out}: rho={bound_report.rho:.6f}, "
        f"{n_threshold}/{model.n_cog} threshold rows, "
        f"light tail {'ok' if bound_report.light_tail_ok else 'violated'}"
    )
    return 0


def cmd_simulate(args):
    cfg = resolve_config(args.config)
    model = cfg.build_model()
    out = _outdir(args)
    episodes, seed = _sim_settings(cfg, args)
    if args.policy is not None:
        policy = read_policy_csv(args.policy, model)
    else:
        solution = _solve(cfg, model)
        if not solution.converged:
            print("solver did not converge; pass --policy to simulate anyway",
                  file=sys.stderr)
            return 3
        policy = solution.policy
    sampler = PolicySampler(model, policy)

    comments = [f"config: {cfg.digest}", f"seed: {seed}"]
    starts = _starts(cfg, model)
    estimates = []
    for start in starts:
        estimates.append(
            sampler.estimate(start, episodes=episodes, seed=seed)
        )
    _write_json(
        os.path.join(out, "mc_value.json"),
        {
            "config": cfg.digest,
            "seed": seed,
            "episodes": episodes,
            "estimates": [
                {
                    "start": list(est.start),
                    "mean": est.mean,
                    "std_error": est.std_error,
                    "horizon_epochs": est.horizon_epochs,
                    "truncation_bias_bound": est.truncation_bias_bound,
                    "empty_queue_fraction": est.empty_queue_fraction,
                }
                for est in estimates
            ],
        },
    )
    horizon = max(est.horizon_epochs for est in estimates)
    rows = []
    for episode in range(args.trajectories):
        traj = sampler.run_episode(
            starts[episode % len(starts)],
            horizon_epochs=horizon,
            seed=np.random.SeedSequence([seed, episode]),
        )
        for rec in traj.records:
            rows.append(
                (
                    episode,
                    rec.epoch,
                    rec.time,
                    rec.q,
                    rec.cog,
                    rec.action,
                    rec.tau,
                    rec.arrivals,
                    float(rec.reward),
                )
            )
    _write_csv(
        os.path.join(out, "trajectories.csv"),
        comments,
        (
            "episode",
            "epoch",
            "time",
            "q",
            "cog",
            "action",
            "tau",
            "arrivals",
            "reward",
        ),
        rows,
    )
    for est in estimates:
        print(
            f"start {est.start}: value {est.mean:.6f} "
            f"(se {est.std_error:.6f}, {episodes} episodes, "
            f"horizon {est.horizon_epochs})"
        )
    return 0


def cmd_sweep(args):
    cfg = resolve_config(args.config)
    if args.grid is not None:
        rates = [float(x) for x in args.grid.split(",") if x.strip()]
    else:
        rates = [float(x) for x in cfg.sweep["arrival_rates"]]
    if not rates:
        print("no arrival rates to sweep; set sweep.arrival_rates or --grid",
              file=sys.stderr)
        return 1
    budget = int(cfg.sweep["max_points"])
    if len(rates) > budget:
        raise GridTooLargeError(
            f"sweep grid has {len(rates)} points, budget is {budget}"
        )
    out = _outdir(args)
    buffer_fraction = float(cfg.analysis["buffer_fraction"])
    rows = []
    any_unconverged = False
    for rate in rates:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = cfg.build_model(arrival_rate=rate)
        solution = _solve(cfg, model)
        if not solution.converged:
            any_unconverged = True
        bound_report = compute_rho(model)
        margins = dominance_margins(model, bound_report)
        q_range = checked_queue_range(model.n_q, buffer_fraction)
        from .structure import extract_thresholds

        for cog in range(model.n_cog):
            row = extract_thresholds(
                solution.policy[:, cog], cog, model.grid.star_index, q_range
            )
            rows.append(
                (
                    float(rate),
                    cog,
                    float(row.q1),
                    float(row.q2),
                    float(row.q3) if row.q3 is not None else None,
                    row.is_threshold,
                    margins.combined_margin(cog) >= 0.0,
                    float(margins.combined_margin(cog)),
                    "; ".join(row.violations),
                )
            )
    _write_csv(
        os.path.join(out, "sweep.csv"),
        [f"config: {cfg.digest}"],
        (
            "arrival_rate",
            "cog_index",
            "q1",
            "q2",
            "q3",
            "is_threshold",
            "guaranteed",
            "switch_margin",
            "violations",
        ),
        rows,
    )
    print(f"swept {len(rates)} arrival rates; table in {out}")
    return 3 if any_unconverged else 0


def cmd_export_moments(args):
    cfg = resolve_config(args.config)
    model = cfg.build_model()
    out = _outdir(args)
    from .structure import gamma_mgf_bound

    gamma = model.params.discount
    rows = []
    for cog in range(model.n_cog):
        for a in ACTIONS:
            if a is Action.REST and cog <= model.grid.star_index:
                continue
            pmf = model.sojourn(cog, a)
            bound = gamma_mgf_bound(pmf.mean, pmf.variance, gamma)
            transform = pmf.discount_transform(gamma)
            rows.append(
                (
                    cog,
                    model.grid.level(cog),
                    str(a),
                    float(pmf.mean),
                    float(pmf.second_moment),
                    float(pmf.variance),
                    float(transform),
                    float(bound),
                    transform <= bound + 1e-12,
                )
            )
    _write_csv(
        os.path.join(out, "moments.csv"),
        [f"config: {cfg.digest}"],
        (
            "cog_index",
            "cog_level",
            "action",
            "mean",
            "second_moment",
            "variance",
            "discount_transform",
            "light_tail_bound",
            "light_tail_ok",
        ),
        rows,
    )
    print(f"sojourn moment table in {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fidelityq",
        description=(
            "Solve, check, and simulate the fidelity-selection queue model."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sim=False):
        p.add_argument(
            "--config",
            help="path to a YAML file or the name of a built-in configuration",
        )
        p.add_argument("--out", default="out", help="output directory")
        if sim:
            p.add_argument("--seed", type=int, help="override the configured seed")
            p.add_argument(
                "--episodes", type=int, help="override the configured episode count"
            )

    p = sub.add_parser("solve", help="value iteration; tables and heatmaps")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="structural reports on the solved policy")
    common(p, sim=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="Monte-Carlo rollouts of the policy")
    common(p, sim=True)
    p.add_argument(
        "--policy", help="reuse a policy.csv instead of re-solving", default=None
    )
    p.add_argument(
        "--trajectories",
        type=int,
        default=3,
        help="number of full trajectories to export",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="re-solve across arrival rates")
    common(p)
    p.add_argument(
        "--grid", help="comma-separated arrival rates overriding the config"
    )
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-moments", help="sojourn moment table")
    common(p)
    p.set_defaults(func=cmd_export_moments)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GuaranteeViolationError as exc:
        print(f"guarantee violated: {exc}", file=sys.stderr)
        return 2
    except (FidelityQError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
